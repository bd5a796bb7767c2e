//! Receptive-field size distributions.
//!
//! Every layer carries a distribution over receptive-field sizes (fractions
//! of its channels) plus the accumulated stride ("jump") between adjacent
//! outputs, measured in input pixels. A KxK window grows each size by
//! `(K - 1) * jump`; a stride-s upsampling deconvolution grows it by
//! `(ceil(K / s) - 1) * jump` and divides the jump by s. Concatenation mixes
//! its inputs weighted by channel count; an element-wise sum mixes its two
//! operands equally. Channel-preserving layers (activations, normalisation,
//! channel slices) pass the distribution through unchanged, and a 1x1
//! convolution leaves it untouched, so after a mixing 1x1 conv the branch
//! distribution is still reported rather than the worst case; the largest
//! size is kept alongside as `max_rf`.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{LayerKind, NetworkSpec};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RfDistribution {
    /// Receptive-field size (pixels) to the fraction of channels with it.
    pub atoms: BTreeMap<u64, BigRational>,
    /// Distance in input pixels between adjacent outputs.
    pub jump: BigRational,
    /// Largest receptive field over all channels.
    pub max_rf: u64,
}

/// Serialisable view with fractions as `"p/q"` strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RfAtom {
    pub size: u64,
    pub fraction: String,
    pub value: f64,
}

impl RfDistribution {
    fn input() -> Self {
        RfDistribution {
            atoms: BTreeMap::from([(1, BigRational::one())]),
            jump: BigRational::one(),
            max_rf: 1,
        }
    }

    fn grow(&self, span: &BigRational, new_jump: BigRational) -> Result<Self> {
        let add = span
            .to_integer()
            .to_u64()
            .filter(|_| span.is_integer())
            .ok_or_else(|| Error::Unsupported(format!("fractional receptive-field growth {span}")))?;
        Ok(RfDistribution {
            atoms: self.atoms.iter().map(|(k, v)| (k + add, v.clone())).collect(),
            jump: new_jump,
            max_rf: self.max_rf + add,
        })
    }

    fn mixture(parts: &[(&RfDistribution, BigRational)]) -> Result<Self> {
        let jump = parts[0].0.jump.clone();
        if parts.iter().any(|(d, _)| d.jump != jump) {
            return Err(Error::Unsupported("merging feature maps with different strides".into()));
        }
        let mut atoms: BTreeMap<u64, BigRational> = BTreeMap::new();
        for (d, w) in parts {
            for (k, v) in &d.atoms {
                let e = atoms.entry(*k).or_insert_with(BigRational::zero);
                *e = &*e + v * w;
            }
        }
        atoms.retain(|_, v| !v.is_zero());
        Ok(RfDistribution {
            atoms,
            jump,
            max_rf: parts.iter().map(|(d, _)| d.max_rf).max().unwrap_or(1),
        })
    }

    pub fn total(&self) -> BigRational {
        self.atoms.values().fold(BigRational::zero(), |a, b| a + b)
    }

    pub fn atoms_view(&self) -> Vec<RfAtom> {
        self.atoms
            .iter()
            .map(|(k, v)| RfAtom {
                size: *k,
                fraction: v.to_string(),
                value: v.to_f64().unwrap_or(f64::NAN),
            })
            .collect()
    }

    /// Expected receptive-field size.
    pub fn mean(&self) -> f64 {
        self.atoms
            .iter()
            .map(|(k, v)| *k as f64 * v.to_f64().unwrap_or(0.0))
            .sum()
    }
}

fn int(v: usize) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// Distributions of every layer in `net` that has spatial semantics
/// (`None` downstream of fully-connected and RoI-pooling layers).
pub fn receptive_fields(net: &NetworkSpec) -> Result<BTreeMap<String, Option<RfDistribution>>> {
    net.ensure_valid()?;
    let index = net.index();
    let mut channels: Vec<usize> = vec![0; net.layers.len()];
    let mut dists: Vec<Option<RfDistribution>> = vec![None; net.layers.len()];
    for i in net.topo_order()? {
        let l = &net.layers[i];
        let ins: Vec<usize> = l.inputs.iter().map(|n| index[n.as_str()]).collect();
        let in_channels: Vec<usize> = ins.iter().map(|&j| channels[j]).collect();
        channels[i] = l.kind.output_channels(&in_channels).map_err(Error::Spec)?;
        let inputs: Option<Vec<&RfDistribution>> = ins.iter().map(|&j| dists[j].as_ref()).collect();
        dists[i] = match (&l.kind, inputs) {
            (LayerKind::Input { .. }, _) => Some(RfDistribution::input()),
            (_, None) => None,
            (LayerKind::FullyConnected { .. } | LayerKind::RoiPool(_), _) => None,
            (LayerKind::Conv(c), Some(d)) => {
                let d = d[0];
                Some(d.grow(&(int(c.kernel_h.max(c.kernel_w) - 1) * &d.jump), &d.jump * int(c.stride))?)
            }
            (LayerKind::MaxPool(p), Some(d)) => {
                let d = d[0];
                Some(d.grow(&(int(p.kernel - 1) * &d.jump), &d.jump * int(p.stride))?)
            }
            (LayerKind::DeconvBilinear(s), Some(d)) => {
                let d = d[0];
                let taps = s.kernel.div_ceil(s.stride);
                Some(d.grow(&(int(taps - 1) * &d.jump), &d.jump / int(s.stride))?)
            }
            (LayerKind::Concat, Some(d)) => {
                let total: usize = in_channels.iter().sum();
                let parts: Vec<(&RfDistribution, BigRational)> = d
                    .iter()
                    .zip(&in_channels)
                    .map(|(d, &c)| (*d, BigRational::new(BigInt::from(c), BigInt::from(total))))
                    .collect();
                Some(RfDistribution::mixture(&parts)?)
            }
            (LayerKind::EltwiseAdd, Some(d)) => {
                let half = BigRational::new(BigInt::from(1), BigInt::from(2));
                Some(RfDistribution::mixture(&[(d[0], half.clone()), (d[1], half)])?)
            }
            (
                LayerKind::Relu
                | LayerKind::Negate
                | LayerKind::ScaleShift { .. }
                | LayerKind::BatchNorm { .. }
                | LayerKind::Softmax
                | LayerKind::SliceChannels { .. },
                Some(d),
            ) => Some(d[0].clone()),
        };
    }
    Ok(net
        .layers
        .iter()
        .zip(dists)
        .map(|(l, d)| (l.name.clone(), d))
        .collect())
}

/// Distribution at one layer; layers without spatial semantics are an
/// unsupported-operation error.
pub fn receptive_field_distribution(net: &NetworkSpec, layer: &str) -> Result<RfDistribution> {
    if net.layer(layer).is_none() {
        return Err(Error::Spec(format!("layer `{layer}` does not exist")));
    }
    receptive_fields(net)?
        .remove(layer)
        .flatten()
        .ok_or_else(|| Error::Unsupported(format!("layer `{layer}` has no spatial receptive field")))
}
