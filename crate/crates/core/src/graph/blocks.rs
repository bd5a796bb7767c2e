//! Builders for the composite blocks: C.ReLU and Inception, each with an
//! optional residual shortcut.

use serde::{Deserialize, Serialize};

use super::pvanet::{BN_EPS, BN_MOMENTUM};
use super::{LayerKind, LayerSpec};
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, PoolSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Residual {
    None,
    Identity,
    /// 1x1 convolution (+BN) on the block input, with the block's stride.
    Projection,
}

/// `1x1 - KxK - 1x1` where the KxK stage is a C.ReLU unit
/// (conv, BN, negate, concat, scale/shift, ReLU).
#[derive(Debug, Clone, PartialEq)]
pub struct CReluBlockSpec {
    pub name: String,
    pub input: String,
    pub in_channels: usize,
    pub pre_channels: Option<usize>,
    pub mid_kernel: usize,
    pub mid_channels: usize,
    pub post_channels: Option<usize>,
    pub stride: usize,
    pub residual: Residual,
}

impl CReluBlockSpec {
    pub fn out_channels(&self) -> usize {
        self.post_channels.unwrap_or(2 * self.mid_channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InceptionBlockSpec {
    pub name: String,
    pub input: String,
    pub in_channels: usize,
    pub b1x1: usize,
    /// (reduce, out)
    pub b3x3: (usize, usize),
    /// (reduce, mid, out): two stacked 3x3 convolutions.
    pub b5x5: (usize, usize, usize),
    /// Pool branch width; present exactly for stride-2 blocks.
    pub bpool: Option<usize>,
    pub out_channels: usize,
    pub stride: usize,
    pub residual: Residual,
}

impl InceptionBlockSpec {
    pub fn concat_channels(&self) -> usize {
        self.b1x1 + self.b3x3.1 + self.b5x5.2 + self.bpool.unwrap_or(0)
    }
}

pub(crate) struct BlockBuilder {
    prefix: String,
    pub layers: Vec<LayerSpec>,
}

impl BlockBuilder {
    pub fn new(prefix: &str) -> Self {
        BlockBuilder {
            prefix: prefix.to_string(),
            layers: Vec::new(),
        }
    }

    pub fn push(&mut self, suffix: &str, kind: LayerKind, inputs: &[&str]) -> String {
        let name = format!("{}/{suffix}", self.prefix);
        self.layers.push(LayerSpec::new(&name, kind, inputs).in_block(&self.prefix));
        name
    }

    fn bn(&mut self, suffix: &str, channels: usize, input: &str) -> String {
        self.push(
            suffix,
            LayerKind::BatchNorm {
                channels,
                eps: BN_EPS,
                momentum: BN_MOMENTUM,
            },
            &[input],
        )
    }

    /// conv -> BN -> scale/shift [-> ReLU]
    pub fn conv_unit(&mut self, suffix: &str, input: &str, conv: ConvSpec, relu: bool) -> String {
        let c = conv.out_channels;
        let conv_name = self.push(suffix, LayerKind::Conv(conv), &[input]);
        let bn = self.bn(&format!("{suffix}/bn"), c, &conv_name);
        let sc = self.push(&format!("{suffix}/scale"), LayerKind::ScaleShift { channels: c }, &[&bn]);
        if relu {
            self.push(&format!("{suffix}/relu"), LayerKind::Relu, &[&sc])
        } else {
            sc
        }
    }

    /// conv -> BN -> negate -> concat -> scale/shift -> ReLU
    pub fn crelu_unit(&mut self, suffix: &str, input: &str, conv: ConvSpec) -> String {
        let c = conv.out_channels;
        let conv_name = self.push(suffix, LayerKind::Conv(conv), &[input]);
        let bn = self.bn(&format!("{suffix}/bn"), c, &conv_name);
        let neg = self.push(&format!("{suffix}/neg"), LayerKind::Negate, &[&bn]);
        let cat = self.push(&format!("{suffix}/concat"), LayerKind::Concat, &[&bn, &neg]);
        let sc = self.push(&format!("{suffix}/scale"), LayerKind::ScaleShift { channels: 2 * c }, &[&cat]);
        self.push(&format!("{suffix}/relu"), LayerKind::Relu, &[&sc])
    }

    fn shortcut(&mut self, residual: Residual, input: &str, in_c: usize, out_c: usize, stride: usize) -> Result<Option<String>> {
        match residual {
            Residual::None => Ok(None),
            Residual::Identity => {
                if stride != 1 || in_c != out_c {
                    return Err(Error::Spec(format!(
                        "{}: identity shortcut needs stride 1 and equal channels (stride {stride}, {in_c} -> {out_c})",
                        self.prefix
                    )));
                }
                Ok(Some(input.to_string()))
            }
            Residual::Projection => {
                let conv = ConvSpec::new(in_c, out_c, 1, stride, 0);
                let name = self.push("proj", LayerKind::Conv(conv), &[input]);
                Ok(Some(self.bn("proj/bn", out_c, &name)))
            }
        }
    }

    /// Renames the final layer to the block prefix.
    pub fn finish(mut self) -> Vec<LayerSpec> {
        if let Some(last) = self.layers.last_mut() {
            last.name = self.prefix.clone();
        }
        self.layers
    }
}

fn positive(name: &str, what: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::Spec(format!("{name}: {what} must be positive")))
    } else {
        Ok(())
    }
}

pub fn build_crelu_block(spec: &CReluBlockSpec) -> Result<Vec<LayerSpec>> {
    let n = &spec.name;
    positive(n, "in_channels", spec.in_channels)?;
    positive(n, "mid_kernel", spec.mid_kernel)?;
    positive(n, "mid_channels", spec.mid_channels)?;
    positive(n, "stride", spec.stride)?;
    if spec.mid_kernel % 2 == 0 {
        return Err(Error::Spec(format!("{n}: mid_kernel must be odd")));
    }
    let mut b = BlockBuilder::new(n);
    let mut cur = spec.input.clone();
    let mut cur_c = spec.in_channels;
    let mut mid_stride = spec.stride;
    if let Some(pre) = spec.pre_channels {
        positive(n, "pre_channels", pre)?;
        cur = b.conv_unit("1x1", &cur, ConvSpec::new(cur_c, pre, 1, spec.stride, 0), true);
        cur_c = pre;
        mid_stride = 1;
    }
    let k = spec.mid_kernel;
    let mid = ConvSpec::new(cur_c, spec.mid_channels, k, mid_stride, k / 2);
    cur = b.crelu_unit(&format!("{k}x{k}"), &cur, mid);
    cur_c = 2 * spec.mid_channels;
    if let Some(post) = spec.post_channels {
        positive(n, "post_channels", post)?;
        cur = b.conv_unit("1x1_out", &cur, ConvSpec::new(cur_c, post, 1, 1, 0), false);
    }
    if let Some(short) = b.shortcut(spec.residual, &spec.input, spec.in_channels, spec.out_channels(), spec.stride)? {
        b.push("add", LayerKind::EltwiseAdd, &[&cur, &short]);
    }
    Ok(b.finish())
}

pub fn build_inception_block(spec: &InceptionBlockSpec) -> Result<Vec<LayerSpec>> {
    let n = &spec.name;
    if spec.stride != 1 && spec.stride != 2 {
        return Err(Error::Spec(format!("{n}: stride must be 1 or 2")));
    }
    if spec.bpool.is_some() != (spec.stride == 2) {
        return Err(Error::Spec(format!("{n}: pool branch must be present exactly when stride is 2")));
    }
    if spec.residual == Residual::None {
        return Err(Error::Spec(format!("{n}: inception blocks carry a residual shortcut")));
    }
    for (what, v) in [
        ("in_channels", spec.in_channels),
        ("b1x1", spec.b1x1),
        ("b3x3 reduce", spec.b3x3.0),
        ("b3x3 out", spec.b3x3.1),
        ("b5x5 reduce", spec.b5x5.0),
        ("b5x5 mid", spec.b5x5.1),
        ("b5x5 out", spec.b5x5.2),
        ("out_channels", spec.out_channels),
    ] {
        positive(n, what, v)?;
    }
    let s = spec.stride;
    let cin = spec.in_channels;
    let input = spec.input.as_str();
    let mut b = BlockBuilder::new(n);

    let b1 = b.conv_unit("1x1", input, ConvSpec::new(cin, spec.b1x1, 1, s, 0), true);

    let r3 = b.conv_unit("3x3_reduce", input, ConvSpec::new(cin, spec.b3x3.0, 1, s, 0), true);
    let b3 = b.conv_unit("3x3", &r3, ConvSpec::new(spec.b3x3.0, spec.b3x3.1, 3, 1, 1), true);

    let r5 = b.conv_unit("5x5_reduce", input, ConvSpec::new(cin, spec.b5x5.0, 1, s, 0), true);
    let m5 = b.conv_unit("5x5_a", &r5, ConvSpec::new(spec.b5x5.0, spec.b5x5.1, 3, 1, 1), true);
    let b5 = b.conv_unit("5x5_b", &m5, ConvSpec::new(spec.b5x5.1, spec.b5x5.2, 3, 1, 1), true);

    let mut branches = vec![b1, b3, b5];
    if let Some(bp) = spec.bpool {
        positive(n, "bpool", bp)?;
        let pool = b.push("pool", LayerKind::MaxPool(PoolSpec::pvanet()), &[input]);
        branches.push(b.conv_unit("pool_proj", &pool, ConvSpec::new(cin, bp, 1, 1, 0), true));
    }
    let refs: Vec<&str> = branches.iter().map(String::as_str).collect();
    let cat = b.push("concat", LayerKind::Concat, &refs);
    let out = b.conv_unit("out", &cat, ConvSpec::new(spec.concat_channels(), spec.out_channels, 1, 1, 0), false);
    let short = b
        .shortcut(spec.residual, input, cin, spec.out_channels, s)?
        .expect("residual present");
    b.push("add", LayerKind::EltwiseAdd, &[&out, &short]);
    Ok(b.finish())
}
