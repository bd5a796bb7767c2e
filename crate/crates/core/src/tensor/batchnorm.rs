use serde::{Deserialize, Serialize};

use super::{count_kernel, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    /// Normalise with statistics of the current batch and update running averages.
    Minibatch,
    /// Normalise with stored running statistics.
    #[default]
    Frozen,
}

/// Per-channel mean and variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    mode: BnMode,
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

/// Returns the normalised tensor, a cache for the backward pass and, in
/// minibatch mode, the updated running statistics
/// (`running = momentum * running + (1 - momentum) * batch`, unbiased variance).
pub fn batchnorm_forward<T: Scalar>(
    input: &Tensor<T>,
    mode: BnMode,
    stats: &BnStats<T>,
    eps: T,
    momentum: T,
) -> Result<(Tensor<T>, BatchNormCache<T>, Option<BnStats<T>>)> {
    count_kernel();
    let s = input.shape();
    if stats.mean.len() != s.c || stats.var.len() != s.c {
        return Err(Error::shape(
            "batchnorm",
            format!("channels: input has {}, statistics have {}", s.c, stats.mean.len()),
        ));
    }
    let plane = s.plane();
    let count = s.n * plane;
    let (mean, var, updated) = match mode {
        BnMode::Frozen => (stats.mean.clone(), stats.var.clone(), None),
        BnMode::Minibatch => {
            let mut mean = vec![T::zero(); s.c];
            let mut var = vec![T::zero(); s.c];
            let m = T::from_usize(count.max(1)).unwrap();
            for c in 0..s.c {
                let mut acc = T::zero();
                for n in 0..s.n {
                    acc = acc + input.plane(n, c).iter().copied().sum::<T>();
                }
                mean[c] = acc / m;
                let mut sq = T::zero();
                for n in 0..s.n {
                    for &v in input.plane(n, c) {
                        sq = sq + (v - mean[c]) * (v - mean[c]);
                    }
                }
                var[c] = sq / m;
            }
            let unbias = if count > 1 {
                m / (m - T::one())
            } else {
                T::one()
            };
            let keep = momentum;
            let take = T::one() - momentum;
            let running = BnStats {
                mean: (0..s.c).map(|c| keep * stats.mean[c] + take * mean[c]).collect(),
                var: (0..s.c).map(|c| keep * stats.var[c] + take * var[c] * unbias).collect(),
            };
            (mean, var, Some(running))
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut out = input.clone();
    if plane > 0 {
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let c = i % s.c;
            for v in chunk {
                *v = (*v - mean[c]) * inv_std[c];
            }
        }
    }
    let cache = BatchNormCache {
        mode,
        normalized: out.clone(),
        inv_std,
    };
    Ok((out, cache, updated))
}

pub fn batchnorm_backward<T: Scalar>(cache: &BatchNormCache<T>, grad_output: &Tensor<T>) -> Tensor<T> {
    count_kernel();
    let s = grad_output.shape();
    let plane = s.plane();
    let mut grad = grad_output.clone();
    if plane == 0 {
        return grad;
    }
    match cache.mode {
        BnMode::Frozen => {
            for (i, chunk) in grad.data_mut().chunks_mut(plane).enumerate() {
                let c = i % s.c;
                for v in chunk {
                    *v = *v * cache.inv_std[c];
                }
            }
        }
        BnMode::Minibatch => {
            let m = T::from_usize(s.n * plane).unwrap();
            for c in 0..s.c {
                let mut sum_g = T::zero();
                let mut sum_gx = T::zero();
                for n in 0..s.n {
                    for (&g, &xh) in grad_output.plane(n, c).iter().zip(cache.normalized.plane(n, c)) {
                        sum_g = sum_g + g;
                        sum_gx = sum_gx + g * xh;
                    }
                }
                let k = cache.inv_std[c] / m;
                for n in 0..s.n {
                    let base = (n * s.c + c) * plane;
                    for p in 0..plane {
                        let g = grad_output.data()[base + p];
                        let xh = cache.normalized.data()[base + p];
                        grad.data_mut()[base + p] = k * (m * g - sum_g - xh * sum_gx);
                    }
                }
            }
        }
    }
    grad
}

/// Frozen batch norm as an equivalent per-channel (scale, shift).
pub fn fold_batchnorm<T: Scalar>(stats: &BnStats<T>, eps: T) -> (Vec<T>, Vec<T>) {
    let scale: Vec<T> = stats.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let shift = stats.mean.iter().zip(&scale).map(|(&m, &s)| -m * s).collect();
    (scale, shift)
}
