use serde::{Deserialize, Serialize};

use super::{count_kernel, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiPoolSpec {
    pub pooled_h: usize,
    pub pooled_w: usize,
    /// Image-to-feature coordinate scale, e.g. 1/16.
    pub spatial_scale: f64,
}

impl RoiPoolSpec {
    pub const fn new(pooled: usize, spatial_scale: f64) -> Self {
        RoiPoolSpec {
            pooled_h: pooled,
            pooled_w: pooled,
            spatial_scale,
        }
    }
}

/// Quantised RoI extent along one axis: `(start, length)` in feature cells.
/// Coordinates are scaled, rounded and clamped to the map; the end is exclusive.
fn quantize(lo: f64, hi: f64, scale: f64, size: usize) -> (usize, usize) {
    let last = size.saturating_sub(1) as f64;
    let start = (lo * scale).round().clamp(0.0, last) as usize;
    let end = ((hi * scale).round().clamp(0.0, size as f64) as usize).max(start + 1);
    (start, end - start)
}

/// Bin `i` of `bins` over a length-`len` extent starting at `start`, clipped to `size`.
fn bin(i: usize, bins: usize, start: usize, len: usize, size: usize) -> (usize, usize) {
    let step = len as f64 / bins as f64;
    let lo = (i as f64 * step).floor() as usize + start;
    let hi = ((i + 1) as f64 * step).ceil() as usize + start;
    (lo.min(size), hi.min(size))
}

/// Max-pool each `(x1, y1, x2, y2)` image-space RoI into a fixed grid.
/// Returns `(R, C, pooled_h, pooled_w)` and per-output argmax (None for empty bins).
pub fn roi_pool<T: Scalar>(
    feature: &Tensor<T>,
    rois: &[[f64; 4]],
    spec: &RoiPoolSpec,
) -> Result<(Tensor<T>, Vec<Option<usize>>)> {
    count_kernel();
    let s = feature.shape();
    if s.n != 1 {
        return Err(Error::shape("roi_pool", format!("batch: feature map must be single-batch, got {}", s.n)));
    }
    if s.h == 0 || s.w == 0 {
        return Err(Error::shape("roi_pool", "empty feature map"));
    }
    for r in rois {
        if !(r[2] >= r[0] && r[3] >= r[1]) {
            return Err(Error::shape("roi_pool", format!("roi {r:?} has negative extent")));
        }
    }
    let oshape = Shape::new(rois.len(), s.c, spec.pooled_h, spec.pooled_w);
    let mut out = Vec::with_capacity(oshape.numel());
    let mut argmax = Vec::with_capacity(oshape.numel());
    for r in rois {
        let (ys, yl) = quantize(r[1], r[3], spec.spatial_scale, s.h);
        let (xs, xl) = quantize(r[0], r[2], spec.spatial_scale, s.w);
        for c in 0..s.c {
            let chan = feature.plane(0, c);
            let base = c * s.plane();
            for ph in 0..spec.pooled_h {
                let (y0, y1) = bin(ph, spec.pooled_h, ys, yl, s.h);
                for pw in 0..spec.pooled_w {
                    let (x0, x1) = bin(pw, spec.pooled_w, xs, xl, s.w);
                    let mut best: Option<(T, usize)> = None;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let v = chan[y * s.w + x];
                            if best.is_none_or(|(b, _)| v > b) {
                                best = Some((v, base + y * s.w + x));
                            }
                        }
                    }
                    out.push(best.map_or(T::zero(), |(v, _)| v));
                    argmax.push(best.map(|(_, i)| i));
                }
            }
        }
    }
    Ok((Tensor::new(oshape, out)?, argmax))
}

pub fn roi_pool_backward<T: Scalar>(
    feature_shape: Shape,
    grad_output: &Tensor<T>,
    argmax: &[Option<usize>],
) -> Result<Tensor<T>> {
    count_kernel();
    if argmax.len() != grad_output.data().len() {
        return Err(Error::shape("roi_pool_backward", "argmax length mismatch"));
    }
    let mut grad = Tensor::zeros(feature_shape);
    let gd = grad.data_mut();
    for (idx, &g) in argmax.iter().zip(grad_output.data()) {
        if let Some(i) = *idx {
            gd[i] = gd[i] + g;
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn whole_map_of_pooled_size_is_identity() {
        let f = Tensor::from_fn(Shape::new(1, 3, 6, 6), |_, c, h, w| (c * 36 + h * 6 + w) as f32);
        let (y, _) = roi_pool(&f, &[[0.0, 0.0, 96.0, 96.0]], &RoiPoolSpec::new(6, 1.0 / 16.0)).unwrap();
        assert_eq!(y.data(), f.data());
    }

    #[test]
    fn output_shape_for_many_rois() {
        let f = Tensor::<f32>::zeros(Shape::new(1, 512, 66, 40));
        let rois = vec![[10.0, 20.0, 300.0, 200.0]; 200];
        let (y, _) = roi_pool(&f, &rois, &RoiPoolSpec::new(6, 1.0 / 16.0)).unwrap();
        assert_eq!(y.shape(), Shape::new(200, 512, 6, 6));
    }

    #[test]
    fn outside_roi_clamps_to_border() {
        let f = Tensor::from_fn(Shape::new(1, 1, 4, 4), |_, _, h, w| (h * 4 + w) as f32);
        let (y, arg) = roi_pool(&f, &[[1000.0, 1000.0, 2000.0, 2000.0]], &RoiPoolSpec::new(2, 1.0)).unwrap();
        assert!(y.data().iter().all(|&v| v == 15.0));
        assert!(arg.iter().all(|a| *a == Some(15)));
    }

    #[test]
    fn matches_brute_force_bin_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = Tensor::from_fn(Shape::new(1, 2, 9, 7), |_, _, _, _| rng.random_range(-5.0..5.0f64));
        let spec = RoiPoolSpec::new(3, 0.5);
        for _ in 0..100 {
            let x1 = rng.random_range(0.0..14.0);
            let y1 = rng.random_range(0.0..18.0);
            let roi = [x1, y1, x1 + rng.random_range(0.0..10.0), y1 + rng.random_range(0.0..10.0)];
            let (y, _) = roi_pool(&f, &[roi], &spec).unwrap();
            // enumerate every cell and test membership per bin
            let sx = (roi[0] * 0.5).round().clamp(0.0, 6.0);
            let ex = ((roi[2] * 0.5).round().clamp(0.0, 7.0)).max(sx + 1.0);
            let sy = (roi[1] * 0.5).round().clamp(0.0, 8.0);
            let ey = ((roi[3] * 0.5).round().clamp(0.0, 9.0)).max(sy + 1.0);
            let (bw, bh) = ((ex - sx) / 3.0, (ey - sy) / 3.0);
            for c in 0..2 {
                for ph in 0..3 {
                    for pw in 0..3 {
                        let mut best = f64::NEG_INFINITY;
                        for yy in 0..9 {
                            for xx in 0..7 {
                                let ry = yy as f64 - sy;
                                let rx = xx as f64 - sx;
                                let in_y = ry >= (ph as f64 * bh).floor() && ry < ((ph + 1) as f64 * bh).ceil();
                                let in_x = rx >= (pw as f64 * bw).floor() && rx < ((pw + 1) as f64 * bw).ceil();
                                if in_y && in_x {
                                    best = best.max(f.at(0, c, yy, xx));
                                }
                            }
                        }
                        let expect = if best.is_finite() { best } else { 0.0 };
                        assert_eq!(y.at(0, c, ph, pw), expect);
                    }
                }
            }
        }
    }

    #[test]
    fn backward_conserves_gradient_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let f = Tensor::from_fn(Shape::new(1, 2, 8, 8), |_, _, _, _| rng.random_range(-1.0..1.0f64));
        let (y, arg) = roi_pool(&f, &[[0.0, 0.0, 8.0, 8.0], [2.0, 1.0, 7.0, 5.0]], &RoiPoolSpec::new(2, 1.0)).unwrap();
        let go = Tensor::from_fn(y.shape(), |_, _, _, _| rng.random_range(-1.0..1.0f64));
        let g = roi_pool_backward(f.shape(), &go, &arg).unwrap();
        assert!((g.sum() - go.sum()).abs() < 1e-12);
    }
}
