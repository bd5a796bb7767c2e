use serde::{Deserialize, Serialize};

use super::{count_kernel, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Channel-wise transposed convolution with a fixed bilinear kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeconvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl DeconvSpec {
    /// 2x upsampling: 4x4 kernel, stride 2, pad 1.
    pub const fn upsample2x(channels: usize) -> Self {
        DeconvSpec {
            channels,
            kernel: 4,
            stride: 2,
            pad: 1,
        }
    }

    /// One k x k kernel per channel.
    pub fn weight_count(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn output_size(&self, size: usize) -> Result<usize> {
        if size == 0 {
            return Err(Error::shape("deconv2d_bilinear", "spatial dims must be at least 1"));
        }
        let full = (size - 1) * self.stride + self.kernel;
        full.checked_sub(2 * self.pad)
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::shape("deconv2d_bilinear", "non-positive output size"))
    }
}

/// Row-major `k x k` bilinear interpolation kernel,
/// `f(i) * f(j)` with `f(t) = 1 - |t + 0.5 - k/2| / (k/2)`.
pub fn bilinear_kernel(k: usize) -> Vec<f64> {
    let half = k as f64 / 2.0;
    let f = |t: usize| 1.0 - ((t as f64 + 0.5 - half).abs() / half);
    let mut out = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            out.push(f(i) * f(j));
        }
    }
    out
}

fn check(input: Shape, spec: &DeconvSpec) -> Result<Shape> {
    if input.c != spec.channels {
        return Err(Error::shape(
            "deconv2d_bilinear",
            format!("channels: input has {}, spec expects {}", input.c, spec.channels),
        ));
    }
    Ok(Shape::new(
        input.n,
        input.c,
        spec.output_size(input.h)?,
        spec.output_size(input.w)?,
    ))
}

pub fn deconv2d_bilinear<T: Scalar>(input: &Tensor<T>, spec: &DeconvSpec) -> Result<Tensor<T>> {
    count_kernel();
    let s = input.shape();
    let oshape = check(s, spec)?;
    let kern: Vec<T> = bilinear_kernel(spec.kernel)
        .into_iter()
        .map(T::from_f64_lossy)
        .collect();
    let k = spec.kernel;
    let mut out = Tensor::zeros(oshape);
    let od = out.data_mut();
    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            let base = (n * s.c + c) * oshape.plane();
            for iy in 0..s.h {
                for ix in 0..s.w {
                    let v = src[iy * s.w + ix];
                    for ky in 0..k {
                        let oy = (iy * spec.stride + ky) as isize - spec.pad as isize;
                        if oy < 0 || oy as usize >= oshape.h {
                            continue;
                        }
                        for kx in 0..k {
                            let ox = (ix * spec.stride + kx) as isize - spec.pad as isize;
                            if ox < 0 || ox as usize >= oshape.w {
                                continue;
                            }
                            let idx = base + oy as usize * oshape.w + ox as usize;
                            od[idx] = od[idx] + v * kern[ky * k + kx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Input gradient; the kernel is fixed so it has no parameter gradient.
pub fn deconv2d_bilinear_backward<T: Scalar>(
    input_shape: Shape,
    grad_output: &Tensor<T>,
    spec: &DeconvSpec,
) -> Result<Tensor<T>> {
    count_kernel();
    let oshape = check(input_shape, spec)?;
    if grad_output.shape() != oshape {
        return Err(Error::shape("deconv2d_bilinear_backward", "grad_output shape mismatch"));
    }
    let kern: Vec<T> = bilinear_kernel(spec.kernel)
        .into_iter()
        .map(T::from_f64_lossy)
        .collect();
    let k = spec.kernel;
    let s = input_shape;
    Ok(Tensor::from_fn(s, |n, c, iy, ix| {
        let go = grad_output.plane(n, c);
        let mut acc = T::zero();
        for ky in 0..k {
            let oy = (iy * spec.stride + ky) as isize - spec.pad as isize;
            if oy < 0 || oy as usize >= oshape.h {
                continue;
            }
            for kx in 0..k {
                let ox = (ix * spec.stride + kx) as isize - spec.pad as isize;
                if ox < 0 || ox as usize >= oshape.w {
                    continue;
                }
                acc = acc + go[oy as usize * oshape.w + ox as usize] * kern[ky * k + kx];
            }
        }
        acc
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_values() {
        let k = bilinear_kernel(4);
        let f = [0.25, 0.75, 0.75, 0.25];
        for i in 0..4 {
            for j in 0..4 {
                assert!((k[i * 4 + j] - f[i] * f[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn upscale_shape() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 384, 33, 20));
        let y = deconv2d_bilinear(&x, &DeconvSpec::upsample2x(384)).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 384, 66, 40));
    }

    #[test]
    fn constant_interior() {
        let x = Tensor::full(Shape::new(1, 2, 5, 4), 2.5f64);
        let y = deconv2d_bilinear(&x, &DeconvSpec::upsample2x(2)).unwrap();
        let s = y.shape();
        for c in 0..2 {
            for h in 1..s.h - 1 {
                for w in 1..s.w - 1 {
                    assert!((y.at(0, c, h, w) - 2.5).abs() < 1e-12);
                }
            }
        }
        // borders attenuate to 3/4 of the value
        assert!((y.at(0, 0, 0, 3) - 2.5 * 0.75).abs() < 1e-12);
    }

    /// Half-pixel bilinear interpolation evaluated directly.
    fn interpolate(src: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
        let y0 = y.floor() as usize;
        let x0 = x.floor() as usize;
        let (fy, fx) = (y - y0 as f64, x - x0 as f64);
        let at = |r: usize, c: usize| src[r.min(h - 1) * w + c.min(w - 1)];
        (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
            + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1))
    }

    #[test]
    fn ramp_interior_is_bilinear_interpolation() {
        for (h, w) in [(2usize, 2usize), (5, 4)] {
            let x = Tensor::from_fn(Shape::new(1, 1, h, w), |_, _, r, c| 3.0 * r as f64 - 2.0 * c as f64 + 1.0);
            let y = deconv2d_bilinear(&x, &DeconvSpec::upsample2x(1)).unwrap();
            let s = y.shape();
            for oy in 1..s.h - 1 {
                for ox in 1..s.w - 1 {
                    let sy = (oy as f64 + 0.5) / 2.0 - 0.5;
                    let sx = (ox as f64 + 0.5) / 2.0 - 0.5;
                    let expect = interpolate(x.data(), h, w, sy, sx);
                    assert!((y.at(0, 0, oy, ox) - expect).abs() < 1e-12, "({oy},{ox})");
                }
            }
        }
    }

    #[test]
    fn backward_is_adjoint() {
        let x = Tensor::from_fn(Shape::new(1, 2, 3, 4), |_, c, h, w| (c + 2 * h) as f64 - 0.3 * w as f64);
        let spec = DeconvSpec::upsample2x(2);
        let y = deconv2d_bilinear(&x, &spec).unwrap();
        let g = Tensor::from_fn(y.shape(), |_, c, h, w| ((c * 7 + h * 3 + w) % 5) as f64 - 2.0);
        let gx = deconv2d_bilinear_backward(x.shape(), &g, &spec).unwrap();
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
