use serde::{Deserialize, Serialize};

use super::{count_kernel, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
    #[serde(default = "yes")]
    pub ceil_mode: bool,
}

fn yes() -> bool {
    true
}

impl PoolSpec {
    /// The 3x3 stride-2 ceil-mode pooling used throughout the network.
    pub const fn pvanet() -> Self {
        PoolSpec {
            kernel: 3,
            stride: 2,
            pad: 0,
            ceil_mode: true,
        }
    }
}

/// Pooled extent along one axis. In ceil mode the last window may hang over
/// the border but must start inside the (left-padded) input.
pub fn pool_output_size(size: usize, spec: &PoolSpec) -> Result<usize> {
    let padded = size + 2 * spec.pad;
    if spec.kernel == 0 || spec.stride == 0 {
        return Err(Error::shape("max_pool2d", "kernel and stride must be positive"));
    }
    if padded < spec.kernel {
        return Err(Error::shape(
            "max_pool2d",
            format!("kernel {} larger than padded input {padded}", spec.kernel),
        ));
    }
    let span = padded - spec.kernel;
    let mut out = if spec.ceil_mode {
        span.div_ceil(spec.stride) + 1
    } else {
        span / spec.stride + 1
    };
    if spec.pad > 0 && (out - 1) * spec.stride >= size + spec.pad {
        out -= 1;
    }
    Ok(out)
}

/// Max pooling; returns the pooled tensor and, per output element, the flat
/// index of the winning input element. Ties go to the first position in
/// row-major window order.
pub fn max_pool2d<T: Scalar>(input: &Tensor<T>, spec: &PoolSpec) -> Result<(Tensor<T>, Vec<usize>)> {
    count_kernel();
    let s = input.shape();
    if s.h == 0 || s.w == 0 {
        return Err(Error::shape("max_pool2d", "height/width must be at least 1"));
    }
    let oh = pool_output_size(s.h, spec).map_err(|e| axis(e, "height"))?;
    let ow = pool_output_size(s.w, spec).map_err(|e| axis(e, "width"))?;
    let oshape = Shape::new(s.n, s.c, oh, ow);
    let mut out = Vec::with_capacity(oshape.numel());
    let mut argmax = Vec::with_capacity(oshape.numel());
    let data = input.data();
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.plane();
            for oy in 0..oh {
                let (y0, y1) = window(oy, spec, s.h);
                for ox in 0..ow {
                    let (x0, x1) = window(ox, spec, s.w);
                    let mut best = T::neg_infinity();
                    let mut best_idx = base + y0 * s.w + x0;
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let idx = base + y * s.w + x;
                            if data[idx] > best {
                                best = data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    Ok((Tensor::new(oshape, out)?, argmax))
}

fn axis(e: Error, name: &str) -> Error {
    match e {
        Error::Shape { op, msg } => Error::Shape {
            op,
            msg: format!("{name}: {msg}"),
        },
        other => other,
    }
}

fn window(o: usize, spec: &PoolSpec, size: usize) -> (usize, usize) {
    let start = (o * spec.stride) as isize - spec.pad as isize;
    let end = (start + spec.kernel as isize).min((size + spec.pad) as isize);
    (start.max(0) as usize, (end.max(0) as usize).min(size))
}

/// Routes each output gradient to its recorded argmax.
pub fn max_pool2d_backward<T: Scalar>(
    input_shape: Shape,
    grad_output: &Tensor<T>,
    argmax: &[usize],
) -> Result<Tensor<T>> {
    count_kernel();
    if argmax.len() != grad_output.data().len() {
        return Err(Error::shape("max_pool2d_backward", "argmax length mismatch"));
    }
    let mut grad = Tensor::zeros(input_shape);
    let gd = grad.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_output.data()) {
        gd[idx] = gd[idx] + g;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pvanet_pool_sizes() {
        let p = PoolSpec::pvanet();
        assert_eq!(pool_output_size(528, &p).unwrap(), 264);
        assert_eq!(pool_output_size(320, &p).unwrap(), 160);
        assert_eq!(pool_output_size(132, &p).unwrap(), 66);
        assert_eq!(pool_output_size(80, &p).unwrap(), 40);
    }

    #[test]
    fn pool_tensor_shapes() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 32, 528, 320));
        let (y, _) = max_pool2d(&x, &PoolSpec::pvanet()).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 32, 264, 160));
        let x = Tensor::<f32>::zeros(Shape::new(1, 128, 132, 80));
        let (y, _) = max_pool2d(&x, &PoolSpec::pvanet()).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 128, 66, 40));
    }

    #[test]
    fn constant_in_constant_out() {
        let x = Tensor::full(Shape::new(1, 2, 7, 6), 3.5f32);
        let (y, _) = max_pool2d(&x, &PoolSpec::pvanet()).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn ceil_mode_clips_border_window() {
        // 4 wide: windows start at 0 and 2; the second covers columns 2..4.
        let x = Tensor::from_fn(Shape::new(1, 1, 1, 4), |_, _, _, w| w as f32);
        let spec = PoolSpec {
            kernel: 3,
            stride: 2,
            pad: 0,
            ceil_mode: true,
        };
        let err = max_pool2d(&x, &spec).unwrap_err().to_string();
        assert!(err.contains("height"), "{err}");
        let x = Tensor::from_fn(Shape::new(1, 1, 3, 4), |_, _, _, w| w as f32);
        let (y, _) = max_pool2d(&x, &spec).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0]);
    }

    #[test]
    fn backward_routes_to_argmax() {
        let x = Tensor::from_fn(Shape::new(1, 1, 5, 5), |_, _, h, w| (h * 5 + w) as f64);
        let (y, arg) = max_pool2d(&x, &PoolSpec::pvanet()).unwrap();
        let go = Tensor::full(y.shape(), 1.0);
        let g = max_pool2d_backward(x.shape(), &go, &arg).unwrap();
        assert_eq!(g.sum(), go.sum());
        for &i in &arg {
            assert!(g.data()[i] > 0.0);
        }
    }
}
