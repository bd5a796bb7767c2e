use super::{count_kernel, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    count_kernel();
    input.map(|v| v.max(T::zero()))
}

/// Gradient of ReLU given its forward input.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_output: &Tensor<T>) -> Tensor<T> {
    count_kernel();
    let data = input
        .data()
        .iter()
        .zip(grad_output.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(input.shape(), data).expect("same shape")
}

pub fn negate<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    count_kernel();
    input.map(|v| -v)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    count_kernel();
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "eltwise_add",
            format!("operand dims {:?} vs {:?}", a.shape().dims(), b.shape().dims()),
        ));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::new(a.shape(), data)
}

/// The sum's gradient flows unchanged to both operands.
pub fn add_backward_passthrough<T: Scalar>(grad_output: &Tensor<T>) -> Tensor<T> {
    grad_output.clone()
}

/// Concatenate along the channel axis, in argument order.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    count_kernel();
    let first = parts
        .first()
        .ok_or_else(|| Error::shape("concat", "no operands"))?
        .shape();
    for p in parts {
        let s = p.shape();
        for (axis, a, b) in [("batch", s.n, first.n), ("height", s.h, first.h), ("width", s.w, first.w)] {
            if a != b {
                return Err(Error::shape("concat", format!("{axis}: {a} vs {b}")));
            }
        }
    }
    let channels: usize = parts.iter().map(|p| p.shape().c).sum();
    let oshape = Shape::new(first.n, channels, first.h, first.w);
    let mut data = Vec::with_capacity(oshape.numel());
    for n in 0..first.n {
        for p in parts {
            let per = p.shape().c * first.plane();
            data.extend_from_slice(&p.data()[n * per..(n + 1) * per]);
        }
    }
    Tensor::new(oshape, data)
}

/// Split a concatenated gradient back into per-operand gradients.
pub fn concat_channels_backward<T: Scalar>(grad_output: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let s = grad_output.shape();
    if channels.iter().sum::<usize>() != s.c {
        return Err(Error::shape("concat_backward", "channel split does not cover the gradient"));
    }
    let mut start = 0;
    let mut out = Vec::with_capacity(channels.len());
    for &c in channels {
        out.push(slice_channels(grad_output, start, start + c)?);
        start += c;
    }
    Ok(out)
}

pub fn slice_channels<T: Scalar>(input: &Tensor<T>, start: usize, end: usize) -> Result<Tensor<T>> {
    count_kernel();
    let s = input.shape();
    if start > end || end > s.c {
        return Err(Error::shape(
            "slice_channels",
            format!("channels: range {start}..{end} outside 0..{}", s.c),
        ));
    }
    let oshape = Shape::new(s.n, end - start, s.h, s.w);
    let mut data = Vec::with_capacity(oshape.numel());
    for n in 0..s.n {
        let base = (n * s.c + start) * s.plane();
        data.extend_from_slice(&input.data()[base..base + (end - start) * s.plane()]);
    }
    Tensor::new(oshape, data)
}

pub fn slice_channels_backward<T: Scalar>(input_shape: Shape, grad_output: &Tensor<T>, start: usize) -> Tensor<T> {
    let mut grad = Tensor::zeros(input_shape);
    let gs = grad_output.shape();
    let plane = input_shape.plane();
    for n in 0..gs.n {
        let dst = (n * input_shape.c + start) * plane;
        let src = n * gs.c * plane;
        grad.data_mut()[dst..dst + gs.c * plane].copy_from_slice(&grad_output.data()[src..src + gs.c * plane]);
    }
    grad
}

/// Per-channel affine map `x * scale[c] + shift[c]`.
pub fn scale_shift<T: Scalar>(input: &Tensor<T>, scale: &[T], shift: &[T]) -> Result<Tensor<T>> {
    count_kernel();
    let s = input.shape();
    if scale.len() != s.c || shift.len() != s.c {
        return Err(Error::shape(
            "scale_shift",
            format!("channels: input has {}, scale/shift have {}/{}", s.c, scale.len(), shift.len()),
        ));
    }
    let mut out = input.clone();
    let plane = s.plane();
    for (i, chunk) in out.data_mut().chunks_mut(plane.max(1)).enumerate() {
        if plane == 0 {
            break;
        }
        let c = i % s.c;
        for v in chunk {
            *v = *v * scale[c] + shift[c];
        }
    }
    Ok(out)
}

/// Returns (grad_input, grad_scale, grad_shift).
pub fn scale_shift_backward<T: Scalar>(
    input: &Tensor<T>,
    scale: &[T],
    grad_output: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    count_kernel();
    let s = input.shape();
    let plane = s.plane();
    let mut gi = grad_output.clone();
    let mut gscale = vec![T::zero(); s.c];
    let mut gshift = vec![T::zero(); s.c];
    if plane > 0 {
        for (i, (gchunk, xchunk)) in gi
            .data_mut()
            .chunks_mut(plane)
            .zip(input.data().chunks(plane))
            .enumerate()
        {
            let c = i % s.c;
            for (g, &x) in gchunk.iter_mut().zip(xchunk) {
                gscale[c] = gscale[c] + *g * x;
                gshift[c] = gshift[c] + *g;
                *g = *g * scale[c];
            }
        }
    }
    (gi, gscale, gshift)
}

/// Softmax over the channel axis at every (n, h, w), stabilised by the max.
pub fn softmax<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    count_kernel();
    let s = input.shape();
    let mut out = input.clone();
    let plane = s.plane();
    for n in 0..s.n {
        for p in 0..plane {
            let idx = |c: usize| (n * s.c + c) * plane + p;
            let max = (0..s.c).map(|c| input.data()[idx(c)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for c in 0..s.c {
                let e = (input.data()[idx(c)] - max).exp();
                out.data_mut()[idx(c)] = e;
                total = total + e;
            }
            for c in 0..s.c {
                let v = out.data()[idx(c)] / total;
                out.data_mut()[idx(c)] = v;
            }
        }
    }
    out
}

/// Gradient of softmax given its forward output.
pub fn softmax_backward<T: Scalar>(output: &Tensor<T>, grad_output: &Tensor<T>) -> Tensor<T> {
    count_kernel();
    let s = output.shape();
    let plane = s.plane();
    let mut grad = Tensor::zeros(s);
    for n in 0..s.n {
        for p in 0..plane {
            let idx = |c: usize| (n * s.c + c) * plane + p;
            let dot: T = (0..s.c).map(|c| output.data()[idx(c)] * grad_output.data()[idx(c)]).sum();
            for c in 0..s.c {
                grad.data_mut()[idx(c)] = output.data()[idx(c)] * (grad_output.data()[idx(c)] - dot);
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(values: Vec<f64>) -> Tensor<f64> {
        let n = values.len();
        Tensor::new(Shape::new(1, n, 1, 1), values).unwrap()
    }

    #[test]
    fn concat_with_negation_cancels() {
        let x = Tensor::from_fn(Shape::new(2, 3, 2, 2), |n, c, h, w| (n + c) as f64 - (h * w) as f64 * 0.7);
        let y = concat_channels(&[&x, &negate(&x)]).unwrap();
        assert_eq!(y.shape().c, 6);
        for n in 0..2 {
            for c in 0..3 {
                for h in 0..2 {
                    for w in 0..2 {
                        assert_eq!(y.at(n, c, h, w) + y.at(n, c + 3, h, w), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn concat_rejects_mismatched_height() {
        let a = Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2));
        let b = Tensor::<f32>::zeros(Shape::new(1, 1, 3, 2));
        let err = concat_channels(&[&a, &b]).unwrap_err().to_string();
        assert!(err.contains("height"));
    }

    #[test]
    fn unit_scale_zero_shift_is_identity() {
        let x = Tensor::from_fn(Shape::new(1, 2, 3, 3), |_, c, h, w| (c * 9 + h * 3 + w) as f32);
        assert_eq!(scale_shift(&x, &[1.0, 1.0], &[0.0, 0.0]).unwrap(), x);
    }

    #[test]
    fn softmax_closed_forms() {
        let y = softmax(&t(vec![2.0; 4]));
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let y = softmax(&t(vec![0.0, 3f64.ln()]));
        assert!((y.data()[0] - 0.25).abs() < 1e-12 && (y.data()[1] - 0.75).abs() < 1e-12);
        let a = softmax(&t(vec![0.3, -1.2, 2.0]));
        let b = softmax(&t(vec![100.3, 98.8, 102.0]));
        assert!(a.max_abs_diff(&b) < 1e-6);
    }

    #[test]
    fn slice_and_back() {
        let x = Tensor::from_fn(Shape::new(2, 5, 2, 1), |n, c, h, _| (n * 100 + c * 10 + h) as f64);
        let s = slice_channels(&x, 1, 3).unwrap();
        assert_eq!(s.at(1, 0, 1, 0), 111.0);
        let g = slice_channels_backward(x.shape(), &s, 1);
        assert_eq!(g.at(1, 2, 1, 0), 121.0);
        assert_eq!(g.at(1, 0, 1, 0), 0.0);
    }

    proptest! {
        #[test]
        fn relu_identities(values in proptest::collection::vec(-1e6f64..1e6, 1..64)) {
            let x = t(values);
            let p = relu(&x);
            let m = relu(&negate(&x));
            for i in 0..x.data().len() {
                let v = x.data()[i];
                prop_assert_eq!(p.data()[i] - m.data()[i], v);
                prop_assert_eq!(p.data()[i] + m.data()[i], v.abs());
                prop_assert_eq!(p.data()[i] * m.data()[i], 0.0);
            }
        }

        #[test]
        fn concat_is_associative(ca in 1usize..4, cb in 1usize..4, cc in 1usize..4, seed in 0u64..1000) {
            let mk = |c: usize, k: u64| Tensor::from_fn(Shape::new(2, c, 2, 3), |n, ch, h, w| ((seed + k) as f64) * 0.1 + (n * 31 + ch * 7 + h * 3 + w) as f64);
            let (a, b, c) = (mk(ca, 1), mk(cb, 2), mk(cc, 3));
            let left = concat_channels(&[&a, &concat_channels(&[&b, &c]).unwrap()]).unwrap();
            let right = concat_channels(&[&concat_channels(&[&a, &b]).unwrap(), &c]).unwrap();
            prop_assert_eq!(left, right);
        }
    }
}
