use super::{count_kernel, gemm, MatRef, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Affine map on the flattened `C*H*W` features of each batch item.
/// `weights` is row-major `[out_features, C*H*W]`; output is `(N, out, 1, 1)`.
pub fn fully_connected<T: Scalar>(
    input: &Tensor<T>,
    weights: &[T],
    out_features: usize,
    bias: Option<&[T]>,
) -> Result<Tensor<T>> {
    count_kernel();
    let s = input.shape();
    let d = s.c * s.h * s.w;
    if weights.len() != out_features * d {
        return Err(Error::shape(
            "fully_connected",
            format!(
                "features: input flattens to {d}, weights hold {} = {out_features} x {}",
                weights.len(),
                weights.len() / out_features.max(1)
            ),
        ));
    }
    if let Some(b) = bias {
        if b.len() != out_features {
            return Err(Error::shape("fully_connected", "bias length mismatch"));
        }
    }
    let mut out = vec![T::zero(); s.n * out_features];
    if let Some(b) = bias {
        for row in out.chunks_mut(out_features.max(1)) {
            row.copy_from_slice(b);
        }
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    gemm(
        MatRef::row_major(input.data(), s.n, d),
        MatRef::row_major(weights, out_features, d).t(),
        beta,
        &mut out,
    );
    Tensor::new(Shape::new(s.n, out_features, 1, 1), out)
}

#[derive(Debug, Clone)]
pub struct FcGrads<T> {
    pub input: Tensor<T>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

pub fn fully_connected_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &[T],
    out_features: usize,
    grad_output: &Tensor<T>,
) -> Result<FcGrads<T>> {
    count_kernel();
    let s = input.shape();
    let d = s.c * s.h * s.w;
    if grad_output.shape() != Shape::new(s.n, out_features, 1, 1) {
        return Err(Error::shape("fully_connected_backward", "grad_output shape mismatch"));
    }
    let go = MatRef::row_major(grad_output.data(), s.n, out_features);
    let mut gi = vec![T::zero(); s.n * d];
    gemm(go, MatRef::row_major(weights, out_features, d), T::zero(), &mut gi);
    let mut gw = vec![T::zero(); out_features * d];
    gemm(go.t(), MatRef::row_major(input.data(), s.n, d), T::zero(), &mut gw);
    let mut gb = vec![T::zero(); out_features];
    for row in grad_output.data().chunks(out_features.max(1)) {
        for (b, &g) in gb.iter_mut().zip(row) {
            *b = *b + g;
        }
    }
    Ok(FcGrads {
        input: Tensor::new(s, gi)?,
        weights: gw,
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roi_feature_to_hidden_shape() {
        let x = Tensor::<f32>::zeros(Shape::new(2, 512, 6, 6));
        let w = vec![0.0f32; 4096 * 18432];
        let y = fully_connected(&x, &w, 4096, None).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 4096, 1, 1));
    }

    #[test]
    fn identity_weights() {
        let x = Tensor::from_fn(Shape::new(3, 4, 1, 1), |n, c, _, _| (n * 4 + c) as f64);
        let w: Vec<f64> = (0..16).map(|i| if i / 4 == i % 4 { 1.0 } else { 0.0 }).collect();
        let y = fully_connected(&x, &w, 4, None).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn matches_dot_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_fn(Shape::new(3, 2, 2, 3), |_, _, _, _| rng.random_range(-1.0..1.0));
        let w: Vec<f64> = (0..5 * 12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = fully_connected(&x, &w, 5, Some(&b)).unwrap();
        for n in 0..3 {
            for o in 0..5 {
                let mut acc = b[o];
                for i in 0..12 {
                    acc += w[o * 12 + i] * x.data()[n * 12 + i];
                }
                assert!((y.data()[n * 5 + o] - acc).abs() <= 1e-6 * acc.abs().max(1e-9));
            }
        }
    }

    #[test]
    fn feature_mismatch() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 1, 1));
        assert!(fully_connected(&x, &[0.0; 8], 2, None).is_err());
    }
}
