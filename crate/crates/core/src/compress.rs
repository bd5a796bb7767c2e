//! Truncated-SVD compression of fully-connected layers.
//!
//! A layer `y = W x + b` with `W` of shape `[out, in]` becomes two layers:
//! `first = diag(s_k) V_k^T` (`[k, in]`, no bias) followed by `second = U_k`
//! (`[out, k]`, carrying `b`). All factorisation work is done in `f64`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{LayerKind, LayerSpec, NetworkSpec, Param, WeightStore};
use crate::tensor::{gemm, MatRef};

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("matrix", format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_f32(rows: usize, cols: usize, data: &[f32]) -> Result<Self> {
        Matrix::new(rows, cols, data.iter().map(|&v| v as f64).collect())
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            MatRef::row_major(&self.data, self.rows, self.cols),
            MatRef::row_major(&other.data, other.rows, other.cols),
            0.0,
            &mut out.data,
        );
        out
    }

    /// `self^T * other` without materialising the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_matmul inner dimension");
        let mut out = Matrix::zeros(self.cols, other.cols);
        gemm(
            MatRef::row_major(&self.data, self.rows, self.cols).t(),
            MatRef::row_major(&other.data, other.rows, other.cols),
            0.0,
            &mut out.data,
        );
        out
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Leading `k` columns.
    pub fn take_cols(&self, k: usize) -> Matrix {
        let mut m = Matrix::zeros(self.rows, k);
        for r in 0..self.rows {
            m.data[r * k..(r + 1) * k].copy_from_slice(&self.data[r * self.cols..r * self.cols + k]);
        }
        m
    }

    fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.cols)
            .map(|c| (0..self.rows).map(|r| self.data[r * self.cols + c]).collect())
            .collect()
    }

    fn from_columns(rows: usize, cols: &[Vec<f64>]) -> Matrix {
        let mut m = Matrix::zeros(rows, cols.len());
        for (c, col) in cols.iter().enumerate() {
            for (r, v) in col.iter().enumerate() {
                m.data[r * cols.len() + c] = *v;
            }
        }
        m
    }
}

/// `W = U diag(s) V^T` with `U: [m, r]`, `V: [n, r]`, `r = min(m, n)`,
/// orthonormal columns and `s` non-negative and descending.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    /// `U_k diag(s_k) V_k^T`.
    pub fn reconstruct(&self, k: usize) -> Matrix {
        let mut us = self.u.take_cols(k);
        for r in 0..us.rows {
            for c in 0..k {
                us.data[r * k + c] *= self.s[c];
            }
        }
        us.matmul(&self.v.take_cols(k).transpose())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthogonalises `col` against `basis` (two passes) and normalises it.
/// Returns `None` if nothing independent is left.
fn orthonormalise(col: &mut [f64], basis: &[Vec<f64>]) -> Option<()> {
    let before = norm(col);
    for _ in 0..2 {
        for b in basis {
            let p = dot(col, b);
            col.iter_mut().zip(b).for_each(|(c, b)| *c -= p * b);
        }
    }
    let after = norm(col);
    if after <= 1e-10 * before.max(f64::MIN_POSITIVE) || after == 0.0 {
        return None;
    }
    col.iter_mut().for_each(|c| *c /= after);
    Some(())
}

/// One-sided Jacobi SVD (exact up to roundoff). Non-finite input is an error.
pub fn svd(w: &Matrix) -> Result<Svd> {
    if w.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("svd input".into()));
    }
    if w.rows < w.cols {
        let t = svd(&w.transpose())?;
        return Ok(Svd { u: t.v, s: t.s, v: t.u });
    }
    let (m, n) = (w.rows, w.cols);
    let mut a = w.columns();
    let mut v: Vec<Vec<f64>> = Matrix::identity(n).columns();
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for cols in [&mut a, &mut v] {
                    let (lo, hi) = cols.split_at_mut(q);
                    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
                        let (xp, yq) = (*x, *y);
                        *x = c * xp - s * yq;
                        *y = s * xp + c * yq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<(f64, usize)> = a.iter().enumerate().map(|(i, c)| (norm(c), i)).collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let smax = order.first().map(|o| o.0).unwrap_or(0.0);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    let mut pending = Vec::new();
    for &(sigma, i) in &order {
        if sigma > smax * 1e-12 && sigma > 0.0 {
            let mut col: Vec<f64> = a[i].iter().map(|x| x / sigma).collect();
            if orthonormalise(&mut col, &u_cols).is_some() {
                u_cols.push(col);
            } else {
                pending.push(u_cols.len());
                u_cols.push(Vec::new());
            }
        } else {
            pending.push(u_cols.len());
            u_cols.push(Vec::new());
        }
        s.push(sigma);
        v_cols.push(v[i].clone());
    }
    // Null-space directions: complete U with unit vectors orthogonal to the rest.
    let mut e = 0;
    for slot in pending {
        loop {
            let mut cand = vec![0.0; m];
            cand[e % m] = 1.0;
            e += 1;
            let basis: Vec<Vec<f64>> = u_cols.iter().filter(|c| !c.is_empty()).cloned().collect();
            if orthonormalise(&mut cand, &basis).is_some() {
                u_cols[slot] = cand;
                break;
            }
        }
    }
    Ok(Svd {
        u: Matrix::from_columns(m, &u_cols),
        s,
        v: Matrix::from_columns(n, &v_cols),
    })
}

/// Matrices whose smaller side exceeds this use the randomized range finder
/// in [`truncated_svd`] when the requested rank is at most half of it.
pub const RANDOMIZED_MIN_DIM: usize = 1024;
const OVERSAMPLE: usize = 10;
const POWER_ITERS: usize = 2;

/// `Y R^{-1}` with `R` the Cholesky factor of `Y^T Y`; `None` if the Gram
/// matrix is numerically singular.
fn cholesky_qr(y: &Matrix) -> Option<Matrix> {
    let l = y.cols;
    let g = y.t_matmul(y);
    let scale = (0..l).map(|i| g.at(i, i)).fold(0.0, f64::max);
    // Upper-triangular R with R^T R = G.
    let mut r = Matrix::zeros(l, l);
    for j in 0..l {
        for i in 0..=j {
            let mut v = g.at(i, j);
            for k in 0..i {
                v -= r.at(k, i) * r.at(k, j);
            }
            if i == j {
                if !(v > scale * 1e-15) {
                    return None;
                }
                r.data[i * l + j] = v.sqrt();
            } else {
                r.data[i * l + j] = v / r.at(i, i);
            }
        }
    }
    // Back-substitute R^{-1} column by column.
    let mut inv = Matrix::zeros(l, l);
    for c in 0..l {
        for i in (0..=c).rev() {
            let mut v = if i == c { 1.0 } else { 0.0 };
            for k in i + 1..=c {
                v -= r.at(i, k) * inv.at(k, c);
            }
            inv.data[i * l + c] = v / r.at(i, i);
        }
    }
    Some(y.matmul(&inv))
}

fn orthonormal_columns(m: &Matrix) -> Matrix {
    // Two Cholesky-QR passes are as orthogonal as Gram-Schmidt for
    // well-conditioned inputs and run at matrix-multiply speed.
    if let Some(q) = cholesky_qr(m).and_then(|q| cholesky_qr(&q)) {
        let g = q.t_matmul(&q);
        let defect = (0..g.rows)
            .flat_map(|i| (0..g.cols).map(move |j| (i, j)))
            .map(|(i, j)| (g.at(i, j) - if i == j { 1.0 } else { 0.0 }).abs())
            .fold(0.0, f64::max);
        if defect < 1e-12 {
            return q;
        }
    }
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m.cols);
    for mut col in m.columns() {
        if orthonormalise(&mut col, &basis).is_some() {
            basis.push(col);
        }
    }
    Matrix::from_columns(m.rows, &basis)
}

/// Leading `k` singular triplets. Large matrices go through a seeded
/// randomized range finder (power iterations, oversampling) followed by an
/// exact SVD of the small projected problem; small ones use [`svd`] directly.
pub fn truncated_svd(w: &Matrix, k: usize) -> Result<Svd> {
    let r = w.rows.min(w.cols);
    if k == 0 || k > r {
        return Err(Error::Rank { rank: k, max: r });
    }
    let l = k + OVERSAMPLE;
    if r <= RANDOMIZED_MIN_DIM || 2 * k > r || l >= r {
        let mut full = svd(w)?;
        full.u = full.u.take_cols(k);
        full.v = full.v.take_cols(k);
        full.s.truncate(k);
        return Ok(full);
    }
    if w.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("svd input".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5bd1);
    let omega = Matrix::new(w.cols, l, (0..w.cols * l).map(|_| StandardNormal.sample(&mut rng)).collect())?;
    let mut q = orthonormal_columns(&w.matmul(&omega));
    for _ in 0..POWER_ITERS {
        let z = orthonormal_columns(&w.t_matmul(&q));
        q = orthonormal_columns(&w.matmul(&z));
    }
    // B = Q^T W is short and wide; factor B^T = P R so only the small R
    // goes through Jacobi: W ~ Q B = (Q V_r) S (P U_r)^T.
    let bt = w.t_matmul(&q);
    let p = orthonormal_columns(&bt);
    let r_small = p.t_matmul(&bt);
    let small = svd(&r_small)?;
    if small.s.len() < k {
        return Err(Error::Rank { rank: k, max: small.s.len() });
    }
    Ok(Svd {
        u: q.matmul(&small.v).take_cols(k),
        s: small.s[..k].to_vec(),
        v: p.matmul(&small.u).take_cols(k),
    })
}

/// `||W - W_k||_F` with `W_k` rebuilt explicitly from the exact SVD.
pub fn reconstruction_error(w: &Matrix, k: usize) -> Result<f64> {
    let r = w.rows.min(w.cols);
    if k == 0 || k > r {
        return Err(Error::Rank { rank: k, max: r });
    }
    let d = svd(w)?;
    let wk = d.reconstruct(k);
    Ok(w.data.iter().zip(&wk.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactorization {
    pub rank: usize,
    pub in_features: usize,
    pub out_features: usize,
    /// `[rank, in]`, row-major, no bias.
    pub first: Vec<f32>,
    /// `[out, rank]`, row-major.
    pub second: Vec<f32>,
    pub bias: Option<Vec<f32>>,
    pub singular_values: Vec<f64>,
    /// `||W||_F^2 - sum_{i<=k} s_i^2`, i.e. the tail energy.
    pub discarded_energy: f64,
}

/// Splits an `[out, in]` weight matrix at rank `k`.
pub fn compress_fc(
    weights: &[f32],
    bias: Option<&[f32]>,
    out_features: usize,
    in_features: usize,
    k: usize,
) -> Result<LowRankFactorization> {
    let w = Matrix::from_f32(out_features, in_features, weights)?;
    let d = truncated_svd(&w, k)?;
    let mut first = vec![0f32; k * in_features];
    for i in 0..k {
        for j in 0..in_features {
            first[i * in_features + j] = (d.s[i] * d.v.at(j, i)) as f32;
        }
    }
    let second = d.u.data.iter().map(|&v| v as f32).collect();
    let kept: f64 = d.s.iter().map(|s| s * s).sum();
    let total: f64 = w.data.iter().map(|v| v * v).sum();
    Ok(LowRankFactorization {
        rank: k,
        in_features,
        out_features,
        first,
        second,
        bias: bias.map(<[f32]>::to_vec),
        singular_values: d.s,
        discarded_energy: (total - kept).max(0.0),
    })
}

/// The hidden layers the R-CNN head compression rewrites.
pub const HEAD_LAYERS: [&str; 2] = ["fc6", "fc7"];

fn fc_dims(net: &NetworkSpec, name: &str) -> Result<(usize, usize, bool)> {
    match net.layer(name).map(|l| &l.kind) {
        Some(LayerKind::FullyConnected {
            in_features,
            out_features,
            has_bias,
        }) => Ok((*in_features, *out_features, *has_bias)),
        Some(_) => Err(Error::Spec(format!("`{name}` is not a fully-connected layer"))),
        None => Err(Error::Spec(format!("network has no `{name}` layer to compress"))),
    }
}

/// Rewires `layer` into `layer_L` (`in -> k`, no bias) and `layer_U`
/// (`k -> out`, original bias); consumers of `layer` now read `layer_U`.
pub fn split_fc_layer(net: &NetworkSpec, layer: &str, k: usize) -> Result<NetworkSpec> {
    let (inf, outf, has_bias) = fc_dims(net, layer)?;
    if k == 0 || k > inf.min(outf) {
        return Err(Error::Rank {
            rank: k,
            max: inf.min(outf),
        });
    }
    let lower = format!("{layer}_L");
    let upper = format!("{layer}_U");
    let mut out = net.clone();
    out.layers.clear();
    for l in &net.layers {
        if l.name == layer {
            let row = l.group().to_string();
            let inputs: Vec<&str> = l.inputs.iter().map(String::as_str).collect();
            out.layers.push(
                LayerSpec::new(
                    &lower,
                    LayerKind::FullyConnected {
                        in_features: inf,
                        out_features: k,
                        has_bias: false,
                    },
                    &inputs,
                )
                .in_block(&row),
            );
            out.layers.push(
                LayerSpec::new(
                    &upper,
                    LayerKind::FullyConnected {
                        in_features: k,
                        out_features: outf,
                        has_bias,
                    },
                    &[&lower],
                )
                .in_block(&row),
            );
        } else {
            let mut l = l.clone();
            for i in &mut l.inputs {
                if i == layer {
                    *i = upper.clone();
                }
            }
            out.layers.push(l);
        }
    }
    for o in &mut out.outputs {
        if o == layer {
            *o = upper.clone();
        }
    }
    Ok(out)
}

/// The compressed head's structure alone (enough for cost analysis).
pub fn compress_rcnn_spec(net: &NetworkSpec, k1: usize, k2: usize) -> Result<NetworkSpec> {
    let net = split_fc_layer(net, HEAD_LAYERS[0], k1)?;
    split_fc_layer(&net, HEAD_LAYERS[1], k2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCompression {
    pub layer: String,
    pub rank: usize,
    pub in_features: usize,
    pub out_features: usize,
    pub params_before: u64,
    pub params_after: u64,
    pub frobenius_error: f64,
    pub relative_error: f64,
}

/// Compresses `fc6` and `fc7` at ranks `k1` and `k2`, returning the rewired
/// network, the rewritten weights and a per-layer summary.
pub fn compress_rcnn_head(
    net: &NetworkSpec,
    weights: &WeightStore<f32>,
    k1: usize,
    k2: usize,
) -> Result<(NetworkSpec, WeightStore<f32>, Vec<LayerCompression>)> {
    let new_net = compress_rcnn_spec(net, k1, k2)?;
    let mut store = weights.clone();
    let mut summary = Vec::new();
    for (layer, k) in HEAD_LAYERS.iter().zip([k1, k2]) {
        let (inf, outf, has_bias) = fc_dims(net, layer)?;
        let w = store.slice(layer, "weight")?.to_vec();
        let b = if has_bias { Some(store.slice(layer, "bias")?.to_vec()) } else { None };
        let f = compress_fc(&w, b.as_deref(), outf, inf, k)?;
        let norm: f64 = w.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        store.remove(&format!("{layer}.weight"));
        store.remove(&format!("{layer}.bias"));
        store.insert(format!("{layer}_L.weight"), Param::new(vec![k, inf], f.first)?);
        store.insert(format!("{layer}_U.weight"), Param::new(vec![outf, k], f.second)?);
        if let Some(b) = f.bias {
            store.insert(format!("{layer}_U.bias"), Param::new(vec![outf], b)?);
        }
        let err = f.discarded_energy.sqrt();
        summary.push(LayerCompression {
            layer: layer.to_string(),
            rank: k,
            in_features: inf,
            out_features: outf,
            params_before: (inf * outf) as u64,
            params_after: (k * (inf + outf)) as u64,
            frobenius_error: err,
            relative_error: if norm > 0.0 { err / norm } else { 0.0 },
        });
    }
    store.check(&new_net)?;
    Ok((new_net, store, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(m: usize, n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::new(m, n, (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn orthogonality_defect(u: &Matrix) -> f64 {
        let g = u.transpose().matmul(u);
        let i = Matrix::identity(g.rows);
        g.data.iter().zip(&i.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn identity_and_diagonal() {
        assert_eq!(svd(&Matrix::identity(4)).unwrap().s, vec![1.0; 4]);
        let d = Matrix::new(3, 3, vec![1.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(svd(&d).unwrap().s, vec![3.0, 2.0, 1.0]);
        let d = Matrix::new(3, 3, vec![3.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((reconstruction_error(&d, 2).unwrap() - 1.0).abs() < 1e-12);
        assert!((reconstruction_error(&d, 1).unwrap() - 5f64.sqrt()).abs() < 1e-12);
        assert!(reconstruction_error(&d, 3).unwrap() < 1e-12);
    }

    #[test]
    fn random_50x30_is_orthonormal_and_exact() {
        for (m, n) in [(50, 30), (30, 50)] {
            let w = random(m, n, 4);
            let d = svd(&w).unwrap();
            assert!(orthogonality_defect(&d.u) < 1e-10);
            assert!(orthogonality_defect(&d.v) < 1e-10);
            assert!(d.s.windows(2).all(|p| p[0] >= p[1]));
            let rec = d.reconstruct(m.min(n));
            let err = w.data.iter().zip(&rec.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err / w.frobenius() < 1e-10);
        }
    }

    #[test]
    fn rank_one_is_exact_at_k1() {
        let u: Vec<f64> = (0..7).map(|i| i as f64 - 2.5).collect();
        let v: Vec<f64> = (0..5).map(|i| (i as f64).sin() + 0.3).collect();
        let w = Matrix::new(7, 5, u.iter().flat_map(|a| v.iter().map(move |b| a * b)).collect()).unwrap();
        assert!(reconstruction_error(&w, 1).unwrap() < 1e-10);
        let d = svd(&w).unwrap();
        assert!(orthogonality_defect(&d.u) < 1e-10);
    }

    #[test]
    fn non_finite_and_rank_errors() {
        let w = Matrix::new(2, 2, vec![1.0, f64::NAN, 0.0, 1.0]).unwrap();
        assert!(matches!(svd(&w), Err(Error::NonFinite(_))));
        assert!(matches!(reconstruction_error(&Matrix::identity(3), 4), Err(Error::Rank { .. })));
        assert!(matches!(compress_fc(&[1.0; 6], None, 2, 3, 0), Err(Error::Rank { .. })));
    }

    #[test]
    fn compress_fc_reconstructs_at_full_rank() {
        let w = random(6, 9, 2);
        let wf: Vec<f32> = w.data.iter().map(|&v| v as f32).collect();
        let f = compress_fc(&wf, None, 6, 9, 6).unwrap();
        let first = Matrix::from_f32(6, 9, &f.first).unwrap();
        let second = Matrix::from_f32(6, 6, &f.second).unwrap();
        let rec = second.matmul(&first);
        for (a, b) in rec.data.iter().zip(&wf) {
            assert!((a - *b as f64).abs() < 1e-5);
        }
        assert!(f.discarded_energy < 1e-9);
    }

    #[test]
    fn randomized_path_matches_exact_leading_values() {
        // Low-rank-plus-noise matrix big enough to take the randomized path.
        let (m, n, k) = (1100, 1030, 20);
        let a = random(m, k, 1);
        let b = random(k, n, 2);
        let mut w = a.matmul(&b);
        let noise = random(m, n, 3);
        w.data.iter_mut().zip(&noise.data).for_each(|(x, e)| *x += 1e-3 * e);
        let t = truncated_svd(&w, k).unwrap();
        assert!(orthogonality_defect(&t.u) < 1e-10);
        assert!(orthogonality_defect(&t.v) < 1e-10);
        let rec = t.reconstruct(k);
        let err = w.data.iter().zip(&rec.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        // The optimum is about the noise level.
        assert!(err < 1.05 * 1e-3 * noise.frobenius(), "{err}");
    }
}
