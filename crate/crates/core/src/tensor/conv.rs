use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{count_kernel, gemm, MatRef, Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Output positions handled per im2col chunk.
const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    #[serde(default)]
    pub has_bias: bool,
    #[serde(default = "one")]
    pub groups: usize,
}

fn one() -> usize {
    1
}

impl ConvSpec {
    /// Square kernel, no bias, single group.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            pad,
            has_bias: false,
            groups: 1,
        }
    }

    pub fn with_bias(mut self) -> Self {
        self.has_bias = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.in_channels > 0
            && self.out_channels > 0
            && self.kernel_h > 0
            && self.kernel_w > 0
            && self.stride > 0
            && self.groups > 0
            && self.in_channels % self.groups == 0
            && self.out_channels % self.groups == 0;
        if ok {
            Ok(())
        } else {
            Err(Error::shape("conv2d", format!("invalid conv spec {self:?}")))
        }
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel_h,
            self.kernel_w,
        ]
    }

    pub fn weight_count(&self) -> usize {
        self.weight_dims().iter().product()
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let ph = h + 2 * self.pad;
        let pw = w + 2 * self.pad;
        if ph < self.kernel_h {
            return Err(Error::shape(
                "conv2d",
                format!("height: padded input {ph} smaller than kernel {}", self.kernel_h),
            ));
        }
        if pw < self.kernel_w {
            return Err(Error::shape(
                "conv2d",
                format!("width: padded input {pw} smaller than kernel {}", self.kernel_w),
            ));
        }
        Ok((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }

    fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        if input.c != self.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!("channels: input has {}, spec expects {}", input.c, self.in_channels),
            ));
        }
        let (oh, ow) = self.output_hw(input.h, input.w)?;
        Ok(Shape::new(input.n, self.out_channels, oh, ow))
    }

    fn check_weights<T: Scalar>(&self, weights: &Tensor<T>, bias: Option<&[T]>) -> Result<()> {
        if weights.shape().dims() != self.weight_dims() {
            return Err(Error::shape(
                "conv2d",
                format!(
                    "weights: dims {:?}, expected {:?}",
                    weights.shape().dims(),
                    self.weight_dims()
                ),
            ));
        }
        if let Some(b) = bias {
            if b.len() != self.out_channels {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias: length {}, expected {}", b.len(), self.out_channels),
                ));
            }
        }
        Ok(())
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.pad == 0
    }
}

struct Geometry {
    h: usize,
    w: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

/// Fill `buf` (rows = cg*kh*kw, cols = positions in `range`) from the channel
/// planes in `src`.
fn im2col<T: Scalar>(src: &[T], cg: usize, g: &Geometry, range: std::ops::Range<usize>, buf: &mut [T]) {
    let len = range.len();
    let plane = g.h * g.w;
    let mut row = 0;
    for c in 0..cg {
        let chan = &src[c * plane..(c + 1) * plane];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let dst = &mut buf[row * len..(row + 1) * len];
                for (slot, pos) in dst.iter_mut().zip(range.clone()) {
                    let oy = pos / g.ow;
                    let ox = pos % g.ow;
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    *slot = if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                        chan[iy as usize * g.w + ix as usize]
                    } else {
                        T::zero()
                    };
                }
                row += 1;
            }
        }
    }
}

/// Accumulate column gradients back into channel planes.
fn col2im<T: Scalar>(cols: &[T], cg: usize, g: &Geometry, positions: usize, dst: &mut [T]) {
    let plane = g.h * g.w;
    let mut row = 0;
    for c in 0..cg {
        let chan = &mut dst[c * plane..(c + 1) * plane];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let src = &cols[row * positions..(row + 1) * positions];
                for (pos, &v) in src.iter().enumerate() {
                    let oy = pos / g.ow;
                    let ox = pos % g.ow;
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                        chan[iy as usize * g.w + ix as usize] = chan[iy as usize * g.w + ix as usize] + v;
                    }
                }
                row += 1;
            }
        }
    }
}

/// Cross-correlation with zero padding, optional bias and channel groups.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&[T]>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    count_kernel();
    let ishape = input.shape();
    let oshape = spec.output_shape(ishape)?;
    spec.check_weights(weights, bias)?;

    let groups = spec.groups;
    let cg_in = spec.in_channels / groups;
    let cg_out = spec.out_channels / groups;
    let kdim = cg_in * spec.kernel_h * spec.kernel_w;
    let positions = oshape.plane();
    let geom = Geometry {
        h: ishape.h,
        w: ishape.w,
        ow: oshape.w,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        pad: spec.pad,
    };
    let mut out = Tensor::zeros(oshape);
    if positions == 0 || oshape.n == 0 {
        return Ok(out);
    }

    let chunks: Vec<std::ops::Range<usize>> = (0..positions)
        .step_by(CHUNK)
        .map(|s| s..(s + CHUNK).min(positions))
        .collect();

    for n in 0..ishape.n {
        for g in 0..groups {
            let in_start = (n * ishape.c + g * cg_in) * ishape.plane();
            let src = &input.data()[in_start..in_start + cg_in * ishape.plane()];
            let wg = &weights.data()[g * cg_out * kdim..(g + 1) * cg_out * kdim];
            let wmat = MatRef::row_major(wg, cg_out, kdim);

            let results: Vec<Vec<T>> = chunks
                .par_iter()
                .map(|range| {
                    let len = range.len();
                    let mut tmp = vec![T::zero(); cg_out * len];
                    if spec.is_pointwise() {
                        let view = MatRef {
                            data: &src[range.start..],
                            rows: cg_in,
                            cols: len,
                            rs: ishape.plane(),
                            cs: 1,
                        };
                        gemm(wmat, view, T::zero(), &mut tmp);
                    } else {
                        let mut cols = vec![T::zero(); kdim * len];
                        im2col(src, cg_in, &geom, range.clone(), &mut cols);
                        gemm(wmat, MatRef::row_major(&cols, kdim, len), T::zero(), &mut tmp);
                    }
                    tmp
                })
                .collect();

            let out_base = (n * oshape.c + g * cg_out) * positions;
            let od = out.data_mut();
            for (range, tmp) in chunks.iter().zip(results) {
                let len = range.len();
                for o in 0..cg_out {
                    let dst = out_base + o * positions + range.start;
                    od[dst..dst + len].copy_from_slice(&tmp[o * len..(o + 1) * len]);
                }
            }
        }
    }

    if let Some(b) = bias {
        let od = out.data_mut();
        for n in 0..oshape.n {
            for (o, &bv) in b.iter().enumerate() {
                let start = (n * oshape.c + o) * positions;
                for v in &mut od[start..start + positions] {
                    *v = *v + bv;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

/// Exact gradients of [`conv2d_forward`] with respect to input, weights and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_output: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    count_kernel();
    let ishape = input.shape();
    let oshape = spec.output_shape(ishape)?;
    spec.check_weights(weights, None)?;
    if grad_output.shape() != oshape {
        return Err(Error::shape(
            "conv2d_backward",
            format!(
                "grad_output dims {:?}, expected {:?}",
                grad_output.shape().dims(),
                oshape.dims()
            ),
        ));
    }

    let groups = spec.groups;
    let cg_in = spec.in_channels / groups;
    let cg_out = spec.out_channels / groups;
    let kdim = cg_in * spec.kernel_h * spec.kernel_w;
    let positions = oshape.plane();
    let geom = Geometry {
        h: ishape.h,
        w: ishape.w,
        ow: oshape.w,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        pad: spec.pad,
    };

    let mut grad_input = Tensor::zeros(ishape);
    let mut grad_weights = Tensor::zeros(weights.shape());
    let mut grad_bias = vec![T::zero(); spec.out_channels];

    for n in 0..ishape.n {
        for g in 0..groups {
            let in_start = (n * ishape.c + g * cg_in) * ishape.plane();
            let src = &input.data()[in_start..in_start + cg_in * ishape.plane()];
            let go_start = (n * oshape.c + g * cg_out) * positions;
            let go = &grad_output.data()[go_start..go_start + cg_out * positions];
            let go_mat = MatRef::row_major(go, cg_out, positions);

            let mut cols = vec![T::zero(); kdim * positions];
            im2col(src, cg_in, &geom, 0..positions, &mut cols);

            let gw = &mut grad_weights.data_mut()[g * cg_out * kdim..(g + 1) * cg_out * kdim];
            gemm(go_mat, MatRef::row_major(&cols, kdim, positions).t(), T::one(), gw);

            let wg = &weights.data()[g * cg_out * kdim..(g + 1) * cg_out * kdim];
            let mut gcols = vec![T::zero(); kdim * positions];
            gemm(MatRef::row_major(wg, cg_out, kdim).t(), go_mat, T::zero(), &mut gcols);
            let dst = &mut grad_input.data_mut()[in_start..in_start + cg_in * ishape.plane()];
            col2im(&gcols, cg_in, &geom, positions, dst);

            for o in 0..cg_out {
                let s: T = go[o * positions..(o + 1) * positions].iter().copied().sum();
                grad_bias[g * cg_out + o] = grad_bias[g * cg_out + o] + s;
            }
        }
    }

    Ok(ConvGrads {
        input: grad_input,
        weights: grad_weights,
        bias: grad_bias,
    })
}
