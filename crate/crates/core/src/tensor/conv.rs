//! 2-D convolution family.
//!
//! Three bilinear operations close under differentiation:
//!
//! * `conv(x, w)`: the forward correlation,
//! * `conv_input_grad(g, w)`: its adjoint in `x` (a transposed convolution),
//! * `conv_weight_grad(x, g)`: its adjoint in `w`.
//!
//! Each one's backward pass is expressed with the other two, so gradients of
//! gradients stay inside the family. All three run as im2col + GEMM over the
//! whole batch at once.

use super::gemm::gemm;
use super::{Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding with `out = ceil(in / stride)`; any odd padding goes to
    /// the bottom/right.
    Same,
    /// No padding.
    Valid,
}

/// Index arithmetic of one convolution: output `(oy, ox)` reads input
/// `(oy * stride + ky * dilation - pad_top, ox * stride + kx * dilation - pad_left)`,
/// with out-of-range reads contributing zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub pad: (usize, usize),
    pub input: (usize, usize),
    pub output: (usize, usize),
}

fn same_axis(input: usize, k: usize, s: usize, d: usize) -> (usize, usize) {
    let out = input.div_ceil(s);
    let eff = (k - 1) * d + 1;
    let total = ((out - 1) * s + eff).saturating_sub(input);
    (out, total / 2)
}

impl ConvGeometry {
    pub fn new(
        input: (usize, usize),
        kernel: (usize, usize),
        stride: (usize, usize),
        dilation: (usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::invalid("conv2d", "stride must be positive"));
        }
        if dilation.0 == 0 || dilation.1 == 0 {
            return Err(Error::invalid("conv2d", "dilation must be positive"));
        }
        if kernel.0 == 0 || kernel.1 == 0 {
            return Err(Error::invalid("conv2d", "kernel must be non-empty"));
        }
        if input.0 == 0 || input.1 == 0 {
            return Err(Error::EmptyOutput { op: "conv2d" });
        }
        let (output, pad) = match padding {
            Padding::Same => {
                let (oh, ph) = same_axis(input.0, kernel.0, stride.0, dilation.0);
                let (ow, pw) = same_axis(input.1, kernel.1, stride.1, dilation.1);
                ((oh, ow), (ph, pw))
            }
            Padding::Valid => {
                let eh = (kernel.0 - 1) * dilation.0 + 1;
                let ew = (kernel.1 - 1) * dilation.1 + 1;
                if input.0 < eh || input.1 < ew {
                    return Err(Error::EmptyOutput { op: "conv2d" });
                }
                (
                    ((input.0 - eh) / stride.0 + 1, (input.1 - ew) / stride.1 + 1),
                    (0, 0),
                )
            }
        };
        Ok(Self {
            kernel,
            stride,
            dilation,
            pad,
            input,
            output,
        })
    }

    /// Geometry of the forward convolution whose input-adjoint upsamples
    /// `small` by `stride`: the large side is `small * stride`, padded by
    /// `(k - s) / 2` so each small pixel scatters a kernel centred on its
    /// `stride x stride` cell.
    pub fn transposed(small: (usize, usize), kernel: (usize, usize), stride: (usize, usize)) -> Result<Self> {
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::invalid("conv2d_transpose", "stride must be positive"));
        }
        if kernel.0 == 0 || kernel.1 == 0 {
            return Err(Error::invalid("conv2d_transpose", "kernel must be non-empty"));
        }
        if small.0 == 0 || small.1 == 0 {
            return Err(Error::EmptyOutput { op: "conv2d_transpose" });
        }
        Ok(Self {
            kernel,
            stride,
            dilation: (1, 1),
            pad: (
                kernel.0.saturating_sub(stride.0) / 2,
                kernel.1.saturating_sub(stride.1) / 2,
            ),
            input: (small.0 * stride.0, small.1 * stride.1),
            output: small,
        })
    }

    fn taps(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }

    fn out_plane(&self) -> usize {
        self.output.0 * self.output.1
    }

    /// Input coordinate read by output `o` at kernel tap `k` along one axis.
    #[inline]
    fn source(o: usize, k: usize, s: usize, d: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o * s + k * d) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Columns `(C*kh*kw) x (N*oh*ow)`.
fn im2col(x: &[f32], n: usize, c: usize, g: &ConvGeometry) -> Vec<f32> {
    let (ih, iw) = g.input;
    let (oh, ow) = g.output;
    let plane = oh * ow;
    let cols_n = n * plane;
    let rows = c * g.taps();
    let mut cols = vec![0.0f32; rows * cols_n];
    for ci in 0..c {
        for ky in 0..g.kernel.0 {
            for kx in 0..g.kernel.1 {
                let row = (ci * g.kernel.0 + ky) * g.kernel.1 + kx;
                let dst_row = &mut cols[row * cols_n..(row + 1) * cols_n];
                for ni in 0..n {
                    let src = &x[(ni * c + ci) * ih * iw..(ni * c + ci + 1) * ih * iw];
                    let dst = &mut dst_row[ni * plane..(ni + 1) * plane];
                    for oy in 0..oh {
                        let Some(iy) = ConvGeometry::source(oy, ky, g.stride.0, g.dilation.0, g.pad.0, ih) else {
                            continue;
                        };
                        let src_row = &src[iy * iw..(iy + 1) * iw];
                        let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            if let Some(ix) = ConvGeometry::source(ox, kx, g.stride.1, g.dilation.1, g.pad.1, iw) {
                                *d = src_row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back to `(N, C, H, W)`.
fn col2im(cols: &[f32], n: usize, c: usize, g: &ConvGeometry) -> Vec<f32> {
    let (ih, iw) = g.input;
    let (oh, ow) = g.output;
    let plane = oh * ow;
    let cols_n = n * plane;
    let mut x = vec![0.0f32; n * c * ih * iw];
    for ci in 0..c {
        for ky in 0..g.kernel.0 {
            for kx in 0..g.kernel.1 {
                let row = (ci * g.kernel.0 + ky) * g.kernel.1 + kx;
                let src_row = &cols[row * cols_n..(row + 1) * cols_n];
                for ni in 0..n {
                    let dst = &mut x[(ni * c + ci) * ih * iw..(ni * c + ci + 1) * ih * iw];
                    let src = &src_row[ni * plane..(ni + 1) * plane];
                    for oy in 0..oh {
                        let Some(iy) = ConvGeometry::source(oy, ky, g.stride.0, g.dilation.0, g.pad.0, ih) else {
                            continue;
                        };
                        let dst_row = &mut dst[iy * iw..(iy + 1) * iw];
                        let src_row = &src[oy * ow..(oy + 1) * ow];
                        for (ox, &v) in src_row.iter().enumerate() {
                            if let Some(ix) = ConvGeometry::source(ox, kx, g.stride.1, g.dilation.1, g.pad.1, iw) {
                                dst_row[ix] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

/// `(N, C, P)` -> `(C, N*P)`.
fn batch_to_channel_major(x: &[f32], n: usize, c: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for ni in 0..n {
        for ci in 0..c {
            out[ci * n * p + ni * p..ci * n * p + (ni + 1) * p]
                .copy_from_slice(&x[(ni * c + ci) * p..(ni * c + ci + 1) * p]);
        }
    }
    out
}

/// `(C, N*P)` -> `(N, C, P)`.
fn channel_to_batch_major(x: &[f32], n: usize, c: usize, p: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; x.len()];
    for ci in 0..c {
        for ni in 0..n {
            out[(ni * c + ci) * p..(ni * c + ci + 1) * p]
                .copy_from_slice(&x[ci * n * p + ni * p..ci * n * p + (ni + 1) * p]);
        }
    }
    out
}

/// Correlation `x (N, Ci, H, W)` with `w (Co, Ci, kh, kw)`.
pub(crate) fn conv_op(x: &Tensor, w: &Tensor, g: ConvGeometry) -> Tensor {
    let xs = x.shape();
    let ws = w.shape();
    let (n, ci, co) = (xs.n, xs.c, ws.n);
    let k = ci * g.taps();
    let p = g.out_plane();
    let cols = im2col(&x.data(), n, ci, &g);
    let mut y = vec![0.0f32; co * n * p];
    gemm(co, k, n * p, &w.data(), k as isize, 1, &cols, (n * p) as isize, 1, &mut y);
    let out = channel_to_batch_major(&y, n, co, p);
    Tensor::from_op(
        Shape::new(n, co, g.output.0, g.output.1),
        out,
        "conv2d",
        vec![x.clone(), w.clone()],
        Box::new(move |gy, _, inputs, needs| {
            let (x, w) = (&inputs[0], &inputs[1]);
            vec![
                needs[0].then(|| conv_input_grad_op(gy, w, g, x.shape())),
                needs[1].then(|| conv_weight_grad_op(x, gy, g, w.shape())),
            ]
        }),
    )
}

/// Adjoint of [`conv_op`] in its input: `gy (N, Co, oh, ow)` -> `(N, Ci, H, W)`.
pub(crate) fn conv_input_grad_op(gy: &Tensor, w: &Tensor, g: ConvGeometry, x_shape: Shape) -> Tensor {
    let ys = gy.shape();
    let (n, co, ci) = (ys.n, ys.c, x_shape.c);
    let k = ci * g.taps();
    let p = g.out_plane();
    let gy_cm = batch_to_channel_major(&gy.data(), n, co, p);
    let mut cols = vec![0.0f32; k * n * p];
    // W^T: (k x co) view of the (co x k) weight
    gemm(k, co, n * p, &w.data(), 1, k as isize, &gy_cm, (n * p) as isize, 1, &mut cols);
    let out = col2im(&cols, n, ci, &g);
    Tensor::from_op(
        x_shape,
        out,
        "conv_input_grad",
        vec![gy.clone(), w.clone()],
        Box::new(move |gx, _, inputs, needs| {
            let (gy, w) = (&inputs[0], &inputs[1]);
            vec![
                needs[0].then(|| conv_op(gx, w, g)),
                needs[1].then(|| conv_weight_grad_op(gx, gy, g, w.shape())),
            ]
        }),
    )
}

/// Adjoint of [`conv_op`] in its weight: `(x, gy)` -> `(Co, Ci, kh, kw)`.
pub(crate) fn conv_weight_grad_op(x: &Tensor, gy: &Tensor, g: ConvGeometry, w_shape: Shape) -> Tensor {
    let xs = x.shape();
    let (n, ci, co) = (xs.n, xs.c, w_shape.n);
    let k = ci * g.taps();
    let p = g.out_plane();
    let cols = im2col(&x.data(), n, ci, &g);
    let gy_cm = batch_to_channel_major(&gy.data(), n, co, p);
    let mut dw = vec![0.0f32; co * k];
    // (co x NP) · (NP x k), the second operand is cols^T
    gemm(co, n * p, k, &gy_cm, (n * p) as isize, 1, &cols, 1, (n * p) as isize, &mut dw);
    Tensor::from_op(
        w_shape,
        dw,
        "conv_weight_grad",
        vec![x.clone(), gy.clone()],
        Box::new(move |gw, _, inputs, needs| {
            let (x, gy) = (&inputs[0], &inputs[1]);
            vec![
                needs[0].then(|| conv_input_grad_op(gy, gw, g, x.shape())),
                needs[1].then(|| conv_op(x, gw, g)),
            ]
        }),
    )
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != Shape::new(1, channels, 1, 1) {
            return Err(Error::ShapeMismatch {
                op,
                left: b.shape(),
                right: Shape::new(1, channels, 1, 1),
            });
        }
    }
    Ok(())
}

fn add_bias(y: Tensor, bias: Option<&Tensor>) -> Tensor {
    match bias {
        Some(b) => y.add_unchecked(&b.expand_unchecked(y.shape())),
        None => y,
    }
}

/// 2-D convolution. `weight` is `(C_out, C_in, kh, kw)`, `bias` `(1, C_out, 1, 1)`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize),
    dilation: (usize, usize),
    padding: Padding,
) -> Result<Tensor> {
    let (xs, ws) = (input.shape(), weight.shape());
    if xs.c != ws.c {
        return Err(Error::ChannelMismatch {
            op: "conv2d",
            expected: ws.c,
            actual: xs.c,
        });
    }
    check_bias("conv2d", bias, ws.n)?;
    let g = ConvGeometry::new((xs.h, xs.w), (ws.h, ws.w), stride, dilation, padding)?;
    Ok(add_bias(conv_op(input, weight, g), bias))
}

/// Transposed convolution upsampling by `stride`. `weight` is
/// `(C_in, C_out, kh, kw)`; output is `(N, C_out, H * sy, W * sx)`.
pub fn conv2d_transpose(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: (usize, usize),
) -> Result<Tensor> {
    let (xs, ws) = (input.shape(), weight.shape());
    if xs.c != ws.n {
        return Err(Error::ChannelMismatch {
            op: "conv2d_transpose",
            expected: ws.n,
            actual: xs.c,
        });
    }
    check_bias("conv2d_transpose", bias, ws.c)?;
    let g = ConvGeometry::transposed((xs.h, xs.w), (ws.h, ws.w), stride)?;
    let out_shape = Shape::new(xs.n, ws.c, g.input.0, g.input.1);
    Ok(add_bias(conv_input_grad_op(input, weight, g, out_shape), bias))
}

/// Affine map on the flattened input: `(N, D_in)` with weight
/// `(D_out, D_in, 1, 1)` and bias `(1, D_out, 1, 1)` -> `(N, D_out, 1, 1)`.
pub fn fully_connected(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let d_in = input.shape().sample_len();
    if weight.shape().sample_len() != d_in {
        return Err(Error::ShapeMismatch {
            op: "fully_connected",
            left: input.shape(),
            right: weight.shape(),
        });
    }
    check_bias("fully_connected", bias, weight.shape().n)?;
    let y = super::ops::matmul_unchecked(input, false, weight, true);
    Ok(add_bias(y, bias))
}
