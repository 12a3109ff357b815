//! Elementwise, broadcasting, structural and matrix operations.
//!
//! Public methods validate their arguments; the `*_unchecked` / crate-private
//! variants assume valid shapes and are what backward closures call.

use super::gemm::gemm;
use super::{Shape, Tensor};
use crate::error::{Error, Result};

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn map(x: &Tensor, f: impl Fn(f32) -> f32) -> Vec<f32> {
    x.data().iter().map(|&v| f(v)).collect()
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Vec<f32> {
    let (a, b) = (a.data(), b.data());
    a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
}

/// Sub-box of a tensor along the channel and spatial axes (all batch entries).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub c0: usize,
    pub c_len: usize,
    pub top: usize,
    pub height: usize,
    pub left: usize,
    pub width: usize,
}

impl Region {
    pub fn spatial(top: usize, left: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            c0: 0,
            c_len: channels,
            top,
            height,
            left,
            width,
        }
    }

    pub fn channels(c0: usize, c_len: usize, h: usize, w: usize) -> Self {
        Self {
            c0,
            c_len,
            top: 0,
            height: h,
            left: 0,
            width: w,
        }
    }

    fn fits(&self, s: Shape) -> bool {
        self.c_len > 0
            && self.height > 0
            && self.width > 0
            && self.c0 + self.c_len <= s.c
            && self.top + self.height <= s.h
            && self.left + self.width <= s.w
    }

    fn out_shape(&self, n: usize) -> Shape {
        Shape::new(n, self.c_len, self.height, self.width)
    }
}

/// Index strides of `from` broadcast to `to`: 0 along broadcast axes.
fn broadcast_strides(from: Shape, to: Shape) -> [usize; 4] {
    let f = from.dims();
    let t = to.dims();
    let mut strides = [0usize; 4];
    let mut acc = 1;
    for axis in (0..4).rev() {
        strides[axis] = if f[axis] == 1 && t[axis] != 1 { 0 } else { acc };
        acc *= f[axis];
    }
    strides
}

fn broadcastable(small: Shape, big: Shape) -> bool {
    small
        .dims()
        .iter()
        .zip(big.dims().iter())
        .all(|(&s, &b)| s == b || s == 1)
}

impl Tensor {
    // ---- elementwise binary ----

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        Ok(self.add_unchecked(other))
    }

    pub(crate) fn add_unchecked(&self, other: &Tensor) -> Tensor {
        Tensor::from_op(
            self.shape(),
            zip_map(self, other, |a, b| a + b),
            "add",
            vec![self.clone(), other.clone()],
            Box::new(|g, _, _, needs| vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())]),
        )
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        Ok(self.sub_unchecked(other))
    }

    pub(crate) fn sub_unchecked(&self, other: &Tensor) -> Tensor {
        Tensor::from_op(
            self.shape(),
            zip_map(self, other, |a, b| a - b),
            "sub",
            vec![self.clone(), other.clone()],
            Box::new(|g, _, _, needs| vec![needs[0].then(|| g.clone()), needs[1].then(|| g.scale(-1.0))]),
        )
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        Ok(self.mul_unchecked(other))
    }

    pub(crate) fn mul_unchecked(&self, other: &Tensor) -> Tensor {
        Tensor::from_op(
            self.shape(),
            zip_map(self, other, |a, b| a * b),
            "mul",
            vec![self.clone(), other.clone()],
            Box::new(|g, _, inputs, needs| {
                vec![
                    needs[0].then(|| g.mul_unchecked(&inputs[1])),
                    needs[1].then(|| g.mul_unchecked(&inputs[0])),
                ]
            }),
        )
    }

    // ---- elementwise unary ----

    pub fn scale(&self, factor: f32) -> Tensor {
        Tensor::from_op(
            self.shape(),
            map(self, |v| v * factor),
            "scale",
            vec![self.clone()],
            Box::new(move |g, _, _, _| vec![Some(g.scale(factor))]),
        )
    }

    pub fn add_scalar(&self, value: f32) -> Tensor {
        Tensor::from_op(
            self.shape(),
            map(self, |v| v + value),
            "add_scalar",
            vec![self.clone()],
            Box::new(|g, _, _, _| vec![Some(g.clone())]),
        )
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn square(&self) -> Tensor {
        self.mul_unchecked(self)
    }

    pub fn exp(&self) -> Tensor {
        Tensor::from_op(
            self.shape(),
            map(self, f32::exp),
            "exp",
            vec![self.clone()],
            Box::new(|g, out, _, _| vec![Some(g.mul_unchecked(out))]),
        )
    }

    pub fn tanh(&self) -> Tensor {
        Tensor::from_op(
            self.shape(),
            map(self, f32::tanh),
            "tanh",
            vec![self.clone()],
            Box::new(|g, out, _, _| {
                let slope = out.square().scale(-1.0).add_scalar(1.0);
                vec![Some(g.mul_unchecked(&slope))]
            }),
        )
    }

    /// Exponential linear unit: `x` for `x > 0`, `exp(x) - 1` otherwise.
    pub fn elu(&self) -> Tensor {
        Tensor::from_op(
            self.shape(),
            map(self, |v| if v > 0.0 { v } else { v.exp_m1() }),
            "elu",
            vec![self.clone()],
            Box::new(|g, _, inputs, _| vec![Some(g.mul_unchecked(&inputs[0].elu_slope()))]),
        )
    }

    /// Derivative of ELU: 1 for `x > 0`, `exp(x)` otherwise.
    fn elu_slope(&self) -> Tensor {
        Tensor::from_op(
            self.shape(),
            map(self, |v| if v > 0.0 { 1.0 } else { v.exp() }),
            "elu_slope",
            vec![self.clone()],
            Box::new(|g, _, inputs, _| vec![Some(g.mul_unchecked(&inputs[0].elu_curvature()))]),
        )
    }

    /// Second derivative of ELU: 0 for `x > 0`, `exp(x)` otherwise. It is its
    /// own derivative, which closes the chain for any order.
    fn elu_curvature(&self) -> Tensor {
        Tensor::from_op(
            self.shape(),
            map(self, |v| if v > 0.0 { 0.0 } else { v.exp() }),
            "elu_curvature",
            vec![self.clone()],
            Box::new(|g, out, _, _| vec![Some(g.mul_unchecked(out))]),
        )
    }

    pub fn abs(&self) -> Tensor {
        Tensor::from_op(
            self.shape(),
            map(self, f32::abs),
            "abs",
            vec![self.clone()],
            Box::new(|g, _, inputs, _| {
                let sign = Tensor::from_vec(
                    inputs[0].shape(),
                    map(&inputs[0], |v| {
                        if v > 0.0 {
                            1.0
                        } else if v < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }),
                );
                vec![Some(g.mul_unchecked(&sign))]
            }),
        )
    }

    /// Square root of a non-negative tensor, with the gradient at 0 taken as 0.
    pub fn sqrt(&self) -> Tensor {
        Tensor::from_op(
            self.shape(),
            map(self, |v| v.max(0.0).sqrt()),
            "sqrt",
            vec![self.clone()],
            Box::new(|g, out, _, _| vec![Some(g.mul_unchecked(&out.recip_or_zero()).scale(0.5))]),
        )
    }

    /// `1 / x` where `x != 0`, else 0.
    fn recip_or_zero(&self) -> Tensor {
        Tensor::from_op(
            self.shape(),
            map(self, |v| if v != 0.0 { 1.0 / v } else { 0.0 }),
            "recip_or_zero",
            vec![self.clone()],
            Box::new(|g, out, _, _| vec![Some(g.mul_unchecked(&out.square()).scale(-1.0))]),
        )
    }

    // ---- broadcasting and reductions ----

    /// Broadcast along axes of extent 1.
    pub fn expand(&self, target: Shape) -> Result<Tensor> {
        if !broadcastable(self.shape(), target) {
            return Err(Error::ShapeMismatch {
                op: "expand",
                left: self.shape(),
                right: target,
            });
        }
        Ok(self.expand_unchecked(target))
    }

    pub(crate) fn expand_unchecked(&self, target: Shape) -> Tensor {
        if self.shape() == target {
            return self.clone();
        }
        let src = self.data();
        let st = broadcast_strides(self.shape(), target);
        let mut out = Vec::with_capacity(target.numel());
        for n in 0..target.n {
            for c in 0..target.c {
                for h in 0..target.h {
                    let base = n * st[0] + c * st[1] + h * st[2];
                    if st[3] == 0 {
                        out.extend(std::iter::repeat_n(src[base], target.w));
                    } else {
                        out.extend_from_slice(&src[base..base + target.w]);
                    }
                }
            }
        }
        Tensor::from_op(
            target,
            out,
            "expand",
            vec![self.clone()],
            Box::new(|g, _, inputs, _| vec![Some(g.reduce_to_unchecked(inputs[0].shape()))]),
        )
    }

    /// Sum over axes where `target` has extent 1.
    pub fn reduce_to(&self, target: Shape) -> Result<Tensor> {
        if !broadcastable(target, self.shape()) {
            return Err(Error::ShapeMismatch {
                op: "reduce_to",
                left: self.shape(),
                right: target,
            });
        }
        Ok(self.reduce_to_unchecked(target))
    }

    pub(crate) fn reduce_to_unchecked(&self, target: Shape) -> Tensor {
        let shape = self.shape();
        if shape == target {
            return self.clone();
        }
        let src = self.data();
        let st = broadcast_strides(target, shape);
        let mut out = vec![0.0f32; target.numel()];
        let mut i = 0;
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    let base = n * st[0] + c * st[1] + h * st[2];
                    let row = &src[i..i + shape.w];
                    if st[3] == 0 {
                        out[base] += row.iter().sum::<f32>();
                    } else {
                        out[base..base + shape.w]
                            .iter_mut()
                            .zip(row)
                            .for_each(|(o, v)| *o += v);
                    }
                    i += shape.w;
                }
            }
        }
        Tensor::from_op(
            target,
            out,
            "reduce_to",
            vec![self.clone()],
            Box::new(|g, _, inputs, _| vec![Some(g.expand_unchecked(inputs[0].shape()))]),
        )
    }

    /// Sum of all elements, shape `(1, 1, 1, 1)`.
    pub fn sum(&self) -> Tensor {
        self.reduce_to_unchecked(Shape::scalar())
    }

    pub fn mean(&self) -> Tensor {
        self.sum().scale(1.0 / self.numel() as f32)
    }

    /// Per-sample sum, shape `(N, 1, 1, 1)`.
    pub fn sum_per_sample(&self) -> Tensor {
        self.reduce_to_unchecked(Shape::new(self.shape().n, 1, 1, 1))
    }

    // ---- structural ----

    pub fn reshape(&self, shape: Shape) -> Result<Tensor> {
        if shape.numel() != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape(),
                right: shape,
            });
        }
        Ok(self.reshape_unchecked(shape))
    }

    pub(crate) fn reshape_unchecked(&self, shape: Shape) -> Tensor {
        Tensor::from_op_rc(
            shape,
            self.data(),
            "reshape",
            vec![self.clone()],
            Box::new(|g, _, inputs, _| vec![Some(g.reshape_unchecked(inputs[0].shape()))]),
        )
    }

    /// `(N, C, H, W) -> (N, C*H*W, 1, 1)`.
    pub fn flatten(&self) -> Tensor {
        let s = self.shape();
        self.reshape_unchecked(Shape::new(s.n, s.sample_len(), 1, 1))
    }

    pub fn crop(&self, region: Region) -> Result<Tensor> {
        if !region.fits(self.shape()) {
            return Err(Error::invalid(
                "crop",
                format!("region {region:?} does not fit in {:?}", self.shape()),
            ));
        }
        Ok(self.crop_unchecked(region))
    }

    pub(crate) fn crop_unchecked(&self, r: Region) -> Tensor {
        let s = self.shape();
        let src = self.data();
        let out_shape = r.out_shape(s.n);
        let mut out = Vec::with_capacity(out_shape.numel());
        for n in 0..s.n {
            for c in r.c0..r.c0 + r.c_len {
                for h in r.top..r.top + r.height {
                    let base = ((n * s.c + c) * s.h + h) * s.w + r.left;
                    out.extend_from_slice(&src[base..base + r.width]);
                }
            }
        }
        Tensor::from_op(
            out_shape,
            out,
            "crop",
            vec![self.clone()],
            Box::new(move |g, _, inputs, _| vec![Some(g.embed_unchecked(inputs[0].shape(), r))]),
        )
    }

    /// Place `self` at `region` inside a zero tensor of shape `full`.
    pub(crate) fn embed_unchecked(&self, full: Shape, r: Region) -> Tensor {
        let src = self.data();
        let mut out = vec![0.0f32; full.numel()];
        let mut i = 0;
        for n in 0..full.n {
            for c in r.c0..r.c0 + r.c_len {
                for h in r.top..r.top + r.height {
                    let base = ((n * full.c + c) * full.h + h) * full.w + r.left;
                    out[base..base + r.width].copy_from_slice(&src[i..i + r.width]);
                    i += r.width;
                }
            }
        }
        Tensor::from_op(
            full,
            out,
            "embed",
            vec![self.clone()],
            Box::new(move |g, _, _, _| vec![Some(g.crop_unchecked(r))]),
        )
    }

    /// Channel-wise concatenation, in argument order.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_channels", "no inputs"))?;
        let s0 = first.shape();
        for p in parts {
            let s = p.shape();
            if (s.n, s.h, s.w) != (s0.n, s0.h, s0.w) {
                return Err(Error::ShapeMismatch {
                    op: "concat_channels",
                    left: s0,
                    right: s,
                });
            }
        }
        let total_c: usize = parts.iter().map(|p| p.shape().c).sum();
        let out_shape = Shape::new(s0.n, total_c, s0.h, s0.w);
        let datas: Vec<_> = parts.iter().map(|p| p.data()).collect();
        let mut out = Vec::with_capacity(out_shape.numel());
        for n in 0..s0.n {
            for (p, d) in parts.iter().zip(&datas) {
                let len = p.shape().sample_len();
                out.extend_from_slice(&d[n * len..(n + 1) * len]);
            }
        }
        let plane = (s0.h, s0.w);
        let offsets: Vec<(usize, usize)> = parts
            .iter()
            .scan(0, |acc, p| {
                let c0 = *acc;
                *acc += p.shape().c;
                Some((c0, p.shape().c))
            })
            .collect();
        Ok(Tensor::from_op(
            out_shape,
            out,
            "concat_channels",
            parts.iter().map(|&p| p.clone()).collect(),
            Box::new(move |g, _, _, needs| {
                offsets
                    .iter()
                    .zip(needs)
                    .map(|(&(c0, c_len), &need)| {
                        need.then(|| g.crop_unchecked(Region::channels(c0, c_len, plane.0, plane.1)))
                    })
                    .collect()
            }),
        ))
    }

    /// `mask ? a : b` elementwise, with `mask` a constant in {0, 1}
    /// broadcastable to the shape of `a`.
    pub fn select(mask: &Tensor, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        same_shape("select", a, b)?;
        if !broadcastable(mask.shape(), a.shape()) {
            return Err(Error::ShapeMismatch {
                op: "select",
                left: mask.shape(),
                right: a.shape(),
            });
        }
        let m = mask.detach().expand_unchecked(a.shape());
        let md = m.data();
        if let Some(&bad) = md.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidMask(bad));
        }
        let (ad, bd) = (a.data(), b.data());
        let out: Vec<f32> = md
            .iter()
            .zip(ad.iter().zip(bd.iter()))
            .map(|(&mv, (&x, &y))| if mv == 1.0 { x } else { y })
            .collect();
        let keep = m;
        Ok(Tensor::from_op(
            a.shape(),
            out,
            "select",
            vec![a.clone(), b.clone()],
            Box::new(move |g, _, _, needs| {
                let inv = || {
                    let d: Vec<f32> = keep.data().iter().map(|v| 1.0 - v).collect();
                    Tensor::from_vec(keep.shape(), d)
                };
                vec![
                    needs[0].then(|| g.mul_unchecked(&keep)),
                    needs[1].then(|| g.mul_unchecked(&inv())),
                ]
            }),
        ))
    }

    // ---- matrix product ----

    /// 2-D product `op(A) · op(B)` where each tensor is viewed as
    /// `(N, C*H*W)`. Output shape `(M, P, 1, 1)`.
    pub fn matmul(a: &Tensor, trans_a: bool, b: &Tensor, trans_b: bool) -> Result<Tensor> {
        let (_, ka) = mat_dims(a.shape(), trans_a);
        let (kb, _) = mat_dims(b.shape(), trans_b);
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: a.shape(),
                right: b.shape(),
            });
        }
        Ok(matmul_unchecked(a, trans_a, b, trans_b))
    }
}

/// `(rows, cols)` of the possibly transposed 2-D view.
fn mat_dims(s: Shape, trans: bool) -> (usize, usize) {
    let (r, c) = (s.n, s.sample_len());
    if trans {
        (c, r)
    } else {
        (r, c)
    }
}

fn mat_strides(s: Shape, trans: bool) -> (isize, isize) {
    let cols = s.sample_len() as isize;
    if trans {
        (1, cols)
    } else {
        (cols, 1)
    }
}

pub(crate) fn matmul_unchecked(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Tensor {
    let (m, k) = mat_dims(a.shape(), ta);
    let (_, p) = mat_dims(b.shape(), tb);
    let (ars, acs) = mat_strides(a.shape(), ta);
    let (brs, bcs) = mat_strides(b.shape(), tb);
    let mut out = vec![0.0f32; m * p];
    gemm(m, k, p, &a.data(), ars, acs, &b.data(), brs, bcs, &mut out);
    Tensor::from_op(
        Shape::new(m, p, 1, 1),
        out,
        "matmul",
        vec![a.clone(), b.clone()],
        Box::new(move |g, _, inputs, needs| {
            let (a, b) = (&inputs[0], &inputs[1]);
            let ga = needs[0].then(|| {
                let r = if ta {
                    matmul_unchecked(b, tb, g, true)
                } else {
                    matmul_unchecked(g, false, b, !tb)
                };
                r.reshape_unchecked(a.shape())
            });
            let gb = needs[1].then(|| {
                let r = if tb {
                    matmul_unchecked(g, true, a, ta)
                } else {
                    matmul_unchecked(a, !ta, g, false)
                };
                r.reshape_unchecked(b.shape())
            });
            vec![ga, gb]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad;

    fn t(shape: Shape, data: &[f32]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn expand_and_reduce_are_adjoint() {
        let x = t(Shape::new(2, 1, 1, 3), &[1., 2., 3., 4., 5., 6.]);
        let e = x.expand(Shape::new(2, 2, 2, 3)).unwrap();
        assert_eq!(e.numel(), 24);
        let r = e.reduce_to(Shape::new(2, 1, 1, 3)).unwrap();
        assert_eq!(r.to_vec(), vec![4., 8., 12., 16., 20., 24.]);
        assert!(x.expand(Shape::new(3, 1, 1, 3)).is_err());
    }

    #[test]
    fn crop_embed_round_trip() {
        let x = Tensor::new(Shape::new(1, 2, 4, 4), (0..32).map(|v| v as f32).collect()).unwrap();
        let r = Region::spatial(1, 1, 2, 2, 2);
        let c = x.crop(r).unwrap();
        assert_eq!(c.to_vec(), vec![5., 6., 9., 10., 21., 22., 25., 26.]);
        let e = c.embed_unchecked(x.shape(), r);
        assert_eq!(e.crop(r).unwrap().to_vec(), c.to_vec());
        assert!(x.crop(Region::spatial(3, 3, 2, 2, 2)).is_err());
    }

    #[test]
    fn select_rejects_fractional_mask() {
        let a = Tensor::zeros(Shape::new(1, 1, 1, 2));
        let m = t(Shape::new(1, 1, 1, 2), &[0.5, 1.0]);
        assert!(matches!(Tensor::select(&m, &a, &a), Err(Error::InvalidMask(_))));
    }

    #[test]
    fn matmul_transposes_agree() {
        let a = t(Shape::new(2, 3, 1, 1), &[1., 2., 3., 4., 5., 6.]);
        let b = t(Shape::new(3, 2, 1, 1), &[1., 0., 0., 1., 1., 1.]);
        let c = Tensor::matmul(&a, false, &b, false).unwrap();
        assert_eq!(c.to_vec(), vec![4., 5., 10., 11.]);
        let bt = t(Shape::new(2, 3, 1, 1), &[1., 0., 1., 0., 1., 1.]);
        let c2 = Tensor::matmul(&a, false, &bt, true).unwrap();
        assert_eq!(c2.to_vec(), c.to_vec());
        assert!(Tensor::matmul(&a, false, &a, false).is_err());
    }

    #[test]
    fn double_backward_of_cubic() {
        // f = sum(x^3); df/dx = 3x^2; d/dx sum(df/dx) = 6x
        let x = Tensor::param(Shape::new(1, 1, 1, 3), vec![1.0, -2.0, 0.5]).unwrap();
        let f = x.square().mul(&x).unwrap().sum();
        let g = grad(&f, &[&x], true).unwrap().remove(0);
        assert_eq!(g.to_vec(), vec![3.0, 12.0, 0.75]);
        g.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0, -12.0, 3.0]);
    }

    #[test]
    fn elu_second_derivative() {
        let x = Tensor::param(Shape::new(1, 1, 1, 2), vec![0.7, -0.3]).unwrap();
        let g = grad(&x.elu().sum(), &[&x], true).unwrap().remove(0);
        g.sum().backward().unwrap();
        let gg = x.grad().unwrap();
        assert_eq!(gg[0], 0.0);
        assert!((gg[1] - (-0.3f32).exp()).abs() < 1e-6);
    }
}
