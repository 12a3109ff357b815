//! Naive `f64` forward passes written directly from the operation
//! definitions, sharing no code with the engine.

use crate::tensor::{Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct RefTensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl RefTensor {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.numel()],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Self {
            shape: t.shape(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        let s = self.shape;
        ((n * s.c + c) * s.h + y) * s.w + x
    }

    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.idx(n, c, y, x)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Broadcast axes of extent 1 up to `to`.
    pub fn expand(&self, to: Shape) -> Self {
        let s = self.shape;
        let mut out = Self::zeros(to);
        for n in 0..to.n {
            for c in 0..to.c {
                for y in 0..to.h {
                    for x in 0..to.w {
                        let v = self.at(n % s.n, c % s.c, y % s.h, x % s.w);
                        let i = out.idx(n, c, y, x);
                        out.data[i] = v;
                    }
                }
            }
        }
        out
    }

    /// Sum over axes where `to` has extent 1.
    pub fn reduce(&self, to: Shape) -> Self {
        let s = self.shape;
        let mut out = Self::zeros(to);
        for n in 0..s.n {
            for c in 0..s.c {
                for y in 0..s.h {
                    for x in 0..s.w {
                        let i = out.idx(n % to.n, c % to.c, y % to.h, x % to.w);
                        out.data[i] += self.at(n, c, y, x);
                    }
                }
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn reshape(&self, shape: Shape) -> Self {
        assert_eq!(shape.numel(), self.data.len());
        Self {
            shape,
            data: self.data.clone(),
        }
    }

    pub fn crop(&self, c0: usize, cl: usize, top: usize, h: usize, left: usize, w: usize) -> Self {
        let mut out = Self::zeros(Shape::new(self.shape.n, cl, h, w));
        for n in 0..self.shape.n {
            for c in 0..cl {
                for y in 0..h {
                    for x in 0..w {
                        let i = out.idx(n, c, y, x);
                        out.data[i] = self.at(n, c0 + c, top + y, left + x);
                    }
                }
            }
        }
        out
    }

    pub fn concat_channels(parts: &[&RefTensor]) -> Self {
        let s0 = parts[0].shape;
        let c: usize = parts.iter().map(|p| p.shape.c).sum();
        let mut out = Self::zeros(Shape::new(s0.n, c, s0.h, s0.w));
        for n in 0..s0.n {
            let mut c_off = 0;
            for p in parts {
                for c in 0..p.shape.c {
                    for y in 0..s0.h {
                        for x in 0..s0.w {
                            let i = out.idx(n, c_off + c, y, x);
                            out.data[i] = p.at(n, c, y, x);
                        }
                    }
                }
                c_off += p.shape.c;
            }
        }
        out
    }
}

pub fn elu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v.exp() - 1.0
    }
}

pub fn elu_slope(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        v.exp()
    }
}

/// Zero padding placed before the data along one axis for output
/// `ceil(n / s)`.
pub fn same_pad(n: usize, k: usize, s: usize, d: usize) -> (usize, usize) {
    let out = n.div_ceil(s);
    let span = (k - 1) * d + 1;
    let total = ((out - 1) * s + span).saturating_sub(n);
    (out, total / 2)
}

/// Cross-correlation with zero padding; `w` is `(C_out, C_in, kh, kw)`.
pub fn conv2d(
    x: &RefTensor,
    w: &RefTensor,
    b: Option<&RefTensor>,
    stride: usize,
    dilation: usize,
    out: (usize, usize),
    pad: (usize, usize),
) -> RefTensor {
    let (xs, ws) = (x.shape, w.shape);
    let mut y = RefTensor::zeros(Shape::new(xs.n, ws.n, out.0, out.1));
    for n in 0..xs.n {
        for co in 0..ws.n {
            for oy in 0..out.0 {
                for ox in 0..out.1 {
                    let mut acc = b.map_or(0.0, |b| b.data[co]);
                    for ci in 0..ws.c {
                        for ky in 0..ws.h {
                            for kx in 0..ws.w {
                                let iy = (oy * stride + ky * dilation) as isize - pad.0 as isize;
                                let ix = (ox * stride + kx * dilation) as isize - pad.1 as isize;
                                if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                                    continue;
                                }
                                acc += x.at(n, ci, iy as usize, ix as usize) * w.at(co, ci, ky, kx);
                            }
                        }
                    }
                    let i = y.idx(n, co, oy, ox);
                    y.data[i] = acc;
                }
            }
        }
    }
    y
}

pub fn conv2d_same(x: &RefTensor, w: &RefTensor, b: Option<&RefTensor>, stride: usize, dilation: usize) -> RefTensor {
    let (oh, ph) = same_pad(x.shape.h, w.shape.h, stride, dilation);
    let (ow, pw) = same_pad(x.shape.w, w.shape.w, stride, dilation);
    conv2d(x, w, b, stride, dilation, (oh, ow), (ph, pw))
}

/// Adjoint of [`conv2d`] with respect to its input: scatter-add of every
/// input value times the kernel.
pub fn conv2d_input_adjoint(
    g: &RefTensor,
    w: &RefTensor,
    stride: usize,
    dilation: usize,
    input: Shape,
    pad: (usize, usize),
) -> RefTensor {
    let ws = w.shape;
    let mut dx = RefTensor::zeros(input);
    for n in 0..g.shape.n {
        for co in 0..ws.n {
            for oy in 0..g.shape.h {
                for ox in 0..g.shape.w {
                    let gv = g.at(n, co, oy, ox);
                    for ci in 0..ws.c {
                        for ky in 0..ws.h {
                            for kx in 0..ws.w {
                                let iy = (oy * stride + ky * dilation) as isize - pad.0 as isize;
                                let ix = (ox * stride + kx * dilation) as isize - pad.1 as isize;
                                if iy < 0 || ix < 0 || iy >= input.h as isize || ix >= input.w as isize {
                                    continue;
                                }
                                let i = dx.idx(n, ci, iy as usize, ix as usize);
                                dx.data[i] += gv * w.at(co, ci, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Transposed convolution by scatter: input pixel `(iy, ix)` adds
/// `x * w[ci, co, ky, kx]` at `(iy*s + ky - p, ix*s + kx - p)` with
/// `p = (k - s) / 2` and output size `input * s`.
pub fn conv2d_transpose(x: &RefTensor, w: &RefTensor, b: Option<&RefTensor>, stride: usize) -> RefTensor {
    let (xs, ws) = (x.shape, w.shape);
    let (ph, pw) = (ws.h.saturating_sub(stride) / 2, ws.w.saturating_sub(stride) / 2);
    let (oh, ow) = (xs.h * stride, xs.w * stride);
    let mut y = RefTensor::zeros(Shape::new(xs.n, ws.c, oh, ow));
    for n in 0..xs.n {
        for ci in 0..xs.c {
            for iy in 0..xs.h {
                for ix in 0..xs.w {
                    let v = x.at(n, ci, iy, ix);
                    for co in 0..ws.c {
                        for ky in 0..ws.h {
                            for kx in 0..ws.w {
                                let oy = (iy * stride + ky) as isize - ph as isize;
                                let ox = (ix * stride + kx) as isize - pw as isize;
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                let i = y.idx(n, co, oy as usize, ox as usize);
                                y.data[i] += v * w.at(ci, co, ky, kx);
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(b) = b {
        for n in 0..xs.n {
            for co in 0..ws.c {
                for p in 0..oh * ow {
                    y.data[(n * ws.c + co) * oh * ow + p] += b.data[co];
                }
            }
        }
    }
    y
}

/// `(N, D_in)` times `(D_out, D_in)` transposed, plus bias.
pub fn fully_connected(x: &RefTensor, w: &RefTensor, b: Option<&RefTensor>) -> RefTensor {
    let n = x.shape.n;
    let din = x.shape.sample_len();
    let dout = w.shape.n;
    let mut y = RefTensor::zeros(Shape::new(n, dout, 1, 1));
    for i in 0..n {
        for o in 0..dout {
            let mut acc = b.map_or(0.0, |b| b.data[o]);
            for k in 0..din {
                acc += x.data[i * din + k] * w.data[o * din + k];
            }
            y.data[i * dout + o] = acc;
        }
    }
    y
}

/// `op(A) op(B)` with each operand viewed as `(N, C*H*W)`.
pub fn matmul(a: &RefTensor, ta: bool, b: &RefTensor, tb: bool) -> RefTensor {
    let (ar, ac) = (a.shape.n, a.shape.sample_len());
    let (br, bc) = (b.shape.n, b.shape.sample_len());
    let get_a = |i: usize, k: usize| if ta { a.data[k * ac + i] } else { a.data[i * ac + k] };
    let get_b = |k: usize, j: usize| if tb { b.data[j * bc + k] } else { b.data[k * bc + j] };
    let (m, kk) = if ta { (ac, ar) } else { (ar, ac) };
    let p = if tb { br } else { bc };
    let mut y = RefTensor::zeros(Shape::new(m, p, 1, 1));
    for i in 0..m {
        for j in 0..p {
            y.data[i * p + j] = (0..kk).map(|k| get_a(i, k) * get_b(k, j)).sum();
        }
    }
    y
}
