//! Finite-difference gradient checks.
//!
//! Analytic gradients from the engine are compared with central differences
//! (`h = 1e-3`) of independent `f64` forward passes ([`reference`]).
//! Primitives are checked element by element. Networks are checked with
//! random directional derivatives: each trial tests one joint direction over
//! all tensors plus one tensor on its own, so every tensor is probed alone
//! within the trial budget. The critic gradient penalty is checked through
//! a reference input-gradient of the critic, which exercises double
//! backward.

pub mod reference;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::MaskSpec;
use crate::error::Result;
use crate::latent::{reparameterize, LatentSample};
use crate::losses::{consistency_loss, gradient_penalty, kl_divergence};
use crate::nn::{Activation, ConvSpec, CriticNet, DenseSpec, ExtractorNet, GeneratorNet, LayerKind};
use crate::tensor::{conv2d, conv2d_transpose, fully_connected, grad, NetworkParams, Padding, Region, Shape, Tensor};
use reference::RefTensor;

pub const STEP: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-2;
pub const TRIALS: usize = 20;
/// The penalty involves the ELU slope, whose own derivative jumps at zero,
/// so its differences use a smaller step.
pub const PENALTY_STEP: f64 = 1e-5;

/// Outcome of one named check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub trials: usize,
    /// Number of compared derivatives.
    pub comparisons: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub checks: Vec<CheckOutcome>,
    pub elapsed: Duration,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    /// Uniform in `[-1, 1]`.
    Uniform,
    /// Uniform in `[0.2, 1]`.
    Positive,
    /// `|x|` in `[0.05, 1]`, random sign.
    AwayFromZero,
    /// Constant 0/1 mask.
    Mask,
    /// Constant uniform values that receive no gradient.
    Constant,
}

fn random_values(shape: Shape, kind: Kind, rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..shape.numel())
        .map(|_| match kind {
            Kind::Uniform | Kind::Constant => rng.random_range(-1.0..1.0),
            Kind::Positive => rng.random_range(0.2..1.0),
            Kind::AwayFromZero => {
                let m = rng.random_range(0.05..1.0f32);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            }
            Kind::Mask => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    0.0
                }
            }
        })
        .collect()
}

type EngineFn = Box<dyn Fn(&[Tensor]) -> Result<Tensor>>;
type RefFn = Box<dyn Fn(&[RefTensor]) -> RefTensor>;

struct Primitive {
    name: &'static str,
    inputs: Vec<(Shape, Kind)>,
    engine: EngineFn,
    reference: RefFn,
    /// Inputs to resample (for example near a kink).
    reject: Option<fn(&[RefTensor]) -> bool>,
}

fn prim(
    name: &'static str,
    inputs: Vec<(Shape, Kind)>,
    engine: impl Fn(&[Tensor]) -> Result<Tensor> + 'static,
    reference: impl Fn(&[RefTensor]) -> RefTensor + 'static,
) -> Primitive {
    Primitive {
        name,
        inputs,
        engine: Box::new(engine),
        reference: Box::new(reference),
        reject: None,
    }
}

fn sh(n: usize, c: usize, h: usize, w: usize) -> Shape {
    Shape::new(n, c, h, w)
}

fn primitives() -> Vec<Primitive> {
    use reference as r;
    use Kind::*;
    let s = sh(2, 3, 4, 4);
    let mut v = vec![
        prim("add", vec![(s, Uniform), (s, Uniform)], |x| x[0].add(&x[1]), |x| x[0].zip(&x[1], |a, b| a + b)),
        prim("sub", vec![(s, Uniform), (s, Uniform)], |x| x[0].sub(&x[1]), |x| x[0].zip(&x[1], |a, b| a - b)),
        prim("mul", vec![(s, Uniform), (s, Uniform)], |x| x[0].mul(&x[1]), |x| x[0].zip(&x[1], |a, b| a * b)),
        prim("scale", vec![(s, Uniform)], |x| Ok(x[0].scale(-0.7)), |x| x[0].map(|a| -0.7 * a)),
        prim("add_scalar", vec![(s, Uniform)], |x| Ok(x[0].add_scalar(0.3)), |x| x[0].map(|a| a + 0.3)),
        prim("neg", vec![(s, Uniform)], |x| Ok(x[0].neg()), |x| x[0].map(|a| -a)),
        prim("square", vec![(s, Uniform)], |x| Ok(x[0].square()), |x| x[0].map(|a| a * a)),
        prim("exp", vec![(s, Uniform)], |x| Ok(x[0].exp()), |x| x[0].map(f64::exp)),
        prim("tanh", vec![(s, Uniform)], |x| Ok(x[0].tanh()), |x| x[0].map(f64::tanh)),
        prim("elu", vec![(s, Uniform)], |x| Ok(x[0].elu()), |x| x[0].map(r::elu)),
        prim("abs", vec![(s, AwayFromZero)], |x| Ok(x[0].abs()), |x| x[0].map(f64::abs)),
        prim("sqrt", vec![(s, Positive)], |x| Ok(x[0].sqrt()), |x| x[0].map(f64::sqrt)),
        prim(
            "expand",
            vec![(sh(1, 3, 1, 4), Uniform)],
            |x| x[0].expand(sh(2, 3, 5, 4)),
            |x| x[0].expand(sh(2, 3, 5, 4)),
        ),
        prim(
            "reduce_to",
            vec![(s, Uniform)],
            |x| x[0].reduce_to(sh(1, 3, 1, 1)),
            |x| x[0].reduce(sh(1, 3, 1, 1)),
        ),
        prim(
            "sum",
            vec![(s, Uniform)],
            |x| Ok(x[0].sum()),
            |x| RefTensor {
                shape: Shape::scalar(),
                data: vec![x[0].sum()],
            },
        ),
        prim(
            "mean",
            vec![(s, Uniform)],
            |x| Ok(x[0].mean()),
            |x| RefTensor {
                shape: Shape::scalar(),
                data: vec![x[0].sum() / 96.0],
            },
        ),
        prim(
            "sum_per_sample",
            vec![(s, Uniform)],
            |x| Ok(x[0].sum_per_sample()),
            |x| x[0].reduce(sh(2, 1, 1, 1)),
        ),
        prim(
            "reshape",
            vec![(s, Uniform)],
            |x| x[0].reshape(sh(4, 6, 2, 2)),
            |x| x[0].reshape(sh(4, 6, 2, 2)),
        ),
        prim("flatten", vec![(s, Uniform)], |x| Ok(x[0].flatten()), |x| x[0].reshape(sh(2, 48, 1, 1))),
        prim(
            "crop",
            vec![(sh(2, 4, 6, 5), Uniform)],
            |x| {
                x[0].crop(Region {
                    c0: 1,
                    c_len: 2,
                    top: 1,
                    height: 3,
                    left: 2,
                    width: 2,
                })
            },
            |x| x[0].crop(1, 2, 1, 3, 2, 2),
        ),
        prim(
            "concat_channels",
            vec![(sh(2, 1, 3, 3), Uniform), (sh(2, 2, 3, 3), Uniform), (sh(2, 3, 3, 3), Uniform)],
            |x| Tensor::concat_channels(&[&x[0], &x[1], &x[2]]),
            |x| RefTensor::concat_channels(&[&x[0], &x[1], &x[2]]),
        ),
        prim(
            "select",
            vec![(sh(1, 1, 4, 4), Mask), (s, Uniform), (s, Uniform)],
            |x| Tensor::select(&x[0], &x[1], &x[2]),
            |x| {
                let m = x[0].expand(x[1].shape);
                let mut out = x[2].clone();
                for i in 0..out.data.len() {
                    if m.data[i] == 1.0 {
                        out.data[i] = x[1].data[i];
                    }
                }
                out
            },
        ),
        prim(
            "conv2d_stride2_same",
            vec![(sh(2, 3, 8, 8), Uniform), (sh(4, 3, 5, 5), Uniform), (sh(1, 4, 1, 1), Uniform)],
            |x| conv2d(&x[0], &x[1], Some(&x[2]), (2, 2), (1, 1), Padding::Same),
            |x| r::conv2d_same(&x[0], &x[1], Some(&x[2]), 2, 1),
        ),
        prim(
            "conv2d_dilated_same",
            vec![(sh(2, 2, 7, 6), Uniform), (sh(3, 2, 3, 3), Uniform), (sh(1, 3, 1, 1), Uniform)],
            |x| conv2d(&x[0], &x[1], Some(&x[2]), (1, 1), (2, 2), Padding::Same),
            |x| r::conv2d_same(&x[0], &x[1], Some(&x[2]), 1, 2),
        ),
        prim(
            "conv2d_odd_stride2_same",
            vec![(sh(1, 2, 7, 9), Uniform), (sh(2, 2, 3, 3), Uniform)],
            |x| conv2d(&x[0], &x[1], None, (2, 2), (1, 1), Padding::Same),
            |x| r::conv2d_same(&x[0], &x[1], None, 2, 1),
        ),
        prim(
            "conv2d_valid",
            vec![(sh(2, 2, 6, 5), Uniform), (sh(3, 2, 3, 2), Uniform)],
            |x| conv2d(&x[0], &x[1], None, (1, 1), (1, 1), Padding::Valid),
            |x| r::conv2d(&x[0], &x[1], None, 1, 1, (4, 4), (0, 0)),
        ),
        prim(
            "conv2d_transpose_k4s2",
            vec![(sh(2, 3, 3, 4), Uniform), (sh(3, 2, 4, 4), Uniform), (sh(1, 2, 1, 1), Uniform)],
            |x| conv2d_transpose(&x[0], &x[1], Some(&x[2]), (2, 2)),
            |x| r::conv2d_transpose(&x[0], &x[1], Some(&x[2]), 2),
        ),
        prim(
            "conv2d_transpose_k2s2",
            vec![(sh(1, 2, 3, 3), Uniform), (sh(2, 3, 2, 2), Uniform)],
            |x| conv2d_transpose(&x[0], &x[1], None, (2, 2)),
            |x| r::conv2d_transpose(&x[0], &x[1], None, 2),
        ),
        prim(
            "fully_connected",
            vec![(sh(3, 2, 2, 2), Uniform), (sh(5, 8, 1, 1), Uniform), (sh(1, 5, 1, 1), Uniform)],
            |x| fully_connected(&x[0], &x[1], Some(&x[2])),
            |x| r::fully_connected(&x[0], &x[1], Some(&x[2])),
        ),
        prim(
            "reparameterize",
            vec![(sh(3, 4, 1, 1), Uniform), (sh(3, 4, 1, 1), Uniform), (sh(3, 4, 1, 1), Constant)],
            |x| reparameterize(&LatentSample::new(x[0].clone(), x[1].clone())?, &x[2]),
            |x| {
                let sd = x[1].map(|v| (0.5 * v).exp());
                x[0].zip(&sd.zip(&x[2], |s, e| s * e), |m, n| m + n)
            },
        ),
        prim(
            "kl_divergence",
            vec![(sh(3, 4, 1, 1), Uniform), (sh(3, 4, 1, 1), Uniform)],
            |x| kl_divergence(&x[0], &x[1]),
            |x| {
                let per: f64 = x[0]
                    .data
                    .iter()
                    .zip(&x[1].data)
                    .map(|(m, lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
                    .sum();
                RefTensor {
                    shape: Shape::scalar(),
                    data: vec![per / 3.0],
                }
            },
        ),
    ];
    for ta in [false, true] {
        for tb in [false, true] {
            let (a, b) = match (ta, tb) {
                (false, false) => (sh(3, 4, 1, 1), sh(4, 2, 1, 1)),
                (true, false) => (sh(4, 3, 1, 1), sh(4, 2, 1, 1)),
                (false, true) => (sh(3, 4, 1, 1), sh(2, 4, 1, 1)),
                (true, true) => (sh(4, 3, 1, 1), sh(2, 4, 1, 1)),
            };
            let name = match (ta, tb) {
                (false, false) => "matmul",
                (true, false) => "matmul_ta",
                (false, true) => "matmul_tb",
                (true, true) => "matmul_ta_tb",
            };
            v.push(prim(
                name,
                vec![(a, Uniform), (b, Uniform)],
                move |x| Tensor::matmul(&x[0], ta, &x[1], tb),
                move |x| reference::matmul(&x[0], ta, &x[1], tb),
            ));
        }
    }
    let mut l1 = prim(
        "consistency_loss",
        vec![(s, Uniform), (s, Uniform)],
        |x| consistency_loss(&x[0], &x[1]),
        |x| RefTensor {
            shape: Shape::scalar(),
            data: vec![x[0].zip(&x[1], |a, b| (a - b).abs()).sum() / 96.0],
        },
    );
    l1.reject = Some(|x| x[0].data.iter().zip(&x[1].data).any(|(a, b)| (a - b).abs() < 0.01));
    v.push(l1);
    v
}

/// Weighted-sum loss `sum(out * r)` of a reference output.
fn ref_loss(outs: &[RefTensor], weights: &[RefTensor]) -> f64 {
    outs.iter()
        .zip(weights)
        .map(|(o, w)| o.data.iter().zip(&w.data).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

fn engine_loss(outs: &[Tensor], weights: &[Tensor]) -> Result<Tensor> {
    let mut total: Option<Tensor> = None;
    for (o, w) in outs.iter().zip(weights) {
        let term = o.mul(w)?.sum();
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    Ok(total.expect("at least one output"))
}

fn random_like(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(shape, random_values(shape, Kind::Uniform, rng)).expect("finite")
}

fn check_primitive(p: &Primitive, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err: f64 = 0.0;
    let mut comparisons = 0;
    for _ in 0..TRIALS {
        let (tensors, refs) = loop {
            let mut tensors = Vec::new();
            for &(shape, kind) in &p.inputs {
                let vals = random_values(shape, kind, &mut rng);
                tensors.push(match kind {
                    Kind::Mask | Kind::Constant => Tensor::new(shape, vals)?,
                    _ => Tensor::param(shape, vals)?,
                });
            }
            let refs: Vec<RefTensor> = tensors.iter().map(RefTensor::from_tensor).collect();
            if p.reject.is_none_or(|rej| !rej(&refs)) {
                break (tensors, refs);
            }
        };
        let out = (p.engine)(&tensors)?;
        let w = random_like(out.shape(), &mut rng);
        let rw = [RefTensor::from_tensor(&w)];
        let loss = engine_loss(&[out], std::slice::from_ref(&w))?;
        let diff: Vec<&Tensor> = tensors.iter().filter(|t| t.requires_grad()).collect();
        let grads = grad(&loss, &diff, false)?;
        let mut gi = 0;
        for (i, t) in tensors.iter().enumerate() {
            if !t.requires_grad() {
                continue;
            }
            let analytic: Vec<f64> = grads[gi].data().iter().map(|&v| v as f64).collect();
            gi += 1;
            let mut numeric = vec![0.0; analytic.len()];
            for (j, num) in numeric.iter_mut().enumerate() {
                let mut probe = refs.clone();
                probe[i].data[j] = refs[i].data[j] + STEP;
                let up = ref_loss(&[(p.reference)(&probe)], &rw);
                probe[i].data[j] = refs[i].data[j] - STEP;
                let down = ref_loss(&[(p.reference)(&probe)], &rw);
                *num = (up - down) / (2.0 * STEP);
            }
            let floor = 1e-3 * numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1e-12;
            for (a, n) in analytic.iter().zip(&numeric) {
                max_err = max_err.max(relative_error(*a, *n, floor));
                comparisons += 1;
            }
        }
    }
    Ok(CheckOutcome {
        name: p.name.to_string(),
        trials: TRIALS,
        comparisons,
        max_rel_err: max_err,
        passed: max_err <= TOLERANCE,
    })
}

type RefMap = BTreeMap<String, RefTensor>;

fn ref_layer(spec: &ConvSpec, p: &RefMap, x: &RefTensor) -> RefTensor {
    let w = &p[&format!("{}.weight", spec.name)];
    let b = &p[&format!("{}.bias", spec.name)];
    let y = match spec.kind {
        LayerKind::Conv => reference::conv2d_same(x, w, Some(b), spec.stride, spec.dilation),
        LayerKind::Transposed => reference::conv2d_transpose(x, w, Some(b), spec.stride),
    };
    match spec.activation {
        Activation::Elu => y.map(reference::elu),
        Activation::Tanh => y.map(f64::tanh),
        Activation::Identity => y,
    }
}

fn ref_dense(spec: &DenseSpec, p: &RefMap, x: &RefTensor) -> RefTensor {
    let w = &p[&format!("{}.weight", spec.name)];
    let b = &p[&format!("{}.bias", spec.name)];
    reference::fully_connected(x, w, Some(b))
}

fn flatten_ref(x: &RefTensor) -> RefTensor {
    x.reshape(Shape::new(x.shape.n, x.shape.sample_len(), 1, 1))
}

/// A network under test: named tensors (parameters and differentiable
/// inputs), an engine forward and a reference forward over the same names.
struct NetCase {
    name: String,
    tensors: Vec<(String, Tensor)>,
    engine: Box<dyn Fn() -> Result<Vec<Tensor>>>,
    reference: Box<dyn Fn(&RefMap) -> Vec<RefTensor>>,
    step: f64,
}

fn check_network(make: &dyn Fn(&mut ChaCha8Rng) -> Result<NetCase>, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err: f64 = 0.0;
    let mut comparisons = 0;
    let mut name = String::new();
    for trial in 0..TRIALS {
        let case = make(&mut rng)?;
        name = case.name.clone();
        let outs = (case.engine)()?;
        let weights: Vec<Tensor> = outs.iter().map(|o| random_like(o.shape(), &mut rng)).collect();
        let rw: Vec<RefTensor> = weights.iter().map(RefTensor::from_tensor).collect();
        let loss = engine_loss(&outs, &weights)?;
        let handles: Vec<&Tensor> = case.tensors.iter().map(|(_, t)| t).collect();
        let grads = grad(&loss, &handles, false)?;
        let base: RefMap = case
            .tensors
            .iter()
            .map(|(n, t)| (n.clone(), RefTensor::from_tensor(t)))
            .collect();
        let directions: Vec<RefTensor> = case
            .tensors
            .iter()
            .map(|(_, t)| {
                // unit norm per tensor keeps the step inside the linear regime
                let d = RefTensor::from_tensor(&random_like(t.shape(), &mut rng));
                let norm = d.data.iter().map(|v| v * v).sum::<f64>().sqrt();
                d.map(|v| v / norm)
            })
            .collect();
        let single = trial % case.tensors.len();
        // joint direction over every tensor, then one tensor alone
        for subset in [None, Some(single)] {
            let chosen = |i: usize| subset.is_none_or(|s| s == i);
            let analytic: f64 = grads
                .iter()
                .zip(&directions)
                .enumerate()
                .filter(|(i, _)| chosen(*i))
                .map(|(_, (g, d))| g.data().iter().zip(&d.data).map(|(a, b)| *a as f64 * b).sum::<f64>())
                .sum();
            let eval = |sign: f64| {
                let mut probe = base.clone();
                for (i, (n, _)) in case.tensors.iter().enumerate() {
                    if chosen(i) {
                        let t = probe.get_mut(n).expect("named tensor");
                        for (v, d) in t.data.iter_mut().zip(&directions[i].data) {
                            *v += sign * case.step * d;
                        }
                    }
                }
                ref_loss(&(case.reference)(&probe), &rw)
            };
            let numeric = (eval(1.0) - eval(-1.0)) / (2.0 * case.step);
            max_err = max_err.max(relative_error(analytic, numeric, 1e-8));
            comparisons += 1;
        }
    }
    Ok(CheckOutcome {
        name,
        trials: TRIALS,
        comparisons,
        max_rel_err: max_err,
        passed: max_err <= TOLERANCE,
    })
}

fn param_entries(prefix: &str, params: &NetworkParams) -> Vec<(String, Tensor)> {
    params.iter().map(|(n, t)| (format!("{prefix}{n}"), t.clone())).collect()
}

fn strip(map: &RefMap) -> RefMap {
    map.iter()
        .filter_map(|(k, v)| k.strip_prefix("p:").map(|n| (n.to_string(), v.clone())))
        .collect()
}

const RES: (usize, usize) = (16, 16);
const HOLE: usize = 8;
const BATCH: usize = 2;
const LATENT: usize = 8;

fn extractor_case(rng: &mut ChaCha8Rng) -> Result<NetCase> {
    let e = ExtractorNet::new(3, RES, LATENT, rng)?;
    let x = Tensor::param(Shape::new(BATCH, 3, RES.0, RES.1), random_values(Shape::new(BATCH, 3, RES.0, RES.1), Kind::Uniform, rng))?;
    let mut tensors = param_entries("p:", &e.params);
    tensors.push(("x".into(), x.clone()));
    let (convs, (mu, lv)) = (e.conv_layers().to_vec(), e.heads());
    let (mu, lv) = (mu.clone(), lv.clone());
    let e2 = e.clone();
    Ok(NetCase {
        name: "network_extractor".into(),
        tensors,
        engine: Box::new(move || {
            let s = e2.forward(&x)?;
            Ok(vec![s.mu, s.logvar])
        }),
        reference: Box::new(move |m| {
            let p = strip(m);
            let mut h = m["x"].clone();
            for c in &convs {
                h = ref_layer(c, &p, &h);
            }
            let f = flatten_ref(&h);
            vec![ref_dense(&mu, &p, &f), ref_dense(&lv, &p, &f)]
        }),
        step: STEP,
    })
}

fn generator_case(rng: &mut ChaCha8Rng) -> Result<NetCase> {
    let g = GeneratorNet::new(3, LATENT, 8, rng)?;
    let shape = Shape::new(BATCH, 3, RES.0, RES.1);
    let zshape = Shape::new(BATCH, LATENT, RES.0, RES.1);
    let img = Tensor::param(shape, random_values(shape, Kind::Uniform, rng))?;
    let z = Tensor::param(zshape, random_values(zshape, Kind::Uniform, rng))?;
    let mask = MaskSpec::center(RES.0, RES.1, HOLE, HOLE)?.tensor();
    let mut tensors = param_entries("p:", &g.params);
    tensors.push(("img".into(), img.clone()));
    tensors.push(("z".into(), z.clone()));
    let layers = g.layers().to_vec();
    let ref_mask = RefTensor::from_tensor(&mask).expand(Shape::new(BATCH, 1, RES.0, RES.1));
    let g2 = g.clone();
    Ok(NetCase {
        name: "network_generator".into(),
        tensors,
        engine: Box::new(move || Ok(vec![g2.forward(&img, &mask, &z)?])),
        reference: Box::new(move |m| {
            let p = strip(m);
            let mut h = RefTensor::concat_channels(&[&m["img"], &ref_mask, &m["z"]]);
            for l in &layers {
                h = ref_layer(l, &p, &h);
            }
            vec![h]
        }),
        step: STEP,
    })
}

fn ref_critic(convs: &[ConvSpec], head: &DenseSpec, p: &RefMap, x: &RefTensor) -> RefTensor {
    let mut h = x.clone();
    for c in convs {
        h = ref_layer(c, p, &h);
    }
    ref_dense(head, p, &flatten_ref(&h))
}

fn critic_case(rng: &mut ChaCha8Rng, local: bool) -> Result<NetCase> {
    let (input, depth, name) = if local {
        ((HOLE, HOLE), crate::nn::LOCAL_CRITIC_LAYERS, "network_critic_local")
    } else {
        (RES, crate::nn::GLOBAL_CRITIC_LAYERS, "network_critic_global")
    };
    let d = CriticNet::new(3, input, depth, 8, rng)?;
    let shape = Shape::new(BATCH, 3, input.0, input.1);
    let x = Tensor::param(shape, random_values(shape, Kind::Uniform, rng))?;
    let mut tensors = param_entries("p:", &d.params);
    tensors.push(("x".into(), x.clone()));
    let (convs, head) = (d.conv_layers().to_vec(), d.head().clone());
    Ok(NetCase {
        name: name.into(),
        tensors,
        engine: Box::new(move || Ok(vec![d.forward(&x)?])),
        reference: Box::new(move |m| vec![ref_critic(&convs, &head, &strip(m), &m["x"])]),
        step: STEP,
    })
}

/// Reference input gradient of the summed critic scores.
fn ref_critic_input_grad(convs: &[ConvSpec], head: &DenseSpec, p: &RefMap, x: &RefTensor) -> RefTensor {
    let mut pre = Vec::new();
    let mut ins = Vec::new();
    let mut h = x.clone();
    for c in convs {
        let w = &p[&format!("{}.weight", c.name)];
        let b = &p[&format!("{}.bias", c.name)];
        let y = reference::conv2d_same(&h, w, Some(b), c.stride, c.dilation);
        ins.push(h);
        h = y.map(reference::elu);
        pre.push(y);
    }
    // d(sum of scores)/d(last activation): every sample gets the head row
    let hw = &p[&format!("{}.weight", head.name)];
    let mut g = RefTensor::zeros(h.shape);
    let per = h.shape.sample_len();
    for n in 0..h.shape.n {
        g.data[n * per..(n + 1) * per].copy_from_slice(&hw.data[..per]);
    }
    for (i, c) in convs.iter().enumerate().rev() {
        let gp = g.zip(&pre[i], |gv, z| gv * reference::elu_slope(z));
        let w = &p[&format!("{}.weight", c.name)];
        let (_, ph) = reference::same_pad(ins[i].shape.h, c.kernel, c.stride, c.dilation);
        let (_, pw) = reference::same_pad(ins[i].shape.w, c.kernel, c.stride, c.dilation);
        g = reference::conv2d_input_adjoint(&gp, w, c.stride, c.dilation, ins[i].shape, (ph, pw));
    }
    g
}

/// Penalty as a function of the critic parameters, through double backward.
fn penalty_case(rng: &mut ChaCha8Rng, local: bool) -> Result<NetCase> {
    let spec = MaskSpec::center(RES.0, RES.1, HOLE, HOLE)?;
    let (input, depth, name) = if local {
        ((HOLE, HOLE), crate::nn::LOCAL_CRITIC_LAYERS, "gradient_penalty_local_masked")
    } else {
        (RES, crate::nn::GLOBAL_CRITIC_LAYERS, "gradient_penalty_global")
    };
    let d = CriticNet::new(3, input, depth, 8, rng)?;
    let shape = Shape::new(BATCH, 3, RES.0, RES.1);
    let real = Tensor::new(shape, random_values(shape, Kind::Uniform, rng))?;
    let fake = Tensor::new(shape, random_values(shape, Kind::Uniform, rng))?;
    let uv: Vec<f32> = (0..BATCH).map(|_| rng.random::<f32>()).collect();
    let u = Tensor::new(Shape::new(BATCH, 1, 1, 1), uv.clone())?;
    let tensors = param_entries("p:", &d.params);
    let (convs, head) = (d.conv_layers().to_vec(), d.head().clone());
    let region = spec.region(3);
    let mask = spec.tensor();
    let (rr, rf) = (RefTensor::from_tensor(&real), RefTensor::from_tensor(&fake));
    let rmask = RefTensor::from_tensor(&mask);
    Ok(NetCase {
        name: name.into(),
        tensors,
        engine: Box::new(move || {
            let p = if local {
                gradient_penalty(|x: &Tensor| d.forward(&x.crop(region)?), &real, &fake, &u, Some(&mask))?
            } else {
                gradient_penalty(|x: &Tensor| d.forward(x), &real, &fake, &u, None)?
            };
            Ok(vec![p])
        }),
        reference: Box::new(move |m| {
            let p = strip(m);
            let mut mixed = rr.clone();
            let per = shape.sample_len();
            for n in 0..BATCH {
                let un = uv[n] as f64;
                for i in n * per..(n + 1) * per {
                    mixed.data[i] = un * rr.data[i] + (1.0 - un) * rf.data[i];
                }
            }
            let g_full = if local {
                let top = (RES.0 - HOLE) / 2;
                let left = (RES.1 - HOLE) / 2;
                let crop = mixed.crop(0, 3, top, HOLE, left, HOLE);
                let gc = ref_critic_input_grad(&convs, &head, &p, &crop);
                let mut full = RefTensor::zeros(shape);
                for n in 0..BATCH {
                    for c in 0..3 {
                        for y in 0..HOLE {
                            for x in 0..HOLE {
                                let i = ((n * 3 + c) * RES.0 + top + y) * RES.1 + left + x;
                                full.data[i] = gc.at(n, c, y, x);
                            }
                        }
                    }
                }
                full.zip(&rmask.expand(shape), |g, mv| g * (1.0 - mv))
            } else {
                ref_critic_input_grad(&convs, &head, &p, &mixed)
            };
            let pen: f64 = (0..BATCH)
                .map(|n| {
                    let norm = g_full.data[n * per..(n + 1) * per].iter().map(|v| v * v).sum::<f64>().sqrt();
                    (norm - 1.0).powi(2)
                })
                .sum::<f64>()
                / BATCH as f64;
            vec![RefTensor {
                shape: Shape::scalar(),
                data: vec![pen],
            }]
        }),
        step: PENALTY_STEP,
    })
}

/// Run the whole suite. Every check draws from its own stream of `seed`.
pub fn run_gradcheck(seed: u64) -> Result<GradcheckReport> {
    let start = Instant::now();
    let mut checks = Vec::new();
    for (i, p) in primitives().iter().enumerate() {
        checks.push(check_primitive(p, seed.wrapping_add(i as u64 * 7919))?);
    }
    type Maker = fn(&mut ChaCha8Rng) -> Result<NetCase>;
    let nets: [Maker; 6] = [
        extractor_case,
        generator_case,
        |r| critic_case(r, false),
        |r| critic_case(r, true),
        |r| penalty_case(r, false),
        |r| penalty_case(r, true),
    ];
    for (i, make) in nets.iter().enumerate() {
        checks.push(check_network(make, seed.wrapping_add(1_000_003 * (i as u64 + 1)))?);
    }
    Ok(GradcheckReport {
        checks,
        elapsed: start.elapsed(),
    })
}
