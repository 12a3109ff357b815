//! Training objectives: closed-form KL, L1 consistency, Wasserstein critic
//! and generator terms with (optionally masked) gradient penalty, and the
//! weighted total.

use crate::error::{Error, Result};
use crate::latent::LatentSample;
use crate::tensor::{grad, Shape, Tensor};

/// Trade-off weights of the total objective and the penalty coefficient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha_kl: f32,
    /// Consistency weight (also called the reconstruction weight).
    pub alpha_c: f32,
    pub alpha_adv: f32,
    pub lambda: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_kl: 10.0,
            alpha_c: 0.9,
            alpha_adv: 1.0,
            lambda: 10.0,
        }
    }
}

/// The six terms of the weighted objective.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub kl_e: f32,
    pub kl_g: f32,
    pub cons_e: f32,
    pub cons_g: f32,
    pub adv_global: f32,
    pub adv_local: f32,
}

impl LossParts {
    pub fn named(&self) -> [(&'static str, f32); 6] {
        [
            ("kl_e", self.kl_e),
            ("kl_g", self.kl_g),
            ("cons_e", self.cons_e),
            ("cons_g", self.cons_g),
            ("adv_global", self.adv_global),
            ("adv_local", self.adv_local),
        ]
    }
}

/// Per-iteration record written to the loss log.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub iteration: u64,
    pub parts: LossParts,
    /// `L1(mu(E(I_cf)), z)`; optimized alongside, not part of `total`.
    pub latent_cons: f32,
    pub total: f32,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "iteration,kl_e,kl_g,cons_e,cons_g,latent_cons,adv_global,adv_local,total";

    pub fn csv_row(&self) -> String {
        let p = &self.parts;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.iteration, p.kl_e, p.kl_g, p.cons_e, p.cons_g, self.latent_cons, p.adv_global, p.adv_local, self.total
        )
    }

    /// First non-finite term, by CSV column name.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.parts
            .named()
            .into_iter()
            .chain([("latent_cons", self.latent_cons), ("total", self.total)])
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }
}

/// `alpha_kl (kl_e + kl_g) + alpha_c (cons_e + cons_g) + alpha_adv (adv_global + adv_local)`.
pub fn total_objective(parts: &LossParts, weights: &LossWeights) -> Result<f32> {
    if let Some((name, _)) = parts.named().into_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: format!("loss term {name}"),
        });
    }
    Ok(weights.alpha_kl * (parts.kl_e + parts.kl_g)
        + weights.alpha_c * (parts.cons_e + parts.cons_g)
        + weights.alpha_adv * (parts.adv_global + parts.adv_local))
}

/// Batch mean of `-1/2 sum_j (1 + logvar_j - mu_j^2 - exp(logvar_j))`, the
/// divergence from the posterior to a standard normal.
pub fn kl_divergence(mu: &Tensor, logvar: &Tensor) -> Result<Tensor> {
    if mu.shape() != logvar.shape() {
        return Err(Error::ShapeMismatch {
            op: "kl_divergence",
            left: mu.shape(),
            right: logvar.shape(),
        });
    }
    mu.check_finite("kl_divergence mu")?;
    logvar.check_finite("kl_divergence logvar")?;
    // per element: exp(lv) - 1 - lv + mu^2
    let inner = logvar.exp().sub(logvar)?.add(&mu.square())?.add_scalar(-1.0);
    Ok(inner.sum().scale(0.5 / mu.shape().n as f32))
}

pub fn kl_of(sample: &LatentSample) -> Result<Tensor> {
    kl_divergence(&sample.mu, &sample.logvar)
}

/// Mean absolute difference over all elements.
pub fn consistency_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    mean_abs("consistency_loss", a, b)
}

/// Mean absolute difference between a recovered and a drawn code.
pub fn latent_consistency_loss(z_f: &Tensor, z: &Tensor) -> Result<Tensor> {
    mean_abs("latent_consistency_loss", z_f, z)
}

fn mean_abs(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(a.sub(b)?.abs().mean())
}

fn check_scores(op: &'static str, scores: &Tensor, n: usize) -> Result<()> {
    if scores.shape() != Shape::new(n, 1, 1, 1) {
        return Err(Error::invalid(
            op,
            format!("critic must return one score per sample (N, 1, 1, 1), got {:?}", scores.shape()),
        ));
    }
    Ok(())
}

/// Batch mean of `(||g|| - 1)^2` with `g` the critic's input gradient at
/// `u * real + (1 - u) * fake`. With a mask, `g` is multiplied by `1 - mask`
/// first so only hole pixels count. `u` holds one coefficient per sample,
/// shape `(N, 1, 1, 1)`.
///
/// The result stays differentiable with respect to the critic parameters.
pub fn gradient_penalty<F>(critic: F, real: &Tensor, fake: &Tensor, u: &Tensor, mask: Option<&Tensor>) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let s = real.shape();
    if fake.shape() != s {
        return Err(Error::ShapeMismatch {
            op: "gradient_penalty",
            left: s,
            right: fake.shape(),
        });
    }
    if u.shape() != Shape::new(s.n, 1, 1, 1) {
        return Err(Error::ShapeMismatch {
            op: "gradient_penalty",
            left: Shape::new(s.n, 1, 1, 1),
            right: u.shape(),
        });
    }
    let uu = u.detach().expand(s)?;
    let mixed = uu.mul(&real.detach())?.add(&uu.neg().add_scalar(1.0).mul(&fake.detach())?)?;
    let x_hat = Tensor::param(s, mixed.to_vec())?;
    let scores = critic(&x_hat)?;
    check_scores("gradient_penalty", &scores, s.n)?;
    let g = if scores.requires_grad() {
        grad(&scores.sum(), &[&x_hat], true)?.remove(0)
    } else {
        Tensor::zeros(s)
    };
    let g = match mask {
        Some(m) => {
            let keep = m.detach().neg().add_scalar(1.0).expand(s)?;
            g.mul(&keep)?
        }
        None => g,
    };
    let norm = g.square().sum_per_sample().sqrt();
    Ok(norm.add_scalar(-1.0).square().mean())
}

/// Terms of a critic objective.
#[derive(Clone, Debug)]
pub struct CriticLoss {
    /// `E[D(fake)] - E[D(real)]`.
    pub wasserstein: Tensor,
    pub penalty: Tensor,
    /// `wasserstein + lambda * penalty`, minimized by the critic.
    pub total: Tensor,
}

pub fn critic_loss<F>(
    critic: F,
    real: &Tensor,
    fake: &Tensor,
    u: &Tensor,
    mask: Option<&Tensor>,
    lambda: f32,
) -> Result<CriticLoss>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let n = real.shape().n;
    let d_real = critic(&real.detach())?;
    check_scores("critic_loss", &d_real, n)?;
    let d_fake = critic(&fake.detach())?;
    check_scores("critic_loss", &d_fake, n)?;
    let wasserstein = d_fake.mean().sub(&d_real.mean())?;
    let penalty = gradient_penalty(&critic, real, fake, u, mask)?;
    let total = wasserstein.add(&penalty.scale(lambda))?;
    Ok(CriticLoss {
        wasserstein,
        penalty,
        total,
    })
}

/// `-E[D(fake)]`.
pub fn generator_adv_loss<F>(critic: F, fake: &Tensor) -> Result<Tensor>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let scores = critic(fake)?;
    check_scores("generator_adv_loss", &scores, fake.shape().n)?;
    Ok(scores.mean().neg())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn col(v: &[f32]) -> Tensor {
        Tensor::new(Shape::new(1, v.len(), 1, 1), v.to_vec()).unwrap()
    }

    fn random(shape: Shape, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(shape, (0..shape.numel()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// `D(x) = sum(w * x)` per sample.
    fn linear(w: Tensor) -> impl Fn(&Tensor) -> Result<Tensor> {
        move |x: &Tensor| Ok(x.mul(&w.expand(x.shape())?)?.sum_per_sample())
    }

    #[test]
    fn kl_closed_form_values() {
        assert_eq!(kl_divergence(&col(&[0.0]), &col(&[0.0])).unwrap().item(), 0.0);
        assert!((kl_divergence(&col(&[1.0]), &col(&[0.0])).unwrap().item() - 0.5).abs() < 1e-7);
        let want = 0.5 * (2.0 - 1.0 - 2f64.ln());
        let got = kl_divergence(&col(&[0.0]), &col(&[2f32.ln()])).unwrap().item() as f64;
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        assert!((want - 0.1534).abs() < 1e-4);
    }

    #[test]
    fn kl_sums_dims_and_averages_batch() {
        let mu = Tensor::new(Shape::new(2, 2, 1, 1), vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let lv = Tensor::zeros(Shape::new(2, 2, 1, 1));
        // per sample: 1.0 and 0.0
        assert!((kl_divergence(&mu, &lv).unwrap().item() - 0.5).abs() < 1e-7);
    }

    #[test]
    fn kl_rejects_bad_input() {
        assert!(kl_divergence(&col(&[0.0]), &col(&[0.0, 1.0])).is_err());
    }

    #[test]
    fn kl_gradient_is_closed_form() {
        let mu = Tensor::param(Shape::new(1, 2, 1, 1), vec![0.5, -1.0]).unwrap();
        let lv = Tensor::param(Shape::new(1, 2, 1, 1), vec![0.3, -0.2]).unwrap();
        let g = grad(&kl_divergence(&mu, &lv).unwrap(), &[&mu, &lv], false).unwrap();
        assert_eq!(g[0].to_vec(), vec![0.5, -1.0]);
        for (got, lv) in g[1].to_vec().iter().zip([0.3f32, -0.2]) {
            assert!((got - 0.5 * (lv.exp() - 1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn total_objective_weights() {
        let w = LossWeights::default();
        assert_eq!(total_objective(&LossParts::default(), &w).unwrap(), 0.0);
        let ones = LossParts {
            kl_e: 1.0,
            kl_g: 1.0,
            cons_e: 1.0,
            cons_g: 1.0,
            adv_global: 1.0,
            adv_local: 1.0,
        };
        assert!((total_objective(&ones, &w).unwrap() - 23.8).abs() < 1e-5);
        let bad = LossParts {
            cons_g: f32::NAN,
            ..ones
        };
        assert!(total_objective(&bad, &w).is_err());
    }

    #[test]
    fn consistency_cases() {
        let a = random(Shape::new(2, 3, 4, 4), 1);
        assert_eq!(consistency_loss(&a, &a).unwrap().item(), 0.0);
        let b = a.add_scalar(0.25);
        assert!((consistency_loss(&b, &a).unwrap().item() - 0.25).abs() < 1e-6);
        let c = random(Shape::new(2, 3, 4, 4), 2);
        let want: f64 = a
            .to_vec()
            .iter()
            .zip(c.to_vec())
            .map(|(x, y)| (*x as f64 - y as f64).abs())
            .sum::<f64>()
            / 96.0;
        assert!((consistency_loss(&a, &c).unwrap().item() as f64 - want).abs() < 1e-6);
        assert!(consistency_loss(&a, &random(Shape::new(1, 3, 4, 4), 3)).is_err());
        let z = random(Shape::new(3, 8, 1, 1), 4);
        assert_eq!(latent_consistency_loss(&z, &z).unwrap().item(), 0.0);
        assert!(latent_consistency_loss(&z, &random(Shape::new(3, 4, 1, 1), 5)).is_err());
    }

    #[test]
    fn penalty_of_sum_critic() {
        let s = Shape::new(2, 1, 3, 3);
        let (real, fake) = (random(s, 1), random(s, 2));
        let u = Tensor::new(Shape::new(2, 1, 1, 1), vec![0.3, 0.8]).unwrap();
        let p = gradient_penalty(|x: &Tensor| Ok(x.sum_per_sample()), &real, &fake, &u, None).unwrap();
        let want = (9f32.sqrt() - 1.0).powi(2);
        assert!((p.item() - want).abs() < 1e-5);
    }

    #[test]
    fn penalty_of_constant_critic_is_one() {
        let s = Shape::new(2, 3, 4, 4);
        let u = Tensor::full(Shape::new(2, 1, 1, 1), 0.5);
        let c = |x: &Tensor| Ok(Tensor::full(Shape::new(x.shape().n, 1, 1, 1), 3.0));
        let p = gradient_penalty(c, &random(s, 1), &random(s, 2), &u, None).unwrap();
        assert_eq!(p.item(), 1.0);
    }

    #[test]
    fn penalty_of_unit_linear_critic_vanishes() {
        let s = Shape::new(1, 2, 3, 3);
        let w = random(s, 7);
        let norm = w.to_vec().iter().map(|v| v * v).sum::<f32>().sqrt();
        let w = w.scale(1.0 / norm);
        let u = Tensor::new(Shape::new(1, 1, 1, 1), vec![0.42]).unwrap();
        let p = gradient_penalty(linear(w), &random(s, 1), &random(s, 2), &u, None).unwrap();
        assert!(p.item() <= 1e-6, "{}", p.item());
    }

    #[test]
    fn masked_penalty_single_hole_pixel() {
        let s = Shape::new(1, 1, 3, 3);
        let mut m = vec![1.0; 9];
        m[4] = 0.0;
        let mask = Tensor::new(s, m).unwrap();
        let inv = mask.neg().add_scalar(1.0);
        let u = Tensor::full(Shape::new(1, 1, 1, 1), 0.5);
        let p = gradient_penalty(linear(inv), &random(s, 1), &random(s, 2), &u, Some(&mask)).unwrap();
        assert!(p.item().abs() < 1e-12);
        // without the mask the sum critic sees all nine pixels
        let p = gradient_penalty(linear(Tensor::ones(s)), &random(s, 1), &random(s, 2), &u, Some(&mask)).unwrap();
        assert!(p.item().abs() < 1e-12);
    }

    #[test]
    fn penalty_rejects_non_scalar_critic() {
        let s = Shape::new(2, 1, 2, 2);
        let u = Tensor::full(Shape::new(2, 1, 1, 1), 0.5);
        assert!(gradient_penalty(|x: &Tensor| Ok(x.clone()), &random(s, 1), &random(s, 2), &u, None).is_err());
        assert!(gradient_penalty(|x: &Tensor| Ok(x.sum()), &random(s, 1), &random(s, 2), &u, None).is_err());
    }

    #[test]
    fn zero_critic_loss_is_pure_penalty() {
        let s = Shape::new(2, 1, 2, 2);
        let u = Tensor::full(Shape::new(2, 1, 1, 1), 0.5);
        let zero = |x: &Tensor| Ok(Tensor::zeros(Shape::new(x.shape().n, 1, 1, 1)));
        let l = critic_loss(zero, &random(s, 1), &random(s, 2), &u, None, 10.0).unwrap();
        assert_eq!(l.total.item(), 10.0);
        assert_eq!(l.wasserstein.item(), 0.0);
    }

    #[test]
    fn linear_critic_loss_closed_form() {
        let s = Shape::new(3, 2, 2, 2);
        let w = random(Shape::new(1, 2, 2, 2), 9);
        let (real, fake) = (random(s, 10), random(s, 11));
        let u = Tensor::new(Shape::new(3, 1, 1, 1), vec![0.1, 0.5, 0.9]).unwrap();
        let l = critic_loss(linear(w.clone()), &real, &fake, &u, None, 10.0).unwrap();

        let wv: Vec<f64> = w.to_vec().iter().map(|&v| v as f64).collect();
        let score = |x: &[f32]| x.iter().zip(&wv).map(|(a, b)| *a as f64 * b).sum::<f64>();
        let mean_score = |t: &Tensor| t.to_vec().chunks(8).map(score).sum::<f64>() / 3.0;
        let norm = wv.iter().map(|v| v * v).sum::<f64>().sqrt();
        let want = mean_score(&fake) - mean_score(&real) + 10.0 * (norm - 1.0).powi(2);
        assert!((l.total.item() as f64 - want).abs() < 1e-5 * want.abs().max(1.0));

        let same = critic_loss(linear(w.clone()), &real, &real, &u, None, 10.0).unwrap();
        assert_eq!(same.wasserstein.item(), 0.0);
    }

    #[test]
    fn penalty_is_differentiable_in_critic_params() {
        let s = Shape::new(2, 1, 2, 2);
        let w = Tensor::param(Shape::new(1, 1, 2, 2), vec![0.5, -0.25, 1.0, 0.75]).unwrap();
        let critic = |x: &Tensor| Ok(x.mul(&w.expand(x.shape())?)?.sum_per_sample());
        let u = Tensor::full(Shape::new(2, 1, 1, 1), 0.5);
        let p = gradient_penalty(critic, &random(s, 1), &random(s, 2), &u, None).unwrap();
        let g = grad(&p, &[&w], false).unwrap().remove(0).to_vec();
        // d/dw (||w|| - 1)^2 = 2 (||w|| - 1) w / ||w||
        let wv = [0.5f32, -0.25, 1.0, 0.75];
        let n = wv.iter().map(|v| v * v).sum::<f32>().sqrt();
        for (gi, wi) in g.iter().zip(wv) {
            assert!((gi - 2.0 * (n - 1.0) * wi / n).abs() < 1e-5);
        }
    }

    #[test]
    fn generator_adv_is_negated_mean() {
        let s = Shape::new(2, 1, 2, 2);
        let x = random(s, 3);
        let l = generator_adv_loss(|x: &Tensor| Ok(x.sum_per_sample()), &x).unwrap();
        let want = -x.to_vec().iter().sum::<f32>() / 2.0;
        assert!((l.item() - want).abs() < 1e-6);
    }

    #[test]
    fn report_row_matches_header() {
        let r = LossReport {
            iteration: 3,
            total: 1.5,
            ..Default::default()
        };
        assert_eq!(r.csv_row().split(',').count(), LossReport::CSV_HEADER.split(',').count());
        assert!(r.csv_row().starts_with("3,"));
        let bad = LossReport {
            latent_cons: f32::INFINITY,
            ..r
        };
        assert_eq!(bad.first_non_finite(), Some("latent_cons"));
    }
}
