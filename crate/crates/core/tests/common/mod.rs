//! Oracles shared by several test targets.

use plural_inpaint::losses::kl_divergence;
use plural_inpaint::tensor::{Shape, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

pub const SAMPLES: usize = 1_000_000;

/// One draw per equal-probability stratum of the standard normal.
pub fn monte_carlo_kl(mu: f64, logvar: f64, rng: &mut ChaCha8Rng) -> f64 {
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let sigma = (0.5 * logvar).exp();
    let mut acc = 0.0;
    for i in 0..SAMPLES {
        let p = (i as f64 + rng.random::<f64>()) / SAMPLES as f64;
        let eps = std_normal.inverse_cdf(p);
        let z = mu + sigma * eps;
        // log q(z) - log p(z); the normalizing constants cancel
        acc += -0.5 * logvar - 0.5 * eps * eps + 0.5 * z * z;
    }
    acc / SAMPLES as f64
}

pub fn closed_form(mu: f32, logvar: f32) -> f64 {
    let t = |v: f32| Tensor::new(Shape::new(1, 1, 1, 1), vec![v]).unwrap();
    kl_divergence(&t(mu), &t(logvar)).unwrap().item() as f64
}
