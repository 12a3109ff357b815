//! Closed-form KL against a stratified Monte-Carlo estimate of
//! `E_q[log q(z) - log p(z)]` for a one-dimensional Gaussian posterior.

mod common;

use common::{closed_form, monte_carlo_kl};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn closed_form_matches_monte_carlo_on_random_grid() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..25 {
        let mu: f32 = rng.random_range(-2.0..2.0);
        let logvar: f32 = rng.random_range(-2.0..2.0);
        let exact = closed_form(mu, logvar);
        let mc = monte_carlo_kl(mu as f64, logvar as f64, &mut rng);
        let rel = (exact - mc).abs() / mc.abs();
        assert!(rel < 0.01, "mu={mu} logvar={logvar}: closed {exact} vs mc {mc}");
    }
}

#[test]
fn documented_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    assert_eq!(closed_form(0.0, 0.0), 0.0);
    let unit_shift = closed_form(1.0, 0.0);
    assert!((unit_shift - 0.5).abs() < 1e-6);
    assert!((monte_carlo_kl(1.0, 0.0, &mut rng) - unit_shift).abs() < 0.005);
    let wide = closed_form(0.0, 2f32.ln());
    assert!((wide - 0.5 * (1.0 - 2f64.ln())).abs() < 1e-6);
    assert!((monte_carlo_kl(0.0, 2f64.ln(), &mut rng) - wide).abs() / wide < 0.01);
}
