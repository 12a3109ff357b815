use plural_inpaint::config::TrainConfig;
use plural_inpaint::data::{apply_mask, MaskSpec};
use plural_inpaint::evaluation::{diversity, evaluate, psnr, ssim, Distance, Psnr};
use plural_inpaint::latent::{reparameterize, tile_latent, LatentSample};
use plural_inpaint::losses::{consistency_loss, gradient_penalty, kl_divergence};
use plural_inpaint::nn::{composite, CriticNet, GeneratorNet};
use plural_inpaint::tensor::{conv2d, conv2d_transpose, grad, Padding, Shape, Tensor};
use plural_inpaint::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Shape, seed: u64, scale: f32) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(shape, (0..shape.numel()).map(|_| scale * rng.random_range(-1.0..1.0f32)).collect()).unwrap()
}

fn binary_mask(shape: Shape, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(shape, (0..shape.numel()).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect()).unwrap()
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_is_linear(seed in any::<u64>(), a in -2.0f32..2.0, b in -2.0f32..2.0, stride in 1usize..3, dil in 1usize..3) {
        let s = Shape::new(2, 3, 7, 6);
        let (x, y) = (random(s, seed, 1.0), random(s, seed ^ 1, 1.0));
        let w = random(Shape::new(4, 3, 3, 3), seed ^ 2, 1.0);
        let conv = |t: &Tensor| conv2d(t, &w, None, (stride, stride), (dil, dil), Padding::Same).unwrap();
        let lhs = conv(&x.scale(a).add(&y.scale(b)).unwrap());
        let rhs = conv(&x).scale(a).add(&conv(&y).scale(b)).unwrap();
        prop_assert!(max_abs_diff(&lhs.to_vec(), &rhs.to_vec()) <= 1e-5);
    }

    #[test]
    fn transpose_restores_spatial_size(h in 1usize..9, w in 1usize..9, case in 0usize..3, seed in any::<u64>()) {
        let (k, s) = [(3, 1), (4, 2), (2, 2)][case];
        let x = random(Shape::new(1, 2, h * s, w * s), seed, 1.0);
        let down = conv2d(&x, &random(Shape::new(3, 2, k, k), seed ^ 3, 1.0), None, (s, s), (1, 1), Padding::Same).unwrap();
        prop_assert_eq!((down.shape().h, down.shape().w), (h, w));
        let up = conv2d_transpose(&down, &random(Shape::new(3, 2, k, k), seed ^ 4, 1.0), None, (s, s)).unwrap();
        prop_assert_eq!(up.shape(), x.shape());
    }

    #[test]
    fn conv_is_deterministic(seed in any::<u64>()) {
        let x = random(Shape::new(3, 4, 9, 9), seed, 1.0);
        let w = random(Shape::new(5, 4, 5, 5), seed ^ 5, 1.0);
        let run = || conv2d(&x, &w, None, (2, 2), (1, 1), Padding::Same).unwrap().to_vec();
        let (p, q) = (run(), run());
        prop_assert!(p.iter().zip(&q).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn kl_is_nonnegative(seed in any::<u64>()) {
        let s = Shape::new(3, 5, 1, 1);
        let kl = kl_divergence(&random(s, seed, 3.0), &random(s, seed ^ 6, 3.0)).unwrap().item();
        prop_assert!(kl >= 0.0);
    }

    #[test]
    fn kl_vanishes_only_at_standard_normal(mu in -2.0f32..2.0, lv in -2.0f32..2.0) {
        let t = |v: f32| Tensor::new(Shape::scalar(), vec![v]).unwrap();
        let kl = kl_divergence(&t(mu), &t(lv)).unwrap().item();
        if mu == 0.0 && lv == 0.0 {
            prop_assert_eq!(kl, 0.0);
        } else {
            prop_assert!(kl > 0.0, "mu={} lv={} kl={}", mu, lv, kl);
        }
    }

    #[test]
    fn consistency_is_a_metric(seed in any::<u64>()) {
        let s = Shape::new(2, 3, 4, 4);
        let (a, b, c) = (random(s, seed, 1.0), random(s, seed ^ 7, 1.0), random(s, seed ^ 8, 1.0));
        let d = |x: &Tensor, y: &Tensor| consistency_loss(x, y).unwrap().item();
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-6);
        prop_assert_eq!(d(&a, &a), 0.0);
    }

    #[test]
    fn composite_is_idempotent_and_restores_known_pixels(seed in any::<u64>()) {
        let s = Shape::new(2, 3, 6, 6);
        let (raw, gen) = (random(s, seed, 1.0), random(s, seed ^ 9, 1.0));
        let m = binary_mask(Shape::new(1, 1, 6, 6), seed ^ 10);
        let once = composite(&raw, &gen, &m).unwrap();
        let twice = composite(&raw, &once, &m).unwrap();
        prop_assert_eq!(once.to_vec(), twice.to_vec());
        let masked = apply_mask(&raw, &m).unwrap();
        prop_assert_eq!(composite(&masked, &raw, &m).unwrap().to_vec(), raw.to_vec());
    }

    #[test]
    fn generator_output_is_bounded(seed in any::<u64>(), scale in 1.0f32..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = GeneratorNet::new(3, 4, 4, &mut rng).unwrap();
        let img = random(Shape::new(1, 3, 8, 8), seed ^ 11, scale);
        let z = tile_latent(&random(Shape::new(1, 4, 1, 1), seed ^ 12, scale), 8, 8).unwrap();
        let out = g.forward(&img, &Tensor::ones(Shape::new(1, 1, 8, 8)), &z).unwrap();
        prop_assert!(out.to_vec().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn tiling_then_spatial_mean_is_identity(seed in any::<u64>(), h in 1usize..6, w in 1usize..6) {
        let z = random(Shape::new(2, 3, 1, 1), seed, 2.0);
        let back = tile_latent(&z, h, w).unwrap().reduce_to(Shape::new(2, 3, 1, 1)).unwrap().scale(1.0 / (h * w) as f32);
        prop_assert!(max_abs_diff(&back.to_vec(), &z.to_vec()) <= 1e-6 * 2.0);
    }

    #[test]
    fn gradient_through_mean_equals_gradient_at_code(seed in any::<u64>()) {
        let s = Shape::new(2, 3, 1, 1);
        let mu = Tensor::param(s, random(s, seed, 1.0).to_vec()).unwrap();
        let lv = Tensor::param(s, random(s, seed ^ 13, 1.0).to_vec()).unwrap();
        let eps = random(s, seed ^ 14, 1.0);
        let r = random(s, seed ^ 15, 1.0);
        let f = |z: &Tensor| z.mul(&r).unwrap().add(&z.square()).unwrap().sum();
        let sample = LatentSample::new(mu.clone(), lv).unwrap();
        let z = reparameterize(&sample, &eps).unwrap();
        let g_mu = grad(&f(&z), &[&mu], false).unwrap().remove(0).to_vec();
        let z_leaf = Tensor::param(s, z.to_vec()).unwrap();
        let g_z = grad(&f(&z_leaf), &[&z_leaf], false).unwrap().remove(0).to_vec();
        prop_assert!(max_abs_diff(&g_mu, &g_z) <= 1e-6);
        // central differences of f at z in f64
        let (zv, rv) = (z.to_vec(), r.to_vec());
        for i in 0..zv.len() {
            let fd = |d: f64| { let x = zv[i] as f64 + d; x * rv[i] as f64 + x * x };
            let num = (fd(1e-3) - fd(-1e-3)) / 2e-3;
            prop_assert!((num - g_mu[i] as f64).abs() <= 1e-2 * num.abs().max(1e-3));
        }
    }

    #[test]
    fn masked_penalty_ignores_known_pixels(seed in any::<u64>()) {
        let spec = MaskSpec::center(16, 16, 8, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = CriticNet::new(3, (8, 8), 3, 4, &mut rng).unwrap();
        let region = spec.region(3);
        let m = spec.tensor();
        let s = Shape::new(2, 3, 16, 16);
        let (real, fake) = (random(s, seed ^ 16, 1.0), random(s, seed ^ 17, 1.0));
        let u = Tensor::new(Shape::new(2, 1, 1, 1), vec![0.3, 0.8]).unwrap();
        let pen = |r: &Tensor, f: &Tensor| {
            gradient_penalty(|x: &Tensor| d.forward(&x.crop(region)?), r, f, &u, Some(&m)).unwrap().item()
        };
        let base = pen(&real, &fake);
        let noise = random(s, seed ^ 18, 1.0);
        let r2 = composite(&real.add(&noise).unwrap(), &real, &m).unwrap();
        let f2 = composite(&fake.sub(&noise).unwrap(), &fake, &m).unwrap();
        prop_assert!((pen(&r2, &f2) - base).abs() <= 1e-6);
    }

    #[test]
    fn psnr_symmetric_and_ssim_bounded(seed in any::<u64>()) {
        let s = Shape::new(1, 3, 16, 16);
        let (a, b) = (random(s, seed, 1.0).add_scalar(1.0).scale(0.5), random(s, seed ^ 19, 1.0).add_scalar(1.0).scale(0.5));
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        prop_assert_eq!(psnr(&a, &a, 1.0).unwrap(), Psnr::Identical);
        prop_assert_eq!(ssim(&a, &a, 1.0).unwrap(), 1.0);
        let v = ssim(&a, &b, 1.0).unwrap();
        prop_assert!((-1.0..=1.0).contains(&v));
    }

    #[test]
    fn metrics_ignore_order(seed in any::<u64>(), shift in 1usize..5) {
        let s = Shape::new(1, 3, 8, 8);
        let outs: Vec<Tensor> = (0..5).map(|i| random(s, seed ^ (i as u64 * 31 + 1), 1.0)).collect();
        let tgts: Vec<Tensor> = (0..5).map(|i| random(s, seed ^ (i as u64 * 31 + 2), 1.0)).collect();
        let mut po = outs.clone();
        let mut pt = tgts.clone();
        po.rotate_left(shift);
        pt.rotate_left(shift);
        let (r1, r2) = (evaluate(&outs, &tgts).unwrap(), evaluate(&po, &pt).unwrap());
        for (x, y) in [(r1.l1_percent, r2.l1_percent), (r1.l2_percent, r2.l2_percent), (r1.psnr_db, r2.psnr_db), (r1.ssim, r2.ssim)] {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        let spec = MaskSpec::center(8, 8, 4, 4).unwrap();
        let d1 = diversity(&outs, &spec, Distance::MeanAbs, 100, 0).unwrap();
        let d2 = diversity(&po, &spec, Distance::MeanAbs, 100, 0).unwrap();
        prop_assert!((d1.global_score - d2.global_score).abs() <= 1e-12);
        prop_assert!((d1.local_score - d2.local_score).abs() <= 1e-12);
    }

    #[test]
    fn distinct_sample_lifts_diversity_from_zero(seed in any::<u64>(), k in 2usize..6) {
        let s = Shape::new(1, 3, 8, 8);
        let spec = MaskSpec::center(8, 8, 4, 4).unwrap();
        let base = random(s, seed, 1.0);
        let mut samples = vec![base.clone(); k];
        let flat = diversity(&samples, &spec, Distance::MeanAbs, 100, 0).unwrap();
        prop_assert_eq!((flat.global_score, flat.local_score), (0.0, 0.0));
        samples.push(base.add(&random(s, seed ^ 20, 1.0)).unwrap());
        let more = diversity(&samples, &spec, Distance::MeanAbs, 100, 0).unwrap();
        prop_assert!(more.global_score > 0.0 && more.local_score > 0.0);
    }

    #[test]
    fn config_text_round_trips(batch in 1usize..64, iters in 1u64..100_000, seed in any::<u64>(), lr in 1e-6f32..1e-2, n_critic in 1usize..=5) {
        let cfg = TrainConfig { batch_size: batch, iterations: iters, seed, learning_rate: lr, n_critic, ..TrainConfig::default() };
        let parsed = TrainConfig::parse(&cfg.to_text(), "echo").unwrap();
        prop_assert_eq!(parsed, cfg);
    }

    #[test]
    fn unknown_config_keys_report_their_line(pad in 0usize..6, key in "[a-z]{3,10}_x") {
        let mut text = String::new();
        for i in 0..pad {
            text.push_str(if i % 2 == 0 { "# comment\n" } else { "seed = 3\n" });
            if i % 2 == 1 { break; }
        }
        let line = text.lines().count() + 1;
        text.push_str(&format!("{key} = 1\n"));
        match TrainConfig::parse(&text, "t.cfg") {
            Err(Error::Config { line: l, path, .. }) => {
                prop_assert_eq!(l, line);
                prop_assert_eq!(path, "t.cfg");
            }
            other => prop_assert!(false, "unexpected {:?}", other),
        }
    }
}

/// Direct per-window SSIM on `[0, 1]` images.
fn ssim_oracle(a: &[f32], b: &[f32], h: usize, w: usize) -> f64 {
    let gray = |v: &[f32], y: usize, x: usize| (0..3).map(|c| v[(c * h + y) * w + x] as f64).sum::<f64>() / 3.0;
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for wy in 0..h / 8 {
        for wx in 0..w / 8 {
            let (mut sa, mut sb) = (0.0, 0.0);
            for y in 0..8 {
                for x in 0..8 {
                    sa += gray(a, wy * 8 + y, wx * 8 + x);
                    sb += gray(b, wy * 8 + y, wx * 8 + x);
                }
            }
            let (ma, mb) = (sa / 64.0, sb / 64.0);
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for y in 0..8 {
                for x in 0..8 {
                    let da = gray(a, wy * 8 + y, wx * 8 + x) - ma;
                    let db = gray(b, wy * 8 + y, wx * 8 + x) - mb;
                    va += da * da / 64.0;
                    vb += db * db / 64.0;
                    cov += da * db / 64.0;
                }
            }
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn ssim_matches_window_oracle() {
    for seed in 0..10 {
        let s = Shape::new(1, 3, 24, 16);
        let a = random(s, seed, 1.0).add_scalar(1.0).scale(0.5);
        let b = a.add(&random(s, seed + 100, 0.2)).unwrap();
        let got = ssim(&a, &b, 1.0).unwrap();
        let want = ssim_oracle(&a.to_vec(), &b.to_vec(), 24, 16);
        assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
    }
}

#[test]
fn inverted_image_breaks_structure() {
    let a = random(Shape::new(1, 3, 16, 16), 3, 1.0).add_scalar(1.0).scale(0.5);
    let inv = a.neg().add_scalar(1.0);
    assert!(ssim(&a, &inv, 1.0).unwrap() < 1.0);
}

#[test]
fn percent_metrics_match_loops() {
    let s = Shape::new(1, 3, 8, 8);
    let (a, b) = (random(s, 1, 1.0), random(s, 2, 1.0));
    let r = evaluate(&[a.clone()], &[b.clone()]).unwrap();
    let (av, bv) = (a.to_vec(), b.to_vec());
    let (mut l1, mut l2) = (0.0f64, 0.0f64);
    for i in 0..av.len() {
        let d = (av[i] as f64 + 1.0) / 2.0 - (bv[i] as f64 + 1.0) / 2.0;
        l1 += d.abs();
        l2 += d * d;
    }
    let n = av.len() as f64;
    assert!((r.l1_percent - 100.0 * l1 / n).abs() <= 1e-6);
    assert!((r.l2_percent - 100.0 * l2 / n).abs() <= 1e-6);
}

#[test]
fn feature_distance_is_zero_for_identical_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let e = plural_inpaint::nn::ExtractorNet::new(3, (16, 16), 4, &mut rng).unwrap();
    let spec = MaskSpec::center(16, 16, 8, 8).unwrap();
    let x = random(Shape::new(1, 3, 16, 16), 5, 1.0);
    let r = diversity(&[x.clone(), x.clone(), x], &spec, Distance::FeatureCosine(&e), 10, 0).unwrap();
    assert_eq!((r.global_score, r.local_score), (0.0, 0.0));
}
