//! Quality metrics and the paired-sample diversity protocol.
//!
//! Quality metrics take images in any value range together with the `peak`
//! of that range. [`evaluate`] maps `[-1, 1]` tensors to `[0, 1]` first.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{apply_mask, MaskSpec};
use crate::error::{Error, Result};
use crate::latent::{sample_prior, tile_latent};
use crate::nn::{composite, ExtractorNet, GeneratorNet};
use crate::tensor::{no_grad, Region, Shape, Tensor};

pub const SSIM_WINDOW: usize = 8;

/// PSNR in decibels, or the identical-images flag when the MSE is 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Identical,
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Finite(v) => Some(v),
            Psnr::Identical => None,
        }
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v:.4}"),
            Psnr::Identical => f.write_str("inf"),
        }
    }
}

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

fn diffs(a: &Tensor, b: &Tensor) -> impl Iterator<Item = f64> {
    let (a, b) = (a.data(), b.data());
    (0..a.len()).map(move |i| a[i] as f64 - b[i] as f64)
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape("mse", a, b)?;
    Ok(diffs(a, b).map(|d| d * d).sum::<f64>() / a.numel() as f64)
}

/// `10 log10(peak^2 / MSE)`.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<Psnr> {
    if !(peak > 0.0) {
        return Err(Error::invalid("psnr", "peak must be positive"));
    }
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        Psnr::Identical
    } else {
        Psnr::Finite(10.0 * (peak * peak / m).log10())
    })
}

/// Mean absolute difference times 100.
pub fn l1_percent(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape("l1_percent", a, b)?;
    Ok(100.0 * diffs(a, b).map(f64::abs).sum::<f64>() / a.numel() as f64)
}

/// Mean squared difference times 100.
pub fn l2_percent(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(100.0 * mse(a, b)?)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population covariance; with `a == b` it is the variance, computed by the
/// same operations.
fn covariance(a: &[f64], b: &[f64], ma: f64, mb: f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64
}

/// Channel-mean grayscale planes of every image in the batch.
fn grayscale(t: &Tensor) -> Vec<Vec<f64>> {
    let s = t.shape();
    let d = t.data();
    let plane = s.plane();
    (0..s.n)
        .map(|n| {
            (0..plane)
                .map(|p| (0..s.c).map(|c| d[(n * s.c + c) * plane + p] as f64).sum::<f64>() / s.c as f64)
                .collect()
        })
        .collect()
}

/// Mean SSIM over non-overlapping 8x8 windows of the channel-mean
/// grayscale images, averaged over the batch. Rows and columns that do not
/// fill a whole window are ignored.
pub fn ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::invalid(
            "ssim",
            format!("image {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window", s.h, s.w),
        ));
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let (ga, gb) = (grayscale(a), grayscale(b));
    let mut scores = Vec::new();
    let mut wa = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    let mut wb = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for (pa, pb) in ga.iter().zip(&gb) {
        for wy in 0..s.h / SSIM_WINDOW {
            for wx in 0..s.w / SSIM_WINDOW {
                wa.clear();
                wb.clear();
                for y in wy * SSIM_WINDOW..(wy + 1) * SSIM_WINDOW {
                    let row = y * s.w + wx * SSIM_WINDOW;
                    wa.extend_from_slice(&pa[row..row + SSIM_WINDOW]);
                    wb.extend_from_slice(&pb[row..row + SSIM_WINDOW]);
                }
                let (ma, mb) = (mean(&wa), mean(&wb));
                let (va, vb) = (covariance(&wa, &wa, ma, ma), covariance(&wb, &wb, mb, mb));
                let cov = covariance(&wa, &wb, ma, mb);
                let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
                let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
                scores.push(num / den);
            }
        }
    }
    Ok(mean(&scores))
}

/// Averages over a set of completions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricReport {
    pub l1_percent: f64,
    pub l2_percent: f64,
    /// Mean over images with a finite PSNR.
    pub psnr_db: f64,
    /// Images whose completion matched the target exactly.
    pub psnr_identical: usize,
    pub ssim: f64,
    pub n_images: usize,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "n_images,l1_percent,l2_percent,psnr_db,psnr_identical,ssim";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.n_images, self.l1_percent, self.l2_percent, self.psnr_db, self.psnr_identical, self.ssim
        )
    }
}

fn to_unit(t: &Tensor) -> Tensor {
    t.add_scalar(1.0).scale(0.5).detach()
}

/// Metrics of `outputs[i]` against `targets[i]`, all `(1, C, H, W)` in
/// `[-1, 1]`, measured on `[0, 1]` values with peak 1.
pub fn evaluate(outputs: &[Tensor], targets: &[Tensor]) -> Result<MetricReport> {
    if outputs.len() != targets.len() || outputs.is_empty() {
        return Err(Error::invalid("evaluate", "need equally many outputs and targets, at least one"));
    }
    let (mut l1, mut l2, mut ss, mut ps) = (0.0, 0.0, 0.0, Vec::new());
    let mut identical = 0;
    for (o, t) in outputs.iter().zip(targets) {
        let (o, t) = (to_unit(o), to_unit(t));
        l1 += l1_percent(&o, &t)?;
        l2 += l2_percent(&o, &t)?;
        ss += ssim(&o, &t, 1.0)?;
        match psnr(&o, &t, 1.0)? {
            Psnr::Finite(v) => ps.push(v),
            Psnr::Identical => identical += 1,
        }
    }
    let n = outputs.len() as f64;
    Ok(MetricReport {
        l1_percent: l1 / n,
        l2_percent: l2 / n,
        psnr_db: if ps.is_empty() { f64::NAN } else { mean(&ps) },
        psnr_identical: identical,
        ssim: ss / n,
        n_images: outputs.len(),
    })
}

/// Index and PSNR of the sample closest to `target` (identical beats any
/// finite value; ties keep the first).
pub fn best_of_k(samples: &[Tensor], target: &Tensor) -> Result<(usize, Psnr)> {
    let t = to_unit(target);
    let mut best: Option<(usize, Psnr)> = None;
    for (i, s) in samples.iter().enumerate() {
        let p = psnr(&to_unit(s), &t, 1.0)?;
        let better = match (best, p) {
            (None, _) => true,
            (Some((_, Psnr::Identical)), _) => false,
            (Some(_), Psnr::Identical) => true,
            (Some((_, Psnr::Finite(b))), Psnr::Finite(v)) => v > b,
        };
        if better {
            best = Some((i, p));
        }
    }
    best.ok_or_else(|| Error::invalid("best_of_k", "no samples"))
}

/// Pairwise distance used by [`diversity`].
#[derive(Clone, Copy, Debug)]
pub enum Distance<'a> {
    /// Mean absolute pixel difference.
    MeanAbs,
    /// `1 - cos` between extractor convolution features; a perceptual proxy.
    FeatureCosine(&'a ExtractorNet),
}

impl Distance<'_> {
    fn embed(&self, image: &Tensor) -> Result<Vec<f32>> {
        match self {
            Distance::MeanAbs => Ok(image.to_vec()),
            Distance::FeatureCosine(e) => Ok(crate::tensor::no_grad(|| e.features(image))?.to_vec()),
        }
    }

    fn between(&self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            Distance::MeanAbs => {
                a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).abs()).sum::<f64>() / a.len() as f64
            }
            Distance::FeatureCosine(_) => {
                if a == b {
                    return 0.0;
                }
                let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
                let na = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    (1.0 - dot / (na * nb)).max(0.0)
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiversityReport {
    pub global_score: f64,
    pub local_score: f64,
    pub n_pairs: usize,
}

impl DiversityReport {
    pub const CSV_HEADER: &'static str = "n_pairs,global_score,local_score";

    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.n_pairs, self.global_score, self.local_score)
    }
}

/// Up to `max_pairs` distinct unordered index pairs out of `k`, drawn
/// without replacement; all pairs when there are not more than that.
pub fn sample_pairs(k: usize, max_pairs: usize, seed: u64) -> Vec<(usize, usize)> {
    let mut all: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    if all.len() > max_pairs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        all.partial_shuffle(&mut rng, max_pairs);
        all.truncate(max_pairs);
    }
    all
}

/// Completions of one `(1, C, H, W)` image, one per row of `codes`
/// `(K, J, 1, 1)`. Known pixels are copied from `image`.
pub fn complete(generator: &GeneratorNet, image: &Tensor, mask: &MaskSpec, codes: &Tensor) -> Result<Vec<Tensor>> {
    let s = image.shape();
    if s.n != 1 {
        return Err(Error::invalid("complete", "expected a single image"));
    }
    let k = codes.shape().n;
    let m = mask.tensor();
    let frames = Shape::new(k, s.c, s.h, s.w);
    no_grad(|| {
        let raw = image.expand(frames)?;
        let masked = apply_mask(&raw, &m)?;
        let g = generator.forward(&masked, &m, &tile_latent(codes, s.h, s.w)?)?;
        let out = composite(&raw, &g, &m)?.to_vec();
        out.chunks(s.sample_len())
            .map(|c| Tensor::new(Shape::new(1, s.c, s.h, s.w), c.to_vec()))
            .collect()
    })
}

/// `k` completions from prior codes drawn with `seed`.
pub fn sample_completions(generator: &GeneratorNet, image: &Tensor, mask: &MaskSpec, k: usize, seed: u64) -> Result<Vec<Tensor>> {
    complete(generator, image, mask, &sample_prior(k, generator.latent_dim(), seed))
}

/// Mean pairwise distance between completions of one input, on full frames
/// (global) and on the hole crop (local).
pub fn diversity(
    samples: &[Tensor],
    mask: &MaskSpec,
    distance: Distance<'_>,
    max_pairs: usize,
    seed: u64,
) -> Result<DiversityReport> {
    if samples.len() < 2 {
        return Err(Error::invalid("diversity", "need at least two samples"));
    }
    let s0 = samples[0].shape();
    if let Some(bad) = samples.iter().find(|s| s.shape() != s0 || s.shape().n != 1) {
        return Err(Error::ShapeMismatch {
            op: "diversity",
            left: Shape::new(1, s0.c, s0.h, s0.w),
            right: bad.shape(),
        });
    }
    if (mask.image_h, mask.image_w) != (s0.h, s0.w) {
        return Err(Error::invalid("diversity", "mask size differs from the samples"));
    }
    let region: Region = mask.region(s0.c);
    let mut global = Vec::with_capacity(samples.len());
    let mut local = Vec::with_capacity(samples.len());
    for s in samples {
        global.push(distance.embed(s)?);
        local.push(distance.embed(&s.crop(region)?)?);
    }
    let pairs = sample_pairs(samples.len(), max_pairs, seed);
    if pairs.is_empty() {
        return Err(Error::invalid("diversity", "max_pairs must be at least 1"));
    }
    let avg = |emb: &[Vec<f32>]| pairs.iter().map(|&(i, j)| distance.between(&emb[i], &emb[j])).sum::<f64>() / pairs.len() as f64;
    Ok(DiversityReport {
        global_score: avg(&global),
        local_score: avg(&local),
        n_pairs: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(shape: Shape, seed: u64, lo: f32, hi: f32) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(shape, (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
    }

    #[test]
    fn psnr_constant_gap() {
        // integer levels keep the +16 offset exact in f32
        let levels: Vec<f32> = random(Shape::new(1, 3, 8, 8), 1, 20.0, 200.0).to_vec().iter().map(|v| v.round()).collect();
        let a = Tensor::new(Shape::new(1, 3, 8, 8), levels).unwrap();
        let b = a.add_scalar(16.0);
        let p = psnr(&a, &b, 255.0).unwrap().db().unwrap();
        assert!((p - 24.05).abs() < 0.01, "{p}");
        assert!((p - 10.0 * (65025f64 / 256.0).log10()).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), Psnr::Identical);
        assert!(psnr(&a, &b, 0.0).is_err());
    }

    #[test]
    fn psnr_is_symmetric_and_log_scaled() {
        let a = random(Shape::new(1, 1, 8, 8), 2, 0.0, 1.0);
        let b = random(Shape::new(1, 1, 8, 8), 3, 0.0, 1.0);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        // halving the error amplitude quarters the MSE
        let half = a.add(&b.sub(&a).unwrap().scale(0.5)).unwrap();
        let p1 = psnr(&a, &b, 1.0).unwrap().db().unwrap();
        let p2 = psnr(&a, &half, 1.0).unwrap().db().unwrap();
        assert!((p2 - p1 - 2.0 * 3.0103).abs() < 1e-3);
    }

    #[test]
    fn ssim_identity_and_inversion() {
        let a = random(Shape::new(2, 3, 16, 16), 4, 0.0, 1.0);
        assert_eq!(ssim(&a, &a, 1.0).unwrap(), 1.0);
        let inv = a.neg().add_scalar(1.0);
        assert!(ssim(&a, &inv, 1.0).unwrap() < 1.0);
        assert!(ssim(&Tensor::zeros(Shape::new(1, 1, 4, 8)), &Tensor::zeros(Shape::new(1, 1, 4, 8)), 1.0).is_err());
    }

    #[test]
    fn percent_metrics() {
        let a = random(Shape::new(1, 3, 4, 4), 5, 0.0, 0.9);
        assert_eq!(l1_percent(&a, &a).unwrap(), 0.0);
        let b = a.add_scalar(0.05);
        assert!((l1_percent(&a, &b).unwrap() - 5.0).abs() < 1e-4);
        assert!((l2_percent(&a, &b).unwrap() - 0.25).abs() < 1e-4);
    }

    #[test]
    fn pair_sampling() {
        assert_eq!(sample_pairs(2, 10, 0), vec![(0, 1)]);
        assert_eq!(sample_pairs(5, 100, 0).len(), 10);
        let p = sample_pairs(20, 50, 7);
        assert_eq!(p.len(), 50);
        let mut uniq = p.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 50);
        assert_eq!(p, sample_pairs(20, 50, 7));
    }

    #[test]
    fn identical_samples_have_zero_diversity() {
        let mask = MaskSpec::center(16, 16, 8, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = ExtractorNet::new(3, (16, 16), 4, &mut rng).unwrap();
        let x = random(Shape::new(1, 3, 16, 16), 6, -1.0, 1.0);
        let same = vec![x.clone(); 4];
        for d in [Distance::MeanAbs, Distance::FeatureCosine(&e)] {
            let r = diversity(&same, &mask, d, 100, 0).unwrap();
            assert_eq!((r.global_score, r.local_score, r.n_pairs), (0.0, 0.0, 6));
        }
        assert!(diversity(&same[..1], &mask, Distance::MeanAbs, 10, 0).is_err());
    }

    #[test]
    fn completions_keep_known_pixels_and_follow_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = GeneratorNet::new(3, 4, 4, &mut rng).unwrap();
        let mask = MaskSpec::center(8, 8, 4, 4).unwrap();
        let img = Tensor::new(Shape::new(1, 3, 8, 8), (0..192).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let out = sample_completions(&g, &img, &mask, 3, 1).unwrap();
        assert_eq!(out.len(), 3);
        let src = img.to_vec();
        for o in &out {
            let v = o.to_vec();
            for (i, (a, b)) in src.iter().zip(&v).enumerate() {
                let p = i % 64;
                if !mask.contains(p / 8, p % 8) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
        assert_ne!(out[0].to_vec(), out[1].to_vec());
        let same = complete(&g, &img, &mask, &sample_prior(1, 4, 2).expand(Shape::new(3, 4, 1, 1)).unwrap()).unwrap();
        assert_eq!(same[0].to_vec(), same[2].to_vec());
    }
}
