use std::f32::consts::PI;

use plural_inpaint::data::{
    apply_mask, decode_ppm, denormalize, encode_ppm, generate_synthetic_dataset, make_center_mask, normalize, read_image,
    render_scene, write_image, MaskSpec, RgbImage, SceneAttributes, ShapeKind,
};
use plural_inpaint::evaluation::{diversity, sample_pairs, Distance};
use plural_inpaint::tensor::{Shape, Tensor};
use plural_inpaint::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pearson statistic of `values` against a uniform law on `[lo, hi)`.
fn chi_square(values: &[f32], lo: f32, hi: f32, bins: usize) -> f64 {
    let mut counts = vec![0usize; bins];
    for &v in values {
        assert!(v >= lo && v < hi, "{v} outside [{lo}, {hi})");
        let b = (((v - lo) / (hi - lo)) * bins as f32) as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let expected = values.len() as f64 / bins as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

#[test]
fn attribute_marginals_are_uniform() {
    let d = generate_synthetic_dataset(10_000, (8, 8), 2024).unwrap();
    let a = &d.attributes;
    // 9 degrees of freedom, 0.1% upper critical value
    let critical = 27.88;
    let mut columns: Vec<(&str, Vec<f32>, (f32, f32))> = Vec::new();
    for c in 0..3 {
        columns.push(("background", a.iter().map(|s| s.background[c]).collect(), (-1.0, 0.0)));
        columns.push(("accent", a.iter().map(|s| s.accent[c]).collect(), (0.0, 1.0)));
    }
    columns.push(("cx", a.iter().map(|s| s.center.0).collect(), (0.3, 0.7)));
    columns.push(("cy", a.iter().map(|s| s.center.1).collect(), (0.3, 0.7)));
    columns.push(("size", a.iter().map(|s| s.size).collect(), (0.15, 0.3)));
    columns.push(("theta", a.iter().map(|s| s.theta).collect(), (0.0, PI)));
    for (name, values, (lo, hi)) in &columns {
        let stat = chi_square(values, *lo, *hi, 10);
        assert!(stat < critical, "{name}: chi-square {stat}");
    }
    let discs = a.iter().filter(|s| s.shape == ShapeKind::Disc).count() as f64;
    let stat = 2.0 * (discs - 5000.0).powi(2) / 5000.0;
    assert!(stat < 10.83, "shape balance: chi-square {stat}");
}

#[test]
fn images_rebuild_from_attribute_records() {
    let d = generate_synthetic_dataset(50, (32, 32), 9).unwrap();
    for (i, attrs) in d.attributes.iter().enumerate() {
        let parsed: SceneAttributes = attrs.to_string().parse().unwrap();
        assert_eq!(&parsed, attrs);
        assert_eq!(render_scene(&parsed, 32, 32).to_vec(), d.images[i]);
    }
}

#[test]
fn every_level_round_trips_through_normalization() {
    for v in 0..=255u8 {
        let n = normalize(v);
        assert!((-1.0..=1.0).contains(&n));
        assert_eq!(denormalize(n), v);
    }
    assert_eq!(denormalize(-3.0), 0);
    assert_eq!(denormalize(3.0), 255);
}

#[test]
fn ppm_round_trips_every_byte() {
    let pixels: Vec<u8> = (0..16 * 16 * 3).map(|i| (i % 256) as u8).collect();
    let img = RgbImage {
        width: 16,
        height: 16,
        pixels,
    };
    let bytes = encode_ppm(&img);
    assert!(bytes.starts_with(b"P6\n16 16\n255\n"));
    assert_eq!(decode_ppm(&bytes).unwrap(), img);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("levels.ppm");
    let t = img.to_tensor();
    write_image(&path, &t).unwrap();
    assert_eq!(read_image(&path).unwrap().to_vec(), t.to_vec());
}

#[test]
fn ppm_accepts_comments_and_rejects_bad_files() {
    let mut commented = b"P6\n# made by hand\n2 1 # width height\n255\n".to_vec();
    commented.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
    let img = decode_ppm(&commented).unwrap();
    assert_eq!((img.width, img.height), (2, 1));
    assert_eq!(img.pixels, vec![1, 2, 3, 4, 5, 6]);

    let cases: [&[u8]; 5] = [
        b"P3\n1 1\n255\n\x00\x00\x00",
        b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00",
        b"P6\n2 2\n255\n\x00\x00\x00",
        b"P6\n1",
        b"P6\nx 1\n255\n\x00\x00\x00",
    ];
    for bytes in cases {
        assert!(matches!(decode_ppm(bytes), Err(Error::ImageFormat(_))), "{:?}", String::from_utf8_lossy(bytes));
    }
}

#[test]
fn mask_geometry() {
    let m = make_center_mask(128, 128, 64, 64).unwrap().to_vec();
    for y in 0..128 {
        for x in 0..128 {
            let hole = (32..=95).contains(&y) && (32..=95).contains(&x);
            assert_eq!(m[y * 128 + x], if hole { 0.0 } else { 1.0 });
        }
    }
    let tiny = make_center_mask(3, 3, 1, 1).unwrap().to_vec();
    assert_eq!(tiny.iter().filter(|&&v| v == 0.0).count(), 1);
    assert_eq!(tiny[4], 0.0);
    assert!(make_center_mask(4, 4, 5, 2).is_err());
    // odd margins put the extra row and column below and to the right
    let odd = MaskSpec::center(5, 6, 2, 3).unwrap();
    assert_eq!((odd.top(), odd.left()), (1, 1));
}

#[test]
fn masked_pixels_are_white_and_border_is_untouched() {
    let d = generate_synthetic_dataset(4, (16, 16), 1).unwrap();
    let spec = MaskSpec::center(16, 16, 8, 8).unwrap();
    let img = d.batch(&[0, 1, 2, 3]);
    let out = apply_mask(&img, &spec.tensor()).unwrap().to_vec();
    let src = img.to_vec();
    for n in 0..4 {
        for c in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    let i = ((n * 3 + c) * 16 + y) * 16 + x;
                    if spec.contains(y, x) {
                        assert_eq!(out[i], 1.0);
                    } else {
                        assert_eq!(out[i].to_bits(), src[i].to_bits());
                    }
                }
            }
        }
    }
}

#[test]
fn diversity_matches_direct_pair_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spec = MaskSpec::center(16, 16, 8, 8).unwrap();
    let samples: Vec<Tensor> = (0..6)
        .map(|_| Tensor::new(Shape::new(1, 3, 16, 16), (0..768).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let report = diversity(&samples, &spec, Distance::MeanAbs, 1000, 0).unwrap();
    assert_eq!(report.n_pairs, 15);
    let (mut g, mut l) = (0.0, 0.0);
    for i in 0..6 {
        for j in i + 1..6 {
            let (a, b) = (samples[i].to_vec(), samples[j].to_vec());
            let (mut sg, mut sl) = (0.0f64, 0.0f64);
            for c in 0..3 {
                for y in 0..16 {
                    for x in 0..16 {
                        let k = (c * 16 + y) * 16 + x;
                        let d = (a[k] as f64 - b[k] as f64).abs();
                        sg += d;
                        if spec.contains(y, x) {
                            sl += d;
                        }
                    }
                }
            }
            g += sg / 768.0;
            l += sl / 192.0;
        }
    }
    assert!((report.global_score - g / 15.0).abs() < 1e-9);
    assert!((report.local_score - l / 15.0).abs() < 1e-9);

    let repeated = vec![samples[0].clone(); 5];
    let same = diversity(&repeated, &spec, Distance::MeanAbs, 1000, 0).unwrap();
    assert_eq!((same.global_score, same.local_score), (0.0, 0.0));
}

#[test]
fn pair_sampling_is_distinct_and_seeded() {
    let p = sample_pairs(100, 500, 3);
    assert_eq!(p.len(), 500);
    let set: std::collections::HashSet<_> = p.iter().collect();
    assert_eq!(set.len(), 500);
    assert!(p.iter().all(|&(i, j)| i < j && j < 100));
    assert_eq!(p, sample_pairs(100, 500, 3));
    assert_eq!(sample_pairs(4, 100, 0).len(), 6);
}
