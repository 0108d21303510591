//! Formation model, dataset generation, image I/O and paired augmentation.

mod common;

use common::*;
use sformer::metrics;
use sformer::synth::{self, augment, degrade, make_dataset, AugmentPolicy, DegradeParams, PairedSample};
use sformer::{imageio, Error, Tensor};

fn clean(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    image_f32(h, w, seed)
}

fn mean_channel(t: &Tensor<f32>, c: usize) -> f64 {
    let n = t.numel() / 3;
    t.data()[c * n..(c + 1) * n].iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64
}

#[test]
fn clear_water_is_identity() {
    let img = clean(12, 10, 1);
    assert_eq!(degrade(&img, &DegradeParams::identity(12, 10)).unwrap(), img);
}

#[test]
fn infinite_depth_gives_backlight() {
    let img = clean(8, 8, 2);
    let mut p = DegradeParams::identity(8, 8);
    p.beta = [2.0, 1.0, 0.5];
    p.backlight = [0.1, 0.5, 0.6];
    p.depth = Tensor::full(&[8, 8], 40.0);
    let out = degrade(&img, &p).unwrap();
    for c in 0..3 {
        let n = 64;
        for &v in &out.data()[c * n..(c + 1) * n] {
            assert!((f64::from(v) - p.backlight[c]).abs() < 1e-6);
        }
    }
}

#[test]
fn red_channel_loses_most() {
    for seed in 0..10 {
        let img = clean(16, 16, 100 + seed);
        let mut p = DegradeParams::identity(16, 16);
        p.beta = [1.8, 0.7, 0.3];
        p.backlight = [0.0; 3];
        p.depth = Tensor::full(&[16, 16], 1.0);
        let out = degrade(&img, &p).unwrap();
        let drop = |c| mean_channel(&img, c) - mean_channel(&out, c);
        assert!(drop(0) > drop(2), "seed {seed}");
    }
}

#[test]
fn deeper_water_moves_toward_backlight() {
    let img = clean(16, 16, 5);
    let mut r = rng(6);
    let mut p = DegradeParams::sample(&mut r, 16, 16);
    p.noise_sigma = 0.0;
    p.blur_radius = 0;
    let shallow = degrade(&img, &p).unwrap();
    let mut deep = p.clone();
    deep.depth = p.depth.map(|d| d + 0.5);
    let deeper = degrade(&img, &deep).unwrap();
    let n = 256;
    for c in 0..3 {
        for i in 0..n {
            let b = p.backlight[c];
            let (s, d) = (f64::from(shallow.data()[c * n + i]), f64::from(deeper.data()[c * n + i]));
            assert!((d - b).abs() <= (s - b).abs() + 1e-6);
        }
    }
}

#[test]
fn invalid_parameters_are_rejected() {
    let img = clean(4, 4, 1);
    let mut p = DegradeParams::identity(4, 4);
    p.beta[1] = -0.1;
    assert!(matches!(degrade(&img, &p), Err(Error::Domain(_))));
    let mut p = DegradeParams::identity(4, 4);
    p.backlight[2] = 1.5;
    assert!(matches!(degrade(&img, &p), Err(Error::Domain(_))));
    assert!(matches!(degrade(&img, &DegradeParams::identity(4, 5)), Err(Error::Dimension(_))));
}

#[test]
fn dataset_is_deterministic_and_degraded() {
    let a = make_dataset(4, 64, 64, 7).unwrap();
    let b = make_dataset(4, 64, 64, 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 4);
    for s in &a {
        assert_eq!(s.degraded.shape(), &[3, 64, 64]);
        assert_eq!(s.reference.shape(), &[3, 64, 64]);
        assert!(s.degraded.data().iter().chain(s.reference.data()).all(|&v| (0.0..=1.0).contains(&v)));
    }
    assert_ne!(make_dataset(4, 64, 64, 8).unwrap(), a);
    let mean_psnr = a
        .iter()
        .map(|s| metrics::psnr(&s.degraded, &s.reference).unwrap())
        .sum::<f64>()
        / 4.0;
    assert!(mean_psnr < 30.0, "{mean_psnr}");
    assert!(matches!(make_dataset(0, 8, 8, 1), Err(Error::Domain(_))));
}

#[test]
fn pairs_roundtrip_through_png() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_dataset(3, 16, 24, 9).unwrap();
    synth::save_pairs(dir.path(), &data).unwrap();
    let back = synth::load_pairs(dir.path()).unwrap();
    assert_eq!(back.len(), 3);
    for (orig, got) in data.iter().zip(&back) {
        assert_eq!(got.id, format!("{}.png", orig.id));
        // 8-bit quantization: at most half a level away.
        for (x, y) in orig.degraded.data().iter().zip(got.degraded.data()) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
        }
        assert_eq!(imageio::to_bytes(&orig.reference).unwrap(), imageio::to_bytes(&got.reference).unwrap());
    }
}

#[test]
fn loader_reports_missing_and_mismatched_pairs() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(synth::load_pairs(dir.path()), Err(Error::Io { .. })));
    std::fs::create_dir_all(dir.path().join("input")).unwrap();
    std::fs::create_dir_all(dir.path().join("gt")).unwrap();
    assert!(matches!(synth::load_pairs(dir.path()), Err(Error::Image { .. })));
    imageio::write_image(dir.path().join("input/a.png"), &clean(8, 8, 1)).unwrap();
    imageio::write_image(dir.path().join("gt/a.png"), &clean(8, 6, 1)).unwrap();
    assert!(matches!(synth::load_pairs(dir.path()), Err(Error::Dimension(_))));
}

#[test]
fn ppm_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let img = clean(5, 7, 3);
    let path = dir.path().join("x.ppm");
    imageio::write_image(&path, &img).unwrap();
    let back = imageio::read_image(&path).unwrap();
    assert_eq!(imageio::to_bytes(&img).unwrap(), imageio::to_bytes(&back).unwrap());
}

fn pair(seed: u64, h: usize, w: usize) -> PairedSample {
    PairedSample {
        degraded: clean(h, w, seed),
        reference: clean(h, w, seed + 1000),
        id: format!("p{seed}"),
    }
}

#[test]
fn flips_and_mixup_examples() {
    let p = pair(1, 8, 12);
    for axis in [1, 2] {
        assert_eq!(synth::flip(&synth::flip(&p.degraded, axis), axis), p.degraded);
    }
    assert_eq!(synth::rot90(&synth::rot90(&p.degraded, 1), 3), p.degraded);
    let q = pair(2, 8, 12);
    assert_eq!(synth::mixup(&p, &q, 1.0).unwrap(), p);
    let half = synth::mixup(&p, &q, 0.5).unwrap();
    assert!((half.degraded.data()[3] - 0.5 * (p.degraded.data()[3] + q.degraded.data()[3])).abs() < 1e-6);
}

#[test]
fn crops_share_coordinates_across_the_pair() {
    let p = pair(3, 32, 32);
    let policy = AugmentPolicy {
        crop: Some((16, 16)),
        ..AugmentPolicy::default()
    };
    for seed in 0..20 {
        let (out, log) = augment(&p, None, &policy, seed).unwrap();
        let (y0, x0, ch, cw) = log.crop.expect("crop logged");
        // Replay the logged transform on each half independently.
        let replay = |t: &Tensor<f32>| {
            let mut t = t.clone();
            if log.flip_h {
                t = synth::flip(&t, 2);
            }
            if log.flip_v {
                t = synth::flip(&t, 1);
            }
            synth::crop(&synth::rot90(&t, log.rot), y0, x0, ch, cw).unwrap()
        };
        assert_eq!(out.degraded, replay(&p.degraded), "seed {seed}");
        assert_eq!(out.reference, replay(&p.reference), "seed {seed}");
    }
    let too_big = AugmentPolicy {
        crop: Some((40, 8)),
        ..AugmentPolicy::default()
    };
    assert!(matches!(augment(&p, None, &too_big, 0), Err(Error::Dimension(_))));
}

#[test]
fn geometric_augmentation_preserves_metrics() {
    let data = make_dataset(2, 32, 32, 11).unwrap();
    for s in &data {
        let psnr = metrics::psnr(&s.degraded, &s.reference).unwrap();
        let ssim = metrics::ssim(&s.degraded, &s.reference).unwrap();
        for seed in 0..8 {
            let (a, _) = augment(s, None, &AugmentPolicy::default(), seed).unwrap();
            assert_eq!(metrics::psnr(&a.degraded, &a.reference).unwrap(), psnr);
            assert!((metrics::ssim(&a.degraded, &a.reference).unwrap() - ssim).abs() < 1e-6);
        }
    }
}

#[test]
fn augmentation_is_seeded() {
    let (p, q) = (pair(4, 16, 16), pair(5, 16, 16));
    let policy = AugmentPolicy {
        scale: true,
        mixup: 0.5,
        ..AugmentPolicy::default()
    };
    for seed in 0..10 {
        let a = augment(&p, Some(&q), &policy, seed).unwrap();
        let b = augment(&p, Some(&q), &policy, seed).unwrap();
        assert_eq!(a, b);
        assert!([0.5, 1.0].contains(&a.1.scale));
        if let Some(l) = a.1.mixup {
            assert!((0.0..=1.0).contains(&l));
        }
    }
}
