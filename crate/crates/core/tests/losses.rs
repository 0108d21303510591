//! Colour conversions, soft quantization and every loss term against
//! direct per-pixel oracles.

mod common;

use common::*;
use rand::Rng;
use sformer::color::{self, bin_centers, lab_to_lch, quantize_soft, rgb_to_lab, AB_RANGE, BINS, L_RANGE};
use sformer::config::RunConfig;
use sformer::loss::{self, LossConfig, LossWeights, RandomPyramid};
use sformer::{Error, Tape, Tensor};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[test]
fn lab_reference_points() {
    let white = color::srgb_to_lab_px([1.0, 1.0, 1.0]);
    assert!((white[0] - 100.0).abs() < 1e-2 && white[1].abs() < 1e-2 && white[2].abs() < 1e-2, "{white:?}");
    assert_eq!(color::srgb_to_lab_px([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0]);
    let red = color::srgb_to_lab_px([1.0, 0.0, 0.0]);
    for (got, want) in red.iter().zip([53.24, 80.09, 67.20]) {
        assert!((got - want).abs() < 0.1, "{red:?}");
    }
}

#[test]
fn lab_matches_textbook_conversion() {
    let img = image(9, 7, 3);
    let lab = rgb_to_lab(&img).unwrap();
    let want = lab_planes_oracle(&img);
    for (got, want) in [&lab.l, &lab.a, &lab.b].iter().zip(&want) {
        assert!(max_abs(&got.to_f64_vec(), want) < 1e-4);
    }
}

#[test]
fn lab_rejects_out_of_range() {
    let mut img = image(4, 4, 1);
    img.data_mut()[5] = 1.5;
    assert!(matches!(rgb_to_lab(&img), Err(Error::Domain(_))));
    assert!(matches!(loss::loss_lab(&img, &image(4, 4, 2)), Err(Error::Domain(_))));
    assert!(matches!(loss::loss_lch(&image(4, 4, 2), &img, false), Err(Error::Domain(_))));
}

#[test]
fn lch_conversion() {
    let plane = |v: f64| Tensor::<f64>::full(&[1, 2], v);
    let lch = lab_to_lch(&color::LabImage { l: plane(50.0), a: plane(3.0), b: plane(4.0) });
    assert!(lch.c.data().iter().all(|&c| (c - 5.0).abs() < 1e-12));
    assert!(lch.h.data().iter().all(|&h| (h - 4f64.atan2(3.0)).abs() < 1e-12));
    let lch = lab_to_lch(&color::LabImage { l: plane(50.0), a: plane(0.0), b: plane(0.0) });
    assert!(lch.c.data().iter().chain(lch.h.data()).all(|&v| v == 0.0));

    let lab = rgb_to_lab(&image(8, 8, 11)).unwrap();
    let lch = lab_to_lch(&lab);
    for i in 0..64 {
        let (c, h) = (lch.c.data()[i], lch.h.data()[i]);
        assert!(h > -std::f64::consts::PI && h <= std::f64::consts::PI);
        assert!((c * h.cos() - lab.a.data()[i]).abs() < 1e-5);
        assert!((c * h.sin() - lab.b.data()[i]).abs() < 1e-5);
    }
}

#[test]
fn quantization_examples() {
    let centers = bin_centers(L_RANGE.0, L_RANGE.1, BINS);
    let step = centers[1] - centers[0];
    let vals = vec![centers[10], 0.5 * (centers[20] + centers[21])];
    let q = quantize_soft(&Tensor::<f64>::new(vec![2], vals).unwrap(), L_RANGE).unwrap();
    let w = q.weights.data();
    assert!((w[10] - 1.0).abs() < 1e-12);
    assert_eq!(w[..BINS].iter().filter(|&&v| v != 0.0).count(), 1);
    assert!((w[BINS + 20] - 0.5).abs() < 1e-12 && (w[BINS + 21] - 0.5).abs() < 1e-12);

    let ch = uniform(&[16, 16], -130.0, 130.0, 5);
    let q = quantize_soft(&ch, AB_RANGE).unwrap();
    let step_ab = (AB_RANGE.1 - AB_RANGE.0) / (BINS - 1) as f64;
    for (i, (rec, &v)) in q.reconstruct().iter().zip(ch.data()).enumerate() {
        let row = &q.weights.data()[i * BINS..(i + 1) * BINS];
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&x| x >= 0.0));
        assert!((rec - v.clamp(AB_RANGE.0, AB_RANGE.1)).abs() <= 0.5 * step_ab);
        let want = soft_bins(v, AB_RANGE.0, AB_RANGE.1);
        assert!(max_abs(row, &want) < 1e-9);
    }
    assert!(step > 0.0);
}

#[test]
fn lab_loss_identical_inputs() {
    let gt = image(8, 8, 21);
    let got = loss::loss_lab(&gt, &gt).unwrap();
    let [_, a, b] = lab_planes_oracle(&gt);
    let entropy = soft_ce_oracle(&a, &a, -110.0, 110.0) + soft_ce_oracle(&b, &b, -110.0, 110.0);
    assert!(rel(got, entropy) < 1e-6, "{got} vs {entropy}");
}

#[test]
fn lab_loss_lightness_offset() {
    // Two grays whose lightness differs by exactly 10.
    let gt = constant_image(4, 4, [0.5, 0.5, 0.5]);
    let target = lab([0.5; 3])[0] + 10.0;
    let (mut lo, mut hi) = (0.5, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if lab([mid; 3])[0] < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let pre = constant_image(4, 4, [lo; 3]);
    let got = loss::loss_lab(&pre, &gt).unwrap();
    let [_, a, b] = lab_planes_oracle(&gt);
    let ce = soft_ce_oracle(&a, &a, -110.0, 110.0) + soft_ce_oracle(&b, &b, -110.0, 110.0);
    assert!((got - ce - 100.0).abs() < 1e-3, "{got}");
}

#[test]
fn lab_and_lch_match_direct_sums() {
    for seed in 0..5 {
        let (pre, gt) = (image(8, 8, 100 + seed), image(8, 8, 200 + seed));
        let lab_loss = loss::loss_lab(&pre, &gt).unwrap();
        let lch_loss = loss::loss_lch(&pre, &gt, false).unwrap();
        assert!(rel(lab_loss, loss_lab_oracle(&pre, &gt)) < 1e-5, "seed {seed}");
        assert!(rel(lch_loss, loss_lch_oracle(&pre, &gt)) < 1e-5, "seed {seed}");
    }
}

#[test]
fn lch_loss_identical_inputs() {
    let gt = image(8, 8, 31);
    let got = loss::loss_lch(&gt, &gt, false).unwrap();
    let [l, _, _] = lab_planes_oracle(&gt);
    let entropy = soft_ce_oracle(&l, &l, 0.0, 100.0);
    assert!(rel(got, entropy) < 1e-6, "{got} vs {entropy}");
}

#[test]
fn lch_loss_chroma_offset() {
    // gt is gray (C = 0); pre adds red until its chroma is exactly 2.
    let v = 0.5;
    let (mut lo, mut hi) = (0.0, 0.1);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let p = lab([v + mid, v, v]);
        if p[1].hypot(p[2]) < 2.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gt = constant_image(4, 4, [v; 3]);
    let pre = constant_image(4, 4, [v + lo, v, v]);
    let got = loss::loss_lch(&pre, &gt, false).unwrap();
    let ([lp, ap, bp], [lg, _, _]) = (lab_planes_oracle(&pre), lab_planes_oracle(&gt));
    let ce = soft_ce_oracle(&lp, &lg, 0.0, 100.0);
    let hue = bp[0].atan2(ap[0]);
    let chroma_term = got - ce - hue * hue;
    assert!((chroma_term - 4.0).abs() < 1e-3, "{chroma_term}");
}

#[test]
fn hue_wrapping_only_changes_the_hue_term() {
    let (pre, gt) = (image(8, 8, 41), image(8, 8, 42));
    let literal = loss::loss_lch(&pre, &gt, false).unwrap();
    let wrapped = loss::loss_lch(&pre, &gt, true).unwrap();
    assert!(wrapped <= literal + 1e-12);
    let same = loss::loss_lch(&gt, &gt, true).unwrap();
    assert!(rel(same, loss::loss_lch(&gt, &gt, false).unwrap()) < 1e-12);
}

#[test]
fn soft_ce_gibbs_minimum() {
    let gt = uniform(&[6, 6], -100.0, 100.0, 51);
    let ce = |pre: &Tensor<f64>| {
        let t = Tape::<f64>::new();
        let (p, g) = (t.constant(pre.clone()), t.constant(gt.clone()));
        t.item(loss::soft_ce(&t, p, g, AB_RANGE).unwrap())
    };
    let floor = ce(&gt);
    assert!(rel(floor, soft_ce_oracle(gt.data(), gt.data(), -110.0, 110.0)) < 1e-9);
    let mut r = rng(52);
    for k in 0..10 {
        let scale = [0.01, 0.5, 3.0, 20.0][k % 4];
        let pre = Tensor::from_fn(gt.shape(), |i| gt.data()[i] + scale * r.random_range(-1.0..1.0));
        assert!(ce(&pre) >= floor - 1e-9, "perturbation {k} lowered the cross-entropy");
    }
}

#[test]
fn spatial_and_frequency_terms() {
    let gt = image(8, 8, 61);
    assert_eq!(loss::loss_spatial(&gt, &gt).unwrap(), 0.0);
    assert!(loss::loss_freq(&gt, &gt).unwrap() < 1e-6);
    let pre = gt.map(|v| v + 0.5);
    assert!((loss::loss_spatial(&pre, &gt).unwrap() - 0.5).abs() < 1e-12);

    // Constant offset: only the DC bin of each channel moves, by δ·H·W.
    let delta = 0.25;
    let pre = gt.map(|v| v + delta);
    let got = loss::loss_freq(&pre, &gt).unwrap();
    let oracle = loss_freq_oracle(&pre, &gt);
    let closed = 3.0 * delta * 64.0 / gt.numel() as f64;
    assert!((got - oracle).abs() < 1e-9 && (oracle - closed).abs() < 1e-9, "{got} {oracle} {closed}");

    let other = image(8, 8, 62);
    assert!(rel(loss::loss_freq(&other, &gt).unwrap(), loss_freq_oracle(&other, &gt)) < 1e-9);
    assert!(loss::loss_spatial(&other, &gt).unwrap() > 0.0);

    let bad = image(8, 4, 63);
    assert!(matches!(loss::loss_spatial(&bad, &gt), Err(Error::Dimension(_))));
    assert!(matches!(loss::loss_freq(&bad, &gt), Err(Error::Dimension(_))));
}

#[test]
fn perceptual_term() {
    let ex = RandomPyramid::<f64>::default();
    let (a, b) = (image(16, 16, 71), image(16, 16, 72));
    assert_eq!(loss::loss_perceptual(&a, &a, &ex).unwrap(), 0.0);
    let ab = loss::loss_perceptual(&a, &b, &ex).unwrap();
    let ba = loss::loss_perceptual(&b, &a, &ex).unwrap();
    assert!(ab > 0.0);
    assert_eq!(ab, ba);
    let again = loss::loss_perceptual(&a, &b, &RandomPyramid::<f64>::new(loss::PERCEPTUAL_SEED)).unwrap();
    assert_eq!(ab.to_bits(), again.to_bits());
    let other = loss::loss_perceptual(&a, &b, &RandomPyramid::<f64>::new(1)).unwrap();
    assert_ne!(ab, other);
}

#[test]
fn default_weights_from_config() {
    let w = RunConfig::parse("").unwrap().loss_config().weights;
    assert_eq!(w.as_array(), [100.0, 10.0, 0.0001, 1.0, 100.0]);
    assert_eq!(LossWeights::default(), w);
}

#[test]
fn total_loss_on_identical_inputs() {
    let gt = image(16, 16, 81);
    let cfg = LossConfig::default();
    let bd = loss::total_loss(&gt, &gt, &cfg).unwrap();
    assert_eq!(bd.spatial, 0.0);
    assert!(bd.freq < 1e-6);
    assert_eq!(bd.perceptual, 0.0);
    let w = cfg.weights;
    let want = w.gamma * loss::loss_lab(&gt, &gt).unwrap() + w.mu * loss::loss_lch(&gt, &gt, false).unwrap();
    assert!(rel(bd.total, want) < 1e-6, "{} vs {want}", bd.total);
}

#[test]
fn total_loss_is_linear_in_weights() {
    let (pre, gt) = (image(16, 16, 91), image(16, 16, 92));
    let base = LossConfig::default();
    let mut doubled = base;
    doubled.weights.alpha *= 2.0;
    let (a, b) = (
        loss::total_loss(&pre, &gt, &base).unwrap(),
        loss::total_loss(&pre, &gt, &doubled).unwrap(),
    );
    let (wa, wb) = (a.weighted(&base.weights), b.weighted(&doubled.weights));
    assert!(rel(wb[0], 2.0 * wa[0]) < 1e-12);
    assert!(rel(b.total - a.total, wa[0]) < 1e-9);
    let sum: f64 = wa.iter().sum();
    assert!(rel(a.total, sum) < 1e-9);

    let mut only_spatial = base;
    only_spatial.weights = LossWeights { alpha: 1.0, beta: 0.0, gamma: 0.0, mu: 0.0, lambda: 0.0 };
    let s = loss::total_loss(&pre, &gt, &only_spatial).unwrap();
    assert!(rel(s.total, loss::loss_spatial(&pre, &gt).unwrap()) < 1e-12);
}

#[test]
fn negative_weights_are_rejected() {
    let img = image(16, 16, 1);
    for k in 0..5 {
        let mut cfg = LossConfig::default();
        let mut arr = cfg.weights.as_array();
        arr[k] = -1.0;
        cfg.weights = LossWeights { alpha: arr[0], beta: arr[1], gamma: arr[2], mu: arr[3], lambda: arr[4] };
        match loss::total_loss(&img, &img, &cfg) {
            Err(Error::Config { key, .. }) => assert_eq!(key, LossWeights::KEYS[k]),
            other => panic!("expected a config error, got {other:?}"),
        }
    }
    assert!(RunConfig::parse("[loss]\nalpha = -3\n").is_err());
}
