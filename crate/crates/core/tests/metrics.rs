//! Quality metrics against closed forms and direct oracles.

mod common;

use common::*;
use sformer::metrics::{self, delta_e_lab, MetricReport, UCIQE_WEIGHTS};
use sformer::{Error, Tensor};

#[test]
fn psnr_closed_forms() {
    let gt = image(8, 8, 1).map(|v| v * 0.9);
    assert_eq!(metrics::psnr(&gt, &gt).unwrap(), f64::INFINITY);
    let shifted = gt.map(|v| v + 1.0 / 255.0);
    let p = metrics::psnr(&shifted, &gt).unwrap();
    assert!((p - 20.0 * 255f64.log10()).abs() < 1e-6 && (p - 48.1308).abs() < 1e-4, "{p}");
    let zeros = Tensor::<f64>::zeros(&[3, 8, 8]);
    let ones = Tensor::<f64>::ones(&[3, 8, 8]);
    assert_eq!(metrics::psnr(&zeros, &ones).unwrap(), 0.0);
}

#[test]
fn psnr_symmetric_and_monotone() {
    let (a, b) = (image(8, 8, 2), image(8, 8, 3));
    assert_eq!(metrics::psnr(&a, &b).unwrap(), metrics::psnr(&b, &a).unwrap());
    let gt = Tensor::<f64>::full(&[3, 8, 8], 0.5);
    let ladder: Vec<f64> = (1..=10)
        .map(|k| metrics::psnr(&gt.map(|v| v + 0.01 * k as f64), &gt).unwrap())
        .collect();
    assert!(ladder.windows(2).all(|w| w[1] < w[0]), "{ladder:?}");
    assert!(matches!(metrics::psnr(&image(8, 4, 1), &a), Err(Error::Dimension(_))));
}

#[test]
fn ssim_identity_and_bounds() {
    for seed in 0..3 {
        let x = image(16, 20, seed);
        assert!((metrics::ssim(&x, &x).unwrap() - 1.0).abs() < 1e-9);
    }
    for seed in 0..20 {
        let s = metrics::ssim(&image(16, 16, 10 + seed), &image(16, 16, 40 + seed)).unwrap();
        assert!(s.abs() <= 1.0, "{s}");
    }
}

#[test]
fn ssim_constant_images() {
    let c1 = 0.01f64 * 0.01;
    for (a, b) in [(0.2, 0.7), (0.5, 0.5), (0.9, 0.1), (0.0, 1.0)] {
        let (x, y) = (Tensor::<f64>::full(&[3, 12, 12], a), Tensor::<f64>::full(&[3, 12, 12], b));
        let want = (2.0 * a * b + c1) / (a * a + b * b + c1);
        assert!((metrics::ssim(&x, &y).unwrap() - want).abs() < 1e-9, "{a} {b}");
    }
}

#[test]
fn ssim_inverted_checkerboard_is_negative() {
    let board = |invert: bool| {
        Tensor::<f64>::from_fn(&[3, 16, 16], |i| {
            let (y, x) = ((i / 16) % 16, i % 16);
            let on = (y + x) % 2 == 0;
            if on != invert {
                1.0
            } else {
                0.0
            }
        })
    };
    let s = metrics::ssim(&board(false), &board(true)).unwrap();
    assert!(s < 0.0, "{s}");
}

#[test]
fn ssim_rejects_small_images() {
    let x = image(10, 16, 1);
    assert!(matches!(metrics::ssim(&x, &x), Err(Error::Dimension(_))));
}

#[test]
fn delta_e_examples() {
    let n = 16;
    let at = |p: [f64; 3]| vec![p; n];
    assert_eq!(delta_e_lab(&at([50.0, 0.0, 0.0]), &at([60.0, 0.0, 0.0])), 10.0);
    assert_eq!(delta_e_lab(&at([50.0, 3.0, 4.0]), &at([50.0, 0.0, 0.0])), 5.0);
    let x = image(8, 8, 5);
    assert_eq!(metrics::delta_e(&x, &x).unwrap(), 0.0);
}

#[test]
fn delta_e_is_a_metric_on_constant_images() {
    let colors = [[0.1, 0.5, 0.9], [0.8, 0.2, 0.3], [0.4, 0.4, 0.4], [1.0, 1.0, 0.0]];
    let imgs: Vec<Tensor<f64>> = colors.iter().map(|&c| constant_image(4, 4, c)).collect();
    let d = |i: usize, j: usize| metrics::delta_e(&imgs[i], &imgs[j]).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(d(i, j), d(j, i));
            for k in 0..4 {
                assert!(d(i, k) <= d(i, j) + d(j, k));
            }
        }
    }
    // Against the textbook conversion.
    let want = {
        let (p, q) = (lab(colors[0]), lab(colors[1]));
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    };
    assert!((d(0, 1) - want).abs() < 1e-4);
}

#[test]
fn uciqe_uniform_gray_is_zero() {
    for v in [0.0, 0.3, 0.5, 1.0] {
        let u = metrics::uciqe(&Tensor::<f64>::full(&[3, 8, 8], v)).unwrap();
        // Zero up to the rounding of the white point.
        for c in [u.chroma_std, u.contrast, u.saturation, u.value] {
            assert!(c.abs() < 1e-12, "{v}: {u:?}");
        }
    }
}

#[test]
fn uciqe_gray_ramp_matches_percentile_oracle() {
    let (h, w) = (8, 32);
    let n = h * w;
    let ramp = Tensor::<f64>::from_fn(&[3, h, w], |i| (i % n) as f64 / (n - 1) as f64);
    let u = metrics::uciqe(&ramp).unwrap();
    let l: Vec<f64> = (0..n).map(|i| lab([(i as f64) / (n - 1) as f64; 3])[0] / 100.0).collect();
    let want = UCIQE_WEIGHTS[1] * (percentile_oracle(&l, 99.0) - percentile_oracle(&l, 1.0));
    assert!((u.value - want).abs() < 1e-4, "{} vs {want}", u.value);
}

#[test]
fn uciqe_weights_echo() {
    let u = metrics::uciqe(&image(8, 8, 9)).unwrap();
    assert_eq!(u.weights, [0.4680, 0.2745, 0.2576]);
    let recombined = u.weights[0] * u.chroma_std + u.weights[1] * u.contrast + u.weights[2] * u.saturation;
    assert!((u.value - recombined).abs() < 1e-15);
    assert!(u.value >= 0.0);
}

#[test]
fn report_mean_is_arithmetic() {
    let reports: Vec<MetricReport> = (0..4)
        .map(|s| MetricReport::compute(&image(16, 16, s), &image(16, 16, s + 10)).unwrap())
        .collect();
    let mean = MetricReport::mean(&reports);
    let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / 4.0;
    assert!((mean.psnr - avg(|r| r.psnr)).abs() < 1e-9);
    assert!((mean.ssim - avg(|r| r.ssim)).abs() < 1e-9);
    assert!((mean.delta_e - avg(|r| r.delta_e)).abs() < 1e-9);
    assert!((mean.uciqe - avg(|r| r.uciqe)).abs() < 1e-9);
    assert_eq!(metrics::fmt_value(f64::INFINITY), "inf");
}
