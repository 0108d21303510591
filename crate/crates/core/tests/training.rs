//! Optimizer, schedule, training loop determinism and checkpoint resume.

use sformer::net::{ModelConfig, SformerNet};
use sformer::synth::make_dataset;
use sformer::train::{self, adamw_step, cosine_restart_lr, AdamHyper, AdamState, TrainConfig, TrainState};
use sformer::{Error, ModelWeights, Tensor};

fn scalar(value: f64) -> ModelWeights<f64> {
    let mut w = ModelWeights::new();
    w.insert("p", Tensor::scalar(value)).unwrap();
    w
}

/// Hand-stepped AdamW on one scalar, textbook form with bias-corrected
/// moments.
fn adamw_oracle(p0: f64, grads: &[f64], lr: f64, hp: &AdamHyper) -> f64 {
    let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
    for (k, &g) in grads.iter().enumerate() {
        let t = (k + 1) as i32;
        m = hp.beta1 * m + (1.0 - hp.beta1) * g;
        v = hp.beta2 * v + (1.0 - hp.beta2) * g * g;
        let m_hat = m / (1.0 - hp.beta1.powi(t));
        let v_hat = v / (1.0 - hp.beta2.powi(t));
        p -= lr * hp.weight_decay * p;
        p -= lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    p
}

#[test]
fn adamw_matches_scalar_oracle() {
    let hp = AdamHyper::default();
    for grads in [vec![0.3; 6], vec![0.5, -1.0, 2.0, 1e-3, -0.2, 7.0], vec![-4e-6; 3]] {
        let mut w = scalar(0.8);
        let mut st = AdamState::new(&w);
        for &g in &grads {
            w.params_mut()[0].grad = Tensor::scalar(g);
            adamw_step(&mut w, &mut st, 1e-3, &hp).unwrap();
        }
        let want = adamw_oracle(0.8, &grads, 1e-3, &hp);
        assert!((w.value("p").unwrap().item() - want).abs() < 1e-10, "{grads:?}");
        assert_eq!(st.t, grads.len() as u64);
    }
}

#[test]
fn adamw_first_step_closed_form() {
    // With zero decay the bias-corrected first update is −lr·g/(|g| + eps).
    let hp = AdamHyper {
        weight_decay: 0.0,
        ..AdamHyper::default()
    };
    for g in [0.5, -2.0, 3e-7] {
        let mut w = scalar(0.0);
        let mut st = AdamState::new(&w);
        w.params_mut()[0].grad = Tensor::scalar(g);
        adamw_step(&mut w, &mut st, 1e-2, &hp).unwrap();
        let want = -1e-2 * g / (g.abs() + hp.eps);
        assert!((w.value("p").unwrap().item() - want).abs() < 1e-10, "{g}");
    }
}

#[test]
fn adamw_decay_and_zero_gradient() {
    let hp = AdamHyper::default();
    let mut w = scalar(0.5);
    let mut st = AdamState::new(&w);
    adamw_step(&mut w, &mut st, 1e-2, &hp).unwrap();
    assert!((w.value("p").unwrap().item() - 0.5 * (1.0 - 1e-2 * 1e-4)).abs() < 1e-15);

    let hp = AdamHyper {
        weight_decay: 0.0,
        ..hp
    };
    let mut w = scalar(0.5);
    let mut st = AdamState::new(&w);
    adamw_step(&mut w, &mut st, 1e-2, &hp).unwrap();
    assert_eq!(w.value("p").unwrap().item(), 0.5);
}

#[test]
fn adamw_rejects_non_finite_gradients() {
    let mut w = scalar(0.5);
    w.insert("q", Tensor::scalar(1.0)).unwrap();
    let mut st = AdamState::new(&w);
    w.params_mut()[1].grad = Tensor::scalar(f64::NAN);
    match adamw_step(&mut w, &mut st, 1e-3, &AdamHyper::default()) {
        Err(Error::Numeric(m)) => assert!(m.contains("`q`"), "{m}"),
        other => panic!("expected a numeric error, got {other:?}"),
    }
}

#[test]
fn schedule_examples() {
    let (lr0, lr_min, t0) = (1e-4, 1e-6, 50);
    assert_eq!(cosine_restart_lr(0, lr0, lr_min, t0), lr0);
    assert!((cosine_restart_lr(25, lr0, lr_min, t0) - (lr0 + lr_min) / 2.0).abs() < 1e-18);
    assert_eq!(cosine_restart_lr(50, lr0, lr_min, t0), lr0);
    assert_eq!(cosine_restart_lr(150, lr0, lr_min, t0), lr0);
    for s in 0..500 {
        let l = cosine_restart_lr(s, lr0, lr_min, t0);
        assert!((lr_min..=lr0).contains(&l), "step {s}: {l}");
    }
    let cfg = TrainConfig::default();
    assert_eq!((cfg.lr0, cfg.lr_min, cfg.batch, cfg.restart_epochs), (1e-4, 1e-6, 4, 50));
    assert_eq!(cfg.restart_steps(10), 150);
}

#[test]
fn config_validation() {
    let bad = [
        TrainConfig { lr_min: 1e-3, ..TrainConfig::default() },
        TrainConfig { batch: 0, ..TrainConfig::default() },
        TrainConfig { restart_epochs: 0, ..TrainConfig::default() },
        TrainConfig { grad_clip: Some(0.0), ..TrainConfig::default() },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })), "{cfg:?}");
    }
}

fn tiny() -> (SformerNet, ModelWeights<f32>) {
    let cfg = ModelConfig {
        base_width: 4,
        height: 32,
        width: 32,
        patch: 2,
        depth: 1,
        heads: 2,
        embed: 8,
        ..ModelConfig::default()
    };
    let net = SformerNet::new(cfg).unwrap();
    let w = net.init_weights(3).unwrap();
    (net, w)
}

fn quick(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch: 2,
        lr0: 1e-3,
        restart_epochs: 2,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_steps_returns_initial_weights() {
    let (net, w) = tiny();
    let data = make_dataset(2, 32, 32, 1).unwrap();
    let (out, curve) = train::train(&net, w.clone(), &quick(0), &data).unwrap();
    assert_eq!(out, w);
    assert!(curve.is_empty());
}

#[test]
fn training_is_deterministic_and_moves_weights() {
    let (net, w) = tiny();
    let data = make_dataset(3, 32, 32, 1).unwrap();
    let (a, ca) = train::train(&net, w.clone(), &quick(3), &data).unwrap();
    let (b, cb) = train::train(&net, w.clone(), &quick(3), &data).unwrap();
    assert_eq!(a, b);
    assert_eq!(ca, cb);
    assert_ne!(a, w);
    let threaded = TrainConfig {
        threads: 2,
        ..quick(3)
    };
    let (c, cc) = train::train(&net, w, &threaded, &data).unwrap();
    assert_eq!(a, c);
    assert_eq!(ca, cc);
    assert!(ca.iter().all(|r| r.loss.is_finite() && r.grad_norm > 0.0));
    assert_eq!(ca.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 1, 2]);
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let (net, w) = tiny();
    let data = make_dataset(3, 32, 32, 2).unwrap();
    let (full, full_curve) = train::train(&net, w.clone(), &quick(4), &data).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut state = TrainState::new(w);
    let first = train::train_from(&net, &mut state, &quick(2), &data, |_| {}).unwrap();
    train::save_checkpoint(dir.path(), &state, 5).unwrap();
    let (mut resumed, seed) = train::load_checkpoint(dir.path()).unwrap();
    assert_eq!(seed, 5);
    assert_eq!(resumed, state);
    let rest = train::train_from(&net, &mut resumed, &quick(4), &data, |_| {}).unwrap();
    let joined: Vec<_> = first.into_iter().chain(rest).collect();
    assert_eq!(joined, full_curve);
    assert_eq!(resumed.weights, full);
}

#[test]
fn checkpoints_every_k_steps() {
    let (net, w) = tiny();
    let data = make_dataset(2, 32, 32, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_every: 2,
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..quick(3)
    };
    let mut state = TrainState::new(w);
    train::train_from(&net, &mut state, &cfg, &data, |_| {}).unwrap();
    let (saved, _) = train::load_checkpoint(dir.path()).unwrap();
    assert_eq!(saved.step, 2);
}

#[test]
fn tampered_checkpoint_is_rejected() {
    let (_, w) = tiny();
    let dir = tempfile::tempdir().unwrap();
    train::save_checkpoint(dir.path(), &TrainState::new(w), 1).unwrap();
    let p = dir.path().join(train::CKPT_STATE);
    let text = std::fs::read_to_string(&p).unwrap();
    let edited: String = text
        .lines()
        .map(|l| if l.starts_with("m_checksum") { "m_checksum = 12345".to_string() } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(&p, edited).unwrap();
    assert!(matches!(train::load_checkpoint(dir.path()), Err(Error::Format(_))));
    assert!(matches!(train::load_checkpoint(dir.path().join("missing")), Err(Error::Io { .. })));
}

#[test]
fn dataset_problems_are_reported() {
    let (net, w) = tiny();
    assert!(matches!(train::train(&net, w.clone(), &quick(1), &[]), Err(Error::Domain(_))));
    let wrong = make_dataset(1, 16, 16, 1).unwrap();
    assert!(matches!(train::train(&net, w, &quick(1), &wrong), Err(Error::Dimension(_))));
}

#[test]
fn curve_formatting_and_smoothing() {
    let (net, w) = tiny();
    let data = make_dataset(2, 32, 32, 4).unwrap();
    let (_, curve) = train::train(&net, w, &quick(3), &data).unwrap();
    let tsv = train::curve_tsv(&curve);
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], train::CURVE_HEADER);
    assert_eq!(lines.len(), 4);
    assert!(lines[1..].iter().all(|l| l.split('\t').count() == 9));
    let s = train::smoothed(&curve, 2);
    assert_eq!(s[0], curve[0].loss);
    assert!((s[2] - 0.5 * (curve[1].loss + curve[2].loss)).abs() < 1e-12);
}
