//! Measured quantities for the kernel and spectral suites. The library runs
//! in f32 while the oracles run in f64.

use rand::Rng;
use sformer::fast::FastBlock;
use sformer::fat::{unfold, AffnGates, FatBottleneck, FatConfig};
use sformer::net::{Ablation, ModelConfig, SformerNet};
use sformer::spectral::{amp_phase, compose, fft2d, ifft2d};
use sformer::weights::Initializer;
use sformer::{Binder, ModelWeights, Real, Tape, Tensor};

use super::*;

#[derive(Debug, Default)]
pub struct KernelErrors {
    pub conv: f64,
    pub pool: f64,
    pub tconv: f64,
}

fn f32_slice(t: &Tensor<f32>) -> Vec<f64> {
    t.data().iter().map(|&v| f64::from(v)).collect()
}

/// One random convolution instance: returns (library, oracle).
pub fn conv_instance(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let n = r.random_range(1..=2);
    let c = r.random_range(1..=4);
    let depthwise = c > 1 && r.random_bool(0.3);
    let groups = if depthwise { c } else { 1 };
    let c_out = groups * r.random_range(1..=3);
    let (h, w) = (r.random_range(3..=8), r.random_range(3..=8));
    let k = r.random_range(1..=3.min(h).min(w));
    let stride = r.random_range(1..=2);
    let pad = r.random_range(0..=k / 2);
    let x = uniform(&[n, c, h, w], -1.0, 1.0, seed ^ 0xA);
    let wt = uniform(&[c_out, c / groups, k, k], -1.0, 1.0, seed ^ 0xB);
    let bias: Vec<f64> = (0..c_out).map(|_| r.random_range(-1.0..1.0)).collect();
    let oracle = naive_conv(&x, &wt, Some(&bias), stride, pad, groups);

    let t = Tape::<f32>::new();
    let xv = t.constant(x.cast());
    let wv = t.constant(wt.cast());
    let bv = t.constant(Tensor::from_f64(&[c_out], &bias).unwrap());
    let y = t.conv2d(xv, wv, Some(bv), stride, pad, groups).unwrap();
    (f32_slice(&t.value(y)), oracle)
}

pub fn pool_instance(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let (n, c) = (r.random_range(1..=2), r.random_range(1..=3));
    // Spatial dims are multiples of the stride, the operation's precondition.
    let stride = r.random_range(1..=2);
    let (h, w) = (stride * r.random_range(1..=8 / stride), stride * r.random_range(1..=8 / stride));
    let k = r.random_range(1..=2.min(h).min(w));
    let x = uniform(&[n, c, h, w], -1.0, 1.0, seed ^ 0xC);
    let y = sformer::nn::max_pool2d(&x.cast::<f32>(), k, stride).unwrap();
    (f32_slice(&y), naive_max_pool(&x, k, stride))
}

pub fn tconv_instance(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng(seed);
    let (n, ci, co) = (r.random_range(1..=2), r.random_range(1..=4), r.random_range(1..=4));
    let (h, w) = (r.random_range(1..=4), r.random_range(1..=4));
    let k = r.random_range(1..=2);
    let x = uniform(&[n, ci, h, w], -1.0, 1.0, seed ^ 0xD);
    let wt = uniform(&[ci, co, k, k], -1.0, 1.0, seed ^ 0xE);
    let bias: Vec<f64> = (0..co).map(|_| r.random_range(-1.0..1.0)).collect();
    let b = Tensor::from_f64(&[co], &bias).unwrap();
    let y = sformer::nn::transposed_conv2d(&x.cast::<f32>(), &wt.cast(), Some(&b), k).unwrap();
    (f32_slice(&y), naive_tconv(&x, &wt, Some(&bias), k))
}

pub fn kernel_suite(instances: u64) -> KernelErrors {
    let mut e = KernelErrors::default();
    for s in 0..instances {
        let (a, b) = conv_instance(s);
        e.conv = e.conv.max(max_abs(&a, &b));
        let (a, b) = pool_instance(s);
        e.pool = e.pool.max(max_abs(&a, &b));
        let (a, b) = tconv_instance(s);
        e.tconv = e.tconv.max(max_abs(&a, &b));
    }
    e
}

#[derive(Debug, Default)]
pub struct SpectralErrors {
    /// Max abs error of ifft(fft(x)) against x.
    pub roundtrip: f64,
    /// Relative gap between Σ|x|² and Σ|X|²/(HW).
    pub parseval: f64,
    /// Max abs error against the direct DFT on 8×8, relative to the largest
    /// coefficient magnitude (at least 1).
    pub dft: f64,
}

pub fn spectral_suite(seeds: u64) -> SpectralErrors {
    let mut e = SpectralErrors::default();
    for seed in 0..seeds {
        for &(h, w) in &[(8usize, 8usize), (16, 32), (6, 10)] {
            let x = uniform(&[2, h, w], -1.0, 1.0, seed * 31 + h as u64);
            let xf: Tensor<f32> = x.cast();
            let z = fft2d(&xf).unwrap();
            let back = ifft2d(&z).unwrap();
            e.roundtrip = e.roundtrip.max(back.re.max_abs_diff(&xf)).max(back.im.data().iter().fold(0.0, |m, v| m.max(v.abs() as f64)));
            let ex: f64 = x.data().iter().map(|v| v * v).sum();
            let ez: f64 = z.re.data().iter().zip(z.im.data()).map(|(r, i)| f64::from(r * r + i * i)).sum::<f64>() / (h * w) as f64;
            e.parseval = e.parseval.max((ex - ez).abs() / ex);
        }
        let x = uniform(&[8, 8], -1.0, 1.0, 1000 + seed);
        let (re, im) = direct_dft(x.data(), 8, 8);
        let z = fft2d(&x.cast::<f32>()).unwrap();
        let scale = re.iter().zip(&im).map(|(a, b)| a.hypot(*b)).fold(1.0, f64::max);
        let err = max_abs(&f32_slice(&z.re), &re).max(max_abs(&f32_slice(&z.im), &im));
        e.dft = e.dft.max(err / scale);
    }
    e
}

/// amp_phase followed by compose, and the reverse, on random spectra.
pub fn polar_roundtrip(seed: u64) -> (f64, f64) {
    let x: Tensor<f32> = uniform(&[8, 8], -1.0, 1.0, seed).cast();
    let z = fft2d(&x).unwrap();
    let p = amp_phase(&z).unwrap();
    let z2 = compose(&p).unwrap();
    let e1 = z2.re.max_abs_diff(&z.re).max(z2.im.max_abs_diff(&z.im));
    let p2 = amp_phase(&z2).unwrap();
    let mut e2 = p2.amplitude.max_abs_diff(&p.amplitude);
    for ((a, b), amp) in p2.phase.data().iter().zip(p.phase.data()).zip(p.amplitude.data()) {
        // Phase of a vanishing coefficient is arbitrary.
        if *amp > 1e-3 {
            let d = (a - b).abs();
            e2 = e2.max(f64::from(d.min(std::f32::consts::TAU - d)));
        }
    }
    (e1, e2)
}

// ---- structural identities -------------------------------------------------

pub fn zero<T: Real>(w: &mut ModelWeights<T>, names: &[&str]) {
    for n in names {
        let z = Tensor::zeros(w.value(n).unwrap().shape());
        w.set(n, z).unwrap();
    }
}

pub fn eye(n: usize) -> Tensor<f64> {
    Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
}

/// FAST block with zeroed value projection and MLP output: max |out − in|.
pub fn fast_identity_error(seed: u64) -> f64 {
    let blk = FastBlock::new("fast", 8);
    let mut w = ModelWeights::<f64>::new();
    blk.register(&mut w, &mut Initializer::new(seed)).unwrap();
    zero(&mut w, &["fast.v.w", "fast.v.b", "fast.mlp2.w", "fast.mlp2.b"]);
    let x = uniform(&[8, 16, 16], -2.0, 2.0, seed + 10);
    let s = uniform(&[8, 16, 16], -2.0, 2.0, seed + 20);
    blk.apply(&w, &x, &s).unwrap().max_abs_diff(&x)
}

/// FAT with zeroed attention outputs and depthwise branch, and an identity
/// de-embedding: max |out − unfold(T_R + PE)|.
pub fn fat_identity_error(seed: u64) -> f64 {
    // d = C·p² so that an identity de-embedding is square.
    let cfg = FatConfig::new(4, (4, 4), 2, 1, 2, 16).unwrap();
    let f = FatBottleneck::new("fat", cfg.clone());
    let mut w = ModelWeights::<f64>::new();
    f.register(&mut w, &mut Initializer::new(seed)).unwrap();
    zero(
        &mut w,
        &[
            "fat.xattn.v.w", "fat.xattn.v.b", "fat.xattn.o.w", "fat.xattn.o.b",
            "fat.layer0.attn.o.w", "fat.layer0.attn.o.b", "fat.layer0.dconv.w", "fat.layer0.dconv.b",
        ],
    );
    w.set("fat.deembed.w", eye(16)).unwrap();
    zero(&mut w, &["fat.deembed.b"]);
    let tape = Tape::new();
    let b = Binder::frozen(&tape, &w);
    let r = tape.constant(uniform(&[4, 4, 4], -1.0, 1.0, seed + 1));
    let s = tape.constant(uniform(&[4, 4, 4], -1.0, 1.0, seed + 2));
    let t_r = f.patch_embed(&b, r, "rgb").unwrap();
    let expected = tape.add(t_r, b.param("fat.pe").unwrap()).unwrap();
    let out = tape.value(f.forward(&b, r, s).unwrap());
    out.max_abs_diff(&tape.value(unfold(&tape, expected, &cfg).unwrap()))
}

/// AFFN with both gates held open: max |fused − LN(P')|.
pub fn affn_open_gate_error(seed: u64) -> f64 {
    let f = FatBottleneck::new("fat", FatConfig::new(8, (8, 8), 2, 1, 2, 16).unwrap());
    let mut w = ModelWeights::<f64>::new();
    f.register(&mut w, &mut Initializer::new(seed)).unwrap();
    let tape = Tape::new();
    let b = Binder::frozen(&tape, &w);
    let p = tape.constant(uniform(&[16, 16], -2.0, 2.0, seed + 1));
    let parts = f.affn_parts(&b, 0, p, AffnGates::Open).unwrap();
    tape.value(parts.fused).max_abs_diff(&tape.value(parts.normed))
}

/// AFFN with a zeroed depthwise branch: max |out − P'| for one layer.
pub fn affn_zero_branch_error(seed: u64) -> f64 {
    let f = FatBottleneck::new("fat", FatConfig::new(8, (8, 8), 2, 1, 2, 16).unwrap());
    let mut w = ModelWeights::<f64>::new();
    f.register(&mut w, &mut Initializer::new(seed)).unwrap();
    zero(&mut w, &["fat.layer0.dconv.w", "fat.layer0.dconv.b"]);
    let tape = Tape::new();
    let b = Binder::frozen(&tape, &w);
    let p = tape.constant(uniform(&[16, 16], -2.0, 2.0, seed + 1));
    let parts = f.affn_parts(&b, 0, p, AffnGates::Learned).unwrap();
    tape.value(parts.out).max_abs_diff(&tape.value(p))
}

/// Test-tier network with a zeroed output head: max |out − in|.
pub fn network_identity_error(a: Ablation, seed: u64) -> f64 {
    let net = SformerNet::new(ModelConfig::test_tier().with_ablation(a)).unwrap();
    let mut w = net.init_weights::<f32>(seed).unwrap();
    zero(&mut w, &["head.w", "head.b"]);
    let x = image_f32(64, 64, seed + 6);
    net.enhance(&w, &x).unwrap().max_abs_diff(&x)
}

/// Max |F_low + F_high − LN(P')| over every layer of a two-layer FAT run in
/// f32 on random tokens.
pub fn affn_decomposition_error(seed: u64) -> f64 {
    let cfg = FatConfig::new(8, (8, 8), 2, 2, 2, 16).unwrap();
    let f = FatBottleneck::new("fat", cfg);
    let mut w = ModelWeights::<f32>::new();
    f.register(&mut w, &mut Initializer::new(seed)).unwrap();
    let tape = Tape::new();
    let b = Binder::frozen(&tape, &w);
    let mut p = tape.constant(uniform(&[16, 16], -3.0, 3.0, seed + 1).cast());
    let mut err = 0.0f64;
    for i in 0..2 {
        p = f.mha_block(&b, i, p).unwrap().out;
        let parts = f.affn_parts(&b, i, p, AffnGates::Learned).unwrap();
        let sum = tape.value(tape.add(parts.low, parts.high).unwrap());
        err = err.max(sum.max_abs_diff(&tape.value(parts.normed)));
        p = parts.out;
    }
    err
}
