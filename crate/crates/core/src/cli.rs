//! Command-line front end. Every subcommand ends its standard output with a
//! `RESULT key=value ...` line; exit codes follow [`Error::exit_code`].

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, Subcommand};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::gradcheck::{run_suite, Tier};
use crate::imageio::{is_image_file, read_image, write_image};
use crate::metrics::{fmt_value, MetricReport};
use crate::net::{Ablation, SformerNet};
use crate::snr::{compute_snr_map_with, SnrParams};
use crate::spectral::{amp_phase, fft2d, fftshift};
use crate::synth::{load_pairs, make_dataset, save_pairs, PairedSample};
use crate::tensor::Tensor;
use crate::train::{self, curve_tsv, dataset_psnr, load_checkpoint, save_checkpoint, TrainState};
use crate::weights::{load_weights, save_weights, ModelWeights};

/// Environment variable capping worker threads (0 = serial).
pub const THREADS_ENV: &str = "SFORMER_THREADS";

pub const WEIGHTS_FILE: &str = "weights.sfw";
pub const CURVE_FILE: &str = "loss_curve.tsv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Parser, Debug)]
#[command(name = "sformer", version, about = "Underwater image enhancement with an SNR-guided Fourier transformer U-Net")]
pub struct Cli {
    /// Print the versioned table of configuration defaults and exit
    #[arg(long)]
    pub dump_defaults: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Enhance one image or every image in a directory
    Enhance {
        /// Trained weights (SFW1 file)
        #[arg(long)]
        weights: PathBuf,
        /// Input image or directory of PNG/PPM images
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory; results are written as <name>.png
        #[arg(long)]
        out: PathBuf,
        /// Run configuration file
        #[arg(long)]
        config: Option<PathBuf>,
        /// Architecture variant: bl, vit, fat, fast or full
        #[arg(long)]
        ablation: Option<Ablation>,
    },
    /// Train a model and write weights plus a loss curve
    Train {
        /// Output directory for weights, loss curve and checkpoints
        #[arg(long)]
        out: PathBuf,
        /// Paired dataset directory with input/ and gt/; synthesized when omitted
        #[arg(long)]
        data: Option<PathBuf>,
        /// Run configuration file
        #[arg(long)]
        config: Option<PathBuf>,
        /// Architecture variant: bl, vit, fat, fast or full
        #[arg(long)]
        ablation: Option<Ablation>,
        /// Override the number of optimizer steps
        #[arg(long)]
        steps: Option<usize>,
        /// Continue from the checkpoint in <out>/checkpoint
        #[arg(long)]
        resume: bool,
    },
    /// Score enhanced (or raw) inputs against references as TSV
    Eval {
        /// Paired dataset directory with input/ and gt/
        #[arg(long)]
        data: PathBuf,
        /// Weights to enhance inputs with; inputs are scored as-is when omitted
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Write the TSV report here instead of standard output
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run configuration file
        #[arg(long)]
        config: Option<PathBuf>,
        /// Architecture variant: bl, vit, fat, fast or full
        #[arg(long)]
        ablation: Option<Ablation>,
    },
    /// Generate a synthetic paired dataset (input/ and gt/ PNGs)
    Synth {
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Number of pairs
        #[arg(long)]
        n: Option<usize>,
        /// Square resolution in pixels
        #[arg(long)]
        res: Option<usize>,
        /// Base seed
        #[arg(long)]
        seed: Option<u64>,
        /// Run configuration file (synth section supplies defaults)
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences per module
    Gradcheck {
        /// Problem size: tiny or test
        #[arg(long, default_value = "test")]
        tier: Tier,
    },
    /// Write the SNR prior of an image as a grayscale PNG
    InspectSnr {
        /// Input image
        #[arg(long = "in")]
        input: PathBuf,
        /// Output PNG
        #[arg(long)]
        out: PathBuf,
        /// Box-filter size of the local mean
        #[arg(long, default_value_t = SnrParams::default().kernel)]
        kernel: usize,
    },
    /// Write centred log-amplitude and phase spectra of each colour channel
    ExportSpectra {
        /// Input image
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            if code != 0 {
                println!("RESULT status=error code={code}");
            }
            return code;
        }
    };
    match execute(cli) {
        Ok(Some(fields)) => {
            println!("RESULT status=ok{fields}");
            0
        }
        Ok(None) => 0,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("error: {e}");
            println!("RESULT status=error code={code}");
            code
        }
    }
}

/// `None` when the output must stay machine-readable as a whole (the
/// defaults dump is itself a config file).
fn execute(cli: Cli) -> Result<Option<String>> {
    if cli.dump_defaults {
        print!("{}", RunConfig::dump_defaults());
        return Ok(None);
    }
    let Some(cmd) = cli.command else {
        let _ = Cli::command().print_help();
        return Err(Error::Config {
            line: 0,
            key: "command".into(),
            message: "no subcommand given".into(),
        });
    };
    let fields = match cmd {
        Command::Enhance { weights, input, out, config, ablation } => enhance(&weights, &input, &out, config.as_deref(), ablation),
        Command::Train { out, data, config, ablation, steps, resume } => {
            train_cmd(&out, data.as_deref(), config.as_deref(), ablation, steps, resume)
        }
        Command::Eval { data, weights, out, config, ablation } => {
            eval(&data, weights.as_deref(), out.as_deref(), config.as_deref(), ablation)
        }
        Command::Synth { out, n, res, seed, config } => synth(&out, n, res, seed, config.as_deref()),
        Command::Gradcheck { tier } => gradcheck(tier),
        Command::InspectSnr { input, out, kernel } => inspect_snr(&input, &out, kernel),
        Command::ExportSpectra { input, out } => export_spectra(&input, &out),
    }?;
    Ok(Some(fields))
}

fn load_config(path: Option<&Path>, ablation: Option<Ablation>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(a) = ablation {
        cfg.model.ablation = a.name().into();
    }
    Ok(cfg)
}

/// `SFORMER_THREADS` when set, otherwise `fallback`.
pub fn thread_cap(fallback: usize) -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Error::Config {
            line: 0,
            key: THREADS_ENV.into(),
            message: format!("expected a non-negative integer, got {v:?}"),
        }),
        Err(_) => Ok(fallback),
    }
}

fn build_net(cfg: &RunConfig) -> Result<SformerNet> {
    SformerNet::new(cfg.model_config())
}

fn load_model_weights(net: &SformerNet, path: &Path) -> Result<ModelWeights<f32>> {
    let w = load_weights(path)?;
    let expected: ModelWeights<f32> = net.init_weights(0)?;
    expected.expect_layout(&w).map_err(|e| {
        Error::dim(format!(
            "{} does not match the configured {} model at {}x{}: {e}",
            path.display(),
            net.config().ablation().map_or("custom", Ablation::name),
            net.config().height,
            net.config().width
        ))
    })?;
    Ok(w)
}

fn image_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if !input.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort();
    Ok(files)
}

fn with_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Domain(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn enhance(weights: &Path, input: &Path, out: &Path, config: Option<&Path>, ablation: Option<Ablation>) -> Result<String> {
    let cfg = load_config(config, ablation)?;
    let net = build_net(&cfg)?;
    let w = load_model_weights(&net, weights)?;
    let files = image_inputs(input)?;
    let (h, wd) = (net.config().height, net.config().width);
    let one = |path: &PathBuf| -> Result<PathBuf> {
        let img = read_image(path)?;
        let (ih, iw) = (img.shape()[1], img.shape()[2]);
        if (ih, iw) != (h, wd) {
            return Err(Error::dim(format!(
                "{} is {ih}x{iw}; the configured model expects {h}x{wd}",
                path.display()
            )));
        }
        let y = net.enhance(&w, &img)?;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        let dest = out.join(format!("{stem}.png"));
        write_image(&dest, &y)?;
        Ok(dest)
    };
    let threads = thread_cap(0)?;
    let written = with_pool(threads, || {
        if threads == 0 {
            files.iter().map(one).collect::<Result<Vec<_>>>()
        } else {
            files.par_iter().map(one).collect::<Result<Vec<_>>>()
        }
    })??;
    Ok(format!(" images={} out={}", written.len(), out.display()))
}

fn training_data(cfg: &RunConfig, data: Option<&Path>) -> Result<Vec<PairedSample>> {
    match data {
        Some(dir) => load_pairs(dir),
        None => {
            let m = cfg.model_config();
            make_dataset(cfg.synth.count, m.height, m.width, cfg.synth.seed)
        }
    }
}

fn train_cmd(
    out: &Path,
    data: Option<&Path>,
    config: Option<&Path>,
    ablation: Option<Ablation>,
    steps: Option<usize>,
    resume: bool,
) -> Result<String> {
    let cfg = load_config(config, ablation)?;
    let net = build_net(&cfg)?;
    let pairs = training_data(&cfg, data)?;
    let mut tc = cfg.train_config();
    if let Some(s) = steps {
        tc.steps = s;
    }
    tc.threads = thread_cap(tc.threads)?;
    let ckpt = out.join(CHECKPOINT_DIR);
    tc.checkpoint_dir = Some(ckpt.clone());
    let mut state = if resume {
        let (state, _) = load_checkpoint(&ckpt)?;
        net.init_weights::<f32>(0)?.expect_layout(&state.weights)?;
        state
    } else {
        TrainState::new(net.init_weights(cfg.train.init_seed)?)
    };
    let first = state.step;
    let curve = train::train_from(&net, &mut state, &tc, &pairs, |r| {
        if r.step % 10 == 0 {
            eprintln!("step {:>6}  lr {:.3e}  loss {:.6}", r.step, r.lr, r.loss);
        }
    })?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    save_weights(&state.weights, out.join(WEIGHTS_FILE))?;
    save_checkpoint(&ckpt, &state, cfg.train.init_seed)?;
    let curve_path = out.join(CURVE_FILE);
    let mut text = curve_tsv(&curve);
    if first > 0 {
        // Resumed runs append to the existing curve without repeating the header.
        let prev = std::fs::read_to_string(&curve_path).unwrap_or_default();
        text = prev + text.split_once('\n').map_or("", |(_, rows)| rows);
    }
    std::fs::write(&curve_path, text).map_err(|e| Error::io(&curve_path, e))?;
    let psnr = dataset_psnr(&net, &state.weights, &pairs)?;
    let last = curve.last().map_or(f64::NAN, |r| r.loss);
    Ok(format!(
        " steps={} final_loss={last:.6} train_psnr={} weights={}",
        state.step,
        fmt_value(psnr),
        out.join(WEIGHTS_FILE).display()
    ))
}

/// Header of the evaluation report.
pub const EVAL_HEADER: &str = "id\tpsnr\tssim\tdelta_e\tuciqe";

fn eval(
    data: &Path,
    weights: Option<&Path>,
    out: Option<&Path>,
    config: Option<&Path>,
    ablation: Option<Ablation>,
) -> Result<String> {
    let pairs = load_pairs(data)?;
    let model = match weights {
        Some(path) => {
            let cfg = load_config(config, ablation)?;
            let net = build_net(&cfg)?;
            let w = load_model_weights(&net, path)?;
            Some((net, w))
        }
        None => None,
    };
    let threads = thread_cap(0)?;
    let score = |p: &PairedSample| -> Result<MetricReport> {
        let pred = match &model {
            Some((net, w)) => net.enhance(w, &p.degraded)?,
            None => p.degraded.clone(),
        };
        MetricReport::compute(&pred, &p.reference)
    };
    let reports = with_pool(threads, || {
        if threads == 0 {
            pairs.iter().map(score).collect::<Result<Vec<_>>>()
        } else {
            pairs.par_iter().map(score).collect::<Result<Vec<_>>>()
        }
    })??;
    let mut tsv = String::from(EVAL_HEADER);
    tsv.push('\n');
    let row = |tsv: &mut String, id: &str, r: &MetricReport| {
        let _ = writeln!(
            tsv,
            "{id}\t{}\t{}\t{}\t{}",
            fmt_value(r.psnr),
            fmt_value(r.ssim),
            fmt_value(r.delta_e),
            fmt_value(r.uciqe)
        );
    };
    for (p, r) in pairs.iter().zip(&reports) {
        row(&mut tsv, &p.id, r);
    }
    let mean = MetricReport::mean(&reports);
    row(&mut tsv, "MEAN", &mean);
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            std::fs::write(path, &tsv).map_err(|e| Error::io(path, e))?
        }
        None => print!("{tsv}"),
    }
    Ok(format!(
        " pairs={} psnr={} ssim={} delta_e={} uciqe={}",
        reports.len(),
        fmt_value(mean.psnr),
        fmt_value(mean.ssim),
        fmt_value(mean.delta_e),
        fmt_value(mean.uciqe)
    ))
}

/// SHA-256 over the relative paths and contents of every file below `dir`,
/// visited in sorted order.
pub fn tree_digest(dir: &Path) -> Result<String> {
    fn walk(root: &Path, dir: &Path, files: &mut Vec<PathBuf>) -> Result<()> {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, files)?;
            } else {
                files.push(p);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    let mut h = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(dir).unwrap_or(&f);
        h.update(rel.to_string_lossy().as_bytes());
        h.update(std::fs::read(&f).map_err(|e| Error::io(&f, e))?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn synth(out: &Path, n: Option<usize>, res: Option<usize>, seed: Option<u64>, config: Option<&Path>) -> Result<String> {
    let cfg = load_config(config, None)?;
    let n = n.unwrap_or(cfg.synth.count);
    let res = res.unwrap_or(cfg.synth.resolution);
    let seed = seed.unwrap_or(cfg.synth.seed);
    let pairs = make_dataset(n, res, res, seed)?;
    save_pairs(out, &pairs)?;
    Ok(format!(" pairs={n} res={res} seed={seed} sha256={}", tree_digest(out)?))
}

fn gradcheck(tier: Tier) -> Result<String> {
    let suite = run_suite(tier)?;
    println!("module\tmax_rel_error\tcoords\tthreshold\tstatus");
    for e in &suite {
        println!(
            "{}\t{:.3e}\t{}\t{:.0e}\t{}",
            e.name,
            e.report.max_rel_error,
            e.report.checked,
            e.threshold,
            if e.passed() { "ok" } else { "FAIL" }
        );
    }
    let worst = suite.iter().map(|e| e.report.max_rel_error).fold(0.0, f64::max);
    if let Some(bad) = suite.iter().find(|e| !e.passed()) {
        return Err(Error::numeric(format!(
            "gradient check of `{}` exceeded {:.0e}: {:.3e}",
            bad.name, bad.threshold, bad.report.max_rel_error
        )));
    }
    Ok(format!(" modules={} max_rel_error={worst:.3e}", suite.len()))
}

fn inspect_snr(input: &Path, out: &Path, kernel: usize) -> Result<String> {
    let img = read_image(input)?;
    let params = SnrParams {
        kernel,
        ..SnrParams::default()
    };
    let map = compute_snr_map_with(&img, &params)?;
    let v = map.values();
    let (lo, hi) = v
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(f64::from(x)), hi.max(f64::from(x))));
    let scaled = v.map(|x| x / params.s_max as f32);
    write_image(out, &scaled)?;
    Ok(format!(" mean={:.6} min={lo:.6} max={hi:.6} out={}", map.mean(), out.display()))
}

fn export_spectra(input: &Path, out: &Path) -> Result<String> {
    let img = read_image(input)?;
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut files = 0;
    for (c, name) in ["r", "g", "b"].iter().enumerate() {
        let plane = Tensor::new(vec![h, w], img.data()[c * h * w..(c + 1) * h * w].to_vec())?;
        let sp = amp_phase(&fft2d(&plane)?)?;
        let log_amp = fftshift(&sp.amplitude.map(|a| a.ln_1p()))?;
        let peak = log_amp.data().iter().copied().fold(0.0f32, f32::max).max(f32::MIN_POSITIVE);
        write_image(out.join(format!("amplitude_{name}.png")), &log_amp.map(|a| a / peak))?;
        let phase = fftshift(&sp.phase.map(|p| (p + std::f32::consts::PI) / std::f32::consts::TAU))?;
        write_image(out.join(format!("phase_{name}.png")), &phase)?;
        files += 2;
    }
    Ok(format!(" files={files} out={}", out.display()))
}
