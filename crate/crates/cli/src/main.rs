use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use denseam::data::{
    load_mnist_images, mnist_dir, prepare_images, write_idx_f64, DataKind, Images, MNIST_TEST_IMAGES,
    MNIST_TRAIN_IMAGES,
};
use denseam::harness::{
    budget_warning, collapse_experiment, denoise_compare, emit_all, emit_denoise, load_model, lr_sweep,
    save_model, train_cell, Cell, ExperimentConfig, Source, SweepResult,
};
use denseam::oracle::oracle_suite;
use denseam::{Error, RngState};

const EXIT_CONFIG: u8 = 1;
const EXIT_TOLERANCE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_MNIST_MISSING: u8 = 4;

#[derive(Parser)]
#[command(name = "denseam", version, about = "Scale-transfer experiments for shallow dense associative memories")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replaces the config's seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweep cells (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Allow softmax with SGD using the experimental recipe.
    #[arg(long, global = true)]
    override_softmax_sgd: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one cell and save the final model.
    Train {
        /// Scale from the ladder (default: the first).
        #[arg(long)]
        scale: Option<usize>,
        /// Base learning rate (default: first grid point).
        #[arg(long)]
        eta0: Option<f64>,
    },
    /// Learning-rate sweep over every scale and grid point.
    Sweep,
    /// Epoch-aligned traces at one base learning rate.
    Collapse {
        #[arg(long)]
        eta0: Option<f64>,
    },
    /// Compare a full-size and a coarse denoiser on corrupted MNIST digits.
    DenoiseCompare {
        /// Model trained at full resolution (JSON from `train`).
        #[arg(long)]
        big: PathBuf,
        /// Model trained on `block`-downsampled digits.
        #[arg(long)]
        small: PathBuf,
        #[arg(long)]
        block: usize,
        #[arg(long, default_value_t = 8)]
        images: usize,
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        steps: usize,
        #[arg(long)]
        mnist_dir: Option<PathBuf>,
    },
    /// Closed-form predictions against Monte-Carlo estimates.
    OracleCheck,
    /// Downsample and center MNIST, writing f64 IDX files.
    MnistPrep {
        /// Plaquette sizes.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        blocks: Vec<usize>,
        #[arg(long)]
        mnist_dir: Option<PathBuf>,
    },
}

enum Failure {
    Core(Error),
    MnistMissing(String),
    Tolerance(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type Outcome<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Io { .. } | Error::Format { .. } => EXIT_IO,
                _ => EXIT_CONFIG,
            };
            ExitCode::from(code)
        }
        Err(Failure::MnistMissing(msg)) => {
            eprintln!("skipped: {msg}");
            ExitCode::from(EXIT_MNIST_MISSING)
        }
        Err(Failure::Tolerance(msg)) => {
            eprintln!("tolerance breach: {msg}");
            ExitCode::from(EXIT_TOLERANCE)
        }
    }
}

fn run(cli: Cli) -> Outcome<()> {
    let g = cli.global;
    let threads = g.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    match cli.command {
        Command::OracleCheck => oracle_check(g.seed.unwrap_or(0), g.out.as_deref()),
        Command::MnistPrep { blocks, mnist_dir } => mnist_prep(&blocks, mnist_dir.as_deref(), &out_dir(&g, None)),
        Command::DenoiseCompare { big, small, block, images, noise, steps, mnist_dir } => {
            let out = out_dir(&g, None);
            let imgs = load_mnist(mnist_dir.as_deref(), MNIST_TEST_IMAGES)?;
            let prepared = prepare_images(&imgs, 1);
            let count = images.min(prepared.x.cols());
            let clean = prepared.x.select_cols(&(0..count).collect::<Vec<_>>());
            let (big, small) = (load_model(&big)?, load_model(&small)?);
            let mut rng = RngState::new(g.seed.unwrap_or(0));
            let report = denoise_compare(&big, &small, &clean, block, noise, steps, &mut rng)?;
            let paths = emit_denoise(&report, &prepared.mean, &out)?;
            println!(
                "block {block}: rms difference {:.4e}, big error {:.4e}, small error {:.4e}",
                report.rms_difference, report.big_error_rms, report.small_error_rms
            );
            print_paths(&paths);
            Ok(())
        }
        Command::Train { scale, eta0 } => {
            let cfg = load_config(&g)?;
            let images = mnist_for(&cfg)?;
            let cell = Cell {
                scale: scale.unwrap_or(cfg.sweep.scales[0]),
                eta0: eta0.unwrap_or(cfg.eta_grid()[0]),
                seed: cfg.sweep.seeds[0],
            };
            let out = train_cell(&cfg, source(&images), cell)?;
            let r = &out.result;
            println!(
                "scale {} eta0 {:e}: initial MSE {:.6}, final MSE {}",
                cell.scale,
                cell.eta0,
                r.initial_mse,
                r.final_mse().map_or("diverged".into(), |m| format!("{m:.6}"))
            );
            let mut result = SweepResult::empty(&cfg.name);
            result.scales = vec![cell.scale];
            result.eta_grid = vec![cell.eta0];
            result.seeds = vec![cell.seed];
            result.cells = vec![out.result];
            let dir = out_dir(&g, Some(&cfg));
            let mut paths = emit_all(&cfg, &result, &dir)?;
            let model_path = dir.join(format!("{}_model.json", cfg.name));
            save_model(&out.model, &model_path)?;
            paths.push(model_path);
            print_paths(&paths);
            Ok(())
        }
        Command::Sweep => {
            let cfg = load_config(&g)?;
            warn_budget(&cfg, threads);
            let images = mnist_for(&cfg)?;
            let result = lr_sweep(&cfg, source(&images))?;
            for &s in &result.scales {
                println!(
                    "scale {s}: argmin eta0 {}, instability onset {}",
                    result.argmin_eta(s).map_or("-".into(), |e| format!("{e:e}")),
                    result
                        .instability_onset(s)
                        .map_or("none".into(), |i| format!("{:e}", result.eta_grid[i]))
                );
            }
            print_paths(&emit_all(&cfg, &result, &out_dir(&g, Some(&cfg)))?);
            Ok(())
        }
        Command::Collapse { eta0 } => {
            let cfg = load_config(&g)?;
            warn_budget(&cfg, threads);
            let images = mnist_for(&cfg)?;
            let eta0 = eta0.unwrap_or(cfg.eta_grid()[0]);
            let result = collapse_experiment(&cfg, source(&images), eta0)?;
            for c in &result.cells {
                println!(
                    "scale {}: final MSE {}",
                    c.cell.scale,
                    c.final_mse().map_or("diverged".into(), |m| format!("{m:.6}"))
                );
            }
            print_paths(&emit_all(&cfg, &result, &out_dir(&g, Some(&cfg)))?);
            Ok(())
        }
    }
}

fn load_config(g: &Global) -> Outcome<ExperimentConfig> {
    let path = g
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("this subcommand needs --config <path>".into()))?;
    let mut cfg = ExperimentConfig::read(path)?;
    if let Some(seed) = g.seed {
        cfg.sweep.seeds = vec![seed];
    }
    if g.override_softmax_sgd {
        cfg.optimizer.override_softmax_sgd = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(g: &Global, cfg: Option<&ExperimentConfig>) -> PathBuf {
    g.out
        .clone()
        .or_else(|| cfg.map(|c| c.output.dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn warn_budget(cfg: &ExperimentConfig, threads: usize) {
    if let Some(msg) = budget_warning(cfg, threads) {
        eprintln!("warning: {msg}");
    }
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn load_mnist(explicit: Option<&Path>, file: &str) -> Outcome<Images> {
    let dir = mnist_dir(explicit).ok_or_else(|| {
        Failure::MnistMissing("no MNIST directory; set DENSEAM_MNIST_DIR or pass --mnist-dir".into())
    })?;
    let path = dir.join(file);
    if !path.exists() {
        return Err(Failure::MnistMissing(format!("{} not found", path.display())));
    }
    Ok(load_mnist_images(&path)?)
}

fn mnist_for(cfg: &ExperimentConfig) -> Outcome<Option<Images>> {
    match &cfg.data.kind {
        DataKind::Mnist { mnist_dir, .. } => load_mnist(mnist_dir.as_deref(), MNIST_TRAIN_IMAGES).map(Some),
        _ => Ok(None),
    }
}

fn source(images: &Option<Images>) -> Source<'_> {
    images.as_ref().map_or(Source::Synthetic, Source::Mnist)
}

fn oracle_check(seed: u64, out: Option<&Path>) -> Outcome<()> {
    let rows = oracle_suite(seed);
    let mut failed = Vec::new();
    for r in &rows {
        let tag = if r.passed() { "ok  " } else { "FAIL" };
        println!(
            "{tag} {:<52} predicted {:>14.6e} estimated {:>14.6e} rel.err {:>7.3}% (tol {:.0}%)",
            r.name,
            r.predicted,
            r.estimated,
            100.0 * r.relative_error,
            100.0 * r.tolerance
        );
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("oracle_check.json");
        let json = serde_json::to_string_pretty(&rows).expect("oracle rows serialize");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        println!("wrote {}", path.display());
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Tolerance(failed.join(", ")))
    }
}

fn mnist_prep(blocks: &[usize], explicit: Option<&Path>, out: &Path) -> Outcome<()> {
    if let Some(&bad) = blocks.iter().find(|&&j| j == 0 || j > 28) {
        return Err(Error::Config(format!("block {bad} must lie in 1..=28")).into());
    }
    let mut sets = Vec::new();
    for file in [MNIST_TRAIN_IMAGES, MNIST_TEST_IMAGES] {
        match load_mnist(explicit, file) {
            Ok(images) => sets.push((file, images)),
            Err(Failure::MnistMissing(_)) if file == MNIST_TEST_IMAGES && !sets.is_empty() => {}
            Err(e) => return Err(e),
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (file, images) in &sets {
        let stem = if *file == MNIST_TRAIN_IMAGES { "train" } else { "test" };
        for &j in blocks {
            let p = prepare_images(images, j);
            let side = (p.x.rows() as f64).sqrt().round() as usize;
            // Image-major layout, matching the source files.
            let x_path = out.join(format!("{stem}_j{j}_images.idx"));
            write_idx_f64(&x_path, &[p.x.cols(), side, side], p.x.transpose().as_slice())?;
            let m_path = out.join(format!("{stem}_j{j}_mean.idx"));
            write_idx_f64(&m_path, &[side, side], &p.mean)?;
            println!("{stem} j={j}: N={} images={} -> {}", p.x.rows(), p.x.cols(), x_path.display());
        }
    }
    Ok(())
}
