//! `zicopula` command-line front end.

mod config;

use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Mutex;

use config::{parse_mask, parse_mode, pick, require, resolve_seed, FileConfig, ModelKind};
use zicopula::baselines::{fit_gmm, fit_kde_multi, tune_gmm, tune_kde, REG_FLOOR};
use zicopula::bench::{self, BenchConfig, Preset, ResultsAppender, Variant};
use zicopula::credit::ingest_credit;
use zicopula::dataset::write_column;
use zicopula::model_file::{FittedModel, ModelFile};
use zicopula::rgd::DEFAULT_MC_SAMPLES;
use zicopula::stats::{derive_seed, EIGEN_FLOOR};
use zicopula::synth::{make_ground_truth, sample_dataset, DataKind};
use zicopula::zibt::{fit_zibt, LikelihoodMode, ZibtConfig};
use zicopula::zicar::{fit_zicar, MaskKind, ZicarConfig};
use zicopula::{Dataset, Error, ErrorClass, Result};

#[derive(Parser, Debug)]
#[command(name = "zicopula", version, about = "Copula density models for zero-inflated data")]
struct Cli {
    /// JSON file with default settings (flags take precedence).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// More logging (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model to a CSV dataset and write a model file.
    Fit(FitArgs),
    /// Write one negative log-likelihood per row of a CSV dataset.
    Score(ScoreArgs),
    /// Sample a synthetic dataset from a random ground truth.
    Synth(SynthArgs),
    /// Run the synthetic anomaly-detection benchmark.
    Bench(BenchArgs),
    /// Extract and split the UCI credit-card table.
    IngestCredit(IngestArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    /// zicar, zibt, gmm or kde.
    #[arg(long, value_parser = clap::value_parser!(ModelKind))]
    model: Option<ModelKind>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// rbm or bernoulli (zicar).
    #[arg(long)]
    mask: Option<String>,
    /// Estimate Σ without the pairwise MLE.
    #[arg(long)]
    no_mle: bool,
    /// Skip the marginal rescaling pass.
    #[arg(long)]
    no_rescale: bool,
    /// exact or approx (zibt).
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    mc_samples: Option<usize>,
    /// Smallest eigenvalue kept when repairing Σ.
    #[arg(long)]
    eigen_floor: Option<f64>,
    /// GMM component count; tuned on a validation split when absent.
    #[arg(long)]
    gmm_k: Option<usize>,
    #[arg(long)]
    gmm_reg: Option<f64>,
    /// KDE bandwidth multiplier; tuned on a validation split when absent.
    #[arg(long)]
    kde_multiplier: Option<f64>,
    /// Replace negative values by zero instead of failing.
    #[arg(long)]
    clip_negatives: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// Model file written by `fit`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    clip_negatives: bool,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// zicar or zibt.
    #[arg(long, value_parser = clap::value_parser!(DataKind))]
    kind: Option<DataKind>,
    #[arg(long = "dim", visible_alias = "D")]
    dim: Option<usize>,
    /// Number of rows.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the true correlation matrix as CSV.
    #[arg(long)]
    sigma_out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_parser = clap::value_parser!(DataKind))]
    kind: Option<DataKind>,
    #[arg(long = "dim", visible_alias = "D")]
    dim: Option<usize>,
    /// full (10000 / 5000+5000, 15 seeds, the default) or desk (2000 / 1000+1000, 5 seeds).
    #[arg(long, value_parser = clap::value_parser!(Preset))]
    preset: Option<Preset>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_normal: Option<usize>,
    #[arg(long)]
    n_abnormal: Option<usize>,
    /// Comma-separated seed list (overrides the preset count).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Comma-separated variant tags (default: all).
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(Variant))]
    variants: Option<Vec<Variant>>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    eigen_floor: Option<f64>,
    /// Results CSV, appended to.
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Raw UCI credit CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    train_out: Option<PathBuf>,
    #[arg(long)]
    test_out: Option<PathBuf>,
    /// Keep only PAY_AMT1 and BILL_AMT1.
    #[arg(long)]
    small: bool,
    #[arg(long)]
    seed: Option<u64>,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

fn report(code: &str, msg: &str) {
    let one_line: String = msg.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error[{code}]: {one_line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            report("E_USAGE", first);
            return ExitCode::from(1);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.code(), &e.to_string());
            ExitCode::from(exit_code(e.class()))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    if let Some(jobs) = pick(cli.jobs, file.jobs) {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Fit(a) => cmd_fit(a, &file),
        Command::Score(a) => cmd_score(a, &file),
        Command::Synth(a) => cmd_synth(a, &file),
        Command::Bench(a) => cmd_bench(a, &file),
        Command::IngestCredit(a) => cmd_ingest(a, &file),
    }
}

fn load_data(path: &Path, clip: bool) -> Result<Dataset> {
    let mut data = Dataset::read_csv(path)?;
    if clip {
        let n = data.clip_negatives();
        if n > 0 {
            log::warn!("{}: replaced {n} negative values by zero", path.display());
        }
    }
    data.check_nonnegative()?;
    Ok(data)
}

/// `false` when the flag is set, else the config value, else `true`.
fn enabled(disable_flag: bool, file: Option<bool>) -> bool {
    if disable_flag {
        false
    } else {
        file.unwrap_or(true)
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn cmd_fit(a: FitArgs, f: &FileConfig) -> Result<()> {
    let kind = require(pick(a.model, f.model), "model")?;
    let train = require(pick(a.train, f.train.clone()), "train")?;
    let out = require(pick(a.out, f.out.clone()), "out")?;
    let seed = resolve_seed(a.seed, f.seed)?;
    let clip = a.clip_negatives || f.clip_negatives.unwrap_or(false);
    let data = load_data(&train, clip)?;
    let use_mle = enabled(a.no_mle, f.use_mle);
    let use_rescale = enabled(a.no_rescale, f.use_rescale);
    let eigen_floor = pick(a.eigen_floor, f.eigen_floor).unwrap_or(EIGEN_FLOOR);
    let model = match kind {
        ModelKind::Zicar => {
            let mask_kind = match a.mask {
                Some(s) => parse_mask(&s)?,
                None => f.mask.unwrap_or(MaskKind::Rbm),
            };
            let cfg = ZicarConfig {
                mask_kind,
                use_mle,
                use_rescale,
                eigen_floor,
                seed,
                ..ZicarConfig::default()
            };
            FittedModel::Zicar(fit_zicar(&data, &cfg)?)
        }
        ModelKind::Zibt => {
            let mode = match a.mode {
                Some(s) => parse_mode(&s)?,
                None => f.mode.unwrap_or(LikelihoodMode::Approx),
            };
            let cfg = ZibtConfig {
                use_mle,
                use_rescale,
                mode,
                mc_samples: pick(a.mc_samples, f.mc_samples).unwrap_or(DEFAULT_MC_SAMPLES),
                eigen_floor,
                seed,
                ..ZibtConfig::default()
            };
            FittedModel::Zibt(fit_zibt(&data, &cfg)?)
        }
        ModelKind::Gmm => {
            let reg = pick(a.gmm_reg, f.gmm_reg).unwrap_or(REG_FLOOR);
            match pick(a.gmm_k, f.gmm_k) {
                Some(k) => FittedModel::Gmm(fit_gmm(&data, k, reg, seed)?),
                None => {
                    let (m, k) = tune_gmm(&data, reg, seed)?;
                    println!("tuned k = {k}");
                    FittedModel::Gmm(m)
                }
            }
        }
        ModelKind::Kde => match pick(a.kde_multiplier, f.kde_multiplier) {
            Some(m) => FittedModel::Kde(fit_kde_multi(&data, m)?),
            None => {
                let (m, mult) = tune_kde(&data, seed)?;
                println!("tuned bandwidth multiplier = {mult}");
                FittedModel::Kde(m)
            }
        },
    };
    ModelFile::new(model.clone()).write(&out)?;
    print_summary(&model, &data);
    println!("wrote {}", out.display());
    Ok(())
}

fn print_summary(model: &FittedModel, data: &Dataset) {
    println!("model: {}  rows: {}  D: {}", model.kind_name(), data.n_rows(), model.dim());
    match model {
        FittedModel::Zicar(m) => {
            let q: Vec<f64> = m.marginals().iter().map(|g| g.q()).collect();
            println!("q: {}", fmt_vec(&q));
            println!("cond(Sigma): {:.6e}", m.sigma().condition_number());
            println!("rescale b: {}", fmt_vec(&m.rescales()));
        }
        FittedModel::Zibt(m) => {
            let q: Vec<f64> = m.marginals().iter().map(|g| g.q()).collect();
            println!("q: {}", fmt_vec(&q));
            println!("cond(Sigma): {:.6e}", m.copula().sigma().condition_number());
            println!("rescale b: {}", fmt_vec(&m.rescales()));
        }
        FittedModel::Gmm(m) => {
            println!("components: {}  weights: {}", m.k(), fmt_vec(m.weights()));
        }
        FittedModel::Kde(m) => {
            println!("centers: {}  bandwidths: {}", m.centers().len(), fmt_vec(m.bandwidths()));
        }
    }
}

fn cmd_score(a: ScoreArgs, f: &FileConfig) -> Result<()> {
    let model_path = require(a.model, "model")?;
    let data_path = require(pick(a.data, f.data.clone()), "data")?;
    let out = require(pick(a.out, f.out.clone()), "out")?;
    let clip = a.clip_negatives || f.clip_negatives.unwrap_or(false);
    let model = ModelFile::read(&model_path)?.model;
    let data = load_data(&data_path, clip)?;
    let nll = model.nll_rows(&data)?;
    write_column(&out, "nll", &nll)?;
    println!("scored {} rows with {} model; wrote {}", nll.len(), model.kind_name(), out.display());
    Ok(())
}

fn cmd_synth(a: SynthArgs, f: &FileConfig) -> Result<()> {
    let kind = require(pick(a.kind, f.kind), "kind")?;
    let dim = require(pick(a.dim, f.dim), "dim")?;
    let n = require(pick(a.n, f.n), "n")?;
    let out = require(pick(a.out, f.out.clone()), "out")?;
    let seed = resolve_seed(a.seed, f.seed)?;
    if dim < 2 {
        return Err(Error::Config(format!("--dim must be at least 2, got {dim}")));
    }
    if n == 0 {
        return Err(Error::Config("--n must be at least 1".into()));
    }
    let gt = make_ground_truth(kind, dim, seed)?;
    let data = sample_dataset(&gt, n, derive_seed(seed, 10))?;
    data.write_csv(&out)?;
    if let Some(p) = pick(a.sigma_out, f.sigma_out.clone()) {
        let rows: Vec<Vec<f64>> = (0..dim).map(|i| (0..dim).map(|j| gt.sigma_true.get(i, j)).collect()).collect();
        Dataset::from_rows(&rows)?.write_csv(&p)?;
    }
    println!("wrote {n} rows of {kind} data (D = {dim}, seed {seed}) to {}", out.display());
    Ok(())
}

fn cmd_bench(a: BenchArgs, f: &FileConfig) -> Result<()> {
    let kind = require(pick(a.kind, f.kind), "kind")?;
    let dim = require(pick(a.dim, f.dim), "dim")?;
    let results = require(pick(a.results, f.results.clone()), "results")?;
    let preset = pick(a.preset, f.preset).unwrap_or_default();
    let mut cfg = BenchConfig::from_preset(kind, dim, preset);
    if let Some(v) = pick(a.n_train, f.n_train) {
        cfg.n_train = v;
    }
    if let Some(v) = pick(a.n_normal, f.n_normal) {
        cfg.n_normal = v;
    }
    if let Some(v) = pick(a.n_abnormal, f.n_abnormal) {
        cfg.n_abnormal = v;
    }
    if let Some(v) = pick(a.seeds, f.seeds.clone()) {
        cfg.seeds = v;
    }
    if let Some(v) = pick(a.variants, f.variants.clone()) {
        cfg.variants = v;
    }
    if let Some(v) = pick(a.mc_samples, f.mc_samples) {
        cfg.mc_samples = v;
    }
    if let Some(v) = pick(a.eigen_floor, f.eigen_floor) {
        cfg.eigen_floor = v;
    }
    cfg.validate()?;
    let appender = Mutex::new(ResultsAppender::open(&results)?);
    let outcomes = bench::run_bench(&cfg, Some(&appender))?;
    let meta_path = PathBuf::from(format!("{}.meta.json", results.display()));
    let mut meta = serde_json::to_string_pretty(&bench::metadata(&cfg, &outcomes))?;
    meta.push('\n');
    std::fs::write(&meta_path, meta)?;
    let all: Vec<_> = outcomes.into_iter().flat_map(|o| o.results).collect();
    println!("{kind} data, D = {dim}, {} seeds", cfg.seeds.len());
    print!("{}", bench::format_summary(&bench::summarize(&all)));
    println!("appended {} rows to {}; metadata in {}", all.len(), results.display(), meta_path.display());
    Ok(())
}

fn cmd_ingest(a: IngestArgs, f: &FileConfig) -> Result<()> {
    let input = require(pick(a.input, f.input.clone()), "input")?;
    let train_out = require(pick(a.train_out, f.train_out.clone()), "train-out")?;
    let test_out = require(pick(a.test_out, f.test_out.clone()), "test-out")?;
    let small = a.small || f.small.unwrap_or(false);
    let seed = resolve_seed(a.seed, f.seed)?;
    let split = ingest_credit(&input, small, seed)?;
    split.train.write_csv(&train_out)?;
    split.test.write_csv(&test_out)?;
    println!(
        "{} columns; train {} rows -> {}; test {} rows -> {}; {} negative values clamped",
        split.train.n_cols(),
        split.train.n_rows(),
        train_out.display(),
        split.test.n_rows(),
        test_out.display(),
        split.clamped
    );
    Ok(())
}
