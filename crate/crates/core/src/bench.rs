//! Synthetic anomaly-detection benchmark. For each seed: draw a ground truth,
//! sample training and test rows, corrupt a copy of the test rows, fit each
//! model variant on the training rows and score both test sets by negative
//! log-likelihood.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use crate::baselines::{tune_gmm, tune_kde, REG_FLOOR, VALIDATION_FRACTION};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model_file::FittedModel;
use crate::rgd::DEFAULT_MC_SAMPLES;
use crate::stats::{derive_seed, EIGEN_FLOOR};
use crate::synth::{auc, corrupt, make_ground_truth, sample_dataset, sigma_l2_error, DataKind};
use crate::zibt::{fit_zibt, LikelihoodMode, ZibtConfig};
use crate::zicar::{fit_zicar, MaskKind, ZicarConfig};

pub const RESULTS_HEADER: &str = "model_tag,kind,D,seed,auc,sigma_l2_error";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "zicar-full")]
    ZicarFull,
    #[serde(rename = "zicar-wo-rbm")]
    ZicarWoRbm,
    #[serde(rename = "zicar-wo-mle")]
    ZicarWoMle,
    #[serde(rename = "zicar-wo-rescale")]
    ZicarWoRescale,
    #[serde(rename = "zibt-full")]
    ZibtFull,
    #[serde(rename = "zibt-approx")]
    ZibtApprox,
    #[serde(rename = "zibt-wo-mle")]
    ZibtWoMle,
    #[serde(rename = "zibt-wo-rescale")]
    ZibtWoRescale,
    #[serde(rename = "gmm")]
    Gmm,
    #[serde(rename = "kde")]
    Kde,
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::ZicarFull,
        Variant::ZicarWoRbm,
        Variant::ZicarWoMle,
        Variant::ZicarWoRescale,
        Variant::ZibtFull,
        Variant::ZibtApprox,
        Variant::ZibtWoMle,
        Variant::ZibtWoRescale,
        Variant::Gmm,
        Variant::Kde,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::ZicarFull => "zicar-full",
            Variant::ZicarWoRbm => "zicar-wo-rbm",
            Variant::ZicarWoMle => "zicar-wo-mle",
            Variant::ZicarWoRescale => "zicar-wo-rescale",
            Variant::ZibtFull => "zibt-full",
            Variant::ZibtApprox => "zibt-approx",
            Variant::ZibtWoMle => "zibt-wo-mle",
            Variant::ZibtWoRescale => "zibt-wo-rescale",
            Variant::Gmm => "gmm",
            Variant::Kde => "kde",
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Variant::Gmm | Variant::Kde)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Variant::ALL.iter().map(|v| v.tag()).collect();
                Error::Config(format!("unknown variant '{s}' (expected one of {})", known.join(", ")))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    #[default]
    Full,
}

impl Preset {
    /// `(n_train, n_normal, n_abnormal, n_seeds)`.
    pub fn sizes(self) -> (usize, usize, usize, u64) {
        match self {
            Preset::Desk => (2000, 1000, 1000, 5),
            Preset::Full => (10_000, 5000, 5000, 15),
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            other => Err(Error::Config(format!("unknown preset '{other}' (expected full or desk)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub kind: DataKind,
    pub dim: usize,
    pub n_train: usize,
    pub n_normal: usize,
    pub n_abnormal: usize,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub mc_samples: usize,
    /// Eigenvalue floor for the copula Σ repair of every copula variant.
    pub eigen_floor: f64,
}

impl BenchConfig {
    pub fn from_preset(kind: DataKind, dim: usize, preset: Preset) -> Self {
        let (n_train, n_normal, n_abnormal, n_seeds) = preset.sizes();
        BenchConfig {
            kind,
            dim,
            n_train,
            n_normal,
            n_abnormal,
            seeds: (0..n_seeds).collect(),
            variants: Variant::ALL.to_vec(),
            mc_samples: DEFAULT_MC_SAMPLES,
            eigen_floor: EIGEN_FLOOR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("bench needs at least one seed".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("bench needs at least one variant".into()));
        }
        if self.n_train == 0 || self.n_normal == 0 || self.n_abnormal == 0 {
            return Err(Error::Config("bench sample sizes must be at least 1".into()));
        }
        if self.dim < 2 {
            return Err(Error::Config(format!("bench needs D >= 2, got {}", self.dim)));
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be positive".into()));
        }
        crate::zicar::check_floor(self.eigen_floor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub model_tag: String,
    pub kind: DataKind,
    pub dim: usize,
    pub seed: u64,
    pub auc: f64,
    /// `None` for baselines, which have no copula correlation.
    pub sigma_l2_error: Option<f64>,
}

impl BenchResult {
    pub fn csv_line(&self) -> String {
        let err = self.sigma_l2_error.map(|e| e.to_string()).unwrap_or_default();
        format!("{},{},{},{},{},{}", self.model_tag, self.kind, self.dim, self.seed, self.auc, err)
    }
}

/// Everything one seed produced: result rows and the tuned baseline settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub results: Vec<BenchResult>,
    pub tuning: BTreeMap<String, String>,
}

/// The three datasets of one benchmark trial.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub train: Dataset,
    pub normal: Dataset,
    pub abnormal: Dataset,
}

pub fn make_trial(cfg: &BenchConfig, gt: &crate::synth::GroundTruth, seed: u64) -> Result<Trial> {
    let train = sample_dataset(gt, cfg.n_train, derive_seed(seed, 10))?;
    let normal = sample_dataset(gt, cfg.n_normal, derive_seed(seed, 11))?;
    let idx: Vec<usize> = (0..cfg.n_abnormal).map(|i| i % normal.n_rows()).collect();
    let abnormal = corrupt(&normal.select_rows(&idx), &train, derive_seed(seed, 12))?;
    Ok(Trial { train, normal, abnormal })
}

/// Fits one variant. Returns the model and, for baselines, the chosen setting.
pub fn fit_variant(v: Variant, train: &Dataset, seed: u64, cfg: &BenchConfig) -> Result<(FittedModel, Option<String>)> {
    let zicar = |mask_kind, use_mle, use_rescale| ZicarConfig {
        mask_kind,
        use_mle,
        use_rescale,
        eigen_floor: cfg.eigen_floor,
        seed: derive_seed(seed, 20),
        ..ZicarConfig::default()
    };
    let zibt = |mode, use_mle, use_rescale| ZibtConfig {
        use_mle,
        use_rescale,
        mode,
        mc_samples: cfg.mc_samples,
        eigen_floor: cfg.eigen_floor,
        seed: derive_seed(seed, 21),
        ..ZibtConfig::default()
    };
    let exact = LikelihoodMode::Exact;
    Ok(match v {
        Variant::ZicarFull => (FittedModel::Zicar(fit_zicar(train, &zicar(MaskKind::Rbm, true, true))?), None),
        Variant::ZicarWoRbm => (FittedModel::Zicar(fit_zicar(train, &zicar(MaskKind::Bernoulli, true, true))?), None),
        Variant::ZicarWoMle => (FittedModel::Zicar(fit_zicar(train, &zicar(MaskKind::Rbm, false, true))?), None),
        Variant::ZicarWoRescale => (FittedModel::Zicar(fit_zicar(train, &zicar(MaskKind::Rbm, true, false))?), None),
        Variant::ZibtFull => (FittedModel::Zibt(fit_zibt(train, &zibt(exact, true, true))?), None),
        Variant::ZibtApprox => (FittedModel::Zibt(fit_zibt(train, &zibt(LikelihoodMode::Approx, true, true))?), None),
        Variant::ZibtWoMle => (FittedModel::Zibt(fit_zibt(train, &zibt(exact, false, true))?), None),
        Variant::ZibtWoRescale => (FittedModel::Zibt(fit_zibt(train, &zibt(exact, true, false))?), None),
        Variant::Gmm => {
            let (m, k) = tune_gmm(train, REG_FLOOR, derive_seed(seed, 22))?;
            (FittedModel::Gmm(m), Some(format!("k={k}")))
        }
        Variant::Kde => {
            let (m, mult) = tune_kde(train, derive_seed(seed, 23))?;
            (FittedModel::Kde(m), Some(format!("bandwidth_multiplier={mult}")))
        }
    })
}

fn model_sigma(m: &FittedModel) -> Option<&crate::stats::CorrelationMatrix> {
    match m {
        FittedModel::Zicar(z) => Some(z.sigma()),
        FittedModel::Zibt(z) => Some(z.copula().sigma()),
        FittedModel::Gmm(_) | FittedModel::Kde(_) => None,
    }
}

pub fn run_seed(cfg: &BenchConfig, seed: u64) -> Result<SeedOutcome> {
    let gt = make_ground_truth(cfg.kind, cfg.dim, seed)?;
    let trial = make_trial(cfg, &gt, seed)?;
    let mut results = Vec::with_capacity(cfg.variants.len());
    let mut tuning = BTreeMap::new();
    for &v in &cfg.variants {
        let (model, setting) = fit_variant(v, &trial.train, seed, cfg)?;
        let normal = model.nll_rows(&trial.normal)?;
        let abnormal = model.nll_rows(&trial.abnormal)?;
        let sigma_l2_error = model_sigma(&model)
            .map(|s| sigma_l2_error(s, &gt.sigma_true))
            .transpose()?;
        let r = BenchResult {
            model_tag: v.tag().to_string(),
            kind: cfg.kind,
            dim: cfg.dim,
            seed,
            auc: auc(&normal, &abnormal)?,
            sigma_l2_error,
        };
        log::info!("seed {seed} {}: auc {:.4}", r.model_tag, r.auc);
        if let Some(s) = setting {
            tuning.insert(v.tag().to_string(), s);
        }
        results.push(r);
    }
    Ok(SeedOutcome { seed, results, tuning })
}

/// Appends result rows, writing the header first when the file is new or
/// empty. Outcomes arriving out of order are held back so rows always land in
/// seed-list order.
pub struct ResultsAppender {
    file: std::fs::File,
    next: usize,
    pending: BTreeMap<usize, Vec<BenchResult>>,
}

impl ResultsAppender {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        if !fresh {
            let text = std::fs::read_to_string(path)?;
            let first = text.lines().next().unwrap_or_default();
            if first != RESULTS_HEADER {
                return Err(Error::Config(format!(
                    "{} exists with header '{first}', expected '{RESULTS_HEADER}'",
                    path.display()
                )));
            }
        }
        let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(file, "{RESULTS_HEADER}")?;
        }
        Ok(ResultsAppender {
            file,
            next: 0,
            pending: BTreeMap::new(),
        })
    }

    /// Queues the rows of seed position `index` and flushes every complete prefix.
    pub fn push(&mut self, index: usize, rows: Vec<BenchResult>) -> Result<()> {
        self.pending.insert(index, rows);
        while let Some(rows) = self.pending.remove(&self.next) {
            for r in rows {
                writeln!(self.file, "{}", r.csv_line())?;
            }
            self.file.flush()?;
            self.next += 1;
        }
        Ok(())
    }
}

/// Runs every seed (concurrently, on the current rayon pool) and hands each
/// outcome to `appender` as it completes.
pub fn run_bench(cfg: &BenchConfig, appender: Option<&Mutex<ResultsAppender>>) -> Result<Vec<SeedOutcome>> {
    cfg.validate()?;
    cfg.seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let out = run_seed(cfg, seed)?;
            if let Some(a) = appender {
                a.lock()
                    .map_err(|_| Error::Numeric("results appender poisoned".into()))?
                    .push(i, out.results.clone())?;
            }
            Ok(out)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub model_tag: String,
    pub n: usize,
    pub mean_auc: f64,
    pub sd_auc: f64,
    pub mean_sigma_l2_error: Option<f64>,
}

/// Per-variant averages, in first-appearance order.
pub fn summarize(results: &[BenchResult]) -> Vec<SummaryRow> {
    let mut order: Vec<&str> = Vec::new();
    for r in results {
        if !order.contains(&r.model_tag.as_str()) {
            order.push(&r.model_tag);
        }
    }
    order
        .into_iter()
        .map(|tag| {
            let rows: Vec<&BenchResult> = results.iter().filter(|r| r.model_tag == tag).collect();
            let n = rows.len();
            let mean_auc = rows.iter().map(|r| r.auc).sum::<f64>() / n as f64;
            let sd_auc = if n > 1 {
                (rows.iter().map(|r| (r.auc - mean_auc).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            let errs: Vec<f64> = rows.iter().filter_map(|r| r.sigma_l2_error).collect();
            let mean_sigma_l2_error = (!errs.is_empty()).then(|| errs.iter().sum::<f64>() / errs.len() as f64);
            SummaryRow {
                model_tag: tag.to_string(),
                n,
                mean_auc,
                sd_auc,
                mean_sigma_l2_error,
            }
        })
        .collect()
}

pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut s = format!("{:<18} {:>5} {:>9} {:>8} {:>12}\n", "model", "runs", "mean_auc", "sd_auc", "sigma_l2");
    for r in rows {
        let e = r.mean_sigma_l2_error.map(|e| format!("{e:.4}")).unwrap_or_else(|| "-".into());
        s.push_str(&format!(
            "{:<18} {:>5} {:>9.4} {:>8.4} {:>12}\n",
            r.model_tag, r.n, r.mean_auc, r.sd_auc, e
        ));
    }
    s
}

/// Run metadata written next to the results file.
#[derive(Debug, Clone, Serialize)]
pub struct BenchMetadata<'a> {
    pub config: &'a BenchConfig,
    pub baseline_validation_fraction: f64,
    pub baseline_tuning: BTreeMap<u64, BTreeMap<String, String>>,
    pub baselines_on_raw_scale: bool,
}

pub fn metadata<'a>(cfg: &'a BenchConfig, outcomes: &[SeedOutcome]) -> BenchMetadata<'a> {
    BenchMetadata {
        config: cfg,
        baseline_validation_fraction: VALIDATION_FRACTION,
        baseline_tuning: outcomes.iter().map(|o| (o.seed, o.tuning.clone())).collect(),
        baselines_on_raw_scale: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: DataKind) -> BenchConfig {
        BenchConfig {
            n_train: 400,
            n_normal: 150,
            n_abnormal: 150,
            seeds: vec![3, 1],
            ..BenchConfig::from_preset(kind, 3, Preset::Desk)
        }
    }

    #[test]
    fn variant_tags_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.tag().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.tag()));
        }
        assert!("zibt".parse::<Variant>().is_err());
    }

    #[test]
    fn presets_match_protocol() {
        let d = BenchConfig::from_preset(DataKind::Zibt, 5, Preset::Desk);
        assert_eq!((d.n_train, d.n_normal, d.n_abnormal, d.seeds.len()), (2000, 1000, 1000, 5));
        let p = BenchConfig::from_preset(DataKind::Zibt, 5, Preset::Full);
        assert_eq!((p.n_train, p.n_normal, p.n_abnormal, p.seeds.len()), (10_000, 5000, 5000, 15));
        assert!(BenchConfig { seeds: vec![], ..d }.validate().is_err());
    }

    #[test]
    fn bench_rows_are_complete_ordered_and_deterministic() {
        let cfg = tiny(DataKind::Zibt);
        let dir = std::env::temp_dir().join(format!("zicopula-bench-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("r.csv");
        let _ = std::fs::remove_file(&path);
        let a = Mutex::new(ResultsAppender::open(&path).unwrap());
        let out = run_bench(&cfg, Some(&a)).unwrap();
        drop(a);
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], RESULTS_HEADER);
        assert_eq!(lines.len(), 1 + 2 * Variant::ALL.len());
        assert!(lines[1].starts_with("zicar-full,zibt,3,3,"));
        assert!(lines[1 + Variant::ALL.len()].starts_with("zicar-full,zibt,3,1,"));
        assert!(lines.iter().any(|l| l.starts_with("gmm,") && l.ends_with(',')));
        let again = run_bench(&cfg, None).unwrap();
        assert_eq!(out, again);
        for o in &out {
            assert!(o.results.iter().all(|r| (0.0..=1.0).contains(&r.auc)));
            assert!(o.tuning.contains_key("gmm") && o.tuning.contains_key("kde"));
        }
        let a = Mutex::new(ResultsAppender::open(&path).unwrap());
        a.lock().unwrap().push(0, out[0].results.clone()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().filter(|l| *l == RESULTS_HEADER).count(), 1);
        std::fs::write(dir.join("other.csv"), "a,b\n1,2\n").unwrap();
        assert!(matches!(ResultsAppender::open(dir.join("other.csv")), Err(Error::Config(_))));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn appender_orders_out_of_order_seeds() {
        let dir = std::env::temp_dir().join(format!("zicopula-app-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("r.csv");
        let row = |seed| BenchResult {
            model_tag: "kde".into(),
            kind: DataKind::Zicar,
            dim: 2,
            seed,
            auc: 0.5,
            sigma_l2_error: None,
        };
        let mut a = ResultsAppender::open(&path).unwrap();
        a.push(2, vec![row(2)]).unwrap();
        a.push(1, vec![row(1)]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
        a.push(0, vec![row(0)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let seeds: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(3).unwrap()).collect();
        assert_eq!(seeds, ["0", "1", "2"]);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn summary_averages_per_variant() {
        let mk = |tag: &str, seed, auc, e| BenchResult {
            model_tag: tag.into(),
            kind: DataKind::Zibt,
            dim: 2,
            seed,
            auc,
            sigma_l2_error: e,
        };
        let rows = vec![
            mk("zibt-full", 0, 0.9, Some(0.1)),
            mk("gmm", 0, 0.7, None),
            mk("zibt-full", 1, 0.8, Some(0.3)),
            mk("gmm", 1, 0.6, None),
        ];
        let s = summarize(&rows);
        assert_eq!(s[0].model_tag, "zibt-full");
        assert!((s[0].mean_auc - 0.85).abs() < 1e-12);
        assert!((s[0].mean_sigma_l2_error.unwrap() - 0.2).abs() < 1e-12);
        assert!((s[0].sd_auc - 0.005f64.sqrt()).abs() < 1e-12);
        assert_eq!(s[1].mean_sigma_l2_error, None);
        assert!(format_summary(&s).contains("zibt-full"));
    }
}
