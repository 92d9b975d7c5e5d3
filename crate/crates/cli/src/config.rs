//! Layered settings: command-line flags override the `--config` file, which
//! overrides `ZICOPULA_SEED` and the built-in defaults.

use serde::Deserialize;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use zicopula::bench::{Preset, Variant};
use zicopula::synth::DataKind;
use zicopula::zibt::LikelihoodMode;
use zicopula::zicar::MaskKind;
use zicopula::{Error, Result};

pub const SEED_ENV: &str = "ZICOPULA_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Zicar,
    Zibt,
    Gmm,
    Kde,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zicar" => Ok(ModelKind::Zicar),
            "zibt" => Ok(ModelKind::Zibt),
            "gmm" => Ok(ModelKind::Gmm),
            "kde" => Ok(ModelKind::Kde),
            other => Err(Error::Config(format!(
                "unknown model '{other}' (expected zicar, zibt, gmm or kde)"
            ))),
        }
    }
}

pub fn parse_mask(s: &str) -> Result<MaskKind> {
    match s {
        "rbm" => Ok(MaskKind::Rbm),
        "bernoulli" => Ok(MaskKind::Bernoulli),
        other => Err(Error::Config(format!("unknown mask '{other}' (expected rbm or bernoulli)"))),
    }
}

pub fn parse_mode(s: &str) -> Result<LikelihoodMode> {
    match s {
        "exact" => Ok(LikelihoodMode::Exact),
        "approx" => Ok(LikelihoodMode::Approx),
        other => Err(Error::Config(format!("unknown likelihood mode '{other}' (expected exact or approx)"))),
    }
}

/// Every setting a config file may carry. Keys mirror the long flag names
/// with `-` replaced by `_`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub model: Option<ModelKind>,
    pub mask: Option<MaskKind>,
    pub use_mle: Option<bool>,
    pub use_rescale: Option<bool>,
    pub mode: Option<LikelihoodMode>,
    pub mc_samples: Option<usize>,
    pub eigen_floor: Option<f64>,
    pub gmm_k: Option<usize>,
    pub gmm_reg: Option<f64>,
    pub kde_multiplier: Option<f64>,
    pub clip_negatives: Option<bool>,
    pub kind: Option<DataKind>,
    pub dim: Option<usize>,
    pub n: Option<usize>,
    pub preset: Option<Preset>,
    pub n_train: Option<usize>,
    pub n_normal: Option<usize>,
    pub n_abnormal: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub variants: Option<Vec<Variant>>,
    pub small: Option<bool>,
    pub train: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub results: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub train_out: Option<PathBuf>,
    pub test_out: Option<PathBuf>,
    pub sigma_out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// First present value among flag and config file.
pub fn pick<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

pub fn require<T>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing required setting --{name}")))
}

/// Seed precedence: flag, config file, `ZICOPULA_SEED`, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}
