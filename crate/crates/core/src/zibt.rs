//! Zero inflation by thresholding: zeros are values that fell below a
//! per-variable threshold of a latent Gaussian, so dependence is carried by a
//! rectified Gaussian copula.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::marginals::{fit_columns, Bandwidth, MarginalModel};
use crate::rgd::{
    assemble_sigma_with_floor, copula_logdensity_approx, copula_logdensity_exact, zero_pattern_logprob, LatentObs,
    RgdParams, ZeroPattern, DEFAULT_MC_SAMPLES,
};
use crate::stats::{derive_seed, std_normal_cdf, EIGEN_FLOOR};
use crate::zicar::{check_fit_input, check_floor, check_score_input, with_row};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodMode {
    Exact,
    #[default]
    Approx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZibtConfig {
    pub use_mle: bool,
    pub use_rescale: bool,
    pub bandwidth: Bandwidth,
    pub mode: LikelihoodMode,
    pub mc_samples: usize,
    /// Smallest eigenvalue kept when repairing the assembled Σ.
    pub eigen_floor: f64,
    /// Base seed for the Monte-Carlo orthant terms of exact scoring.
    pub seed: u64,
}

impl Default for ZibtConfig {
    fn default() -> Self {
        ZibtConfig {
            use_mle: true,
            use_rescale: true,
            bandwidth: Bandwidth::Silverman,
            mode: LikelihoodMode::Approx,
            mc_samples: DEFAULT_MC_SAMPLES,
            eigen_floor: EIGEN_FLOOR,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZibtModel {
    marginals: Vec<MarginalModel>,
    copula: RgdParams,
    mode: LikelihoodMode,
    mc_samples: usize,
    mc_seed: u64,
}

/// Latent observation of one coordinate: zeros sit at the threshold.
fn latent(m: &MarginalModel, x: f64) -> LatentObs {
    if x > 0.0 {
        LatentObs::Above(m.omega_transform(m.to_model_scale(x)))
    } else {
        LatentObs::Rectified
    }
}

pub fn fit_zibt(data: &Dataset, cfg: &ZibtConfig) -> Result<ZibtModel> {
    check_fit_input(data)?;
    if cfg.mc_samples == 0 {
        return Err(Error::Config("mc_samples must be positive".into()));
    }
    check_floor(cfg.eigen_floor)?;
    let marginals = fit_columns(data, cfg.use_rescale, cfg.bandwidth)?;
    let columns: Vec<Vec<LatentObs>> = marginals
        .par_iter()
        .enumerate()
        .map(|(j, m)| data.rows().map(|r| latent(m, r[j])).collect())
        .collect();
    let a: Vec<f64> = marginals.iter().map(MarginalModel::a).collect();
    let sigma = assemble_sigma_with_floor(&columns, &a, cfg.use_mle, cfg.eigen_floor)?;
    let copula = RgdParams::new(sigma, a)?;
    Ok(ZibtModel {
        marginals,
        copula,
        mode: cfg.mode,
        mc_samples: cfg.mc_samples,
        mc_seed: cfg.seed,
    })
}

impl ZibtModel {
    pub fn from_parts(marginals: Vec<MarginalModel>, copula: RgdParams, mode: LikelihoodMode) -> Result<Self> {
        let m = ZibtModel {
            marginals,
            copula,
            mode,
            mc_samples: DEFAULT_MC_SAMPLES,
            mc_seed: 0,
        };
        m.validate()?;
        Ok(m)
    }

    /// Checks dimensions and that each threshold is `Φ⁻¹(q_i)`.
    pub fn validate(&self) -> Result<()> {
        let d = self.marginals.len();
        if self.copula.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.copula.dim(),
            });
        }
        for (i, (m, &a)) in self.marginals.iter().zip(self.copula.thresholds()).enumerate() {
            let ok = if m.q() == 0.0 {
                a == f64::NEG_INFINITY
            } else {
                (std_normal_cdf(a) - m.q()).abs() <= 1e-9
            };
            if !ok {
                return Err(Error::ModelFile(format!(
                    "threshold {a} of variable {i} is inconsistent with zero rate {}",
                    m.q()
                )));
            }
        }
        if self.mc_samples == 0 {
            return Err(Error::ModelFile("mc_samples must be positive".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[MarginalModel] {
        &self.marginals
    }

    pub fn copula(&self) -> &RgdParams {
        &self.copula
    }

    pub fn mode(&self) -> LikelihoodMode {
        self.mode
    }

    pub fn mc_samples(&self) -> usize {
        self.mc_samples
    }

    pub fn rescales(&self) -> Vec<f64> {
        self.marginals.iter().map(MarginalModel::rescale_b).collect()
    }

    pub fn with_mode(mut self, mode: LikelihoodMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_mc(mut self, mc_samples: usize, seed: u64) -> Self {
        self.mc_samples = mc_samples.max(1);
        self.mc_seed = seed;
        self
    }

    /// Log-likelihood of `x` as row `row` of a batch; the row index selects
    /// the Monte-Carlo stream used by exact scoring.
    pub fn loglik_row(&self, x: &[f64], row: usize) -> Result<f64> {
        check_score_input(x, self.dim())?;
        let mut out = 0.0;
        let mut obs = Vec::with_capacity(x.len());
        for (m, &xi) in self.marginals.iter().zip(x) {
            let y = m.to_model_scale(xi);
            out += m.log_mixed(y);
            obs.push(latent(m, xi));
        }
        out += match self.mode {
            LikelihoodMode::Exact => copula_logdensity_exact(
                &self.copula,
                &obs,
                self.mc_samples,
                derive_seed(self.mc_seed, row as u64),
            )?,
            LikelihoodMode::Approx => copula_logdensity_approx(&self.copula, &obs)?,
        };
        Ok(out)
    }

    pub fn loglik(&self, x: &[f64]) -> Result<f64> {
        self.loglik_row(x, 0)
    }

    pub fn loglik_rows(&self, data: &Dataset) -> Result<Vec<f64>> {
        (0..data.n_rows())
            .into_par_iter()
            .map(|r| self.loglik_row(data.row(r), r).map_err(|e| with_row(e, r)))
            .collect()
    }

    /// Probability of a zero pattern under the fitted rectified Gaussian.
    pub fn zero_pattern_prob(&self, pattern: &ZeroPattern, mc_samples: usize, seed: u64) -> Result<f64> {
        Ok(zero_pattern_logprob(&self.copula, pattern, mc_samples, seed)?.exp())
    }
}
