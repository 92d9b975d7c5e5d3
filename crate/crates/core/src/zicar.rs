//! Zero inflation completely at random: a value-independent binary mask
//! deletes entries of a positive parent distribution whose dependence is a
//! Gaussian copula.
//!
//! Scores are densities with respect to the rescaled variables `x_i / b_i`;
//! no Jacobian for the rescaling is added, which is what makes subspaces of
//! different dimension comparable.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::marginals::{fit_columns, Bandwidth, MarginalModel, CDF_CLAMP};
use crate::mask::{binarize, fit_bernoulli, fit_rbm, MaskModel, RbmConfig};
use crate::rgd::ZeroPattern;
use crate::stats::{
    ln_density, mvn_logpdf, pearson, repair_correlation_with_floor, std_normal_logpdf, std_normal_quantile, submatrix,
    CorrelationMatrix, EIGEN_FLOOR,
};

/// Fewest rows accepted by the model fitters.
pub const MIN_ROWS: usize = 2;
/// Jointly positive rows needed before a pair correlation is estimated.
pub const MIN_PAIR_ROWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Bernoulli,
    Rbm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZicarConfig {
    pub mask_kind: MaskKind,
    pub use_mle: bool,
    pub use_rescale: bool,
    pub bandwidth: Bandwidth,
    /// RBM recipe; `None` means [`RbmConfig::for_dim`] with `seed`.
    pub rbm: Option<RbmConfig>,
    /// Smallest eigenvalue kept when repairing Σ.
    pub eigen_floor: f64,
    pub seed: u64,
}

impl Default for ZicarConfig {
    fn default() -> Self {
        ZicarConfig {
            mask_kind: MaskKind::Rbm,
            use_mle: true,
            use_rescale: true,
            bandwidth: Bandwidth::Silverman,
            rbm: None,
            eigen_floor: EIGEN_FLOOR,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZicarModel {
    marginals: Vec<MarginalModel>,
    mask: MaskModel,
    sigma: CorrelationMatrix,
}

pub(crate) fn check_fit_input(data: &Dataset) -> Result<()> {
    if data.n_cols() == 0 {
        return Err(Error::InsufficientData("dataset has no columns".into()));
    }
    if data.n_rows() < MIN_ROWS {
        return Err(Error::InsufficientData(format!(
            "at least {MIN_ROWS} rows are needed, got {}",
            data.n_rows()
        )));
    }
    data.check_nonnegative()
}

pub(crate) fn check_score_input(x: &[f64], dim: usize) -> Result<()> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: x.len(),
        });
    }
    if let Some((j, &v)) = x.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::NegativeValue {
            row: 0,
            column: j,
            value: v,
        });
    }
    Ok(())
}

/// Average ranks (1-based, ties share their mean rank) divided by `N + 1`.
pub(crate) fn pseudo_observations(col: &[f64]) -> Vec<f64> {
    let n = col.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && col[idx[j + 1]] == col[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank / (n as f64 + 1.0);
        }
        i = j + 1;
    }
    out
}

fn pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|i| ((i + 1)..d).map(move |j| (i, j))).collect()
}

fn correlation_from_pairs(d: usize, floor: f64, f: impl Fn(usize, usize) -> f64 + Sync) -> CorrelationMatrix {
    let ps = pairs(d);
    let vals: Vec<f64> = ps.par_iter().map(|&(i, j)| f(i, j)).collect();
    let mut m = nalgebra::DMatrix::identity(d, d);
    for (&(i, j), &r) in ps.iter().zip(&vals) {
        m[(i, j)] = r;
        m[(j, i)] = r;
    }
    repair_correlation_with_floor(&m, floor)
}

/// Σ from normal scores of jointly positive rows, pair by pair.
fn sigma_jointly_positive(data: &Dataset, marginals: &[MarginalModel], floor: f64) -> CorrelationMatrix {
    let d = data.n_cols();
    let scores: Vec<Vec<Option<f64>>> = (0..d)
        .into_par_iter()
        .map(|j| {
            let m = &marginals[j];
            data.rows()
                .map(|r| (r[j] > 0.0).then(|| m.parent_omega(m.to_model_scale(r[j]))))
                .collect()
        })
        .collect();
    correlation_from_pairs(d, floor, |i, j| {
        let (x, y): (Vec<f64>, Vec<f64>) = scores[i]
            .iter()
            .zip(&scores[j])
            .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
            .unzip();
        if x.len() < MIN_PAIR_ROWS {
            log::warn!(
                "columns {i} and {j} share only {} positive rows; their correlation is set to 0",
                x.len()
            );
            0.0
        } else {
            pearson(&x, &y)
        }
    })
}

/// Σ from rank-based normal scores of all rows, zeros included as ties.
fn sigma_all_rows(data: &Dataset, floor: f64) -> CorrelationMatrix {
    let d = data.n_cols();
    let scores: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|j| {
            pseudo_observations(&data.column(j))
                .into_iter()
                .map(|u| std_normal_quantile(u.clamp(CDF_CLAMP, 1.0 - CDF_CLAMP)).expect("clamped"))
                .collect()
        })
        .collect();
    correlation_from_pairs(d, floor, |i, j| pearson(&scores[i], &scores[j]))
}

pub fn fit_zicar(data: &Dataset, cfg: &ZicarConfig) -> Result<ZicarModel> {
    check_fit_input(data)?;
    check_floor(cfg.eigen_floor)?;
    let d = data.n_cols();
    let marginals = fit_columns(data, cfg.use_rescale, cfg.bandwidth)?;
    let masks = binarize(data);
    let mask = match cfg.mask_kind {
        MaskKind::Bernoulli => MaskModel::Bernoulli(fit_bernoulli(&masks)?),
        MaskKind::Rbm => {
            let rc = cfg.rbm.unwrap_or_else(|| RbmConfig::for_dim(d, cfg.seed));
            MaskModel::Rbm(fit_rbm(&masks, &rc)?)
        }
    };
    let sigma = if cfg.use_mle {
        sigma_jointly_positive(data, &marginals, cfg.eigen_floor)
    } else {
        sigma_all_rows(data, cfg.eigen_floor)
    };
    Ok(ZicarModel { marginals, mask, sigma })
}

impl ZicarModel {
    pub fn from_parts(marginals: Vec<MarginalModel>, mask: MaskModel, sigma: CorrelationMatrix) -> Result<Self> {
        let d = marginals.len();
        for got in [mask.dim(), sigma.dim()] {
            if got != d {
                return Err(Error::DimensionMismatch { expected: d, got });
            }
        }
        Ok(ZicarModel { marginals, mask, sigma })
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[MarginalModel] {
        &self.marginals
    }

    pub fn mask(&self) -> &MaskModel {
        &self.mask
    }

    pub fn sigma(&self) -> &CorrelationMatrix {
        &self.sigma
    }

    pub fn rescales(&self) -> Vec<f64> {
        self.marginals.iter().map(MarginalModel::rescale_b).collect()
    }

    /// `ln q_S + Σ_S ln g_i(x_i) + ln c_Gauss(ω_S; Σ_S)` for the zero pattern of `x`.
    pub fn loglik(&self, x: &[f64]) -> Result<f64> {
        check_score_input(x, self.dim())?;
        let pattern = ZeroPattern::from_row(x);
        let mut out = self.mask.logprob(&pattern)?;
        let pos = pattern.positive_set();
        if pos.is_empty() {
            return Ok(out);
        }
        let mut omega = Vec::with_capacity(pos.len());
        for &i in &pos {
            let m = &self.marginals[i];
            let y = m.to_model_scale(x[i]);
            out += ln_density(m.positive_pdf(y)?);
            omega.push(m.parent_omega(y));
        }
        if pos.len() > 1 {
            let sub = submatrix(self.sigma.matrix(), &pos, &pos);
            out += mvn_logpdf(&omega, &sub)? - omega.iter().map(|&w| std_normal_logpdf(w)).sum::<f64>();
        }
        Ok(out)
    }

    /// Log-likelihood of every row, in row order.
    pub fn loglik_rows(&self, data: &Dataset) -> Result<Vec<f64>> {
        (0..data.n_rows())
            .into_par_iter()
            .map(|r| self.loglik(data.row(r)).map_err(|e| with_row(e, r)))
            .collect()
    }
}

pub(crate) fn check_floor(floor: f64) -> Result<()> {
    if floor > 0.0 && floor < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("eigen_floor must lie in (0, 1), got {floor}")))
    }
}

pub(crate) fn with_row(e: Error, row: usize) -> Error {
    match e {
        Error::NegativeValue { column, value, .. } => Error::NegativeValue { row, column, value },
        other => other,
    }
}
