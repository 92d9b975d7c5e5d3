//! Conventional density estimators used as benchmark baselines: a full
//! covariance Gaussian mixture fitted by EM and a product-kernel Gaussian KDE.
//! Both work on the raw data scale.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::marginals::silverman_bandwidth;
use crate::stats::{cholesky, log_sum_exp, mvn_logpdf_chol, seeded_rng};

/// Smallest ridge added to every component covariance.
pub const REG_FLOOR: f64 = 1e-6;
pub const EM_MAX_ITER: usize = 500;
/// Convergence threshold on the change of mean per-row log-likelihood.
pub const EM_TOL: f64 = 1e-6;
pub const MAX_REINIT: usize = 3;

pub const GMM_K_GRID: [usize; 5] = [1, 2, 4, 8, 16];
pub const KDE_MULTIPLIER_GRID: [f64; 3] = [0.5, 1.0, 2.0];
/// Share of the training rows held out when tuning hyperparameters.
pub const VALIDATION_FRACTION: f64 = 0.2;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Serialize, Deserialize)]
struct GmmRepr {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmRepr", into = "GmmRepr")]
pub struct GmmModel {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<DMatrix<f64>>,
    chol: Vec<DMatrix<f64>>,
}

impl TryFrom<GmmRepr> for GmmModel {
    type Error = Error;

    fn try_from(r: GmmRepr) -> Result<Self> {
        let d = r.means.first().map_or(0, Vec::len);
        let mut covs = Vec::with_capacity(r.covariances.len());
        for c in &r.covariances {
            if c.len() != d || c.iter().any(|row| row.len() != d) {
                return Err(Error::ModelFile("GMM covariance has the wrong shape".into()));
            }
            covs.push(DMatrix::from_fn(d, d, |i, j| c[i][j]));
        }
        GmmModel::new(r.weights, r.means, covs)
    }
}

impl From<GmmModel> for GmmRepr {
    fn from(m: GmmModel) -> Self {
        let covariances = m
            .covariances
            .iter()
            .map(|c| (0..c.nrows()).map(|i| (0..c.ncols()).map(|j| c[(i, j)]).collect()).collect())
            .collect();
        GmmRepr {
            weights: m.weights,
            means: m.means,
            covariances,
        }
    }
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covariances: Vec<DMatrix<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return Err(Error::Domain("GMM needs matching, nonempty weights, means and covariances".into()));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) {
            return Err(Error::Domain("GMM means must share a nonzero dimension".into()));
        }
        if covariances.iter().any(|c| c.nrows() != d || c.ncols() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: covariances.iter().map(|c| c.nrows()).find(|&r| r != d).unwrap_or(0),
            });
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|&w| !(w > 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("GMM weights must be positive and sum to 1 (sum {total})")));
        }
        let chol = covariances
            .iter()
            .enumerate()
            .map(|(j, c)| cholesky(c, &format!("GMM component {j} covariance")))
            .collect::<Result<Vec<_>>>()?;
        Ok(GmmModel {
            weights,
            means,
            covariances,
            chol,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    fn component_logs(&self, x: &[f64]) -> Vec<f64> {
        let mut diff = vec![0.0; x.len()];
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.chol)
            .map(|((w, m), l)| {
                for (d, (a, b)) in diff.iter_mut().zip(x.iter().zip(m)) {
                    *d = a - b;
                }
                w.ln() + mvn_logpdf_chol(&diff, l)
            })
            .collect()
    }

    /// `ln Σ_k w_k φ(x | μ_k, Σ_k)`.
    pub fn loglik(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(log_sum_exp(&self.component_logs(x)))
    }

    pub fn loglik_rows(&self, data: &Dataset) -> Result<Vec<f64>> {
        data.to_rows().par_iter().map(|r| self.loglik(r)).collect()
    }
}

/// Sample covariance with weights `r`, plus `reg` on the diagonal.
fn weighted_cov(rows: &[Vec<f64>], r: &[f64], mean: &[f64], total: f64, reg: f64) -> DMatrix<f64> {
    let d = mean.len();
    let mut c = DMatrix::<f64>::zeros(d, d);
    for (x, &w) in rows.iter().zip(r) {
        if w == 0.0 {
            continue;
        }
        for i in 0..d {
            let di = w * (x[i] - mean[i]);
            for j in 0..=i {
                c[(i, j)] += di * (x[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            c[(i, j)] /= total;
            c[(j, i)] = c[(i, j)];
        }
        c[(i, i)] = c[(i, i)] / total + reg;
    }
    c
}

fn weighted_mean(rows: &[Vec<f64>], r: &[f64], total: f64) -> Vec<f64> {
    let d = rows[0].len();
    let mut m = vec![0.0; d];
    for (x, &w) in rows.iter().zip(r) {
        for (mi, xi) in m.iter_mut().zip(x) {
            *mi += w * xi;
        }
    }
    m.iter_mut().for_each(|v| *v /= total);
    m
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k-means++ seeding followed by one hard assignment.
fn kmeanspp_init<R: Rng + ?Sized>(rows: &[Vec<f64>], k: usize, reg: f64, rng: &mut R) -> Result<GmmModel> {
    let n = rows.len();
    let mut centers = vec![rows[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = rows.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(rows[pick].clone());
        for (d, x) in dist.iter_mut().zip(rows) {
            *d = d.min(sq_dist(x, &centers[centers.len() - 1]));
        }
    }
    let ones = vec![1.0; n];
    let global_mean = weighted_mean(rows, &ones, n as f64);
    let global = weighted_cov(rows, &ones, &global_mean, n as f64, reg);
    let mut assign = vec![vec![0.0; n]; k];
    for (i, x) in rows.iter().enumerate() {
        let best = (0..k)
            .min_by(|&a, &b| sq_dist(x, &centers[a]).total_cmp(&sq_dist(x, &centers[b])))
            .unwrap_or(0);
        assign[best][i] = 1.0;
    }
    let mut weights = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for (j, a) in assign.iter().enumerate() {
        let count: f64 = a.iter().sum();
        weights.push(count.max(1.0));
        covs.push(if count >= 2.0 {
            weighted_cov(rows, a, &centers[j], count, reg)
        } else {
            global.clone()
        });
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    ridge_until_pd(weights, centers, covs)
}

/// Builds the model, adding diagonal jitter (×10 steps) to any covariance
/// whose Cholesky factorization fails in floating point.
fn ridge_until_pd(weights: Vec<f64>, means: Vec<Vec<f64>>, mut covs: Vec<DMatrix<f64>>) -> Result<GmmModel> {
    for c in covs.iter_mut() {
        let mut jitter = REG_FLOOR * c.diagonal().max().max(1.0);
        let mut tries = 0;
        while c.clone().cholesky().is_none() {
            if tries == 12 {
                return Err(Error::NotPositiveDefinite {
                    context: "GMM covariance after jitter".into(),
                    min_eig: f64::NAN,
                    max_eig: f64::NAN,
                });
            }
            log::debug!("adding {jitter:e} jitter to a GMM covariance");
            for i in 0..c.nrows() {
                c[(i, i)] += jitter;
            }
            jitter *= 10.0;
            tries += 1;
        }
    }
    GmmModel::new(weights, means, covs)
}

pub fn fit_gmm(data: &Dataset, k: usize, reg: f64, seed: u64) -> Result<GmmModel> {
    fit_gmm_traced(data, k, reg, seed).map(|(m, _)| m)
}

/// EM fit that also returns the total log-likelihood after each E-step since
/// the last reinitialization.
pub fn fit_gmm_traced(data: &Dataset, k: usize, reg: f64, seed: u64) -> Result<(GmmModel, Vec<f64>)> {
    let n = data.n_rows();
    let d = data.n_cols();
    if k == 0 {
        return Err(Error::Config("GMM needs at least one component".into()));
    }
    if n < k * (d + 1) {
        return Err(Error::InsufficientData(format!(
            "GMM with k={k} in D={d} needs at least {} rows, got {n}",
            k * (d + 1)
        )));
    }
    if !(reg > 0.0) {
        return Err(Error::Config(format!("GMM regularization must be positive, got {reg}")));
    }
    let reg = reg.max(REG_FLOOR);
    let rows = data.to_rows();
    let mut rng = seeded_rng(seed);
    let mut model = kmeanspp_init(&rows, k, reg, &mut rng)?;
    let mut trace = Vec::new();
    let mut reinits = 0;
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..EM_MAX_ITER {
        let logs: Vec<Vec<f64>> = rows.par_iter().map(|x| model.component_logs(x)).collect();
        let lse: Vec<f64> = logs.iter().map(|l| log_sum_exp(l)).collect();
        let total: f64 = lse.iter().sum();
        if !total.is_finite() {
            return Err(Error::Numeric("GMM log-likelihood is not finite".into()));
        }
        trace.push(total);
        if (total - prev).abs() / (n as f64) < EM_TOL {
            break;
        }
        prev = total;
        let mut resp = vec![vec![0.0; n]; k];
        for (i, (l, s)) in logs.iter().zip(&lse).enumerate() {
            for j in 0..k {
                resp[j][i] = (l[j] - s).exp();
            }
        }
        let mass: Vec<f64> = resp.iter().map(|r| r.iter().sum()).collect();
        let empty = mass.iter().position(|&m| m < 1e-8 * n as f64);
        let mut means = Vec::with_capacity(k);
        let mut covs = Vec::with_capacity(k);
        let mut weights = Vec::with_capacity(k);
        if let Some(j) = empty {
            if reinits == MAX_REINIT {
                return Err(Error::Numeric(format!(
                    "GMM component {j} emptied after {MAX_REINIT} reinitializations"
                )));
            }
            reinits += 1;
            log::debug!("GMM component {j} is empty; reinitializing at the worst-fit row");
            let far = (0..n).min_by(|&a, &b| lse[a].total_cmp(&lse[b])).unwrap_or(0);
            let ones = vec![1.0; n];
            let gm = weighted_mean(&rows, &ones, n as f64);
            for c in 0..k {
                if c == j {
                    means.push(rows[far].clone());
                    covs.push(weighted_cov(&rows, &ones, &gm, n as f64, reg));
                    weights.push(1.0 / k as f64);
                } else {
                    means.push(model.means[c].clone());
                    covs.push(model.covariances[c].clone());
                    weights.push(model.weights[c]);
                }
            }
            let t: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= t);
            trace.clear();
            prev = f64::NEG_INFINITY;
        } else {
            for j in 0..k {
                let m = weighted_mean(&rows, &resp[j], mass[j]);
                covs.push(weighted_cov(&rows, &resp[j], &m, mass[j], reg));
                means.push(m);
                weights.push(mass[j] / n as f64);
            }
            let t: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= t);
        }
        model = ridge_until_pd(weights, means, covs)?;
    }
    Ok((model, trace))
}

#[derive(Serialize, Deserialize)]
struct KdeRepr {
    centers: Vec<Vec<f64>>,
    bandwidths: Vec<f64>,
}

/// Product Gaussian-kernel density estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KdeRepr", into = "KdeRepr")]
pub struct KdeModel {
    centers: Vec<Vec<f64>>,
    bandwidths: Vec<f64>,
}

impl TryFrom<KdeRepr> for KdeModel {
    type Error = Error;

    fn try_from(r: KdeRepr) -> Result<Self> {
        KdeModel::new(r.centers, r.bandwidths)
    }
}

impl From<KdeModel> for KdeRepr {
    fn from(m: KdeModel) -> Self {
        KdeRepr {
            centers: m.centers,
            bandwidths: m.bandwidths,
        }
    }
}

impl KdeModel {
    pub fn new(centers: Vec<Vec<f64>>, bandwidths: Vec<f64>) -> Result<Self> {
        let d = bandwidths.len();
        if centers.is_empty() || d == 0 {
            return Err(Error::Domain("KDE needs at least one center and one dimension".into()));
        }
        if let Some(c) = centers.iter().find(|c| c.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: c.len() });
        }
        if bandwidths.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::Domain("KDE bandwidths must be positive and finite".into()));
        }
        Ok(KdeModel { centers, bandwidths })
    }

    pub fn dim(&self) -> usize {
        self.bandwidths.len()
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn loglik(&self, x: &[f64]) -> Result<f64> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
        let norm = -self.bandwidths.iter().map(|h| h.ln()).sum::<f64>()
            - d as f64 * LN_SQRT_2PI
            - (self.centers.len() as f64).ln();
        let terms: Vec<f64> = self
            .centers
            .iter()
            .map(|c| {
                -0.5 * c
                    .iter()
                    .zip(x)
                    .zip(&self.bandwidths)
                    .map(|((c, x), h)| ((x - c) / h).powi(2))
                    .sum::<f64>()
            })
            .collect();
        Ok(log_sum_exp(&terms) + norm)
    }

    pub fn loglik_rows(&self, data: &Dataset) -> Result<Vec<f64>> {
        data.to_rows().par_iter().map(|r| self.loglik(r)).collect()
    }
}

/// Product KDE with per-column Silverman bandwidths times `multiplier`.
pub fn fit_kde_multi(data: &Dataset, multiplier: f64) -> Result<KdeModel> {
    if data.is_empty() {
        return Err(Error::InsufficientData("KDE needs at least one row".into()));
    }
    if !(multiplier > 0.0 && multiplier.is_finite()) {
        return Err(Error::Config(format!("KDE bandwidth multiplier must be positive, got {multiplier}")));
    }
    let bandwidths = (0..data.n_cols())
        .map(|j| {
            let mut col = data.column(j);
            col.sort_by(f64::total_cmp);
            multiplier * silverman_bandwidth(&col)
        })
        .collect();
    KdeModel::new(data.to_rows(), bandwidths)
}

/// Seeded shuffle into (fit, validation) with `VALIDATION_FRACTION` held out.
pub fn validation_split(data: &Dataset, seed: u64) -> (Dataset, Dataset) {
    let n = data.n_rows();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(seed));
    let n_val = ((n as f64) * VALIDATION_FRACTION).round() as usize;
    let (val, fit) = idx.split_at(n_val.min(n));
    (data.select_rows(fit), data.select_rows(val))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Picks k from [`GMM_K_GRID`] by held-out log-likelihood, then refits on all
/// of `data`.
pub fn tune_gmm(data: &Dataset, reg: f64, seed: u64) -> Result<(GmmModel, usize)> {
    let (fit, val) = validation_split(data, seed);
    let mut best: Option<(f64, usize)> = None;
    for k in GMM_K_GRID {
        match fit_gmm(&fit, k, reg, seed).and_then(|m| m.loglik_rows(&val)) {
            Ok(ll) => {
                let s = mean(&ll);
                log::debug!("GMM k={k}: validation mean log-likelihood {s}");
                if s.is_finite() && best.is_none_or(|(b, _)| s > b) {
                    best = Some((s, k));
                }
            }
            Err(e) => log::debug!("GMM k={k} skipped: {e}"),
        }
    }
    let (_, k) = best.ok_or_else(|| Error::Numeric("no GMM size in the tuning grid could be fitted".into()))?;
    Ok((fit_gmm(data, k, reg, seed)?, k))
}

/// Picks the bandwidth multiplier from [`KDE_MULTIPLIER_GRID`] by held-out
/// log-likelihood, then refits on all of `data`.
pub fn tune_kde(data: &Dataset, seed: u64) -> Result<(KdeModel, f64)> {
    let (fit, val) = validation_split(data, seed);
    let mut best: Option<(f64, f64)> = None;
    for m in KDE_MULTIPLIER_GRID {
        let s = mean(&fit_kde_multi(&fit, m)?.loglik_rows(&val)?);
        log::debug!("KDE multiplier {m}: validation mean log-likelihood {s}");
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, m));
        }
    }
    let (_, m) = best.ok_or_else(|| Error::Numeric("KDE tuning found no candidate".into()))?;
    Ok((fit_kde_multi(data, m)?, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::MvnSampler;
    use rand_distr::StandardNormal;

    fn gaussian_rows(n: usize, mean: [f64; 2], seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|_| {
                vec![
                    mean[0] + rng.sample::<f64, _>(StandardNormal),
                    mean[1] + 0.5 * rng.sample::<f64, _>(StandardNormal),
                ]
            })
            .collect()
    }

    #[test]
    fn single_component_is_closed_form() {
        let ds = Dataset::from_rows(&gaussian_rows(2000, [1.0, -2.0], 1)).unwrap();
        let m = fit_gmm(&ds, 1, 1e-6, 0).unwrap();
        for j in 0..2 {
            let col = ds.column(j);
            let mu = col.iter().sum::<f64>() / col.len() as f64;
            assert!((m.means()[0][j] - mu).abs() < 0.05);
            assert!((m.means()[0][j] - mu).abs() < 1e-9);
            let var = col.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / col.len() as f64;
            assert!((m.covariances()[0][(j, j)] - var - 1e-6).abs() < 1e-9);
        }
    }

    #[test]
    fn separated_clusters_get_equal_weights() {
        let mut rows = gaussian_rows(1000, [-10.0, 0.0], 2);
        rows.extend(gaussian_rows(1000, [10.0, 5.0], 3));
        let ds = Dataset::from_rows(&rows).unwrap();
        let (m, trace) = fit_gmm_traced(&ds, 2, 1e-6, 4).unwrap();
        for w in m.weights() {
            assert!((w - 0.5).abs() < 0.05);
        }
        assert!(trace.len() >= 2);
    }

    #[test]
    fn em_loglik_is_nondecreasing() {
        let mut rows = gaussian_rows(600, [0.0, 0.0], 5);
        rows.extend(gaussian_rows(400, [2.0, 1.0], 6));
        rows.extend(gaussian_rows(300, [-1.0, 3.0], 7));
        let ds = Dataset::from_rows(&rows).unwrap();
        for k in [2, 3, 5] {
            let (_, trace) = fit_gmm_traced(&ds, k, 1e-6, k as u64).unwrap();
            for w in trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-8 * w[0].abs(), "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn too_few_rows_is_an_error() {
        let ds = Dataset::from_rows(&gaussian_rows(5, [0.0, 0.0], 1)).unwrap();
        assert!(matches!(fit_gmm(&ds, 2, 1e-6, 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn loglik_at_mode_and_far_away() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
        let m = GmmModel::new(vec![1.0], vec![vec![1.0, 2.0]], vec![cov.clone()]).unwrap();
        let expect = -2.0 * LN_SQRT_2PI - 0.5 * cov.determinant().ln();
        assert!((m.loglik(&[1.0, 2.0]).unwrap() - expect).abs() < 1e-12);
        let far = m.loglik(&[1e3, -1e3]).unwrap();
        assert!(far.is_finite() && far < -1e5);
        assert!(m.loglik(&[1.0]).is_err());
    }

    #[test]
    fn loglik_matches_naive_sum() {
        let mut rng = seeded_rng(9);
        let d = 3;
        let mut means = Vec::new();
        let mut covs = Vec::new();
        for _ in 0..3 {
            means.push((0..d).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>());
            let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            covs.push(&a * a.transpose() + DMatrix::identity(d, d) * 0.2);
        }
        let m = GmmModel::new(vec![0.2, 0.5, 0.3], means.clone(), covs.clone()).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut s = 0.0;
            for ((w, mu), c) in m.weights().iter().zip(&means).zip(&covs) {
                let diff = nalgebra::DVector::from_fn(d, |i, _| x[i] - mu[i]);
                let inv = c.clone().try_inverse().unwrap();
                let q = (diff.transpose() * inv * &diff)[(0, 0)];
                let norm = (2.0 * std::f64::consts::PI).powf(d as f64 / 2.0) * c.determinant().sqrt();
                s += w * (-0.5 * q).exp() / norm;
            }
            assert!((m.loglik(&x).unwrap() - s.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn kde_single_center_closed_form() {
        let k = KdeModel::new(vec![vec![1.0, 2.0]], vec![0.5, 2.0]).unwrap();
        let x = [1.3, 0.0];
        let expect = -0.5 * ((0.3f64 / 0.5).powi(2) + 1.0) - 0.5f64.ln() - 2f64.ln() - 2.0 * LN_SQRT_2PI;
        assert!((k.loglik(&x).unwrap() - expect).abs() < 1e-12);
        assert!(KdeModel::new(vec![vec![1.0]], vec![0.0]).is_err());
    }

    #[test]
    fn kde_integrates_to_one() {
        let rows = gaussian_rows(30, [0.0, 1.0], 3);
        let k = fit_kde_multi(&Dataset::from_rows(&rows).unwrap(), 1.0).unwrap();
        let (lo, hi) = (-10.0, 10.0);
        let g = 600;
        let step = (hi - lo) / g as f64;
        let mut s = 0.0;
        for i in 0..g {
            for j in 0..g {
                let x = [lo + (i as f64 + 0.5) * step, lo + (j as f64 + 0.5) * step];
                s += k.loglik(&x).unwrap().exp();
            }
        }
        assert!((s * step * step - 1.0).abs() < 1e-3, "{}", s * step * step);
    }

    #[test]
    fn zero_inflated_inputs_give_finite_scores_and_broad_kde() {
        let mut rng = seeded_rng(4);
        let s = MvnSampler::new(&DMatrix::identity(2, 2)).unwrap();
        let rows: Vec<Vec<f64>> = (0..400)
            .map(|i| {
                let z = s.sample(&mut rng);
                let mut r = vec![z[0].exp(), z[1].exp()];
                if i % 3 == 0 {
                    r[0] = 0.0;
                }
                if i % 4 == 0 {
                    r[1] = 0.0;
                }
                r
            })
            .collect();
        let ds = Dataset::from_rows(&rows).unwrap();
        let g = fit_gmm(&ds, 4, 1e-6, 1).unwrap();
        let k = fit_kde_multi(&ds, 1.0).unwrap();
        for x in [[0.0, 0.0], [0.0, 3.0], [2.0, 0.0], [50.0, 50.0], [0.05, 1.0]] {
            assert!(g.loglik(&x).unwrap().is_finite());
            assert!(k.loglik(&x).unwrap().is_finite());
        }
        assert!(k.loglik(&[0.05, 1.0]).unwrap().exp() > 0.0);
    }

    #[test]
    fn serde_round_trip_is_exact() {
        let ds = Dataset::from_rows(&gaussian_rows(300, [0.3, 0.7], 8)).unwrap();
        let g = fit_gmm(&ds, 3, 1e-6, 2).unwrap();
        let g2: GmmModel = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(g, g2);
        let k = fit_kde_multi(&ds, 0.5).unwrap();
        let k2: KdeModel = serde_json::from_str(&serde_json::to_string(&k).unwrap()).unwrap();
        assert_eq!(k, k2);
    }

    #[test]
    fn tuning_is_deterministic_and_uses_the_grid() {
        let mut rows = gaussian_rows(400, [-4.0, 0.0], 10);
        rows.extend(gaussian_rows(400, [4.0, 0.0], 11));
        let ds = Dataset::from_rows(&rows).unwrap();
        let (g, k) = tune_gmm(&ds, 1e-6, 3).unwrap();
        assert!(GMM_K_GRID.contains(&k) && k >= 2);
        assert_eq!(tune_gmm(&ds, 1e-6, 3).unwrap().0, g);
        let (_, m) = tune_kde(&ds, 3).unwrap();
        assert!(KDE_MULTIPLIER_GRID.contains(&m));
        let (fit, val) = validation_split(&ds, 1);
        assert_eq!((fit.n_rows(), val.n_rows()), (640, 160));
    }
}
