//! The rectified Gaussian distribution `ω = max(a, ν)`, `ν ~ N(0, Σ)`, and the
//! rectified Gaussian copula built on it.
//!
//! Observations on the latent scale are carried as [`LatentObs`], so whether a
//! coordinate sits at its threshold is decided by the raw datum being zero and
//! never by comparing floats against `a`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{
    bivariate_normal_cdf, conditional_gaussian, ln_prob, mvn_logpdf, mvn_orthant_mc, pearson,
    repair_correlation_with_floor, seeded_rng, std_normal_cdf, std_normal_logpdf, std_normal_sf, submatrix,
    ConditionalGaussian, CorrelationMatrix, MvnSampler, EIGEN_FLOOR,
};

/// Default Monte-Carlo budget for orthant probabilities with three or more
/// rectified coordinates.
pub const DEFAULT_MC_SAMPLES: usize = 4096;

const RHO_BOUND: f64 = 0.9999;
const RHO_GRID: usize = 41;
const RHO_TOL: f64 = 1e-6;
const RHO_MAX_ITER: usize = 200;

/// One latent coordinate: at its threshold (the datum was zero) or above it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatentObs {
    Rectified,
    Above(f64),
}

impl LatentObs {
    /// Numeric value on the latent scale given the threshold.
    pub fn value(self, a: f64) -> f64 {
        match self {
            LatentObs::Rectified => a,
            LatentObs::Above(w) => w,
        }
    }

    pub fn is_rectified(self) -> bool {
        matches!(self, LatentObs::Rectified)
    }
}

/// Which coordinates of a vector are zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ZeroPattern {
    zero: Vec<bool>,
}

impl ZeroPattern {
    pub fn from_zero_flags(zero: Vec<bool>) -> Self {
        ZeroPattern { zero }
    }

    /// Pattern of a nonnegative data row: coordinate `i` is zero iff `x_i == 0`.
    pub fn from_row(x: &[f64]) -> Self {
        ZeroPattern {
            zero: x.iter().map(|&v| v == 0.0).collect(),
        }
    }

    pub fn from_obs(obs: &[LatentObs]) -> Self {
        ZeroPattern {
            zero: obs.iter().map(|o| o.is_rectified()).collect(),
        }
    }

    /// Pattern whose zero set is given by the set bits of `bits`.
    pub fn from_bits(bits: u64, dim: usize) -> Self {
        ZeroPattern {
            zero: (0..dim).map(|i| bits >> i & 1 == 1).collect(),
        }
    }

    /// Every one of the `2^dim` patterns.
    pub fn all(dim: usize) -> impl Iterator<Item = ZeroPattern> {
        (0..1u64 << dim).map(move |b| ZeroPattern::from_bits(b, dim))
    }

    pub fn dim(&self) -> usize {
        self.zero.len()
    }

    pub fn is_zero(&self, i: usize) -> bool {
        self.zero[i]
    }

    pub fn zero_flags(&self) -> &[bool] {
        &self.zero
    }

    /// `S̄`, the zero coordinates.
    pub fn zero_set(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.zero[i]).collect()
    }

    /// `S`, the positive coordinates.
    pub fn positive_set(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| !self.zero[i]).collect()
    }
}

/// Parameters of a multivariate standard RGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgdParams {
    sigma: CorrelationMatrix,
    #[serde(with = "crate::model_file::nonfinite::vec")]
    thresholds: Vec<f64>,
}

impl RgdParams {
    pub fn new(sigma: CorrelationMatrix, thresholds: Vec<f64>) -> Result<Self> {
        if sigma.dim() != thresholds.len() {
            return Err(Error::DimensionMismatch {
                expected: sigma.dim(),
                got: thresholds.len(),
            });
        }
        if thresholds.iter().any(|a| a.is_nan() || *a == f64::INFINITY) {
            return Err(Error::Domain("thresholds must be finite or -inf".into()));
        }
        Ok(RgdParams { sigma, thresholds })
    }

    pub fn dim(&self) -> usize {
        self.thresholds.len()
    }

    pub fn sigma(&self) -> &CorrelationMatrix {
        &self.sigma
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }
}

/// `n` draws of `max(a, ν)` as latent observations.
pub fn sample_rgd_obs(params: &RgdParams, n: usize, seed: u64) -> Result<Vec<Vec<LatentObs>>> {
    let sampler = MvnSampler::new(params.sigma.matrix())?;
    let mut rng = seeded_rng(seed);
    Ok((0..n)
        .map(|_| {
            sampler
                .sample(&mut rng)
                .into_iter()
                .zip(&params.thresholds)
                .map(|(v, &a)| if v <= a { LatentObs::Rectified } else { LatentObs::Above(v) })
                .collect()
        })
        .collect())
}

/// `n` draws of `max(a, ν)`; rectified coordinates equal `a_i` exactly.
pub fn sample_rgd(params: &RgdParams, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    Ok(sample_rgd_obs(params, n, seed)?
        .into_iter()
        .map(|row| {
            row.into_iter()
                .zip(&params.thresholds)
                .map(|(o, &a)| o.value(a))
                .collect()
        })
        .collect())
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.abs() < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("correlation must lie in (-1, 1), got {rho}")))
    }
}

fn log_phi2(wi: f64, wj: f64, rho: f64) -> f64 {
    let s = 1.0 - rho * rho;
    -(2.0 * std::f64::consts::PI).ln() - 0.5 * s.ln()
        - (wi * wi - 2.0 * rho * wi * wj + wj * wj) / (2.0 * s)
}

/// Log-likelihood of one latent pair under the bivariate RGD, one branch per
/// zero pattern:
///
/// * both rectified: `ln Φ₂(a_i, a_j; ρ)`
/// * `i` rectified: `ln φ(ω_j) + ln Φ((a_i - ρ ω_j)/√(1-ρ²))`
/// * `j` rectified: symmetric
/// * neither: `ln φ₂(ω_i, ω_j; ρ)`
pub fn pair_loglik(wi: LatentObs, wj: LatentObs, rho: f64, ai: f64, aj: f64) -> Result<f64> {
    check_rho(rho)?;
    let s = (1.0 - rho * rho).sqrt();
    Ok(match (wi, wj) {
        (LatentObs::Rectified, LatentObs::Rectified) => ln_prob(bivariate_normal_cdf(ai, aj, rho)?),
        (LatentObs::Rectified, LatentObs::Above(w)) => {
            std_normal_logpdf(w) + ln_prob(std_normal_cdf((ai - rho * w) / s))
        }
        (LatentObs::Above(w), LatentObs::Rectified) => {
            std_normal_logpdf(w) + ln_prob(std_normal_cdf((aj - rho * w) / s))
        }
        (LatentObs::Above(x), LatentObs::Above(y)) => log_phi2(x, y, rho),
    })
}

/// Sufficient statistics of one coordinate pair for the pairwise likelihood.
struct PairStats {
    ai: f64,
    aj: f64,
    n_both_rectified: f64,
    /// ω_j where only `i` is rectified.
    i_rectified: Vec<f64>,
    /// ω_i where only `j` is rectified.
    j_rectified: Vec<f64>,
    n_both_above: f64,
    sum_sq: f64,
    sum_cross: f64,
}

impl PairStats {
    fn new(wi: &[LatentObs], wj: &[LatentObs], ai: f64, aj: f64) -> Self {
        let mut st = PairStats {
            ai,
            aj,
            n_both_rectified: 0.0,
            i_rectified: Vec::new(),
            j_rectified: Vec::new(),
            n_both_above: 0.0,
            sum_sq: 0.0,
            sum_cross: 0.0,
        };
        let (mut sii, mut sjj) = (0.0, 0.0);
        for (&x, &y) in wi.iter().zip(wj) {
            match (x, y) {
                (LatentObs::Rectified, LatentObs::Rectified) => st.n_both_rectified += 1.0,
                (LatentObs::Rectified, LatentObs::Above(w)) => st.i_rectified.push(w),
                (LatentObs::Above(w), LatentObs::Rectified) => st.j_rectified.push(w),
                (LatentObs::Above(u), LatentObs::Above(v)) => {
                    st.n_both_above += 1.0;
                    sii += u * u;
                    sjj += v * v;
                    st.sum_cross += u * v;
                }
            }
        }
        st.sum_sq = sii + sjj;
        st
    }

    fn mixed_term(ws: &[f64], a: f64, rho: f64, s: f64) -> f64 {
        ws.iter()
            .map(|&w| std_normal_logpdf(w) + ln_prob(std_normal_cdf((a - rho * w) / s)))
            .sum()
    }

    /// Total log-likelihood. Terms are grouped so that exchanging the two
    /// coordinates reproduces the same floating-point value.
    fn loglik(&self, rho: f64) -> f64 {
        let s2 = 1.0 - rho * rho;
        let s = s2.sqrt();
        let (lo, hi) = if self.ai.total_cmp(&self.aj).is_le() {
            (self.ai, self.aj)
        } else {
            (self.aj, self.ai)
        };
        let both_rect = if self.n_both_rectified > 0.0 {
            self.n_both_rectified * ln_prob(bivariate_normal_cdf(lo, hi, rho).unwrap_or(0.0))
        } else {
            0.0
        };
        let both_above = self.n_both_above * (-(2.0 * std::f64::consts::PI).ln() - 0.5 * s2.ln())
            - (self.sum_sq - 2.0 * rho * self.sum_cross) / (2.0 * s2);
        let mixed = Self::mixed_term(&self.i_rectified, self.ai, rho, s)
            + Self::mixed_term(&self.j_rectified, self.aj, rho, s);
        (both_rect + both_above) + mixed
    }
}

/// Maximizes a unimodal function on `[lo, hi]` (Brent: golden section with
/// parabolic steps), starting from `x0`.
fn brent_maximize(f: impl Fn(f64) -> f64, lo: f64, hi: f64, x0: f64, tol: f64, max_iter: usize) -> f64 {
    const CGOLD: f64 = 0.381_966_011_250_105;
    let g = |x: f64| -f(x);
    let (mut a, mut b) = (lo, hi);
    let (mut x, mut w, mut v) = (x0, x0, x0);
    let mut fx = g(x);
    let (mut fw, mut fv) = (fx, fx);
    let (mut d, mut e): (f64, f64) = (0.0, 0.0);
    for _ in 0..max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-12;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if !(p.abs() >= (0.5 * q * etemp).abs() || p <= q * (a - x) || p >= q * (b - x)) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = g(u);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    x
}

/// Pairwise maximum-likelihood estimate of `Σ_ij` under the bivariate RGD.
///
/// A 41-point scan over `[-0.9999, 0.9999]` picks the bracket, then Brent's
/// method refines to `1e-6` in ρ.
pub fn estimate_rho(wi: &[LatentObs], wj: &[LatentObs], ai: f64, aj: f64) -> Result<f64> {
    if wi.len() != wj.len() {
        return Err(Error::DimensionMismatch {
            expected: wi.len(),
            got: wj.len(),
        });
    }
    if wi.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "pairwise estimation needs at least 2 rows, got {}",
            wi.len()
        )));
    }
    let stats = PairStats::new(wi, wj, ai, aj);
    if stats.n_both_rectified as usize == wi.len() {
        return Err(Error::InsufficientData(
            "no information: every pair is rectified in both coordinates".into(),
        ));
    }
    let grid: Vec<f64> = (0..RHO_GRID)
        .map(|k| -RHO_BOUND + 2.0 * RHO_BOUND * k as f64 / (RHO_GRID - 1) as f64)
        .collect();
    let (best, _) = grid
        .iter()
        .enumerate()
        .map(|(k, &r)| (k, stats.loglik(r)))
        .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if v > acc.1 { (k, v) } else { acc });
    let lo = grid[best.saturating_sub(1)];
    let hi = grid[(best + 1).min(RHO_GRID - 1)];
    let rho = brent_maximize(|r| stats.loglik(r), lo, hi, grid[best], RHO_TOL, RHO_MAX_ITER);
    Ok(rho.clamp(-RHO_BOUND, RHO_BOUND))
}

/// Full correlation estimate from latent columns.
///
/// With `use_mle` every pair is fit by [`estimate_rho`]; otherwise the Pearson
/// correlation of all rows (rectified entries at their threshold) is used.
/// Either way the result passes through [`repair_correlation`].
pub fn assemble_sigma(columns: &[Vec<LatentObs>], a: &[f64], use_mle: bool) -> Result<CorrelationMatrix> {
    assemble_sigma_with_floor(columns, a, use_mle, EIGEN_FLOOR)
}

/// [`assemble_sigma`] repairing with eigenvalue floor `floor`.
pub fn assemble_sigma_with_floor(
    columns: &[Vec<LatentObs>],
    a: &[f64],
    use_mle: bool,
    floor: f64,
) -> Result<CorrelationMatrix> {
    let d = columns.len();
    if a.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: a.len(),
        });
    }
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| ((i + 1)..d).map(move |j| (i, j))).collect();
    let numeric: Vec<Vec<f64>> = if use_mle {
        Vec::new()
    } else {
        columns
            .iter()
            .zip(a)
            .map(|(c, &ai)| c.iter().map(|o| o.value(ai)).collect())
            .collect()
    };
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            if use_mle {
                estimate_rho(&columns[i], &columns[j], a[i], a[j])
            } else {
                Ok(pearson(&numeric[i], &numeric[j]))
            }
        })
        .collect::<Result<_>>()?;
    let mut m = DMatrix::identity(d, d);
    for (&(i, j), &r) in pairs.iter().zip(&values) {
        m[(i, j)] = r;
        m[(j, i)] = r;
    }
    Ok(repair_correlation_with_floor(&m, floor))
}

fn split_obs(params: &RgdParams, obs: &[LatentObs]) -> Result<(Vec<usize>, Vec<f64>, Vec<usize>)> {
    if obs.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            got: obs.len(),
        });
    }
    let mut pos = Vec::new();
    let mut vals = Vec::new();
    let mut zero = Vec::new();
    for (i, o) in obs.iter().enumerate() {
        match *o {
            LatentObs::Rectified => zero.push(i),
            LatentObs::Above(w) => {
                let a = params.thresholds[i];
                if !(w > a) || !w.is_finite() {
                    return Err(Error::Domain(format!(
                        "coordinate {i} is marked positive but ω = {w} is not above a = {a}"
                    )));
                }
                pos.push(i);
                vals.push(w);
            }
        }
    }
    Ok((pos, vals, zero))
}

/// `P(ν <= upper)` for `ν ~ N(mean, cov)`, closed form up to two dimensions.
fn orthant_prob(cond: &ConditionalGaussian, upper: &[f64], mc_samples: usize, seed: u64) -> Result<f64> {
    let m = cond.dim();
    let sd: Vec<f64> = (0..m).map(|i| cond.cov[(i, i)].max(0.0).sqrt()).collect();
    let degenerate = sd.iter().any(|&s| s < 1e-10);
    if m == 0 {
        return Ok(1.0);
    }
    if m == 1 || (m == 2 && !degenerate) {
        let z: Vec<f64> = (0..m)
            .map(|i| {
                if sd[i] > 0.0 {
                    (upper[i] - cond.mean[i]) / sd[i]
                } else if upper[i] >= cond.mean[i] {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        if m == 1 {
            return Ok(std_normal_cdf(z[0]));
        }
        let r = (cond.cov[(0, 1)] / (sd[0] * sd[1])).clamp(-1.0 + 1e-12, 1.0 - 1e-12);
        return bivariate_normal_cdf(z[0], z[1], r);
    }
    Ok(mvn_orthant_mc(cond, upper, mc_samples, seed)?.prob)
}

/// Exact rectified-Gaussian copula log-density at one latent observation:
///
/// `ln φ_|S|(ω_S | Σ_S) + ln P(ν_S̄ <= a_S̄ | ω_S) - Σ_S̄ ln Φ(a_i) - Σ_S ln φ(ω_j)`.
///
/// The conditional orthant term is closed form for up to two rectified
/// coordinates and Monte Carlo beyond that.
pub fn copula_logdensity_exact(params: &RgdParams, obs: &[LatentObs], mc_samples: usize, seed: u64) -> Result<f64> {
    let (pos, vals, zero) = split_obs(params, obs)?;
    let sigma = params.sigma.matrix();
    let a = &params.thresholds;
    let mut out = 0.0;
    if !pos.is_empty() {
        out += mvn_logpdf(&vals, &submatrix(sigma, &pos, &pos))?;
        out -= vals.iter().map(|&w| std_normal_logpdf(w)).sum::<f64>();
    }
    if zero.is_empty() {
        return Ok(out);
    }
    let cond = if pos.is_empty() {
        ConditionalGaussian {
            mean: nalgebra::DVector::zeros(zero.len()),
            cov: sigma.clone(),
        }
    } else {
        conditional_gaussian(&params.sigma, &pos, &vals)?
    };
    let upper: Vec<f64> = zero.iter().map(|&i| a[i]).collect();
    let p = orthant_prob(&cond, &upper, mc_samples, seed)?;
    out += ln_prob(p);
    out -= zero.iter().map(|&i| ln_prob(std_normal_cdf(a[i]))).sum::<f64>();
    Ok(out)
}

/// Polynomial-time approximation that drops the conditional orthant term:
/// `ln φ_|S|(ω_S | Σ_S) - Σ_S ln φ(ω_j)`, and `0` when nothing is positive.
pub fn copula_logdensity_approx(params: &RgdParams, obs: &[LatentObs]) -> Result<f64> {
    let (pos, vals, _) = split_obs(params, obs)?;
    if pos.is_empty() {
        return Ok(0.0);
    }
    let sub = submatrix(params.sigma.matrix(), &pos, &pos);
    Ok(mvn_logpdf(&vals, &sub)? - vals.iter().map(|&w| std_normal_logpdf(w)).sum::<f64>())
}

/// `ln P(ν_S̄ <= a_S̄, ν_S > a_S)` for `ν ~ N(0, Σ)`: the probability of a zero
/// pattern. Closed form for `D <= 2`, Monte Carlo otherwise.
pub fn zero_pattern_logprob(params: &RgdParams, pattern: &ZeroPattern, mc_samples: usize, seed: u64) -> Result<f64> {
    let d = params.dim();
    if pattern.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: pattern.dim(),
        });
    }
    let a = &params.thresholds;
    let sign: Vec<f64> = (0..d).map(|i| if pattern.is_zero(i) { 1.0 } else { -1.0 }).collect();
    let upper: Vec<f64> = (0..d).map(|i| sign[i] * a[i]).collect();
    let p = match d {
        1 => {
            if pattern.is_zero(0) {
                std_normal_cdf(a[0])
            } else {
                std_normal_sf(a[0])
            }
        }
        2 => {
            let rho = sign[0] * sign[1] * params.sigma.get(0, 1);
            if rho.abs() >= 1.0 {
                return Err(Error::Domain("degenerate bivariate correlation".into()));
            }
            bivariate_normal_cdf(upper[0], upper[1], rho)?
        }
        _ => {
            let sigma = params.sigma.matrix();
            let cov = DMatrix::from_fn(d, d, |i, j| sign[i] * sign[j] * sigma[(i, j)]);
            let cond = ConditionalGaussian {
                mean: nalgebra::DVector::zeros(d),
                cov,
            };
            mvn_orthant_mc(&cond, &upper, mc_samples, seed)?.prob
        }
    };
    Ok(ln_prob(p))
}
