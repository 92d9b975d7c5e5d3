//! Synthetic ground truth for the anomaly-detection benchmark: correlated
//! Gaussians pushed through random monotone sigmoid mixtures, with zeros from
//! either an RBM mask (ZICAR) or per-variable thresholds (ZIBT). Also holds the
//! corruption scheme and the two benchmark metrics.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::marginals::percentile_sorted;
use crate::mask::RbmMask;
use crate::stats::{derive_seed, seeded_rng, std_normal_cdf, std_normal_quantile, CorrelationMatrix, MvnSampler};

pub const SIGMOID_COMPONENTS: usize = 5;

/// Normal draws used to build each ZIBT inverse map.
pub const ZIBT_ANCHOR_DRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Zicar,
    Zibt,
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataKind::Zicar => "zicar",
            DataKind::Zibt => "zibt",
        })
    }
}

impl FromStr for DataKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zicar" => Ok(DataKind::Zicar),
            "zibt" => Ok(DataKind::Zibt),
            other => Err(Error::Config(format!("unknown data kind '{other}' (expected zicar or zibt)"))),
        }
    }
}

/// `h(x) = Σ_j π_j σ(b_j (x − c_j))`, strictly increasing with range (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidMixture {
    pub weights: Vec<f64>,
    pub slopes: Vec<f64>,
    pub offsets: Vec<f64>,
}

impl SigmoidMixture {
    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let raw: Vec<f64> = (0..SIGMOID_COMPONENTS).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        let slopes = (0..SIGMOID_COMPONENTS)
            .map(|_| loop {
                let b: f64 = rng.random_range(0.0..2.0);
                if b > 0.0 {
                    break b;
                }
            })
            .collect();
        let offsets = (0..SIGMOID_COMPONENTS).map(|_| rng.random_range(-5.0..5.0)).collect();
        SigmoidMixture { weights, slopes, offsets }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.slopes)
            .zip(&self.offsets)
            .map(|((p, b), c)| p / (1.0 + (-b * (x - c)).exp()))
            .sum()
    }
}

/// Piecewise-linear map from latent values above the threshold to data
/// values, clamped to the end anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMap {
    latent: Vec<f64>,
    values: Vec<f64>,
}

impl EmpiricalMap {
    pub fn eval(&self, w: f64) -> f64 {
        let n = self.latent.len();
        if w <= self.latent[0] {
            return self.values[0];
        }
        if w >= self.latent[n - 1] {
            return self.values[n - 1];
        }
        let k = self.latent.partition_point(|&l| l <= w);
        let (l0, l1) = (self.latent[k - 1], self.latent[k]);
        let t = (w - l0) / (l1 - l0);
        self.values[k - 1] + t * (self.values[k] - self.values[k - 1])
    }

    pub fn len(&self) -> usize {
        self.latent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latent.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TruthMask {
    Rbm(RbmMask),
    Thresholds { a: Vec<f64>, maps: Vec<EmpiricalMap> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub kind: DataKind,
    pub sigma_true: CorrelationMatrix,
    pub maps: Vec<SigmoidMixture>,
    pub mask: TruthMask,
    pub seed: u64,
}

impl GroundTruth {
    pub fn dim(&self) -> usize {
        self.sigma_true.dim()
    }

    /// ZIBT marginal zero rates `Φ(a_i)`; `None` for ZICAR truth.
    pub fn zero_rates(&self) -> Option<Vec<f64>> {
        match &self.mask {
            TruthMask::Thresholds { a, .. } => Some(a.iter().map(|&t| std_normal_cdf(t)).collect()),
            TruthMask::Rbm(_) => None,
        }
    }
}

/// Wishart(I, df) draw by the Bartlett decomposition, scaled to unit diagonal.
fn wishart_correlation<R: Rng + ?Sized>(d: usize, df: usize, rng: &mut R) -> Result<CorrelationMatrix> {
    let mut a = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        let chi = ChiSquared::new((df - i) as f64).map_err(|e| Error::Numeric(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let w = &a * a.transpose();
    let mut c = w.clone();
    for i in 0..d {
        for j in 0..d {
            c[(i, j)] = w[(i, j)] / (w[(i, i)] * w[(j, j)]).abs().sqrt();
        }
    }
    let c = (&c + c.transpose()) * 0.5;
    CorrelationMatrix::new(c)
}

fn random_rbm<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<RbmMask> {
    let hidden = (2f64.powf(d as f64 / 2.0).round() as usize).max(1);
    let mut normal = |mean: f64| mean + 0.1 * rng.sample::<f64, _>(StandardNormal);
    let weights = (0..hidden).map(|_| (0..d).map(|_| normal(0.0)).collect()).collect();
    let visible = (0..d).map(|_| normal(1.0)).collect();
    let hidden_bias = (0..hidden).map(|_| normal(0.0)).collect();
    RbmMask::new(weights, visible, hidden_bias)
}

/// Builds the threshold and inverse map of one ZIBT variable.
fn zibt_map<R: Rng + ?Sized>(h: &SigmoidMixture, q: f64, rng: &mut R) -> Result<EmpiricalMap> {
    let mut values: Vec<f64> = (0..ZIBT_ANCHOR_DRAWS)
        .filter_map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            let keep = rng.random::<f64>() >= q;
            keep.then(|| h.eval(z))
        })
        .collect();
    if values.len() < 2 {
        return Err(Error::Numeric("ZIBT generator produced fewer than two positive anchors".into()));
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() as f64;
    let latent = (1..=values.len())
        .map(|r| std_normal_quantile(q + (1.0 - q) * r as f64 / (m + 1.0)))
        .collect::<Result<Vec<_>>>()?;
    Ok(EmpiricalMap { latent, values })
}

pub fn make_ground_truth(kind: DataKind, d: usize, seed: u64) -> Result<GroundTruth> {
    if d < 2 {
        return Err(Error::Domain(format!("ground truth needs D >= 2, got {d}")));
    }
    let sigma_true = wishart_correlation(d, d, &mut seeded_rng(derive_seed(seed, 0)))?;
    let mut map_rng = seeded_rng(derive_seed(seed, 1));
    let maps: Vec<SigmoidMixture> = (0..d).map(|_| SigmoidMixture::random(&mut map_rng)).collect();
    let mut mask_rng = seeded_rng(derive_seed(seed, 2));
    let mask = match kind {
        DataKind::Zicar => TruthMask::Rbm(random_rbm(d, &mut mask_rng)?),
        DataKind::Zibt => {
            let mut a = Vec::with_capacity(d);
            let mut inv = Vec::with_capacity(d);
            for h in &maps {
                let q = loop {
                    let q: f64 = mask_rng.random_range(0.0..0.5);
                    if q > 0.0 {
                        break q;
                    }
                };
                a.push(std_normal_quantile(q)?);
                inv.push(zibt_map(h, q, &mut mask_rng)?);
            }
            TruthMask::Thresholds { a, maps: inv }
        }
    };
    Ok(GroundTruth {
        kind,
        sigma_true,
        maps,
        mask,
        seed,
    })
}

pub fn sample_dataset(gt: &GroundTruth, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Domain("sample size must be at least 1".into()));
    }
    let d = gt.dim();
    let sampler = MvnSampler::new(gt.sigma_true.matrix())?;
    let mut rng = seeded_rng(seed);
    let mut out = Dataset::new(crate::dataset::default_names(d));
    match &gt.mask {
        TruthMask::Rbm(rbm) => {
            let mut cumulative = rbm.pattern_probs();
            let mut acc = 0.0;
            for p in cumulative.iter_mut() {
                acc += *p;
                *p = acc;
            }
            for _ in 0..n {
                let z = sampler.sample(&mut rng);
                let u = rng.random::<f64>() * acc;
                let k = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
                let row: Vec<f64> = (0..d)
                    .map(|i| if k >> i & 1 == 1 { gt.maps[i].eval(z[i]) } else { 0.0 })
                    .collect();
                out.push_row(&row)?;
            }
        }
        TruthMask::Thresholds { a, maps } => {
            for _ in 0..n {
                let z = sampler.sample(&mut rng);
                let row: Vec<f64> = (0..d)
                    .map(|i| if z[i] <= a[i] { 0.0 } else { maps[i].eval(z[i]) })
                    .collect();
                out.push_row(&row)?;
            }
        }
    }
    Ok(out)
}

/// Copies `normal` with every positive entry replaced by a uniform draw
/// between the 1st and 99th percentiles of that column's training positives.
pub fn corrupt(normal: &Dataset, train: &Dataset, seed: u64) -> Result<Dataset> {
    let d = normal.n_cols();
    if train.n_cols() != d {
        return Err(Error::DimensionMismatch {
            expected: train.n_cols(),
            got: d,
        });
    }
    let mut bounds = Vec::with_capacity(d);
    for j in 0..d {
        let mut pos: Vec<f64> = train.column(j).into_iter().filter(|&x| x > 0.0).collect();
        if pos.len() < 2 {
            return Err(Error::DegenerateColumn {
                column: j,
                reason: format!("{} positive training values, need at least 2 for corruption bounds", pos.len()),
            });
        }
        pos.sort_by(f64::total_cmp);
        bounds.push((percentile_sorted(&pos, 1.0), percentile_sorted(&pos, 99.0)));
    }
    let mut rng = seeded_rng(seed);
    let mut out = normal.clone();
    for i in 0..out.n_rows() {
        for (x, &(lo, hi)) in out.row_mut(i).iter_mut().zip(&bounds) {
            if *x > 0.0 {
                *x = lo + (hi - lo) * rng.random::<f64>();
            }
        }
    }
    Ok(out)
}

/// Mann–Whitney AUC for "abnormal scores higher"; ties count one half.
pub fn auc(normal: &[f64], abnormal: &[f64]) -> Result<f64> {
    if normal.is_empty() || abnormal.is_empty() {
        return Err(Error::InsufficientData("AUC needs nonempty score sets".into()));
    }
    if normal.iter().chain(abnormal).any(|s| s.is_nan()) {
        return Err(Error::Numeric("AUC score is NaN".into()));
    }
    let mut all: Vec<(f64, bool)> = normal
        .iter()
        .map(|&s| (s, false))
        .chain(abnormal.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += all[i..=j].iter().filter(|e| e.1).count() as f64 * mid;
        i = j + 1;
    }
    let (na, nn) = (abnormal.len() as f64, normal.len() as f64);
    Ok((rank_sum - na * (na + 1.0) / 2.0) / (na * nn))
}

/// Frobenius norm of `est − truth`.
pub fn sigma_l2_error(est: &CorrelationMatrix, truth: &CorrelationMatrix) -> Result<f64> {
    if est.dim() != truth.dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.dim(),
            got: est.dim(),
        });
    }
    Ok((est.matrix() - truth.matrix()).norm())
}
