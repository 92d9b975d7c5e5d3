//! Gaussian numerics shared by every model: univariate and bivariate normal
//! distribution functions, multivariate normal log-densities, conditional
//! Gaussian blocks, correlation-matrix repair and orthant probabilities.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

/// Floor applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-15;

/// Floor applied to densities before taking logarithms.
pub const DENSITY_FLOOR: f64 = 1e-300;

/// Smallest eigenvalue kept by [`repair_correlation`].
pub const EIGEN_FLOOR: f64 = 1e-6;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub type SeededRng = ChaCha8Rng;

/// The RNG used throughout the crate. Identical seeds give identical streams.
pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent seed for a sub-stream (splitmix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `ln Σ exp(v_i)` without overflow; `-inf` for an empty slice.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Clamps a probability into `[PROB_FLOOR, 1 - PROB_FLOOR]`.
pub fn clamp_prob(p: f64) -> f64 {
    if p.is_nan() {
        return PROB_FLOOR;
    }
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// `ln` of a probability after clamping.
pub fn ln_prob(p: f64) -> f64 {
    clamp_prob(p).ln()
}

/// `ln` of a density after flooring.
pub fn ln_density(f: f64) -> f64 {
    if f.is_nan() {
        return DENSITY_FLOOR.ln();
    }
    f.max(DENSITY_FLOOR).ln()
}

pub fn std_normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn std_normal_logpdf(x: f64) -> f64 {
    -LN_SQRT_2PI - 0.5 * x * x
}

pub fn std_normal_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 - Φ(x)` without cancellation.
pub fn std_normal_sf(x: f64) -> f64 {
    std_normal_cdf(-x)
}

/// Inverse of the standard normal CDF.
///
/// Rational initial guess followed by Halley refinement against the
/// erfc-based CDF, which brings the result to working precision.
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "normal quantile requires p in (0, 1), got {p}"
        )));
    }
    Ok(quantile_unchecked(p))
}

fn quantile_unchecked(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_690e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    // Work in the lower half and reflect, so tail probabilities near 1 keep
    // their resolution through 1 - p.
    let (pl, sign) = if p > 0.5 { (1.0 - p, -1.0) } else { (p, 1.0) };
    let mut x = if pl < P_LOW {
        let q = (-2.0 * pl.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = pl - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    };
    for _ in 0..2 {
        let e = std_normal_cdf(x) - pl;
        let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    sign * x
}

// Gauss-Legendre half-rules (nodes on [-1, 0), symmetric weights) with 6, 12
// and 20 points.
const GL_W: [&[f64]; 3] = [
    &[0.171_324_492_379_170_5, 0.360_761_573_048_138_4, 0.467_913_934_572_690_4],
    &[
        0.047_175_336_386_511_77,
        0.106_939_325_995_318_3,
        0.160_078_328_543_346_4,
        0.203_167_426_723_065_9,
        0.233_492_536_538_354_7,
        0.249_147_045_813_402_9,
    ],
    &[
        0.017_614_007_139_152_12,
        0.040_601_429_800_386_94,
        0.062_672_048_334_109_06,
        0.083_276_741_576_704_75,
        0.101_930_119_817_240_4,
        0.118_194_531_961_518_4,
        0.131_688_638_449_176_6,
        0.142_096_109_318_382_1,
        0.149_172_986_472_603_7,
        0.152_753_387_130_725_9,
    ],
];
const GL_X: [&[f64]; 3] = [
    &[-0.932_469_514_203_152_2, -0.661_209_386_466_264_7, -0.238_619_186_083_197_0],
    &[
        -0.981_560_634_246_719_1,
        -0.904_117_256_370_475_0,
        -0.769_902_674_194_305_0,
        -0.587_317_954_286_617_1,
        -0.367_831_498_998_180_2,
        -0.125_233_408_511_469_2,
    ],
    &[
        -0.993_128_599_185_094_9,
        -0.963_971_927_277_913_8,
        -0.912_234_428_251_325_9,
        -0.839_116_971_822_218_8,
        -0.746_331_906_460_150_8,
        -0.636_053_680_726_515_0,
        -0.510_867_001_950_827_1,
        -0.373_706_088_715_419_6,
        -0.227_785_851_141_645_1,
        -0.076_526_521_133_497_33,
    ],
];

/// `P(X <= a, Y <= b)` for a standard bivariate normal with correlation `rho`.
///
/// Drezner-Wesolowsky integral in `asin(rho)` evaluated with Gauss-Legendre
/// quadrature whose order grows with `|rho|`; the near-singular range uses the
/// Genz series correction.
pub fn bivariate_normal_cdf(a: f64, b: f64, rho: f64) -> Result<f64> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Domain(format!(
            "bivariate normal requires |rho| < 1, got {rho}"
        )));
    }
    if a.is_nan() || b.is_nan() {
        return Err(Error::Domain("bivariate normal bound is NaN".into()));
    }
    if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if a == f64::INFINITY {
        return Ok(std_normal_cdf(b));
    }
    if b == f64::INFINITY {
        return Ok(std_normal_cdf(a));
    }
    if rho == 0.0 {
        return Ok(std_normal_cdf(a) * std_normal_cdf(b));
    }
    Ok(upper_bvn(-a, -b, rho).clamp(0.0, 1.0))
}

/// `P(X > h, Y > k)` with correlation `r`, finite `h`, `k` and `|r| < 1`.
fn upper_bvn(h: f64, k: f64, r: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let ng = if r.abs() < 0.3 {
        0
    } else if r.abs() < 0.75 {
        1
    } else {
        2
    };
    let (w, x) = (GL_W[ng], GL_X[ng]);
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        for i in 0..w.len() {
            for node in [x[i], -x[i]] {
                let sn = (asr * (node + 1.0) / 2.0).sin();
                bvn += w[i] * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        bvn = bvn * asr / (2.0 * two_pi) + std_normal_cdf(-h) * std_normal_cdf(-k);
    } else {
        let mut k = k;
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        let as_ = (1.0 - r) * (1.0 + r);
        let mut a = as_.sqrt();
        let bs = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        bvn = a
            * (-(bs / as_ + hk) / 2.0).exp()
            * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
        if hk > -160.0 {
            let b = bs.sqrt();
            bvn -= (-hk / 2.0).exp()
                * two_pi.sqrt()
                * std_normal_cdf(-b / a)
                * b
                * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a /= 2.0;
        for i in 0..w.len() {
            let mut xs = (a * (x[i] + 1.0)).powi(2);
            let mut rs = (1.0 - xs).sqrt();
            bvn += a
                * w[i]
                * ((-bs / (2.0 * xs) - hk / (1.0 + rs)).exp() / rs
                    - (-(bs / xs + hk) / 2.0).exp() * (1.0 + c * xs * (1.0 + d * xs)));
            xs = as_ * (1.0 - x[i]).powi(2) / 4.0;
            rs = (1.0 - xs).sqrt();
            bvn += a
                * w[i]
                * (-(bs / xs + hk) / 2.0).exp()
                * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                    - (1.0 + c * xs * (1.0 + d * xs)));
        }
        bvn = -bvn / two_pi;
        if r > 0.0 {
            bvn += std_normal_cdf(-h.max(k));
        } else {
            bvn = -bvn + (std_normal_cdf(-h) - std_normal_cdf(-k)).max(0.0);
        }
    }
    bvn
}

/// A correlation matrix: symmetric, unit diagonal, positive semi-definite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CorrelationMatrix(DMatrix<f64>);

impl CorrelationMatrix {
    pub fn identity(dim: usize) -> Self {
        CorrelationMatrix(DMatrix::identity(dim, dim))
    }

    /// Validates `m` without modifying it.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let d = m.nrows();
        if d == 0 || m.ncols() != d {
            return Err(Error::Domain("correlation matrix must be square and nonempty".into()));
        }
        for i in 0..d {
            if (m[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!("diagonal entry {i} is {} not 1", m[(i, i)])));
            }
            for j in 0..i {
                let (x, y) = (m[(i, j)], m[(j, i)]);
                if (x - y).abs() > 1e-12 || !(x.abs() < 1.0) {
                    return Err(Error::Domain(format!(
                        "entry ({i},{j}) = {x} breaks symmetry or |r| < 1"
                    )));
                }
            }
        }
        let min_eig = min_eigenvalue(&m);
        if min_eig < -1e-10 {
            return Err(Error::NotPositiveDefinite {
                context: "correlation matrix".into(),
                min_eig,
                max_eig: max_eigenvalue(&m),
            });
        }
        let mut out = m;
        for i in 0..d {
            out[(i, i)] = 1.0;
        }
        Ok(CorrelationMatrix(out))
    }

    /// 2x2 matrix with off-diagonal `rho`.
    pub fn bivariate(rho: f64) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..d).all(|j| i == j || self.0[(i, j)] == 0.0))
    }

    /// Ratio of largest to smallest eigenvalue.
    pub fn condition_number(&self) -> f64 {
        let eig = SymmetricEigen::new(self.0.clone()).eigenvalues;
        let max = eig.max();
        let min = eig.min();
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }
}

impl TryFrom<Vec<Vec<f64>>> for CorrelationMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Domain("correlation matrix rows must have equal length".into()));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        CorrelationMatrix::new(DMatrix::from_row_slice(d, d, &flat))
    }
}

impl From<CorrelationMatrix> for Vec<Vec<f64>> {
    fn from(c: CorrelationMatrix) -> Self {
        let d = c.dim();
        (0..d).map(|i| (0..d).map(|j| c.0[(i, j)]).collect()).collect()
    }
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

pub(crate) fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.max()
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Rows and columns `idx` of `m`.
pub(crate) fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Lower Cholesky factor, or a not-positive-definite error describing `context`.
pub(crate) fn cholesky(m: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    match m.clone().cholesky() {
        Some(c) => Ok(c.l()),
        None => Err(Error::NotPositiveDefinite {
            context: context.to_string(),
            min_eig: min_eigenvalue(m),
            max_eig: max_eigenvalue(m),
        }),
    }
}

/// `ln φ_D(x | 0, L Lᵀ)` from a lower Cholesky factor.
pub(crate) fn mvn_logpdf_chol(x: &[f64], l: &DMatrix<f64>) -> f64 {
    let d = x.len();
    let mut z = vec![0.0; d];
    let mut log_det = 0.0;
    for i in 0..d {
        let mut s = x[i];
        for j in 0..i {
            s -= l[(i, j)] * z[j];
        }
        z[i] = s / l[(i, i)];
        log_det += l[(i, i)].ln();
    }
    let quad: f64 = z.iter().map(|v| v * v).sum();
    -(d as f64) * LN_SQRT_2PI - log_det - 0.5 * quad
}

/// Zero-mean multivariate normal log-density.
pub fn mvn_logpdf(x: &[f64], cov: &DMatrix<f64>) -> Result<f64> {
    if cov.nrows() != x.len() || cov.ncols() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: cov.nrows(),
            got: x.len(),
        });
    }
    if x.is_empty() {
        return Ok(0.0);
    }
    let l = cholesky(cov, "covariance in mvn_logpdf")?;
    Ok(mvn_logpdf_chol(x, &l))
}

/// Mean and covariance of the unconditioned block given the conditioned one.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl ConditionalGaussian {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Conditions `N(0, cov)` on `ω_S = cond_values` for the index set `cond_idx`.
/// The returned block is ordered by increasing index over the complement.
pub fn conditional_gaussian(
    cov: &CorrelationMatrix,
    cond_idx: &[usize],
    cond_values: &[f64],
) -> Result<ConditionalGaussian> {
    let d = cov.dim();
    if cond_idx.len() != cond_values.len() {
        return Err(Error::DimensionMismatch {
            expected: cond_idx.len(),
            got: cond_values.len(),
        });
    }
    if cond_idx.is_empty() || cond_idx.len() >= d {
        return Err(Error::Domain(
            "conditioning set must be a nonempty proper subset".into(),
        ));
    }
    if cond_idx.iter().any(|&i| i >= d) {
        return Err(Error::Domain("conditioning index out of range".into()));
    }
    let free: Vec<usize> = (0..d).filter(|i| !cond_idx.contains(i)).collect();
    let m = cov.matrix();
    let s_block = submatrix(m, cond_idx, cond_idx);
    let cross = submatrix(m, &free, cond_idx);
    let free_block = submatrix(m, &free, &free);
    let chol = s_block.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite {
        context: format!("conditioning block Σ_S for S = {cond_idx:?}"),
        min_eig: min_eigenvalue(&s_block),
        max_eig: max_eigenvalue(&s_block),
    })?;
    let w = DVector::from_column_slice(cond_values);
    let mean = &cross * chol.solve(&w);
    let cov = &free_block - &cross * chol.solve(&cross.transpose());
    Ok(ConditionalGaussian {
        mean,
        cov: symmetrize(&cov),
    })
}

/// Projects a symmetric unit-diagonal matrix onto valid correlation matrices.
///
/// Inputs whose smallest eigenvalue already clears [`EIGEN_FLOOR`] come back
/// unchanged. Otherwise eigenvalues are clipped at the floor, the diagonal is
/// renormalized, and a final shrink toward the identity restores the floor
/// that renormalization can erode.
pub fn repair_correlation(raw: &DMatrix<f64>) -> CorrelationMatrix {
    repair_correlation_with_floor(raw, EIGEN_FLOOR)
}

/// [`repair_correlation`] with a caller-chosen eigenvalue floor in `(0, 1)`.
pub fn repair_correlation_with_floor(raw: &DMatrix<f64>, floor: f64) -> CorrelationMatrix {
    let floor = if floor > 0.0 && floor < 1.0 { floor } else { EIGEN_FLOOR };
    let d = raw.nrows();
    let mut m = symmetrize(raw);
    for i in 0..d {
        m[(i, i)] = 1.0;
        for j in 0..d {
            if i != j && !m[(i, j)].is_finite() {
                m[(i, j)] = 0.0;
            }
        }
    }
    if min_eigenvalue(&m) >= floor {
        return CorrelationMatrix(m);
    }
    let eig = SymmetricEigen::new(m);
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    let mut c = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    let scale: Vec<f64> = (0..d).map(|i| c[(i, i)].sqrt()).collect();
    for i in 0..d {
        for j in 0..d {
            c[(i, j)] /= scale[i] * scale[j];
        }
    }
    c = symmetrize(&c);
    let lam = min_eigenvalue(&c);
    if lam < floor {
        // (1-t)C + tI lifts every eigenvalue by t(1-λ) and keeps the unit diagonal.
        let t = (floor - lam) / (1.0 - lam) * (1.0 + 1e-9);
        c = c * (1.0 - t) + DMatrix::identity(d, d) * t;
    }
    for i in 0..d {
        c[(i, i)] = 1.0;
    }
    CorrelationMatrix(c)
}

/// Draws from `N(0, cov)` through a (semi-definite tolerant) Cholesky factor.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    l: DMatrix<f64>,
}

impl MvnSampler {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        Ok(MvnSampler { l: psd_cholesky(cov)? })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        (0..d)
            .map(|i| (0..=i).map(|j| self.l[(i, j)] * z[j]).sum())
            .collect()
    }
}

/// Pearson correlation; zero when either sample has no spread.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Monte-Carlo probability estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthantEstimate {
    pub prob: f64,
    pub std_error: f64,
}

/// Lower Cholesky factor of a PSD matrix; columns with a non-positive pivot
/// are zeroed.
fn psd_cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    let scale = (0..d).map(|i| m[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let tol = 1e-12 * scale;
    let mut l = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut s = m[(j, j)];
        for k in 0..j {
            s -= l[(j, k)] * l[(j, k)];
        }
        if s < -1e-8 * scale {
            return Err(Error::NotPositiveDefinite {
                context: "orthant covariance".into(),
                min_eig: min_eigenvalue(m),
                max_eig: max_eigenvalue(m),
            });
        }
        if s <= tol {
            continue;
        }
        let ljj = s.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..d {
            let mut t = m[(i, j)];
            for k in 0..j {
                t -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = t / ljj;
        }
    }
    Ok(l)
}

/// `P(ν <= upper)` componentwise for `ν ~ N(cond.mean, cond.cov)`.
///
/// Sequential conditioning estimator (Genz separation of variables) driven by
/// antithetic uniform pairs; the standard error is computed over pair means.
/// One-dimensional problems are exact.
pub fn mvn_orthant_mc(
    cond: &ConditionalGaussian,
    upper: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<OrthantEstimate> {
    let m = cond.dim();
    if upper.len() != m || cond.cov.nrows() != m || cond.cov.ncols() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: upper.len(),
        });
    }
    if n_samples == 0 {
        return Err(Error::Domain("orthant estimate needs at least one sample".into()));
    }
    if m == 0 {
        return Ok(OrthantEstimate {
            prob: 1.0,
            std_error: 0.0,
        });
    }
    let l = psd_cholesky(&cond.cov)?;
    let bound = |i: usize| upper[i] - cond.mean[i];
    if m == 1 {
        let p = if l[(0, 0)] > 0.0 {
            std_normal_cdf(bound(0) / l[(0, 0)])
        } else if bound(0) >= 0.0 {
            1.0
        } else {
            0.0
        };
        return Ok(OrthantEstimate {
            prob: p,
            std_error: 0.0,
        });
    }

    let mut rng = seeded_rng(seed);
    let n_pairs = n_samples.div_ceil(2);
    let mut w = vec![0.0; m];
    let mut y = vec![0.0; m];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let sample = |w: &[f64], y: &mut [f64]| -> f64 {
        let mut prob = 1.0;
        for i in 0..m {
            let mut s = 0.0;
            for j in 0..i {
                s += l[(i, j)] * y[j];
            }
            let b = bound(i) - s;
            let lii = l[(i, i)];
            if lii > 0.0 {
                let e = std_normal_cdf(b / lii);
                if e <= 0.0 {
                    return 0.0;
                }
                prob *= e;
                let u = (w[i] * e).clamp(1e-300, 1.0 - 1e-16);
                y[i] = quantile_unchecked(u);
            } else if b < 0.0 {
                return 0.0;
            } else {
                y[i] = 0.0;
            }
        }
        prob
    };
    for _ in 0..n_pairs {
        for wi in w.iter_mut() {
            *wi = rng.random::<f64>();
        }
        let p1 = sample(&w, &mut y);
        for wi in w.iter_mut() {
            *wi = 1.0 - *wi;
        }
        let p2 = sample(&w, &mut y);
        let v = 0.5 * (p1 + p2);
        sum += v;
        sum_sq += v * v;
    }
    let n = n_pairs as f64;
    let mean = sum / n;
    let var = if n_pairs > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(OrthantEstimate {
        prob: mean,
        std_error: (var / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson rule on [lo, hi] with `n` (even) panels.
    fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        let mut s = f(lo) + f(hi);
        for i in 1..n {
            let x = lo + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    /// Φ₂ by one-dimensional quadrature of φ(x)·Φ((b - ρx)/√(1-ρ²)).
    fn bvn_oracle(a: f64, b: f64, rho: f64) -> f64 {
        let s = (1.0 - rho * rho).sqrt();
        let lo = -12.0;
        let hi = a.min(12.0);
        if hi <= lo {
            return 0.0;
        }
        simpson(
            |x| {
                let z = (b - rho * x) / s;
                std_normal_pdf(x) * 0.5 * libm::erfc(-z / 2f64.sqrt())
            },
            lo,
            hi,
            20_000,
        )
    }

    #[test]
    fn pdf_values() {
        assert!((std_normal_pdf(0.0) - 0.398_942_280_4).abs() < 1e-10);
        let direct = (-0.5f64).exp() / (2.0 * PI).sqrt();
        assert!((std_normal_pdf(1.0) - direct).abs() < 1e-15);
        assert!((std_normal_pdf(1.0) - 0.241_970_724_5).abs() < 1e-10);
        assert_eq!(std_normal_pdf(-1.0), std_normal_pdf(1.0));
    }

    #[test]
    fn cdf_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        assert_eq!(std_normal_cdf(f64::INFINITY), 1.0);
        assert_eq!(std_normal_cdf(f64::NEG_INFINITY), 0.0);
        let quad = 0.5 + simpson(std_normal_pdf, 0.0, 1.959_964, 2000);
        assert!((quad - 0.975).abs() < 1e-6);
        assert!((std_normal_cdf(1.959_964) - quad).abs() < 1e-12);
        for x in [-5.0, -1.3, 0.2, 2.7] {
            assert!((std_normal_cdf(-x) - (1.0 - std_normal_cdf(x))).abs() < 1e-15);
        }
    }

    #[test]
    fn quantile_values() {
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
        // Bisection on Φ(x) = 0.975 as an independent root-finder.
        let (mut lo, mut hi) = (0.0, 5.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if std_normal_cdf(mid) < 0.975 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let q = std_normal_quantile(0.975).unwrap();
        assert!((q - lo).abs() < 1e-12);
        assert!((q - 1.959_964).abs() < 1e-6);
        assert!((std_normal_quantile(0.025).unwrap() + q).abs() < 1e-12);
        assert!(std_normal_quantile(0.0).is_err());
        assert!(std_normal_quantile(1.0).is_err());
        assert!(std_normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn quantile_round_trip_grid() {
        let mut p = 1e-6;
        while p < 1.0 - 1e-6 {
            let x = std_normal_quantile(p).unwrap();
            assert!((std_normal_cdf(x) - p).abs() <= 1e-9, "p = {p}");
            p += 1e-3;
        }
        for p in [1e-6, 1e-12, 1.0 - 1e-6, 1e-300] {
            let x = std_normal_quantile(p).unwrap();
            assert!((std_normal_cdf(x) - p).abs() <= 1e-9 * p.max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn bvn_closed_forms() {
        assert!((bivariate_normal_cdf(0.0, 0.0, 0.0).unwrap() - 0.25).abs() < 1e-15);
        let expect = 0.25 + 0.5f64.asin() / (2.0 * PI);
        assert!((bivariate_normal_cdf(0.0, 0.0, 0.5).unwrap() - expect).abs() < 1e-8);
        assert!((expect - 1.0 / 3.0).abs() < 1e-12);
        for rho in [-0.99, -0.95, -0.5, 0.1, 0.8, 0.93, 0.999] {
            let e = 0.25 + f64::asin(rho) / (2.0 * PI);
            assert!((bivariate_normal_cdf(0.0, 0.0, rho).unwrap() - e).abs() < 1e-10, "{rho}");
        }
        assert_eq!(
            bivariate_normal_cdf(f64::INFINITY, 0.7, 0.3).unwrap(),
            std_normal_cdf(0.7)
        );
        assert_eq!(bivariate_normal_cdf(f64::NEG_INFINITY, 0.7, 0.3).unwrap(), 0.0);
        assert!(bivariate_normal_cdf(0.0, 0.0, 1.0).is_err());
        assert!(bivariate_normal_cdf(0.0, 0.0, -1.2).is_err());
    }

    #[test]
    fn bvn_matches_quadrature_oracle() {
        let grid = [-3.1, -1.0, -0.2, 0.0, 0.4, 1.5, 2.8];
        for &rho in &[-0.97, -0.8, -0.4, -0.1, 0.2, 0.6, 0.9, 0.95] {
            for &a in &grid {
                for &b in &grid {
                    let got = bivariate_normal_cdf(a, b, rho).unwrap();
                    let want = bvn_oracle(a, b, rho);
                    assert!((got - want).abs() < 1e-8, "({a},{b},{rho}): {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn bvn_independence_and_symmetry() {
        let grid = [-4.0, -2.0, -0.5, 0.0, 0.3, 1.1, 3.0];
        for &a in &grid {
            for &b in &grid {
                let p = bivariate_normal_cdf(a, b, 0.0).unwrap();
                assert!((p - std_normal_cdf(a) * std_normal_cdf(b)).abs() < 1e-10);
                for rho in [-0.6, 0.35, 0.95] {
                    let x = bivariate_normal_cdf(a, b, rho).unwrap();
                    let y = bivariate_normal_cdf(b, a, rho).unwrap();
                    assert!((x - y).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn bvn_monotone() {
        let mut prev = 0.0;
        for i in 0..200 {
            let rho = -0.995 + i as f64 * 0.01;
            let p = bivariate_normal_cdf(0.3, -0.4, rho).unwrap();
            assert!(p >= prev - 1e-14);
            prev = p;
        }
        let mut prev = 0.0;
        for i in 0..100 {
            let a = -5.0 + i as f64 * 0.1;
            let p = bivariate_normal_cdf(a, 0.2, 0.7).unwrap();
            assert!(p >= prev - 1e-14);
            prev = p;
        }
    }

    #[test]
    fn mvn_logpdf_values() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        let ln2pi = (2.0 * PI).ln();
        assert!((mvn_logpdf(&[0.0, 0.0], &i2).unwrap() + ln2pi).abs() < 1e-14);
        assert!((mvn_logpdf(&[1.0, 1.0], &i2).unwrap() + ln2pi + 1.0).abs() < 1e-14);

        // Normalize the unnormalized kernel exp(-xᵀΣ⁻¹x/2) by 2-D quadrature.
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let inv = cov.clone().try_inverse().unwrap();
        let kernel = |x: f64, y: f64| {
            let q = inv[(0, 0)] * x * x + 2.0 * inv[(0, 1)] * x * y + inv[(1, 1)] * y * y;
            (-0.5 * q).exp()
        };
        let z = simpson(|x| simpson(|y| kernel(x, y), -10.0, 10.0, 400), -10.0, 10.0, 400);
        let want = kernel(1.0, 1.0).ln() - z.ln();
        assert!((mvn_logpdf(&[1.0, 1.0], &cov).unwrap() - want).abs() < 1e-8);

        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 1.0]);
        match mvn_logpdf(&[0.0, 0.0], &bad) {
            Err(Error::NotPositiveDefinite { min_eig, .. }) => assert!(min_eig < 0.0),
            other => panic!("expected PD error, got {other:?}"),
        }
    }

    #[test]
    fn mvn_integrates_to_one() {
        for rho in [-0.8, -0.3, 0.0, 0.45, 0.85] {
            let cov = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
            let n = 320;
            let h = 16.0 / n as f64;
            let mut total = 0.0;
            for i in 0..=n {
                for j in 0..=n {
                    let x = -8.0 + i as f64 * h;
                    let y = -8.0 + j as f64 * h;
                    let wx = if i == 0 || i == n { 0.5 } else { 1.0 };
                    let wy = if j == 0 || j == n { 0.5 } else { 1.0 };
                    total += wx * wy * mvn_logpdf(&[x, y], &cov).unwrap().exp();
                }
            }
            assert!((total * h * h - 1.0).abs() < 1e-4, "rho {rho}");
        }
    }

    fn random_corr(d: usize, seed: u64) -> CorrelationMatrix {
        let mut rng = seeded_rng(seed);
        let a = DMatrix::from_fn(d, d + 2, |_, _| rng.random::<f64>() - 0.5);
        let s = &a * a.transpose();
        let mut c = s.clone();
        for i in 0..d {
            for j in 0..d {
                c[(i, j)] = s[(i, j)] / (s[(i, i)] * s[(j, j)]).sqrt();
            }
        }
        CorrelationMatrix::new(symmetrize(&c)).unwrap()
    }

    #[test]
    fn conditional_identity_and_bivariate() {
        let id = CorrelationMatrix::identity(4);
        let c = conditional_gaussian(&id, &[1, 3], &[0.7, -2.0]).unwrap();
        assert!(c.mean.iter().all(|v| v.abs() < 1e-15));
        assert!((c.cov.clone() - DMatrix::identity(2, 2)).norm() < 1e-15);

        let rho = 0.6;
        let w = 1.3;
        let s = CorrelationMatrix::bivariate(rho).unwrap();
        let c = conditional_gaussian(&s, &[1], &[w]).unwrap();
        assert!((c.mean[0] - rho * w).abs() < 1e-14);
        assert!((c.cov[(0, 0)] - (1.0 - rho * rho)).abs() < 1e-14);
    }

    #[test]
    fn conditional_matches_explicit_inverse() {
        let s = random_corr(3, 11);
        let m = s.matrix();
        let c = conditional_gaussian(&s, &[0, 2], &[0.4, -1.1]).unwrap();
        // Explicit 2x2 inverse by the adjugate formula.
        let (a, b, d) = (m[(0, 0)], m[(0, 2)], m[(2, 2)]);
        let det = a * d - b * b;
        let inv = [[d / det, -b / det], [-b / det, a / det]];
        let k = [m[(1, 0)], m[(1, 2)]];
        let w = [0.4, -1.1];
        let mut mean = 0.0;
        let mut var = m[(1, 1)];
        for i in 0..2 {
            for j in 0..2 {
                mean += k[i] * inv[i][j] * w[j];
                var -= k[i] * inv[i][j] * k[j];
            }
        }
        assert!((c.mean[0] - mean).abs() < 1e-12);
        assert!((c.cov[(0, 0)] - var).abs() < 1e-12);
    }

    #[test]
    fn conditional_total_covariance() {
        for seed in 0..10 {
            let s = random_corr(4, seed);
            let m = s.matrix();
            let cond = [0usize, 3];
            let free = [1usize, 2];
            let c = conditional_gaussian(&s, &cond, &[0.0, 0.0]).unwrap();
            // Σ_free = Σ_{free|S} + Σ_{free,S} Σ_S⁻¹ Σ_{S,free}
            let s_inv = submatrix(m, &cond, &cond).try_inverse().unwrap();
            let cross = submatrix(m, &free, &cond);
            let rebuilt = &c.cov + &cross * s_inv * cross.transpose();
            assert!((rebuilt - submatrix(m, &free, &free)).norm() < 1e-10);
        }
    }

    #[test]
    fn conditional_errors() {
        let id = CorrelationMatrix::identity(3);
        assert!(conditional_gaussian(&id, &[], &[]).is_err());
        assert!(conditional_gaussian(&id, &[0, 1, 2], &[0.0; 3]).is_err());
    }

    #[test]
    fn repair_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(repair_correlation(&id).matrix(), &id);
        let pd = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]);
        assert!((repair_correlation(&pd).matrix() - &pd).norm() < 1e-12);

        let bad = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, 0.9, 0.9, 1.0, -0.9, 0.9, -0.9, 1.0]);
        assert!(min_eigenvalue(&bad) < 0.0);
        let fixed = repair_correlation(&bad);
        assert!(min_eigenvalue(fixed.matrix()) >= EIGEN_FLOOR * (1.0 - 1e-6));
        for i in 0..3 {
            assert_eq!(fixed.get(i, i), 1.0);
        }
    }

    #[test]
    fn orthant_univariate_is_exact() {
        let c = ConditionalGaussian {
            mean: DVector::from_vec(vec![0.3]),
            cov: DMatrix::from_row_slice(1, 1, &[2.25]),
        };
        let e = mvn_orthant_mc(&c, &[1.0], 100, 1).unwrap();
        let want = std_normal_cdf((1.0 - 0.3) / 1.5);
        assert!((e.prob - want).abs() <= 3.0 * e.std_error + 1e-14);
    }

    #[test]
    fn orthant_independent_and_correlated() {
        let ind = ConditionalGaussian {
            mean: DVector::from_vec(vec![0.0, 0.5]),
            cov: DMatrix::identity(2, 2),
        };
        let e = mvn_orthant_mc(&ind, &[0.2, -0.1], 4096, 9).unwrap();
        let want = std_normal_cdf(0.2) * std_normal_cdf(-0.6);
        assert!((e.prob - want).abs() <= 3.0 * e.std_error + 1e-12);

        let rho = 0.7;
        let cor = ConditionalGaussian {
            mean: DVector::zeros(2),
            cov: DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]),
        };
        let e = mvn_orthant_mc(&cor, &[0.3, -0.5], 4096, 5).unwrap();
        let want = bivariate_normal_cdf(0.3, -0.5, rho).unwrap();
        assert!(e.std_error > 0.0);
        assert!((e.prob - want).abs() <= 3.0 * e.std_error, "{e:?} vs {want}");

        let again = mvn_orthant_mc(&cor, &[0.3, -0.5], 4096, 5).unwrap();
        assert_eq!(e, again);
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(7, 0);
        let b = derive_seed(7, 1);
        let c = derive_seed(8, 0);
        assert!(a != b && a != c && b != c);
        assert_eq!(a, derive_seed(7, 0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn repaired_matrices_are_valid(
                d in 2usize..6,
                entries in proptest::collection::vec(-0.999f64..0.999, 15),
            ) {
                let mut m = DMatrix::identity(d, d);
                let mut k = 0;
                for i in 0..d {
                    for j in 0..i {
                        m[(i, j)] = entries[k];
                        m[(j, i)] = entries[k];
                        k += 1;
                    }
                }
                let r = repair_correlation(&m);
                prop_assert!(CorrelationMatrix::new(r.matrix().clone()).is_ok());
                prop_assert!(min_eigenvalue(r.matrix()) >= 0.0);
                for i in 0..d {
                    prop_assert_eq!(r.get(i, i), 1.0);
                    for j in 0..d {
                        prop_assert!(r.get(i, j).abs() <= 1.0);
                        prop_assert_eq!(r.get(i, j), r.get(j, i));
                    }
                }
            }
        }
    }
}
