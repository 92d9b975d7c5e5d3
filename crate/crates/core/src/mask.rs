//! Distributions over binary zero/positive masks.
//!
//! A mask is encoded with `1 = positive`, `0 = zero`. Pattern index `k` in
//! enumerations has bit `i` set iff coordinate `i` is positive.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rgd::ZeroPattern;
use crate::stats::{ln_prob, log_sum_exp, seeded_rng, PROB_FLOOR};

/// Largest dimension for which the RBM partition function is enumerated.
pub const MAX_EXACT_DIM: usize = 20;

/// `I(x > 0)` elementwise.
pub fn binarize(data: &Dataset) -> Vec<Vec<u8>> {
    data.rows()
        .map(|r| r.iter().map(|&x| u8::from(x > 0.0)).collect())
        .collect()
}

fn floor_log(lp: f64) -> f64 {
    lp.max(PROB_FLOOR.ln())
}

fn pattern_visible(pattern: &ZeroPattern) -> Vec<f64> {
    pattern
        .zero_flags()
        .iter()
        .map(|&z| if z { 0.0 } else { 1.0 })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliMask {
    q: Vec<f64>,
}

impl BernoulliMask {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::Domain("zero rates must lie in [0, 1)".into()));
        }
        Ok(BernoulliMask { q })
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn logprob(&self, pattern: &ZeroPattern) -> f64 {
        let lp = self
            .q
            .iter()
            .zip(pattern.zero_flags())
            .map(|(&q, &z)| if z { ln_prob(q) } else { ln_prob(1.0 - q) })
            .sum();
        floor_log(lp)
    }
}

/// Per-column fraction of zeros.
pub fn fit_bernoulli(masks: &[Vec<u8>]) -> Result<BernoulliMask> {
    let d = masks.first().map(Vec::len).ok_or_else(|| Error::InsufficientData("empty mask matrix".into()))?;
    let n = masks.len() as f64;
    let q = (0..d)
        .map(|j| masks.iter().filter(|r| r[j] == 0).count() as f64 / n)
        .map(|q| q.min(1.0 - PROB_FLOOR))
        .collect();
    BernoulliMask::new(q)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

/// On-disk form of an RBM; `log_z` is checked against a fresh enumeration.
#[derive(Serialize, Deserialize)]
struct RbmRepr {
    weights: Vec<Vec<f64>>,
    visible_bias: Vec<f64>,
    hidden_bias: Vec<f64>,
    log_z: f64,
}

/// Bernoulli-Bernoulli restricted Boltzmann machine over masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RbmRepr", into = "RbmRepr")]
pub struct RbmMask {
    /// `n_hidden × n_visible`.
    weights: Vec<Vec<f64>>,
    visible_bias: Vec<f64>,
    hidden_bias: Vec<f64>,
    log_z: f64,
}

impl TryFrom<RbmRepr> for RbmMask {
    type Error = Error;

    fn try_from(r: RbmRepr) -> Result<Self> {
        let m = RbmMask::new(r.weights, r.visible_bias, r.hidden_bias)?;
        let tol = 1e-9 * m.log_z.abs().max(1.0);
        if !((m.log_z - r.log_z).abs() <= tol) {
            return Err(Error::ModelFile(format!(
                "stored RBM log partition {} does not match recomputed {}",
                r.log_z, m.log_z
            )));
        }
        Ok(m)
    }
}

impl From<RbmMask> for RbmRepr {
    fn from(m: RbmMask) -> Self {
        RbmRepr {
            weights: m.weights,
            visible_bias: m.visible_bias,
            hidden_bias: m.hidden_bias,
            log_z: m.log_z,
        }
    }
}

impl RbmMask {
    /// Builds an RBM and computes its exact log partition function.
    pub fn new(weights: Vec<Vec<f64>>, visible_bias: Vec<f64>, hidden_bias: Vec<f64>) -> Result<Self> {
        let d = visible_bias.len();
        if d == 0 {
            return Err(Error::Domain("RBM needs at least one visible unit".into()));
        }
        if d > MAX_EXACT_DIM {
            return Err(Error::Domain(format!(
                "exact normalization out of scope: {d} visible units, at most {MAX_EXACT_DIM} supported"
            )));
        }
        if weights.len() != hidden_bias.len() {
            return Err(Error::DimensionMismatch {
                expected: hidden_bias.len(),
                got: weights.len(),
            });
        }
        if let Some(row) = weights.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: row.len(),
            });
        }
        let finite = weights.iter().flatten().chain(&visible_bias).chain(&hidden_bias).all(|x| x.is_finite());
        if !finite {
            return Err(Error::Numeric("RBM parameters must be finite".into()));
        }
        let mut m = RbmMask {
            weights,
            visible_bias,
            hidden_bias,
            log_z: 0.0,
        };
        m.log_z = m.compute_log_z();
        Ok(m)
    }

    pub fn n_visible(&self) -> usize {
        self.visible_bias.len()
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden_bias.len()
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn visible_bias(&self) -> &[f64] {
        &self.visible_bias
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.hidden_bias
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    /// `-F(v) = b·v + Σ_j softplus(c_j + W_j·v)`.
    fn neg_free_energy(&self, v: &[f64]) -> f64 {
        let vis: f64 = self.visible_bias.iter().zip(v).map(|(b, x)| b * x).sum();
        let hid: f64 = self
            .weights
            .iter()
            .zip(&self.hidden_bias)
            .map(|(w, c)| softplus(c + w.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()))
            .sum();
        vis + hid
    }

    fn visible_from_index(&self, k: usize) -> Vec<f64> {
        (0..self.n_visible()).map(|i| (k >> i & 1) as f64).collect()
    }

    fn unnormalized_all(&self) -> Vec<f64> {
        (0..1usize << self.n_visible())
            .into_par_iter()
            .map(|k| self.neg_free_energy(&self.visible_from_index(k)))
            .collect()
    }

    fn compute_log_z(&self) -> f64 {
        log_sum_exp(&self.unnormalized_all())
    }

    /// Exact probability of every pattern, indexed with bit `i` = coordinate
    /// `i` positive.
    pub fn pattern_probs(&self) -> Vec<f64> {
        self.unnormalized_all()
            .into_iter()
            .map(|u| (u - self.log_z).exp())
            .collect()
    }

    pub fn logprob(&self, pattern: &ZeroPattern) -> f64 {
        floor_log(self.neg_free_energy(&pattern_visible(pattern)) - self.log_z)
    }

    fn hidden_probs(&self, v: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.hidden_bias)
            .map(|(w, c)| sigmoid(c + w.iter().zip(v).map(|(a, b)| a * b).sum::<f64>()))
            .collect()
    }

    fn visible_probs(&self, h: &[f64]) -> Vec<f64> {
        (0..self.n_visible())
            .map(|i| {
                let act: f64 = self.weights.iter().zip(h).map(|(w, hj)| w[i] * hj).sum();
                sigmoid(self.visible_bias[i] + act)
            })
            .collect()
    }

    /// Mean negative log pseudo-likelihood over the given masks.
    pub fn pseudo_nll(&self, masks: &[Vec<u8>]) -> f64 {
        let mut total = 0.0;
        for m in masks {
            let v: Vec<f64> = m.iter().map(|&b| b as f64).collect();
            let base = self.neg_free_energy(&v);
            for i in 0..v.len() {
                let mut flip = v.clone();
                flip[i] = 1.0 - flip[i];
                total -= ln_prob(sigmoid(base - self.neg_free_energy(&flip)));
            }
        }
        total / masks.len().max(1) as f64
    }
}

/// Training recipe for [`fit_rbm`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbmConfig {
    pub n_hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl RbmConfig {
    /// `2D` hidden units, 200 epochs, learning rate 0.05, batches of 64.
    pub fn for_dim(d: usize, seed: u64) -> Self {
        RbmConfig {
            n_hidden: 2 * d,
            epochs: 200,
            lr: 0.05,
            batch_size: 64,
            seed,
        }
    }
}

fn bernoulli_draw<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> Vec<f64> {
    p.iter().map(|&p| if rng.random::<f64>() < p { 1.0 } else { 0.0 }).collect()
}

/// CD-1 training. Weights start at `N(0, 0.01²)`, hidden biases at zero and
/// visible biases at the logit of the per-column positive rate.
pub fn fit_rbm(masks: &[Vec<u8>], cfg: &RbmConfig) -> Result<RbmMask> {
    let d = masks.first().map(Vec::len).ok_or_else(|| Error::InsufficientData("empty mask matrix".into()))?;
    if d > MAX_EXACT_DIM {
        return Err(Error::Domain(format!(
            "exact normalization out of scope: {d} visible units, at most {MAX_EXACT_DIM} supported"
        )));
    }
    if cfg.n_hidden == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("RBM needs hidden units and a positive batch size".into()));
    }
    let mut rng = seeded_rng(cfg.seed);
    let init = Normal::new(0.0, 0.01).expect("valid normal");
    let mut w: Vec<Vec<f64>> = (0..cfg.n_hidden)
        .map(|_| (0..d).map(|_| init.sample(&mut rng)).collect())
        .collect();
    let n = masks.len() as f64;
    let mut b: Vec<f64> = (0..d)
        .map(|i| {
            let p = (masks.iter().filter(|r| r[i] == 1).count() as f64 + 0.5) / (n + 1.0);
            (p / (1.0 - p)).ln()
        })
        .collect();
    let mut c = vec![0.0; cfg.n_hidden];
    let data: Vec<Vec<f64>> = masks.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect();
    let mut order: Vec<usize> = (0..data.len()).collect();

    // Scratch model reused for the conditional probabilities.
    let mut model = RbmMask {
        weights: w.clone(),
        visible_bias: b.clone(),
        hidden_bias: c.clone(),
        log_z: 0.0,
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut dw = vec![vec![0.0; d]; cfg.n_hidden];
            let mut db = vec![0.0; d];
            let mut dc = vec![0.0; cfg.n_hidden];
            for &r in batch {
                let v0 = &data[r];
                let ph0 = model.hidden_probs(v0);
                let h0 = bernoulli_draw(&ph0, &mut rng);
                let pv1 = model.visible_probs(&h0);
                let v1 = bernoulli_draw(&pv1, &mut rng);
                let ph1 = model.hidden_probs(&v1);
                for j in 0..cfg.n_hidden {
                    for i in 0..d {
                        dw[j][i] += ph0[j] * v0[i] - ph1[j] * v1[i];
                    }
                    dc[j] += ph0[j] - ph1[j];
                }
                for i in 0..d {
                    db[i] += v0[i] - v1[i];
                }
            }
            let step = cfg.lr / batch.len() as f64;
            for j in 0..cfg.n_hidden {
                for i in 0..d {
                    w[j][i] += step * dw[j][i];
                }
                c[j] += step * dc[j];
            }
            for i in 0..d {
                b[i] += step * db[i];
            }
            model.weights.clone_from(&w);
            model.visible_bias.clone_from(&b);
            model.hidden_bias.clone_from(&c);
        }
        if log::log_enabled!(log::Level::Debug) {
            log::debug!("rbm epoch {}: pseudo-nll {:.6}", epoch + 1, model.pseudo_nll(masks));
        }
    }
    RbmMask::new(w, b, c)
}

/// The mask distribution of a ZICAR model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskModel {
    Bernoulli(BernoulliMask),
    Rbm(RbmMask),
}

impl MaskModel {
    pub fn dim(&self) -> usize {
        match self {
            MaskModel::Bernoulli(m) => m.dim(),
            MaskModel::Rbm(m) => m.n_visible(),
        }
    }

    /// `ln q_S`, floored at `ln 1e-15`.
    pub fn logprob(&self, pattern: &ZeroPattern) -> Result<f64> {
        if pattern.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: pattern.dim(),
            });
        }
        Ok(match self {
            MaskModel::Bernoulli(m) => m.logprob(pattern),
            MaskModel::Rbm(m) => m.logprob(pattern),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern_of(bits: usize, d: usize) -> ZeroPattern {
        // bit set = positive
        ZeroPattern::from_zero_flags((0..d).map(|i| bits >> i & 1 == 0).collect())
    }

    fn empirical(masks: &[Vec<u8>], d: usize) -> Vec<f64> {
        let mut f = vec![0.0; 1 << d];
        for m in masks {
            let k: usize = m.iter().enumerate().map(|(i, &b)| (b as usize) << i).sum();
            f[k] += 1.0 / masks.len() as f64;
        }
        f
    }

    #[test]
    fn binarize_examples() {
        let ds = Dataset::from_rows(&[vec![0.0, 2.5], vec![1.0, 0.0], vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(binarize(&ds), vec![vec![0, 1], vec![1, 0], vec![0, 0], vec![1, 1]]);
    }

    #[test]
    fn bernoulli_fit() {
        let m = fit_bernoulli(&[vec![0, 1], vec![0, 1], vec![1, 1], vec![1, 1]]).unwrap();
        assert_eq!(m.q(), &[0.5, 0.0]);
        let mut rng = seeded_rng(2);
        let masks: Vec<Vec<u8>> = (0..10_000).map(|_| vec![u8::from(rng.random::<f64>() >= 0.25)]).collect();
        let m = fit_bernoulli(&masks).unwrap();
        assert!((m.q()[0] - 0.25).abs() <= 0.015);

        let mut rev = masks.clone();
        rev.reverse();
        assert_eq!(fit_bernoulli(&rev).unwrap(), m);
    }

    #[test]
    fn bernoulli_logprob() {
        let m = MaskModel::Bernoulli(BernoulliMask::new(vec![0.5, 0.5]).unwrap());
        for k in 0..4 {
            assert!((m.logprob(&pattern_of(k, 2)).unwrap() - 0.25f64.ln()).abs() < 1e-15);
        }
        let m = MaskModel::Bernoulli(BernoulliMask::new(vec![0.0, 0.3]).unwrap());
        let lp = m.logprob(&ZeroPattern::from_zero_flags(vec![true, false])).unwrap();
        assert_eq!(lp, PROB_FLOOR.ln());
        assert!(m.logprob(&pattern_of(0, 3)).is_err());
    }

    #[test]
    fn bernoulli_normalized_and_marginal_consistent() {
        let q = vec![0.1, 0.35, 0.6, 0.2];
        let m = BernoulliMask::new(q.clone()).unwrap();
        let probs: Vec<f64> = (0..16).map(|k| m.logprob(&pattern_of(k, 4)).exp()).collect();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for i in 0..4 {
            let zero: f64 = (0..16).filter(|k| k >> i & 1 == 0).map(|k| probs[k]).sum();
            assert!((zero - q[i]).abs() < 1e-10);
        }
    }

    fn random_rbm(d: usize, h: usize, seed: u64) -> RbmMask {
        let mut rng = seeded_rng(seed);
        let n = Normal::new(0.0, 0.8).unwrap();
        let w = (0..h).map(|_| (0..d).map(|_| n.sample(&mut rng)).collect()).collect();
        let b = (0..d).map(|_| n.sample(&mut rng)).collect();
        let c = (0..h).map(|_| n.sample(&mut rng)).collect();
        RbmMask::new(w, b, c).unwrap()
    }

    #[test]
    fn rbm_normalization_by_enumeration() {
        for d in [1, 3, 6, 10] {
            let m = random_rbm(d, 2 * d, d as u64);
            let total: f64 = (0..1usize << d).map(|k| m.logprob(&pattern_of(k, d)).exp()).sum();
            assert!((total - 1.0).abs() < 1e-10, "d={d}: {total}");
            assert!((m.pattern_probs().iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rbm_free_energy_matches_hidden_sum() {
        // Brute-force oracle: sum over hidden states of exp(-E(v, h)).
        let m = random_rbm(3, 3, 9);
        let v = [1.0, 0.0, 1.0];
        let mut s = 0.0;
        for hb in 0..8usize {
            let h: Vec<f64> = (0..3).map(|j| (hb >> j & 1) as f64).collect();
            let mut e = 0.0;
            for i in 0..3 {
                e += m.visible_bias()[i] * v[i];
            }
            for j in 0..3 {
                e += m.hidden_bias()[j] * h[j];
                for i in 0..3 {
                    e += m.weights()[j][i] * h[j] * v[i];
                }
            }
            s += e.exp();
        }
        assert!((m.neg_free_energy(&v) - s.ln()).abs() < 1e-12);
    }

    #[test]
    fn rbm_rejects_large_dim() {
        let d = MAX_EXACT_DIM + 1;
        let masks = vec![vec![1u8; d]; 4];
        assert!(fit_rbm(&masks, &RbmConfig::for_dim(d, 0)).is_err());
    }

    #[test]
    fn rbm_learns_independent_masks() {
        let mut rng = seeded_rng(4);
        let masks: Vec<Vec<u8>> = (0..4000)
            .map(|_| (0..2).map(|_| u8::from(rng.random::<bool>())).collect())
            .collect();
        let m = fit_rbm(&masks, &RbmConfig::for_dim(2, 1)).unwrap();
        for p in m.pattern_probs() {
            assert!((p - 0.25).abs() <= 0.05, "{p}");
        }
    }

    #[test]
    fn rbm_learns_xor_masks() {
        let mut rng = seeded_rng(5);
        let masks: Vec<Vec<u8>> = (0..4000)
            .map(|_| if rng.random::<bool>() { vec![0, 1] } else { vec![1, 0] })
            .collect();
        let cfg = RbmConfig {
            n_hidden: 4,
            ..RbmConfig::for_dim(2, 2)
        };
        let m = fit_rbm(&masks, &cfg).unwrap();
        let p = m.pattern_probs();
        assert!(p[1] + p[2] >= 0.9, "{p:?}");
        let emp = empirical(&masks, 2);
        assert!(p.iter().zip(&emp).all(|(a, b)| (a - b).abs() < 0.1));
    }

    #[test]
    fn rbm_learns_point_mass() {
        let masks = vec![vec![1u8, 0, 1]; 1000];
        let m = fit_rbm(&masks, &RbmConfig::for_dim(3, 3)).unwrap();
        assert!(m.pattern_probs()[0b101] >= 0.95);
    }

    #[test]
    fn rbm_round_trips_and_validates_log_z() {
        let m = MaskModel::Rbm(random_rbm(4, 5, 12));
        let s = serde_json::to_string(&m).unwrap();
        let back: MaskModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
        v["log_z"] = serde_json::json!(v["log_z"].as_f64().unwrap() + 0.5);
        assert!(serde_json::from_value::<MaskModel>(v).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = seeded_rng(6);
        let masks: Vec<Vec<u8>> = (0..300)
            .map(|_| (0..3).map(|_| u8::from(rng.random::<f64>() < 0.6)).collect())
            .collect();
        let cfg = RbmConfig {
            epochs: 20,
            ..RbmConfig::for_dim(3, 7)
        };
        assert_eq!(fit_rbm(&masks, &cfg).unwrap(), fit_rbm(&masks, &cfg).unwrap());
    }
}
