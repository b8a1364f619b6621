//! Synthetic black-box oracles with known ground truth.
//!
//! [`LinearSetOracle`] is additive in the low-level features, and its
//! high-level response is the response to the group-expanded mask, so the
//! true coefficients are exactly consistent. [`MilMaxOracle`] is a
//! multiple-instance model: the bag score saturates in the strongest
//! instance evidence, and masking at the high level carries an extra
//! missingness penalty of up to `bias_gap`.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nested::{build_aggregation_matrix, AttributionPair, NestedShape};
use crate::perturbation::{derive_seed, BlackBoxOracle, OracleError};

/// Labels an oracle exposes for scoring attributions.
pub trait GroundTruth {
    /// Relevance of each high-level feature, for NDCG.
    fn instance_labels(&self) -> Vec<bool>;
    /// Label of each low-level feature, for AUROC.
    fn low_labels(&self) -> Vec<bool>;
}

fn mask_key(seed: u64, mask: &[bool]) -> u64 {
    let mut key = derive_seed(seed, mask.len() as u64);
    for chunk in mask.chunks(64) {
        let word = chunk.iter().enumerate().fold(0u64, |acc, (i, &b)| acc | (u64::from(b) << i));
        key = derive_seed(key, word);
    }
    key
}

fn check_mask(mask: &[bool], expected: usize) -> Result<(), OracleError> {
    if mask.len() != expected {
        return Err(OracleError(format!("mask has {} entries, expected {expected}", mask.len())));
    }
    Ok(())
}

/// How to choose the coefficients of a [`LinearSetOracle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffSpec {
    Explicit(Vec<f64>),
    /// Large coefficients in `positive_groups`, small ones elsewhere,
    /// rescaled so the full-mask output equals `total`.
    Random { positive_groups: Vec<usize>, total: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSetOracle {
    pub shape: NestedShape,
    pub coeffs: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
}

pub fn make_linear_oracle(shape: &NestedShape, spec: &CoeffSpec, noise_std: f64, seed: u64) -> Result<LinearSetOracle> {
    if !(noise_std.is_finite() && noise_std >= 0.0) {
        return Err(Error::InvalidConfig(format!("noise_std must be finite and >= 0, got {noise_std}")));
    }
    let coeffs = match spec {
        CoeffSpec::Explicit(c) => {
            if c.len() != shape.n_low() {
                return Err(Error::DimensionMismatch {
                    what: "linear oracle coefficients",
                    expected: shape.n_low(),
                    got: c.len(),
                });
            }
            c.clone()
        }
        CoeffSpec::Random { positive_groups, total } => {
            check_groups(shape, positive_groups)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xC0EF));
            let mut c = Vec::with_capacity(shape.n_low());
            for j in 0..shape.n_groups() {
                let positive = positive_groups.contains(&j);
                for _ in shape.group_range(j) {
                    c.push(if positive { rng.random_range(0.5..1.0) } else { rng.random_range(0.0..0.1) });
                }
            }
            let sum: f64 = c.iter().sum();
            c.iter_mut().for_each(|v| *v *= total / sum);
            c
        }
    };
    let full: f64 = coeffs.iter().sum();
    if coeffs.iter().any(|c| !c.is_finite()) || !(-1e-12..=1.0 + 1e-12).contains(&full) {
        return Err(Error::InvalidConfig(format!("full-mask output {full} of linear oracle is outside [0, 1]")));
    }
    Ok(LinearSetOracle {
        shape: shape.clone(),
        coeffs,
        noise_std,
        seed,
    })
}

impl LinearSetOracle {
    /// `(Mc, c)`, exactly consistent.
    pub fn ground_truth(&self) -> AttributionPair {
        let m = build_aggregation_matrix(&self.shape);
        AttributionPair::new(m.apply(&self.coeffs), self.coeffs.clone())
    }

    /// Deterministic noise for a low-level mask.
    fn noise(&self, mask: &[bool]) -> f64 {
        if self.noise_std == 0.0 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mask_key(self.seed, mask));
        let z: f64 = StandardNormal.sample(&mut rng);
        self.noise_std * z
    }
}

impl BlackBoxOracle for LinearSetOracle {
    fn shape(&self) -> &NestedShape {
        &self.shape
    }

    fn evaluate_high(&self, mask: &[bool]) -> Result<f64, OracleError> {
        check_mask(mask, self.shape.n_groups())?;
        self.evaluate_low(&self.shape.expand_mask(mask))
    }

    fn evaluate_low(&self, mask: &[bool]) -> Result<f64, OracleError> {
        check_mask(mask, self.shape.n_low())?;
        let linear: f64 = mask.iter().zip(&self.coeffs).filter(|(on, _)| **on).map(|(_, c)| c).sum();
        Ok((linear + self.noise(mask)).clamp(0.0, 1.0))
    }
}

impl GroundTruth for LinearSetOracle {
    /// Groups whose coefficient sum reaches half the largest group sum.
    fn instance_labels(&self) -> Vec<bool> {
        let sums = self.ground_truth().hifa;
        let max = sums.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        sums.iter().map(|&s| s >= 0.5 * max).collect()
    }

    /// Features whose coefficient reaches half the largest coefficient.
    fn low_labels(&self) -> Vec<bool> {
        let max = self.coeffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        self.coeffs.iter().map(|&c| c >= 0.5 * max).collect()
    }
}

fn check_groups(shape: &NestedShape, groups: &[usize]) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::InvalidConfig("positive_groups must be nonempty".into()));
    }
    if let Some(&g) = groups.iter().find(|&&g| g >= shape.n_groups()) {
        return Err(Error::InvalidConfig(format!("positive group {g} out of range for {} groups", shape.n_groups())));
    }
    Ok(())
}

/// Evidence of a key feature is drawn from this range.
const KEY_EVIDENCE: (f64, f64) = (0.6, 1.0);
/// A whole group of filler features sums to at most this.
const FILLER_BUDGET: f64 = 0.4;

/// Bag classifier over instances (`J` groups) of low-level features.
///
/// Instance `j` scores `s_j = Σ_d e_jd z_jd`. The bag output is
/// `σ(steepness · (max_j s_j − threshold))`. Key features (the positive
/// low-level labels) sit only in positive groups, and any single key
/// outweighs an entire group of filler, so the threshold separates "some key
/// present" from "no key present".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilMaxOracle {
    pub shape: NestedShape,
    pub evidence: Vec<f64>,
    pub key: Vec<bool>,
    pub positive_groups: Vec<usize>,
    pub threshold: f64,
    pub steepness: f64,
    pub bias_gap: f64,
}

pub fn make_mil_oracle(shape: &NestedShape, positive_groups: &[usize], bias_gap: f64, seed: u64) -> Result<MilMaxOracle> {
    check_groups(shape, positive_groups)?;
    if !(0.0..=1.0).contains(&bias_gap) {
        return Err(Error::InvalidConfig(format!("bias_gap must lie in [0, 1], got {bias_gap}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x0B1A5));
    let mut evidence = vec![0.0; shape.n_low()];
    let mut key = vec![false; shape.n_low()];
    for j in 0..shape.n_groups() {
        let range = shape.group_range(j);
        let size = range.len();
        for d in range.clone() {
            evidence[d] = rng.random_range(0.0..FILLER_BUDGET / size as f64);
        }
        if positive_groups.contains(&j) {
            let n_key = (size / 3).max(1);
            for i in sample_indices(&mut rng, size, n_key) {
                let d = range.start + i;
                key[d] = true;
                evidence[d] = rng.random_range(KEY_EVIDENCE.0..KEY_EVIDENCE.1);
            }
        }
    }
    let mut positive_groups = positive_groups.to_vec();
    positive_groups.sort_unstable();
    positive_groups.dedup();

    let filler_max = (0..shape.n_groups())
        .map(|j| shape.group_range(j).filter(|&d| !key[d]).map(|d| evidence[d]).sum::<f64>())
        .fold(0.0, f64::max);
    let key_min = evidence.iter().zip(&key).filter(|(_, k)| **k).map(|(e, _)| *e).fold(f64::INFINITY, f64::min);
    let threshold = 0.5 * (filler_max + key_min);
    let steepness = 8.0 / (key_min - filler_max);
    Ok(MilMaxOracle {
        shape: shape.clone(),
        evidence,
        key,
        positive_groups,
        threshold,
        steepness,
        bias_gap,
    })
}

impl MilMaxOracle {
    fn bag_score(&self, mask: &[bool]) -> f64 {
        let strongest = (0..self.shape.n_groups())
            .map(|j| self.shape.group_range(j).filter(|&d| mask[d]).map(|d| self.evidence[d]).sum::<f64>())
            .fold(0.0, f64::max);
        1.0 / (1.0 + (-self.steepness * (strongest - self.threshold)).exp())
    }
}

impl BlackBoxOracle for MilMaxOracle {
    fn shape(&self) -> &NestedShape {
        &self.shape
    }

    /// Removing a whole instance costs `bias_gap · (removed / J)` on top of
    /// the low-level response to the same content.
    fn evaluate_high(&self, mask: &[bool]) -> Result<f64, OracleError> {
        check_mask(mask, self.shape.n_groups())?;
        let removed = mask.iter().filter(|&&b| !b).count() as f64;
        let base = self.bag_score(&self.shape.expand_mask(mask));
        Ok((base - self.bias_gap * removed / self.shape.n_groups() as f64).clamp(0.0, 1.0))
    }

    fn evaluate_low(&self, mask: &[bool]) -> Result<f64, OracleError> {
        check_mask(mask, self.shape.n_low())?;
        Ok(self.bag_score(mask))
    }
}

impl GroundTruth for MilMaxOracle {
    fn instance_labels(&self) -> Vec<bool> {
        (0..self.shape.n_groups()).map(|j| self.positive_groups.contains(&j)).collect()
    }

    fn low_labels(&self) -> Vec<bool> {
        self.key.clone()
    }
}

/// Serializable description of a concrete oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleSpec {
    Linear(LinearSetOracle),
    Mil(MilMaxOracle),
}

impl BlackBoxOracle for OracleSpec {
    fn shape(&self) -> &NestedShape {
        match self {
            Self::Linear(o) => o.shape(),
            Self::Mil(o) => o.shape(),
        }
    }

    fn evaluate_high(&self, mask: &[bool]) -> Result<f64, OracleError> {
        match self {
            Self::Linear(o) => o.evaluate_high(mask),
            Self::Mil(o) => o.evaluate_high(mask),
        }
    }

    fn evaluate_low(&self, mask: &[bool]) -> Result<f64, OracleError> {
        match self {
            Self::Linear(o) => o.evaluate_low(mask),
            Self::Mil(o) => o.evaluate_low(mask),
        }
    }
}

impl GroundTruth for OracleSpec {
    fn instance_labels(&self) -> Vec<bool> {
        match self {
            Self::Linear(o) => o.instance_labels(),
            Self::Mil(o) => o.instance_labels(),
        }
    }

    fn low_labels(&self) -> Vec<bool> {
        match self {
            Self::Linear(o) => o.low_labels(),
            Self::Mil(o) => o.low_labels(),
        }
    }
}
