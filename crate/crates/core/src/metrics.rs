//! Correctness, faithfulness and consistency metrics for attributions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nested::{AttributionPair, NestedShape};
use crate::perturbation::{BlackBoxOracle, Level};

/// Feature indices by descending score; ties keep the lower index first.
pub fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Normalized discounted cumulative gain of a ranking by `scores` against
/// binary relevance, with `rel_k / log2(k + 1)` gains at 1-based rank `k`.
pub fn ndcg(scores: &[f64], relevance: &[bool]) -> Result<f64> {
    if scores.len() != relevance.len() {
        return Err(Error::DimensionMismatch {
            what: "NDCG relevance",
            expected: scores.len(),
            got: relevance.len(),
        });
    }
    let positives = relevance.iter().filter(|&&r| r).count();
    if positives == 0 {
        return Err(Error::UndefinedMetric("NDCG needs at least one relevant item"));
    }
    let gain = |rank: usize| 1.0 / ((rank + 2) as f64).log2();
    let dcg: f64 = descending_order(scores)
        .iter()
        .enumerate()
        .filter(|(_, &idx)| relevance[idx])
        .map(|(rank, _)| gain(rank))
        .sum();
    let ideal: f64 = (0..positives).map(gain).sum();
    Ok(dcg / ideal)
}

/// Area under the ROC curve in Mann–Whitney form: the probability that a
/// random positive outscores a random negative, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "AUROC labels",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both positive and negative labels"));
    }
    // average ranks over tie blocks, then the rank-sum statistic
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let avg_rank = (start + end + 1) as f64 / 2.0;
        rank_sum += order[start..end].iter().filter(|&&i| labels[i]).count() as f64 * avg_rank;
        start = end;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    /// Start from the empty mask and reveal features.
    Insert,
    /// Start from the full mask and remove features.
    Delete,
}

/// Model outputs at the `K + 1` masks visited when features are inserted
/// or deleted in descending attribution order.
pub fn sweep_curve<O: BlackBoxOracle + ?Sized>(oracle: &O, attributions: &[f64], level: Level, mode: SweepMode) -> Result<Vec<f64>> {
    let width = oracle.shape().width(level);
    if attributions.len() != width {
        return Err(Error::DimensionMismatch {
            what: "attribution length for sweep",
            expected: width,
            got: attributions.len(),
        });
    }
    let mut mask = vec![mode == SweepMode::Delete; width];
    let eval = |mask: &[bool], row: usize| oracle.evaluate(level, mask).map_err(|source| Error::Oracle { row, source });
    let mut curve = Vec::with_capacity(width + 1);
    curve.push(eval(&mask, 0)?);
    for (step, feature) in descending_order(attributions).into_iter().enumerate() {
        mask[feature] = mode == SweepMode::Insert;
        curve.push(eval(&mask, step + 1)?);
    }
    Ok(curve)
}

/// Trapezoidal area under a curve sampled on an even grid over `[0, 1]`.
pub fn trapezoid_auc(curve: &[f64]) -> f64 {
    if curve.len() < 2 {
        return curve.first().copied().unwrap_or(0.0);
    }
    let dx = 1.0 / (curve.len() - 1) as f64;
    curve.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dx).sum()
}

/// Insertion or deletion AUC; higher is better for insertion, lower for deletion.
pub fn insertion_deletion<O: BlackBoxOracle + ?Sized>(oracle: &O, attributions: &[f64], level: Level, mode: SweepMode) -> Result<f64> {
    Ok(trapezoid_auc(&sweep_curve(oracle, attributions, level, mode)?))
}

/// Whether the group with the largest HiFA contains the feature with the
/// largest LoFA. Signed maxima; ties resolve to the lowest index.
pub fn mihl_agreement(pair: &AttributionPair, shape: &NestedShape) -> Result<bool> {
    if pair.hifa.len() != shape.n_groups() || pair.lofa.len() != shape.n_low() {
        return Err(Error::DimensionMismatch {
            what: "attribution pair for MIHL",
            expected: shape.n_groups() + shape.n_low(),
            got: pair.hifa.len() + pair.lofa.len(),
        });
    }
    let top_high = descending_order(&pair.hifa)[0];
    let top_low = descending_order(&pair.lofa)[0];
    Ok(shape.group_of(top_low) == top_high)
}

/// Metric values for one explained prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// NDCG of the HiFAs against instance labels.
    pub ndcg: f64,
    /// AUROC of the LoFAs against low-level labels.
    pub auroc: f64,
    /// Insertion / deletion AUCs of the LoFAs at the low level.
    pub insertion_auc: f64,
    pub deletion_auc: f64,
    /// Insertion / deletion AUCs of the HiFAs at the high level.
    pub insertion_auc_high: f64,
    pub deletion_auc_high: f64,
    /// `‖α − Mβ†‖²`.
    pub consistency: f64,
    pub mihl_agree: bool,
}

impl EvalReport {
    /// `(name, value)` pairs in a fixed order, for flat CSV output.
    pub fn entries(&self) -> [(&'static str, f64); 8] {
        [
            ("ndcg", self.ndcg),
            ("auroc", self.auroc),
            ("insertion", self.insertion_auc),
            ("deletion", self.deletion_auc),
            ("insertion_high", self.insertion_auc_high),
            ("deletion_high", self.deletion_auc_high),
            ("consistency", self.consistency),
            ("mihl", if self.mihl_agree { 1.0 } else { 0.0 }),
        ]
    }
}
