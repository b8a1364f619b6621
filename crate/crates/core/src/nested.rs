//! Nested input structure and attribution vectors.
//!
//! Low-level features are laid out in contiguous blocks, one block per
//! high-level feature, in group order. Index `d` of the concatenated LoFA
//! vector belongs to group `j` iff `offset[j] <= d < offset[j + 1]`.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Group sizes `D_1..D_J` of an input made of `J` high-level features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawShape", into = "RawShape")]
pub struct NestedShape {
    group_sizes: Vec<usize>,
    offsets: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawShape {
    group_sizes: Vec<usize>,
}

impl TryFrom<RawShape> for NestedShape {
    type Error = Error;

    fn try_from(raw: RawShape) -> Result<Self> {
        NestedShape::new(raw.group_sizes)
    }
}

impl From<NestedShape> for RawShape {
    fn from(shape: NestedShape) -> Self {
        RawShape {
            group_sizes: shape.group_sizes,
        }
    }
}

impl NestedShape {
    pub fn new(group_sizes: Vec<usize>) -> Result<Self> {
        if group_sizes.is_empty() {
            return Err(Error::InvalidShape("at least one high-level feature is required".into()));
        }
        if let Some(j) = group_sizes.iter().position(|&d| d == 0) {
            return Err(Error::InvalidShape(format!("group {j} has no low-level features")));
        }
        let mut offsets = Vec::with_capacity(group_sizes.len() + 1);
        offsets.push(0);
        for &d in &group_sizes {
            offsets.push(offsets.last().unwrap() + d);
        }
        Ok(Self { group_sizes, offsets })
    }

    /// `J` groups of `d` low-level features each.
    pub fn uniform(groups: usize, d: usize) -> Result<Self> {
        Self::new(vec![d; groups])
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    /// Number of high-level features `J`.
    pub fn n_groups(&self) -> usize {
        self.group_sizes.len()
    }

    /// Total number of low-level features `D† = Σ D_j`.
    pub fn n_low(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn group_range(&self, j: usize) -> Range<usize> {
        self.offsets[j]..self.offsets[j + 1]
    }

    /// Group containing low-level feature `d`.
    pub fn group_of(&self, d: usize) -> usize {
        assert!(d < self.n_low(), "low-level index {d} out of range");
        // offsets is strictly increasing, so the partition point is unique
        self.offsets.partition_point(|&o| o <= d) - 1
    }

    /// Width of the simplified input at a level.
    pub fn width(&self, level: crate::perturbation::Level) -> usize {
        match level {
            crate::perturbation::Level::High => self.n_groups(),
            crate::perturbation::Level::Low => self.n_low(),
        }
    }

    /// Expands a high-level mask to the low level: every feature of a present
    /// group is present, every feature of an absent group is absent.
    pub fn expand_mask(&self, high: &[bool]) -> Vec<bool> {
        assert_eq!(high.len(), self.n_groups());
        let mut low = Vec::with_capacity(self.n_low());
        for (j, &present) in high.iter().enumerate() {
            low.extend(std::iter::repeat_n(present, self.group_sizes[j]));
        }
        low
    }
}

/// The binary `J × D†` matrix that sums LoFAs into their groups.
///
/// Stored through the shape it was built from; the block structure makes
/// products `O(D†)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregationMatrix {
    shape: NestedShape,
}

pub fn build_aggregation_matrix(shape: &NestedShape) -> AggregationMatrix {
    AggregationMatrix { shape: shape.clone() }
}

impl AggregationMatrix {
    pub fn shape(&self) -> &NestedShape {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.shape.n_groups()
    }

    pub fn cols(&self) -> usize {
        self.shape.n_low()
    }

    pub fn entry(&self, j: usize, d: usize) -> u8 {
        u8::from(self.shape.group_range(j).contains(&d))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows(), self.cols(), |j, d| f64::from(self.entry(j, d)))
    }

    /// `M x` for a LoFA-length vector.
    pub fn apply(&self, lofa: &[f64]) -> Vec<f64> {
        assert_eq!(lofa.len(), self.cols());
        (0..self.rows())
            .map(|j| lofa[self.shape.group_range(j)].iter().sum())
            .collect()
    }

    /// `Mᵀ v` for a HiFA-length vector.
    pub fn apply_transpose(&self, hifa: &[f64]) -> Vec<f64> {
        assert_eq!(hifa.len(), self.rows());
        let mut out = Vec::with_capacity(self.cols());
        for (j, &v) in hifa.iter().enumerate() {
            out.extend(std::iter::repeat_n(v, self.shape.group_sizes[j]));
        }
        out
    }
}

/// HiFAs `α` (length `J`) and LoFAs `β†` (length `D†`) explaining one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionPair {
    pub hifa: Vec<f64>,
    pub lofa: Vec<f64>,
}

impl AttributionPair {
    pub fn new(hifa: Vec<f64>, lofa: Vec<f64>) -> Self {
        Self { hifa, lofa }
    }

    pub fn zeros(shape: &NestedShape) -> Self {
        Self::new(vec![0.0; shape.n_groups()], vec![0.0; shape.n_low()])
    }

    pub fn check_dims(&self, m: &AggregationMatrix) -> Result<()> {
        if self.hifa.len() != m.rows() {
            return Err(Error::DimensionMismatch {
                what: "HiFA vector",
                expected: m.rows(),
                got: self.hifa.len(),
            });
        }
        if self.lofa.len() != m.cols() {
            return Err(Error::DimensionMismatch {
                what: "LoFA vector",
                expected: m.cols(),
                got: self.lofa.len(),
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.hifa.iter().chain(&self.lofa).all(|v| v.is_finite())
    }

    /// `‖α − Mβ†‖² ≤ tol`.
    pub fn is_consistent(&self, m: &AggregationMatrix, tol: f64) -> Result<bool> {
        Ok(consistency_residual(self, m)? <= tol)
    }
}

/// Squared consistency residual `‖α − Mβ†‖²`.
pub fn consistency_residual(pair: &AttributionPair, m: &AggregationMatrix) -> Result<f64> {
    pair.check_dims(m)?;
    let sums = m.apply(&pair.lofa);
    Ok(pair.hifa.iter().zip(&sums).map(|(a, s)| (a - s).powi(2)).sum())
}
