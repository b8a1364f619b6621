//! Binary perturbations and the black-box oracle abstraction.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{weigh, WeightSpec};
use crate::nested::NestedShape;

/// Which simplified representation a mask lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    High,
    Low,
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Level::High => "high",
            Level::Low => "low",
        })
    }
}

/// Row-major binary matrix of simplified inputs, one perturbation per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    rows: usize,
    width: usize,
    bits: Vec<bool>,
}

impl MaskMatrix {
    pub fn new(rows: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != rows * width {
            return Err(Error::DimensionMismatch {
                what: "mask matrix storage",
                expected: rows * width,
                got: bits.len(),
            });
        }
        Ok(Self { rows, width, bits })
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        let mut bits = Vec::with_capacity(rows.len() * width);
        for row in rows {
            if row.len() != width {
                return Err(Error::DimensionMismatch {
                    what: "mask row",
                    expected: width,
                    got: row.len(),
                });
            }
            bits.extend_from_slice(row);
        }
        Self::new(rows.len(), width, bits)
    }

    /// Builds from 0/1 integers; anything else is rejected.
    pub fn from_int_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let rows = rows
            .iter()
            .map(|r| {
                r.iter()
                    .map(|&v| match v {
                        0 => Ok(false),
                        1 => Ok(true),
                        other => Err(Error::InvalidData(format!("mask entry {other} is not 0/1"))),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(&rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, n: usize) -> &[bool] {
        &self.bits[n * self.width..(n + 1) * self.width]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[bool]> + '_ {
        (0..self.rows).map(move |n| self.row(n))
    }

    pub fn ones_in_row(&self, n: usize) -> usize {
        self.row(n).iter().filter(|&&b| b).count()
    }

    /// The design matrix `Z` with 0.0/1.0 entries.
    pub fn to_design(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.width, |n, k| if self.bits[n * self.width + k] { 1.0 } else { 0.0 })
    }

    /// Writes one CSV record of 0/1 entries per row, without a header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        for row in self.iter_rows() {
            w.write_record(row.iter().map(|&b| if b { "1" } else { "0" }))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
        let mut rows = Vec::new();
        for record in r.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|f| f.trim().parse::<u8>().map_err(|_| Error::InvalidData(format!("mask entry {f:?} is not 0/1"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_int_rows(&rows)
    }
}

/// Draws `n` masks of `width` independent fair bits. All-zero rows are
/// redrawn: they carry no local information and have no cosine weight.
pub fn sample_masks(n: usize, width: usize, seed: u64) -> MaskMatrix {
    assert!(n >= 1 && width >= 1, "sample_masks needs n >= 1 and width >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bits = Vec::with_capacity(n * width);
    let mut row = vec![false; width];
    for _ in 0..n {
        loop {
            row.iter_mut().for_each(|b| *b = rng.random::<bool>());
            if row.iter().any(|&b| b) {
                break;
            }
        }
        bits.extend_from_slice(&row);
    }
    MaskMatrix { rows: n, width, bits }
}

/// Mixes a base seed with a stream index (SplitMix64 finalizer), so that
/// per-sample and per-level RNG streams never depend on evaluation order.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("{0}")]
pub struct OracleError(pub String);

/// A model to be explained, seen only through masked queries.
///
/// Implementations hide how a mask becomes a model input (zero baseline,
/// mask token, ...) and which class score is reported. Evaluation must be
/// deterministic per mask.
pub trait BlackBoxOracle {
    fn shape(&self) -> &NestedShape;

    /// Score for a mask over the `J` high-level features.
    fn evaluate_high(&self, mask: &[bool]) -> Result<f64, OracleError>;

    /// Score for a mask over the `D†` low-level features.
    fn evaluate_low(&self, mask: &[bool]) -> Result<f64, OracleError>;

    fn evaluate(&self, level: Level, mask: &[bool]) -> Result<f64, OracleError> {
        match level {
            Level::High => self.evaluate_high(mask),
            Level::Low => self.evaluate_low(mask),
        }
    }

    fn evaluate_batch(&self, level: Level, masks: &MaskMatrix) -> Result<Vec<f64>> {
        masks
            .iter_rows()
            .enumerate()
            .map(|(row, mask)| self.evaluate(level, mask).map_err(|source| Error::Oracle { row, source }))
            .collect()
    }
}

impl<O: BlackBoxOracle + ?Sized> BlackBoxOracle for &O {
    fn shape(&self) -> &NestedShape {
        (**self).shape()
    }
    fn evaluate_high(&self, mask: &[bool]) -> Result<f64, OracleError> {
        (**self).evaluate_high(mask)
    }
    fn evaluate_low(&self, mask: &[bool]) -> Result<f64, OracleError> {
        (**self).evaluate_low(mask)
    }
    fn evaluate_batch(&self, level: Level, masks: &MaskMatrix) -> Result<Vec<f64>> {
        (**self).evaluate_batch(level, masks)
    }
}

/// Masks, black-box outputs and sample weights for one level.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSet {
    pub masks: MaskMatrix,
    pub outputs: Vec<f64>,
    pub weights: Vec<f64>,
    pub level: Level,
}

impl PerturbationSet {
    pub fn new(masks: MaskMatrix, outputs: Vec<f64>, weights: Vec<f64>, level: Level) -> Result<Self> {
        if outputs.len() != masks.rows() {
            return Err(Error::DimensionMismatch {
                what: "perturbation outputs",
                expected: masks.rows(),
                got: outputs.len(),
            });
        }
        if weights.len() != masks.rows() {
            return Err(Error::DimensionMismatch {
                what: "perturbation weights",
                expected: masks.rows(),
                got: weights.len(),
            });
        }
        if let Some(n) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidData(format!("weight {} at row {n} is not a finite nonnegative number", weights[n])));
        }
        Ok(Self { masks, outputs, weights, level })
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn width(&self) -> usize {
        self.masks.width()
    }

    /// Replaces the weights with those of `spec`.
    pub fn weighted(mut self, spec: WeightSpec) -> Result<Self> {
        self.weights = weigh(&self.masks, spec)?;
        Ok(self)
    }
}

fn check_width(shape: &NestedShape, masks: &MaskMatrix, level: Level) -> Result<()> {
    let expected = shape.width(level);
    if masks.width() != expected {
        return Err(Error::DimensionMismatch {
            what: "mask width for level",
            expected,
            got: masks.width(),
        });
    }
    Ok(())
}

/// Queries the oracle on every mask row, in order. Weights are left uniform;
/// apply a kernel with [`PerturbationSet::weighted`].
pub fn collect<O: BlackBoxOracle + ?Sized>(oracle: &O, masks: MaskMatrix, level: Level) -> Result<PerturbationSet> {
    check_width(oracle.shape(), &masks, level)?;
    let outputs = oracle.evaluate_batch(level, &masks)?;
    let n = masks.rows();
    PerturbationSet::new(masks, outputs, vec![1.0; n], level)
}

/// [`collect`] with rows evaluated on the rayon pool. Output order matches row order.
pub fn collect_par<O: BlackBoxOracle + Sync + ?Sized>(oracle: &O, masks: MaskMatrix, level: Level) -> Result<PerturbationSet> {
    check_width(oracle.shape(), &masks, level)?;
    let outputs = (0..masks.rows())
        .into_par_iter()
        .map(|row| oracle.evaluate(level, masks.row(row)).map_err(|source| Error::Oracle { row, source }))
        .collect::<Result<Vec<_>>>()?;
    let n = masks.rows();
    PerturbationSet::new(masks, outputs, vec![1.0; n], level)
}

/// Samples, queries and weighs perturbations at both levels. The high and
/// low streams use seeds derived from `seed`.
pub fn perturb_two_level<O: BlackBoxOracle + ?Sized>(
    oracle: &O,
    n_high: usize,
    n_low: usize,
    spec: WeightSpec,
    seed: u64,
) -> Result<(PerturbationSet, PerturbationSet)> {
    let shape = oracle.shape();
    let high_masks = sample_masks(n_high, shape.n_groups(), derive_seed(seed, 0));
    let low_masks = sample_masks(n_low, shape.n_low(), derive_seed(seed, 1));
    let high = collect(oracle, high_masks, Level::High)?.weighted(spec)?;
    let low = collect(oracle, low_masks, Level::Low)?.weighted(spec)?;
    Ok((high, low))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Linear {
        shape: NestedShape,
        coeffs: Vec<f64>,
    }

    impl BlackBoxOracle for Linear {
        fn shape(&self) -> &NestedShape {
            &self.shape
        }
        fn evaluate_high(&self, mask: &[bool]) -> Result<f64, OracleError> {
            self.evaluate_low(&self.shape.expand_mask(mask))
        }
        fn evaluate_low(&self, mask: &[bool]) -> Result<f64, OracleError> {
            Ok(mask.iter().zip(&self.coeffs).filter(|(m, _)| **m).map(|(_, c)| c).sum())
        }
    }

    struct FailsOnRow(usize, NestedShape);

    impl BlackBoxOracle for FailsOnRow {
        fn shape(&self) -> &NestedShape {
            &self.1
        }
        fn evaluate_high(&self, _: &[bool]) -> Result<f64, OracleError> {
            Ok(0.0)
        }
        fn evaluate_low(&self, mask: &[bool]) -> Result<f64, OracleError> {
            // the failing row is the first with its index-th bit cleared
            if !mask[self.0] {
                Err(OracleError("boom".into()))
            } else {
                Ok(1.0)
            }
        }
    }

    fn linear_2() -> Linear {
        Linear {
            shape: NestedShape::new(vec![1, 1]).unwrap(),
            coeffs: vec![0.5, 0.3],
        }
    }

    #[test]
    fn single_row_has_a_one() {
        for seed in 0..50 {
            let m = sample_masks(1, 3, seed);
            assert!(m.ones_in_row(0) >= 1);
        }
    }

    #[test]
    fn column_means_near_half() {
        let m = sample_masks(10_000, 8, 7);
        for k in 0..8 {
            let ones = (0..m.rows()).filter(|&n| m.row(n)[k]).count();
            let mean = ones as f64 / m.rows() as f64;
            assert!((0.47..=0.53).contains(&mean), "column {k} mean {mean}");
        }
    }

    #[test]
    fn seeded_sampling_is_deterministic() {
        assert_eq!(sample_masks(20, 5, 42), sample_masks(20, 5, 42));
        assert_ne!(sample_masks(20, 5, 42), sample_masks(20, 5, 43));
    }

    #[test]
    fn collect_linear_outputs() {
        let masks = MaskMatrix::from_int_rows(&[vec![1, 0], vec![1, 1]]).unwrap();
        let set = collect(&linear_2(), masks, Level::Low).unwrap();
        assert_eq!(set.outputs.len(), 2);
        assert!((set.outputs[0] - 0.5).abs() < 1e-15);
        assert!((set.outputs[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_mask_gives_baseline() {
        let o = linear_2();
        assert_eq!(o.evaluate_low(&[false, false]).unwrap(), 0.0);
    }

    #[test]
    fn batch_and_parallel_agree_with_rows() {
        let o = Linear {
            shape: NestedShape::new(vec![3, 2]).unwrap(),
            coeffs: vec![0.1, 0.2, 0.05, 0.3, 0.15],
        };
        let masks = sample_masks(64, 5, 3);
        let serial = collect(&o, masks.clone(), Level::Low).unwrap();
        let par = collect_par(&o, masks.clone(), Level::Low).unwrap();
        let by_row: Vec<f64> = masks.iter_rows().map(|r| o.evaluate_low(r).unwrap()).collect();
        assert_eq!(serial.outputs, by_row);
        assert_eq!(par.outputs, by_row);
    }

    #[test]
    fn width_mismatch_rejected() {
        let masks = sample_masks(4, 3, 0);
        assert!(matches!(collect(&linear_2(), masks, Level::Low), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn oracle_failure_names_row() {
        let o = FailsOnRow(0, NestedShape::new(vec![2]).unwrap());
        let masks = MaskMatrix::from_int_rows(&[vec![1, 1], vec![1, 0], vec![0, 1]]).unwrap();
        match collect(&o, masks.clone(), Level::Low) {
            Err(Error::Oracle { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(collect_par(&o, masks, Level::Low), Err(Error::Oracle { row: 2, .. })));
    }

    #[test]
    fn mask_csv_round_trip() {
        let masks = sample_masks(6, 4, 11);
        let mut buf = Vec::new();
        masks.write_csv(&mut buf).unwrap();
        let first = masks.row(0).iter().map(|&b| if b { "1" } else { "0" }).collect::<Vec<_>>().join(",");
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with(&first));
        assert_eq!(MaskMatrix::read_csv(buf.as_slice()).unwrap(), masks);
        assert!(MaskMatrix::read_csv("0,2\n".as_bytes()).is_err());
    }

    #[test]
    fn perturbation_set_validates() {
        let masks = sample_masks(3, 2, 0);
        assert!(PerturbationSet::new(masks.clone(), vec![0.0; 2], vec![1.0; 3], Level::Low).is_err());
        assert!(PerturbationSet::new(masks.clone(), vec![0.0; 3], vec![1.0, -1.0, 1.0], Level::Low).is_err());
        assert!(PerturbationSet::new(masks, vec![0.0; 3], vec![1.0; 3], Level::Low).is_ok());
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|s| derive_seed(5, s)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(derive_seed(0, 1), derive_seed(1, 0));
    }
}
