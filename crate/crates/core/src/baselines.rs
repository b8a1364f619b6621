//! Consistent-by-construction baselines built on separate LIME fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nested::{AggregationMatrix, AttributionPair, NestedShape};

/// Bottom-up: HiFAs are the group sums of the given LoFAs.
pub fn bu_lime(lofa: &[f64], m: &AggregationMatrix) -> Result<AttributionPair> {
    if lofa.len() != m.cols() {
        return Err(Error::DimensionMismatch {
            what: "LoFA vector",
            expected: m.cols(),
            got: lofa.len(),
        });
    }
    Ok(AttributionPair::new(m.apply(lofa), lofa.to_vec()))
}

/// Top-down: for each group `j`, draw `D_j` LoFAs from `Normal(α_j, 1/D_j)`,
/// then overwrite one uniformly chosen entry so the group sums to `α_j`.
pub fn td_lime(hifa: &[f64], shape: &NestedShape, seed: u64) -> Result<AttributionPair> {
    if hifa.len() != shape.n_groups() {
        return Err(Error::DimensionMismatch {
            what: "HiFA vector",
            expected: shape.n_groups(),
            got: hifa.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lofa = vec![0.0; shape.n_low()];
    for (j, &alpha) in hifa.iter().enumerate() {
        let range = shape.group_range(j);
        let size = range.len();
        let normal = Normal::new(alpha, 1.0 / size as f64).map_err(|e| Error::InvalidData(format!("HiFA {alpha} for group {j}: {e}")))?;
        let group = &mut lofa[range];
        for v in group.iter_mut() {
            *v = normal.sample(&mut rng);
        }
        let pick = rng.random_range(0..size);
        let others: f64 = group.iter().enumerate().filter(|(d, _)| *d != pick).map(|(_, v)| v).sum();
        group[pick] = alpha - others;
    }
    Ok(AttributionPair::new(hifa.to_vec(), lofa))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nested::{build_aggregation_matrix, consistency_residual};
    use proptest::prelude::*;

    #[test]
    fn bottom_up_sums() {
        let m = build_aggregation_matrix(&NestedShape::new(vec![2, 1]).unwrap());
        let pair = bu_lime(&[0.2, 0.3, 0.3], &m).unwrap();
        assert!((pair.hifa[0] - 0.5).abs() < 1e-15 && (pair.hifa[1] - 0.3).abs() < 1e-15);
        assert_eq!(bu_lime(&[0.0; 3], &m).unwrap().hifa, vec![0.0, 0.0]);
        assert!(bu_lime(&[0.0; 2], &m).is_err());
    }

    #[test]
    fn singleton_groups_copy_hifa() {
        let shape = NestedShape::new(vec![1, 1, 1]).unwrap();
        let pair = td_lime(&[0.4, -0.2, 0.9], &shape, 3).unwrap();
        assert_eq!(pair.lofa, vec![0.4, -0.2, 0.9]);
    }

    #[test]
    fn top_down_is_deterministic() {
        let shape = NestedShape::new(vec![3, 2, 4]).unwrap();
        let a = td_lime(&[0.5, 0.1, -0.3], &shape, 17).unwrap();
        let b = td_lime(&[0.5, 0.1, -0.3], &shape, 17).unwrap();
        assert_eq!(a, b);
        let c = td_lime(&[0.5, 0.1, -0.3], &shape, 18).unwrap();
        assert_ne!(a.lofa, c.lofa);
        assert_eq!(a.hifa, c.hifa);
    }

    proptest! {
        #[test]
        fn baselines_are_consistent(
            sizes in prop::collection::vec(1usize..6, 1..6),
            seed in any::<u64>(),
            scale in 0.01f64..5.0,
        ) {
            let shape = NestedShape::new(sizes).unwrap();
            let m = build_aggregation_matrix(&shape);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let lofa: Vec<f64> = (0..shape.n_low()).map(|_| rng.random_range(-scale..scale)).collect();
            let hifa: Vec<f64> = (0..shape.n_groups()).map(|_| rng.random_range(-scale..scale)).collect();

            prop_assert!(consistency_residual(&bu_lime(&lofa, &m).unwrap(), &m).unwrap() <= 1e-12);
            let td = td_lime(&hifa, &shape, seed).unwrap();
            prop_assert_eq!(&td.hifa, &hifa);
            prop_assert!(consistency_residual(&td, &m).unwrap() <= 1e-12);
            for (s, a) in m.apply(&td.lofa).iter().zip(&hifa) {
                prop_assert!((s - a).abs() <= 1e-12);
            }
        }
    }
}
