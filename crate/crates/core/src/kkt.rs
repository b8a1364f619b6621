//! Direct solve of the consistency-constrained program through its KKT system.
//!
//! With `θ = (α, β†)`, `H = blockdiag(Z_HᵀW_H Z_H + 2λ_H I, Z_LᵀW_L Z_L + 2λ_L I)`
//! and `G = [I_J | −M]`, the optimum satisfies
//!
//! ```text
//! [ H  Gᵀ ] [ θ ]   [ ZᵀWy ]
//! [ G  0  ] [ ν ] = [  0   ]
//! ```
//!
//! This path shares no code with the ADMM solver and serves as its reference.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::nested::{AggregationMatrix, AttributionPair};
use crate::perturbation::PerturbationSet;

/// Accumulates `Σ_n w_n z_n z_nᵀ` into `hess[off.., off..]` and `Σ_n w_n y_n z_n` into `rhs[off..]`.
fn accumulate(set: &PerturbationSet, offset: usize, hess: &mut DMatrix<f64>, rhs: &mut DVector<f64>) {
    for ((row, &y), &w) in set.masks.iter_rows().zip(&set.outputs).zip(&set.weights) {
        let on: Vec<usize> = row.iter().enumerate().filter(|(_, b)| **b).map(|(k, _)| k).collect();
        for &p in &on {
            rhs[offset + p] += w * y;
            for &q in &on {
                hess[(offset + p, offset + q)] += w;
            }
        }
    }
}

pub fn solve_kkt_oracle(
    high: &PerturbationSet,
    low: &PerturbationSet,
    m: &AggregationMatrix,
    lambda_high: f64,
    lambda_low: f64,
) -> Result<AttributionPair> {
    let (j, d) = (m.rows(), m.cols());
    if high.width() != j || low.width() != d {
        return Err(Error::DimensionMismatch {
            what: "KKT perturbation widths",
            expected: j + d,
            got: high.width() + low.width(),
        });
    }
    let dim = 2 * j + d;
    let mut kkt = DMatrix::<f64>::zeros(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    accumulate(high, 0, &mut kkt, &mut rhs);
    accumulate(low, j, &mut kkt, &mut rhs);
    for k in 0..j {
        kkt[(k, k)] += 2.0 * lambda_high;
    }
    for k in j..j + d {
        kkt[(k, k)] += 2.0 * lambda_low;
    }
    // constraint rows α_j − Σ_{d∈j} β_d = 0 and their transposes
    for g in 0..j {
        let row = j + d + g;
        kkt[(row, g)] = 1.0;
        kkt[(g, row)] = 1.0;
        for col in m.shape().group_range(g) {
            kkt[(row, j + col)] = -1.0;
            kkt[(j + col, row)] = -1.0;
        }
    }

    let sv = kkt.singular_values();
    let deficient = sv.iter().filter(|&&s| s <= sv.max() * 1e-13).count();
    let sol = match kkt.full_piv_lu().solve(&rhs) {
        Some(sol) if deficient == 0 && sol.iter().all(|v| v.is_finite()) => sol,
        _ => {
            return Err(Error::Singular {
                what: "KKT",
                dim,
                deficient: deficient.max(1),
            })
        }
    };
    Ok(AttributionPair::new(
        sol.rows(0, j).iter().copied().collect(),
        sol.rows(j, d).iter().copied().collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nested::{build_aggregation_matrix, NestedShape};
    use crate::perturbation::{sample_masks, Level, MaskMatrix};
    use crate::ridge::{solve_ridge, RidgeProblem};
    use rand::{Rng, SeedableRng};

    #[test]
    fn single_feature_pools_both_levels() {
        // α = β: minimizing ½Σ w_h (y_h − θ)² + ½Σ w_l (y_l − θ)² + (λ_h + λ_l)θ²
        // is one ridge problem on the pooled rows with λ = λ_h + λ_l
        let shape = NestedShape::new(vec![1]).unwrap();
        let m = build_aggregation_matrix(&shape);
        let high = PerturbationSet::new(sample_masks(3, 1, 0), vec![0.2, 0.4, 0.3], vec![1.0, 0.5, 1.0], Level::High).unwrap();
        let low = PerturbationSet::new(sample_masks(2, 1, 1), vec![0.9, 0.7], vec![1.0, 1.0], Level::Low).unwrap();
        let pair = solve_kkt_oracle(&high, &low, &m, 0.1, 0.3).unwrap();

        let pooled = PerturbationSet::new(
            MaskMatrix::from_int_rows(&vec![vec![1]; 5]).unwrap(),
            vec![0.2, 0.4, 0.3, 0.9, 0.7],
            vec![1.0, 0.5, 1.0, 1.0, 1.0],
            Level::Low,
        )
        .unwrap();
        let theta = solve_ridge(&RidgeProblem::new(&pooled, 0.4).unwrap()).unwrap();
        // closed form: Σwy / (Σw + 2λ) = 2.3 / 5.3
        assert!((theta[0] - 2.3 / 5.3).abs() < 1e-12);
        assert!((pair.hifa[0] - theta[0]).abs() < 1e-12);
        assert!((pair.lofa[0] - theta[0]).abs() < 1e-12);
    }

    #[test]
    fn constraints_hold_exactly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for seed in 0..20u64 {
            let shape = NestedShape::new(vec![1 + (seed % 3) as usize, 2, 3]).unwrap();
            let m = build_aggregation_matrix(&shape);
            let hm = sample_masks(20, 3, seed);
            let lm = sample_masks(40, shape.n_low(), seed + 100);
            let hy = (0..20).map(|_| rng.random_range(0.0..1.0)).collect();
            let ly = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
            let high = PerturbationSet::new(hm, hy, vec![1.0; 20], Level::High).unwrap();
            let low = PerturbationSet::new(lm, ly, vec![1.0; 40], Level::Low).unwrap();
            let pair = solve_kkt_oracle(&high, &low, &m, 0.05, 0.05).unwrap();
            let sums = m.apply(&pair.lofa);
            let worst = pair.hifa.iter().zip(&sums).map(|(a, s)| (a - s).abs()).fold(0.0, f64::max);
            assert!(worst <= 1e-10, "{worst}");
        }
    }

    #[test]
    fn unidentified_problem_is_singular() {
        // both low-level features always appear together and λ = 0
        let shape = NestedShape::new(vec![2]).unwrap();
        let m = build_aggregation_matrix(&shape);
        let high = PerturbationSet::new(sample_masks(3, 1, 0), vec![0.5; 3], vec![1.0; 3], Level::High).unwrap();
        let low = PerturbationSet::new(MaskMatrix::from_int_rows(&vec![vec![1, 1]; 4]).unwrap(), vec![0.5; 4], vec![1.0; 4], Level::Low).unwrap();
        assert!(matches!(solve_kkt_oracle(&high, &low, &m, 0.0, 0.0), Err(Error::Singular { .. })));
    }
}
