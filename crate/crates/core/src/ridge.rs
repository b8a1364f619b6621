//! Separate weighted ridge fits of the HiFA and LoFA surrogates.
//!
//! Each level minimizes `½(y − Zθ)ᵀW(y − Zθ) + λ‖θ‖²` with no intercept,
//! i.e. solves `(ZᵀWZ + 2λI)θ = ZᵀWy`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::WeightSpec;
use crate::linalg::{spd_solve, weighted_normal_equations};
use crate::nested::AttributionPair;
use crate::perturbation::{perturb_two_level, BlackBoxOracle, PerturbationSet};

#[derive(Debug, Clone)]
pub struct RidgeProblem<'a> {
    pub set: &'a PerturbationSet,
    pub lambda: f64,
}

impl<'a> RidgeProblem<'a> {
    pub fn new(set: &'a PerturbationSet, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("ridge lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(Self { set, lambda })
    }
}

pub fn solve_ridge(problem: &RidgeProblem<'_>) -> Result<Vec<f64>> {
    let (mut gram, rhs) = weighted_normal_equations(problem.set);
    let k = gram.nrows();
    gram += DMatrix::identity(k, k) * (2.0 * problem.lambda);
    let theta = spd_solve(gram, &rhs, "ridge normal")?;
    Ok(theta.as_slice().to_vec())
}

/// Fits both levels independently on already collected perturbations.
pub fn lime_from_sets(high: &PerturbationSet, low: &PerturbationSet, lambda_high: f64, lambda_low: f64) -> Result<AttributionPair> {
    let hifa = solve_ridge(&RidgeProblem::new(high, lambda_high)?)?;
    let lofa = solve_ridge(&RidgeProblem::new(low, lambda_low)?)?;
    Ok(AttributionPair::new(hifa, lofa))
}

/// LIME at both levels: sample, query, weigh, and fit each level separately.
/// The result is in general not consistent.
pub fn lime_two_level<O: BlackBoxOracle + ?Sized>(
    oracle: &O,
    n_high: usize,
    n_low: usize,
    spec: WeightSpec,
    lambda_high: f64,
    lambda_low: f64,
    seed: u64,
) -> Result<AttributionPair> {
    let (high, low) = perturb_two_level(oracle, n_high, n_low, spec, seed)?;
    lime_from_sets(&high, &low, lambda_high, lambda_low)
}

/// `‖(ZᵀWZ + 2λI)θ − ZᵀWy‖∞`, the normal-equation residual of a candidate.
pub fn stationarity_residual(problem: &RidgeProblem<'_>, theta: &[f64]) -> f64 {
    let (gram, rhs) = weighted_normal_equations(problem.set);
    let theta = DVector::from_column_slice(theta);
    let r = &gram * &theta + theta * (2.0 * problem.lambda) - rhs;
    r.amax()
}
