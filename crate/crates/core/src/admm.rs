//! Consistency-constrained joint estimation of HiFAs and LoFAs by ADMM.
//!
//! The joint program is
//!
//! ```text
//! min  L_H(α) + L_L(β†) + λ_H‖α‖² + λ_L‖β†‖²   s.t.  α = Mβ†
//! ```
//!
//! with `L(θ) = ½(y − Zθ)ᵀW(y − Zθ)`. Splitting the regularizers onto copies
//! `ᾱ, β̄†` gives three equality constraints
//! `h1 = α − ᾱ`, `h2 = β† − β̄†`, `h3 = α − Mβ†` with multipliers `v1, v2, v3`;
//! `h1, h2` are penalized by `μ1/2` and `h3` by `μ2/2` in the augmented
//! Lagrangian. The `α` and `β†` sub-problems are linear solves against the
//! fixed matrices
//!
//! ```text
//! A = (Z_HᵀW_H Z_H + (μ1 + μ2) I)⁻¹        B = A Z_HᵀW_H y_H
//! C = (Z_LᵀW_L Z_L + μ1 I + μ2 MᵀM)⁻¹      D = C Z_LᵀW_L y_L
//! ```
//!
//! which are formed once before iterating, so each iteration costs
//! `O(J² + D†²)` regardless of the number of perturbations.
//!
//! Setting the `α`-gradient of the augmented Lagrangian to zero gives
//! `α = B + A(μ2 Mβ† + μ1 ᾱ − v1 − v3)`; the `+μ1 ᾱ` term is what makes the
//! update consistent with `A` and `B` above.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, NonConvergence, Result};
use crate::linalg::{spd_inverse, weighted_normal_equations};
use crate::nested::{AggregationMatrix, AttributionPair};
use crate::perturbation::PerturbationSet;

/// Regularization grid used for hyperparameter search.
pub const LAMBDA_GRID: [f64; 2] = [0.1, 1.0];
/// Consistency-penalty grid used for hyperparameter search.
pub const MU2_GRID: [f64; 3] = [0.001, 0.01, 0.1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub lambda_high: f64,
    pub lambda_low: f64,
    /// Penalty on the regularizer splits `h1`, `h2`.
    pub mu1: f64,
    /// Penalty on the consistency constraint `h3`.
    pub mu2: f64,
    /// Tolerance on the squared change of `(ᾱ, β̄†)` between iterations.
    pub eps1: f64,
    /// Tolerance on `‖h1‖² + ‖h2‖² + ‖h3‖²`.
    pub eps2: f64,
    pub max_iters: usize,
    #[serde(skip)]
    pub init: Init,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda_high: 0.1,
            lambda_low: 0.1,
            mu1: 0.1,
            mu2: 0.1,
            eps1: 1e-4,
            eps2: 1e-4,
            max_iters: 10_000,
            init: Init::Zero,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [("lambda_high", self.lambda_high), ("lambda_low", self.lambda_low)];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        let positive = [("mu1", self.mu1), ("mu2", self.mu2), ("eps1", self.eps1), ("eps2", self.eps2)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Starting point of the iterations.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init {
    #[default]
    Zero,
    Custom(Box<AdmmState>),
}

/// Primal variables, their regularizer copies and the multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub alpha: DVector<f64>,
    pub alpha_bar: DVector<f64>,
    pub beta: DVector<f64>,
    pub beta_bar: DVector<f64>,
    pub v1: DVector<f64>,
    pub v2: DVector<f64>,
    pub v3: DVector<f64>,
    pub iter: usize,
}

impl AdmmState {
    pub fn zeros(n_high: usize, n_low: usize) -> Self {
        Self {
            alpha: DVector::zeros(n_high),
            alpha_bar: DVector::zeros(n_high),
            beta: DVector::zeros(n_low),
            beta_bar: DVector::zeros(n_low),
            v1: DVector::zeros(n_high),
            v2: DVector::zeros(n_low),
            v3: DVector::zeros(n_high),
            iter: 0,
        }
    }

    fn check_dims(&self, n_high: usize, n_low: usize) -> Result<()> {
        let checks = [
            ("initial alpha", self.alpha.len(), n_high),
            ("initial alpha_bar", self.alpha_bar.len(), n_high),
            ("initial v1", self.v1.len(), n_high),
            ("initial v3", self.v3.len(), n_high),
            ("initial beta", self.beta.len(), n_low),
            ("initial beta_bar", self.beta_bar.len(), n_low),
            ("initial v2", self.v2.len(), n_low),
        ];
        for (what, got, expected) in checks {
            if got != expected {
                return Err(Error::DimensionMismatch { what, expected, got });
            }
        }
        Ok(())
    }

    fn is_finite(&self) -> bool {
        [&self.alpha, &self.alpha_bar, &self.beta, &self.beta_bar, &self.v1, &self.v2, &self.v3]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// The returned attributions `(ᾱ, β̄†)`.
    pub fn pair(&self) -> AttributionPair {
        AttributionPair::new(self.alpha_bar.as_slice().to_vec(), self.beta_bar.as_slice().to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    /// Unpenalized objective at `(ᾱ, β̄†)`.
    pub objective: f64,
    /// `‖ᾱᵗ⁻¹ − ᾱᵗ‖² + ‖β̄ᵗ⁻¹ − β̄ᵗ‖²`.
    pub change: f64,
}

/// Per-iteration squared residuals and objective values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdmmTrace {
    pub records: Vec<TraceRecord>,
}

impl AdmmTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    /// CSV with header `iter,h1,h2,h3,objective`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["iter", "h1", "h2", "h3", "objective"])?;
        for r in &self.records {
            w.write_record([
                r.iter.to_string(),
                r.h1.to_string(),
                r.h2.to_string(),
                r.h3.to_string(),
                r.objective.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Result of an ADMM run, converged or not.
#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    pub pair: AttributionPair,
    pub trace: AdmmTrace,
    pub state: AdmmState,
    pub converged: bool,
}

/// Quadratic form of a weighted least squares loss:
/// `L(θ) = ½θᵀGθ − bᵀθ + ½yᵀWy`.
struct Quadratic {
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    constant: f64,
}

impl Quadratic {
    fn new(set: &PerturbationSet) -> Self {
        let (gram, rhs) = weighted_normal_equations(set);
        let constant = 0.5 * set.outputs.iter().zip(&set.weights).map(|(y, w)| w * y * y).sum::<f64>();
        Self { gram, rhs, constant }
    }

    fn eval(&self, theta: &DVector<f64>) -> f64 {
        0.5 * theta.dot(&(&self.gram * theta)) - self.rhs.dot(theta) + self.constant
    }
}

fn aggregate(m: &AggregationMatrix, lofa: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(m.apply(lofa.as_slice()))
}

fn spread(m: &AggregationMatrix, hifa: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(m.apply_transpose(hifa.as_slice()))
}

fn check_inputs(high: &PerturbationSet, low: &PerturbationSet, m: &AggregationMatrix) -> Result<()> {
    if high.width() != m.rows() {
        return Err(Error::DimensionMismatch {
            what: "high-level mask width",
            expected: m.rows(),
            got: high.width(),
        });
    }
    if low.width() != m.cols() {
        return Err(Error::DimensionMismatch {
            what: "low-level mask width",
            expected: m.cols(),
            got: low.width(),
        });
    }
    Ok(())
}

/// Runs the ADMM iterations and reports the final iterate even when the
/// stop rule was not met within `max_iters`.
pub fn run_admm(high: &PerturbationSet, low: &PerturbationSet, m: &AggregationMatrix, cfg: &SolverConfig) -> Result<AdmmOutcome> {
    cfg.validate()?;
    check_inputs(high, low, m)?;
    let (n_high, n_low) = (m.rows(), m.cols());

    let loss_high = Quadratic::new(high);
    let loss_low = Quadratic::new(low);
    let (mu1, mu2) = (cfg.mu1, cfg.mu2);

    let a = spd_inverse(
        &loss_high.gram + DMatrix::identity(n_high, n_high) * (mu1 + mu2),
        "high-level ADMM",
    )?;
    let b = &a * &loss_high.rhs;
    let mt_m = m.to_dense().tr_mul(&m.to_dense());
    let c = spd_inverse(
        &loss_low.gram + DMatrix::identity(n_low, n_low) * mu1 + mt_m * mu2,
        "low-level ADMM",
    )?;
    let d = &c * &loss_low.rhs;

    let mut s = match &cfg.init {
        Init::Zero => AdmmState::zeros(n_high, n_low),
        Init::Custom(state) => {
            state.check_dims(n_high, n_low)?;
            let mut state = (**state).clone();
            state.iter = 0;
            state
        }
    };

    let shrink_high = 1.0 / (mu1 + 2.0 * cfg.lambda_high);
    let shrink_low = 1.0 / (mu1 + 2.0 * cfg.lambda_low);
    let mut trace = AdmmTrace::default();
    let mut converged = false;

    while s.iter < cfg.max_iters {
        let prev_alpha_bar = s.alpha_bar.clone();
        let prev_beta_bar = s.beta_bar.clone();

        let alpha = &b + &a * (aggregate(m, &s.beta) * mu2 + &s.alpha_bar * mu1 - &s.v1 - &s.v3);
        let alpha_bar = (&s.v1 + &alpha * mu1) * shrink_high;
        let beta = &d + &c * (spread(m, &s.v3) + &s.beta_bar * mu1 + spread(m, &alpha) * mu2 - &s.v2);
        let beta_bar = (&s.v2 + &beta * mu1) * shrink_low;

        let h1 = &alpha - &alpha_bar;
        let h2 = &beta - &beta_bar;
        let h3 = &alpha - aggregate(m, &beta);
        s.v1 += &h1 * mu1;
        s.v2 += &h2 * mu1;
        s.v3 += &h3 * mu2;
        s.alpha = alpha;
        s.alpha_bar = alpha_bar;
        s.beta = beta;
        s.beta_bar = beta_bar;
        s.iter += 1;

        if !s.is_finite() {
            return Err(Error::InvalidData(format!("ADMM iterate became non-finite at iteration {}", s.iter)));
        }

        let change = (&prev_alpha_bar - &s.alpha_bar).norm_squared() + (&prev_beta_bar - &s.beta_bar).norm_squared();
        let (h1, h2, h3) = (h1.norm_squared(), h2.norm_squared(), h3.norm_squared());
        let objective = loss_high.eval(&s.alpha_bar)
            + loss_low.eval(&s.beta_bar)
            + cfg.lambda_high * s.alpha_bar.norm_squared()
            + cfg.lambda_low * s.beta_bar.norm_squared();
        trace.records.push(TraceRecord {
            iter: s.iter,
            h1,
            h2,
            h3,
            objective,
            change,
        });

        // the returned pair is (ᾱ, β̄†), so its own consistency residual is
        // required as well; h1..h3 alone do not bound it by eps2
        let returned = (&s.alpha_bar - aggregate(m, &s.beta_bar)).norm_squared();
        if change < cfg.eps1 && h1 + h2 + h3 < cfg.eps2 && returned < cfg.eps2 {
            converged = true;
            break;
        }
    }

    Ok(AdmmOutcome {
        pair: s.pair(),
        trace,
        state: s,
        converged,
    })
}

/// Consistent two-level attributions `(ᾱ, β̄†)` and the iteration trace.
///
/// Fails with [`Error::NonConvergence`] (carrying the last iterate) when the
/// stop rule is not met within `cfg.max_iters`.
pub fn solve_c2fa(
    high: &PerturbationSet,
    low: &PerturbationSet,
    m: &AggregationMatrix,
    cfg: &SolverConfig,
) -> Result<(AttributionPair, AdmmTrace)> {
    let outcome = run_admm(high, low, m, cfg)?;
    if outcome.converged {
        Ok((outcome.pair, outcome.trace))
    } else {
        Err(Error::NonConvergence(Box::new(NonConvergence {
            pair: outcome.pair,
            trace: outcome.trace,
        })))
    }
}

fn weighted_sse(set: &PerturbationSet, theta: &[f64]) -> f64 {
    set.masks
        .iter_rows()
        .zip(&set.outputs)
        .zip(&set.weights)
        .map(|((row, y), w)| {
            let fit: f64 = row.iter().zip(theta).filter(|(on, _)| **on).map(|(_, t)| t).sum();
            w * (y - fit).powi(2)
        })
        .sum()
}

/// `L_H(α) + L_L(β†) + λ_H‖α‖² + λ_L‖β†‖² + (μ2/2)‖α − Mβ†‖²`, evaluated
/// directly from the perturbations.
pub fn penalized_objective(
    pair: &AttributionPair,
    high: &PerturbationSet,
    low: &PerturbationSet,
    m: &AggregationMatrix,
    cfg: &SolverConfig,
) -> Result<f64> {
    pair.check_dims(m)?;
    check_inputs(high, low, m)?;
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let residual = crate::nested::consistency_residual(pair, m)?;
    Ok(0.5 * weighted_sse(high, &pair.hifa)
        + 0.5 * weighted_sse(low, &pair.lofa)
        + cfg.lambda_high * sq(&pair.hifa)
        + cfg.lambda_low * sq(&pair.lofa)
        + 0.5 * cfg.mu2 * residual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nested::{build_aggregation_matrix, consistency_residual, NestedShape};
    use crate::perturbation::{sample_masks, Level};
    use crate::ridge::lime_from_sets;
    use rand::{Rng, SeedableRng};

    fn random_sets(shape: &NestedShape, n_high: usize, n_low: usize, seed: u64) -> (PerturbationSet, PerturbationSet) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let hm = sample_masks(n_high, shape.n_groups(), seed ^ 1);
        let lm = sample_masks(n_low, shape.n_low(), seed ^ 2);
        let hy = (0..n_high).map(|_| rng.random_range(0.0..1.0)).collect();
        let ly = (0..n_low).map(|_| rng.random_range(0.0..1.0)).collect();
        let high = PerturbationSet::new(hm, hy, vec![1.0; n_high], Level::High).unwrap();
        let low = PerturbationSet::new(lm, ly, vec![1.0; n_low], Level::Low).unwrap();
        (
            high.weighted(crate::WeightSpec::Cosine).unwrap(),
            low.weighted(crate::WeightSpec::Cosine).unwrap(),
        )
    }

    #[test]
    fn zero_outputs_stop_after_one_iteration() {
        let shape = NestedShape::new(vec![2, 3]).unwrap();
        let m = build_aggregation_matrix(&shape);
        let hm = sample_masks(10, 2, 1);
        let lm = sample_masks(20, 5, 2);
        let high = PerturbationSet::new(hm, vec![0.0; 10], vec![1.0; 10], Level::High).unwrap();
        let low = PerturbationSet::new(lm, vec![0.0; 20], vec![1.0; 20], Level::Low).unwrap();
        let (pair, trace) = solve_c2fa(&high, &low, &m, &SolverConfig::default()).unwrap();
        assert_eq!(trace.len(), 1);
        assert!(pair.hifa.iter().chain(&pair.lofa).all(|v| *v == 0.0));
    }

    #[test]
    fn returned_pair_meets_residual_tolerance() {
        let shape = NestedShape::new(vec![2, 2, 3]).unwrap();
        let m = build_aggregation_matrix(&shape);
        for seed in 0..10 {
            let (high, low) = random_sets(&shape, 30, 60, seed);
            let cfg = SolverConfig::default();
            let (pair, trace) = solve_c2fa(&high, &low, &m, &cfg).unwrap();
            let last = trace.last().unwrap();
            assert!(last.h1 + last.h2 + last.h3 < cfg.eps2);
            assert!(consistency_residual(&pair, &m).unwrap() <= cfg.eps2);
        }
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let shape = NestedShape::new(vec![2, 2]).unwrap();
        let m = build_aggregation_matrix(&shape);
        let (high, low) = random_sets(&shape, 20, 20, 4);
        let cfg = SolverConfig {
            max_iters: 3,
            mu2: 0.001,
            ..SolverConfig::default()
        };
        match solve_c2fa(&high, &low, &m, &cfg) {
            Err(Error::NonConvergence(nc)) => {
                assert_eq!(nc.trace.len(), 3);
                assert_eq!(nc.pair.hifa.len(), 2);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let bad = [
            SolverConfig { mu1: 0.0, ..Default::default() },
            SolverConfig { mu2: -1.0, ..Default::default() },
            SolverConfig { lambda_high: -0.1, ..Default::default() },
            SolverConfig { eps1: f64::NAN, ..Default::default() },
            SolverConfig { max_iters: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        let parsed: SolverConfig = serde_json::from_str(r#"{"mu2": 0.01}"#).unwrap();
        assert_eq!(parsed.mu1, 0.1);
        assert_eq!(parsed.eps1, 1e-4);
        assert_eq!(parsed.mu2, 0.01);
        assert!(serde_json::from_str::<SolverConfig>(r#"{"mu3": 0.01}"#).is_err());
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let shape = NestedShape::new(vec![2, 2]).unwrap();
        let (high, low) = random_sets(&shape, 10, 10, 1);
        let other = build_aggregation_matrix(&NestedShape::new(vec![2, 3]).unwrap());
        assert!(matches!(solve_c2fa(&high, &low, &other, &SolverConfig::default()), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn different_starts_reach_the_same_point() {
        let shape = NestedShape::new(vec![2, 3]).unwrap();
        let m = build_aggregation_matrix(&shape);
        let (high, low) = random_sets(&shape, 40, 60, 8);
        let base = SolverConfig {
            eps1: 1e-10,
            eps2: 1e-10,
            max_iters: 200_000,
            ..SolverConfig::default()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut start = AdmmState::zeros(2, 5);
        for v in [&mut start.alpha, &mut start.alpha_bar, &mut start.v1, &mut start.v3] {
            v.iter_mut().for_each(|x| *x = rng.random_range(-3.0..3.0));
        }
        for v in [&mut start.beta, &mut start.beta_bar, &mut start.v2] {
            v.iter_mut().for_each(|x| *x = rng.random_range(-3.0..3.0));
        }
        let (p0, _) = solve_c2fa(&high, &low, &m, &base).unwrap();
        let custom = SolverConfig {
            init: Init::Custom(Box::new(start)),
            ..base
        };
        let (p1, _) = solve_c2fa(&high, &low, &m, &custom).unwrap();
        let dist: f64 = p0
            .hifa
            .iter()
            .chain(&p0.lofa)
            .zip(p1.hifa.iter().chain(&p1.lofa))
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(dist <= 1e-4, "distance {dist}");
    }

    #[test]
    fn vanishing_consistency_penalty_recovers_separate_fits() {
        // With a tiny μ2 the consistency multiplier barely moves within the
        // iteration budget, so the iterate stays at the separate ridge fits.
        let shape = NestedShape::new(vec![2, 2]).unwrap();
        let m = build_aggregation_matrix(&shape);
        let (high, low) = random_sets(&shape, 40, 40, 21);
        let cfg_for = |mu2| SolverConfig {
            mu2,
            max_iters: 2_000,
            ..SolverConfig::default()
        };
        let sep = lime_from_sets(&high, &low, 0.1, 0.1).unwrap();
        for mu2 in [1e-6, 1e-8] {
            let out = run_admm(&high, &low, &m, &cfg_for(mu2)).unwrap();
            for (x, y) in out.pair.hifa.iter().chain(&out.pair.lofa).zip(sep.hifa.iter().chain(&sep.lofa)) {
                assert!((x - y).abs() <= 1e-3, "mu2 {mu2}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn objective_examples() {
        let shape = NestedShape::new(vec![1, 2]).unwrap();
        let m = build_aggregation_matrix(&shape);
        let hm = sample_masks(5, 2, 1);
        let lm = sample_masks(5, 3, 2);
        let high = PerturbationSet::new(hm, vec![0.0; 5], vec![1.0; 5], Level::High).unwrap();
        let low = PerturbationSet::new(lm, vec![0.0; 5], vec![1.0; 5], Level::Low).unwrap();
        let zero = AttributionPair::zeros(&shape);
        assert_eq!(penalized_objective(&zero, &high, &low, &m, &SolverConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn separate_fit_minimizes_unpenalized_sum() {
        let shape = NestedShape::new(vec![2, 2]).unwrap();
        let m = build_aggregation_matrix(&shape);
        let (high, low) = random_sets(&shape, 20, 30, 5);
        let cfg = SolverConfig { mu2: 1e-300, ..SolverConfig::default() };
        let sep = lime_from_sets(&high, &low, cfg.lambda_high, cfg.lambda_low).unwrap();
        let best = penalized_objective(&sep, &high, &low, &m, &cfg).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let mut p = sep.clone();
            p.hifa.iter_mut().chain(p.lofa.iter_mut()).for_each(|v| *v += rng.random_range(-0.05..0.05));
            assert!(penalized_objective(&p, &high, &low, &m, &cfg).unwrap() >= best);
        }
    }

    #[test]
    fn trace_csv_header() {
        let trace = AdmmTrace {
            records: vec![TraceRecord { iter: 1, h1: 0.5, h2: 0.25, h3: 0.0, objective: 1.0, change: 0.0 }],
        };
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iter,h1,h2,h3,objective\n1,0.5,0.25,0,1\n");
    }
}
