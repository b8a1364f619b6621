//! Two-level feature attribution for black-box models.
//!
//! A prediction is explained at two granularities at once: high-level
//! features (instances in a bag, sentences in a document) and the low-level
//! features they are made of (super-pixels, words). Each level gets a local
//! linear surrogate fitted on random binary perturbations. The joint solver
//! in [`admm`] fits both surrogates under the constraint that every
//! high-level attribution equals the sum of its low-level attributions.
//!
//! Modules, bottom-up:
//!
//! - [`nested`]: nested input shape, aggregation matrix, attribution pairs.
//! - [`perturbation`]: mask sampling and the [`BlackBoxOracle`] abstraction.
//! - [`kernels`]: sample weights for the weighted least squares fits.
//! - [`ridge`]: separate closed-form ridge fits (LIME at both levels).
//! - [`admm`]: the consistency-constrained joint solver.
//! - [`kkt`]: a direct KKT solve of the same program, used as a reference.
//! - [`baselines`]: bottom-up and top-down consistent baselines.
//! - [`metrics`]: NDCG, AUROC, insertion/deletion, consistency, MIHL.
//! - [`synthetic`]: black-box oracles with known ground truth.

pub mod admm;
pub mod baselines;
pub mod error;
pub mod kernels;
pub mod kkt;
mod linalg;
pub mod metrics;
pub mod nested;
pub mod perturbation;
pub mod ridge;
pub mod synthetic;

pub use admm::{penalized_objective, run_admm, solve_c2fa, AdmmOutcome, AdmmState, AdmmTrace, Init, SolverConfig};
pub use baselines::{bu_lime, td_lime};
pub use error::{Error, Result};
pub use kernels::{weigh, WeightSpec};
pub use kkt::solve_kkt_oracle;
pub use metrics::{auroc, insertion_deletion, mihl_agreement, ndcg, EvalReport, SweepMode};
pub use nested::{build_aggregation_matrix, consistency_residual, AggregationMatrix, AttributionPair, NestedShape};
pub use perturbation::{collect, derive_seed, perturb_two_level, sample_masks, BlackBoxOracle, Level, MaskMatrix, OracleError, PerturbationSet};
pub use ridge::{lime_from_sets, lime_two_level, solve_ridge, RidgeProblem};
pub use synthetic::{make_linear_oracle, make_mil_oracle, CoeffSpec, GroundTruth, LinearSetOracle, MilMaxOracle, OracleSpec};
