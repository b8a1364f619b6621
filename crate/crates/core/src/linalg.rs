use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::perturbation::PerturbationSet;

/// `(ZᵀWZ, ZᵀWy)` for one perturbation set.
pub(crate) fn weighted_normal_equations(set: &PerturbationSet) -> (DMatrix<f64>, DVector<f64>) {
    let z = set.masks.to_design();
    let mut wz = z.clone();
    for (n, &w) in set.weights.iter().enumerate() {
        wz.row_mut(n).scale_mut(w);
    }
    let y = DVector::from_column_slice(&set.outputs);
    (z.tr_mul(&wz), wz.tr_mul(&y))
}

/// Number of near-zero singular values of a symmetric matrix.
fn rank_deficiency(mat: &DMatrix<f64>) -> usize {
    let sv = mat.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let tol = max.max(1.0) * mat.nrows() as f64 * f64::EPSILON * 16.0;
    sv.iter().filter(|&&s| s <= tol).count()
}

fn cholesky(mat: DMatrix<f64>, what: &'static str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let dim = mat.nrows();
    match nalgebra::Cholesky::new(mat.clone()) {
        Some(c) => {
            // Cholesky succeeds on numerically semidefinite matrices with tiny pivots
            let min_pivot = c.l_dirty().diagonal().iter().cloned().fold(f64::INFINITY, f64::min);
            let max_diag = mat.diagonal().iter().cloned().fold(0.0_f64, f64::max);
            if min_pivot * min_pivot <= max_diag.max(1.0) * f64::EPSILON * dim as f64 {
                return Err(Error::Singular {
                    what,
                    dim,
                    deficient: rank_deficiency(&mat).max(1),
                });
            }
            Ok(c)
        }
        None => Err(Error::Singular {
            what,
            dim,
            deficient: rank_deficiency(&mat).max(1),
        }),
    }
}

pub(crate) fn spd_solve(mat: DMatrix<f64>, rhs: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    Ok(cholesky(mat, what)?.solve(rhs))
}

pub(crate) fn spd_inverse(mat: DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    Ok(cholesky(mat, what)?.inverse())
}
