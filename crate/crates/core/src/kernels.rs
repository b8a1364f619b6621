//! Sample-weight kernels for the diagonal weight matrices.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturbation::MaskMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSpec {
    /// Cosine similarity between the mask and the all-ones (unperturbed) input.
    #[default]
    Cosine,
    Uniform,
}

impl FromStr for WeightSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::InvalidConfig(format!("unknown kernel {other:?} (expected \"cosine\" or \"uniform\")"))),
        }
    }
}

impl std::fmt::Display for WeightSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cosine => "cosine",
            Self::Uniform => "uniform",
        })
    }
}

/// One weight per mask row.
///
/// For a binary row with `k` ones out of `K`, the cosine similarity with the
/// all-ones vector is `k / (√k · √K) = √(k/K)`.
pub fn weigh(masks: &MaskMatrix, spec: WeightSpec) -> Result<Vec<f64>> {
    let width = masks.width() as f64;
    (0..masks.rows())
        .map(|n| {
            let k = masks.ones_in_row(n);
            if k == 0 {
                return Err(Error::SingularWeight { row: n });
            }
            Ok(match spec {
                WeightSpec::Cosine => (k as f64 / width).sqrt(),
                WeightSpec::Uniform => 1.0,
            })
        })
        .collect()
}
