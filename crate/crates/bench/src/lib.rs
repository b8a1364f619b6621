//! Fixtures shared by the benchmarks.

use nestattr::{
    build_aggregation_matrix, make_mil_oracle, perturb_two_level, AggregationMatrix, NestedShape, PerturbationSet,
    WeightSpec,
};

/// Perturbations of a MIL oracle with `groups × size` low-level features.
pub struct Instance {
    pub high: PerturbationSet,
    pub low: PerturbationSet,
    pub m: AggregationMatrix,
}

pub fn mil_instance(groups: usize, size: usize, n_high: usize, n_low: usize, seed: u64) -> Instance {
    let shape = NestedShape::uniform(groups, size).expect("nonempty shape");
    let oracle = make_mil_oracle(&shape, &[0], 0.2, seed).expect("valid oracle");
    let (high, low) = perturb_two_level(&oracle, n_high, n_low, WeightSpec::Cosine, seed).expect("oracle never fails");
    Instance {
        high,
        low,
        m: build_aggregation_matrix(&shape),
    }
}
