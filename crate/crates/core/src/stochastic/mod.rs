//! Batch sampling, the sufficient-reduction test and the ProBLM solver.

mod batch;
mod bounds;
mod hoeffding;
mod problm;

pub use batch::{init_batch, init_batch_with_rng, initial_batch_size, BatchState};
pub use bounds::{
    clamped_reduction, cost_changes, estimate_lower_bound_a, estimate_upper_bound_b,
    BoundEstimates, BoundSource, ReductionStats, UpperBoundSource, DEGENERATE_LOWER_BOUND,
};
pub use hoeffding::{
    confidence_from_failure_rate, growth_floor, hoeffding_tail_bound, hoeffding_threshold,
    next_batch_size, sufficient_reduction_test, StepOutcome,
};
pub use problm::{
    problm_relaxed_run, problm_run, problm_solve, relaxed_accept, StochasticState, Variant,
};
