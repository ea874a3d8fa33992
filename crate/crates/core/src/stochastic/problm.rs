//! Progressive-batching Levenberg-Marquardt.
//!
//! Steps are computed from the normal equations of a batch (a prefix of a
//! fixed random permutation of the residuals) and accepted only when the
//! observed batch reduction certifies, through a Hoeffding bound, a reduction
//! of the full objective. Uncertified reductions grow the batch instead.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{SolverConfig, UpperBoundMode};
use crate::damping::DampingState;
use crate::error::SolveError;
use crate::lm::{descends, start_error, trial_costs};
use crate::model::{total_cost, ResidualModel};
use crate::normal::{accumulate, solve_damped_step, NormalEquations};
use crate::trace::{Outcome, Recorder, SolveReport, Termination};

use super::batch::{init_batch_with_rng, BatchState};
use super::bounds::{
    estimate_lower_bound_a, estimate_upper_bound_b, BoundEstimates, BoundSource, ReductionStats,
    UpperBoundSource,
};
use super::hoeffding::{growth_floor, next_batch_size, sufficient_reduction_test, StepOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Each step must pass the reduction test on its own.
    Strict,
    /// The test is applied to the reduction accumulated since the batch was
    /// last grown; failing steps are still kept with probability η.
    Relaxed,
}

/// Randomness and batch carried across one or more solver runs (GNC levels
/// share one state).
#[derive(Debug, Clone)]
pub struct StochasticState {
    pub batch: BatchState,
    pub rng: ChaCha8Rng,
}

impl StochasticState {
    /// Seeds the run generator, then draws the permutation from it.
    pub fn new(n: usize, min_size: usize, config: &SolverConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let batch = init_batch_with_rng(n, config.k0_fraction, min_size, &mut rng);
        Self { batch, rng }
    }

    pub fn for_model<M: ResidualModel>(model: &M, config: &SolverConfig) -> Self {
        Self::new(model.num_residuals(), model.tangent_dim() + 1, config)
    }
}

/// Decision of the relaxed variant on a step that reduced the batch cost:
/// keep it when the accumulated test passes, otherwise keep it with
/// probability `eta`. Draws exactly one number from `rng`.
pub fn relaxed_accept<R: Rng>(test_passed: bool, eta: f64, rng: &mut R) -> bool {
    // p uniform on (0, 1] so that η = 0 never accepts
    let p = 1.0 - rng.random::<f64>();
    test_passed || p <= eta
}

/// Strict ProBLM from a fresh seeded state.
pub fn problm_run<M: ResidualModel>(
    model: &M,
    start: M::Params,
    config: &SolverConfig,
) -> Result<SolveReport<M::Params>, SolveError> {
    let mut state = StochasticState::for_model(model, config);
    problm_solve(model, start, config, Variant::Strict, &mut state)
}

/// Relaxed ProBLM from a fresh seeded state.
pub fn problm_relaxed_run<M: ResidualModel>(
    model: &M,
    start: M::Params,
    config: &SolverConfig,
) -> Result<SolveReport<M::Params>, SolveError> {
    let mut state = StochasticState::for_model(model, config);
    problm_solve(model, start, config, Variant::Relaxed, &mut state)
}

fn upper_bound_source<M: ResidualModel>(
    model: &M,
    config: &SolverConfig,
) -> Result<UpperBoundSource, SolveError> {
    let lipschitz = UpperBoundSource::Lipschitz {
        safety: config.lipschitz_safety,
    };
    Ok(match config.upper_bound {
        UpperBoundMode::Auto => model
            .cost_upper_bound()
            .map_or(lipschitz, UpperBoundSource::KernelRange),
        UpperBoundMode::Lipschitz => lipschitz,
        UpperBoundMode::KernelRange => UpperBoundSource::KernelRange(
            model.cost_upper_bound().ok_or_else(|| {
                SolveError::Config("model has no cost upper bound for kernel-range mode".into())
            })?,
        ),
        UpperBoundMode::Fixed(b) => UpperBoundSource::Fixed(b),
    })
}

/// Working set of one run: the batch in ascending index order, normal
/// equations and per-residual costs at the current iterate.
struct Linearization {
    sorted: Vec<usize>,
    ne: NormalEquations,
}

impl Linearization {
    fn build<M: ResidualModel>(
        model: &M,
        params: &M::Params,
        batch: &[usize],
        costs: &mut [f64],
    ) -> Result<Self, crate::error::EvalError> {
        let mut sorted = batch.to_vec();
        sorted.sort_unstable();
        let mut ne = NormalEquations::zeros(model.tangent_dim());
        accumulate(&mut ne, model, &sorted, params, |i, e| costs[i] = e.cost)?;
        Ok(Self { sorted, ne })
    }

    /// Adds freshly sampled residuals at the unchanged iterate.
    fn extend<M: ResidualModel>(
        &mut self,
        model: &M,
        params: &M::Params,
        added: &[usize],
        costs: &mut [f64],
    ) -> Result<(), crate::error::EvalError> {
        accumulate(&mut self.ne, model, added, params, |i, e| costs[i] = e.cost)?;
        self.sorted.extend_from_slice(added);
        self.sorted.sort_unstable();
        Ok(())
    }
}

/// Runs ProBLM from `start` with the batch and generator in `state`.
///
/// The run stops on `grad_tol` only once the batch holds every residual; a
/// batch whose own gradient vanishes, or whose damping is exhausted, is grown
/// to the full set instead.
pub fn problm_solve<M: ResidualModel>(
    model: &M,
    start: M::Params,
    config: &SolverConfig,
    variant: Variant,
    state: &mut StochasticState,
) -> Result<SolveReport<M::Params>, SolveError> {
    config.validate()?;
    let n = model.num_residuals();
    if state.batch.total() != n {
        return Err(SolveError::Config(format!(
            "batch permutation covers {} residuals, model has {n}",
            state.batch.total()
        )));
    }
    let bound_source = upper_bound_source(model, config)?;
    let mut recorder = Recorder::new(config.run_id);

    let mut params = start;
    let mut costs = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut epoch_costs = vec![0.0; n];
    let mut lin = Linearization::build(model, &params, state.batch.indices(), &mut costs)
        .map_err(start_error)?;
    if !lin.ne.cost.is_finite() {
        return Err(SolveError::InvalidStart);
    }
    let mut evals = state.batch.size() as u64;
    let mut cost_evals = 0u64;
    for &i in &lin.sorted {
        epoch_costs[i] = costs[i];
    }
    state.batch.epoch_start = 0;
    state.batch.observed_reduction = 0.0;

    let lambda0 = config
        .lambda_init
        .unwrap_or_else(|| DampingState::initial_lambda(&lin.ne));
    let mut damping = DampingState::new(lambda0, config.lambda_up, config.lambda_down);
    let audit = |p: &M::Params| -> Result<Option<f64>, SolveError> {
        Ok(if config.audit { Some(total_cost(model, p)?) } else { None })
    };
    let mut audited = audit(&params)?;

    let mut previous_b: Option<f64> = None;
    let mut changes: Vec<f64> = Vec::new();
    let mut iter = 0;

    // Grows the batch to `new_size` at the current iterate, restarting the epoch.
    macro_rules! grow_batch {
        ($new_size:expr) => {{
            let added = state.batch.grow($new_size, iter + 1).to_vec();
            lin.extend(model, &params, &added, &mut costs)?;
            evals += added.len() as u64;
            for &i in &lin.sorted {
                epoch_costs[i] = costs[i];
            }
        }};
    }

    let termination = loop {
        let full = state.batch.is_full();
        if lin.ne.gradient_norm_inf() <= config.grad_tol {
            if full {
                break Termination::GradientTolerance;
            }
            if iter >= config.max_iter {
                break Termination::MaxIterations;
            }
            // stationary on the batch: S_K → 0 sends the growth rule to N
            grow_batch!(n);
            recorder.push(iter, n, damping.lambda, Outcome::Insufficient, lin.ne.cost, audited, evals);
            iter += 1;
            continue;
        }
        if iter >= config.max_iter {
            break Termination::MaxIterations;
        }
        if config.budget.is_some_and(|b| recorder.elapsed() >= b) {
            break Termination::Budget;
        }

        let k = state.batch.size();
        let mut candidate = None;
        if let Ok(step) = solve_damped_step(&lin.ne, damping.lambda) {
            let c = model.retract(&params, step.as_slice());
            cost_evals += k as u64;
            if trial_costs(model, &lin.sorted, &c, &mut trial)? {
                candidate = Some(c);
            }
        }

        // Classify the step; `reduction` is the statistic used for growth.
        let (outcome, growth) = match candidate.as_ref() {
            None => (StepOutcome::Failure, None),
            Some(_) => {
                if !descends(&lin.sorted, &trial, &costs, lin.ne.cost) {
                    (StepOutcome::Failure, None)
                } else if full {
                    (StepOutcome::Success, None)
                } else {
                    let reference: &[f64] = match variant {
                        Variant::Strict => &costs,
                        Variant::Relaxed => &epoch_costs,
                    };
                    changes.clear();
                    changes.extend(lin.sorted.iter().map(|&i| trial[i] - reference[i]));
                    let (b, source) = estimate_upper_bound_b(bound_source, &changes, previous_b);
                    previous_b = Some(b);
                    let a = match config.lower_bound {
                        Some(a) => a,
                        None => estimate_lower_bound_a(&changes, b, config.alpha, config.delta),
                    };
                    let source = if config.lower_bound.is_some() {
                        BoundSource::UserSupplied
                    } else {
                        source
                    };
                    let bounds = BoundEstimates { a, b, source };
                    let stat = ReductionStats::from_changes(&changes, a).clamped_sum;
                    let test =
                        sufficient_reduction_test(stat, k, n, &bounds, config.alpha, config.delta);
                    let outcome = match variant {
                        Variant::Strict => test,
                        Variant::Relaxed => {
                            state.batch.observed_reduction = stat;
                            let passed = test == StepOutcome::Success;
                            if relaxed_accept(passed, config.eta, &mut state.rng) {
                                StepOutcome::Success
                            } else {
                                StepOutcome::Insufficient
                            }
                        }
                    };
                    (outcome, Some((stat, bounds)))
                }
            }
        };

        let exhausted = outcome == StepOutcome::Failure && damping.at_max();
        match outcome {
            StepOutcome::Success => {
                params = candidate.expect("success implies a candidate");
                damping.decrease();
                lin = Linearization::build(model, &params, state.batch.indices(), &mut costs)?;
                evals += k as u64;
                audited = audit(&params)?;
                recorder.push(iter, k, damping.lambda, Outcome::Success, lin.ne.cost, audited, evals);
            }
            StepOutcome::Failure => {
                damping.increase();
                if exhausted && !full {
                    grow_batch!(n);
                    recorder.push(iter, n, damping.lambda, Outcome::Insufficient, lin.ne.cost, audited, evals);
                } else {
                    recorder.push(iter, k, damping.lambda, Outcome::Failure, lin.ne.cost, audited, evals);
                }
            }
            StepOutcome::Insufficient => {
                let (stat, bounds) = growth.expect("insufficient implies bounds");
                let new_size = if stat < 0.0 {
                    next_batch_size(k, stat, &bounds, config.alpha, config.delta, n)
                } else {
                    growth_floor(k, n)
                };
                let batch_cost = lin.ne.cost;
                grow_batch!(new_size);
                recorder.push(
                    iter,
                    state.batch.size(),
                    damping.lambda,
                    Outcome::Insufficient,
                    batch_cost,
                    audited,
                    evals,
                );
            }
        }
        iter += 1;
        if exhausted && full {
            break Termination::DampingExhausted;
        }
    };

    let final_cost = total_cost(model, &params)?;
    Ok(SolveReport {
        params,
        final_cost,
        trace: recorder.records,
        termination,
        iterations: iter,
        evals,
        cost_evals,
        final_batch_size: state.batch.size(),
    })
}
