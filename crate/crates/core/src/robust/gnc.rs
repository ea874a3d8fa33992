use std::time::Instant;

use crate::config::SolverConfig;
use crate::error::SolveError;
use crate::model::{total_cost, ResidualModel};
use crate::solver::Method;
use crate::lm::classical_lm_run;
use crate::stochastic::{problm_solve, StochasticState};
use crate::trace::{Outcome, SolveReport, TraceRecord};

use super::kernel::RobustKernel;
use super::robustify::Robustified;

/// Kernel scale multipliers `σ_ℓ`, applied to `τ` from first to last level.
#[derive(Debug, Clone, PartialEq)]
pub struct GncSchedule {
    pub multipliers: Vec<f64>,
    /// Gradient tolerance for every level but the last, which uses the
    /// solver configuration's.
    pub level_grad_tol: f64,
}

impl Default for GncSchedule {
    fn default() -> Self {
        Self::halving(5)
    }
}

impl GncSchedule {
    /// `2^(levels−1), …, 2, 1`.
    pub fn halving(levels: usize) -> Self {
        assert!(levels >= 1, "at least one GNC level is required");
        Self {
            multipliers: (0..levels).rev().map(|l| (1u64 << l) as f64).collect(),
            level_grad_tol: 1e-6,
        }
    }

    pub fn single() -> Self {
        Self::halving(1)
    }

    pub fn levels(&self) -> usize {
        self.multipliers.len()
    }

    fn validate(&self) -> Result<(), SolveError> {
        if self.multipliers.is_empty() {
            return Err(SolveError::Config("GNC schedule has no levels".into()));
        }
        if self.multipliers.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(SolveError::Config("GNC multipliers must be positive".into()));
        }
        if self.multipliers.last() != Some(&1.0) {
            return Err(SolveError::Config("the last GNC multiplier must be 1".into()));
        }
        Ok(())
    }
}

/// Graduated non-convexity: solves with kernel scale `τ σ_ℓ` for each level,
/// warm-starting from the previous level.
///
/// ProBLM methods keep one batch across all levels; damping restarts at each
/// level. The returned trace is the concatenation of the level traces, with
/// iteration numbers, timings and evaluation counts continuing across levels,
/// and a `gnc-level-advance` row between levels. `final_cost` is the robust
/// cost at the last level's kernel.
pub fn gnc_run<M: ResidualModel>(
    model: &M,
    kernel: RobustKernel,
    start: M::Params,
    config: &SolverConfig,
    schedule: &GncSchedule,
    method: Method,
) -> Result<SolveReport<M::Params>, SolveError> {
    config.validate()?;
    schedule.validate()?;
    let clock = Instant::now();
    let mut state = method
        .variant()
        .map(|_| StochasticState::for_model(model, config));

    let mut params = start;
    let mut trace: Vec<TraceRecord> = Vec::new();
    let (mut iterations, mut evals, mut cost_evals) = (0usize, 0u64, 0u64);
    let last = schedule.levels() - 1;
    let mut report = None;

    for (level, &sigma) in schedule.multipliers.iter().enumerate() {
        let wrapped = Robustified::new(model, kernel.scaled(sigma));
        let mut level_config = config.clone();
        if level < last {
            level_config.grad_tol = schedule.level_grad_tol;
        }
        if let Some(budget) = config.budget {
            level_config.budget = Some(budget.saturating_sub(clock.elapsed()));
        }
        let wall_offset = clock.elapsed().as_nanos() as u64;

        if level > 0 {
            let cost = total_cost(&wrapped, &params)?;
            let prev = trace.last();
            trace.push(TraceRecord {
                run_id: config.run_id,
                iter: iterations,
                wall_ns: prev.map_or(wall_offset, |r| r.wall_ns.max(wall_offset)),
                batch_size: state.as_ref().map_or(model.num_residuals(), |s| s.batch.size()),
                lambda: prev.map_or(f64::NAN, |r| r.lambda),
                outcome: Outcome::GncLevelAdvance,
                batch_cost: cost,
                full_cost: config.audit.then_some(cost),
                evals_cum: evals,
                level,
            });
            iterations += 1;
        }

        let r = match (method.variant(), state.as_mut()) {
            (Some(variant), Some(st)) => problm_solve(&wrapped, params, &level_config, variant, st)?,
            _ => classical_lm_run(&wrapped, params, &level_config)?,
        };
        for rec in &r.trace {
            let floor = trace.last().map_or(0, |p: &TraceRecord| p.wall_ns);
            trace.push(TraceRecord {
                iter: rec.iter + iterations,
                wall_ns: (rec.wall_ns + wall_offset).max(floor),
                evals_cum: rec.evals_cum + evals,
                level,
                ..rec.clone()
            });
        }
        iterations += r.iterations;
        evals += r.evals;
        cost_evals += r.cost_evals;
        params = r.params.clone();
        report = Some(r);
    }

    let last_report = report.expect("schedule has at least one level");
    Ok(SolveReport {
        params,
        final_cost: last_report.final_cost,
        trace,
        termination: last_report.termination,
        iterations,
        evals,
        cost_evals,
        final_batch_size: last_report.final_batch_size,
    })
}
