//! Classical full-batch Levenberg-Marquardt.

use crate::config::SolverConfig;
use crate::damping::DampingState;
use crate::error::{EvalError, SolveError};
use crate::model::ResidualModel;
use crate::normal::{accumulate, solve_damped_step, NormalEquations};
use crate::trace::{Outcome, Recorder, SolveReport, Termination};

/// Evaluates `f_i` at `params` for every listed index into `costs[i]`.
///
/// A non-finite cost at a trial point yields `Ok(false)`; the caller rejects
/// the step instead of aborting the run.
pub(crate) fn trial_costs<M: ResidualModel>(
    model: &M,
    indices: &[usize],
    params: &M::Params,
    costs: &mut [f64],
) -> Result<bool, EvalError> {
    for &i in indices {
        match model.cost(i, params) {
            Ok(c) if c.is_finite() => costs[i] = c,
            Ok(_) | Err(EvalError::NonFinite { .. }) => return Ok(false),
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

/// Plain descent test: the summed per-residual change is negative and the
/// trial cost, summed in the same order as `current`, is not larger.
pub(crate) fn descends(indices: &[usize], trial: &[f64], costs: &[f64], current: f64) -> bool {
    let mut change = 0.0;
    let mut total = 0.0;
    for &i in indices {
        change += trial[i] - costs[i];
        total += trial[i];
    }
    change < 0.0 && total <= current
}

/// Non-finite values at the starting point are reported as an invalid start.
pub(crate) fn start_error(e: EvalError) -> SolveError {
    match e {
        EvalError::NonFinite { .. } => SolveError::InvalidStart,
        other => SolveError::Eval(other),
    }
}

/// Runs LM on all residuals from `start`.
///
/// A step is accepted when `Σ_i (f_i(θ⁺) − f_i(θ)) < 0`; on acceptance λ is
/// divided by `lambda_down`, otherwise multiplied by `lambda_up` and the step
/// is recomputed from the cached normal equations.
pub fn classical_lm_run<M: ResidualModel>(
    model: &M,
    start: M::Params,
    config: &SolverConfig,
) -> Result<SolveReport<M::Params>, SolveError> {
    config.validate()?;
    let n = model.num_residuals();
    let d = model.tangent_dim();
    let all: Vec<usize> = (0..n).collect();
    let mut recorder = Recorder::new(config.run_id);

    let mut params = start;
    let mut costs = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut ne = NormalEquations::zeros(d);
    accumulate(&mut ne, model, &all, &params, |i, e| costs[i] = e.cost).map_err(start_error)?;
    if !ne.cost.is_finite() {
        return Err(SolveError::InvalidStart);
    }
    let mut evals = n as u64;
    let mut cost_evals = 0u64;

    let lambda0 = config
        .lambda_init
        .unwrap_or_else(|| DampingState::initial_lambda(&ne));
    let mut damping = DampingState::new(lambda0, config.lambda_up, config.lambda_down);
    let mut audited = if config.audit { Some(ne.cost) } else { None };

    let mut iter = 0;
    let termination = loop {
        if ne.gradient_norm_inf() <= config.grad_tol {
            break Termination::GradientTolerance;
        }
        if iter >= config.max_iter {
            break Termination::MaxIterations;
        }
        if config.budget.is_some_and(|b| recorder.elapsed() >= b) {
            break Termination::Budget;
        }

        let accepted = match solve_damped_step(&ne, damping.lambda) {
            Ok(step) => {
                let candidate = model.retract(&params, step.as_slice());
                cost_evals += n as u64;
                if trial_costs(model, &all, &candidate, &mut trial)? {
                    (descends(&all, &trial, &costs, ne.cost)).then_some(candidate)
                } else {
                    None
                }
            }
            Err(SolveError::NotPositiveDefinite { .. }) => None,
            Err(e) => return Err(e),
        };

        let exhausted = accepted.is_none() && damping.at_max();
        match accepted {
            Some(candidate) => {
                params = candidate;
                damping.decrease();
                ne = NormalEquations::zeros(d);
                accumulate(&mut ne, model, &all, &params, |i, e| costs[i] = e.cost)?;
                evals += n as u64;
                if audited.is_some() {
                    audited = Some(ne.cost);
                }
                recorder.push(iter, n, damping.lambda, Outcome::Success, ne.cost, audited, evals);
            }
            None => {
                damping.increase();
                recorder.push(iter, n, damping.lambda, Outcome::Failure, ne.cost, audited, evals);
            }
        }
        iter += 1;
        if exhausted {
            break Termination::DampingExhausted;
        }
    };

    Ok(SolveReport {
        params,
        final_cost: ne.cost,
        trace: recorder.records,
        termination,
        iterations: iter,
        evals,
        cost_evals,
        final_batch_size: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FnModel;
    use nalgebra::{DMatrix, DVector};

    fn rosenbrock() -> impl ResidualModel<Params = DVector<f64>> {
        FnModel::new(
            2,
            1,
            2,
            |i, t, r| {
                r[0] = if i == 0 {
                    10.0 * (t[1] - t[0] * t[0])
                } else {
                    1.0 - t[0]
                }
            },
            |i, t, j| {
                if i == 0 {
                    j[0] = -20.0 * t[0];
                    j[1] = 10.0;
                } else {
                    j[0] = -1.0;
                    j[1] = 0.0;
                }
            },
        )
    }

    #[test]
    fn rosenbrock_reaches_minimum() {
        let m = rosenbrock();
        let report =
            classical_lm_run(&m, DVector::from_vec(vec![-1.2, 1.0]), &SolverConfig::default())
                .unwrap();
        assert!((report.params[0] - 1.0).abs() < 1e-6);
        assert!((report.params[1] - 1.0).abs() < 1e-6);
        assert!(report.final_cost < 1e-12);
        assert_eq!(report.termination, Termination::GradientTolerance);
    }

    #[test]
    fn linear_least_squares_matches_normal_equation_solution() {
        // r_i = a_iᵀθ − y_i with fixed pseudo-random rows
        let rows: Vec<[f64; 3]> = (0..12)
            .map(|i| {
                let x = i as f64;
                [1.0, (0.3 * x).sin(), (0.7 * x).cos() + 0.1 * x]
            })
            .collect();
        let y: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let (rows_r, y_r) = (rows.clone(), y.clone());
        let rows_j = rows.clone();
        let m = FnModel::new(
            12,
            1,
            3,
            move |i, t, r| r[0] = rows_r[i][0] * t[0] + rows_r[i][1] * t[1] + rows_r[i][2] * t[2] - y_r[i],
            move |i, _, j| j.copy_from_slice(&rows_j[i]),
        );
        let cfg = SolverConfig { grad_tol: 1e-13, ..Default::default() };
        let report = classical_lm_run(&m, DVector::zeros(3), &cfg).unwrap();
        assert!(report.iterations <= 20, "{} iterations", report.iterations);

        let a = DMatrix::from_fn(12, 3, |i, k| rows[i][k]);
        let b = DVector::from_vec(y);
        let exact = (a.transpose() * &a).lu().solve(&(a.transpose() * b)).unwrap();
        let rel = (&report.params - &exact).norm() / exact.norm();
        assert!(rel < 1e-10, "relative error {rel}");
    }

    #[test]
    fn stationary_start_takes_no_steps() {
        let m = rosenbrock();
        let report =
            classical_lm_run(&m, DVector::from_vec(vec![1.0, 1.0]), &SolverConfig::default())
                .unwrap();
        assert_eq!(report.iterations, 0);
        assert!(report.trace.is_empty());
        assert_eq!(report.termination, Termination::GradientTolerance);
    }

    #[test]
    fn accepted_costs_never_increase() {
        let m = rosenbrock();
        let report =
            classical_lm_run(&m, DVector::from_vec(vec![-1.2, 1.0]), &SolverConfig::default())
                .unwrap();
        let costs = report.accepted_costs();
        assert!(costs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let m = FnModel::new(1, 1, 1, |_, t, r| r[0] = 1.0 / t[0], |_, t, j| j[0] = -1.0 / (t[0] * t[0]));
        let err = classical_lm_run(&m, DVector::zeros(1), &SolverConfig::default()).unwrap_err();
        assert!(matches!(err, SolveError::InvalidStart));
    }

    #[test]
    fn max_iter_is_respected() {
        let m = rosenbrock();
        let cfg = SolverConfig { max_iter: 3, ..Default::default() };
        let report = classical_lm_run(&m, DVector::from_vec(vec![-1.2, 1.0]), &cfg).unwrap();
        assert_eq!(report.iterations, 3);
        assert_eq!(report.termination, Termination::MaxIterations);
    }
}
