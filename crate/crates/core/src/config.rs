use std::time::Duration;

use crate::error::SolveError;

/// How the upper bound `b` on per-residual cost changes is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpperBoundMode {
    /// Kernel range when the model reports a cost bound, Lipschitz otherwise.
    Auto,
    /// Largest observed `|f_i(θ⁺) − f_i(θ)|` over the batch, times
    /// `SolverConfig::lipschitz_safety`.
    Lipschitz,
    /// The model's cost upper bound (e.g. `τ²/4` for the smooth truncated
    /// quadratic). Fails configuration if the model has none.
    KernelRange,
    /// A fixed user-supplied value.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Stop when `‖g‖∞` falls below this (at full batch for ProBLM).
    pub grad_tol: f64,
    /// Wall-clock budget measured from the start of the run.
    pub budget: Option<Duration>,
    /// `None` derives λ₀ from the first normal matrix.
    pub lambda_init: Option<f64>,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Confidence parameter δ of the reduction test.
    pub delta: f64,
    /// Margin α: the true cost must drop by at least α times the observed drop.
    pub alpha: f64,
    /// Probability of temporarily accepting a step in the relaxed variant.
    pub eta: f64,
    /// Initial batch as a fraction of all residuals.
    pub k0_fraction: f64,
    pub seed: u64,
    pub upper_bound: UpperBoundMode,
    pub lipschitz_safety: f64,
    /// Fixed lower clamp `a`; `None` searches over the observed reductions.
    pub lower_bound: Option<f64>,
    /// Evaluate the full cost at every accepted iterate (not counted as work).
    pub audit: bool,
    pub run_id: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            grad_tol: 1e-8,
            budget: None,
            lambda_init: None,
            lambda_up: 10.0,
            lambda_down: 10.0,
            delta: 0.1,
            alpha: 0.9,
            eta: 0.5,
            k0_fraction: 0.1,
            seed: 0,
            upper_bound: UpperBoundMode::Auto,
            lipschitz_safety: 1.0,
            lower_bound: None,
            audit: false,
            run_id: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        let fail = |msg: String| Err(SolveError::Config(msg));
        if self.max_iter == 0 {
            return fail("max_iter must be at least 1".into());
        }
        if !(self.grad_tol >= 0.0) {
            return fail(format!("grad_tol must be non-negative, got {}", self.grad_tol));
        }
        if !(self.lambda_up > 1.0) || !(self.lambda_down > 1.0) {
            return fail("damping factors must be greater than 1".into());
        }
        if let Some(l) = self.lambda_init {
            if !(l > 0.0 && l.is_finite()) {
                return fail(format!("lambda_init must be positive, got {l}"));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.alpha >= 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must lie in [0, 1), got {}", self.alpha));
        }
        if !(self.eta >= 0.0 && self.eta < 1.0) {
            return fail(format!("eta must lie in [0, 1), got {}", self.eta));
        }
        if !(self.k0_fraction > 0.0 && self.k0_fraction <= 1.0) {
            return fail(format!("k0_fraction must lie in (0, 1], got {}", self.k0_fraction));
        }
        if !(self.lipschitz_safety >= 1.0) {
            return fail("lipschitz_safety must be at least 1".into());
        }
        if let UpperBoundMode::Fixed(b) = self.upper_bound {
            if !b.is_finite() {
                return fail(format!("fixed upper bound must be finite, got {b}"));
            }
        }
        if let Some(a) = self.lower_bound {
            if !(a <= 0.0) {
                return fail(format!("lower bound must be non-positive, got {a}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = SolverConfig::default();
        assert_eq!((c.delta, c.alpha, c.eta, c.k0_fraction), (0.1, 0.9, 0.5, 0.1));
        c.validate().unwrap();
    }

    #[test]
    fn out_of_range_parameters_are_rejected() {
        for c in [
            SolverConfig { delta: 1.0, ..Default::default() },
            SolverConfig { alpha: 1.0, ..Default::default() },
            SolverConfig { eta: -0.1, ..Default::default() },
            SolverConfig { k0_fraction: 0.0, ..Default::default() },
            SolverConfig { max_iter: 0, ..Default::default() },
            SolverConfig { lower_bound: Some(0.5), ..Default::default() },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
