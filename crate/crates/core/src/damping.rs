use crate::normal::NormalEquations;

pub const LAMBDA_MIN: f64 = 1e-12;
pub const LAMBDA_MAX: f64 = 1e12;

/// Multiplicative damping schedule for the `λI` term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DampingState {
    pub lambda: f64,
    pub up_factor: f64,
    pub down_factor: f64,
    pub lambda_init: f64,
}

impl DampingState {
    pub fn new(lambda_init: f64, up_factor: f64, down_factor: f64) -> Self {
        let lambda = clamp_lambda(lambda_init);
        Self {
            lambda,
            up_factor,
            down_factor,
            lambda_init: lambda,
        }
    }

    /// `λ₀ = 1e-3 · mean(diag H) / d`, clamped to `[1e-8, 1e3]`.
    pub fn initial_lambda(ne: &NormalEquations) -> f64 {
        let d = ne.dim();
        if d == 0 {
            return 1e-3;
        }
        let mean_diag = ne.hessian.diagonal().sum() / d as f64;
        let value = 1e-3 * mean_diag / d as f64;
        if value.is_finite() {
            value.clamp(1e-8, 1e3)
        } else {
            1e-3
        }
    }

    pub fn at_max(&self) -> bool {
        self.lambda >= LAMBDA_MAX
    }

    pub fn increase(&mut self) {
        self.lambda = clamp_lambda(self.lambda * self.up_factor);
    }

    pub fn decrease(&mut self) {
        self.lambda = clamp_lambda(self.lambda / self.down_factor);
    }
}

fn clamp_lambda(lambda: f64) -> f64 {
    lambda.clamp(LAMBDA_MIN, LAMBDA_MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn lambda_stays_in_bounds() {
        let mut s = DampingState::new(1.0, 10.0, 10.0);
        for _ in 0..40 {
            s.increase();
        }
        assert_eq!(s.lambda, LAMBDA_MAX);
        assert!(s.at_max());
        for _ in 0..80 {
            s.decrease();
        }
        assert_eq!(s.lambda, LAMBDA_MIN);
    }

    #[test]
    fn initial_lambda_scales_with_hessian_diagonal() {
        let mut ne = NormalEquations::zeros(2);
        ne.hessian = DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 300.0]));
        // 1e-3 * 200 / 2
        assert!((DampingState::initial_lambda(&ne) - 0.1).abs() < 1e-15);
        ne.hessian *= 1e-9;
        assert_eq!(DampingState::initial_lambda(&ne), 1e-8);
    }
}
