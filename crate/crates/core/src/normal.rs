//! Gauss-Newton normal equations over a subset of residual blocks and the
//! damped step `Δθ = −(H + λI)⁻¹ g`.

use nalgebra::{DMatrix, DVector};

use crate::error::{EvalError, SolveError};
use crate::model::{BlockEval, ResidualModel};

/// Accumulated `g = Σ J_iᵀ r_i`, `H = Σ J_iᵀ J_i` and `cost = Σ f_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub cost: f64,
    /// Number of contributing blocks that were active.
    pub active: usize,
}

impl NormalEquations {
    pub fn zeros(dim: usize) -> Self {
        Self {
            gradient: DVector::zeros(dim),
            hessian: DMatrix::zeros(dim, dim),
            cost: 0.0,
            active: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    /// Adds one block given its residual and row-major `p × d` Jacobian.
    pub fn add_block(&mut self, residual: &[f64], jacobian: &[f64], eval: BlockEval) {
        let d = self.dim();
        let h = self.hessian.as_mut_slice();
        let g = self.gradient.as_mut_slice();
        for (k, &rk) in residual.iter().enumerate() {
            let row = &jacobian[k * d..(k + 1) * d];
            for (a, &ja) in row.iter().enumerate() {
                if ja == 0.0 {
                    continue;
                }
                g[a] += ja * rk;
                // column-major storage; H is symmetric so the layout only
                // matters for which triangle we touch, and we touch both
                for (b, &jb) in row.iter().enumerate() {
                    h[b * d + a] += ja * jb;
                }
            }
        }
        self.cost += eval.cost;
        if eval.active {
            self.active += 1;
        }
    }

    /// `‖g‖∞`
    pub fn gradient_norm_inf(&self) -> f64 {
        self.gradient.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Linearizes the listed blocks at `params` and adds them to `ne`, calling
/// `on_block(index, eval)` for each one.
pub fn accumulate<M, F>(
    ne: &mut NormalEquations,
    model: &M,
    indices: &[usize],
    params: &M::Params,
    mut on_block: F,
) -> Result<(), EvalError>
where
    M: ResidualModel,
    F: FnMut(usize, BlockEval),
{
    let p = model.residual_dim();
    let d = model.tangent_dim();
    let mut r = vec![0.0; p];
    let mut jac = vec![0.0; p * d];
    for &i in indices {
        let eval = model.linearize(i, params, &mut r, &mut jac)?;
        if !eval.cost.is_finite() {
            return Err(EvalError::NonFinite { index: i });
        }
        ne.add_block(&r, &jac, eval);
        on_block(i, eval);
    }
    Ok(())
}

/// Normal equations over `subset`. Passing every index gives the full
/// Gauss-Newton system.
pub fn build_normal_equations<M: ResidualModel>(
    model: &M,
    subset: &[usize],
    params: &M::Params,
) -> Result<NormalEquations, EvalError> {
    let n = model.num_residuals();
    if let Some(&bad) = subset.iter().find(|&&i| i >= n) {
        return Err(EvalError::OutOfRange { index: bad, len: n });
    }
    let mut ne = NormalEquations::zeros(model.tangent_dim());
    accumulate(&mut ne, model, subset, params, |_, _| {})?;
    Ok(ne)
}

/// Solves `(H + λI) Δθ = −g` by Cholesky factorization, with one round of
/// iterative refinement.
///
/// Returns [`SolveError::NotPositiveDefinite`] when the damped matrix cannot
/// be factored; callers respond by raising λ.
pub fn solve_damped_step(ne: &NormalEquations, lambda: f64) -> Result<DVector<f64>, SolveError> {
    let d = ne.dim();
    let mut a = ne.hessian.clone();
    for k in 0..d {
        a[(k, k)] += lambda;
    }
    let chol = a
        .clone()
        .cholesky()
        .ok_or(SolveError::NotPositiveDefinite { lambda })?;
    let rhs = -&ne.gradient;
    let mut step = chol.solve(&rhs);
    let correction = chol.solve(&(&rhs - &a * &step));
    step += correction;
    if step.iter().all(|v| v.is_finite()) {
        Ok(step)
    } else {
        Err(SolveError::NotPositiveDefinite { lambda })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FnModel;
    use approx::assert_relative_eq;

    #[test]
    fn identity_residual() {
        let m = FnModel::new(1, 1, 1, |_, t, r| r[0] = t[0], |_, _, j| j[0] = 1.0);
        let ne = build_normal_equations(&m, &[0], &DVector::from_vec(vec![2.0])).unwrap();
        assert_eq!(ne.gradient[0], 2.0);
        assert_eq!(ne.hessian[(0, 0)], 1.0);
        assert_eq!(ne.cost, 4.0);
    }

    #[test]
    fn zero_residuals_give_zero_gradient() {
        let m = FnModel::new(
            4,
            2,
            3,
            |_, _, r| r.fill(0.0),
            |i, _, j| {
                for (k, v) in j.iter_mut().enumerate() {
                    *v = (i * 7 + k) as f64 * 0.1;
                }
            },
        );
        let t = DVector::zeros(3);
        let ne = build_normal_equations(&m, &[0, 2, 3], &t).unwrap();
        assert!(ne.gradient.iter().all(|&v| v == 0.0));
        assert_eq!(ne.cost, 0.0);
        let mut expected = DMatrix::zeros(3, 3);
        for i in [0, 2, 3] {
            let j = DMatrix::from_fn(2, 3, |r, c| (i * 7 + r * 3 + c) as f64 * 0.1);
            expected += j.transpose() * j;
        }
        assert_relative_eq!(ne.hessian, expected, max_relative = 1e-14);
    }

    #[test]
    fn two_parameter_hand_assembly() {
        // r1 = θ1 - 1, r2 = 2 θ2 at θ = (0, 1)
        let m = FnModel::new(
            2,
            1,
            2,
            |i, t, r| r[0] = if i == 0 { t[0] - 1.0 } else { 2.0 * t[1] },
            |i, _, j| {
                if i == 0 {
                    j.copy_from_slice(&[1.0, 0.0]);
                } else {
                    j.copy_from_slice(&[0.0, 2.0]);
                }
            },
        );
        let t = DVector::from_vec(vec![0.0, 1.0]);
        let ne = build_normal_equations(&m, &[0, 1], &t).unwrap();
        // block 0: J = [1 0], r = -1 ; block 1: J = [0 2], r = 2
        assert_eq!(ne.gradient.as_slice(), &[-1.0, 4.0]);
        assert_eq!(ne.hessian, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]));
        assert_eq!(ne.cost, 5.0);
    }

    #[test]
    fn out_of_range_subset_is_rejected() {
        let m = FnModel::new(1, 1, 1, |_, t, r| r[0] = t[0], |_, _, j| j[0] = 1.0);
        let err = build_normal_equations(&m, &[1], &DVector::zeros(1)).unwrap_err();
        assert_eq!(err, EvalError::OutOfRange { index: 1, len: 1 });
    }

    #[test]
    fn damped_step_identity_hessian() {
        let mut ne = NormalEquations::zeros(3);
        ne.hessian = DMatrix::identity(3, 3);
        ne.gradient = DVector::from_vec(vec![0.5, -2.0, 3.0]);
        let step = solve_damped_step(&ne, 1e-15).unwrap();
        assert_relative_eq!(step, -&ne.gradient, max_relative = 1e-12);
    }

    #[test]
    fn damped_step_diagonal() {
        let mut ne = NormalEquations::zeros(2);
        ne.hessian = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        ne.gradient = DVector::from_vec(vec![1.0, 1.0]);
        let step = solve_damped_step(&ne, 1.0).unwrap();
        // (H + I)⁻¹ = diag(1/3, 1/5)
        assert_relative_eq!(step[0], -1.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(step[1], -1.0 / 5.0, max_relative = 1e-15);
    }

    #[test]
    fn heavy_damping_shrinks_step() {
        let mut ne = NormalEquations::zeros(2);
        ne.hessian = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        ne.gradient = DVector::from_vec(vec![4.0, -7.0]);
        let step = solve_damped_step(&ne, 1e12).unwrap();
        assert!(step.norm() <= 1e-9 * ne.gradient.norm());
    }

    #[test]
    fn indefinite_matrix_signals_failure() {
        let mut ne = NormalEquations::zeros(2);
        ne.hessian = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -5.0]);
        ne.gradient = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(
            solve_damped_step(&ne, 1.0),
            Err(SolveError::NotPositiveDefinite { .. })
        ));
    }
}
