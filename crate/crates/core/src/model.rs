//! The residual-model contract shared by every solver in the crate.
//!
//! A model exposes `N` residual blocks `r_i(θ) ∈ R^p` over a parameter
//! object with a local update `θ ⊞ Δθ`, `Δθ ∈ R^d`. Jacobians are taken with
//! respect to that local update at `Δθ = 0`, which lets manifold-valued
//! parameters (rotations, unit vectors, homographies) share one interface
//! with plain vectors.

use nalgebra::DVector;

use crate::error::EvalError;

/// Outcome of evaluating one residual block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockEval {
    /// The block's contribution `f_i(θ)` to the objective.
    pub cost: f64,
    /// `false` when the block is excluded at this parameter value (e.g. a
    /// pixel warped out of the target image). Excluded blocks report zero
    /// residual, zero Jacobian and zero cost.
    pub active: bool,
}

impl BlockEval {
    pub fn active(cost: f64) -> Self {
        Self { cost, active: true }
    }

    pub fn excluded() -> Self {
        Self {
            cost: 0.0,
            active: false,
        }
    }
}

/// A sum-of-residuals objective `f(θ) = Σ_i f_i(θ)`.
///
/// Implementations must be deterministic and free of side effects so that a
/// single model can be shared read-only between concurrent solver runs.
pub trait ResidualModel: Sync {
    type Params: Clone + Send + Sync + std::fmt::Debug;

    /// Number of residual blocks `N`.
    fn num_residuals(&self) -> usize;

    /// Length `p` of every residual block.
    fn residual_dim(&self) -> usize;

    /// Dimension `d` of the local update.
    fn tangent_dim(&self) -> usize;

    /// Local update `θ ⊞ Δθ`.
    fn retract(&self, params: &Self::Params, delta: &[f64]) -> Self::Params;

    /// Writes `r_i(θ)` into `residual` (length `p`).
    fn residual(
        &self,
        index: usize,
        params: &Self::Params,
        residual: &mut [f64],
    ) -> Result<BlockEval, EvalError>;

    /// Writes `r_i(θ)` and the row-major `p × d` Jacobian `∂r_i/∂Δθ`.
    fn linearize(
        &self,
        index: usize,
        params: &Self::Params,
        residual: &mut [f64],
        jacobian: &mut [f64],
    ) -> Result<BlockEval, EvalError>;

    /// Per-block cost `f_i(θ)`.
    fn cost(&self, index: usize, params: &Self::Params) -> Result<f64, EvalError> {
        let mut r = vec![0.0; self.residual_dim()];
        Ok(self.residual(index, params, &mut r)?.cost)
    }

    /// Known upper bound on any single `f_i`, when the model has one (for
    /// example a saturating robust kernel).
    fn cost_upper_bound(&self) -> Option<f64> {
        None
    }

    /// Identifier of the smooth piece the block is evaluated on. Models whose
    /// residuals are only piecewise smooth (bilinear image sampling) return
    /// different ids on different pieces so derivative checks can skip kinks.
    fn smooth_piece(&self, _index: usize, _params: &Self::Params) -> u64 {
        0
    }
}

impl<M: ResidualModel + ?Sized> ResidualModel for &M {
    type Params = M::Params;

    fn num_residuals(&self) -> usize {
        (**self).num_residuals()
    }

    fn residual_dim(&self) -> usize {
        (**self).residual_dim()
    }

    fn tangent_dim(&self) -> usize {
        (**self).tangent_dim()
    }

    fn retract(&self, params: &Self::Params, delta: &[f64]) -> Self::Params {
        (**self).retract(params, delta)
    }

    fn residual(&self, index: usize, params: &Self::Params, residual: &mut [f64]) -> Result<BlockEval, EvalError> {
        (**self).residual(index, params, residual)
    }

    fn linearize(
        &self,
        index: usize,
        params: &Self::Params,
        residual: &mut [f64],
        jacobian: &mut [f64],
    ) -> Result<BlockEval, EvalError> {
        (**self).linearize(index, params, residual, jacobian)
    }

    fn cost(&self, index: usize, params: &Self::Params) -> Result<f64, EvalError> {
        (**self).cost(index, params)
    }

    fn cost_upper_bound(&self) -> Option<f64> {
        (**self).cost_upper_bound()
    }

    fn smooth_piece(&self, index: usize, params: &Self::Params) -> u64 {
        (**self).smooth_piece(index, params)
    }
}

/// Squared Euclidean norm, the default `f_i = ‖r_i‖²`.
#[inline]
pub fn squared_norm(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

pub(crate) fn check_finite(index: usize, values: &[f64]) -> Result<(), EvalError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(EvalError::NonFinite { index })
    }
}

/// Total cost `Σ_i f_i(θ)` over every block, summed in index order.
pub fn total_cost<M: ResidualModel>(model: &M, params: &M::Params) -> Result<f64, EvalError> {
    let mut sum = 0.0;
    for i in 0..model.num_residuals() {
        sum += model.cost(i, params)?;
    }
    Ok(sum)
}

/// Adapter for models whose parameters are a plain vector with additive
/// update, built from closures. Mostly useful for tests and small problems.
pub struct FnModel<R, J>
where
    R: Fn(usize, &DVector<f64>, &mut [f64]) + Sync,
    J: Fn(usize, &DVector<f64>, &mut [f64]) + Sync,
{
    n: usize,
    p: usize,
    d: usize,
    residual: R,
    jacobian: J,
}

impl<R, J> FnModel<R, J>
where
    R: Fn(usize, &DVector<f64>, &mut [f64]) + Sync,
    J: Fn(usize, &DVector<f64>, &mut [f64]) + Sync,
{
    /// `residual(i, θ, out)` fills `r_i`; `jacobian(i, θ, out)` fills the
    /// row-major `p × d` Jacobian.
    pub fn new(n: usize, p: usize, d: usize, residual: R, jacobian: J) -> Self {
        Self {
            n,
            p,
            d,
            residual,
            jacobian,
        }
    }
}

impl<R, J> ResidualModel for FnModel<R, J>
where
    R: Fn(usize, &DVector<f64>, &mut [f64]) + Sync,
    J: Fn(usize, &DVector<f64>, &mut [f64]) + Sync,
{
    type Params = DVector<f64>;

    fn num_residuals(&self) -> usize {
        self.n
    }

    fn residual_dim(&self) -> usize {
        self.p
    }

    fn tangent_dim(&self) -> usize {
        self.d
    }

    fn retract(&self, params: &DVector<f64>, delta: &[f64]) -> DVector<f64> {
        params + DVector::from_column_slice(delta)
    }

    fn residual(
        &self,
        index: usize,
        params: &DVector<f64>,
        residual: &mut [f64],
    ) -> Result<BlockEval, EvalError> {
        if index >= self.n {
            return Err(EvalError::OutOfRange {
                index,
                len: self.n,
            });
        }
        (self.residual)(index, params, residual);
        check_finite(index, residual)?;
        Ok(BlockEval::active(squared_norm(residual)))
    }

    fn linearize(
        &self,
        index: usize,
        params: &DVector<f64>,
        residual: &mut [f64],
        jacobian: &mut [f64],
    ) -> Result<BlockEval, EvalError> {
        let eval = self.residual(index, params, residual)?;
        (self.jacobian)(index, params, jacobian);
        check_finite(index, jacobian)?;
        Ok(eval)
    }
}

/// Result of comparing analytic Jacobians with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianCheck {
    /// Largest component-wise error, relative to the larger of the two
    /// compared entries and the block's largest Jacobian entry.
    pub max_rel_error: f64,
    /// Number of compared Jacobian entries.
    pub compared: usize,
    /// Entries skipped because the difference stencil crossed a kink.
    pub skipped: usize,
}

/// Central-difference check of `linearize` along every tangent direction,
/// using `θ ⊞ (±h e_j)` with `h = step`.
pub fn check_jacobian<M: ResidualModel>(
    model: &M,
    params: &M::Params,
    indices: &[usize],
    step: f64,
) -> Result<JacobianCheck, EvalError> {
    let p = model.residual_dim();
    let d = model.tangent_dim();
    let mut r = vec![0.0; p];
    let mut jac = vec![0.0; p * d];
    let mut r_plus = vec![0.0; p];
    let mut r_minus = vec![0.0; p];
    let mut delta = vec![0.0; d];

    let mut stencil = Vec::with_capacity(d);
    for j in 0..d {
        delta.fill(0.0);
        delta[j] = step;
        let plus = model.retract(params, &delta);
        delta[j] = -step;
        let minus = model.retract(params, &delta);
        stencil.push((plus, minus));
    }

    let mut check = JacobianCheck {
        max_rel_error: 0.0,
        compared: 0,
        skipped: 0,
    };
    for &i in indices {
        let eval = model.linearize(i, params, &mut r, &mut jac)?;
        let piece = model.smooth_piece(i, params);
        let scale = jac.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (j, (plus, minus)) in stencil.iter().enumerate() {
            let e_plus = model.residual(i, plus, &mut r_plus)?;
            let e_minus = model.residual(i, minus, &mut r_minus)?;
            let same_piece = model.smooth_piece(i, plus) == piece
                && model.smooth_piece(i, minus) == piece
                && e_plus.active == eval.active
                && e_minus.active == eval.active;
            if !same_piece {
                check.skipped += p;
                continue;
            }
            for k in 0..p {
                let numeric = (r_plus[k] - r_minus[k]) / (2.0 * step);
                let analytic = jac[k * d + j];
                let denom = analytic.abs().max(numeric.abs()).max(scale);
                if denom > 0.0 {
                    let err = (analytic - numeric).abs() / denom;
                    check.max_rel_error = check.max_rel_error.max(err);
                }
                check.compared += 1;
            }
        }
    }
    Ok(check)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic() -> impl ResidualModel<Params = DVector<f64>> {
        FnModel::new(
            3,
            1,
            2,
            |i, t, r| r[0] = (i as f64 + 1.0) * t[0] * t[0] - t[1],
            |i, t, j| {
                j[0] = 2.0 * (i as f64 + 1.0) * t[0];
                j[1] = -1.0;
            },
        )
    }

    #[test]
    fn residual_and_linearize_agree() {
        let m = quadratic();
        let t = DVector::from_vec(vec![0.3, -1.2]);
        let mut a = [0.0];
        let mut b = [0.0];
        let mut j = [0.0; 2];
        for i in 0..3 {
            let ea = m.residual(i, &t, &mut a).unwrap();
            let eb = m.linearize(i, &t, &mut b, &mut j).unwrap();
            assert_eq!(a, b);
            assert_eq!(ea, eb);
        }
    }

    #[test]
    fn finite_difference_check_passes_for_correct_jacobian() {
        let m = quadratic();
        let t = DVector::from_vec(vec![0.7, 2.0]);
        let check = check_jacobian(&m, &t, &[0, 1, 2], 1e-6).unwrap();
        assert!(check.max_rel_error < 1e-8, "{check:?}");
        assert_eq!(check.compared, 6);
    }

    #[test]
    fn finite_difference_check_detects_wrong_jacobian() {
        let m = FnModel::new(
            1,
            1,
            1,
            |_, t, r| r[0] = t[0] * t[0],
            |_, t, j| j[0] = t[0],
        );
        let t = DVector::from_vec(vec![1.0]);
        let check = check_jacobian(&m, &t, &[0], 1e-6).unwrap();
        assert!(check.max_rel_error > 0.4);
    }

    #[test]
    fn non_finite_residual_reports_index() {
        let m = FnModel::new(2, 1, 1, |i, _, r| r[0] = if i == 1 { f64::NAN } else { 0.0 }, |_, _, j| j[0] = 1.0);
        let t = DVector::from_vec(vec![0.0]);
        assert_eq!(
            m.cost(1, &t).unwrap_err(),
            EvalError::NonFinite { index: 1 }
        );
        assert!(total_cost(&m, &t).is_err());
    }
}
