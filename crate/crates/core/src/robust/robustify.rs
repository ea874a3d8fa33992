use crate::error::EvalError;
use crate::model::{squared_norm, BlockEval, ResidualModel};

use super::kernel::{KernelKind, RobustKernel};

/// A model whose block costs are `ψ(‖r_i‖)`.
///
/// Residuals and Jacobians are returned scaled by `√(2 w(‖r_i‖²))` with the
/// weight frozen at the evaluation point, so the normal equations assembled
/// from them are the IRLS system. Reported costs are always the robust ones.
/// With [`KernelKind::None`] the wrapper passes everything through unchanged.
#[derive(Debug, Clone)]
pub struct Robustified<M> {
    base: M,
    kernel: RobustKernel,
}

impl<M: ResidualModel> Robustified<M> {
    pub fn new(base: M, kernel: RobustKernel) -> Self {
        Self { base, kernel }
    }

    pub fn kernel(&self) -> RobustKernel {
        self.kernel
    }

    pub fn base(&self) -> &M {
        &self.base
    }

    pub fn into_base(self) -> M {
        self.base
    }

    /// Unweighted residual norm `‖r_i‖` of the base model.
    pub fn residual_norm(&self, index: usize, params: &M::Params) -> Result<Option<f64>, EvalError> {
        let mut r = vec![0.0; self.base.residual_dim()];
        let e = self.base.residual(index, params, &mut r)?;
        Ok(e.active.then(|| squared_norm(&r).sqrt()))
    }

    /// Mask of blocks with `‖r_i‖ < τ`; excluded blocks count as outliers.
    pub fn inlier_mask(&self, params: &M::Params) -> Result<Vec<bool>, EvalError> {
        (0..self.base.num_residuals())
            .map(|i| Ok(self.residual_norm(i, params)?.is_some_and(|r| self.kernel.is_inlier(r))))
            .collect()
    }

    fn reweight(&self, eval: BlockEval, residual: &mut [f64], jacobian: Option<&mut [f64]>) -> BlockEval {
        if !eval.active {
            return eval;
        }
        let s = squared_norm(residual);
        let scale = (2.0 * self.kernel.weight(s)).sqrt();
        residual.iter_mut().for_each(|v| *v *= scale);
        if let Some(j) = jacobian {
            j.iter_mut().for_each(|v| *v *= scale);
        }
        BlockEval::active(self.kernel.rho(s))
    }
}

impl<M: ResidualModel> ResidualModel for Robustified<M> {
    type Params = M::Params;

    fn num_residuals(&self) -> usize {
        self.base.num_residuals()
    }

    fn residual_dim(&self) -> usize {
        self.base.residual_dim()
    }

    fn tangent_dim(&self) -> usize {
        self.base.tangent_dim()
    }

    fn retract(&self, params: &Self::Params, delta: &[f64]) -> Self::Params {
        self.base.retract(params, delta)
    }

    fn residual(&self, index: usize, params: &Self::Params, residual: &mut [f64]) -> Result<BlockEval, EvalError> {
        let eval = self.base.residual(index, params, residual)?;
        if self.kernel.kind == KernelKind::None {
            return Ok(eval);
        }
        Ok(self.reweight(eval, residual, None))
    }

    fn linearize(
        &self,
        index: usize,
        params: &Self::Params,
        residual: &mut [f64],
        jacobian: &mut [f64],
    ) -> Result<BlockEval, EvalError> {
        let eval = self.base.linearize(index, params, residual, jacobian)?;
        if self.kernel.kind == KernelKind::None {
            return Ok(eval);
        }
        Ok(self.reweight(eval, residual, Some(jacobian)))
    }

    fn cost(&self, index: usize, params: &Self::Params) -> Result<f64, EvalError> {
        if self.kernel.kind == KernelKind::None {
            return self.base.cost(index, params);
        }
        let mut r = vec![0.0; self.base.residual_dim()];
        let eval = self.base.residual(index, params, &mut r)?;
        Ok(if eval.active { self.kernel.rho(squared_norm(&r)) } else { eval.cost })
    }

    fn cost_upper_bound(&self) -> Option<f64> {
        match self.kernel.upper_bound() {
            Some(b) => Some(b),
            None => self.base.cost_upper_bound(),
        }
    }

    fn smooth_piece(&self, index: usize, params: &Self::Params) -> u64 {
        self.base.smooth_piece(index, params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{total_cost, FnModel};
    use crate::normal::build_normal_equations;
    use nalgebra::{DMatrix, DVector};

    /// Line fit `r_i = θ0 + θ1 x_i − y_i`, every fifth point an outlier.
    fn line() -> impl ResidualModel<Params = DVector<f64>> {
        let data: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let x = i as f64 / 10.0;
                let y = 1.0 + 2.0 * x + if i % 5 == 0 { 7.0 } else { 0.05 * (i as f64).sin() };
                (x, y)
            })
            .collect();
        let d2 = data.clone();
        FnModel::new(
            40,
            1,
            2,
            move |i, t, r| r[0] = t[0] + t[1] * data[i].0 - data[i].1,
            move |i, _, j| {
                j[0] = 1.0;
                j[1] = d2[i].0;
            },
        )
    }

    #[test]
    fn none_is_identity() {
        let base = line();
        let wrapped = Robustified::new(line(), RobustKernel::none());
        let t = DVector::from_vec(vec![0.5, 1.5]);
        let all: Vec<usize> = (0..40).collect();
        let a = build_normal_equations(&base, &all, &t).unwrap();
        let b = build_normal_equations(&wrapped, &all, &t).unwrap();
        assert_eq!(a.gradient, b.gradient);
        assert_eq!(a.hessian, b.hessian);
        assert_eq!(a.cost, b.cost);
    }

    #[test]
    fn saturated_block_contributes_constant_cost_and_no_derivatives() {
        let k = RobustKernel::smooth_truncated(1.0);
        let wrapped = Robustified::new(line(), k);
        let t = DVector::from_vec(vec![1.0, 2.0]);
        let ne = build_normal_equations(&wrapped, &[0], &t).unwrap();
        assert_eq!(ne.cost, 0.25);
        assert!(ne.gradient.iter().all(|&v| v == 0.0));
        assert!(ne.hessian.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn total_cost_matches_direct_summation() {
        let k = RobustKernel::smooth_truncated(0.5);
        let wrapped = Robustified::new(line(), k);
        let base = line();
        let t = DVector::from_vec(vec![0.9, 2.05]);
        let mut direct = 0.0;
        for i in 0..40 {
            let mut r = [0.0];
            base.residual(i, &t, &mut r).unwrap();
            let u = r[0].abs() / 0.5;
            let inner = if u < 1.0 { 1.0 - u * u } else { 0.0 };
            direct += 0.0625 * (1.0 - inner * inner);
        }
        let got = total_cost(&wrapped, &t).unwrap();
        assert!((got - direct).abs() <= 1e-12 * direct);
    }

    #[test]
    fn normal_equations_are_weighted_sums() {
        let k = RobustKernel::smooth_truncated(0.8);
        let base = line();
        let wrapped = Robustified::new(line(), k);
        let t = DVector::from_vec(vec![1.1, 1.9]);
        let mut g = DVector::zeros(2);
        let mut h = DMatrix::zeros(2, 2);
        for i in 0..40 {
            let mut r = [0.0];
            let mut j = [0.0; 2];
            base.linearize(i, &t, &mut r, &mut j).unwrap();
            let w2 = 2.0 * k.weight(r[0] * r[0]);
            let jv = DVector::from_column_slice(&j);
            g += &jv * (w2 * r[0]);
            h += &jv * jv.transpose() * w2;
        }
        let all: Vec<usize> = (0..40).collect();
        let ne = build_normal_equations(&wrapped, &all, &t).unwrap();
        assert!((ne.gradient - g).amax() < 1e-12);
        assert!((ne.hessian - h).amax() < 1e-12);
    }

    #[test]
    fn inlier_classification() {
        let wrapped = Robustified::new(line(), RobustKernel::smooth_truncated(1.0));
        let mask = wrapped.inlier_mask(&DVector::from_vec(vec![1.0, 2.0])).unwrap();
        for (i, inlier) in mask.iter().enumerate() {
            assert_eq!(*inlier, i % 5 != 0);
        }
        assert_eq!(wrapped.cost_upper_bound(), Some(0.25));
    }
}
