//! Clamped reduction statistic and the estimation of its range `[a, b]`.

use crate::error::EvalError;
use crate::model::ResidualModel;

use super::hoeffding::hoeffding_threshold;

/// Lower clamp returned when no observed change is negative.
pub const DEGENERATE_LOWER_BOUND: f64 = -1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSource {
    RobustKernelRange,
    LipschitzEstimate,
    UserSupplied,
}

/// Range `[a, b]` bracketing the clamped changes `Z_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundEstimates {
    pub a: f64,
    pub b: f64,
    pub source: BoundSource,
}

impl BoundEstimates {
    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    /// `b ≤ a`: the Hoeffding threshold collapses to 0.
    pub fn is_degenerate(&self) -> bool {
        !(self.b > self.a)
    }
}

/// Summary of the per-residual changes `Y_k` over a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionStats {
    /// The clamp `a`.
    pub clamp: f64,
    /// `S_K = Σ max(a, Y_k)`.
    pub clamped_sum: f64,
    /// `Σ Y_k`.
    pub raw_sum: f64,
    pub count: usize,
}

impl ReductionStats {
    pub fn from_changes(changes: &[f64], clamp: f64) -> Self {
        let mut clamped_sum = 0.0;
        let mut raw_sum = 0.0;
        for &y in changes {
            clamped_sum += y.max(clamp);
            raw_sum += y;
        }
        Self {
            clamp,
            clamped_sum,
            raw_sum,
            count: changes.len(),
        }
    }
}

/// Evaluates `Y_k = f_i(θ_new) − f_i(θ_old)` for every `i` in `batch`.
pub fn cost_changes<M: ResidualModel>(
    model: &M,
    batch: &[usize],
    old: &M::Params,
    new: &M::Params,
) -> Result<Vec<f64>, EvalError> {
    batch
        .iter()
        .map(|&i| {
            let change = model.cost(i, new)? - model.cost(i, old)?;
            if change.is_finite() {
                Ok(change)
            } else {
                Err(EvalError::NonFinite { index: i })
            }
        })
        .collect()
}

/// `S_K = Σ_{i ∈ batch} max(a, f_i(θ_new) − f_i(θ_old))`.
pub fn clamped_reduction<M: ResidualModel>(
    model: &M,
    batch: &[usize],
    old: &M::Params,
    new: &M::Params,
    clamp: f64,
) -> Result<ReductionStats, EvalError> {
    assert!(clamp <= 0.0, "the clamp must be non-positive");
    let changes = cost_changes(model, batch, old, new)?;
    Ok(ReductionStats::from_changes(&changes, clamp))
}

/// Picks the clamp `a` among the observed negative changes.
///
/// Every candidate `a = Y_k < 0` with `S_K(a) < 0` is scored by
/// `S_K(a) − threshold(K, a, b)`; the smallest score (the candidate closest to
/// passing, or passing by the widest margin) wins and ties go to the larger
/// `a`. Returns [`DEGENERATE_LOWER_BOUND`] when no change is negative.
pub fn estimate_lower_bound_a(changes: &[f64], b: f64, alpha: f64, delta: f64) -> f64 {
    let mut sorted: Vec<f64> = changes.iter().copied().filter(|y| y.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let k = changes.len();
    let negatives = sorted.partition_point(|&y| y < 0.0);
    if negatives == 0 {
        return DEGENERATE_LOWER_BOUND;
    }

    // suffix[m] = Σ_{j ≥ m} sorted[j]
    let mut suffix = vec![0.0; sorted.len() + 1];
    for m in (0..sorted.len()).rev() {
        suffix[m] = suffix[m + 1] + sorted[m];
    }

    let mut best: Option<(f64, f64)> = None; // (score, a)
    let mut m = 0;
    while m < negatives {
        let a = sorted[m];
        // all entries equal to a are clamped to a as well
        let mut end = m + 1;
        while end < sorted.len() && sorted[end] == a {
            end += 1;
        }
        let s = end as f64 * a + suffix[end];
        if s < 0.0 {
            let score = s - hoeffding_threshold(k, a, b, alpha, delta);
            best = match best {
                None => Some((score, a)),
                Some((bs, ba)) => {
                    let tol = 1e-12 * bs.abs().max(score.abs());
                    if score < bs - tol || ((score - bs).abs() <= tol && a > ba) {
                        Some((score, a))
                    } else {
                        Some((bs, ba))
                    }
                }
            };
        }
        m = end;
    }
    best.map_or(sorted[0], |(_, a)| a)
}

/// Where the upper bound comes from when estimating `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UpperBoundSource {
    /// Known range of each `f_i`; `b` equals the range's upper end.
    KernelRange(f64),
    /// Lipschitz estimate from the sampled changes, inflated by `safety`.
    Lipschitz { safety: f64 },
    Fixed(f64),
}

/// Upper bound `b` on the per-residual change.
///
/// In Lipschitz mode `L_f = max |Y_k| / ‖Δθ‖` and `b = L_f ‖Δθ‖`, which is
/// simply the largest sampled `|Y_k|`. When nothing changed, `previous` is
/// reused if available.
pub fn estimate_upper_bound_b(
    source: UpperBoundSource,
    changes: &[f64],
    previous: Option<f64>,
) -> (f64, BoundSource) {
    match source {
        UpperBoundSource::KernelRange(b) => (b, BoundSource::RobustKernelRange),
        UpperBoundSource::Fixed(b) => (b, BoundSource::UserSupplied),
        UpperBoundSource::Lipschitz { safety } => {
            let largest = changes.iter().fold(0.0f64, |m, y| m.max(y.abs()));
            let b = if largest > 0.0 {
                largest * safety
            } else {
                previous.unwrap_or(0.0)
            };
            (b, BoundSource::LipschitzEstimate)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_inactive() {
        let s = ReductionStats::from_changes(&[-0.5, 0.2, -0.1], -1.0);
        assert_eq!(s.clamped_sum, s.raw_sum);
    }

    #[test]
    fn clamp_active() {
        let s = ReductionStats::from_changes(&[-5.0], -1.0);
        assert_eq!(s.clamped_sum, -1.0);
        assert_eq!(s.raw_sum, -5.0);
    }

    #[test]
    fn clamp_mixed() {
        let s = ReductionStats::from_changes(&[-3.0, 0.5, -0.2], -1.0);
        assert!((s.clamped_sum - (-0.7)).abs() < 1e-15);
        assert!(s.clamped_sum >= s.raw_sum);
        assert!(s.clamped_sum >= 3.0 * s.clamp);
    }

    #[test]
    fn single_candidate() {
        let ys = [-10.0];
        let a = estimate_lower_bound_a(&ys, 10.0, 0.9, 0.1);
        assert_eq!(a, -10.0);
        assert_eq!(ReductionStats::from_changes(&ys, a).clamped_sum, -10.0);
    }

    #[test]
    fn outlier_candidate_choice_matches_exhaustive_scoring() {
        let ys = [-100.0, -1.0, -1.0];
        let b = 1.0;
        let score = |a: f64| {
            ReductionStats::from_changes(&ys, a).clamped_sum
                - hoeffding_threshold(3, a, b, 0.9, 0.1)
        };
        // a = −1: S = −3, width 2; a = −100: S = −102, width 101
        assert_eq!(ReductionStats::from_changes(&ys, -1.0).clamped_sum, -3.0);
        assert_eq!(ReductionStats::from_changes(&ys, -100.0).clamped_sum, -102.0);
        let expected = if score(-1.0) <= score(-100.0) { -1.0 } else { -100.0 };
        assert_eq!(estimate_lower_bound_a(&ys, b, 0.9, 0.1), expected);
    }

    #[test]
    fn equal_changes_tie_break() {
        let ys = [-2.0; 6];
        assert_eq!(estimate_lower_bound_a(&ys, 2.0, 0.9, 0.1), -2.0);
    }

    #[test]
    fn no_negative_change_is_degenerate() {
        assert_eq!(estimate_lower_bound_a(&[0.0, 1.0], 1.0, 0.9, 0.1), DEGENERATE_LOWER_BOUND);
    }

    #[test]
    fn upper_bound_modes() {
        assert_eq!(
            estimate_upper_bound_b(UpperBoundSource::KernelRange(1.0), &[5.0], None),
            (1.0, BoundSource::RobustKernelRange)
        );
        let (b, src) = estimate_upper_bound_b(
            UpperBoundSource::Lipschitz { safety: 1.0 },
            &[0.1, -0.7, 0.3],
            None,
        );
        assert_eq!((b, src), (0.7, BoundSource::LipschitzEstimate));
        let (b, _) =
            estimate_upper_bound_b(UpperBoundSource::Lipschitz { safety: 1.0 }, &[0.0, 0.0], None);
        assert_eq!(b, 0.0);
        let (b, _) = estimate_upper_bound_b(
            UpperBoundSource::Lipschitz { safety: 1.0 },
            &[0.0],
            Some(0.25),
        );
        assert_eq!(b, 0.25);
    }
}
