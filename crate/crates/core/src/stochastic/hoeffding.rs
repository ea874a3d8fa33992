//! The sufficient-reduction test and the batch-growth rule.
//!
//! With `Z_k = max(a, Y_k) ∈ [a, b]` and `S_K = Σ Z_k`, Hoeffding's
//! inequality gives
//!
//! ```text
//! P(S_K − E[S_K] ≤ (1 − α) S_K) ≤ exp(−2 (1 − α)² S_K² / (K (b − a)²))
//! ```
//!
//! and requiring the right-hand side to be at most δ yields the acceptance
//! threshold implemented in [`hoeffding_threshold`].

use super::bounds::BoundEstimates;

/// Three-way classification of a step computed on a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    /// The batch cost did not decrease: reject and raise λ.
    Failure,
    /// The batch cost decreased but not by enough to certify the full cost:
    /// reject and grow the batch.
    Insufficient,
    /// Accept and lower λ.
    Success,
}

/// `−((b − a)/(1 − α)) · √(−K ln δ / 2)`. Returns 0 when `b ≤ a`.
pub fn hoeffding_threshold(k: usize, a: f64, b: f64, alpha: f64, delta: f64) -> f64 {
    let width = b - a;
    if !(width > 0.0) {
        return 0.0;
    }
    -(width / (1.0 - alpha)) * (-(k as f64) * delta.ln() / 2.0).sqrt()
}

/// Upper bound on the probability that the true mean change exceeds the
/// α-fraction of the observed one, `exp(−2(1−α)² S² / (K (b−a)²))`.
pub fn hoeffding_tail_bound(s_k: f64, k: usize, a: f64, b: f64, alpha: f64) -> f64 {
    let width = b - a;
    if !(width > 0.0) {
        return if s_k < 0.0 { 0.0 } else { 1.0 };
    }
    let t = (1.0 - alpha) * s_k;
    (-2.0 * t * t / (k as f64 * width * width)).exp()
}

/// Classifies an observed batch reduction `s_k` over a batch of `k` out of
/// `n` residuals.
///
/// At `k == n` the sample is the population, so the Hoeffding test is
/// replaced by the plain descent test `s_k < 0`.
pub fn sufficient_reduction_test(
    s_k: f64,
    k: usize,
    n: usize,
    bounds: &BoundEstimates,
    alpha: f64,
    delta: f64,
) -> StepOutcome {
    if !(s_k < 0.0) {
        return StepOutcome::Failure;
    }
    if k >= n {
        return StepOutcome::Success;
    }
    if s_k <= hoeffding_threshold(k, bounds.a, bounds.b, alpha, delta) {
        StepOutcome::Success
    } else {
        StepOutcome::Insufficient
    }
}

/// Smallest batch size the growth rule ever returns: `min(n, max(k + 1, ⌈1.1 k⌉))`.
pub fn growth_floor(k: usize, n: usize) -> usize {
    let ten_percent = (11 * k).div_ceil(10);
    n.min((k + 1).max(ten_percent))
}

/// New batch size after an insufficient reduction:
///
/// ```text
/// K⁺ = min(N, ⌈−K² (b − a)² ln δ / (2 S² (1 − α)²)⌉)
/// ```
///
/// raised to at least [`growth_floor`] so the batch always grows.
///
/// # Panics
///
/// If `reduction` is not negative; a non-negative reduction is a failure
/// and never grows the batch.
pub fn next_batch_size(
    k: usize,
    reduction: f64,
    bounds: &BoundEstimates,
    alpha: f64,
    delta: f64,
    n: usize,
) -> usize {
    assert!(reduction < 0.0, "batch growth requires a negative reduction, got {reduction}");
    let width = (bounds.b - bounds.a).max(0.0);
    let k_f = k as f64;
    let estimate = -k_f * k_f * width * width * delta.ln()
        / (2.0 * reduction * reduction * (1.0 - alpha) * (1.0 - alpha));
    let from_formula = if estimate.is_finite() && estimate < n as f64 {
        estimate.ceil() as usize
    } else {
        n
    };
    from_formula.min(n).max(growth_floor(k, n))
}

/// Per-step confidence `δ = 1 − (1 − η₀)^{1/T_S}` such that `T_S` steps all
/// succeed with probability `1 − η₀`.
pub fn confidence_from_failure_rate(steps: usize, failure_rate: f64) -> f64 {
    assert!(steps >= 1, "at least one step is required");
    // 1 - exp(ln(1-η₀)/T) without cancellation
    -((-failure_rate).ln_1p() / steps as f64).exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastic::bounds::BoundSource;

    fn unit_width() -> BoundEstimates {
        BoundEstimates {
            a: -0.5,
            b: 0.5,
            source: BoundSource::UserSupplied,
        }
    }

    #[test]
    fn threshold_closed_form() {
        // −10 · √(100 · ln 10 / 2)
        let t = hoeffding_threshold(100, -0.5, 0.5, 0.9, 0.1);
        let expected = -10.0 * (50.0 * std::f64::consts::LN_10).sqrt();
        assert!((t - expected).abs() <= 1e-12 * expected.abs());
        assert!((t + 107.298).abs() < 1e-3);
    }

    #[test]
    fn threshold_with_zero_margin() {
        let t = hoeffding_threshold(40, -2.0, 1.0, 0.0, 0.05);
        assert!((t + 3.0 * (-40.0 * 0.05f64.ln() / 2.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn threshold_vanishes_as_confidence_drops() {
        let t = hoeffding_threshold(1000, -1.0, 1.0, 0.9, 1.0 - 1e-12);
        assert!(t < 0.0 && t > -1e-3);
    }

    #[test]
    fn degenerate_width_gives_zero_threshold() {
        assert_eq!(hoeffding_threshold(10, 1.0, 1.0, 0.5, 0.1), 0.0);
    }

    #[test]
    fn three_way_outcomes() {
        let b = unit_width();
        assert_eq!(sufficient_reduction_test(2.0, 100, 1000, &b, 0.9, 0.1), StepOutcome::Failure);
        assert_eq!(sufficient_reduction_test(0.0, 100, 1000, &b, 0.9, 0.1), StepOutcome::Failure);
        assert_eq!(sufficient_reduction_test(-120.0, 100, 1000, &b, 0.9, 0.1), StepOutcome::Success);
        assert_eq!(
            sufficient_reduction_test(-50.0, 100, 1000, &b, 0.9, 0.1),
            StepOutcome::Insufficient
        );
        assert_eq!(sufficient_reduction_test(-1e-9, 100, 100, &b, 0.9, 0.1), StepOutcome::Success);
    }

    #[test]
    fn batch_growth_formula() {
        // ⌈100² · ln 10 / (2 · 2500 · 0.01)⌉ = ⌈460.517⌉
        assert_eq!(next_batch_size(100, -50.0, &unit_width(), 0.9, 0.1, 10_000), 461);
        assert_eq!(next_batch_size(100, -50.0, &unit_width(), 0.9, 0.1, 300), 300);
    }

    #[test]
    fn growth_floor_engages_near_threshold() {
        let thr = hoeffding_threshold(100, -0.5, 0.5, 0.9, 0.1);
        let k = next_batch_size(100, thr * (1.0 - 1e-9), &unit_width(), 0.9, 0.1, 10_000);
        assert_eq!(k, 110);
        assert_eq!(growth_floor(5, 100), 6);
        assert_eq!(growth_floor(100, 105), 105);
        assert_eq!(growth_floor(100, 100), 100);
    }

    #[test]
    #[should_panic]
    fn zero_reduction_is_not_a_growth_case() {
        next_batch_size(10, 0.0, &unit_width(), 0.9, 0.1, 100);
    }

    #[test]
    fn footnote_confidence() {
        let d = confidence_from_failure_rate(100, 1e-4);
        assert!((d - 1.000_049_503_283_745_5e-6).abs() <= 1e-10 * d);
        assert!((confidence_from_failure_rate(1, 0.25) - 0.25).abs() < 1e-16);
        assert!((confidence_from_failure_rate(10, 0.1) - 0.010_480_741_793_785_607).abs() < 1e-15);
    }
}
