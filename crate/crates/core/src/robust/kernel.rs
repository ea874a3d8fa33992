use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// `ψ(r) = (τ²/4)(1 − max(0, 1 − r²/τ²)²)`.
    SmoothTruncated,
    /// `ψ(r) = τ² r² / (τ² + r²)`.
    GemanMcClure,
    /// `ψ(r) = τ² (1 − exp(−r²/τ²))`.
    Welsch,
    /// `ψ(r) = r²`.
    None,
}

impl KernelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::SmoothTruncated => "smooth-truncated",
            KernelKind::GemanMcClure => "geman-mcclure",
            KernelKind::Welsch => "welsch",
            KernelKind::None => "none",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "smooth-truncated" | "smooth-truncated-quadratic" | "stq" => Ok(KernelKind::SmoothTruncated),
            "geman-mcclure" | "gm" => Ok(KernelKind::GemanMcClure),
            "welsch" => Ok(KernelKind::Welsch),
            "none" => Ok(KernelKind::None),
            other => Err(format!("unknown kernel `{other}`")),
        }
    }
}

/// A robust kernel `ψ` applied to residual norms, with scale `τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustKernel {
    pub kind: KernelKind,
    pub tau: f64,
}

impl RobustKernel {
    pub fn new(kind: KernelKind, tau: f64) -> Self {
        assert!(tau > 0.0 && tau.is_finite(), "kernel scale must be positive, got {tau}");
        Self { kind, tau }
    }

    pub fn smooth_truncated(tau: f64) -> Self {
        Self::new(KernelKind::SmoothTruncated, tau)
    }

    pub fn none() -> Self {
        Self { kind: KernelKind::None, tau: 1.0 }
    }

    /// Same kernel at scale `τ · factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { kind: self.kind, tau: self.tau * factor }
    }

    /// `ψ(r)` for a residual norm `r ≥ 0`.
    pub fn value(&self, r: f64) -> f64 {
        self.rho(r * r)
    }

    /// `ρ(s) = ψ(√s)` for a squared norm `s ≥ 0`.
    pub fn rho(&self, s: f64) -> f64 {
        let t2 = self.tau * self.tau;
        match self.kind {
            KernelKind::SmoothTruncated => {
                let u = (1.0 - s / t2).max(0.0);
                0.25 * t2 * (1.0 - u * u)
            }
            KernelKind::GemanMcClure => t2 * s / (t2 + s),
            KernelKind::Welsch => -t2 * (-s / t2).exp_m1(),
            KernelKind::None => s,
        }
    }

    /// IRLS weight `w(s) = ρ'(s)`.
    pub fn weight(&self, s: f64) -> f64 {
        let t2 = self.tau * self.tau;
        match self.kind {
            KernelKind::SmoothTruncated => 0.5 * (1.0 - s / t2).max(0.0),
            KernelKind::GemanMcClure => {
                let q = t2 + s;
                t2 * t2 / (q * q)
            }
            KernelKind::Welsch => (-s / t2).exp(),
            KernelKind::None => 1.0,
        }
    }

    /// `sup ψ`, if finite.
    pub fn upper_bound(&self) -> Option<f64> {
        let t2 = self.tau * self.tau;
        match self.kind {
            KernelKind::SmoothTruncated => Some(0.25 * t2),
            KernelKind::GemanMcClure | KernelKind::Welsch => Some(t2),
            KernelKind::None => None,
        }
    }

    /// Whether a residual of norm `r` is classified as an inlier (`r < τ`).
    pub fn is_inlier(&self, r: f64) -> bool {
        r < self.tau
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn smooth_truncated_values() {
        let k = RobustKernel::smooth_truncated(1.0);
        assert_eq!(k.value(0.5), 7.0 / 64.0);
        assert_eq!(k.value(0.0), 0.0);
        let k2 = RobustKernel::smooth_truncated(2.0);
        assert_eq!(k2.value(2.0), 1.0);
        assert_eq!(k2.value(30.0), 1.0);
        assert_eq!(k2.upper_bound(), Some(1.0));
    }

    #[test]
    fn smooth_truncated_weights() {
        let k = RobustKernel::smooth_truncated(1.0);
        assert_eq!(k.weight(0.25), 0.375);
        assert_eq!(k.weight(0.0), 0.5);
        assert_eq!(k.weight(1.0), 0.0);
        assert_eq!(k.weight(7.0), 0.0);
    }

    #[test]
    fn other_kernels() {
        let gm = RobustKernel::new(KernelKind::GemanMcClure, 2.0);
        assert!((gm.value(2.0) - 2.0).abs() < 1e-15);
        let w = RobustKernel::new(KernelKind::Welsch, 1.0);
        assert!((w.value(1.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        assert_eq!(RobustKernel::none().value(3.0), 9.0);
        assert_eq!(RobustKernel::none().upper_bound(), None);
    }

    #[test]
    fn names_round_trip() {
        for k in [KernelKind::SmoothTruncated, KernelKind::GemanMcClure, KernelKind::Welsch, KernelKind::None] {
            assert_eq!(k.as_str().parse::<KernelKind>().unwrap(), k);
        }
        assert!("huber".parse::<KernelKind>().is_err());
    }

    fn kinds() -> impl Strategy<Value = KernelKind> {
        prop_oneof![
            Just(KernelKind::SmoothTruncated),
            Just(KernelKind::GemanMcClure),
            Just(KernelKind::Welsch),
        ]
    }

    proptest! {
        #[test]
        fn bounded_and_monotone(kind in kinds(), tau in 0.01f64..100.0, r in 0.0f64..1e3, dr in 0.0f64..10.0) {
            let k = RobustKernel::new(kind, tau);
            let sup = k.upper_bound().unwrap();
            let v = k.value(r);
            prop_assert!(v >= 0.0 && v <= sup * (1.0 + 1e-15));
            prop_assert!(k.value(r + dr) >= v);
        }

        #[test]
        fn weight_is_derivative(kind in kinds(), tau in 0.1f64..10.0, frac in 0.0f64..4.0) {
            let k = RobustKernel::new(kind, tau);
            let s = frac * tau * tau;
            let h = 1e-7 * (1.0 + s);
            let near_kink = (s - tau * tau).abs() < (2.0 * h).max(1e-6);
            prop_assume!(!near_kink || kind != KernelKind::SmoothTruncated);
            let lo = (s - h).max(0.0);
            let fd = (k.rho(s + h) - k.rho(lo)) / (s + h - lo);
            let w = k.weight(s);
            let scale = w.abs().max(1e-3 * k.weight(0.0));
            prop_assert!((fd - w).abs() <= 1e-6 * scale, "fd {fd} w {w}");
        }
    }
}
