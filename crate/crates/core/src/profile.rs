//! Performance profiles over the final costs of a set of runs.

use std::io::{self, Write};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfilePoint {
    pub tau: f64,
    /// Fraction of runs with final cost `≤ τ f*`.
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProfileError {
    #[error("no run has a finite final cost")]
    Empty,
    #[error("profile ratios must be at least 1, got {0}")]
    InvalidTau(f64),
}

/// `ρ(τ)` with `f*` the smallest finite cost among `costs`. Runs with
/// non-finite costs count in the denominator but never reach any ratio.
pub fn performance_profile(costs: &[f64], taus: &[f64]) -> Result<Vec<ProfilePoint>, ProfileError> {
    let best = costs
        .iter()
        .copied()
        .filter(|c| c.is_finite())
        .fold(None, |m: Option<f64>, c| Some(m.map_or(c, |m| m.min(c))))
        .ok_or(ProfileError::Empty)?;
    performance_profile_against(costs, best, taus)
}

/// Profile against a given reference cost `f*`, e.g. the best over several
/// methods.
pub fn performance_profile_against(costs: &[f64], best: f64, taus: &[f64]) -> Result<Vec<ProfilePoint>, ProfileError> {
    if !costs.iter().any(|c| c.is_finite()) {
        return Err(ProfileError::Empty);
    }
    taus.iter()
        .map(|&tau| {
            if !(tau >= 1.0) {
                return Err(ProfileError::InvalidTau(tau));
            }
            let hits = costs.iter().filter(|&&c| c.is_finite() && c <= tau * best).count();
            Ok(ProfilePoint {
                tau,
                rho: hits as f64 / costs.len() as f64,
            })
        })
        .collect()
}

/// `count` ratios spaced geometrically from 1 to `max`.
pub fn tau_grid(max: f64, count: usize) -> Vec<f64> {
    assert!(max >= 1.0 && count >= 2);
    (0..count)
        .map(|k| if k + 1 == count { max } else { max.powf(k as f64 / (count - 1) as f64) })
        .collect()
}

pub fn write_profile_csv<W: Write>(mut out: W, points: &[ProfilePoint]) -> io::Result<()> {
    writeln!(out, "tau,rho")?;
    for p in points {
        writeln!(out, "{},{}", p.tau, p.rho)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counting_examples() {
        let p = performance_profile(&[1.0, 1.05, 2.0], &[1.1]).unwrap();
        assert_eq!(p[0].rho, 2.0 / 3.0);
        assert_eq!(performance_profile(&[3.5], &[1.0]).unwrap()[0].rho, 1.0);
    }

    #[test]
    fn errors() {
        assert_eq!(performance_profile(&[f64::NAN, f64::INFINITY], &[1.0]), Err(ProfileError::Empty));
        assert_eq!(performance_profile(&[], &[1.0]), Err(ProfileError::Empty));
        assert_eq!(performance_profile(&[1.0], &[0.5]), Err(ProfileError::InvalidTau(0.5)));
    }

    #[test]
    fn non_finite_runs_never_count() {
        let p = performance_profile(&[1.0, f64::NAN], &[1e300]).unwrap();
        assert_eq!(p[0].rho, 0.5);
    }

    #[test]
    fn csv_format() {
        let mut buf = Vec::new();
        write_profile_csv(&mut buf, &[ProfilePoint { tau: 1.0, rho: 0.5 }]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "tau,rho\n1,0.5\n");
    }

    #[test]
    fn grid_endpoints() {
        let g = tau_grid(10.0, 5);
        assert_eq!(g[0], 1.0);
        assert_eq!(g[4], 10.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    proptest! {
        #[test]
        fn monotone(costs in prop::collection::vec(0.001f64..100.0, 1..30), mut taus in prop::collection::vec(1.0f64..50.0, 1..20)) {
            taus.sort_by(f64::total_cmp);
            let p = performance_profile(&costs, &taus).unwrap();
            prop_assert!(p.windows(2).all(|w| w[0].rho <= w[1].rho));
            prop_assert!(p.iter().all(|q| (0.0..=1.0).contains(&q.rho)));
            let last = performance_profile(&costs, &[1e9]).unwrap();
            prop_assert_eq!(last[0].rho, 1.0);
        }
    }
}
