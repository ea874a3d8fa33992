//! Method selection shared by the GNC loop and the command line.

use std::fmt;
use std::str::FromStr;

use crate::config::SolverConfig;
use crate::error::SolveError;
use crate::lm::classical_lm_run;
use crate::model::ResidualModel;
use crate::stochastic::{problm_solve, StochasticState, Variant};
use crate::trace::SolveReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Lm,
    Problm,
    ProblmRelaxed,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Lm => "lm",
            Method::Problm => "problm",
            Method::ProblmRelaxed => "problm-relaxed",
        }
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            Method::Lm => None,
            Method::Problm => Some(Variant::Strict),
            Method::ProblmRelaxed => Some(Variant::Relaxed),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lm" => Ok(Method::Lm),
            "problm" => Ok(Method::Problm),
            "problm-relaxed" | "relaxed" => Ok(Method::ProblmRelaxed),
            other => Err(format!("unknown method `{other}` (expected lm, problm or problm-relaxed)")),
        }
    }
}

/// Runs `method` from `start`. ProBLM methods draw a fresh seeded batch.
pub fn solve<M: ResidualModel>(
    model: &M,
    start: M::Params,
    config: &SolverConfig,
    method: Method,
) -> Result<SolveReport<M::Params>, SolveError> {
    match method.variant() {
        None => classical_lm_run(model, start, config),
        Some(variant) => {
            let mut state = StochasticState::for_model(model, config);
            problm_solve(model, start, config, variant, &mut state)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names() {
        for m in [Method::Lm, Method::Problm, Method::ProblmRelaxed] {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("gd".parse::<Method>().is_err());
    }
}
