//! Levenberg-Marquardt with progressive batching.

pub mod config;
pub mod damping;
pub mod error;
pub mod io;
pub mod lm;
pub mod model;
pub mod normal;
pub mod problems;
pub mod profile;
pub mod robust;
pub mod solver;
pub mod stochastic;
pub mod trace;

pub use config::{SolverConfig, UpperBoundMode};
pub use error::{EvalError, SolveError};
pub use lm::classical_lm_run;
pub use model::{check_jacobian, total_cost, BlockEval, FnModel, JacobianCheck, ResidualModel};
pub use normal::{build_normal_equations, solve_damped_step, NormalEquations};
pub use profile::{performance_profile, ProfilePoint};
pub use robust::{gnc_run, GncSchedule, KernelKind, RobustKernel, Robustified};
pub use solver::{solve, Method};
pub use stochastic::{problm_relaxed_run, problm_run, problm_solve, StochasticState, Variant};
pub use trace::{read_trace_csv, write_trace_csv, Outcome, SolveReport, Termination, TraceRecord, TRACE_HEADER};
