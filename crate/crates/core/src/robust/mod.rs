//! Robust kernels, IRLS reweighting and graduated non-convexity.

mod gnc;
mod kernel;
mod robustify;

pub use gnc::{gnc_run, GncSchedule};
pub use kernel::{KernelKind, RobustKernel};
pub use robustify::Robustified;
