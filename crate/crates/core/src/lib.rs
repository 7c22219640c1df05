//! Safe Bayesian optimization on grids and continuous boxes.
//!
//! * [`grid`]: SafeOpt with rigorous or heuristic confidence scaling, and the Lipschitz-only LoSBO variant.
//! * [`los_gp_ucb`]: GP-UCB restricted to a union of Lipschitz safety balls.
//! * [`harness`]: target generation, campaigns, reports and the heuristic-bound experiment.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bounds;
pub mod error;
pub mod gp;
pub mod grid;
pub mod harness;
pub mod kernels;
pub mod los_gp_ucb;
pub mod rkhs;

pub use bounds::{BoundSpec, BoundStrategy};
pub use error::{Error, Result};
pub use gp::{GpConfig, GpPosterior};
pub use grid::{GridProblem, GridSafeBo, StepOutcome, Variant};
pub use kernels::{Domain, Kernel, KernelFamily};
pub use los_gp_ucb::{LosGpUcb, SafeRegion};
pub use rkhs::RkhsFunction;
