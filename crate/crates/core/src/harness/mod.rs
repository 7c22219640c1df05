//! Experiment harness: instances, campaigns, reports and the heuristic-bound check.

pub mod benchmarks;
pub mod bound_check;
pub mod campaign;
pub mod instance;
pub mod noise;
pub mod random_search;
pub mod report;

pub use benchmarks::Benchmark;
pub use bound_check::{run_bound_check, BoundCheckConfig, BoundCheckResult};
pub use campaign::{run_campaign, write_outputs, Algorithm, CampaignConfig, CampaignResult, RunRecord, TargetConfig};
pub use instance::RkhsInstance;
pub use noise::{NoiseKind, NoiseSpec};
pub use report::{StepRow, Summary};
