//! Simulation harness: data-generating processes, the factorial sweep and the
//! factor-ranking ANOVA.

pub mod anova;
pub mod dgp;
pub mod interlude;
pub mod sweep;

pub use anova::{anova_rank, AnovaRow, AnovaTable, FactorTable};
pub use dgp::{b_from_bias, generate, generate_interlude, generate_z3, generate_z5, Dist, SimConfig};
pub use interlude::{run_interlude, InterludeSummary};
pub use sweep::{run_sweep, stratified_subsample, z3_grid, z5_grid, DesignSummary, RepMetrics, SimResult, SweepOptions};
