//! Executable versions of the architecture's cost and receptive-field claims.

pub mod cost;
pub mod erf;
pub mod footprint;

pub use cost::{
    compare_csv, compare_direct_vs_decomposed, eq3, eq3_report, eq4, CostReport, KernelCounts,
};
pub use erf::{area_ratio, erf_probe, ErfConfig, ErfReport, Tap};
pub use footprint::Footprint;
