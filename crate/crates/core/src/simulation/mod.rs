//! Monte Carlo harness: data-generating processes, comparison estimators and
//! replicated RMSE/MAD tables.

mod baselines;
mod design;
mod table;

pub use baselines::{monomials, IndexModel, Method, PolyFeatures};
pub use design::{generate, ErrorSpec, SimDesign, SimSample, Split, Systematic, BETA};
pub use table::{
    desk_grid, refit_kernel, replicate_design, replicate_table, run_replication, score, DesignMetadata, DesignTable,
    MethodResult, RepMetrics, RepOutcome, SimConfig, SimMetadata, SimTable,
};
