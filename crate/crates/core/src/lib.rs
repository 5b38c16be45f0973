//! Constant-product AMM liquidity-provision laboratory.
//!
//! The crate simulates multi-pool constant-product markets under Poisson
//! order flow and searches for the initial wealth allocation minimizing the
//! investment's Conditional Value at Risk. The numeric core is generic over
//! the scalar type (`f64` by default, `f32` supported); see [`scalar::Real`].

pub mod error;
pub mod scalar;

pub mod lifecycle;
mod linalg;
pub mod market;
pub mod optimizer;
pub mod pipeline;
pub mod pool;
pub mod risk;
pub mod simplex;
pub mod stream_io;
pub mod surrogate;

pub use error::{Error, Result};
pub use lifecycle::{deploy, return_distribution, unwind, ObjectiveContext};
pub use optimizer::{
    project_simplex, random_grid_search, sqp_minimize, OptimizeResult, SqpConfig, TracePoint,
};
pub use pipeline::{
    ablation, run_pipeline, run_pipeline_with_stream, AblationReport, AblationRow, PipelineConfig,
    PipelineReport,
};
pub use surrogate::{chi2_kernel, fit as fit_surrogate, r_squared, SurrogateModel};
pub use market::{
    draw_event_stream, replay, simulate, AllPoolSigma, EventStream, MarketParams, PathEvents,
    PathRecord, PathTrajectory,
};
pub use pool::{MultiPool, PoolState};
pub use risk::{quantile, tail_size, var_cvar, ReturnDistribution, RiskReport};
pub use scalar::Real;
pub use simplex::WeightVector;

/// Single-precision aliases for the scalar-generic core types.
pub type PoolStateF32 = pool::PoolState<f32>;
pub type MultiPoolF32 = pool::MultiPool<f32>;
pub type WeightVectorF32 = simplex::WeightVector<f32>;
pub type ReturnDistributionF32 = risk::ReturnDistribution<f32>;
pub type RiskReportF32 = risk::RiskReport<f32>;

/// Formats a scalar with 17 significant digits, enough to round-trip `f64`.
pub fn fmt_g17<F: Real>(v: F) -> String {
    format!("{:.16e}", v.to_f64().unwrap())
}
