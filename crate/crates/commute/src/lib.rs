//! Estimation of origin-destination commuting flows from geotagged event
//! streams.
//!
//! The pipeline goes: region geometry loading and event-to-region
//! resolution ([`geo`]), event ingestion and user filtering ([`ingest`]),
//! home/work inference ([`assign`]), flow-matrix construction ([`flow`]),
//! radiation-model baselines ([`radiation`]), and evaluation
//! ([`metrics`], [`cluster`]). A synthetic world generator ([`synth`])
//! provides ground truth for end-to-end validation, and [`cli`] exposes
//! everything as file-based pipeline stages.
//!
//! Matrix and metric kernels are generic over the scalar type through
//! `num_traits::Float`; the `f64` aliases below are what the pipeline
//! itself uses.

pub mod assign;
pub mod civil;
pub mod cli;
pub mod cluster;
pub mod flow;
pub mod geo;
pub mod ingest;
pub mod metrics;
pub mod radiation;
pub mod synth;

/// Flow matrix over `f64`, the pipeline's working precision.
pub type FlowMatrix64 = flow::FlowMatrix<f64>;
/// Commuter marginals over `f64`.
pub type CommuterMarginals64 = flow::CommuterMarginals<f64>;
