//! Decentralized Riemannian stochastic gradient tracking (DRSGT) on the
//! Stiefel manifold.
//!
//! The crate contains the manifold toolkit ([`stiefel`]), mixing networks
//! ([`network`]), stochastic gradient oracles for decentralized PCA
//! ([`oracle`]), a synchronous multi-agent simulator ([`engine`]) and the
//! experiment harness behind the `drsgt` binary ([`experiment`], [`cli`]).
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases below
//! fix the scalar for the common case.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod network;
pub mod oracle;
pub mod scalar;
pub mod stiefel;

pub use engine::{AlgoConfig, Algorithm, Counters, Engine, InitMode, Observer, RunSummary, Snapshot};
pub use error::{EngineFault, Error, Result};
pub use experiment::{ExperimentConfig, ExperimentSummary, MetricsRow, OracleKind};
pub use network::{build_topology, NetworkSpec, SpectralDiagnostics, Topology};
pub use oracle::{
    FullBatch, GradientOracle, GradientSample, PcaParams, PcaProblem, RowSampling, SampleCount,
    SampleSchedule, SyntheticNoise,
};
pub use scalar::Real;
pub use stiefel::{AmbientMatrix, StiefelPoint, TangentVector};

pub type Point = StiefelPoint<f64>;
pub type Tangent = TangentVector<f64>;
pub type Matrix = AmbientMatrix<f64>;
pub type Network = NetworkSpec<f64>;
pub type Problem = PcaProblem<f64>;

pub type Point32 = StiefelPoint<f32>;
pub type Tangent32 = TangentVector<f32>;
pub type Matrix32 = AmbientMatrix<f32>;
pub type Network32 = NetworkSpec<f32>;
pub type Problem32 = PcaProblem<f32>;
