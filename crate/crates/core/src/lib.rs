//! Grade uncertainty propagation through the excavation chain.
//!
//! Starting from a prior sub-block model that carries an estimated mean and
//! standard deviation of Fe wt% per block, this crate estimates Gaussian
//! moments for the material in each excavator bucket, each truck load and
//! each dump destination. Uncertain dig positions are handled by simulating
//! bucket locations on a grid around the recorded position, estimating a
//! Gaussian for each simulated location from the correlated blocks it
//! intersects, assembling the per-location Gaussians into a mixture and
//! reducing the mixture back to a single Gaussian by moment matching.
//!
//! The crate is organised as:
//!
//! - [`block_model`]: the prior block model, spatial index and covariance
//!   kernel
//! - [`geometry`]: spherical bucket shape, volume-intersection fractions and
//!   simulated dig locations
//! - [`gmm`]: scalar Gaussian mixtures and moment matching
//! - [`bucket`]: per-dig-location estimation
//! - [`haul`]: propagation to trucks and dump destinations
//! - [`synth`]: synthetic scenario generation for testing and benchmarks
//! - [`oracle`]: Monte-Carlo verification of the analytic estimates
//! - [`io`], [`config`], [`pipeline`]: CSV schemas, run configuration and the
//!   batch driver

pub mod block_model;
pub mod bucket;
pub mod config;
pub mod error;
pub mod geometry;
pub mod gmm;
pub mod haul;
pub mod io;
pub mod oracle;
pub mod pipeline;
pub mod synth;

pub use block_model::{Block, BlockModel, CovarianceModel};
pub use bucket::BucketEstimate;
pub use config::{PipelineConfig, WeightMode};
pub use error::{Error, Result};
pub use geometry::{BucketShape, SampledLocation};
pub use gmm::{GaussianMixture, GaussianMoment};
pub use haul::{DumpEstimate, HaulCycle, TruckEstimate};
pub use io::DigEvent;
