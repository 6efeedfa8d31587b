//! Cooperative vehicle localization from multipath radio measurements.
//!
//! A base station illuminates a road scene; single-bounce reflections off
//! building faces behave as line-of-sight links from mirror-image virtual
//! transmitters (VTs). VTs observed by different vehicles off the same
//! reflector are fused into common virtual transmitters (CVTs) by affinity
//! propagation plus a dynamic cluster store, and vehicle / CVT positions are
//! estimated jointly by interleaved batches of particle filters.
//!
//! The crate splits into:
//! - [`world`]: scene geometry, trajectories, mirror images, path visibility
//! - [`channel`]: noisy ToA/AoA synthesis and the measurement vector operator
//! - [`apcluster`]: affinity-propagation clustering of a VT point cloud
//! - [`cvtmap`]: the CVT cluster store (association, merging, deletion)
//! - [`tpf`]: the joint vehicle/CVT particle filter
//! - [`metrics`]: error aggregation (MAE, quantiles, CDFs)
//! - [`config`] / [`scenario`] / [`sim`]: experiment runner behind the CLI

pub mod apcluster;
pub mod channel;
pub mod config;
pub mod cvtmap;
pub mod metrics;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod tpf;
pub mod world;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("time {t} s outside [{min} s, {max} s]")]
    OutOfHorizon { t: f64, min: f64, max: f64 },
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("operation needs at least one sample")]
    EmptySamples,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
