//! Thermal modeling, estimation and forecasting toolkit for layer-by-layer
//! laser powder bed fusion builds.
//!
//! The crate is organized around the build pipeline:
//!
//! - [`oracle`]: desk-scale finite-difference conduction solver generating
//!   ground-truth per-layer temperature datasets.
//! - [`rom`]: lumped one-temperature-per-layer reduced-order model, its
//!   sequential build integrator and the discrete state-space form.
//! - [`ident`]: genetic-algorithm identification of the effective model
//!   coefficients per build epoch.
//! - [`pseudodata`]: synthetic feedback signals for the forecasting phase.
//! - [`filter`]: Kalman estimation over real measurements and forecasting
//!   over pseudo-measurements.
//! - [`datastore`]: dataset files, ingestion and report generation.

pub mod datastore;
pub mod error;
pub mod filter;
pub mod ident;
pub mod oracle;
pub mod pseudodata;
pub mod rom;
pub mod trace;

pub use error::{Error, ErrorKind, Result};
pub use rom::{BuildSchedule, DiscreteModel, LayerParams, ParamSchedule};
pub use trace::{ThermalTrace, TraceKind};
