//! Stop-and-go wave reconstruction and detection.
//!
//! The pipeline runs a stochastic IDM corridor simulation, averages the
//! trajectories into a time-space speed diagram, scores every cell with a
//! diagonal edge kernel, thresholds the score, and repeats the whole chain
//! over bootstrap replications to get a per-cell SAG probability.
//!
//! Model types are generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix `f64`, which is what the CLI and file formats use.

// `!(a > b)` comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod detector;
pub mod error;
mod frame;
pub mod grid;
pub mod ingest;
pub mod render;
pub mod scalar;
pub mod simulator;
pub mod uq;

pub use detector::{build_kernel, classify, kernel_activation, GapPolicy, Kernel};
pub use error::{Error, Result};
pub use grid::{aggregate_trajectories, extract_neighborhood, fill_gaps, FillPolicy};
pub use ingest::{parse_detector_csv, series_to_grid, virtual_detectors, write_detector_csv};
pub use scalar::Scalar;
pub use simulator::{idm_accel, run_replication, sample_replication, step, Corridor, Topology};
pub use uq::{probability_map, run_bootstrap, uncertainty_fraction};

pub type GridSpec = grid::GridSpec<f64>;
pub type TimeSpaceGrid = grid::TimeSpaceGrid<f64>;
pub type Neighborhood = grid::Neighborhood<f64>;
pub type IdmParams = simulator::IdmParams<f64>;
pub type VehicleState = simulator::VehicleState<f64>;
pub type PerturbationSpec = simulator::PerturbationSpec<f64>;
pub type Scenario = simulator::Scenario<f64>;
pub type Trajectory = simulator::Trajectory<f64>;
pub type Replication = simulator::Replication<f64>;
pub type DetectorConfig = detector::DetectorConfig<f64>;
pub type ActivationMap = detector::ActivationMap<f64>;
pub type BinaryMap = detector::BinaryMap<f64>;
pub type ProbabilityMap = uq::ProbabilityMap<f64>;
pub type BootstrapConfig = uq::BootstrapConfig<f64>;
pub type BootstrapReport = uq::BootstrapReport<f64>;
pub type DetectorSeries = ingest::DetectorSeries<f64>;
pub type RunConfig = config::RunConfig<f64>;
