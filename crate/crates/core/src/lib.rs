//! Complex-valued two-stream despeckling of dual-polarimetric SAR
//! covariance matrices, with the Wishart speckle simulator and the metric
//! suite used to validate it.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod container;
pub mod experiment;
pub mod hermitian;
pub mod metrics;
pub mod model;
pub mod sim;
