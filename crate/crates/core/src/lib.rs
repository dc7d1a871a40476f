//! Targetless extrinsic calibration of multiple LiDARs against a GNSS-aided
//! inertial navigation system (GINS).

pub mod calib_lg;
pub mod calib_ml;
pub mod cloud;
pub mod dataset;
pub mod error;
pub mod factors;
pub mod frames;
pub mod joint;
mod keyvalue;
pub mod metrics;
pub mod pipeline;
pub mod rig;
pub mod se3;
pub mod simgen;
pub mod solver;
pub mod terrain;

pub use error::{Error, Result};
