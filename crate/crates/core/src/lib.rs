//! GNSS positioning for rail vehicles: an iterated EKF with per-satellite
//! distribution mixing and a soft track-map constraint, plus a scenario
//! simulator and file formats.

pub mod error;
pub mod estimation;
pub mod frames;
pub mod gnss;
pub mod io;
pub mod mixing;
pub mod navigation;
pub mod sim;
pub mod track;

pub use error::{Error, Result};
