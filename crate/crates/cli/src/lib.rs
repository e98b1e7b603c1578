//! Stage implementations behind the `crowdspeak` binary.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod report;
pub mod stages;
