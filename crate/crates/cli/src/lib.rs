//! File formats and subcommands behind the `ulps` binary.
//!
//! Every command is a plain function taking parsed inputs and an output
//! location so that tests can drive them without spawning a process.

pub mod capture;
pub mod commands;
pub mod scenarios;

pub use capture::{Capture, CaptureHeader};
pub use commands::{Manifest, Overrides, ProcessReport};
