//! Ultrasonic local positioning: spreading codes, BPSK emission frames,
//! simulated acoustic channels, multipath-compensated arrival estimation,
//! hyperbolic positioning and Monte-Carlo evaluation.

// `!(x > 0.0)` is deliberate throughout: NaN has to fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod codes;
mod dsp;
pub mod error;
pub mod eval;
pub mod mca;
pub mod positioning;
pub mod waveform;

pub use channel::{BeaconArray, ChannelRealization, NoiseConfig, Point3, ReceivedBuffer, RoomModel};
pub use codes::{BipolarSequence, KasamiSet};
pub use error::{Error, Result};
pub use eval::{Scenario, TrialSpec};
pub use mca::{ChannelEstimate, McaConfig, Method, ToaResult};
pub use positioning::{PositionFix, SolverConfig, TdoaSet};
pub use waveform::{CodePattern, ModulationConfig, TdmaSchedule, TransmitFrame};
