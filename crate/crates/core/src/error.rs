use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("LFSR degree {0} outside supported range [2, 16]")]
    DegreeOutOfRange(u32),
    #[error("Kasami small set requires an even degree, got {0}")]
    OddDegree(u32),
    #[error("LFSR initial state must be nonzero")]
    ZeroState,
    #[error("polynomial {polynomial:#x} is not primitive for degree {degree}: period {period}, expected {expected}")]
    NotPrimitive {
        polynomial: u32,
        degree: u32,
        period: usize,
        expected: usize,
    },
    #[error("sequence length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid modulation config: {0}")]
    Modulation(String),
    #[error("decimation factor must be at least 1")]
    ZeroFactor,
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("pattern of {pattern} samples does not fit in a slot of {slot} samples")]
    PatternExceedsSlot { pattern: usize, slot: usize },
    #[error("rate mismatch: {0}")]
    Rate(String),
    #[error("receiver coincides with beacon {0}")]
    ZeroDistance(usize),
    #[error("point {0:?} lies outside the room")]
    OutsideRoom([f64; 3]),
    #[error("invalid room: {0}")]
    Room(String),
    #[error("image-source order {0} not supported (0 or 1)")]
    ImageOrder(u32),
    #[error("channel {0} has no taps")]
    EmptyChannel(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("buffer of {actual} samples too short, need at least {required}")]
    BufferTooShort { required: usize, actual: usize },
    #[error("pattern of {pattern} samples longer than buffer of {buffer}")]
    PatternLongerThanBuffer { pattern: usize, buffer: usize },
    #[error("empty search window")]
    EmptyWindow,
    #[error("buffer has zero energy")]
    ZeroEnergy,
    #[error("{patterns} patterns for a {channels}-channel schedule")]
    ChannelCountMismatch { patterns: usize, channels: usize },
    #[error("need {required} valid arrival times, got {actual}")]
    TooFewToas { required: usize, actual: usize },
    #[error("degenerate geometry: Jacobian is rank deficient")]
    DegenerateGeometry,
    #[error("empty error list")]
    EmptyErrors,
    #[error("trial {trial}: {source}")]
    Trial { trial: usize, source: Box<Error> },
}
