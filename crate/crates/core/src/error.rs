use thiserror::Error;

use crate::timetag::Role;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("tail mass {tail:.3e} beyond n_max = {n_max} exceeds tolerance {tolerance:.0e}")]
    TruncationTooSmall {
        n_max: usize,
        tail: f64,
        tolerance: f64,
    },

    #[error("distribution is not normalized (total probability {0})")]
    Unnormalized(f64),

    #[error("no single-photon signal: P1 must be positive")]
    NoSinglePhotonSignal,

    #[error("criterion not violated: P_s = {ps:.6e} does not exceed threshold {threshold:.6e}")]
    NotViolated { ps: f64, threshold: f64 },

    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("tomography design matrix is singular; settings are not informationally complete")]
    SingularDesign,

    #[error("no counts")]
    EmptyCounts,

    #[error("CHSH setting {0} has zero total count")]
    EmptySetting(usize),

    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("tag {index} at {time_ps} ps precedes previous tag at {prev_ps} ps")]
    NonMonotoneTime {
        index: u64,
        prev_ps: u64,
        time_ps: u64,
    },

    #[error("channel {0} is not in the channel-role table")]
    UnknownChannel(u8),

    #[error("role {0:?} appears more than once in the channel-role table")]
    DuplicateRole(Role),

    #[error("unknown role code {0}")]
    UnknownRole(u8),

    #[error("stream declares {declared} tags but {found} were read")]
    TagCountMismatch { declared: u64, found: u64 },

    #[error("coincidence window {window_ps} ps exceeds the repetition period {period_ps:.2} ps")]
    WindowExceedsPeriod { window_ps: u64, period_ps: f64 },

    #[error("invalid histogram binning: {0}")]
    InvalidBinning(String),

    #[error("peak windows overlap or fall outside the histogram: {0}")]
    PeakLayout(String),

    #[error("stream has no channel for role {0:?}")]
    MissingRole(Role),

    #[error("stream contains no pulses")]
    NoPulses,

    #[error("no heralds: the heralding arm never clicked")]
    NoHeralds,

    #[error("side peaks are empty")]
    EmptySidePeaks,

    #[error("zero-time peak is empty")]
    EmptyZeroPeak,

    #[error("inconsistent counts: {0}")]
    InconsistentCounts(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    NotViolated,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidParameter(_) | Error::Config(_) | Error::TruncationTooSmall { .. } => {
                ErrorKind::Config
            }
            Error::NotViolated { .. } => ErrorKind::NotViolated,
            _ => ErrorKind::Data,
        }
    }
}

pub(crate) fn check_probability(name: &str, value: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&value) || value.is_nan() {
        return Err(Error::InvalidParameter(format!(
            "{name} = {value} is outside [0, 1]"
        )));
    }
    Ok(())
}
