use std::fmt;

use qngpair::ErrorKind;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NOT_VIOLATED: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Core(qngpair::Error),
    Config(String),
    /// Input parsed but carried nothing to analyse.
    NoData(String),
    Data(String),
    /// The analysis ran; the criterion simply was not violated.
    NotViolated(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => EXIT_CONFIG,
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::NotViolated => EXIT_NOT_VIOLATED,
            },
            CliError::Config(_) => EXIT_CONFIG,
            CliError::NoData(_) | CliError::Data(_) => EXIT_DATA,
            CliError::NotViolated(_) => EXIT_NOT_VIOLATED,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::NoData(m) => write!(f, "no data: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::NotViolated(m) => write!(f, "criterion not violated: {m}"),
        }
    }
}

impl From<qngpair::Error> for CliError {
    fn from(e: qngpair::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            if let csv::ErrorKind::Io(io) = e.into_kind() {
                return io.into();
            }
            unreachable!()
        }
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        match e.io_error_kind() {
            Some(kind) => std::io::Error::new(kind, e).into(),
            None => CliError::Data(e.to_string()),
        }
    }
}
