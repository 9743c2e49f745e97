use std::fmt;

/// Errors surfaced by the simulation and oracle layers.
#[derive(Debug)]
pub enum Error {
    /// A free flight crossed more lattice cells than the table's cap without
    /// hitting a scatterer. Callers must count and discard, never ignore.
    TruncatedFlight { cells: u64 },
    /// Truncation leak of an exact computation exceeded the requested bound.
    LeakExceeded { leak: f64, bound: f64 },
    /// A documented operation precondition was violated.
    Precondition(String),
    /// Malformed configuration (unknown field, bad range, unreadable file).
    InvalidConfig(String),
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::TruncatedFlight { cells } => {
                write!(f, "free flight truncated after crossing {cells} cells")
            }
            Error::LeakExceeded { leak, bound } => {
                write!(f, "truncation leak {leak:.3e} exceeds bound {bound:.3e}")
            }
            Error::Precondition(msg) => write!(f, "precondition violated: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

pub(crate) fn precondition(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Precondition(msg.to_owned()))
    }
}
