use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported dimension {0}: only d = 2 and d = 3 are implemented")]
    UnsupportedDimension(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The two-particle kernel was queried at a separation where the
    /// slow-down factor is not positive.
    #[error("degenerate state: beta = {beta} at separation {separation}")]
    Degenerate { separation: f64, beta: f64 },

    #[error("the origin is not a valid input here")]
    AtOrigin,

    #[error("balls of radius {r} at distance {distance} do not intersect")]
    EmptyIntersection { r: f64, distance: f64 },

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("field value {value} outside [0, 1] at cell {cell}")]
    FieldRange { cell: usize, value: f64 },

    /// The forward field's support came within the safety margin of the box.
    #[error("support overflow: support bound {support_bound} plus margin {margin} exceeds box reach {reach}")]
    SupportOverflow {
        support_bound: f64,
        margin: f64,
        reach: f64,
    },

    #[error("time {t} lies beyond the path horizon {horizon}")]
    BeyondHorizon { t: f64, horizon: f64 },

    #[error("sample too small: need at least {needed}, got {got}")]
    SampleTooSmall { needed: usize, got: usize },

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("replica {replica} failed: {source}")]
    Replica {
        replica: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
