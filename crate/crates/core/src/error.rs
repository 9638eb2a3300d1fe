use thiserror::Error;

/// Errors produced anywhere in the localization engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("cannot normalize a zero-length vector")]
    ZeroVector,
    #[error("degenerate arc: endpoints coincide or are antipodal (|s x e| = {0:e})")]
    DegenerateArc(f64),
    #[error("segment has zero length")]
    ZeroLengthSegment,
    #[error("rotation is not in SO(3): {0}")]
    NotARotation(String),
    #[error("point lies at the camera center (distance {0:e})")]
    PointAtCameraCenter(f64),
    #[error("segment piece projects to a degenerate arc")]
    DegenerateProjection,
    #[error("bounding box is invalid: {0}")]
    InvalidBoundingBox(String),
    #[error("no segment survives length filtering")]
    EmptyAfterFilter,
    #[error("too few lines: need at least {needed}, got {got}")]
    TooFewLines { needed: usize, got: usize },
    #[error("too few principal directions: requested {requested}, found {found}")]
    TooFewDirections { requested: usize, found: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("no rotation hypothesis survives the alignment error threshold")]
    NoFeasibleRotation,
    #[error("no candidate poses: {0}")]
    NoCandidates(&'static str),
    #[error("query contains no line segments")]
    EmptyQuery,
    #[error("too few matches: need at least 3, got {0}")]
    TooFewMatches(usize),
    #[error("camera lies on a scene line after {0} attempts")]
    CameraOnLine(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error at line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },
    #[error("invariant violation in field `{field}`: {message}")]
    InvariantViolation { field: String, message: String },
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for failures of the search itself rather than of the input data.
    pub fn is_algorithmic(&self) -> bool {
        matches!(
            self,
            Error::NoFeasibleRotation
                | Error::NoCandidates(_)
                | Error::EmptyQuery
                | Error::TooFewDirections { .. }
                | Error::TooFewLines { .. }
                | Error::EmptyAfterFilter
                | Error::DegenerateConfiguration(_)
                | Error::TooFewMatches(_)
                | Error::CameraOnLine(_)
        )
    }

    /// Short variant name, used on the CLI diagnostic stream.
    pub fn name(&self) -> &'static str {
        match self {
            Error::ZeroVector => "ZeroVector",
            Error::DegenerateArc(_) => "DegenerateArc",
            Error::ZeroLengthSegment => "ZeroLengthSegment",
            Error::NotARotation(_) => "NotARotation",
            Error::PointAtCameraCenter(_) => "PointAtCameraCenter",
            Error::DegenerateProjection => "DegenerateProjection",
            Error::InvalidBoundingBox(_) => "InvalidBoundingBox",
            Error::EmptyAfterFilter => "EmptyAfterFilter",
            Error::TooFewLines { .. } => "TooFewLines",
            Error::TooFewDirections { .. } => "TooFewDirections",
            Error::DegenerateConfiguration(_) => "DegenerateConfiguration",
            Error::NoFeasibleRotation => "NoFeasibleRotation",
            Error::NoCandidates(_) => "NoCandidates",
            Error::EmptyQuery => "EmptyQuery",
            Error::TooFewMatches(_) => "TooFewMatches",
            Error::CameraOnLine(_) => "CameraOnLine",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Parse { .. } => "ParseError",
            Error::InvariantViolation { .. } => "InvariantViolation",
            Error::Io(_) => "IoError",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
