use thiserror::Error;

/// Errors raised by geometry, measures, models and samplers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("direction vector is zero")]
    DegenerateDirection,

    #[error("point lies on a cell boundary")]
    BoundaryPoint,

    #[error("point lies outside the compact box")]
    OutsideBox,

    #[error("cells {from:?} and {to:?} are not adjacent at the given point")]
    NotAdjacent { from: Vec<usize>, to: Vec<usize> },

    #[error("normal vector is zero")]
    ZeroNormal,

    #[error("annealing undefined: probability {index} is zero at temperature {temperature}")]
    ZeroProbability { index: usize, temperature: f64 },

    #[error("unknown class label {0}")]
    UnknownClass(usize),

    #[error("state space of {0} sequences exceeds the enumeration limit")]
    StateSpaceTooLarge(u128),

    #[error("no cached base-measure mass for cell {0:?}")]
    MissingMass(Vec<usize>),

    #[error("more than {limit} facet events in one step")]
    TooManyEvents { limit: usize },

    #[error("empty record stream")]
    EmptyStream,

    #[error("{0}")]
    Check(String),

    #[error("chain {id}: {source}")]
    Chain { id: String, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;
