use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid intensity measure: {0}")]
    InvalidIntensity(String),
    #[error("parameter constraint violated: {0}")]
    Constraint(String),
    #[error("particles must be distinct and not already in the configuration ({0})")]
    DuplicateParticle(&'static str),
    #[error("particle kind does not match the model ({0})")]
    KindMismatch(String),
    #[error("difference of order {n} exceeds the U-statistic order {k}")]
    OrderExceeded { n: usize, k: usize },
    #[error("sum of orders {0} exceeds the enumeration cap of 12")]
    TooManyIndices(usize),
    #[error("invalid orders {0:?}: expected a non-empty, non-increasing list of positive integers")]
    InvalidOrders(Vec<usize>),
    #[error("j-vector {j:?} does not fit orders {orders:?}")]
    InvalidJ { orders: Vec<usize>, j: Vec<usize> },
    #[error("partition is not admissible for the given orders: {0}")]
    NotInFamily(String),
    #[error("importance weights are degenerate (all zero or non-finite)")]
    DegenerateWeights,
    #[error("the sample of configurations is empty")]
    EmptySample,
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
