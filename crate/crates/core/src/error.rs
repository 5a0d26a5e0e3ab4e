use thiserror::Error;

use crate::cube::CubeError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input not found: {0}")]
    InputNotFound(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed row at row {row}: {message}")]
    MalformedRow { row: u64, message: String },

    #[error("non-positive weight at row {row}")]
    NonPositiveWeight { row: u64 },

    #[error("category out of range at row {row}: {column}={value} but only {limit} categories declared")]
    CategoryOutOfRange {
        row: u64,
        column: &'static str,
        value: u32,
        limit: u32,
    },

    #[error("duplicate id {id} at row {row}")]
    DuplicateId { row: u64, id: u64 },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("invalid population spec: {0}")]
    InvalidSpec(String),

    #[error("infeasible joint proportion: p11={p11} outside [{lower}, {upper}]")]
    InfeasibleJointProportion { p11: f64, lower: f64, upper: f64 },

    #[error("odds ratio undefined: zero off-diagonal cell")]
    OddsRatioUndefined,

    #[error("odds ratio needs a 2x2 table, got {k}x{l}")]
    NotTwoByTwo { k: u32, l: u32 },

    #[error("sample size {n} outside [1, {population}]")]
    SampleSize { n: usize, population: usize },

    #[error("class {class} has no response mechanism")]
    MissingMechanism { class: u32 },

    #[error("missing value present for unit {id}")]
    MissingValue { id: u64 },

    #[error("no donor information in class {class}")]
    NoDonorInformation { class: u32 },

    #[error("zero denominator: {0}")]
    ZeroDenominator(&'static str),

    #[error("dataset has no third item")]
    NoThirdItem,

    #[error("bootstrap needs an equal-weight simple random sample: {0}")]
    NotSrswor(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("too few replicates: {0}")]
    TooFewReplicates(String),

    #[error("relative measure undefined: {0}")]
    Undefined(&'static str),

    #[error(transparent)]
    Cube(#[from] CubeError),
}

impl Error {
    /// Errors caused by bad input, as opposed to numerical or runtime failures.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io(_)
                | Error::Cube(_)
                | Error::NoDonorInformation { .. }
                | Error::ZeroDenominator(_)
                | Error::OddsRatioUndefined
                | Error::Undefined(_)
        )
    }
}
