use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{0} is not an odd prime below 2^63")]
    InvalidModulus(u64),
    #[error("modulus {p} is too small; wraparound margin requires p > {required}")]
    ModulusTooSmall { p: u64, required: u128 },
    #[error("modulus mismatch: {left} vs {right}")]
    ModulusMismatch { left: u64, right: u64 },
    #[error("value {value} is not reduced mod {modulus}")]
    ValueOutOfRange { value: u64, modulus: u64 },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("vector is empty")]
    EmptyVector,
    #[error("aggregator count must be at least 1")]
    NoAggregators,
    #[error("expected {expected} shares, found {found}")]
    MissingShare { expected: usize, found: usize },
    #[error("duplicate contribution from client {0}")]
    DuplicateClient(usize),
    #[error("missing contribution from client {0}")]
    MissingClient(usize),
    #[error("client index {index} out of range for n = {n}")]
    ClientOutOfRange { index: usize, n: usize },
    #[error("invalid noise scale: {0}")]
    InvalidScale(String),
    #[error("invalid privacy parameter: {0}")]
    InvalidPrivacyParameter(String),
    #[error("query count must be at least 1")]
    NoQueries,
    #[error("domain element {value} outside a domain of {bits} bits")]
    OutOfDomain { value: u64, bits: u32 },
    #[error("domain of 2^{bits} elements is too large for {what}")]
    DomainTooLarge { bits: u32, what: &'static str },
    #[error("dataset has no records")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("missing release from {0}")]
    MissingRelease(String),
    #[error("party id out of range: {0}")]
    PartyOutOfRange(String),
    #[error("{0}")]
    Parse(String),
}
