use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum Error {
    #[error("handle registry is full ({0} handles)")]
    RegistryFull(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
