use thiserror::Error;

use crate::data::DataError;

/// Library-wide error. The variants map onto the CLI's exit-code classes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("simulation: {0}")]
    Simulation(String),
    #[error("model: {0}")]
    Model(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
