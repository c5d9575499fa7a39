//! Trajectory forecasting for heterogeneous traffic agents with a
//! spatio-temporal Transformer encoder, a temporal Transformer
//! encoder/decoder, and an autoregressive trajectory generator, plus the
//! training recipe, metrics, and data pipeline needed to run it end to end.

pub mod config;
pub mod data;
pub mod evaluation;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod numerics;
pub mod plot;
pub mod training;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training aborted: {0}")]
    Training(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
