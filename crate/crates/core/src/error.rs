use std::io;

use thiserror::Error;

/// Errors produced by the encoding, analysis and simulation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty direction grid")]
    EmptyGrid,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),

    #[error("rt60 of {rt60} s is infeasible for this room (requires absorption {alpha:.3} >= 1)")]
    InfeasibleRt60 { rt60: f64, alpha: f64 },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("signal of {len} samples is shorter than one frame ({frame})")]
    SignalTooShort { len: usize, frame: usize },

    #[error("invalid file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
