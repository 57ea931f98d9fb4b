#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod cli;
pub mod design;
pub mod encoders;
pub mod error;
pub mod metrics;
pub mod neural;
pub mod sh;
pub mod signal;
pub mod sim;
pub mod spatial;
pub mod stft;
pub mod wav;

pub use error::{Error, Result};
