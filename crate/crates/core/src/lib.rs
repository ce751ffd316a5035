//! Unified text/speech/motion token pipeline at desk scale.

pub mod checkpoint;
pub mod error;
pub mod lm_core;
pub mod metrics;
pub mod mixture;
pub mod motion_codec;
pub mod nn;
pub mod pipeline;
pub mod rotgeom;
pub mod segmenter;
pub mod structured_decoder;
pub mod synthdata;
pub mod token_space;

pub use error::{Error, Result};
