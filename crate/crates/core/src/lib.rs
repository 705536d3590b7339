//! Text/shape retrieval by optimal-transport matching of part embeddings
//! (from a colored point cloud) against context-sensitive word embeddings.
//!
//! Everything is built on a small reverse-mode autodiff engine over dense
//! `f64` matrices; see [`diffcore`].

// index loops read more clearly than iterator chains in the matrix kernels
#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod data;
pub mod diffcore;
mod error;
pub mod eval;
pub mod model;
pub mod ot_matcher;
pub mod shape_encoder;
pub mod text_encoder;
pub mod trainer;

pub use config::{DataConfig, Preset, RunConfig};
pub use data::{ColoredPointCloud, PairedCorpus, TokenSequence, Vocabulary};
pub use diffcore::Matrix;
pub use error::{Error, Result};
pub use eval::{EvalReport, RetrievalDirection, ScoringConfig};
pub use model::Model;
pub use ot_matcher::{Matcher, PlanGradient, SinkhornConfig};
pub use shape_encoder::{PartSource, ShapeEncoderConfig};
pub use trainer::{ModelState, TrainConfig};
