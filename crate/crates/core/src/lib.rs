//! Dynamic multimodal graph reasoning for action recognition.
//!
//! The pipeline turns an [`embedding::Episode`] (patch embeddings, attention
//! maps, object regions and a text embedding) into a typed graph of frame,
//! object, text and fusion nodes, runs task-modulated graph attention over
//! it while re-weighting and re-wiring edges, pools the node states and
//! classifies the action. Everything is trained end to end with the
//! reverse-mode tape in [`tensor`].

pub mod blob;
pub mod embedding;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
