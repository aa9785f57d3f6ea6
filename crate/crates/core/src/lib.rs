//! Evidence-aware multi-source fusion for explainable fake-news detection.
//!
//! The pipeline encodes a news article, its user comments, and a pool of
//! topically relevant articles with a shared bidirectional LSTM plus word
//! attention, couples news and comments through a co-attention block, ranks
//! relevant articles by learned similarity to keep the most divergent ones
//! as concrete evidence, and fuses both evidence streams under a joint
//! cross-entropy + KL-consistency loss. Attention weights and the selected
//! evidence are exported as human-readable explanations.

pub mod checkpoint;
pub mod coattention;
pub mod corpus;
pub mod divergence;
pub mod encoder;
pub mod error;
pub mod explain;
pub mod fusion;
pub mod graph;
pub mod mat;
pub mod metrics;
pub mod model;
pub mod training;

pub use error::{Error, Result};
