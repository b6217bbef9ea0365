//! Character-level Chinese word segmentation with a convolutional encoder
//! and a linear-chain CRF.
//!
//! The crate provides the full training and inference stack: corpus and
//! vocabulary handling, n-gram and word-feature extraction, a gated
//! convolutional encoder that maps character sequences to per-position tag
//! scores, exact CRF loss and decoding over the BMES tag set, skip-gram
//! embedding pretraining, and a teacher-student loop that mines word
//! features from unlabeled text.

pub mod corpus;
pub mod crf;
pub mod encoder;
pub mod error;
pub mod features;
pub mod model;
pub mod pipeline;
pub mod pretrain;
pub mod tagging;
pub mod tensor;

pub use error::{Error, Result};
