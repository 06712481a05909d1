//! Entity role labeling for memes.
//!
//! Two reformulations of the task are provided. The sequence-labeling route
//! converts memes to BIO-tagged token sequences ([`conll`]) and tags them with
//! a linear-chain CRF ([`crf`]). The classification route flattens memes into
//! one example per entity and classifies each with a BLOCK bilinear fusion
//! network over precomputed embeddings ([`embeddings`], [`fusion`]), with
//! optional attention and class-balancing text augmentation ([`augment`]).
//! [`eval`] computes accuracy and macro-averaged precision, recall and F1.

pub mod augment;
pub mod cli;
pub mod conll;
pub mod crf;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod linalg;
mod role;

pub use dataset::{EntityInstance, MemeRecord, RoleCounts};
pub use error::{Error, Result};
pub use role::Role;
