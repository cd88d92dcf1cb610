//! Knowledge graph completion with translation models (TransE, TransH) and an
//! attention-based semantic constraint built from whitened text vectors.
//!
//! The pipeline is: [`kgdata`] loads triples and labels, [`wordpiece`] learns a
//! subword vocabulary over the labels, [`semstore`] holds per-entity and
//! per-relation text vectors, [`whitening`] reduces them to the structural
//! dimension, [`trainer`] optimizes the structural embeddings from [`scoring`]
//! with the contrastive term from [`semloss`], and [`evaluator`] runs
//! raw/filtered link prediction.

pub mod cli;
pub mod error;
pub mod evaluator;
pub mod fsutil;
pub mod kgdata;
pub mod scoring;
pub mod semloss;
pub mod semstore;
pub mod trainer;
pub mod vecmath;
pub mod whitening;
pub mod wordpiece;

pub use error::{KgcError, Result};
