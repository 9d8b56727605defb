//! Dense retrieval trained on graded evidence labels, adaptive relabeling
//! of generated questions, and order-robust answer ensembling.

pub mod cli;
pub mod cluster;
pub mod data;
pub mod encoder;
pub mod error;
pub mod index;
pub mod inference;
pub mod labeler;
pub mod parallel;
pub mod synthetic;
pub mod text;
pub mod training;

pub use error::{Error, Result};
