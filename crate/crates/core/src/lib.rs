//! Tri-training with two labeling branches and one target branch, for adapting a
//! classifier from a labeled source domain to an unlabeled target domain. Built on
//! a small from-scratch dense network toolkit.

pub mod analysis;
pub mod datagen;
pub mod error;
pub mod gradsuite;
pub mod labeler;
pub mod nnlib;
pub mod trainer;
pub mod trinet;

pub use error::{Error, Result};
