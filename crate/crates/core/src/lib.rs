//! A binary classifier built on an invertible affine-coupling flow. Each
//! class is a unit-covariance Gaussian in latent space, prediction picks the
//! more likely one, and every input feature gets an explanation score from
//! its latent distance to the predicted class mean.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory:
//!
//! | example | shows |
//! |---|---|
//! | `coupling_roundtrip` | per-block log-determinants and exact inversion |
//! | `two_moons` | training on 2-D data, learning curve, confusion matrix |
//! | `blob_explain` | image training and heatmap / overlay rendering |
//! | `gradient_check` | recorded gradients against finite differences |
//! | `checkpoint` | save, reload and bit-exact agreement |
//! | `dataset_io` | the on-disk dataset directory format |
//!
//! The `dxann` binary wraps [`cli`] with `gen-data`, `train`, `eval` and
//! `explain` subcommands.

pub mod classifier;
pub mod cli;
pub mod data;
pub mod error;
pub mod flow;
pub mod numeric;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
