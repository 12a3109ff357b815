//! Pluralistic image inpainting.
//!
//! A style extractor maps images to a Gaussian posterior over a latent code;
//! a generator fills a masked hole conditioned on a spatially tiled code; a
//! global and a local Wasserstein critic with gradient penalty supply the
//! adversarial signal. Training alternates a reconstruction path (code
//! extracted from the ground truth) and a generative path (code drawn from the
//! prior, read back by the extractor).
//!
//! Everything runs on a small in-crate autodiff engine ([`tensor`]).

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod latent;
pub mod losses;
pub mod nn;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
