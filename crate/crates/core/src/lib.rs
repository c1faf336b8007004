//! Transformer variational autoencoder with separated syntax and semantic
//! latent spaces.
//!
//! Sentences or expressions are encoded twice: a sequential transformer
//! produces a semantic Gaussian latent and a graph encoder over the syntax
//! tree produces a syntactic one. Both latents condition every self-attention
//! layer of an autoregressive decoder through memory, addition or low-rank
//! fusion injection.

pub mod corpus;
pub mod decoder;
pub mod encoders;
pub mod evaluation;
pub mod error;
pub mod model;
pub mod nn;
pub mod optim;
pub mod par;
pub mod params;
pub mod tape;
pub mod training;

pub use error::{Error, Result};
