//! Sequence models with a hidden-state prediction (PHi) bottleneck.
//!
//! The crate is organised around the experiment pipeline:
//!
//! * [`tasks`] generates the synthetic task suite (memorized sequences,
//!   memorized automata, in-context language learning, random, copying) and
//!   computes automaton description lengths.
//! * [`model`] holds the decoder-only transformer and LSTM backbones, split
//!   into bottom and top halves around the PHi layer.
//! * [`phi`] is the PHi layer itself: posterior encoder, reparameterized
//!   latents, decoder, autoregressive prior, and the KL-based PHi loss.
//! * [`train`] is the optimisation loop (Adam, warm-up, clipping) and
//!   evaluation into per-token records.
//! * [`analysis`] turns token records into figure tables and checks the
//!   description-length accounting with a real arithmetic coder.
//! * [`cli`] wires everything into reproducible experiment recipes.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod fsio;
pub mod model;
pub mod params;
pub mod phi;
pub mod rng;
pub mod tasks;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
