//! Core algorithms for the speech translation toolkit: tensors with
//! reverse-mode differentiation, the encoder/decoder model, corpus cleaning,
//! training, and decoding. Everything here is deterministic given a seed and
//! free of IO; the companion CLI crate owns files and formats.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod cleaning;
pub mod corpus;
pub mod error;
pub mod hash;
pub mod infer;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
pub use params::Params;
pub use rng::RngStream;
pub use tensor::{Real, Tape, Tensor, Var};
