//! Training library for spiking networks that share LIF membrane state
//! across layers and channel groups.
//!
//! The pieces: dense/bit-packed tensors ([`tensor`]), single-step LIF
//! dynamics with soft/hard reset ([`lif`]), the sharing-scheme state
//! machines ([`sharing`]), surrogate-gradient backpropagation through time
//! ([`autograd`]), a backward pass that reverse-recomputes membranes instead
//! of caching them ([`memsave`]), analytic memory and accelerator cost
//! models ([`memmodel`], [`hwcost`]), CSV/synthetic dataset handling
//! ([`data`]), and a deterministic SGD trainer ([`trainer`]).

#![forbid(unsafe_code)]

pub mod autograd;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod hwcost;
mod kv;
pub mod lif;
pub mod memmodel;
pub mod memsave;
pub mod network;
pub mod sharing;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
