//! Reverse-mode automatic differentiation over row-major `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Sequences from a
//! batch are packed row-wise into a single matrix; operations that must not
//! mix sequences (attention, pooling) take explicit segment layouts.

mod params;
mod tape;

pub use params::{Grads, ParamId, ParamStore};
pub use tape::{AttnLayout, Tape, Var};
pub(crate) use tape::kl_term;

pub type Matrix = ndarray::Array2<f64>;
