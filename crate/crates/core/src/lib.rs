//! Depth of fast-moving surfaces from the motion blur of projected line
//! patterns.
//!
//! Two line patterns (red and blue) are projected onto a moving surface and
//! smear into blur bands during one exposure. The width of a band divided by
//! the local line spacing is the pattern displacement in line-index units.
//! The log ratio of the two displacements depends only on depth for a given
//! camera pixel, so a per-pixel lookup table inverts it to depth.

// negated comparisons reject NaN along with out-of-range values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod band;
pub mod calib;
pub mod depth;
pub mod error;
pub mod imageio;
pub mod kv;
pub mod lut;
pub mod pipeline;
pub mod presets;
pub mod rig;
pub mod sim;

pub use error::{Error, Result};
