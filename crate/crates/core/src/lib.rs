//! Direct preference fine-tuning for a toy denoising diffusion model.
//!
//! The denoising chain is treated as a finite-horizon MDP and the policy is
//! updated step by step from pairwise preferences over final images, with
//! no reward network in between.

// `!(x > 0.0)` style checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod d3po;
pub mod diffusion;
pub mod error;
pub mod mdp;
pub mod ndcore;
pub mod preference;
pub mod seeds;
pub mod theory;

pub use error::{Error, Result};
