//! Neural glyph rasterization.
//!
//! Two model families learn a single glyph at every bitmap size of a range
//! (20-63 px by default):
//!
//! - [`models::MaskedMlp`]: a fixed 63x63 output that is subsampled to each
//!   smaller size through a [`sampling::SamplingMask`].
//! - [`models::ImplicitModel`]: a per-pixel intensity classifier conditioned on
//!   a latent shape representation of (size, weight), sampled at every pixel.
//!
//! [`trainer`] holds the deterministic training loops, [`renderer`] turns
//! trained models back into bitmaps (including latent weight interpolation)
//! and [`analysis`] computes the error reports. Everything numeric is built on
//! the small from-scratch substrate in [`tensornet`].

pub mod analysis;
pub mod cli;
pub mod dataset;
pub mod encoding;
pub mod error;
pub mod models;
pub mod renderer;
pub mod sampling;
pub mod tensornet;
pub mod trainer;

pub use error::{Error, Result};

/// Smallest bitmap size of the default training range.
pub const SIZE_MIN: usize = 20;
/// Largest bitmap size of the default training range.
pub const SIZE_MAX: usize = 63;
