//! Engine for font-style difference transfer.
//!
//! Two style images and a content image are pushed through a fixed
//! convolutional network; the generated image is optimized so that its
//! feature and Gram-matrix differences against the content image match
//! the differences between the two style images. Everything in this
//! crate is pure computation over in-memory tensors: image decoding,
//! glyph rasterization, and file formats live in the companion
//! `stylediff` crate.
//!
//! The crate builds without `std` (alloc required); the `std` feature
//! (default) enables threaded matrix multiplication and wall-clock
//! timing in [`transfer`] results.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod backend;
pub mod error;
pub mod gram;
pub mod image;
pub mod loss;
pub mod optim;
pub mod rng;
pub mod transfer;

mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;
