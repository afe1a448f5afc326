//! In-memory image type shared by the whole pipeline.

use alloc::format;
use alloc::vec::Vec;

use ndarray::Array3;

use crate::rng;
use crate::{Error, Result, Scalar};

/// A float image with pixels in `[0, 1]`, stored `H x W x C`.
///
/// `inverted` records whether ink is currently high-valued (glyph pages
/// are drawn dark-on-light; the network wants the opposite, and the
/// flag keeps track of which convention a tensor is in).
///
/// Inversion is represented as a flip bit over the stored data rather
/// than an eager rewrite, so `invert` is an exact involution: two
/// flips return the identical tensor, with no floating-point round
/// trip through `1 - (1 - v)`.
#[derive(Debug, Clone)]
pub struct ImageTensor<T: Scalar> {
    base: Array3<T>,
    flip: bool,
    inverted: bool,
}

impl<T: Scalar> ImageTensor<T> {
    /// Build from raw pixel data, validating the type invariants.
    pub fn new(pixels: Array3<T>, inverted: bool) -> Result<Self> {
        let (h, w, c) = pixels.dim();
        if h == 0 || w == 0 {
            return Err(Error::invalid("image dimensions must be at least 1x1"));
        }
        if c != 1 && c != 3 {
            return Err(Error::invalid(format!(
                "channel count must be 1 or 3, got {c}"
            )));
        }
        for &v in pixels.iter() {
            if !(v >= T::zero() && v <= T::one()) {
                return Err(Error::invalid(format!(
                    "pixel value {v} outside [0, 1] (or NaN)"
                )));
            }
        }
        Ok(Self {
            base: pixels,
            flip: false,
            inverted,
        })
    }

    /// Constant-valued image.
    pub fn constant(height: usize, width: usize, channels: usize, value: T) -> Result<Self> {
        Self::new(Array3::from_elem((height, width, channels), value), false)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        f: impl FnMut((usize, usize, usize)) -> T,
    ) -> Result<Self> {
        Self::new(Array3::from_shape_fn((height, width, channels), f), false)
    }

    /// I.i.d. uniform `[0, 1)` pixels from the given seed.
    pub fn random(height: usize, width: usize, channels: usize, seed: u64) -> Result<Self> {
        let mut r = rng::seeded(seed);
        Self::new(
            Array3::from_shape_simple_fn((height, width, channels), || {
                T::from_f64(rng::unit(&mut r))
            }),
            false,
        )
    }

    pub fn height(&self) -> usize {
        self.base.dim().0
    }

    pub fn width(&self) -> usize {
        self.base.dim().1
    }

    pub fn channels(&self) -> usize {
        self.base.dim().2
    }

    pub fn is_inverted(&self) -> bool {
        self.inverted
    }

    /// Materialized pixel values, `H x W x C`.
    pub fn pixels(&self) -> Array3<T> {
        if self.flip {
            self.base.mapv(|v| T::one() - v)
        } else {
            self.base.clone()
        }
    }

    /// Single pixel value.
    pub fn pixel(&self, y: usize, x: usize, c: usize) -> T {
        let v = self.base[[y, x, c]];
        if self.flip {
            T::one() - v
        } else {
            v
        }
    }

    /// Same pixel data with the inversion flag forced; used by loaders
    /// that know the convention of the data they produced.
    pub fn with_inverted_flag(mut self, inverted: bool) -> Self {
        self.inverted = inverted;
        self
    }

    /// `v -> 1 - v` on every pixel; toggles the `inverted` flag.
    pub fn invert(&self) -> Self {
        Self {
            base: self.base.clone(),
            flip: !self.flip,
            inverted: !self.inverted,
        }
    }

    /// Threshold to a hard `{0, 1}` image: `v < threshold -> 0`,
    /// `v >= threshold -> 1`. Requires `0 < threshold < 1`.
    pub fn binarize(&self, threshold: T) -> Result<Self> {
        if !(threshold > T::zero() && threshold < T::one()) {
            return Err(Error::invalid(format!(
                "binarize threshold must lie strictly inside (0, 1), got {threshold}"
            )));
        }
        Ok(Self {
            base: self
                .pixels()
                .mapv(|v| if v < threshold { T::zero() } else { T::one() }),
            flip: false,
            inverted: self.inverted,
        })
    }

    /// Re-type the pixel data (f32 <-> f64).
    pub fn cast<U: Scalar>(&self) -> ImageTensor<U> {
        ImageTensor {
            base: self.pixels().mapv(|v| U::from_f64(v.to_f64())),
            flip: false,
            inverted: self.inverted,
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.base.dim() == other.base.dim()
    }

    /// Flat copy of the pixel data in `H x W x C` order.
    pub fn to_vec(&self) -> Vec<T> {
        self.pixels().iter().copied().collect()
    }

    /// Rebuild from a flat pixel vector produced by the optimizer,
    /// clamping into `[0, 1]` so the type invariant holds.
    pub(crate) fn from_flat_clamped(template: &Self, flat: &[T]) -> Self {
        let dim = template.base.dim();
        debug_assert_eq!(flat.len(), dim.0 * dim.1 * dim.2);
        let data: Vec<T> = flat
            .iter()
            .map(|&v| v.max(T::zero()).min(T::one()))
            .collect();
        Self {
            base: Array3::from_shape_vec(dim, data).expect("shape preserved"),
            flip: false,
            inverted: template.inverted,
        }
    }
}

impl<T: Scalar> PartialEq for ImageTensor<T> {
    /// Equality of the *logical* image: dimensions, materialized pixel
    /// values, and ink convention.
    fn eq(&self, other: &Self) -> bool {
        if self.base.dim() != other.base.dim() || self.inverted != other.inverted {
            return false;
        }
        if self.flip == other.flip {
            self.base == other.base
        } else {
            self.base
                .iter()
                .zip(other.base.iter())
                .all(|(&a, &b)| a == T::one() - b)
        }
    }
}
