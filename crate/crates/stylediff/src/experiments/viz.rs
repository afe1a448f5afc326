//! Red/blue difference visualization between two glyph pages.

use stylediff_core::image::ImageTensor;
use stylediff_core::Scalar;

use crate::{Error, Result};

/// Pixel tallies of a difference visualization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DiffCounts {
    /// Ink in `a` only (rendered red).
    pub red: usize,
    /// Ink in `b` only (rendered blue).
    pub blue: usize,
    /// Ink in both (rendered black).
    pub black: usize,
    /// Ink in neither (rendered white).
    pub white: usize,
}

/// Binarize both pages at `threshold` and paint: ink only in `a` red,
/// ink only in `b` blue, shared ink black, background white. Inputs
/// must be same-size grayscale pages in the ink-dark convention.
pub fn diff_visualization<T: Scalar>(
    a: &ImageTensor<T>,
    b: &ImageTensor<T>,
    threshold: f64,
) -> Result<ImageTensor<T>> {
    if !a.same_shape(b) {
        return Err(stylediff_core::Error::invalid(format!(
            "diff inputs must share one size: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        ))
        .into());
    }
    if a.channels() != 1 {
        return Err(stylediff_core::Error::invalid("diff inputs must be grayscale").into());
    }
    if a.is_inverted() || b.is_inverted() {
        return Err(Error::Font(
            "diff inputs must be ink-dark (not inverted)".into(),
        ));
    }
    let t = T::from_f64(threshold);
    let ba = a.binarize(t)?;
    let bb = b.binarize(t)?;
    let (pa, pb) = (ba.pixels(), bb.pixels());
    let img = ImageTensor::from_fn(a.height(), a.width(), 3, |(y, x, c)| {
        let ink_a = pa[[y, x, 0]] == T::zero();
        let ink_b = pb[[y, x, 0]] == T::zero();
        let rgb: [f64; 3] = match (ink_a, ink_b) {
            (true, false) => [1.0, 0.0, 0.0],
            (false, true) => [0.0, 0.0, 1.0],
            (true, true) => [0.0, 0.0, 0.0],
            (false, false) => [1.0, 1.0, 1.0],
        };
        T::from_f64(rgb[c])
    })?;
    Ok(img)
}

/// Tally the four diff colors of a visualization image.
pub fn diff_counts<T: Scalar>(viz: &ImageTensor<T>) -> DiffCounts {
    let px = viz.pixels();
    let mut counts = DiffCounts::default();
    let one = T::one();
    let zero = T::zero();
    for y in 0..viz.height() {
        for x in 0..viz.width() {
            let rgb = (px[[y, x, 0]], px[[y, x, 1]], px[[y, x, 2]]);
            if rgb == (one, zero, zero) {
                counts.red += 1;
            } else if rgb == (zero, zero, one) {
                counts.blue += 1;
            } else if rgb == (zero, zero, zero) {
                counts.black += 1;
            } else {
                counts.white += 1;
            }
        }
    }
    counts
}

/// Fraction of ink pixels (value < threshold) in a grayscale page.
pub fn ink_fraction<T: Scalar>(img: &ImageTensor<T>, threshold: f64) -> f64 {
    let px = img.pixels();
    let t = T::from_f64(threshold);
    let ink = px.iter().filter(|&&v| v < t).count();
    ink as f64 / (img.height() * img.width()) as f64
}
