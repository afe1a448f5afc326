//! Glyph rasterization: TrueType/OpenType in, anti-aliased ink-dark
//! glyph pages out. Deterministic for a fixed spec.

use std::path::{Path, PathBuf};

use stylediff_core::image::ImageTensor;
use stylediff_core::Scalar;

use crate::{Error, Result};

/// What to rasterize: one codepoint from one font file, scaled to fit
/// a square canvas inside the given margin and centered by its ink
/// bounding box.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphSpec {
    pub font_path: PathBuf,
    pub codepoint: char,
    pub canvas: usize,
    pub margin_fraction: f64,
}

impl GlyphSpec {
    pub fn new(font_path: impl Into<PathBuf>, codepoint: char) -> Self {
        Self {
            font_path: font_path.into(),
            codepoint,
            canvas: 256,
            margin_fraction: 0.15,
        }
    }

    pub fn with_canvas(mut self, canvas: usize) -> Self {
        self.canvas = canvas;
        self
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin_fraction = margin;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.canvas == 0 {
            return Err(stylediff_core::Error::invalid("canvas must be positive").into());
        }
        if !(0.0..0.4).contains(&self.margin_fraction) {
            return Err(stylediff_core::Error::invalid(format!(
                "margin fraction must lie in [0, 0.4), got {}",
                self.margin_fraction
            ))
            .into());
        }
        Ok(())
    }
}

fn load_font(path: &Path) -> Result<fontdue::Font> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Font(format!("cannot read font {}: {e}", path.display())))?;
    fontdue::Font::from_bytes(bytes, fontdue::FontSettings::default())
        .map_err(|e| Error::Font(format!("cannot parse font {}: {e}", path.display())))
}

/// Render the glyph as black ink on a white page.
pub fn rasterize_glyph<T: Scalar>(spec: &GlyphSpec) -> Result<ImageTensor<T>> {
    spec.validate()?;
    let font = load_font(&spec.font_path)?;
    if font.lookup_glyph_index(spec.codepoint) == 0 {
        return Err(Error::Font(format!(
            "glyph not found: U+{:04X} is not in {}",
            spec.codepoint as u32,
            spec.font_path.display()
        )));
    }

    let canvas = spec.canvas;
    let inner = ((canvas as f64) * (1.0 - 2.0 * spec.margin_fraction)).max(1.0);

    // probe render to learn the glyph's aspect, then scale so the ink
    // bounding box fits the inner square
    let probe_px = 128.0f32;
    let (pm, _) = font.rasterize(spec.codepoint, probe_px);
    if pm.width == 0 || pm.height == 0 {
        // no ink (e.g. a space): blank page
        return Ok(ImageTensor::constant(canvas, canvas, 1, T::one())?);
    }
    let scale = inner / pm.width.max(pm.height) as f64;
    let mut px = (probe_px as f64 * scale) as f32;
    let (mut metrics, mut coverage) = font.rasterize(spec.codepoint, px);
    // rounding can overshoot the box by a pixel or two; back off
    while (metrics.width.max(metrics.height) as f64) > inner && px > 1.0 {
        px -= 1.0;
        let r = font.rasterize(spec.codepoint, px);
        metrics = r.0;
        coverage = r.1;
    }

    let (gw, gh) = (metrics.width, metrics.height);
    let x0 = (canvas - gw.min(canvas)) / 2;
    let y0 = (canvas - gh.min(canvas)) / 2;
    let img = ImageTensor::from_fn(canvas, canvas, 1, |(y, x, _)| {
        if y >= y0 && y < y0 + gh && x >= x0 && x < x0 + gw {
            let c = coverage[(y - y0) * gw + (x - x0)] as f64 / 255.0;
            T::from_f64(1.0 - c)
        } else {
            T::one()
        }
    })?;
    Ok(img)
}
