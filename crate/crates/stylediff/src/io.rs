//! Image file IO with a pinned, reproducible contract: decoding via
//! the `image` codecs, our own align-centers bilinear resampler, and
//! round-half-up 8-bit quantization on save.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use ndarray::Array3;
use stylediff_core::image::ImageTensor;
use stylediff_core::Scalar;

use crate::Result;

/// Bilinear resample with the align-centers convention:
/// `src = (dst + 0.5) * (in / out) - 0.5`, edge-clamped.
pub fn resize_bilinear<T: Scalar>(pixels: &Array3<T>, out_h: usize, out_w: usize) -> Array3<T> {
    let (in_h, in_w, c) = pixels.dim();
    if (in_h, in_w) == (out_h, out_w) {
        return pixels.clone();
    }
    let scale_y = in_h as f64 / out_h as f64;
    let scale_x = in_w as f64 / out_w as f64;
    let mut out = Array3::zeros((out_h, out_w, c));
    for oy in 0..out_h {
        let sy = (oy as f64 + 0.5) * scale_y - 0.5;
        let y0f = sy.floor();
        let fy = sy - y0f;
        let y0 = (y0f.max(0.0) as usize).min(in_h - 1);
        let y1 = ((y0f + 1.0).max(0.0) as usize).min(in_h - 1);
        for ox in 0..out_w {
            let sx = (ox as f64 + 0.5) * scale_x - 0.5;
            let x0f = sx.floor();
            let fx = sx - x0f;
            let x0 = (x0f.max(0.0) as usize).min(in_w - 1);
            let x1 = ((x0f + 1.0).max(0.0) as usize).min(in_w - 1);
            for ch in 0..c {
                let p00 = pixels[[y0, x0, ch]].to_f64();
                let p01 = pixels[[y0, x1, ch]].to_f64();
                let p10 = pixels[[y1, x0, ch]].to_f64();
                let p11 = pixels[[y1, x1, ch]].to_f64();
                let top = p00 * (1.0 - fx) + p01 * fx;
                let bot = p10 * (1.0 - fx) + p11 * fx;
                out[[oy, ox, ch]] = T::from_f64(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

fn dynamic_to_array<T: Scalar>(img: &DynamicImage, grayscale: bool) -> Array3<T> {
    if grayscale {
        let g = img.to_luma8();
        let (w, h) = g.dimensions();
        Array3::from_shape_fn((h as usize, w as usize, 1), |(y, x, _)| {
            T::from_f64(g.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0)
        })
    } else {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
            T::from_f64(rgb.get_pixel(x as u32, y as u32).0[c] as f64 / 255.0)
        })
    }
}

/// Decode a PNG/JPEG/BMP file and resample it to `target_size` square.
pub fn load_image<T: Scalar>(
    path: impl AsRef<Path>,
    target_size: usize,
    grayscale: bool,
) -> Result<ImageTensor<T>> {
    if target_size == 0 {
        return Err(stylediff_core::Error::invalid("target size must be positive").into());
    }
    let decoded = image::open(path.as_ref())?;
    let native = dynamic_to_array::<T>(&decoded, grayscale);
    let resized = resize_bilinear(&native, target_size, target_size)
        .mapv(|v| v.max(T::zero()).min(T::one()));
    Ok(ImageTensor::new(resized, false)?)
}

/// Decode at native size, no resampling.
pub fn load_image_native<T: Scalar>(
    path: impl AsRef<Path>,
    grayscale: bool,
) -> Result<ImageTensor<T>> {
    let decoded = image::open(path.as_ref())?;
    Ok(ImageTensor::new(dynamic_to_array::<T>(&decoded, grayscale), false)?)
}

/// Write an 8-bit PNG. Quantization is `round(v * 255)` (half away
/// from zero); an `inverted` image is un-inverted first so files are
/// always ink-dark-on-light.
pub fn save_image<T: Scalar>(img: &ImageTensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let writable = if img.is_inverted() { img.invert() } else { img.clone() };
    let px = writable.pixels();
    let (h, w, c) = px.dim();
    let quant = |v: T| (v.to_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
    match c {
        1 => {
            let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                Luma([quant(px[[y as usize, x as usize, 0]])])
            });
            buf.save(path.as_ref())?;
        }
        _ => {
            let buf = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                Rgb([
                    quant(px[[y as usize, x as usize, 0]]),
                    quant(px[[y as usize, x as usize, 1]]),
                    quant(px[[y as usize, x as usize, 2]]),
                ])
            });
            buf.save(path.as_ref())?;
        }
    }
    Ok(())
}
