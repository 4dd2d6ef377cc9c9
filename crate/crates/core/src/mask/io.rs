//! Mask serialization: 8-bit grayscale PNG and run-length text.
//!
//! The RLE form is `W H n1 n2 ...`: alternating background/foreground run
//! lengths in row-major order, always starting with a (possibly zero)
//! background run.

use std::io::Cursor;
use std::path::Path;

use image::{GrayImage, ImageFormat, Luma, RgbImage};

use super::{BinaryMask, MaskError};

pub fn to_rle(mask: &BinaryMask) -> String {
    let mut out = format!("{} {}", mask.width(), mask.height());
    let mut current = false;
    let mut run = 0usize;
    for bit in mask.to_bools() {
        if bit == current {
            run += 1;
        } else {
            out.push_str(&format!(" {run}"));
            current = bit;
            run = 1;
        }
    }
    if run > 0 {
        out.push_str(&format!(" {run}"));
    }
    out
}

pub fn from_rle(text: &str) -> Result<BinaryMask, MaskError> {
    let mut fields = text.split_ascii_whitespace().map(|t| {
        t.parse::<usize>().map_err(|_| MaskError::Format(format!("bad RLE token {t:?}")))
    });
    let width = fields.next().ok_or_else(|| MaskError::Format("RLE missing width".into()))??;
    let height = fields.next().ok_or_else(|| MaskError::Format("RLE missing height".into()))??;
    let (width, height) = (
        u32::try_from(width).map_err(|_| MaskError::Format("RLE width too large".into()))?,
        u32::try_from(height).map_err(|_| MaskError::Format("RLE height too large".into()))?,
    );
    let mut mask = BinaryMask::empty(width, height)?;
    let total = mask.len();
    let mut pos = 0usize;
    let mut fg = false;
    for run in fields {
        let run = run?;
        if pos + run > total {
            return Err(MaskError::Format(format!("RLE runs exceed {total} pixels")));
        }
        if fg {
            for i in pos..pos + run {
                mask.set((i % width as usize) as u32, (i / width as usize) as u32, true);
            }
        }
        pos += run;
        fg = !fg;
    }
    if pos != total {
        return Err(MaskError::Format(format!("RLE covers {pos} of {total} pixels")));
    }
    Ok(mask)
}

pub fn to_gray(mask: &BinaryMask) -> GrayImage {
    GrayImage::from_fn(mask.width(), mask.height(), |x, y| {
        Luma([if mask.get(x, y) { 255 } else { 0 }])
    })
}

/// Thresholds at 128.
pub fn from_gray(img: &GrayImage) -> Result<BinaryMask, MaskError> {
    BinaryMask::from_fn(img.width(), img.height(), |x, y| img.get_pixel(x, y)[0] >= 128)
}

pub fn encode_png(mask: &BinaryMask) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    to_gray(mask)
        .write_to(&mut buf, ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    buf.into_inner()
}

pub fn decode_png(bytes: &[u8]) -> Result<BinaryMask, MaskError> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| MaskError::Format(e.to_string()))?;
    from_gray(&img.to_luma8())
}

/// Loads a mask from a `.png` file or an RLE text file (any other extension).
pub fn load(path: &Path) -> Result<BinaryMask, MaskError> {
    let bytes = std::fs::read(path).map_err(|e| MaskError::Format(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        decode_png(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|e| MaskError::Format(e.to_string()))?;
        from_rle(text.trim())
    }
}

pub fn save(mask: &BinaryMask, path: &Path) -> std::io::Result<()> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        std::fs::write(path, encode_png(mask))
    } else {
        std::fs::write(path, to_rle(mask) + "\n")
    }
}

/// The image with `mask` alpha-blended at 0.5 in `color`.
pub fn overlay(image: &RgbImage, mask: &BinaryMask, color: [u8; 3]) -> Result<RgbImage, MaskError> {
    if image.dimensions() != mask.dims() {
        let (w, h) = image.dimensions();
        return Err(MaskError::DimensionMismatch(w, h, mask.width(), mask.height()));
    }
    let mut out = image.clone();
    for (x, y) in mask.iter_set() {
        let p = out.get_pixel_mut(x, y);
        for c in 0..3 {
            p[c] = (p[c] as u16 + color[c] as u16).div_ceil(2) as u8;
        }
    }
    Ok(out)
}
