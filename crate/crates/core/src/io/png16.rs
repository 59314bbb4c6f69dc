use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};

/// Loads a 16-bit single-channel PNG. Any other pixel format is an error.
pub fn load_png16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = image::open(path).map_err(|e| Error::format(path, format!("cannot read PNG: {e}")))?;
    match img {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            Ok((w, h, buf.into_raw()))
        }
        other => Err(Error::format(
            path,
            format!("expected 16-bit grayscale PNG, found {:?}", other.color()),
        )),
    }
}

/// Loads a grayscale PNG of either bit depth, widening 8-bit values.
/// Used for binary coverage masks where only zero/non-zero matters.
pub fn load_png16_or_8(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = image::open(path).map_err(|e| Error::format(path, format!("cannot read PNG: {e}")))?;
    match img {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            Ok((w, h, buf.into_raw()))
        }
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            Ok((w, h, buf.into_raw().into_iter().map(u16::from).collect()))
        }
        other => Err(Error::format(
            path,
            format!("expected grayscale PNG, found {:?}", other.color()),
        )),
    }
}

/// Writes a 16-bit single-channel PNG.
pub fn save_png16(path: &Path, width: usize, height: usize, values: &[u16]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::invalid("pixel buffer size mismatch"));
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, values.to_vec())
            .ok_or_else(|| Error::invalid("pixel buffer size mismatch"))?;
    buf.save(path)
        .map_err(|e| Error::format(path, format!("cannot write PNG: {e}")))
}

/// Depth images store millimeters in 16 bits; 0 stays the invalid marker.
pub fn depth_to_u16(meters: f64) -> u16 {
    if meters <= 0.0 {
        return 0;
    }
    let mm = (meters * 1000.0).round();
    if mm >= u16::MAX as f64 {
        u16::MAX
    } else {
        mm as u16
    }
}

pub fn depth_from_u16(mm: u16) -> f64 {
    mm as f64 / 1000.0
}
