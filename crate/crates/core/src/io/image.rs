use std::path::Path;

use image::{ImageFormat, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::haze::SceneImage;

fn decode_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::format(path, other.to_string()),
    }
}

/// Reads an 8-bit PNG (gray, RGB or RGBA; alpha dropped) into [0,1].
pub fn load_image(path: impl AsRef<Path>) -> Result<SceneImage> {
    let path = path.as_ref();
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    if img.format() != Some(ImageFormat::Png) {
        return Err(Error::format(path, "not a PNG file"));
    }
    let img = img.decode().map_err(|e| decode_error(path, e))?;
    if img.color().bytes_per_pixel() / img.color().channel_count() != 1 {
        return Err(Error::format(
            path,
            format!("unsupported color type {:?}; expected 8-bit", img.color()),
        ));
    }
    let rgb = img.to_rgb8();
    let pixels = rgb.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
    SceneImage::new(rgb.width() as usize, rgb.height() as usize, pixels)
}

/// Quantizes to 8 bits with round-half-to-even.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

/// Writes an 8-bit RGB PNG.
pub fn save_image(image: &SceneImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw = image.pixels().iter().map(|&v| quantize(v)).collect();
    let buf = RgbImage::from_raw(image.width() as u32, image.height() as u32, raw)
        .expect("sized by SceneImage");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| decode_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_to_even() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(2.5 / 255.0), 2);
        assert_eq!(quantize(3.5 / 255.0), 4);
        assert_eq!(quantize(-0.2), 0);
    }
}
