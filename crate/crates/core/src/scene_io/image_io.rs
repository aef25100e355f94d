//! 8-bit PNG reading and writing.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::render::Image;
use crate::saliency::SliceImage;

/// Round-to-nearest 8-bit quantization of a value in `[0, 1]`.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Load(format!("{}: {other}", path.display())),
    }
}

pub fn write_png(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data.iter().map(|v| quantize(*v)).collect();
    let buf: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(img.width, img.height, bytes)
        .ok_or_else(|| Error::Usage(format!("image buffer does not match {}x{}", img.width, img.height)))?;
    buf.save(path).map_err(|e| image_error(path, e))
}

pub fn write_gray_png(img: &SliceImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img.data.iter().map(|v| quantize(*v)).collect();
    let buf: ImageBuffer<Luma<u8>, _> = ImageBuffer::from_raw(img.width as u32, img.height as u32, bytes)
        .ok_or_else(|| Error::Usage(format!("slice buffer does not match {}x{}", img.width, img.height)))?;
    buf.save(path).map_err(|e| image_error(path, e))
}

/// Reads any PNG as RGB in `[0, 1]`, ignoring alpha.
pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
    read_png_over(path, None)
}

/// Reads a PNG and composites it over `background` when it carries alpha.
pub fn read_png_over(path: impl AsRef<Path>, background: Option<[f32; 3]>) -> Result<Image> {
    let path = path.as_ref();
    let decoded = image::open(path).map_err(|e| image_error(path, e))?;
    let rgba = decoded.to_rgba8();
    let (w, h) = rgba.dimensions();
    let mut img = Image::new(w, h);
    for (dst, px) in img.data.chunks_exact_mut(3).zip(rgba.pixels()) {
        let a = px[3] as f32 / 255.0;
        for c in 0..3 {
            let v = px[c] as f32 / 255.0;
            dst[c] = match background {
                Some(bg) => v * a + bg[c] * (1.0 - a),
                None => v,
            };
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quantization_endpoints() {
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(-0.2), 0);
    }

    #[test]
    fn round_trip_within_half_a_level() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut img = Image::new(7, 5);
        img.data.iter_mut().for_each(|v| *v = rng.gen());
        img.data[0] = 0.5;
        write_png(&img, &path).unwrap();
        let back = read_png(&path).unwrap();
        assert_eq!(back.data[0], 128.0 / 255.0);
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-7);
        }
    }

    #[test]
    fn transparent_pixel_takes_background() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let buf: ImageBuffer<image::Rgba<u8>, _> = ImageBuffer::from_raw(1, 1, vec![255u8, 0, 0, 0]).unwrap();
        buf.save(&path).unwrap();
        let img = read_png_over(&path, Some([1.0, 1.0, 1.0])).unwrap();
        assert_eq!(img.pixel(0, 0), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_png("/nonexistent/nothing.png").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
