//! PNG/PPM decoding into linear rasters and 16-bit PNG encoding.

use std::io::Cursor;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageBuffer, ImageEncoder, Luma};

use crate::error::{Error, Result};
use crate::raster::{Gray, Rgb};

/// Transfer curve of stored pixel values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transfer {
    Linear,
    Gamma(f32),
}

impl Transfer {
    pub fn to_linear(self, v: f32) -> f32 {
        match self {
            Transfer::Linear => v,
            Transfer::Gamma(g) => v.max(0.0).powf(g),
        }
    }
}

fn codec_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn read_rgb(path: &Path, transfer: Transfer) -> Result<Rgb> {
    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| codec_err(path, e))?
        .to_rgb32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| {
            [
                transfer.to_linear(p.0[0]),
                transfer.to_linear(p.0[1]),
                transfer.to_linear(p.0[2]),
            ]
        })
        .collect();
    Ok(Rgb::from_vec(w, h, data))
}

#[inline]
pub fn quantize16(v: f32) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

#[inline]
pub fn dequantize16(v: u16) -> f32 {
    v as f32 / 65535.0
}

fn encode_png(buf: &[u8], w: usize, h: usize, color: ExtendedColorType) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(
        Cursor::new(&mut out),
        CompressionType::Best,
        FilterType::Adaptive,
    )
    .write_image(buf, w as u32, h as u32, color)
    .map_err(|e| codec_err(Path::new("<png>"), e))?;
    Ok(out)
}

/// The encoder takes 16-bit samples in native byte order.
fn u16s_to_bytes(values: impl Iterator<Item = u16>) -> Vec<u8> {
    values.flat_map(|v| v.to_ne_bytes()).collect()
}

/// 16-bit RGB PNG of linear values clamped to [0,1].
pub fn encode_rgb16(img: &Rgb) -> Result<Vec<u8>> {
    let bytes = u16s_to_bytes(img.data().iter().flat_map(|p| p.map(quantize16)));
    encode_png(&bytes, img.width(), img.height(), ExtendedColorType::Rgb16)
}

/// 16-bit grayscale PNG of raw `u16` samples.
pub fn encode_gray16(w: usize, h: usize, samples: &[u16]) -> Result<Vec<u8>> {
    let bytes = u16s_to_bytes(samples.iter().copied());
    encode_png(&bytes, w, h, ExtendedColorType::L16)
}

pub fn encode_gray16_unit(img: &Gray) -> Result<Vec<u8>> {
    let samples: Vec<u16> = img.data().iter().map(|&v| quantize16(v)).collect();
    encode_gray16(img.width(), img.height(), &samples)
}

pub fn write_rgb16(path: &Path, img: &Rgb) -> Result<()> {
    std::fs::write(path, encode_rgb16(img)?)?;
    Ok(())
}

pub fn decode_gray16(bytes: &[u8], what: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| codec_err(what, e))?;
    let g: ImageBuffer<Luma<u16>, Vec<u16>> = match img {
        image::DynamicImage::ImageLuma16(g) => g,
        other => other.to_luma16(),
    };
    Ok((g.width() as usize, g.height() as usize, g.into_raw()))
}

pub fn decode_rgb16(bytes: &[u8], what: &Path) -> Result<(usize, usize, Vec<[u16; 3]>)> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| codec_err(what, e))?;
    let rgb = match img {
        image::DynamicImage::ImageRgb16(b) => b,
        other => other.to_rgb16(),
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Ok((w, h, rgb.pixels().map(|p| p.0).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb16_png_round_trip_is_exact_on_the_16_bit_grid() {
        let img = Rgb::from_fn(7, 5, |x, y| {
            [
                dequantize16((x * 9000) as u16),
                dequantize16((y * 12000) as u16),
                dequantize16(65535),
            ]
        });
        let bytes = encode_rgb16(&img).unwrap();
        let (w, h, px) = decode_rgb16(&bytes, Path::new("t")).unwrap();
        assert_eq!((w, h), (7, 5));
        for (a, b) in img.data().iter().zip(&px) {
            assert_eq!(a.map(quantize16), *b);
        }
    }

    #[test]
    fn gamma_transfer_linearizes() {
        assert!((Transfer::Gamma(2.2).to_linear(0.5) - 0.5f32.powf(2.2)).abs() < 1e-7);
        assert_eq!(Transfer::Linear.to_linear(0.3), 0.3);
    }
}
