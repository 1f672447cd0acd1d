//! Linear float images and PNG conversion. PNGs are sRGB-encoded.

use std::path::Path;

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

/// sRGB transfer function applied to a linear value in `[0, 1]`.
pub fn linear_to_srgb(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x <= 0.003_130_8 {
        12.92 * x
    } else {
        1.055 * x.powf(1.0 / 2.4) - 0.055
    }
}

pub fn srgb_to_linear(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    if x <= 0.040_45 {
        x / 12.92
    } else {
        ((x + 0.055) / 1.055).powf(2.4)
    }
}

/// Linear RGB image, row-major, three values per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::Dimension(format!(
                "{} values for a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::format(path, e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img
            .into_raw()
            .into_iter()
            .map(|b| srgb_to_linear(b as f64 / 255.0))
            .collect();
        Ok(RgbImage {
            width: w as usize,
            height: h as usize,
            data,
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|&x| to_byte(linear_to_srgb(x))).collect();
        let buf: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| Error::Dimension("image buffer size".into()))?;
        buf.save(path)?;
        Ok(())
    }

    /// The image after a round trip through 8-bit sRGB.
    pub fn quantized(&self) -> Self {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&x| srgb_to_linear(to_byte(linear_to_srgb(x)) as f64 / 255.0))
                .collect(),
        }
    }
}

fn to_byte(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Saves a single-channel mask (values in `[0, 1]`, stored linearly).
pub fn save_mask_png(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().map(|&x| to_byte(x)).collect();
    let buf: ImageBuffer<Luma<u8>, _> = ImageBuffer::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| Error::Dimension("mask buffer size".into()))?;
    buf.save(path)?;
    Ok(())
}

pub fn load_mask_png(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::open(path)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok((w as usize, h as usize, img.into_raw().into_iter().map(|b| b as f64 / 255.0).collect()))
}

/// Writes `data` as little-endian `f32` to `path` and a JSON header with the
/// layout next to it (same name, `.json` extension).
pub fn save_float_raw(path: &Path, width: usize, height: usize, channels: usize, data: &[f64]) -> Result<()> {
    if data.len() != width * height * channels {
        return Err(Error::Dimension(format!(
            "{} values for a {width}x{height}x{channels} buffer",
            data.len()
        )));
    }
    let bytes: Vec<u8> = data.iter().flat_map(|&x| (x as f32).to_le_bytes()).collect();
    crate::util::write_atomic(path, &bytes)?;
    let header = serde_json::json!({
        "width": width,
        "height": height,
        "channels": channels,
        "dtype": "f32le",
        "layout": "row-major, channels innermost",
    });
    crate::util::write_atomic(&path.with_extension("json"), serde_json::to_string_pretty(&header)?.as_bytes())
}

/// Maps unit normals in `[-1, 1]` to colours in `[0, 1]` for display.
pub fn normals_to_rgb(normal: &[f64], alpha: &[f64]) -> Vec<f64> {
    normal
        .chunks_exact(3)
        .zip(alpha)
        .flat_map(|(n, &a)| {
            let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt().max(1e-12);
            let k = if a > 1e-6 { 1.0 } else { 0.0 };
            [0, 1, 2].map(|c| k * (0.5 + 0.5 * n[c] / len))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn srgb_round_trip() {
        for i in 0..=255 {
            let v = i as f64 / 255.0;
            assert!((linear_to_srgb(srgb_to_linear(v)) - v).abs() < 1e-12);
        }
        assert!((linear_to_srgb(0.5) - 0.735_356_983_052_449_2).abs() < 1e-9);
    }

    #[test]
    fn png_round_trip_is_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::new(3, 2, (0..18).map(|i| i as f64 / 17.0).collect()).unwrap();
        let p = dir.path().join("a.png");
        img.save_png(&p).unwrap();
        let back = RgbImage::load_png(&p).unwrap();
        assert_eq!(back, img.quantized());
    }

    #[test]
    fn raw_dump_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("depth.bin");
        save_float_raw(&p, 2, 1, 1, &[1.5, -2.0]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes, [1.5f32.to_le_bytes(), (-2.0f32).to_le_bytes()].concat());
        let header: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("depth.json")).unwrap()).unwrap();
        assert_eq!(header["width"], 2);
        assert!(save_float_raw(&p, 2, 2, 1, &[0.0]).is_err());
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        save_mask_png(&p, 2, 2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let (w, h, v) = load_mask_png(&p).unwrap();
        assert_eq!((w, h), (2, 2));
        assert_eq!(v, vec![0.0, 1.0, 1.0, 0.0]);
    }
}
