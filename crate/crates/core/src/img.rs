//! Float image and depth-map containers with PNG / raster I/O.
//!
//! Colors are linear RGB in `[0, 1]`, three `f32` channels, row-major from
//! the top-left pixel. Depth maps are per-pixel camera-frame z in scene
//! units with `f32::INFINITY` marking background.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImgError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("png error: {0}")]
    Png(#[from] image::ImageError),
    #[error("bad magic bytes (expected \"VRSD\")")]
    BadMagic,
    #[error("unsupported depth raster version {0}")]
    UnsupportedVersion(u32),
    #[error("file truncated: expected {expected} data bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
}

/// RGB image, `f32` channels in `[0, 1]`, row-major, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize * 3],
        }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<f32>) -> Result<Self, ImgError> {
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(ImgError::Dimensions(format!(
                "{}x{} image needs {} floats, got {}",
                width,
                height,
                expected,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f32; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [f32; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Rec. 601 luma.
    #[inline]
    pub fn luminance(&self, x: u32, y: u32) -> f32 {
        let [r, g, b] = self.get(x, y);
        0.299 * r + 0.587 * g + 0.114 * b
    }

    /// Copies a `side`-by-`side` block whose top-left pixel is `origin`.
    /// The block must lie fully inside the image.
    pub fn copy_patch(&self, origin: (u32, u32), side: u32) -> Result<Vec<[f32; 3]>, ImgError> {
        if origin.0 + side > self.width || origin.1 + side > self.height {
            return Err(ImgError::Dimensions(format!(
                "patch {side}x{side} at ({}, {}) exceeds image {}x{}",
                origin.0, origin.1, self.width, self.height
            )));
        }
        let mut out = Vec::with_capacity(side as usize * side as usize);
        for dy in 0..side {
            for dx in 0..side {
                out.push(self.get(origin.0 + dx, origin.1 + dy));
            }
        }
        Ok(out)
    }

    /// Writes as 8-bit PNG: each channel is `round(clamp(v, 0, 1) * 255)`.
    pub fn save_png(&self, path: &Path) -> Result<(), ImgError> {
        let mut buf = image::RgbImage::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let [r, g, b] = self.get(x, y);
                buf.put_pixel(x, y, image::Rgb([quantize(r), quantize(g), quantize(b)]));
            }
        }
        buf.save(path)?;
        Ok(())
    }

    /// Reads an 8-bit PNG; channels become `value / 255`.
    pub fn load_png(path: &Path) -> Result<Self, ImgError> {
        let rgb = image::open(path)?.to_rgb8();
        let (width, height) = rgb.dimensions();
        let mut out = Image::new(width, height);
        for y in 0..height {
            for x in 0..width {
                let p = rgb.get_pixel(x, y).0;
                out.set(
                    x,
                    y,
                    [
                        f32::from(p[0]) / 255.0,
                        f32::from(p[1]) / 255.0,
                        f32::from(p[2]) / 255.0,
                    ],
                );
            }
        }
        Ok(out)
    }
}

#[inline]
fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Mean squared error over all pixels and channels of two same-size images.
pub fn mse(a: &Image, b: &Image) -> f64 {
    assert_eq!(
        (a.width, a.height),
        (b.width, b.height),
        "mse needs same-size images"
    );
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = f64::from(x - y);
            d * d
        })
        .sum();
    sum / a.data.len() as f64
}

/// Peak signal-to-noise ratio in dB for `[0, 1]` images: `-10 log10(MSE)`.
pub fn psnr(a: &Image, b: &Image) -> f64 {
    let e = mse(a, b);
    if e == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * e.log10()
    }
}

const DEPTH_MAGIC: &[u8; 4] = b"VRSD";
const DEPTH_VERSION: u32 = 1;

/// Per-pixel camera-frame depth, `f32::INFINITY` on background.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![f32::INFINITY; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, depth: f32) {
        self.data[y as usize * self.width as usize + x as usize] = depth;
    }

    /// Fraction of pixels with finite depth (foreground coverage).
    pub fn foreground_fraction(&self) -> f64 {
        let fg = self.data.iter().filter(|d| d.is_finite()).count();
        fg as f64 / self.data.len() as f64
    }

    /// Writes the raster: 16-byte header (magic "VRSD", version, width,
    /// height, all little-endian u32 after the magic) then row-major
    /// little-endian f32 samples.
    pub fn save(&self, path: &Path) -> Result<(), ImgError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(DEPTH_MAGIC)?;
        w.write_all(&DEPTH_VERSION.to_le_bytes())?;
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.height.to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ImgError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[0..4] != DEPTH_MAGIC {
            return Err(ImgError::BadMagic);
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != DEPTH_VERSION {
            return Err(ImgError::UnsupportedVersion(version));
        }
        let width = u32::from_le_bytes(header[8..12].try_into().unwrap());
        let height = u32::from_le_bytes(header[12..16].try_into().unwrap());
        let expected = width as usize * height as usize * 4;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != expected {
            return Err(ImgError::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_preserves_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut img = Image::new(9, 5);
        for y in 0..5 {
            for x in 0..9 {
                // Exact multiples of 1/255 survive the 8-bit round trip.
                let v = |k: u32| (k % 256) as f32 / 255.0;
                img.set(x, y, [v(x * 31), v(y * 57), v(x + y)]);
            }
        }
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn depth_round_trip_preserves_infinity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.vrsd");
        let mut depth = DepthMap::new(7, 3);
        depth.set(2, 1, 4.25);
        depth.set(6, 2, 0.125);
        depth.save(&path).unwrap();
        let back = DepthMap::load(&path).unwrap();
        assert_eq!(depth, back);
        assert!(back.get(0, 0).is_infinite());
        assert_eq!(back.get(2, 1), 4.25);
    }

    #[test]
    fn depth_load_rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.vrsd");
        let depth = DepthMap::new(4, 4);
        depth.save(&path).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        std::fs::write(&path, &corrupt).unwrap();
        assert!(matches!(DepthMap::load(&path), Err(ImgError::BadMagic)));

        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(
            DepthMap::load(&path),
            Err(ImgError::Truncated { .. })
        ));
    }

    #[test]
    fn psnr_of_identical_images_is_infinite() {
        let img = Image::new(4, 4);
        assert!(psnr(&img, &img).is_infinite());
        let mut off = img.clone();
        off.set(0, 0, [0.1, 0.0, 0.0]);
        let d = f64::from(0.1f32);
        let expected = -10.0 * (d * d / 48.0).log10();
        assert!((psnr(&img, &off) - expected).abs() < 1e-9);
    }
}
