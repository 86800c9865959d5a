//! 8-bit PGM/PPM frames and raw 12-bit Bayer mosaics.
//!
//! `PIPB` raw layout, little-endian: 16-byte header (`b"PIPB"`, width u32,
//! height u32, bit_depth u32) followed by `width * height` u16 samples in
//! row-major order. The mosaic is RGGB.

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, GrayImage, ImageEncoder, ImageFormat};

use crate::bnn::{BinaryTensor, Image};
use crate::error::{Error, Result};

pub const BAYER_MAGIC: [u8; 4] = *b"PIPB";

/// Reads a binary or ASCII PGM (one channel) or PPM (three channels),
/// normalized to `[0, 1]`.
pub fn load_pnm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Pnm)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    Ok(from_dynamic(&img))
}

fn from_dynamic(img: &DynamicImage) -> Image {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().channel_count() < 3 {
        let g = img.to_luma8();
        let data = g.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
        Image::new(1, h, w, data).expect("dims match")
    } else {
        let rgb = img.to_rgb8();
        let raw = rgb.as_raw();
        let mut data = vec![0.0; 3 * h * w];
        for (i, px) in raw.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * h * w + i] = px[c] as f64 / 255.0;
            }
        }
        Image::new(3, h, w, data).expect("dims match")
    }
}

/// Encodes a binary map as a PGM with channels stacked vertically
/// (`h * c` rows, `w` columns); set bits are white.
pub fn feature_map_pgm(bits: &BinaryTensor) -> Result<Vec<u8>> {
    let (c, h, w) = bits.dims;
    let pixels = bits.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
    let img = GrayImage::from_raw(w as u32, (c * h) as u32, pixels)
        .ok_or_else(|| Error::Image("feature map dimensions overflow".into()))?;
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::L8)
        .map_err(|e| Error::Image(e.to_string()))?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BayerFrame {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u32,
    pub samples: Vec<u16>,
}

impl BayerFrame {
    pub fn new(width: usize, height: usize, bit_depth: u32, samples: Vec<u16>) -> Result<Self> {
        if !(1..=16).contains(&bit_depth) {
            return Err(Error::Image(format!("bit depth {bit_depth} outside 1..=16")));
        }
        if samples.len() != width * height {
            return Err(Error::Shape {
                expected: format!("{width}x{height} samples"),
                actual: format!("{}", samples.len()),
            });
        }
        let max = (1u32 << bit_depth) - 1;
        if let Some(i) = samples.iter().position(|&s| s as u32 > max) {
            return Err(Error::Image(format!(
                "sample {} at index {i} exceeds {bit_depth}-bit range",
                samples[i]
            )));
        }
        Ok(Self {
            width,
            height,
            bit_depth,
            samples,
        })
    }

    fn full_scale(&self) -> f64 {
        ((1u32 << self.bit_depth) - 1) as f64
    }

    /// RGGB color of site `(y, x)`: 0 red, 1 green, 2 blue.
    pub fn color_at(y: usize, x: usize) -> usize {
        match (y % 2, x % 2) {
            (0, 0) => 0,
            (1, 1) => 2,
            _ => 1,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 2 * self.samples.len());
        out.extend_from_slice(&BAYER_MAGIC);
        for v in [self.width as u32, self.height as u32, self.bit_depth] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for s in &self.samples {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    pub fn decode(buf: &[u8]) -> Result<Self> {
        if buf.len() < 16 {
            return Err(Error::Image("raw Bayer header truncated".into()));
        }
        if buf[..4] != BAYER_MAGIC {
            return Err(Error::Image("bad raw Bayer magic, expected \"PIPB\"".into()));
        }
        let word = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().unwrap()) as usize;
        let (width, height, depth) = (word(4), word(8), word(12) as u32);
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Error::Image("raw Bayer dimensions overflow".into()))?;
        let body = &buf[16..];
        if body.len() != 2 * n {
            return Err(Error::Image(format!(
                "raw Bayer body is {} bytes, expected {}",
                body.len(),
                2 * n
            )));
        }
        let samples = body.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        Self::new(width, height, depth, samples)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }
}

/// Bilinear RGGB demosaic to a normalized `3 x h x w` image. Each missing
/// color is the mean of the same-color sites in the 3x3 neighborhood.
pub fn demosaic(frame: &BayerFrame) -> Result<Image> {
    let (w, h) = (frame.width, frame.height);
    if w == 0 || h == 0 || w % 2 != 0 || h % 2 != 0 {
        return Err(Error::Image(format!(
            "demosaic needs even, non-zero dimensions (got {w}x{h})"
        )));
    }
    let scale = frame.full_scale();
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let mut sum = [0.0f64; 3];
            let mut count = [0u32; 3];
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let c = BayerFrame::color_at(ny, nx);
                    sum[c] += frame.samples[ny * w + nx] as f64;
                    count[c] += 1;
                }
            }
            let native = BayerFrame::color_at(y, x);
            for c in 0..3 {
                let v = if c == native {
                    frame.samples[y * w + x] as f64
                } else {
                    sum[c] / count[c] as f64
                };
                data[(c * h + y) * w + x] = v / scale;
            }
        }
    }
    Image::new(3, h, w, data)
}

/// Loads a frame by extension: `.pipb` raw Bayer (demosaiced), otherwise
/// PGM/PPM.
pub fn load_frame(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("pipb") => demosaic(&BayerFrame::load(path)?),
        _ => load_pnm(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::RgbImage;

    fn mosaic(w: usize, h: usize, rgb: [u16; 3]) -> BayerFrame {
        let samples = (0..h)
            .flat_map(|y| (0..w).map(move |x| rgb[BayerFrame::color_at(y, x)]))
            .collect();
        BayerFrame::new(w, h, 12, samples).unwrap()
    }

    #[test]
    fn uniform_gray_stays_gray() {
        let img = demosaic(&mosaic(8, 6, [2048; 3])).unwrap();
        assert!(img.data.iter().all(|&v| (v - 2048.0 / 4095.0).abs() < 1e-12));
    }

    #[test]
    fn pure_red_scene() {
        let img = demosaic(&mosaic(10, 10, [4095, 0, 0])).unwrap();
        for y in 1..9 {
            for x in 1..9 {
                assert_eq!(img.at(0, y, x), 1.0);
                assert!(img.at(1, y, x) < 1e-12);
                assert!(img.at(2, y, x) < 1e-12);
            }
        }
    }

    #[test]
    fn interior_green_is_four_neighbor_mean() {
        let mut f = mosaic(6, 6, [0, 0, 0]);
        // green neighbors of red site (2, 2)
        for (y, x, v) in [(1, 2, 100), (3, 2, 200), (2, 1, 300), (2, 3, 400)] {
            f.samples[y * 6 + x] = v;
        }
        let img = demosaic(&f).unwrap();
        assert!((img.at(1, 2, 2) - 250.0 / 4095.0).abs() < 1e-12);
    }

    #[test]
    fn full_scale_maps_to_one() {
        let img = demosaic(&mosaic(2, 2, [4095; 3])).unwrap();
        assert!(img.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn odd_dims_are_rejected() {
        assert!(demosaic(&BayerFrame::new(3, 2, 12, vec![0; 6]).unwrap()).is_err());
    }

    #[test]
    fn out_of_range_samples_are_rejected() {
        assert!(BayerFrame::new(2, 1, 12, vec![0, 4096]).is_err());
    }

    #[test]
    fn raw_round_trip() {
        let f = mosaic(4, 2, [1, 2, 3]);
        let b = f.encode();
        assert_eq!(b.len(), 16 + 16);
        assert_eq!(BayerFrame::decode(&b).unwrap(), f);
        assert!(BayerFrame::decode(&b[..20]).is_err());
    }

    #[test]
    fn ppm_loads_channel_major() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ppm");
        let mut rgb = RgbImage::new(2, 1);
        rgb.put_pixel(0, 0, image::Rgb([255, 0, 51]));
        rgb.put_pixel(1, 0, image::Rgb([0, 255, 0]));
        rgb.save_with_format(&p, ImageFormat::Pnm).unwrap();
        let img = load_frame(&p).unwrap();
        assert_eq!((img.channels, img.height, img.width), (3, 1, 2));
        assert_eq!(img.at(0, 0, 0), 1.0);
        assert_eq!(img.at(2, 0, 0), 0.2);
        assert_eq!(img.at(1, 0, 1), 1.0);
    }

    #[test]
    fn feature_map_is_a_pgm() {
        let mut bits = BinaryTensor::zeros((2, 2, 3));
        bits.bits[4] = true;
        let pgm = feature_map_pgm(&bits).unwrap();
        assert!(pgm.starts_with(b"P5"));
        let back = image::load_from_memory_with_format(&pgm, ImageFormat::Pnm)
            .unwrap()
            .to_luma8();
        assert_eq!((back.width(), back.height()), (3, 4));
        assert_eq!(back.get_pixel(1, 1).0[0], 255);
    }
}
