//! Headerless `.RAW` sensor dumps and 8-bit PNG export.
//!
//! Two layouts are supported, both storing one 10-bit sample per 2 bytes:
//!
//! * **3CCD**: three full planes, every red value first, then green, then
//!   blue, row-major within a plane. `width * height * 3 * 2` bytes.
//! * **QxQ**: a single CFA plane, row-major. `width * height * 2` bytes.
//!
//! Neither file carries its dimensions, so width and height are supplied by
//! the caller. Samples are little-endian unless [`ByteOrder::Big`] is asked for.

use std::path::Path;

use crate::cfa::{CfaSpec, MosaicImage};
use crate::error::{Error, Result};
use crate::image::RgbImage;

/// Sensor dark offset present in both dump formats.
pub const DEFAULT_BLACK_LEVEL: u16 = 64;
/// Largest 10-bit count.
pub const MAX_SAMPLE: u16 = 1023;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ByteOrder {
    #[default]
    Little,
    Big,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raw3ccdFrame {
    pub width: usize,
    pub height: usize,
    /// R, G, B planes of raw counts.
    pub planes: [Vec<u16>; 3],
    pub black_level: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawQxqFrame {
    pub width: usize,
    pub height: usize,
    pub plane: Vec<u16>,
    pub black_level: u16,
    pub cfa: CfaSpec,
}

fn expected_len(width: usize, height: usize, planes: usize) -> Result<usize> {
    width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(planes * 2))
        .ok_or_else(|| Error::Format(format!("frame {width}x{height} overflows addressable size")))
}

fn read_samples(bytes: &[u8], order: ByteOrder) -> Result<Vec<u16>> {
    let mut out = Vec::with_capacity(bytes.len() / 2);
    for (i, pair) in bytes.chunks_exact(2).enumerate() {
        let v = match order {
            ByteOrder::Little => u16::from_le_bytes([pair[0], pair[1]]),
            ByteOrder::Big => u16::from_be_bytes([pair[0], pair[1]]),
        };
        if v > MAX_SAMPLE {
            return Err(Error::Range(format!(
                "sample {i} is {v}, above the 10-bit maximum {MAX_SAMPLE}"
            )));
        }
        out.push(v);
    }
    Ok(out)
}

fn write_samples(samples: &[u16], order: ByteOrder, out: &mut Vec<u8>) -> Result<()> {
    for (i, &v) in samples.iter().enumerate() {
        if v > MAX_SAMPLE {
            return Err(Error::Range(format!(
                "sample {i} is {v}, above the 10-bit maximum {MAX_SAMPLE}"
            )));
        }
        let b = match order {
            ByteOrder::Little => v.to_le_bytes(),
            ByteOrder::Big => v.to_be_bytes(),
        };
        out.extend_from_slice(&b);
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: usize, what: &str) -> Result<()> {
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{what} expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    Ok(())
}

pub fn decode_3ccd(bytes: &[u8], width: usize, height: usize) -> Result<Raw3ccdFrame> {
    decode_3ccd_with(bytes, width, height, ByteOrder::Little)
}

pub fn decode_3ccd_with(
    bytes: &[u8],
    width: usize,
    height: usize,
    order: ByteOrder,
) -> Result<Raw3ccdFrame> {
    check_len(bytes, expected_len(width, height, 3)?, "3CCD frame")?;
    let n = width * height;
    let mut all = read_samples(bytes, order)?;
    let b = all.split_off(2 * n);
    let g = all.split_off(n);
    Ok(Raw3ccdFrame {
        width,
        height,
        planes: [all, g, b],
        black_level: DEFAULT_BLACK_LEVEL,
    })
}

pub fn decode_qxq(bytes: &[u8], width: usize, height: usize, cfa: CfaSpec) -> Result<RawQxqFrame> {
    decode_qxq_with(bytes, width, height, cfa, ByteOrder::Little)
}

pub fn decode_qxq_with(
    bytes: &[u8],
    width: usize,
    height: usize,
    cfa: CfaSpec,
    order: ByteOrder,
) -> Result<RawQxqFrame> {
    check_len(bytes, expected_len(width, height, 1)?, "QxQ frame")?;
    Ok(RawQxqFrame {
        width,
        height,
        plane: read_samples(bytes, order)?,
        black_level: DEFAULT_BLACK_LEVEL,
        cfa,
    })
}

pub fn encode_3ccd(frame: &Raw3ccdFrame) -> Result<Vec<u8>> {
    encode_3ccd_with(frame, ByteOrder::Little)
}

pub fn encode_3ccd_with(frame: &Raw3ccdFrame, order: ByteOrder) -> Result<Vec<u8>> {
    let n = frame.width * frame.height;
    let mut out = Vec::with_capacity(expected_len(frame.width, frame.height, 3)?);
    for plane in &frame.planes {
        if plane.len() != n {
            return Err(Error::Format(format!(
                "3CCD plane holds {} samples, frame needs {n}",
                plane.len()
            )));
        }
        write_samples(plane, order, &mut out)?;
    }
    Ok(out)
}

pub fn encode_qxq(frame: &RawQxqFrame) -> Result<Vec<u8>> {
    encode_qxq_with(frame, ByteOrder::Little)
}

pub fn encode_qxq_with(frame: &RawQxqFrame, order: ByteOrder) -> Result<Vec<u8>> {
    let n = frame.width * frame.height;
    if frame.plane.len() != n {
        return Err(Error::Format(format!(
            "QxQ plane holds {} samples, frame needs {n}",
            frame.plane.len()
        )));
    }
    let mut out = Vec::with_capacity(2 * n);
    write_samples(&frame.plane, order, &mut out)?;
    Ok(out)
}

/// `max(sample - offset, 0) / (1023 - offset)`, so `offset` maps to 0 and
/// full scale maps to exactly 1.
pub fn black_level_compensate(samples: &[u16], offset: u16) -> Result<Vec<f32>> {
    if offset >= MAX_SAMPLE {
        return Err(Error::Param(format!(
            "black level {offset} leaves no range below {MAX_SAMPLE}"
        )));
    }
    let scale = f32::from(MAX_SAMPLE - offset);
    Ok(samples
        .iter()
        .map(|&s| f32::from(s.saturating_sub(offset)) / scale)
        .collect())
}

impl Raw3ccdFrame {
    /// Black-level compensated, normalized RGB.
    pub fn to_rgb(&self) -> Result<RgbImage> {
        let mut data = Vec::with_capacity(3 * self.width * self.height);
        for plane in &self.planes {
            data.extend(black_level_compensate(plane, self.black_level)?);
        }
        RgbImage::new(self.width, self.height, data)
    }
}

impl RawQxqFrame {
    /// Black-level compensated, normalized mosaic.
    pub fn to_mosaic(&self) -> Result<MosaicImage> {
        let data = black_level_compensate(&self.plane, self.black_level)?;
        MosaicImage::new(self.width, self.height, data, self.cfa)
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

#[inline]
fn quantize8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write an 8-bit RGB PNG using `round(v * 255)`.
pub fn export_png8(image: &RgbImage, path: &Path) -> Result<()> {
    let (w, h) = (image.width(), image.height());
    let mut buf = Vec::with_capacity(3 * w * h);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                buf.push(quantize8(image.get(c, x, y)));
            }
        }
    }
    image::save_buffer(path, &buf, w as u32, h as u32, image::ColorType::Rgb8)
        .map_err(|e| map_image_err(path, e))
}

/// Write a single-channel 8-bit PNG.
pub fn export_gray_png8(data: &[f32], width: usize, height: usize, path: &Path) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::Shape(format!(
            "gray plane {width}x{height} needs {} samples, got {}",
            width * height,
            data.len()
        )));
    }
    let buf: Vec<u8> = data.iter().map(|&v| quantize8(v)).collect();
    image::save_buffer(path, &buf, width as u32, height as u32, image::ColorType::L8)
        .map_err(|e| map_image_err(path, e))
}

/// Load any PNG as normalized RGB (8- or 16-bit sources).
pub fn read_png(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| map_image_err(path, e))?;
    let rgb = img.to_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.into_raw();
    Ok(RgbImage::from_fn(w, h, |c, x, y| raw[(y * w + x) * 3 + c]))
}

fn map_image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}
