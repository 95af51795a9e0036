//! Color filter array geometry, mosaicking, input packing and the bilinear
//! baseline demosaicer.
//!
//! A [`CfaSpec`] is a 2x2 Bayer macro pattern whose cells are blown up to
//! `group_size x group_size` same-color photosites: 1 is standard Bayer,
//! 2 Quad, 3 Nona and 4 the QxQ layout. The spatial period is therefore
//! `2 * group_size` along both axes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    R,
    G,
    B,
}

impl Channel {
    pub fn index(self) -> usize {
        match self {
            Channel::R => 0,
            Channel::G => 1,
            Channel::B => 2,
        }
    }

    fn from_char(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'R' => Some(Channel::R),
            'G' => Some(Channel::G),
            'B' => Some(Channel::B),
            _ => None,
        }
    }

    fn as_char(self) -> char {
        match self {
            Channel::R => 'R',
            Channel::G => 'G',
            Channel::B => 'B',
        }
    }
}

/// CFA layout. Serialized as `{ group_size = 4, macro_pattern = "RGGB" }`
/// in config files and as `4,RGGB` on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CfaRepr", into = "CfaRepr")]
pub struct CfaSpec {
    group_size: usize,
    pattern: [[Channel; 2]; 2],
}

#[derive(Serialize, Deserialize)]
struct CfaRepr {
    group_size: usize,
    macro_pattern: String,
}

impl TryFrom<CfaRepr> for CfaSpec {
    type Error = Error;
    fn try_from(r: CfaRepr) -> Result<Self> {
        CfaSpec::new(r.group_size, &r.macro_pattern)
    }
}

impl From<CfaSpec> for CfaRepr {
    fn from(c: CfaSpec) -> Self {
        CfaRepr {
            group_size: c.group_size,
            macro_pattern: c.pattern_name(),
        }
    }
}

/// The four Bayer phases.
pub const MACRO_PHASES: [&str; 4] = ["RGGB", "GRBG", "GBRG", "BGGR"];

impl CfaSpec {
    /// `pattern` lists the macro cell row-major, e.g. `"RGGB"`.
    pub fn new(group_size: usize, pattern: &str) -> Result<Self> {
        if group_size == 0 {
            return Err(Error::Config("CFA group size must be at least 1".into()));
        }
        let cells: Vec<Channel> = pattern
            .chars()
            .map(|c| {
                Channel::from_char(c)
                    .ok_or_else(|| Error::Config(format!("bad CFA color {c:?} in {pattern:?}")))
            })
            .collect::<Result<_>>()?;
        if cells.len() != 4 {
            return Err(Error::Config(format!(
                "CFA macro pattern needs 4 colors, got {pattern:?}"
            )));
        }
        let count = |ch| cells.iter().filter(|&&c| c == ch).count();
        if count(Channel::R) != 1 || count(Channel::B) != 1 || count(Channel::G) != 2 {
            return Err(Error::Config(format!(
                "CFA macro pattern {pattern:?} must hold one R, one B and two G"
            )));
        }
        Ok(Self {
            group_size,
            pattern: [[cells[0], cells[1]], [cells[2], cells[3]]],
        })
    }

    pub fn bayer() -> Self {
        Self::new(1, "RGGB").unwrap()
    }

    pub fn qxq() -> Self {
        Self::new(4, "RGGB").unwrap()
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn period(&self) -> usize {
        2 * self.group_size
    }

    pub fn pattern_name(&self) -> String {
        self.pattern.iter().flatten().map(|c| c.as_char()).collect()
    }

    #[inline]
    pub fn color_at(&self, x: usize, y: usize) -> Channel {
        let g = self.group_size;
        self.pattern[(y / g) % 2][(x / g) % 2]
    }

    pub fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        let p = self.period();
        if !width.is_multiple_of(p) || !height.is_multiple_of(p) || width == 0 || height == 0 {
            return Err(Error::Geometry(format!(
                "{width}x{height} is not a positive multiple of the CFA period {p}"
            )));
        }
        Ok(())
    }
}

impl Default for CfaSpec {
    fn default() -> Self {
        Self::qxq()
    }
}

impl fmt::Display for CfaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.group_size, self.pattern_name())
    }
}

impl FromStr for CfaSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (g, p) = s
            .split_once(',')
            .ok_or_else(|| Error::Config(format!("CFA spec {s:?} should look like `4,RGGB`")))?;
        let g = g
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad CFA group size in {s:?}")))?;
        CfaSpec::new(g, p.trim())
    }
}

/// Single-channel CFA frame with samples normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MosaicImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
    cfa: CfaSpec,
}

impl MosaicImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>, cfa: CfaSpec) -> Result<Self> {
        cfa.check_dims(width, height)?;
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "mosaic {width}x{height} needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
            cfa,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cfa(&self) -> CfaSpec {
        self.cfa
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Window copy; origin and size must stay aligned to the CFA period so
    /// the crop keeps the same phase.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<MosaicImage> {
        let p = self.cfa.period();
        if !x0.is_multiple_of(p) || !y0.is_multiple_of(p) {
            return Err(Error::Geometry(format!(
                "crop origin ({x0},{y0}) is not aligned to the CFA period {p}"
            )));
        }
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Geometry(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{} mosaic",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        MosaicImage::new(w, h, data, self.cfa)
    }

    /// Largest centered crop whose sides are multiples of `multiple`
    /// (which must itself be a multiple of the CFA period).
    pub fn center_crop(&self, multiple: usize) -> Result<MosaicImage> {
        let p = self.cfa.period();
        if multiple == 0 || !multiple.is_multiple_of(p) {
            return Err(Error::Geometry(format!(
                "crop multiple {multiple} must be a multiple of the CFA period {p}"
            )));
        }
        let w = self.width / multiple * multiple;
        let h = self.height / multiple * multiple;
        if w == 0 || h == 0 {
            return Err(Error::Geometry(format!(
                "{}x{} mosaic is smaller than {multiple}",
                self.width, self.height
            )));
        }
        let x0 = (self.width - w) / 2 / p * p;
        let y0 = (self.height - h) / 2 / p * p;
        self.crop(x0, y0, w, h)
    }
}

/// Sample each pixel's CFA-selected channel.
pub fn mosaic(rgb: &RgbImage, cfa: CfaSpec) -> Result<MosaicImage> {
    let (w, h) = (rgb.width(), rgb.height());
    cfa.check_dims(w, h)?;
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            data.push(rgb.get(cfa.color_at(x, y).index(), x, y));
        }
    }
    MosaicImage::new(w, h, data, cfa)
}

/// The mosaic as one full-resolution channel, shape `(1, 1, H, W)`.
pub fn gray_image(m: &MosaicImage) -> Tensor {
    Tensor::constant([1, 1, m.height, m.width], m.data.clone())
}

/// Pack 2x2 neighborhoods into 4 channels at half resolution: channel `k`
/// at `(i, j)` is the input at `(2i + k / 2, 2j + k % 2)`.
pub fn space_to_depth(m: &MosaicImage) -> Result<Tensor> {
    gray_image(m).pixel_unshuffle(2)
}

/// Inverse of [`space_to_depth`] on a `(1, 4, h, w)` tensor.
pub fn depth_to_space(t: &Tensor, cfa: CfaSpec) -> Result<MosaicImage> {
    let s = t.shape();
    if s[0] != 1 || s[1] != 4 {
        return Err(Error::Shape(format!(
            "depth_to_space expects (1,4,h,w), got {s:?}"
        )));
    }
    let plane = t.pixel_shuffle(2)?;
    MosaicImage::new(2 * s[3], 2 * s[2], plane.to_vec(), cfa)
}

/// Space-to-depth on a raw plane; rejects odd dimensions.
pub fn space_to_depth_plane(data: &[f32], width: usize, height: usize) -> Result<Vec<f32>> {
    if !width.is_multiple_of(2) || !height.is_multiple_of(2) || data.len() != width * height {
        return Err(Error::Geometry(format!(
            "space_to_depth needs even dimensions, got {width}x{height}"
        )));
    }
    let t = Tensor::constant([1, 1, height, width], data.to_vec());
    Ok(t.pixel_unshuffle(2)?.to_vec())
}

#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Per-channel bilinear interpolation.
///
/// Each channel is reconstructed by normalized convolution of its sampled
/// positions with a separable tent of half-width `2 * group_size` (for
/// standard Bayer this is the textbook bilinear stencil). Borders are
/// mirror padded. Sampled positions are passed through untouched.
pub fn classical_demosaic(m: &MosaicImage) -> RgbImage {
    let (w, h) = (m.width, m.height);
    let g = m.cfa.group_size as isize;
    let r = 2 * g - 1;
    let taps: Vec<(isize, f64)> = (-r..=r)
        .map(|d| (d, (2 * g - d.abs()) as f64 / (2 * g) as f64))
        .collect();

    let mut out = RgbImage::filled(w, h, [0.0; 3]);
    let mut num_h = vec![0.0f64; w * h];
    let mut den_h = vec![0.0f64; w * h];
    for ch in [Channel::R, Channel::G, Channel::B] {
        for y in 0..h {
            for x in 0..w {
                let (mut num, mut den) = (0.0, 0.0);
                for &(d, wt) in &taps {
                    let sx = reflect(x as isize + d, w);
                    if m.cfa.color_at(sx, y) == ch {
                        num += wt * f64::from(m.get(sx, y));
                        den += wt;
                    }
                }
                num_h[y * w + x] = num;
                den_h[y * w + x] = den;
            }
        }
        let c = ch.index();
        for y in 0..h {
            for x in 0..w {
                if m.cfa.color_at(x, y) == ch {
                    out.set(c, x, y, m.get(x, y));
                    continue;
                }
                let (mut num, mut den) = (0.0, 0.0);
                for &(d, wt) in &taps {
                    let sy = reflect(y as isize + d, h);
                    num += wt * num_h[sy * w + x];
                    den += wt * den_h[sy * w + x];
                }
                out.set(c, x, y, (num / den) as f32);
            }
        }
    }
    out
}

/// Largest distance from a pixel that [`classical_demosaic`] reads.
pub fn classical_radius(cfa: CfaSpec) -> usize {
    2 * cfa.group_size - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qxq_groups() {
        let cfa = CfaSpec::qxq();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(cfa.color_at(x, y), Channel::R);
            }
        }
        assert_eq!(cfa.color_at(4, 0), Channel::G);
        assert_eq!(cfa.color_at(4, 4), Channel::B);
        assert_eq!(CfaSpec::bayer().color_at(1, 1), Channel::B);
    }

    #[test]
    fn rejects_bad_patterns() {
        assert!(CfaSpec::new(4, "RRGB").is_err());
        assert!(CfaSpec::new(0, "RGGB").is_err());
        assert!(CfaSpec::new(2, "RGG").is_err());
        assert_eq!("4,GRBG".parse::<CfaSpec>().unwrap().to_string(), "4,GRBG");
    }

    #[test]
    fn constant_gray_mosaic() {
        let img = RgbImage::filled(16, 16, [0.3; 3]);
        let m = mosaic(&img, CfaSpec::qxq()).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.3));
    }

    #[test]
    fn pure_red_lands_on_red_groups() {
        let img = RgbImage::filled(16, 16, [1.0, 0.0, 0.0]);
        let cfa = CfaSpec::qxq();
        let m = mosaic(&img, cfa).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(m.get(x, y) != 0.0, cfa.color_at(x, y) == Channel::R);
            }
        }
    }

    #[test]
    fn mosaic_geometry_error() {
        let img = RgbImage::filled(12, 16, [0.0; 3]);
        assert_eq!(
            mosaic(&img, CfaSpec::qxq()).unwrap_err().class(),
            "geometry"
        );
    }

    #[test]
    fn gray_is_identity_view() {
        let data: Vec<f32> = (0..16).map(|i| i as f32 / 16.0).collect();
        let m = MosaicImage::new(4, 4, data.clone(), CfaSpec::new(2, "RGGB").unwrap()).unwrap();
        let t = gray_image(&m);
        assert_eq!(t.shape(), [1, 1, 4, 4]);
        assert_eq!(t.to_vec(), data);
    }

    #[test]
    fn space_to_depth_2x2() {
        let got = space_to_depth_plane(&[1.0, 2.0, 3.0, 4.0], 2, 2).unwrap();
        assert_eq!(got, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(
            space_to_depth_plane(&[0.0; 9], 3, 3).unwrap_err().class(),
            "geometry"
        );
    }

    #[test]
    fn space_to_depth_round_trip() {
        let data: Vec<f32> = (0..64).map(|i| (i * 7 % 13) as f32).collect();
        let m = MosaicImage::new(8, 8, data, CfaSpec::qxq()).unwrap();
        let packed = space_to_depth(&m).unwrap();
        assert_eq!(packed.shape(), [1, 4, 4, 4]);
        assert_eq!(depth_to_space(&packed, m.cfa()).unwrap(), m);
    }

    #[test]
    fn classical_constant_is_exact() {
        for cfa in [CfaSpec::bayer(), CfaSpec::qxq(), CfaSpec::new(3, "GBRG").unwrap()] {
            let img = RgbImage::filled(24, 24, [0.2, 0.5, 0.9]);
            let out = classical_demosaic(&mosaic(&img, cfa).unwrap());
            for c in 0..3 {
                for &v in out.plane(c) {
                    assert!((v - img.plane(c)[0]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn classical_passes_through_samples() {
        let img = RgbImage::from_fn(16, 16, |c, x, y| ((x * 31 + y * 17 + c * 7) % 23) as f32 / 23.0);
        let cfa = CfaSpec::qxq();
        let m = mosaic(&img, cfa).unwrap();
        let out = classical_demosaic(&m);
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(out.get(cfa.color_at(x, y).index(), x, y), m.get(x, y));
            }
        }
    }

    #[test]
    fn classical_recovers_horizontal_ramp_on_bayer() {
        let img = RgbImage::from_fn(16, 16, |_, x, _| x as f32 / 16.0);
        let out = classical_demosaic(&mosaic(&img, CfaSpec::bayer()).unwrap());
        for c in 0..3 {
            for y in 2..14 {
                for x in 2..14 {
                    assert!((out.get(c, x, y) - img.get(c, x, y)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn center_crop_keeps_phase() {
        let m = MosaicImage::new(40, 24, vec![0.0; 960], CfaSpec::qxq()).unwrap();
        let c = m.center_crop(16).unwrap();
        assert_eq!((c.width(), c.height()), (32, 16));
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(-3, 2), 1);
        assert_eq!(reflect(0, 1), 0);
    }
}
