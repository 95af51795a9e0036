//! Hybrid dataset construction: 3CCD captures plus gamma-linearized common
//! images, cut into patches and paired with their QxQ mosaics.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cfa::{self, CfaSpec};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::rawio::{self, ByteOrder, Raw3ccdFrame};
use crate::tensor::Tensor;

pub const DEFAULT_GAMMA: f32 = 2.2;
pub const DEFAULT_PATCH: usize = 448;
pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 1e-3;
const MANIFEST_MAGIC: &str = "# qxq-manifest v1";

/// `in^gamma` elementwise.
pub fn inverse_gamma(img: &RgbImage, gamma: f32) -> Result<RgbImage> {
    if let Some(v) = img.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Range(format!("inverse gamma needs samples in [0, 1], found {v}")));
    }
    let mut out = img.clone();
    for v in out.data_mut() {
        *v = v.powf(gamma);
    }
    Ok(out)
}

/// Origins of the non-overlapping-by-default patch grid anchored at (0, 0).
pub fn patch_origins(width: usize, height: usize, size: usize, stride: usize) -> Vec<(usize, usize)> {
    if size == 0 || stride == 0 || width < size || height < size {
        return Vec::new();
    }
    let xs: Vec<usize> = (0..=width - size).step_by(stride).collect();
    (0..=height - size)
        .step_by(stride)
        .flat_map(|y| xs.iter().map(move |&x| (x, y)))
        .collect()
}

pub fn crop_patches(img: &RgbImage, size: usize, stride: usize) -> Vec<RgbImage> {
    patch_origins(img.width(), img.height(), size, stride)
        .into_iter()
        .map(|(x, y)| img.crop(x, y, size, size).expect("origin in bounds"))
        .collect()
}

/// Mean over channels of the per-channel population variance.
pub fn patch_variance(img: &RgbImage) -> f64 {
    let n = (img.width() * img.height()) as f64;
    (0..3)
        .map(|c| {
            let p = img.plane(c);
            let mean = p.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
            p.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n
        })
        .sum::<f64>()
        / 3.0
}

pub fn variance_filter(img: &RgbImage, threshold: f64) -> bool {
    patch_variance(img) >= threshold
}

/// 2x2 box average.
pub fn downscale2x(img: &RgbImage) -> Result<RgbImage> {
    let (w, h) = (img.width(), img.height());
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::Geometry(format!("cannot halve a {w}x{h} image")));
    }
    Ok(RgbImage::from_fn(w / 2, h / 2, |c, x, y| {
        let p = |dx, dy| img.get(c, 2 * x + dx, 2 * y + dy);
        0.25 * (p(0, 0) + p(1, 0) + p(0, 1) + p(1, 1))
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    #[serde(rename = "3ccd")]
    ThreeCcd,
    Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

macro_rules! text_enum {
    ($t:ty { $($v:path => $s:literal),+ }) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    _ => Err(Error::Format(format!("unknown {} {s:?}", stringify!($t)))),
                }
            }
        }
    };
}
text_enum!(SourceKind { SourceKind::ThreeCcd => "3ccd", SourceKind::Common => "common" });
text_enum!(Split { Split::Train => "train", Split::Test => "test" });

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    /// Relative to the manifest root.
    pub source_path: PathBuf,
    pub source_kind: SourceKind,
    pub x: usize,
    pub y: usize,
    pub split: Split,
}

/// Patch list, stored as tab-separated text:
///
/// ```text
/// # qxq-manifest v1 patch=448
/// path<TAB>kind<TAB>x<TAB>y<TAB>split
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub patch_size: usize,
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MANIFEST_MAGIC} patch={}\n", self.patch_size);
        for r in &self.records {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.source_path.to_string_lossy().replace('\\', "/"),
                r.source_kind,
                r.x,
                r.y,
                r.split
            ));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let patch_size = header
            .strip_prefix(MANIFEST_MAGIC)
            .and_then(|rest| rest.trim().strip_prefix("patch="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad manifest header {header:?}")))?;
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(Error::Format(format!(
                    "manifest line {}: expected 5 fields, got {}",
                    i + 2,
                    f.len()
                )));
            }
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Format(format!("manifest line {}: bad number {s:?}", i + 2)))
            };
            records.push(ManifestRecord {
                source_path: PathBuf::from(f[0]),
                source_kind: f[1].parse()?,
                x: num(f[2])?,
                y: num(f[3])?,
                split: f[4].parse()?,
            });
        }
        Ok(Self { patch_size, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => {
                Error::Data(format!("manifest {} does not exist", path.display()))
            }
            _ => Error::io(path, e),
        })?;
        Self::parse(&text).map_err(|e| e.with_context(path.display()))
    }
}

/// Knobs of the hybrid builder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    pub patch_size: usize,
    pub stride: usize,
    pub variance_threshold: f64,
    /// Fraction of source images assigned to the training split.
    pub split_ratio: f64,
    pub seed: u64,
    pub gamma: f32,
    /// 3CCD dumps carry no header; their size comes from here.
    pub raw_width: usize,
    pub raw_height: usize,
    pub black_level: u16,
    pub big_endian: bool,
    pub cfa: CfaSpec,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            patch_size: DEFAULT_PATCH,
            stride: DEFAULT_PATCH,
            variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
            split_ratio: 0.9,
            seed: 0,
            gamma: DEFAULT_GAMMA,
            raw_width: 1600,
            raw_height: 1200,
            black_level: rawio::DEFAULT_BLACK_LEVEL,
            big_endian: false,
            cfa: CfaSpec::qxq(),
        }
    }
}

impl HybridConfig {
    fn byte_order(&self) -> ByteOrder {
        if self.big_endian {
            ByteOrder::Big
        } else {
            ByteOrder::Little
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.stride == 0 {
            return Err(Error::Config("patch size and stride must be positive".into()));
        }
        self.cfa.check_dims(self.patch_size, self.patch_size)?;
        if !(0.0..=1.0).contains(&self.split_ratio) {
            return Err(Error::Config(format!(
                "split_ratio must be in [0, 1], got {}",
                self.split_ratio
            )));
        }
        Ok(())
    }
}

/// Decode one source into linear RGB.
pub fn load_source(path: &Path, kind: SourceKind, cfg: &HybridConfig) -> Result<RgbImage> {
    match kind {
        SourceKind::ThreeCcd => {
            let bytes = rawio::read_file(path)?;
            let mut frame = rawio::decode_3ccd_with(&bytes, cfg.raw_width, cfg.raw_height, cfg.byte_order())
                .map_err(|e| e.with_context(path.display()))?;
            frame.black_level = cfg.black_level;
            frame.to_rgb()
        }
        SourceKind::Common => inverse_gamma(&rawio::read_png(path)?, cfg.gamma),
    }
}

fn list_sources(dir: &Path, kind: SourceKind) -> Result<Vec<PathBuf>> {
    let want = match kind {
        SourceKind::ThreeCcd => "raw",
        SourceKind::Common => "png",
    };
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if p.is_file() && ext.as_deref() == Some(want) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn relative(root: &Path, p: &Path) -> PathBuf {
    p.strip_prefix(root).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
}

/// Scan both directories (either may be absent), split sources by seeded
/// shuffle, and keep every in-bounds patch passing the variance filter.
/// Unreadable files are logged and skipped.
pub fn build_hybrid(
    root: &Path,
    dir_3ccd: Option<&Path>,
    dir_common: Option<&Path>,
    cfg: &HybridConfig,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    let mut sources = Vec::new();
    for (dir, kind) in [(dir_3ccd, SourceKind::ThreeCcd), (dir_common, SourceKind::Common)] {
        if let Some(d) = dir {
            let d = if d.is_absolute() { d.to_path_buf() } else { root.join(d) };
            sources.extend(list_sources(&d, kind)?.into_iter().map(|p| (p, kind)));
        }
    }
    if sources.is_empty() {
        return Err(Error::Data("no source images found".into()));
    }

    let mut order: Vec<usize> = (0..sources.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_train = (cfg.split_ratio * sources.len() as f64).round() as usize;
    let mut split = vec![Split::Test; sources.len()];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }

    let mut records = Vec::new();
    let mut candidates = 0usize;
    for (i, (path, kind)) in sources.iter().enumerate() {
        let img = match load_source(path, *kind, cfg) {
            Ok(img) => img,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        for (x, y) in patch_origins(img.width(), img.height(), cfg.patch_size, cfg.stride) {
            candidates += 1;
            let patch = img.crop(x, y, cfg.patch_size, cfg.patch_size)?;
            if variance_filter(&patch, cfg.variance_threshold) {
                records.push(ManifestRecord {
                    source_path: relative(root, path),
                    source_kind: *kind,
                    x,
                    y,
                    split: split[i],
                });
            }
        }
    }
    info!(
        "{} sources, {candidates} candidate patches, {} kept",
        sources.len(),
        records.len()
    );
    if records.is_empty() {
        return Err(Error::Data(format!(
            "no patch of {candidates} candidates survived the variance filter"
        )));
    }
    Ok(DatasetManifest {
        patch_size: cfg.patch_size,
        records,
    })
}

/// Ground-truth patches of one split, in manifest order.
pub fn load_patches(
    manifest: &DatasetManifest,
    root: &Path,
    split: Split,
    cfg: &HybridConfig,
) -> Result<Vec<RgbImage>> {
    let mut cache: BTreeMap<PathBuf, RgbImage> = BTreeMap::new();
    let mut out = Vec::new();
    for r in manifest.split(split) {
        if !cache.contains_key(&r.source_path) {
            let img = load_source(&root.join(&r.source_path), r.source_kind, cfg)?;
            cache.insert(r.source_path.clone(), img);
        }
        let s = manifest.patch_size;
        out.push(cache[&r.source_path].crop(r.x, r.y, s, s)?);
    }
    if out.is_empty() {
        return Err(Error::Data(format!("the {split} split is empty")));
    }
    Ok(out)
}

/// One training triple as batched tensors.
#[derive(Debug, Clone)]
pub struct Sample {
    /// `(N, 1, H, W)` mosaic.
    pub mosaic: Tensor,
    /// `(N, 3, H/2, W/2)` box-downscaled target for level 1.
    pub half: Tensor,
    /// `(N, 3, H, W)` full-resolution target.
    pub full: Tensor,
}

impl Sample {
    pub fn from_gt(gt: &RgbImage, cfa: CfaSpec) -> Result<Self> {
        let m = cfa::mosaic(gt, cfa)?;
        let half = downscale2x(gt)?;
        Ok(Self {
            mosaic: cfa::gray_image(&m),
            half: Tensor::constant([1, 3, half.height(), half.width()], half.into_data()),
            full: Tensor::constant([1, 3, gt.height(), gt.width()], gt.data().to_vec()),
        })
    }
}

/// In-memory training set.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub cfa: CfaSpec,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn from_images(images: &[RgbImage], cfa: CfaSpec) -> Result<Self> {
        let samples = images
            .iter()
            .map(|g| Sample::from_gt(g, cfa))
            .collect::<Result<Vec<_>>>()?;
        if let Some(s) = samples.first() {
            let shape = s.full.shape();
            if samples.iter().any(|t| t.full.shape() != shape) {
                return Err(Error::Data("dataset patches differ in size".into()));
            }
        }
        Ok(Self { cfa, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Spatial `(height, width)` of the full-resolution patches.
    pub fn patch_dims(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| {
            let [_, _, h, w] = s.full.shape();
            (h, w)
        })
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Sample> {
        let pick = |f: fn(&Sample) -> &Tensor| -> Result<Tensor> {
            let v: Vec<&Tensor> = indices.iter().map(|&i| f(&self.samples[i])).collect();
            Tensor::stack(&v)
        };
        Ok(Sample {
            mosaic: pick(|s| &s.mosaic)?,
            half: pick(|s| &s.half)?,
            full: pick(|s| &s.full)?,
        })
    }
}

/// Smooth random scene in `[0.05, 0.95]`: a few low-frequency color waves
/// over a per-channel gradient.
pub fn synthetic_scene(width: usize, height: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut waves = Vec::new();
    for _ in 0..3 {
        let base: f32 = rng.gen_range(0.3..0.7);
        let gx: f32 = rng.gen_range(-0.2..0.2);
        let gy: f32 = rng.gen_range(-0.2..0.2);
        let comps: Vec<(f32, f32, f32, f32)> = (0..3)
            .map(|_| {
                (
                    rng.gen_range(0.05..0.15),
                    rng.gen_range(0.5..3.0),
                    rng.gen_range(0.5..3.0),
                    rng.gen_range(0.0..std::f32::consts::TAU),
                )
            })
            .collect();
        waves.push((base, gx, gy, comps));
    }
    RgbImage::from_fn(width, height, |c, x, y| {
        let (u, v) = (x as f32 / width as f32, y as f32 / height as f32);
        let (base, gx, gy, comps) = &waves[c];
        let mut s = base + gx * (u - 0.5) + gy * (v - 0.5);
        for &(a, fx, fy, ph) in comps {
            s += a * (std::f32::consts::TAU * (fx * u + fy * v) + ph).sin();
        }
        s.clamp(0.05, 0.95)
    })
}

/// Quantize a linear image into a 3CCD frame with the given black level.
pub fn to_3ccd_frame(img: &RgbImage, black_level: u16) -> Raw3ccdFrame {
    let span = f32::from(rawio::MAX_SAMPLE - black_level);
    let planes = [0, 1, 2].map(|c| {
        img.plane(c)
            .iter()
            .map(|&v| black_level + (v.clamp(0.0, 1.0) * span).round() as u16)
            .collect()
    });
    Raw3ccdFrame {
        width: img.width(),
        height: img.height(),
        planes,
        black_level,
    }
}
