//! Training losses and evaluation metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::model::LEAKY_SLOPE;
use crate::tensor::{Parameter, Tensor};

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
/// Contrast-structure terms are floored here before the fractional power.
pub const CS_FLOOR: f64 = 1e-6;

pub const DEFAULT_PERCEPTUAL_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Perceptual weight.
    pub lambda1: f32,
    /// MS-SSIM weight (level 0 only).
    pub lambda2: f32,
    /// Distillation weight.
    pub alpha: f32,
}

impl LossWeights {
    pub fn level1() -> Self {
        Self {
            lambda1: 0.1,
            lambda2: 0.0,
            alpha: 0.0,
        }
    }

    pub fn level0() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.4,
            alpha: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("alpha", self.alpha),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Frozen random feature extractor standing in for VGG features: three
/// stride-2 3x3 convolutions (3 -> 8 -> 16 -> 32) with leaky ReLU.
#[derive(Debug, Clone)]
pub struct Perceptual {
    seed: u64,
    kernels: Vec<Tensor>,
}

impl Default for Perceptual {
    fn default() -> Self {
        Self::new(DEFAULT_PERCEPTUAL_SEED)
    }
}

impl Perceptual {
    pub const CHANNELS: [usize; 4] = [3, 8, 16, 32];

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kernels = Self::CHANNELS
            .windows(2)
            .map(|io| {
                let (cin, cout) = (io[0], io[1]);
                let bound = (3.0 / (cin * 9) as f32).sqrt();
                let w = (0..cout * cin * 9).map(|_| rng.gen_range(-bound..bound)).collect();
                Tensor::constant([cout, cin, 3, 3], w)
            })
            .collect();
        Self { seed, kernels }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(self.kernels.len());
        let mut h = x.clone();
        for k in &self.kernels {
            h = h.conv2d(k, None, 2, 1)?.leaky_relu(LEAKY_SLOPE);
            out.push(h.clone());
        }
        Ok(out)
    }

    /// Mean over stages of the per-stage feature MSE.
    pub fn loss(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape() != b.shape() {
            return Err(crate::tensor::shape_mismatch("perceptual_loss", a.shape(), b.shape()));
        }
        let fa = self.features(a)?;
        let fb = self.features(b)?;
        let mut total: Option<Tensor> = None;
        for (x, y) in fa.iter().zip(&fb) {
            let d = x.mse(y)?;
            total = Some(match total {
                Some(t) => t.add(&d)?,
                None => d,
            });
        }
        Ok(total.expect("three stages").scale(1.0 / fa.len() as f32))
    }
}

/// Normalized 1-D Gaussian window.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Largest usable scale count for a `height x width` image, capped at five.
pub fn ms_ssim_scales(height: usize, width: usize) -> Result<usize> {
    let m = height.min(width);
    if m < SSIM_WINDOW {
        return Err(Error::Size(format!(
            "{width}x{height} image is smaller than one {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    Ok((1..=MS_SSIM_WEIGHTS.len())
        .rev()
        .find(|&s| m >= SSIM_WINDOW << (s - 1))
        .expect("s = 1 fits"))
}

/// Scale weights for `scales` levels, renormalized to sum to one.
pub fn ms_ssim_weights(scales: usize) -> Vec<f64> {
    let w = &MS_SSIM_WEIGHTS[..scales];
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Per-scale MS-SSIM factors before flooring, each `(N, C, 1, 1)`: the mean
/// contrast-structure map at every scale but the coarsest, which also
/// carries luminance.
pub fn ms_ssim_scale_terms(a: &Tensor, b: &Tensor) -> Result<Vec<Tensor>> {
    if a.shape() != b.shape() {
        return Err(crate::tensor::shape_mismatch("ms_ssim", a.shape(), b.shape()));
    }
    let [_, _, h, w] = a.shape();
    let scales = ms_ssim_scales(h, w)?;
    let taps: Vec<f32> = gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
        .into_iter()
        .map(|v| v as f32)
        .collect();
    let (c1, c2) = (C1 as f32, C2 as f32);

    // Moments are taken about each plane's (constant) mean. The shift is exact
    // for the covariances and avoids cancelling E[x^2] against mu^2 when a
    // plane is nearly flat.
    let (cx, cy) = (plane_means(a), plane_means(b));
    let (mut x, mut y) = (a.sub(&fill_planes(a.shape(), &cx))?, b.sub(&fill_planes(b.shape(), &cy))?);
    let mut terms = Vec::with_capacity(scales);
    for j in 0..scales {
        if j > 0 {
            x = x.avg_pool2x();
            y = y.avg_pool2x();
        }
        let mx = x.separable_filter_valid(&taps)?;
        let my = y.separable_filter_valid(&taps)?;
        let sxx = x.square().separable_filter_valid(&taps)?.sub(&mx.square())?;
        let syy = y.square().separable_filter_valid(&taps)?.sub(&my.square())?;
        let sxy = x.mul(&y)?.separable_filter_valid(&taps)?.sub(&mx.mul(&my)?)?;
        let cs_map = sxy
            .scale(2.0)
            .add_scalar(c2)
            .div(&sxx.add(&syy)?.add_scalar(c2))?;
        terms.push(if j + 1 == scales {
            let mx = mx.add(&fill_planes(mx.shape(), &cx))?;
            let my = my.add(&fill_planes(my.shape(), &cy))?;
            let l_map = mx
                .mul(&my)?
                .scale(2.0)
                .add_scalar(c1)
                .div(&mx.square().add(&my.square())?.add_scalar(c1))?;
            l_map.mul(&cs_map)?.mean_spatial()
        } else {
            cs_map.mean_spatial()
        });
    }
    Ok(terms)
}

fn plane_means(t: &Tensor) -> Vec<f32> {
    let [_, _, h, w] = t.shape();
    t.data()
        .chunks(h * w)
        .map(|p| (p.iter().map(|&v| f64::from(v)).sum::<f64>() / p.len() as f64) as f32)
        .collect()
}

/// Constant tensor holding `vals[i]` over the whole of plane `i`.
fn fill_planes(shape: crate::tensor::Shape, vals: &[f32]) -> Tensor {
    let hw = shape[2] * shape[3];
    Tensor::constant(shape, vals.iter().flat_map(|&v| std::iter::repeat_n(v, hw)).collect())
}

/// Differentiable MS-SSIM of two `(N, C, H, W)` tensors, averaged over planes.
pub fn ms_ssim_tensor(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let terms = ms_ssim_scale_terms(a, b)?;
    let weights = ms_ssim_weights(terms.len());
    let mut product: Option<Tensor> = None;
    for (term, &wj) in terms.iter().zip(&weights) {
        let factor = term.clamp_min(CS_FLOOR as f32).powf(wj as f32);
        product = Some(match product {
            Some(p) => p.mul(&factor)?,
            None => factor,
        });
    }
    Ok(product.expect("at least one scale").mean())
}

pub fn ms_ssim_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(ms_ssim_tensor(a, b)?.scale(-1.0).add_scalar(1.0))
}

/// `mse + lambda1 * perceptual`.
pub fn level1_combine(mse: &Tensor, perceptual: &Tensor, w: &LossWeights) -> Result<Tensor> {
    mse.add(&perceptual.scale(w.lambda1))
}

/// `mse + lambda1 * perceptual + lambda2 * (1 - msssim)`.
pub fn level0_combine(
    mse: &Tensor,
    perceptual: &Tensor,
    msssim: &Tensor,
    w: &LossWeights,
) -> Result<Tensor> {
    let ms = msssim.scale(-1.0).add_scalar(1.0).scale(w.lambda2);
    mse.add(&perceptual.scale(w.lambda1))?.add(&ms)
}

/// `l0 + alpha * distill`.
pub fn total_loss(level0: &Tensor, distill: &Tensor, alpha: f32) -> Result<Tensor> {
    level0.add(&distill.scale(alpha))
}

fn weighted_perceptual(
    p: &Perceptual,
    s: &Tensor,
    gt: &Tensor,
    lambda: f32,
) -> Result<Option<Tensor>> {
    if lambda == 0.0 {
        return Ok(None);
    }
    Ok(Some(p.loss(s, gt)?.scale(lambda)))
}

/// Half-resolution image loss.
pub fn level1_loss(s: &Tensor, gt: &Tensor, w: &LossWeights, p: &Perceptual) -> Result<Tensor> {
    let mse = s.mse(gt)?;
    match weighted_perceptual(p, s, gt, w.lambda1)? {
        Some(t) => mse.add(&t),
        None => Ok(mse),
    }
}

/// Full-resolution image loss. Zero-weighted terms are not evaluated.
pub fn level0_loss(s: &Tensor, gt: &Tensor, w: &LossWeights, p: &Perceptual) -> Result<Tensor> {
    let mut l = s.mse(gt)?;
    if let Some(t) = weighted_perceptual(p, s, gt, w.lambda1)? {
        l = l.add(&t)?;
    }
    if w.lambda2 != 0.0 {
        l = l.add(&ms_ssim_loss(s, gt)?.scale(w.lambda2))?;
    }
    Ok(l)
}

/// 1x1 convolution from student tap channels to teacher tap channels.
#[derive(Debug, Clone)]
pub struct Regressor {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Regressor {
    pub fn new(student_channels: usize, teacher_channels: usize, seed: u64) -> Result<Self> {
        if student_channels == 0 || teacher_channels == 0 {
            return Err(Error::Shape(format!(
                "regressor {student_channels} -> {teacher_channels} channels"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = (3.0 / student_channels as f32).sqrt();
        let w = (0..teacher_channels * student_channels)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Ok(Self {
            weight: Parameter::new([teacher_channels, student_channels, 1, 1], w),
            bias: Parameter::new([1, teacher_channels, 1, 1], vec![0.0; teacher_channels]),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, f: &Tensor) -> Result<Tensor> {
        f.conv2d(self.weight.tensor(), Some(self.bias.tensor()), 1, 0)
    }

    pub fn params_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn zero_grad(&self) {
        self.weight.zero_grad();
        self.bias.zero_grad();
    }
}

/// `mse(R(F_S), F_T)` with the teacher features detached.
pub fn distill_loss(f_s: &Tensor, f_t: &Tensor, r: &Regressor) -> Result<Tensor> {
    r.forward(f_s)?.mse(&f_t.detach())
}

/// PSNR in dB; identical images give `f64::INFINITY`.
pub fn psnr(a: &RgbImage, b: &RgbImage, peak: f64) -> Result<f64> {
    a.same_size(b)?;
    Ok(psnr_slices(a.data(), b.data(), peak))
}

pub fn psnr_slices(a: &[f32], b: &[f32], peak: f64) -> f64 {
    let mse = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Render a PSNR value, using `inf` for the identical-image sentinel.
pub fn format_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn filter(&self, taps: &[f64]) -> Plane {
        let k = taps.len();
        let (wo, ho) = (self.w - k + 1, self.h - k + 1);
        let mut tmp = vec![0.0; self.h * wo];
        for y in 0..self.h {
            for x in 0..wo {
                tmp[y * wo + x] = (0..k).map(|t| taps[t] * self.v[y * self.w + x + t]).sum();
            }
        }
        let mut v = vec![0.0; ho * wo];
        for y in 0..ho {
            for x in 0..wo {
                v[y * wo + x] = (0..k).map(|t| taps[t] * tmp[(y + t) * wo + x]).sum();
            }
        }
        Plane { w: wo, h: ho, v }
    }

    fn map2(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            v: self.v.iter().zip(&o.v).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    fn pool(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut v = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * self.w + 2 * x;
                v.push(0.25 * (self.v[i] + self.v[i + 1] + self.v[i + self.w] + self.v[i + self.w + 1]));
            }
        }
        Plane { w, h, v }
    }

    fn mean(&self) -> f64 {
        self.v.iter().sum::<f64>() / self.v.len() as f64
    }
}

fn ms_ssim_plane(mut x: Plane, mut y: Plane, weights: &[f64], taps: &[f64]) -> f64 {
    let mut out = 1.0;
    for (j, &wj) in weights.iter().enumerate() {
        if j > 0 {
            x = x.pool();
            y = y.pool();
        }
        let mx = x.filter(taps);
        let my = y.filter(taps);
        let sxx = x.map2(&x, |a, b| a * b).filter(taps).map2(&mx, |s, m| s - m * m);
        let syy = y.map2(&y, |a, b| a * b).filter(taps).map2(&my, |s, m| s - m * m);
        let sxy = x
            .map2(&y, |a, b| a * b)
            .filter(taps)
            .map2(&mx.map2(&my, |a, b| a * b), |s, m| s - m);
        let cs = sxy.map2(&sxx.map2(&syy, |a, b| a + b), |n, d| (2.0 * n + C2) / (d + C2));
        let term = if j + 1 == weights.len() {
            let l = mx.map2(&my, |a, b| (2.0 * a * b + C1) / (a * a + b * b + C1));
            l.map2(&cs, |a, b| a * b).mean()
        } else {
            cs.mean()
        };
        out *= term.max(CS_FLOOR).powf(wj);
    }
    out
}

/// MS-SSIM in double precision, averaged over the three channels.
pub fn ms_ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    a.same_size(b)?;
    let (w, h) = (a.width(), a.height());
    let scales = ms_ssim_scales(h, w)?;
    let weights = ms_ssim_weights(scales);
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let plane = |img: &RgbImage, c: usize| Plane {
        w,
        h,
        v: img.plane(c).iter().map(|&v| f64::from(v)).collect(),
    };
    let total: f64 = (0..3)
        .map(|c| ms_ssim_plane(plane(a, c), plane(b, c), &weights, &taps))
        .sum();
    Ok(total / 3.0)
}

/// One row of a metrics report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub psnr: f64,
    pub ms_ssim: f64,
    pub params: Option<usize>,
    pub macs: Option<u64>,
}

/// Tab-separated table: `method psnr_db ms_ssim params macs`.
pub fn format_table(rows: &[MetricsRow]) -> String {
    let mut s = String::from("method\tpsnr_db\tms_ssim\tparams\tmacs\n");
    let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{:.6}\t{}\t{}\n",
            r.method,
            format_psnr(r.psnr),
            r.ms_ssim,
            opt(r.params.map(|p| p.to_string())),
            opt(r.macs.map(|m| m.to_string())),
        ));
    }
    s
}

/// Convert an `(1, 3, H, W)` tensor to an image.
pub fn tensor_to_image(t: &Tensor) -> Result<RgbImage> {
    let [n, c, h, w] = t.shape();
    if n != 1 || c != 3 {
        return Err(Error::Shape(format!("expected (1, 3, H, W), got {:?}", t.shape())));
    }
    RgbImage::new(w, h, t.to_vec())
}

pub fn image_to_tensor(img: &RgbImage) -> Tensor {
    Tensor::constant([1, 3, img.height(), img.width()], img.data().to_vec())
}
