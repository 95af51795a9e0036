//! Test oracles shared by the integration targets.
//!
//! Everything here is written against first principles (double precision,
//! brute-force loops) and never calls the library's own reference paths.

#![allow(dead_code)]

use qxqnet::image::RgbImage;
use qxqnet::tensor::{no_grad, Parameter, Shape, Tensor};
use qxqnet::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod gradsuite;

pub const FD_STEP: f64 = 1e-3;
pub const FD_TOL: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Values in `±[0.1, 1]`, away from the kinks of relu-like ops.
pub fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let v: f32 = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

pub fn random_shape(rng: &mut ChaCha8Rng) -> Shape {
    [rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(3..6), rng.gen_range(3..6)]
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> RgbImage {
    RgbImage::new(w, h, random_vec(rng, 3 * w * h, 0.0, 1.0)).unwrap()
}

/// `||a - b|| / max(||a||, ||b||)`, 0 when both vanish.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

fn eval(f: &dyn Fn(&[Tensor]) -> Result<Tensor>, inputs: &[(Shape, Vec<f32>)]) -> f64 {
    let ts: Vec<Tensor> = inputs.iter().map(|(s, d)| Tensor::constant(*s, d.clone())).collect();
    f64::from(no_grad(|| f(&ts)).unwrap().item())
}

/// Compare autodiff against central differences for a scalar function of
/// several input tensors. Returns the relative error over all inputs.
pub fn check_inputs(
    inputs: &[(Shape, Vec<f32>)],
    f: impl Fn(&[Tensor]) -> Result<Tensor>,
) -> f64 {
    check_inputs_piecewise(inputs, |_| Vec::new(), f).0
}

/// Activation pattern of a piecewise-smooth function: one bool per relu-like
/// unit (`pre-activation > 0`). Leaky relu keeps the sign, so post-activation
/// signs serve as well.
pub fn signs(ts: &[Tensor]) -> Vec<bool> {
    ts.iter().flat_map(|t| t.to_vec().into_iter().map(|v| v > 0.0)).collect()
}

/// [`check_inputs`] for functions with relu kinks. A coordinate is probed
/// only if `pattern` (see [`signs`]) is identical at `x - h`, `x` and
/// `x + h`, i.e. the stencil stays inside one smooth piece; elsewhere a
/// finite difference says nothing about the gradient. Returns the error
/// and the fraction of coordinates probed.
pub fn check_inputs_piecewise(
    inputs: &[(Shape, Vec<f32>)],
    pattern: impl Fn(&[Tensor]) -> Vec<bool>,
    f: impl Fn(&[Tensor]) -> Result<Tensor>,
) -> (f64, f64) {
    let leaves: Vec<Tensor> = inputs.iter().map(|(s, d)| Tensor::leaf(*s, d.clone())).collect();
    let out = f(&leaves).unwrap();
    assert_eq!(out.numel(), 1, "gradcheck needs a scalar output");
    out.backward().unwrap();
    let mut grads = Vec::new();
    for (t, (_, d)) in leaves.iter().zip(inputs) {
        match t.grad() {
            Some(g) => grads.extend(g.iter().map(|&v| f64::from(v))),
            None => grads.extend(std::iter::repeat_n(0.0, d.len())),
        }
    }
    let consts = |w: &[(Shape, Vec<f32>)]| -> Vec<Tensor> {
        w.iter().map(|(s, d)| Tensor::constant(*s, d.clone())).collect()
    };
    let base = no_grad(|| pattern(&consts(inputs)));
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let mut work: Vec<(Shape, Vec<f32>)> = inputs.to_vec();
    let mut flat = 0;
    for i in 0..inputs.len() {
        for j in 0..inputs[i].1.len() {
            let x0 = f64::from(inputs[i].1[j]);
            let mut probe = |x: f64| {
                work[i].1[j] = x as f32;
                let ts = consts(&work);
                let same = no_grad(|| pattern(&ts)) == base;
                (f64::from(work[i].1[j]), eval(&f, &work), same)
            };
            let hi = probe(x0 + FD_STEP);
            let lo = probe(x0 - FD_STEP);
            work[i].1[j] = inputs[i].1[j];
            if hi.2 && lo.2 {
                analytic.push(grads[flat]);
                // Divide by the step actually taken after rounding to f32.
                numeric.push((hi.1 - lo.1) / (hi.0 - lo.0));
            }
            flat += 1;
        }
    }
    (rel_error(&analytic, &numeric), analytic.len() as f64 / grads.len() as f64)
}

/// Directional central differences along `dirs` random `±1` directions
/// that move every coordinate at once: `grad . v` against
/// `(f(x + h v) - f(x - h v)) / 2h`. For smooth losses over many elements
/// this raises the signal far above f32 noise.
pub fn check_inputs_directional(
    inputs: &[(Shape, Vec<f32>)],
    dirs: usize,
    seed: u64,
    f: impl Fn(&[Tensor]) -> Result<Tensor>,
) -> f64 {
    let leaves: Vec<Tensor> = inputs.iter().map(|(s, d)| Tensor::leaf(*s, d.clone())).collect();
    f(&leaves).unwrap().backward().unwrap();
    let grads: Vec<Vec<f32>> = leaves
        .iter()
        .zip(inputs)
        .map(|(t, (_, d))| t.grad().unwrap_or_else(|| vec![0.0; d.len()]))
        .collect();
    let mut r = rng(seed ^ 0xd1ec7);
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for _ in 0..dirs {
        let v: Vec<Vec<f64>> = inputs
            .iter()
            .map(|(_, d)| d.iter().map(|_| if r.gen_bool(0.5) { 1.0 } else { -1.0 }).collect())
            .collect();
        analytic.push(
            grads
                .iter()
                .zip(&v)
                .flat_map(|(g, v)| g.iter().zip(v).map(|(&g, &v)| f64::from(g) * v))
                .sum::<f64>(),
        );
        let at = |t: f64| -> f64 {
            let moved: Vec<(Shape, Vec<f32>)> = inputs
                .iter()
                .zip(&v)
                .map(|((s, d), v)| (*s, d.iter().zip(v).map(|(&x, &v)| (f64::from(x) + t * v) as f32).collect()))
                .collect();
            eval(&f, &moved)
        };
        numeric.push((at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP));
    }
    rel_error(&analytic, &numeric)
}

/// The same check for parameters owned elsewhere (e.g. inside a network).
/// Only the coordinates in `coords` (parameter index, element index) are
/// probed, and only where `pattern` is unchanged across the stencil as in
/// [`check_inputs_piecewise`]. `steps` are tried widest first and the first
/// one whose stencil stays in the base piece is used. `f` is differentiated;
/// `value` evaluates the same function for the differences, which lets the
/// caller combine f32 terms in f64. Returns the error and the fraction probed.
pub fn check_params(
    params: &[&Parameter],
    coords: &[(usize, usize)],
    steps: &[f64],
    pattern: impl Fn() -> Vec<bool>,
    f: impl Fn() -> Result<Tensor>,
    value: impl Fn() -> f64,
) -> (f64, f64) {
    for p in params {
        p.zero_grad();
    }
    f().unwrap().backward().unwrap();
    let grads: Vec<Option<Vec<f32>>> = params.iter().map(|p| p.grad()).collect();
    let base = no_grad(&pattern);
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for &(pi, ei) in coords {
        let orig = params[pi].values();
        let mut v = orig.clone();
        let x0 = f64::from(orig[ei]);
        let mut probe = |x: f64| {
            v[ei] = x as f32;
            params[pi].set_values(&v).unwrap();
            let same = no_grad(&pattern) == base;
            (f64::from(v[ei]), no_grad(&value), same)
        };
        for &step in steps {
            let hi = probe(x0 + step);
            let lo = probe(x0 - step);
            if hi.2 && lo.2 {
                analytic.push(grads[pi].as_ref().map_or(0.0, |g| f64::from(g[ei])));
                numeric.push((hi.1 - lo.1) / (hi.0 - lo.0));
                break;
            }
        }
        params[pi].set_values(&orig).unwrap();
    }
    for p in params {
        p.zero_grad();
    }
    (rel_error(&analytic, &numeric), analytic.len() as f64 / coords.len() as f64)
}

/// Fixed random projection so a tensor-valued op becomes a well-scaled scalar.
pub fn project(t: &Tensor, seed: u64) -> Result<Tensor> {
    let mut r = rng(seed ^ 0xabcdef);
    let w = Tensor::constant(t.shape(), random_vec(&mut r, t.numel(), -1.0, 1.0));
    Ok(t.mul(&w)?.sum())
}

/// Reference PSNR in f64 straight from the definition.
pub fn psnr_ref(a: &[f32], b: &[f32], peak: f64) -> f64 {
    let mse: f64 = a
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

/// Reference MS-SSIM: explicit 2-D Gaussian window sums (no separability),
/// 2x2 box downsampling, the per-channel product over scales averaged over
/// the three channels.
pub fn ms_ssim_ref(a: &RgbImage, b: &RgbImage) -> f64 {
    (0..3)
        .map(|c| {
            let pa: Vec<f64> = a.plane(c).iter().map(|&v| f64::from(v)).collect();
            let pb: Vec<f64> = b.plane(c).iter().map(|&v| f64::from(v)).collect();
            ms_ssim_plane_ref(pa, pb, a.width(), a.height())
        })
        .sum::<f64>()
        / 3.0
}

fn ms_ssim_plane_ref(mut x: Vec<f64>, mut y: Vec<f64>, w: usize, h: usize) -> f64 {
    const WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    const C1: f64 = 1e-4;
    const C2: f64 = 9e-4;
    const FLOOR: f64 = 1e-6;
    let mut scales = 0;
    while scales < 5 && w.min(h) >= 11 << scales {
        scales += 1;
    }
    assert!(scales > 0);
    let total: f64 = WEIGHTS[..scales].iter().sum();

    let g: Vec<f64> = {
        let raw: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|x| x / s).collect()
    };

    let (mut cw, mut ch) = (w, h);
    let mut result = 1.0;
    for s in 0..scales {
        if s > 0 {
            let (nw, nh) = (cw / 2, ch / 2);
            let down = |p: &[f64]| -> Vec<f64> {
                let mut out = vec![0.0; nw * nh];
                for yy in 0..nh {
                    for xx in 0..nw {
                        let i = 2 * yy * cw + 2 * xx;
                        out[yy * nw + xx] = (p[i] + p[i + 1] + p[i + cw] + p[i + cw + 1]) / 4.0;
                    }
                }
                out
            };
            x = down(&x);
            y = down(&y);
            cw = nw;
            ch = nh;
        }
        let (ow, oh) = (cw - 10, ch - 10);
        let mut acc = 0.0;
        for oy in 0..oh {
            for ox in 0..ow {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for ky in 0..11 {
                    for kx in 0..11 {
                        let k = g[ky] * g[kx];
                        let i = (oy + ky) * cw + ox + kx;
                        mx += k * x[i];
                        my += k * y[i];
                        xx += k * x[i] * x[i];
                        yy += k * y[i] * y[i];
                        xy += k * x[i] * y[i];
                    }
                }
                let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                let cs = (2.0 * cxy + C2) / (vx + vy + C2);
                acc += if s + 1 == scales {
                    cs * (2.0 * mx * my + C1) / (mx * mx + my * my + C1)
                } else {
                    cs
                };
            }
        }
        let term = acc / (ow * oh) as f64;
        result *= term.max(FLOOR).powf(WEIGHTS[s] / total);
    }
    result
}

/// Write `n_raw` 3CCD dumps into `root/ccd` and `n_png` 8-bit PNGs into
/// `root/common`, all `w x h` synthetic scenes.
pub fn write_source_tree(root: &std::path::Path, n_raw: usize, n_png: usize, w: usize, h: usize) {
    use qxqnet::{datapipe, rawio};
    let (ccd, common) = (root.join("ccd"), root.join("common"));
    std::fs::create_dir_all(&ccd).unwrap();
    std::fs::create_dir_all(&common).unwrap();
    for i in 0..n_raw {
        let frame = datapipe::to_3ccd_frame(&datapipe::synthetic_scene(w, h, 100 + i as u64), rawio::DEFAULT_BLACK_LEVEL);
        std::fs::write(ccd.join(format!("frame{i:02}.raw")), rawio::encode_3ccd(&frame).unwrap()).unwrap();
    }
    for i in 0..n_png {
        let img = datapipe::synthetic_scene(w, h, 200 + i as u64);
        rawio::export_png8(&img, &common.join(format!("photo{i:02}.png"))).unwrap();
    }
}
