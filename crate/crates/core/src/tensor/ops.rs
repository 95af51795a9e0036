use super::{numel, shape_mismatch, Shape, Tensor};
use crate::error::{Error, Result};

/// Geometry of one 2-D convolution.
#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    /// Output columns `ox` whose input column `ox * stride + kx - pad` is in range.
    #[inline]
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.pad as isize);
        let kx = kx as isize;
        let lo = (p - kx).max(0);
        let lo = (lo + s - 1) / s;
        let hi = (self.w as isize - 1 + p - kx).div_euclid(s);
        let hi = hi.min(self.wo as isize - 1);
        if hi < lo {
            (0, 0)
        } else {
            (lo as usize, hi as usize + 1)
        }
    }
}

fn conv_forward(g: &ConvGeom, x: &[f32], w: &[f32], b: Option<&[f32]>) -> Vec<f32> {
    let plane_out = g.ho * g.wo;
    let mut out = vec![0.0f32; g.n * g.cout * plane_out];
    for n in 0..g.n {
        for co in 0..g.cout {
            let o = &mut out[(n * g.cout + co) * plane_out..][..plane_out];
            if let Some(b) = b {
                o.fill(b[co]);
            }
            for ci in 0..g.cin {
                let xin = &x[(n * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = w[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                        let (lo, hi) = g.ox_range(kx);
                        if lo >= hi {
                            continue;
                        }
                        for oy in 0..g.ho {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            let row = &xin[iy as usize * g.w..][..g.w];
                            let orow = &mut o[oy * g.wo..][..g.wo];
                            if g.stride == 1 {
                                let off = kx as isize - g.pad as isize;
                                let src = &row[(lo as isize + off) as usize..(hi as isize + off) as usize];
                                for (d, s) in orow[lo..hi].iter_mut().zip(src) {
                                    *d += wv * s;
                                }
                            } else {
                                for ox in lo..hi {
                                    let ix = ox * g.stride + kx - g.pad;
                                    orow[ox] += wv * row[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_backward_input(g: &ConvGeom, w: &[f32], gout: &[f32]) -> Vec<f32> {
    let plane_out = g.ho * g.wo;
    let mut gx = vec![0.0f32; g.n * g.cin * g.h * g.w];
    for n in 0..g.n {
        for ci in 0..g.cin {
            let gxin = &mut gx[(n * g.cin + ci) * g.h * g.w..][..g.h * g.w];
            for co in 0..g.cout {
                let go = &gout[(n * g.cout + co) * plane_out..][..plane_out];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = w[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                        let (lo, hi) = g.ox_range(kx);
                        if lo >= hi {
                            continue;
                        }
                        for oy in 0..g.ho {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            let row = &mut gxin[iy as usize * g.w..][..g.w];
                            let grow = &go[oy * g.wo..][..g.wo];
                            if g.stride == 1 {
                                let off = kx as isize - g.pad as isize;
                                let dst = &mut row[(lo as isize + off) as usize..(hi as isize + off) as usize];
                                for (d, s) in dst.iter_mut().zip(&grow[lo..hi]) {
                                    *d += wv * s;
                                }
                            } else {
                                for ox in lo..hi {
                                    let ix = ox * g.stride + kx - g.pad;
                                    row[ix] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    gx
}

fn conv_backward_weight(g: &ConvGeom, x: &[f32], gout: &[f32]) -> Vec<f32> {
    let plane_out = g.ho * g.wo;
    let mut gw = vec![0.0f32; g.cout * g.cin * g.kh * g.kw];
    for co in 0..g.cout {
        for ci in 0..g.cin {
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let (lo, hi) = g.ox_range(kx);
                    if lo >= hi {
                        continue;
                    }
                    let mut acc = 0.0f32;
                    for n in 0..g.n {
                        let xin = &x[(n * g.cin + ci) * g.h * g.w..][..g.h * g.w];
                        let go = &gout[(n * g.cout + co) * plane_out..][..plane_out];
                        for oy in 0..g.ho {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            let row = &xin[iy as usize * g.w..][..g.w];
                            let grow = &go[oy * g.wo..][..g.wo];
                            if g.stride == 1 {
                                let off = kx as isize - g.pad as isize;
                                let src = &row[(lo as isize + off) as usize..(hi as isize + off) as usize];
                                acc += grow[lo..hi].iter().zip(src).map(|(a, b)| a * b).sum::<f32>();
                            } else {
                                for ox in lo..hi {
                                    acc += grow[ox] * row[ox * g.stride + kx - g.pad];
                                }
                            }
                        }
                    }
                    gw[((co * g.cin + ci) * g.kh + ky) * g.kw + kx] = acc;
                }
            }
        }
    }
    gw
}

fn zip_map(a: &[f32], b: &[f32], f: impl Fn(f32, f32) -> f32) -> Vec<f32> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Source index and weights of 2x bilinear upsampling (half-pixel centers,
/// edge clamped) for one axis.
fn bilinear_taps(n_in: usize) -> Vec<(usize, usize, f32)> {
    (0..2 * n_in)
        .map(|o| {
            let src = ((o as f32 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let t = src - i0 as f32;
            (i0, i1, t)
        })
        .collect()
}

impl Tensor {
    /// Cross-correlation with `weight` of shape `(Cout, Cin, kh, kw)` and an
    /// optional `(1, Cout, 1, 1)` bias.
    pub fn conv2d(
        &self,
        weight: &Tensor,
        bias: Option<&Tensor>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let [n, cin, h, w] = self.shape();
        let [cout, wcin, kh, kw] = weight.shape();
        if wcin != cin {
            return Err(shape_mismatch("conv2d", self.shape(), weight.shape()));
        }
        if stride == 0 {
            return Err(Error::Shape("conv2d stride must be positive".into()));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::Shape(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {:?} (padding {padding})",
                self.shape()
            )));
        }
        if let Some(b) = bias {
            if b.numel() != cout {
                return Err(shape_mismatch("conv2d bias", weight.shape(), b.shape()));
            }
        }
        let g = ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad: padding,
            ho: (h + 2 * padding - kh) / stride + 1,
            wo: (w + 2 * padding - kw) / stride + 1,
        };
        let out = {
            let bdata = bias.map(|b| b.data());
            conv_forward(&g, &self.data(), &weight.data(), bdata.as_deref().map(|v| v.as_slice()))
        };
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        Ok(Tensor::from_op(
            [n, cout, g.ho, g.wo],
            out,
            parents,
            Box::new(move |p, _, gout| {
                let gx = p[0]
                    .requires_grad()
                    .then(|| conv_backward_input(&g, &p[1].data(), gout));
                let gw = p[1]
                    .requires_grad()
                    .then(|| conv_backward_weight(&g, &p[0].data(), gout));
                let mut res = vec![gx, gw];
                if p.len() == 3 {
                    let plane = g.ho * g.wo;
                    let gb = p[2].requires_grad().then(|| {
                        let mut gb = vec![0.0f32; g.cout];
                        for n in 0..g.n {
                            for (co, acc) in gb.iter_mut().enumerate() {
                                *acc += gout[(n * g.cout + co) * plane..][..plane].iter().sum::<f32>();
                            }
                        }
                        gb
                    });
                    res.push(gb);
                }
                res
            }),
        ))
    }

    fn unary(&self, f: impl Fn(f32) -> f32, df: impl Fn(f32, f32) -> f32 + 'static) -> Tensor {
        let out: Vec<f32> = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_op(
            self.shape(),
            out,
            vec![self.clone()],
            Box::new(move |p, y, g| {
                let x = p[0].data();
                vec![Some(
                    x.iter()
                        .zip(y)
                        .zip(g)
                        .map(|((&x, &y), &g)| g * df(x, y))
                        .collect(),
                )]
            }),
        )
    }

    pub fn leaky_relu(&self, slope: f32) -> Tensor {
        self.unary(
            move |x| if x >= 0.0 { x } else { slope * x },
            move |x, _| if x >= 0.0 { 1.0 } else { slope },
        )
    }

    pub fn relu(&self) -> Tensor {
        self.leaky_relu(0.0)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary(|x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn tanh(&self) -> Tensor {
        self.unary(f32::tanh, |_, y| 1.0 - y * y)
    }

    pub fn square(&self) -> Tensor {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn scale(&self, s: f32) -> Tensor {
        self.unary(move |x| x * s, move |_, _| s)
    }

    pub fn add_scalar(&self, s: f32) -> Tensor {
        self.unary(move |x| x + s, |_, _| 1.0)
    }

    /// `max(x, floor)`; gradient passes only where `x > floor`.
    pub fn clamp_min(&self, floor: f32) -> Tensor {
        self.unary(
            move |x| x.max(floor),
            move |x, _| if x > floor { 1.0 } else { 0.0 },
        )
    }

    /// Elementwise `x^p`; intended for positive `x`.
    pub fn powf(&self, p: f32) -> Tensor {
        self.unary(move |x| x.powf(p), move |x, y| if x == 0.0 { 0.0 } else { p * y / x })
    }

    fn binary(
        &self,
        other: &Tensor,
        name: &str,
        f: impl Fn(f32, f32) -> f32,
        da: impl Fn(f32, f32, f32) -> f32 + 'static,
        db: impl Fn(f32, f32, f32) -> f32 + 'static,
    ) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(shape_mismatch(name, self.shape(), other.shape()));
        }
        let out = zip_map(&self.data(), &other.data(), f);
        Ok(Tensor::from_op(
            self.shape(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |p, y, g| {
                let (a, b) = (p[0].data(), p[1].data());
                let ga = p[0].requires_grad().then(|| {
                    (0..g.len()).map(|i| g[i] * da(a[i], b[i], y[i])).collect()
                });
                let gb = p[1].requires_grad().then(|| {
                    (0..g.len()).map(|i| g[i] * db(a[i], b[i], y[i])).collect()
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", |a, b| a + b, |_, _, _| 1.0, |_, _, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", |a, b| a - b, |_, _, _| 1.0, |_, _, _| -1.0)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |a, b| a * b, |_, b, _| b, |a, _, _| a)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "div", |a, b| a / b, |_, b, _| 1.0 / b, |_, b, y| -y / b)
    }

    /// Mean of all elements as a `(1, 1, 1, 1)` tensor (accumulated in f64).
    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let m = (self.data().iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64) as f32;
        Tensor::from_op(
            [1, 1, 1, 1],
            vec![m],
            vec![self.clone()],
            Box::new(move |_, _, g| vec![Some(vec![g[0] / n as f32; n])]),
        )
    }

    pub fn sum(&self) -> Tensor {
        let n = self.numel();
        let s = self.data().iter().map(|&v| f64::from(v)).sum::<f64>() as f32;
        Tensor::from_op(
            [1, 1, 1, 1],
            vec![s],
            vec![self.clone()],
            Box::new(move |_, _, g| vec![Some(vec![g[0]; n])]),
        )
    }

    /// Per-plane spatial mean, `(N, C, H, W) -> (N, C, 1, 1)`.
    pub fn mean_spatial(&self) -> Tensor {
        let [n, c, h, w] = self.shape();
        let hw = h * w;
        let out: Vec<f32> = self
            .data()
            .chunks(hw)
            .map(|p| (p.iter().map(|&v| f64::from(v)).sum::<f64>() / hw as f64) as f32)
            .collect();
        Tensor::from_op(
            [n, c, 1, 1],
            out,
            vec![self.clone()],
            Box::new(move |_, _, g| {
                let mut gx = Vec::with_capacity(n * c * hw);
                for &gv in g {
                    gx.extend(std::iter::repeat_n(gv / hw as f32, hw));
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Mean squared difference, a scalar.
    pub fn mse(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(shape_mismatch("mse", self.shape(), other.shape()));
        }
        let n = self.numel();
        let v = {
            let (a, b) = (self.data(), other.data());
            a.iter()
                .zip(b.iter())
                .map(|(&x, &y)| {
                    let d = f64::from(x) - f64::from(y);
                    d * d
                })
                .sum::<f64>()
                / n as f64
        };
        Ok(Tensor::from_op(
            [1, 1, 1, 1],
            vec![v as f32],
            vec![self.clone(), other.clone()],
            Box::new(move |p, _, g| {
                let (a, b) = (p[0].data(), p[1].data());
                let k = 2.0 * g[0] / n as f32;
                let d: Vec<f32> = a.iter().zip(b.iter()).map(|(x, y)| k * (x - y)).collect();
                let gb = p[1].requires_grad().then(|| d.iter().map(|v| -v).collect());
                vec![Some(d), gb]
            }),
        ))
    }

    /// Concatenate along the channel axis.
    pub fn concat(xs: &[&Tensor]) -> Result<Tensor> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let [n, _, h, w] = first.shape();
        let mut chans = Vec::with_capacity(xs.len());
        for x in xs {
            let s = x.shape();
            if s[0] != n || s[2] != h || s[3] != w {
                return Err(shape_mismatch("concat", first.shape(), s));
            }
            chans.push(s[1]);
        }
        let ctot: usize = chans.iter().sum();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * ctot * hw);
        for b in 0..n {
            for (x, &c) in xs.iter().zip(&chans) {
                out.extend_from_slice(&x.data()[b * c * hw..(b + 1) * c * hw]);
            }
        }
        let parents: Vec<Tensor> = xs.iter().map(|&x| x.clone()).collect();
        Ok(Tensor::from_op(
            [n, ctot, h, w],
            out,
            parents,
            Box::new(move |p, _, g| {
                let mut res = Vec::with_capacity(p.len());
                let mut offset = 0;
                for (t, &c) in p.iter().zip(&chans) {
                    if t.requires_grad() {
                        let mut gx = Vec::with_capacity(n * c * hw);
                        for b in 0..n {
                            let start = (b * ctot + offset) * hw;
                            gx.extend_from_slice(&g[start..start + c * hw]);
                        }
                        res.push(Some(gx));
                    } else {
                        res.push(None);
                    }
                    offset += c;
                }
                res
            }),
        ))
    }

    /// Stack constant samples along the batch axis. The result does not track gradients.
    pub fn stack(xs: &[&Tensor]) -> Result<Tensor> {
        let first = xs
            .first()
            .ok_or_else(|| Error::Shape("stack of zero tensors".into()))?;
        let [_, c, h, w] = first.shape();
        let mut n = 0;
        let mut out = Vec::new();
        for x in xs {
            let s = x.shape();
            if s[1] != c || s[2] != h || s[3] != w {
                return Err(shape_mismatch("stack", first.shape(), s));
            }
            n += s[0];
            out.extend_from_slice(&x.data());
        }
        Ok(Tensor::constant([n, c, h, w], out))
    }

    /// `(N, C*r*r, H, W) -> (N, C, r*H, r*W)` with
    /// `out(n, c, r*i + a, r*j + b) = in(n, c*r*r + a*r + b, i, j)`.
    pub fn pixel_shuffle(&self, r: usize) -> Result<Tensor> {
        let [n, cr, h, w] = self.shape();
        if r == 0 || cr % (r * r) != 0 {
            return Err(Error::Shape(format!(
                "pixel_shuffle: {cr} channels not divisible by {}",
                r * r
            )));
        }
        let c = cr / (r * r);
        let out = shuffle(&self.data(), [n, c, h, w], r, true);
        Ok(Tensor::from_op(
            [n, c, h * r, w * r],
            out,
            vec![self.clone()],
            Box::new(move |_, _, g| vec![Some(shuffle(g, [n, c, h, w], r, false))]),
        ))
    }

    /// Inverse of [`Tensor::pixel_shuffle`].
    pub fn pixel_unshuffle(&self, r: usize) -> Result<Tensor> {
        let [n, c, hr, wr] = self.shape();
        if r == 0 || hr % r != 0 || wr % r != 0 {
            return Err(Error::Geometry(format!(
                "pixel_unshuffle: {hr}x{wr} not divisible by {r}"
            )));
        }
        let (h, w) = (hr / r, wr / r);
        let out = shuffle(&self.data(), [n, c, h, w], r, false);
        Ok(Tensor::from_op(
            [n, c * r * r, h, w],
            out,
            vec![self.clone()],
            Box::new(move |_, _, g| vec![Some(shuffle(g, [n, c, h, w], r, true))]),
        ))
    }

    /// 2x bilinear upsampling with half-pixel centers (`align_corners = false`).
    pub fn upsample_bilinear2x(&self) -> Tensor {
        let [n, c, h, w] = self.shape();
        let ty = bilinear_taps(h);
        let tx = bilinear_taps(w);
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = vec![0.0f32; n * c * ho * wo];
        {
            let x = self.data();
            for (pi, plane) in x.chunks(h * w).enumerate() {
                let o = &mut out[pi * ho * wo..][..ho * wo];
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                        let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                        o[oy * wo + ox] = top * (1.0 - fy) + bot * fy;
                    }
                }
            }
        }
        Tensor::from_op(
            [n, c, ho, wo],
            out,
            vec![self.clone()],
            Box::new(move |_, _, g| {
                let mut gx = vec![0.0f32; n * c * h * w];
                for (pi, gp) in g.chunks(ho * wo).enumerate() {
                    let dst = &mut gx[pi * h * w..][..h * w];
                    for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                            let gv = gp[oy * wo + ox];
                            dst[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                            dst[y0 * w + x1] += gv * (1.0 - fy) * fx;
                            dst[y1 * w + x0] += gv * fy * (1.0 - fx);
                            dst[y1 * w + x1] += gv * fy * fx;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// 2x2 box average; an odd trailing row/column is dropped.
    pub fn avg_pool2x(&self) -> Tensor {
        let [n, c, h, w] = self.shape();
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        {
            let x = self.data();
            for plane in x.chunks(h * w) {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let (y, xx) = (2 * oy, 2 * ox);
                        out.push(
                            0.25 * (plane[y * w + xx]
                                + plane[y * w + xx + 1]
                                + plane[(y + 1) * w + xx]
                                + plane[(y + 1) * w + xx + 1]),
                        );
                    }
                }
            }
        }
        Tensor::from_op(
            [n, c, ho, wo],
            out,
            vec![self.clone()],
            Box::new(move |_, _, g| {
                let mut gx = vec![0.0f32; n * c * h * w];
                for (pi, gp) in g.chunks(ho * wo).enumerate() {
                    let dst = &mut gx[pi * h * w..][..h * w];
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let v = 0.25 * gp[oy * wo + ox];
                            let (y, xx) = (2 * oy, 2 * ox);
                            dst[y * w + xx] += v;
                            dst[y * w + xx + 1] += v;
                            dst[(y + 1) * w + xx] += v;
                            dst[(y + 1) * w + xx + 1] += v;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Separable filtering of every plane with the same 1-D `taps`, keeping
    /// only fully covered ("valid") positions.
    pub fn separable_filter_valid(&self, taps: &[f32]) -> Result<Tensor> {
        let [n, c, h, w] = self.shape();
        let k = taps.len();
        if k == 0 || h < k || w < k {
            return Err(Error::Size(format!(
                "{k}-tap filter does not fit a {h}x{w} plane"
            )));
        }
        let (ho, wo) = (h - k + 1, w - k + 1);
        let taps = taps.to_vec();
        let out = {
            let x = self.data();
            let mut out = Vec::with_capacity(n * c * ho * wo);
            let mut tmp = vec![0.0f32; h * wo];
            for plane in x.chunks(h * w) {
                for y in 0..h {
                    for ox in 0..wo {
                        tmp[y * wo + ox] = (0..k).map(|t| taps[t] * plane[y * w + ox + t]).sum();
                    }
                }
                for oy in 0..ho {
                    for ox in 0..wo {
                        out.push((0..k).map(|t| taps[t] * tmp[(oy + t) * wo + ox]).sum());
                    }
                }
            }
            out
        };
        Ok(Tensor::from_op(
            [n, c, ho, wo],
            out,
            vec![self.clone()],
            Box::new(move |_, _, g| {
                let mut gx = vec![0.0f32; n * c * h * w];
                let mut tmp = vec![0.0f32; h * wo];
                for (pi, gp) in g.chunks(ho * wo).enumerate() {
                    tmp.fill(0.0);
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let gv = gp[oy * wo + ox];
                            for t in 0..k {
                                tmp[(oy + t) * wo + ox] += taps[t] * gv;
                            }
                        }
                    }
                    let dst = &mut gx[pi * h * w..][..h * w];
                    for y in 0..h {
                        for ox in 0..wo {
                            let tv = tmp[y * wo + ox];
                            for t in 0..k {
                                dst[y * w + ox + t] += taps[t] * tv;
                            }
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}

/// Shared index permutation of pixel shuffle. `small` is `(N, C, H, W)` of
/// the low-resolution side; `forward` maps `(N, C*r*r, H, W)` to
/// `(N, C, r*H, r*W)`, otherwise the reverse.
fn shuffle(src: &[f32], small: Shape, r: usize, forward: bool) -> Vec<f32> {
    let [n, c, h, w] = small;
    let mut out = vec![0.0f32; numel(small) * r * r];
    let (hr, wr) = (h * r, w * r);
    for b in 0..n {
        for ch in 0..c {
            for a in 0..r {
                for bb in 0..r {
                    let deep = ch * r * r + a * r + bb;
                    for i in 0..h {
                        for j in 0..w {
                            let lo = ((b * c * r * r + deep) * h + i) * w + j;
                            let hi = ((b * c + ch) * hr + r * i + a) * wr + r * j + bb;
                            if forward {
                                out[hi] = src[lo];
                            } else {
                                out[lo] = src[hi];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
