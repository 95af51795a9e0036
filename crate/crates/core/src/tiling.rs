//! Full-frame inference by overlapping tiles.

use crate::cfa::{self, MosaicImage};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::losses::tensor_to_image;
use crate::model::Network;
use crate::tensor::no_grad;

/// Anything that turns a mosaic tile into RGB.
#[derive(Debug, Clone, Copy)]
pub enum Demosaicer<'a> {
    Classical,
    Network(&'a Network),
}

impl Demosaicer<'_> {
    /// Tile sides and offsets must be multiples of this.
    pub fn alignment(&self, m: &MosaicImage) -> usize {
        match self {
            Demosaicer::Classical => m.cfa().period(),
            Demosaicer::Network(n) => n.config().input_multiple(),
        }
    }

    /// Demosaic a whole (small enough) mosaic; network output is clamped to `[0, 1]`.
    pub fn run(&self, m: &MosaicImage) -> Result<RgbImage> {
        match self {
            Demosaicer::Classical => Ok(cfa::classical_demosaic(m)),
            Demosaicer::Network(n) => {
                if n.config().cfa != m.cfa() {
                    return Err(Error::Config(format!(
                        "model expects CFA {}, input has {}",
                        n.config().cfa,
                        m.cfa()
                    )));
                }
                let out = no_grad(|| n.forward_full(&cfa::gray_image(m)))?;
                Ok(tensor_to_image(&out.rgb_full)?.clamped())
            }
        }
    }
}

/// Tile origins along one axis: a regular `tile - overlap` step with the
/// last tile pushed back to end at the border.
pub fn tile_origins(len: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let step = tile - overlap;
    let mut v: Vec<usize> = (0..).map(|i| i * step).take_while(|&o| o + tile < len).collect();
    v.push(len - tile);
    v.dedup();
    v
}

/// Blend weight at distance `d` from an internal tile edge.
pub fn edge_ramp(d: usize, overlap: usize) -> f32 {
    if overlap == 0 {
        return 1.0;
    }
    let (lo, hi) = (overlap as f32 / 4.0, 3.0 * overlap as f32 / 4.0);
    let d = d as f32;
    if d < lo {
        0.0
    } else if d >= hi {
        1.0
    } else {
        (d - lo) / (hi - lo)
    }
}

fn axis_weights(len: usize, internal_lo: bool, internal_hi: bool, overlap: usize) -> Vec<f32> {
    (0..len)
        .map(|i| {
            let a = if internal_lo { edge_ramp(i, overlap) } else { 1.0 };
            let b = if internal_hi { edge_ramp(len - 1 - i, overlap) } else { 1.0 };
            a * b
        })
        .collect()
}

/// Demosaic `m` in `tile x tile` pieces overlapping by `overlap` pixels.
///
/// Pixels within `overlap / 4` of a shared tile edge are ignored and the
/// next `overlap / 2` are cross-faded, so a position-local demosaicer whose
/// support is below `overlap / 4` gives the same result as one full pass.
pub fn tiled_demosaic(
    m: &MosaicImage,
    d: &Demosaicer<'_>,
    tile: usize,
    overlap: usize,
) -> Result<RgbImage> {
    let a = d.alignment(m);
    let (w, h) = (m.width(), m.height());
    if w % a != 0 || h % a != 0 {
        return Err(Error::Geometry(format!(
            "{w}x{h} frame is not a multiple of {a}; crop it first"
        )));
    }
    if tile == 0 || !tile.is_multiple_of(a) || !overlap.is_multiple_of(a) {
        return Err(Error::Config(format!(
            "tile ({tile}) and overlap ({overlap}) must be multiples of {a}"
        )));
    }
    if overlap >= tile {
        return Err(Error::Config(format!("overlap {overlap} must be below tile {tile}")));
    }
    if w <= tile && h <= tile {
        return d.run(m);
    }
    let xs = tile_origins(w, tile, overlap);
    let ys = tile_origins(h, tile, overlap);
    let mut acc = RgbImage::filled(w, h, [0.0; 3]);
    let mut total = vec![0.0f32; w * h];
    for (yi, &y0) in ys.iter().enumerate() {
        let th = tile.min(h);
        let wy = axis_weights(th, yi > 0, yi + 1 < ys.len(), overlap);
        for (xi, &x0) in xs.iter().enumerate() {
            let tw = tile.min(w);
            let wx = axis_weights(tw, xi > 0, xi + 1 < xs.len(), overlap);
            let out = d.run(&m.crop(x0, y0, tw, th)?)?;
            for ty in 0..th {
                for tx in 0..tw {
                    let wt = wx[tx] * wy[ty];
                    if wt == 0.0 {
                        continue;
                    }
                    let (x, y) = (x0 + tx, y0 + ty);
                    let t = &mut total[y * w + x];
                    *t += wt;
                    let f = wt / *t;
                    for c in 0..3 {
                        let cur = acc.get(c, x, y);
                        acc.set(c, x, y, cur + f * (out.get(c, tx, ty) - cur));
                    }
                }
            }
        }
    }
    debug_assert!(total.iter().all(|&t| t > 0.0));
    Ok(acc)
}
