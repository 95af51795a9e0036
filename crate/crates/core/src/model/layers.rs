//! Building blocks shared by both pyramids.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{check_kernel_set, UpsampleKind};
use crate::error::Result;
use crate::tensor::{Parameter, Tensor};

pub const LEAKY_SLOPE: f32 = 0.2;

/// Owns every parameter of a network in creation order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Parameter)>,
}

impl ParamStore {
    pub fn push(&mut self, name: String, p: Parameter) -> usize {
        debug_assert!(
            self.entries.iter().all(|(n, _)| *n != name),
            "duplicate parameter {name}"
        );
        self.entries.push((name, p));
        self.entries.len() - 1
    }

    pub fn get(&self, idx: usize) -> &Parameter {
        &self.entries[idx].1
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.entries[idx].0
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.entries.iter().map(|(n, p)| (n.as_str(), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.entries.iter_mut().map(|(n, p)| (n.as_str(), p))
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, p)| p.numel()).sum()
    }
}

/// Seeded parameter factory.
pub struct Init<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub store: &'a mut ParamStore,
    pub bias: bool,
}

impl Init<'_> {
    /// Kaiming-uniform conv kernel (leaky-ReLU gain) with zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, shift: u32) -> Conv {
        let fan_in = (cin * k * k) as f32;
        let gain = (2.0 / (1.0 + LEAKY_SLOPE * LEAKY_SLOPE)).sqrt();
        let bound = gain * (3.0 / fan_in).sqrt();
        let w: Vec<f32> = (0..cout * cin * k * k)
            .map(|_| self.rng.gen_range(-bound..bound))
            .collect();
        let weight = self
            .store
            .push(format!("{name}.weight"), Parameter::new([cout, cin, k, k], w));
        let bias = self.bias.then(|| {
            self.store
                .push(format!("{name}.bias"), Parameter::new([1, cout, 1, 1], vec![0.0; cout]))
        });
        Conv {
            name: name.to_string(),
            weight,
            bias,
            cin,
            cout,
            k,
            shift,
        }
    }
}

/// Stride-1, same-padded convolution.
#[derive(Debug, Clone)]
pub struct Conv {
    pub name: String,
    pub weight: usize,
    pub bias: Option<usize>,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    /// Output resolution is the full input resolution divided by `2^shift`.
    pub shift: u32,
}

impl Conv {
    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let w = store.get(self.weight).tensor();
        let b = self.bias.map(|i| store.get(i).tensor());
        x.conv2d(w, b, 1, self.k / 2)
    }

    pub fn param_count(&self) -> usize {
        self.cout * self.cin * self.k * self.k + if self.bias.is_some() { self.cout } else { 0 }
    }

    /// Multiply-accumulates on a `height x width` full-resolution input.
    pub fn macs(&self, height: usize, width: usize) -> u64 {
        let (h, w) = ((height >> self.shift) as u64, (width >> self.shift) as u64);
        (self.cout * self.cin * self.k * self.k) as u64 * h * w
    }
}

/// Parallel same-padded convolutions of different kernel sizes, channel
/// concatenated and activated.
#[derive(Debug, Clone)]
pub struct MultiConvBlock {
    pub branches: Vec<Conv>,
}

impl MultiConvBlock {
    pub fn new(
        init: &mut Init<'_>,
        name: &str,
        cin: usize,
        channels: usize,
        kernels: &[usize],
        shift: u32,
    ) -> Result<Self> {
        check_kernel_set(channels, kernels)?;
        let per = channels / kernels.len();
        let branches = kernels
            .iter()
            .map(|&k| init.conv(&format!("{name}.k{k}"), cin, per, k, shift))
            .collect();
        Ok(Self { branches })
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let outs = self
            .branches
            .iter()
            .map(|c| c.forward(store, x))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = outs.iter().collect();
        Ok(Tensor::concat(&refs)?.leaky_relu(LEAKY_SLOPE))
    }

    pub fn out_channels(&self) -> usize {
        self.branches.iter().map(|c| c.cout).sum()
    }
}

/// Two activated 3x3 convolutions.
#[derive(Debug, Clone)]
pub struct PairedBlock {
    pub first: Conv,
    pub second: Conv,
}

impl PairedBlock {
    pub fn new(init: &mut Init<'_>, name: &str, cin: usize, channels: usize, shift: u32) -> Self {
        Self {
            first: init.conv(&format!("{name}.conv0"), cin, channels, 3, shift),
            second: init.conv(&format!("{name}.conv1"), channels, channels, 3, shift),
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_mid(store, x)?.1)
    }

    /// Output together with the activation between the two convs.
    pub fn forward_mid(&self, store: &ParamStore, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let y = self.first.forward(store, x)?.leaky_relu(LEAKY_SLOPE);
        let z = self.second.forward(store, &y)?.leaky_relu(LEAKY_SLOPE);
        Ok((y, z))
    }
}

#[derive(Debug, Clone)]
pub enum Block {
    Multi(MultiConvBlock),
    Paired(PairedBlock),
}

impl Block {
    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        match self {
            Block::Multi(b) => b.forward(store, x),
            Block::Paired(b) => b.forward(store, x),
        }
    }

    pub fn convs(&self) -> Vec<&Conv> {
        match self {
            Block::Multi(b) => b.branches.iter().collect(),
            Block::Paired(b) => vec![&b.first, &b.second],
        }
    }
}

/// 2x upsampler between pyramid levels.
#[derive(Debug, Clone)]
pub struct Upsampler {
    pub kind: UpsampleKind,
    pub conv: Conv,
}

impl Upsampler {
    /// `from_shift` is the resolution of the incoming features.
    pub fn new(
        init: &mut Init<'_>,
        name: &str,
        kind: UpsampleKind,
        cin: usize,
        cout: usize,
        from_shift: u32,
    ) -> Self {
        let conv = match kind {
            UpsampleKind::Subpixel => init.conv(&format!("{name}.subpixel"), cin, 4 * cout, 3, from_shift),
            UpsampleKind::Bilinear => init.conv(&format!("{name}.conv"), cin, cout, 3, from_shift - 1),
        };
        Self { kind, conv }
    }

    /// Upsample and activate.
    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let y = match self.kind {
            UpsampleKind::Subpixel => subpixel_upsample(
                x,
                store.get(self.conv.weight).tensor(),
                self.conv.bias.map(|i| store.get(i).tensor()),
            )?,
            UpsampleKind::Bilinear => self.conv.forward(store, &x.upsample_bilinear2x())?,
        };
        Ok(y.leaky_relu(LEAKY_SLOPE))
    }
}

/// Sub-pixel convolution: a 3x3 conv to `4C` channels rearranged into a
/// 2x larger `C`-channel map.
pub fn subpixel_upsample(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    x.conv2d(weight, bias, 1, 1)?.pixel_shuffle(2)
}
