use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{HeadActivation, ModelConfig};
use super::layers::{Block, Conv, Init, MultiConvBlock, PairedBlock, ParamStore, Upsampler};
use crate::checkpoint::{Checkpoint, Entry};
use crate::error::{Error, Result};
use crate::tensor::{Parameter, Tensor};

/// Name of the distillation feature tap: output of the first level-1 block.
pub const DISTILL_TAP: &str = "level1.block0.out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkKind {
    Student,
    Teacher,
}

#[derive(Debug, Clone)]
struct Level {
    /// Upsampler bringing level `L + 1` features up to this level.
    from_below: Option<Upsampler>,
    blocks: Vec<Block>,
    head: Conv,
}

#[derive(Debug, Clone)]
struct LevelZero {
    up: Upsampler,
    out: Conv,
}

/// A PyNET-style inverted pyramid. Level 0 is full resolution; level `L`
/// works at `1 / 2^L` of it. The student keeps levels 0 and 1.
#[derive(Debug, Clone)]
pub struct Network {
    kind: NetworkKind,
    cfg: ModelConfig,
    store: ParamStore,
    /// `levels[i]` is pyramid level `i + 1`.
    levels: Vec<Level>,
    zero: LevelZero,
}

/// Tensors produced by one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Image head outputs, indexed by level; only computed levels are `Some`.
    pub images: Vec<Option<Tensor>>,
    /// Named intermediate features in creation order.
    pub taps: Vec<(String, Tensor)>,
    /// Features after the last block of every computed level `>= 1`.
    pub features: Vec<Option<Tensor>>,
}

impl Forward {
    pub fn image(&self, level: usize) -> Option<&Tensor> {
        self.images.get(level).and_then(|t| t.as_ref())
    }

    pub fn tap(&self, name: &str) -> Option<&Tensor> {
        self.taps.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// The three tensors a full student forward pass hands to the losses.
#[derive(Debug, Clone)]
pub struct StudentOutput {
    pub rgb_full: Tensor,
    pub rgb_half: Tensor,
    pub tap: Tensor,
}

/// Frozen copy of all parameter values, in store order.
pub type Snapshot = Vec<Vec<f32>>;

impl Network {
    pub fn build(kind: NetworkKind, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        if kind == NetworkKind::Student && cfg.levels != 1 {
            return Err(Error::Config(format!(
                "a student keeps levels 0 and 1 only, config asks for {}",
                cfg.levels
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::default();
        let mut init = Init {
            rng: &mut rng,
            store: &mut store,
            bias: cfg.bias,
        };

        // Deepest level first so parameter order follows the data flow.
        let mut built: Vec<Level> = Vec::new();
        for level in (1..=cfg.levels).rev() {
            let c = cfg.channels_at(level);
            let shift = level as u32;
            let from_below = (level < cfg.levels).then(|| {
                Upsampler::new(
                    &mut init,
                    &format!("level{level}.up"),
                    cfg.upsample_kind,
                    cfg.channels_at(level + 1),
                    c,
                    shift + 1,
                )
            });
            let mut cin = 4 + if from_below.is_some() { c } else { 0 };
            let mut blocks = Vec::new();
            if level == 1 {
                for b in 0..cfg.level1_blocks {
                    blocks.push(Block::Multi(MultiConvBlock::new(
                        &mut init,
                        &format!("level1.block{b}"),
                        cin,
                        c,
                        &cfg.level1_kernels,
                        shift,
                    )?));
                    cin = c;
                }
            } else {
                for b in 0..cfg.lower_blocks {
                    blocks.push(Block::Paired(PairedBlock::new(
                        &mut init,
                        &format!("level{level}.block{b}"),
                        cin,
                        c,
                        shift,
                    )));
                    cin = c;
                }
            }
            let head = init.conv(&format!("level{level}.head"), c, 3, 3, shift);
            built.push(Level {
                from_below,
                blocks,
                head,
            });
        }
        built.reverse();

        let c1 = cfg.channels_at(1);
        let up = Upsampler::new(&mut init, "level0.up", cfg.upsample_kind, c1, c1, 1);
        let out_cin = c1 + usize::from(cfg.use_residual_gray);
        let out = init.conv("level0.out", out_cin, 3, 1, 0);

        Ok(Self {
            kind,
            cfg: cfg.clone(),
            store,
            levels: built,
            zero: LevelZero { up, out },
        })
    }

    pub fn student(cfg: &ModelConfig) -> Result<Self> {
        Self::build(NetworkKind::Student, cfg)
    }

    pub fn teacher(cfg: &ModelConfig) -> Result<Self> {
        Self::build(NetworkKind::Teacher, cfg)
    }

    pub fn kind(&self) -> NetworkKind {
        self.kind
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.numel()
    }

    /// Every convolution in the network.
    pub fn convs(&self) -> Vec<&Conv> {
        let mut v = Vec::new();
        for l in &self.levels {
            if let Some(u) = &l.from_below {
                v.push(&u.conv);
            }
            for b in &l.blocks {
                v.extend(b.convs());
            }
            v.push(&l.head);
        }
        v.push(&self.zero.up.conv);
        v.push(&self.zero.out);
        v
    }

    /// `sum(Cout * Cin * k^2 * Hout * Wout)` over all convolutions for a
    /// full-resolution `height x width` input.
    pub fn mac_count(&self, height: usize, width: usize) -> u64 {
        self.convs().iter().map(|c| c.macs(height, width)).sum()
    }

    /// Parameters of all inter-level upsamplers (level 0 included).
    pub fn upsampler_param_count(&self) -> usize {
        let mut n = self.zero.up.conv.param_count();
        for l in &self.levels {
            if let Some(u) = &l.from_below {
                n += u.conv.param_count();
            }
        }
        n
    }

    /// Weights that read the gray image in the final convolution.
    pub fn gray_path_param_count(&self) -> usize {
        if self.cfg.use_residual_gray {
            self.zero.out.cout * self.zero.out.k * self.zero.out.k
        } else {
            0
        }
    }

    /// The final 1x1 convolution (`weight`, optional `bias` parameter indices).
    pub fn final_conv(&self) -> &Conv {
        &self.zero.out
    }

    fn head(&self, x: &Tensor) -> Tensor {
        match self.cfg.head_activation {
            HeadActivation::Sigmoid => x.sigmoid(),
            HeadActivation::Tanh => x.tanh().scale(0.5).add_scalar(0.5),
            HeadActivation::Identity => x.clone(),
        }
    }

    fn check_input(&self, mosaic: &Tensor) -> Result<()> {
        let [_, c, h, w] = mosaic.shape();
        if c != 1 {
            return Err(Error::Shape(format!(
                "network input must be a 1-channel mosaic, got {:?}",
                mosaic.shape()
            )));
        }
        let m = 1usize << self.cfg.levels;
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(Error::Geometry(format!(
                "{h}x{w} input is not a multiple of {m} required by {} pyramid levels",
                self.cfg.levels
            )));
        }
        Ok(())
    }

    /// Run the pyramid down to level `top` (0 = full resolution output).
    ///
    /// `mosaic` is `(N, 1, H, W)`. Levels above `max(top, 1)` are skipped;
    /// the image head of `max(top, 1)` is always evaluated.
    pub fn forward(&self, mosaic: &Tensor, top: usize) -> Result<Forward> {
        self.check_input(mosaic)?;
        if top > self.cfg.levels {
            return Err(Error::Config(format!(
                "level {top} requested from a {}-level network",
                self.cfg.levels
            )));
        }
        let deepest = self.cfg.levels;
        let stop = top.max(1);

        let mut inputs = vec![mosaic.pixel_unshuffle(2)?];
        for _ in 2..=deepest {
            let next = inputs.last().expect("nonempty").avg_pool2x();
            inputs.push(next);
        }

        let mut images = vec![None; deepest + 1];
        let mut features: Vec<Option<Tensor>> = vec![None; deepest + 1];
        let mut taps = Vec::new();
        for level in (stop..=deepest).rev() {
            let spec = &self.levels[level - 1];
            let scaled = &inputs[level - 1];
            let mut x = match &spec.from_below {
                Some(up) => {
                    let below = features[level + 1].as_ref().expect("deeper level computed");
                    let u = up.forward(&self.store, below)?;
                    taps.push((format!("level{level}.up.out"), u.clone()));
                    Tensor::concat(&[scaled, &u])?
                }
                None => scaled.clone(),
            };
            for (b, block) in spec.blocks.iter().enumerate() {
                x = match block {
                    Block::Paired(pb) => {
                        let (mid, out) = pb.forward_mid(&self.store, &x)?;
                        taps.push((format!("level{level}.block{b}.mid"), mid));
                        out
                    }
                    Block::Multi(mb) => mb.forward(&self.store, &x)?,
                };
                taps.push((format!("level{level}.block{b}.out"), x.clone()));
            }
            if level == stop {
                images[level] = Some(self.head(&spec.head.forward(&self.store, &x)?));
            }
            features[level] = Some(x);
        }

        if top == 0 {
            let f1 = features[1].as_ref().expect("level 1 computed");
            let up = self.zero.up.forward(&self.store, f1)?;
            taps.push(("level0.up.out".to_string(), up.clone()));
            let z = if self.cfg.use_residual_gray {
                Tensor::concat(&[&up, mosaic])?
            } else {
                up
            };
            images[0] = Some(self.head(&self.zero.out.forward(&self.store, &z)?));
        }
        Ok(Forward {
            images,
            taps,
            features,
        })
    }

    /// Full forward pass packaged as [`StudentOutput`].
    pub fn forward_full(&self, mosaic: &Tensor) -> Result<StudentOutput> {
        let f = self.forward(mosaic, 0)?;
        Ok(StudentOutput {
            rgb_full: f.image(0).expect("level 0").clone(),
            rgb_half: f.image(1).expect("level 1").clone(),
            tap: f.tap(DISTILL_TAP).expect("tap").clone(),
        })
    }

    /// Channels of the distillation tap.
    pub fn tap_channels(&self) -> usize {
        self.cfg.channels_at(1)
    }

    pub fn snapshot(&self) -> Snapshot {
        self.store.iter().map(|(_, p)| p.values()).collect()
    }

    pub fn restore(&self, snap: &Snapshot) -> Result<()> {
        if snap.len() != self.store.len() {
            return Err(Error::Load(format!(
                "snapshot has {} tensors, network has {}",
                snap.len(),
                self.store.len()
            )));
        }
        for ((name, p), v) in self.store.iter().zip(snap) {
            p.set_values(v).map_err(|e| e.with_context(name))?;
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        for (_, p) in self.store.iter() {
            p.zero_grad();
        }
    }

    /// Parameters holding a gradient from the last backward sweep.
    pub fn params_with_grad(&mut self) -> Vec<&mut Parameter> {
        self.store
            .iter_mut()
            .filter(|(_, p)| p.grad().is_some())
            .map(|(_, p)| p)
            .collect()
    }

    pub fn reset_optimizer(&mut self) {
        for (_, p) in self.store.iter_mut() {
            p.reset_moments();
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: serde_json::json!({
                "kind": self.kind,
                "model": self.cfg,
            }),
            entries: self
                .store
                .iter()
                .map(|(name, p)| Entry {
                    name: name.to_string(),
                    dims: p.shape().to_vec(),
                    data: p.values(),
                })
                .collect(),
        }
    }

    /// Copy values from `ck`, which must hold exactly this network's layers.
    pub fn load_checkpoint(&self, ck: &Checkpoint) -> Result<()> {
        for (i, (name, p)) in self.store.iter().enumerate() {
            let Some(e) = ck.entries.get(i) else {
                return Err(Error::Load(format!("checkpoint lacks layer {name}")));
            };
            if e.name != name {
                return Err(Error::Load(format!(
                    "layer {name}: checkpoint has {} at this position",
                    e.name
                )));
            }
            if e.dims != p.shape().to_vec() {
                return Err(Error::Load(format!(
                    "layer {name}: checkpoint shape {:?}, network shape {:?}",
                    e.dims,
                    p.shape()
                )));
            }
        }
        if ck.entries.len() > self.store.len() {
            return Err(Error::Load(format!(
                "layer {}: not present in the network",
                ck.entries[self.store.len()].name
            )));
        }
        for ((_, p), e) in self.store.iter().zip(&ck.entries) {
            p.set_values(&e.data)?;
        }
        Ok(())
    }

    /// Rebuild a network from the architecture recorded in `ck` and load it.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let kind: NetworkKind = serde_json::from_value(ck.meta["kind"].clone())
            .map_err(|e| Error::Load(format!("checkpoint kind: {e}")))?;
        let cfg: ModelConfig = serde_json::from_value(ck.meta["model"].clone())
            .map_err(|e| Error::Load(format!("checkpoint model config: {e}")))?;
        let net = Self::build(kind, &cfg)?;
        net.load_checkpoint(ck)?;
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UpsampleKind;

    #[test]
    fn student_shapes() {
        let net = Network::student(&ModelConfig::student_desk()).unwrap();
        let x = Tensor::full([1, 1, 64, 64], 0.5);
        let out = net.forward_full(&x).unwrap();
        assert_eq!(out.rgb_full.shape(), [1, 3, 64, 64]);
        assert_eq!(out.rgb_half.shape(), [1, 3, 32, 32]);
        assert_eq!(out.tap.shape(), [1, 4, 32, 32]);
    }

    #[test]
    fn teacher_level_shapes() {
        let net = Network::teacher(&ModelConfig::teacher_desk()).unwrap();
        let x = Tensor::full([1, 1, 128, 128], 0.5);
        let f = net.forward(&x, 0).unwrap();
        for (level, side) in [(1, 64), (2, 32), (3, 16), (4, 8), (5, 4)] {
            let feat = f.features[level].as_ref().unwrap();
            assert_eq!(feat.shape()[2..], [side, side], "level {level}");
            assert_eq!(feat.shape()[1], 8 << (level - 1));
        }
        assert_eq!(f.image(0).unwrap().shape(), [1, 3, 128, 128]);
        for level in 1..=5 {
            let g = net.forward(&x, level).unwrap();
            let side = 128 >> level;
            assert_eq!(g.image(level).unwrap().shape(), [1, 3, side, side]);
        }
    }

    #[test]
    fn teacher_rejects_unaligned_input() {
        let net = Network::teacher(&ModelConfig::teacher_desk()).unwrap();
        let x = Tensor::full([1, 1, 48, 48], 0.5);
        assert_eq!(net.forward(&x, 0).unwrap_err().class(), "geometry");
    }

    #[test]
    fn single_conv_counts() {
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut init = Init {
            rng: &mut rng,
            store: &mut store,
            bias: false,
        };
        let c = init.conv("c", 1, 1, 3, 0);
        assert_eq!(c.param_count(), 9);
        assert_eq!(c.macs(10, 10), 900);
    }

    #[test]
    fn residual_gray_removes_exactly_its_weights() {
        let mut cfg = ModelConfig::student_desk();
        let with = Network::student(&cfg).unwrap();
        cfg.use_residual_gray = false;
        let without = Network::student(&cfg).unwrap();
        assert_eq!(
            with.param_count() - without.param_count(),
            with.gray_path_param_count()
        );
        assert_eq!(with.gray_path_param_count(), 3);
    }

    #[test]
    fn bilinear_teacher_saves_the_subpixel_widening() {
        let mut cfg = ModelConfig::teacher_desk();
        let sp = Network::teacher(&cfg).unwrap();
        cfg.upsample_kind = UpsampleKind::Bilinear;
        let bl = Network::teacher(&cfg).unwrap();
        // Each sub-pixel conv has 4x the output channels of its bilinear twin.
        let extra: usize = sp
            .convs()
            .iter()
            .filter(|c| c.name.ends_with(".subpixel"))
            .map(|c| c.param_count() - c.param_count() / 4)
            .sum();
        assert!(extra > 0);
        assert_eq!(sp.param_count() - bl.param_count(), extra);
    }

    #[test]
    fn builds_are_deterministic() {
        let cfg = ModelConfig::teacher_desk().with_seed(11);
        let a = Network::teacher(&cfg).unwrap();
        let b = Network::teacher(&cfg).unwrap();
        let bits = |n: &Network| -> Vec<u32> {
            n.snapshot().iter().flatten().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        let c = Network::teacher(&cfg.clone().with_seed(12)).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn every_parameter_belongs_to_one_conv() {
        let net = Network::teacher(&ModelConfig::teacher_desk()).unwrap();
        let mut seen = vec![0usize; net.params().len()];
        for c in net.convs() {
            seen[c.weight] += 1;
            if let Some(b) = c.bias {
                seen[b] += 1;
            }
        }
        assert!(seen.iter().all(|&n| n == 1));
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let net = Network::student(&ModelConfig::student_desk().with_seed(3)).unwrap();
        let ck = net.to_checkpoint();
        let back = Network::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap()).unwrap();
        assert_eq!(back.snapshot(), net.snapshot());

        let mut other_cfg = ModelConfig::student_desk();
        other_cfg.base_channels = 8;
        let other = Network::student(&other_cfg).unwrap();
        let err = other.load_checkpoint(&ck).unwrap_err();
        assert_eq!(err.class(), "load");
        assert!(err.to_string().contains("level1.block0.k3.weight"), "{err}");
    }
}
