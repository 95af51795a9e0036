//! Training orchestration: level-1 pretraining, level-wise teacher training
//! with a checkpoint bank, and progressive distillation at level 0.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Entry};
use crate::datapipe::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::losses::{self, LossWeights, Perceptual, Regressor, DEFAULT_PERCEPTUAL_SEED};
use crate::model::{ModelConfig, Network, NetworkKind, Snapshot, DISTILL_TAP};
use crate::tensor::{adam_step, no_grad, AdamConfig, Parameter, Tensor};

pub const SATURATION_WINDOW: usize = 5;
pub const DEFAULT_SIGMA: f64 = 1e-6;

/// True iff at least five values exist and the population variance of the
/// last five is below `sigma`.
pub fn detect_saturation(history: &[f64], sigma: f64) -> bool {
    if history.len() < SATURATION_WINDOW {
        return false;
    }
    let w = &history[history.len() - SATURATION_WINDOW..];
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
    var < sigma
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaturationDetector {
    pub sigma: f64,
    pub history: Vec<f64>,
}

impl SaturationDetector {
    pub fn new(sigma: f64) -> Self {
        Self {
            sigma,
            history: Vec::new(),
        }
    }

    pub fn push(&mut self, v: f64) {
        self.history.push(v);
    }

    pub fn fires(&self) -> bool {
        detect_saturation(&self.history, self.sigma)
    }

    pub fn reset(&mut self) {
        self.history.clear();
    }
}

/// Training phase. `Done` only appears as a transition target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Phase {
    Level1,
    Solo,
    /// Distilling from teacher `T_i`, 1-based.
    Distill(usize),
    Done,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Level1 => f.write_str("level1"),
            Phase::Solo => f.write_str("solo"),
            Phase::Distill(i) => write!(f, "distill({i})"),
            Phase::Done => f.write_str("done"),
        }
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "level1" => Ok(Phase::Level1),
            "solo" => Ok(Phase::Solo),
            "done" => Ok(Phase::Done),
            _ => s
                .strip_prefix("distill(")
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|n| n.parse().ok())
                .filter(|&i| i >= 1)
                .map(Phase::Distill)
                .ok_or_else(|| Error::Format(format!("unknown phase {s:?}"))),
        }
    }
}

impl From<Phase> for String {
    fn from(p: Phase) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for Phase {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochEvent {
    pub epoch: usize,
    pub phase: Phase,
    /// Epoch mean of the quantity the saturation detector watches.
    pub monitored_loss: f64,
    /// Epoch mean of the optimized objective.
    pub loss: f64,
    /// Phase entered after this epoch, if any.
    pub transition: Option<Phase>,
}

pub fn write_event_log(events: &[EpochEvent], path: &Path) -> Result<()> {
    let mut s = String::new();
    for e in events {
        s.push_str(&serde_json::to_string(e).expect("event serializes"));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_event_log(path: &Path) -> Result<Vec<EpochEvent>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Epochs at which a transition was logged.
pub fn logged_transitions(events: &[EpochEvent]) -> Vec<usize> {
    events.iter().filter(|e| e.transition.is_some()).map(|e| e.epoch).collect()
}

/// Feed the logged monitored losses, phase by phase, through a fresh
/// detector and return the epochs where it fires.
pub fn replay_transitions(events: &[EpochEvent], sigma: f64) -> Vec<usize> {
    let mut det = SaturationDetector::new(sigma);
    let mut current = None;
    let mut out = Vec::new();
    for e in events {
        if current != Some(e.phase) {
            det.reset();
            current = Some(e.phase);
        }
        det.push(e.monitored_loss);
        if det.fires() {
            out.push(e.epoch);
            det.reset();
        }
    }
    out
}

/// Optimizer and batching knobs shared by all training loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffle and regressor initialization.
    pub seed: u64,
    pub perceptual_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 2,
            seed: 0,
            perceptual_seed: DEFAULT_PERCEPTUAL_SEED,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.adam.lr)));
        }
        Ok(())
    }
}

/// Batches of one epoch: a shuffle that depends only on `(seed, epoch)`.
pub fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mix = seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix));
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

fn require_data(data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    Ok(())
}

/// Box-downscaled target for pyramid level `level`.
fn target_at(s: &Sample, level: usize) -> Tensor {
    if level == 0 {
        return s.full.clone();
    }
    let mut t = s.half.clone();
    for _ in 1..level {
        t = t.avg_pool2x();
    }
    t
}

fn step_network(net: &mut Network, loss: &Tensor, adam: &AdamConfig) -> Result<()> {
    loss.backward()?;
    adam_step(net.params_with_grad(), adam)
}

/// Train a single pyramid level against its image head.
fn train_level(
    net: &mut Network,
    data: &Dataset,
    level: usize,
    epochs: usize,
    w: &LossWeights,
    tc: &TrainConfig,
    p: &Perceptual,
    mut on_epoch: impl FnMut(usize, f64, &Network),
) -> Result<Vec<f64>> {
    let mut curve = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let mut acc = 0.0;
        let batches = epoch_batches(data.len(), tc.batch_size, tc.seed, epoch);
        for idx in &batches {
            let b = data.batch(idx)?;
            let f = net.forward(&b.mosaic, level)?;
            let out = f.image(level).expect("requested level");
            let tgt = target_at(&b, level);
            let loss = if level == 0 {
                losses::level0_loss(out, &tgt, w, p)?
            } else {
                losses::level1_loss(out, &tgt, w, p)?
            };
            acc += f64::from(loss.item());
            step_network(net, &loss, &tc.adam)?;
        }
        let mean = acc / batches.len() as f64;
        debug!("level {level} epoch {epoch}: {mean:.6}");
        on_epoch(epoch, mean, net);
        curve.push(mean);
    }
    Ok(curve)
}

/// Level-1 pretraining with the half-resolution image loss; returns one
/// event per epoch.
pub fn train_level1(
    student: &mut Network,
    data: &Dataset,
    epochs: usize,
    w: &LossWeights,
    tc: &TrainConfig,
) -> Result<Vec<EpochEvent>> {
    require_data(data)?;
    tc.validate()?;
    w.validate()?;
    let p = Perceptual::new(tc.perceptual_seed);
    let curve = train_level(student, data, 1, epochs, w, tc, &p, |_, _, _| {})?;
    Ok(curve
        .into_iter()
        .enumerate()
        .map(|(i, l)| EpochEvent {
            epoch: i + 1,
            phase: Phase::Level1,
            monitored_loss: l,
            loss: l,
            transition: None,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherSnapshot {
    /// Level-0 epoch after which the snapshot was taken.
    pub epoch: usize,
    pub params: Snapshot,
    /// Epoch-mean training loss at that epoch.
    pub train_loss: f64,
}

/// Ordered teacher checkpoints `T_1 .. T_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherBank {
    cfg: ModelConfig,
    snapshots: Vec<TeacherSnapshot>,
}

impl TeacherBank {
    pub fn new(cfg: ModelConfig, snapshots: Vec<TeacherSnapshot>) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(Error::Config("a teacher bank needs at least one checkpoint".into()));
        }
        if snapshots.windows(2).any(|w| w[0].epoch >= w[1].epoch) {
            return Err(Error::Config("teacher checkpoints must have increasing epochs".into()));
        }
        Ok(Self { cfg, snapshots })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn snapshots(&self) -> &[TeacherSnapshot] {
        &self.snapshots
    }

    pub fn tap_channels(&self) -> usize {
        self.cfg.channels_at(1)
    }

    /// Materialize teacher `T_i` (1-based).
    pub fn network(&self, i: usize) -> Result<Network> {
        let snap = i
            .checked_sub(1)
            .and_then(|j| self.snapshots.get(j))
            .ok_or_else(|| Error::State(format!("teacher T{i} not in a bank of {}", self.len())))?;
        let net = Network::teacher(&self.cfg)?;
        net.restore(&snap.params)?;
        Ok(net)
    }

    /// Write `teacher_<i>.qxqw` files into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (j, s) in self.snapshots.iter().enumerate() {
            let net = self.network(j + 1)?;
            let mut ck = net.to_checkpoint();
            ck.meta["epoch"] = serde_json::json!(s.epoch);
            ck.meta["train_loss"] = serde_json::json!(s.train_loss);
            ck.save(&dir.join(format!("teacher_{}.qxqw", j + 1)))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut cfg = None;
        let mut snapshots = Vec::new();
        for i in 1.. {
            let path = dir.join(format!("teacher_{i}.qxqw"));
            if !path.exists() {
                break;
            }
            let ck = Checkpoint::load(&path)?;
            let net = Network::from_checkpoint(&ck).map_err(|e| e.with_context(path.display()))?;
            if net.kind() != NetworkKind::Teacher {
                return Err(Error::Load(format!("{} is not a teacher", path.display())));
            }
            if cfg.get_or_insert_with(|| net.config().clone()) != net.config() {
                return Err(Error::Load(format!("{} has a different architecture", path.display())));
            }
            snapshots.push(TeacherSnapshot {
                epoch: ck.meta["epoch"].as_u64().unwrap_or(i as u64) as usize,
                params: net.snapshot(),
                train_loss: ck.meta["train_loss"].as_f64().unwrap_or(f64::NAN),
            });
        }
        let cfg = cfg.ok_or_else(|| Error::Data(format!("no teacher_1.qxqw in {}", dir.display())))?;
        Self::new(cfg, snapshots)
    }
}

/// Schedule of the level-wise teacher training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherPlan {
    /// Epochs spent on each of the levels `L..1`.
    pub level_epochs: usize,
    /// Level-0 epochs at which to snapshot; the last one ends training.
    pub checkpoint_epochs: Vec<usize>,
}

impl Default for TeacherPlan {
    fn default() -> Self {
        Self {
            level_epochs: 5,
            checkpoint_epochs: vec![5, 10],
        }
    }
}

#[derive(Debug, Clone)]
pub struct TeacherRun {
    pub network: Network,
    pub bank: TeacherBank,
    /// Epoch-mean loss curve per level, deepest level first, level 0 last.
    pub curves: Vec<(usize, Vec<f64>)>,
}

/// Train the teacher from its deepest level up to level 0, snapshotting at
/// the listed level-0 epochs.
pub fn train_teacher(
    cfg: &ModelConfig,
    data: &Dataset,
    plan: &TeacherPlan,
    tc: &TrainConfig,
) -> Result<TeacherRun> {
    let cps = &plan.checkpoint_epochs;
    if cps.is_empty() {
        return Err(Error::Config("checkpoint_epochs is empty".into()));
    }
    if cps[0] == 0 || cps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "checkpoint_epochs must be positive and strictly increasing, got {cps:?}"
        )));
    }
    require_data(data)?;
    tc.validate()?;
    let mut net = Network::teacher(cfg)?;
    let p = Perceptual::new(tc.perceptual_seed);
    let mut curves = Vec::new();
    let lw = LossWeights::level1();
    for level in (1..=cfg.levels).rev() {
        info!("teacher level {level}: {} epochs", plan.level_epochs);
        let c = train_level(&mut net, data, level, plan.level_epochs, &lw, tc, &p, |_, _, _| {})?;
        curves.push((level, c));
        net.reset_optimizer();
    }
    let w0 = LossWeights {
        alpha: 0.0,
        ..LossWeights::level0()
    };
    let mut snaps = Vec::new();
    let last = *cps.last().expect("nonempty");
    info!("teacher level 0: {last} epochs");
    let c0 = train_level(&mut net, data, 0, last, &w0, tc, &p, |epoch, loss, n| {
        if cps.contains(&epoch) {
            snaps.push(TeacherSnapshot {
                epoch,
                params: n.snapshot(),
                train_loss: loss,
            });
        }
    })?;
    curves.push((0, c0));
    let bank = TeacherBank::new(cfg.clone(), snaps)?;
    Ok(TeacherRun {
        network: net,
        bank,
        curves,
    })
}

/// How the progressive loop advances to the next teacher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SwitchMode {
    /// Advance when the monitored loss saturates.
    Saturation { sigma: f64 },
    /// `switch_epochs[i - 1]` is the first epoch trained against `T_i`.
    Schedule { switch_epochs: Vec<usize> },
}

impl Default for SwitchMode {
    fn default() -> Self {
        SwitchMode::Saturation {
            sigma: DEFAULT_SIGMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProgressiveConfig {
    pub switch: SwitchMode,
    pub weights: LossWeights,
    /// Hard cap on level-0 epochs.
    pub max_epochs: usize,
    /// Keep the regressor across teacher switches instead of reinitializing.
    pub carry_regressor: bool,
    pub train: TrainConfig,
}

impl Default for ProgressiveConfig {
    fn default() -> Self {
        Self {
            switch: SwitchMode::default(),
            weights: LossWeights::level0(),
            max_epochs: 30,
            carry_regressor: false,
            train: TrainConfig::default(),
        }
    }
}

const STATE_KIND: &str = "progressive-state";

/// The level-0 loop: a solo phase followed by distillation from each
/// teacher in the bank. Without a bank it is plain level-0 training.
pub struct ProgressiveTrainer<'a> {
    student: Network,
    bank: Option<&'a TeacherBank>,
    data: &'a Dataset,
    cfg: ProgressiveConfig,
    perceptual: Perceptual,
    epoch: usize,
    phase: Phase,
    detector: SaturationDetector,
    regressor: Option<Regressor>,
    teacher_taps: Vec<Tensor>,
    events: Vec<EpochEvent>,
}

impl<'a> ProgressiveTrainer<'a> {
    pub fn new(
        student: Network,
        bank: Option<&'a TeacherBank>,
        data: &'a Dataset,
        cfg: ProgressiveConfig,
    ) -> Result<Self> {
        require_data(data)?;
        cfg.train.validate()?;
        cfg.weights.validate()?;
        if student.kind() != NetworkKind::Student {
            return Err(Error::Config("progressive training needs a student network".into()));
        }
        let sigma = match &cfg.switch {
            SwitchMode::Saturation { sigma } => {
                if !(*sigma >= 0.0) {
                    return Err(Error::Config(format!("sigma must be >= 0, got {sigma}")));
                }
                *sigma
            }
            SwitchMode::Schedule { switch_epochs } => {
                if let Some(b) = bank {
                    if switch_epochs.len() != b.len() {
                        return Err(Error::Config(format!(
                            "{} switch epochs for a bank of {} teachers",
                            switch_epochs.len(),
                            b.len()
                        )));
                    }
                }
                if switch_epochs.first() == Some(&0)
                    || switch_epochs.windows(2).any(|w| w[0] >= w[1])
                {
                    return Err(Error::Config(format!(
                        "switch epochs must be positive and strictly increasing, got {switch_epochs:?}"
                    )));
                }
                f64::NAN
            }
        };
        if let Some(b) = bank {
            if b.config().cfa != student.config().cfa {
                return Err(Error::Config("teacher and student CFA differ".into()));
            }
        }
        let perceptual = Perceptual::new(cfg.train.perceptual_seed);
        Ok(Self {
            student,
            bank,
            data,
            cfg,
            perceptual,
            epoch: 0,
            phase: Phase::Solo,
            detector: SaturationDetector::new(sigma),
            regressor: None,
            teacher_taps: Vec::new(),
            events: Vec::new(),
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn events(&self) -> &[EpochEvent] {
        &self.events
    }

    pub fn student(&self) -> &Network {
        &self.student
    }

    pub fn regressor(&self) -> Option<&Regressor> {
        self.regressor.as_ref()
    }

    pub fn finished(&self) -> bool {
        self.phase == Phase::Done || self.epoch >= self.cfg.max_epochs
    }

    pub fn into_parts(self) -> (Network, Vec<EpochEvent>) {
        (self.student, self.events)
    }

    fn enter_teacher(&mut self, i: usize) -> Result<()> {
        let bank = self.bank.expect("distill phases need a bank");
        let teacher = bank.network(i)?;
        let st = self.student.tap_channels();
        let tt = bank.tap_channels();
        let carry = self.cfg.carry_regressor
            && self
                .regressor
                .as_ref()
                .is_some_and(|r| r.in_channels() == st && r.out_channels() == tt);
        if !carry {
            self.regressor = Some(Regressor::new(st, tt, self.cfg.train.seed ^ (0xd157 + i as u64))?);
        }
        let r = self.regressor.as_ref().expect("set above");
        if r.in_channels() != st || r.out_channels() != tt {
            return Err(Error::Shape(format!(
                "regressor maps {} -> {} channels, taps have {st} -> {tt}",
                r.in_channels(),
                r.out_channels()
            )));
        }
        self.teacher_taps = no_grad(|| {
            self.data
                .samples
                .iter()
                .map(|s| {
                    let f = teacher.forward(&s.mosaic, 1)?;
                    Ok(f.tap(DISTILL_TAP).expect("teacher tap").clone())
                })
                .collect::<Result<Vec<_>>>()
        })?;
        Ok(())
    }

    fn next_phase(&self, epoch: usize) -> Option<Phase> {
        let bank = self.bank?;
        let k = bank.len();
        let current = match self.phase {
            Phase::Distill(i) => i,
            _ => 0,
        };
        match &self.cfg.switch {
            SwitchMode::Saturation { .. } => self.detector.fires().then(|| {
                if current < k {
                    Phase::Distill(current + 1)
                } else {
                    Phase::Done
                }
            }),
            SwitchMode::Schedule { switch_epochs } => (current < k
                && switch_epochs[current] == epoch + 1)
                .then_some(Phase::Distill(current + 1)),
        }
    }

    /// Train one epoch. Returns `None` once the run is over.
    pub fn run_epoch(&mut self) -> Result<Option<EpochEvent>> {
        if self.finished() {
            return Ok(None);
        }
        // A schedule may ask for a teacher from the first epoch on.
        if self.epoch == 0 && self.phase == Phase::Solo {
            if let (Some(_), SwitchMode::Schedule { switch_epochs }) = (self.bank, &self.cfg.switch) {
                if switch_epochs.first() == Some(&1) {
                    self.phase = Phase::Distill(1);
                    self.enter_teacher(1)?;
                }
            }
        }
        let epoch = self.epoch + 1;
        let distilling = matches!(self.phase, Phase::Distill(_));
        let alpha = self.cfg.weights.alpha;
        let tc = self.cfg.train.clone();
        let batches = epoch_batches(self.data.len(), tc.batch_size, tc.seed, epoch);
        let (mut monitored, mut total) = (0.0, 0.0);
        for idx in &batches {
            let b = self.data.batch(idx)?;
            let out = self.student.forward_full(&b.mosaic)?;
            let image_mse = out.rgb_full.mse(&b.full)?;
            let l0 = losses::level0_loss(&out.rgb_full, &b.full, &self.cfg.weights, &self.perceptual)?;
            let loss = if distilling {
                let taps: Vec<&Tensor> = idx.iter().map(|&i| &self.teacher_taps[i]).collect();
                let ft = Tensor::stack(&taps)?;
                let r = self.regressor.as_ref().expect("regressor in distill phase");
                let ds = losses::distill_loss(&out.tap, &ft, r)?;
                monitored += f64::from(ds.item());
                if alpha > 0.0 {
                    losses::total_loss(&l0, &ds, alpha)?
                } else {
                    l0
                }
            } else {
                monitored += f64::from(image_mse.item());
                l0
            };
            total += f64::from(loss.item());
            loss.backward()?;
            adam_step(self.student.params_with_grad(), &tc.adam)?;
            if let Some(r) = self.regressor.as_mut() {
                if distilling && alpha > 0.0 {
                    adam_step(r.params_mut(), &tc.adam)?;
                }
                r.zero_grad();
            }
        }
        let n = batches.len() as f64;
        let monitored = monitored / n;
        self.epoch = epoch;
        self.detector.push(monitored);
        let transition = self.next_phase(epoch);
        let event = EpochEvent {
            epoch,
            phase: self.phase,
            monitored_loss: monitored,
            loss: total / n,
            transition,
        };
        info!(
            "epoch {epoch} [{}] monitored {monitored:.6e} loss {:.6e}{}",
            self.phase,
            event.loss,
            transition.map(|t| format!(" -> {t}")).unwrap_or_default()
        );
        if let Some(next) = transition {
            self.detector.reset();
            self.phase = next;
            if let Phase::Distill(i) = next {
                self.enter_teacher(i)?;
            }
        }
        self.events.push(event.clone());
        Ok(Some(event))
    }

    pub fn run(&mut self) -> Result<()> {
        while self.run_epoch()?.is_some() {}
        Ok(())
    }

    /// Everything needed to continue this run bit-identically.
    pub fn state_checkpoint(&self) -> Checkpoint {
        let mut entries = Vec::new();
        let mut steps = Vec::new();
        let mut push = |prefix: &str, name: &str, p: &Parameter| {
            let dims = p.shape().to_vec();
            let (m, v) = p.moments();
            entries.push(Entry {
                name: format!("{prefix}/{name}"),
                dims: dims.clone(),
                data: p.values(),
            });
            entries.push(Entry {
                name: format!("adam_m/{prefix}/{name}"),
                dims: dims.clone(),
                data: m.to_vec(),
            });
            entries.push(Entry {
                name: format!("adam_v/{prefix}/{name}"),
                dims,
                data: v.to_vec(),
            });
            steps.push(p.step_count());
        };
        for (name, p) in self.student.params().iter() {
            push("student", name, p);
        }
        if let Some(r) = &self.regressor {
            push("regressor", "weight", &r.weight);
            push("regressor", "bias", &r.bias);
        }
        Checkpoint {
            meta: serde_json::json!({
                "kind": STATE_KIND,
                "model": self.student.config(),
                "epoch": self.epoch,
                "phase": self.phase,
                "history": self.detector.history,
                "events": self.events,
                "steps": steps,
                "has_regressor": self.regressor.is_some(),
            }),
            entries,
        }
    }

    /// Continue a run saved with [`Self::state_checkpoint`].
    pub fn resume(
        state: &Checkpoint,
        bank: Option<&'a TeacherBank>,
        data: &'a Dataset,
        cfg: ProgressiveConfig,
    ) -> Result<Self> {
        let meta = &state.meta;
        if meta["kind"] != STATE_KIND {
            return Err(Error::Load("not a progressive training state".into()));
        }
        let bad = |what: &str| Error::Load(format!("training state: bad {what}"));
        let model: ModelConfig = serde_json::from_value(meta["model"].clone()).map_err(|_| bad("model"))?;
        let student = Network::student(&model)?;
        let mut t = Self::new(student, bank, data, cfg)?;
        t.epoch = meta["epoch"].as_u64().ok_or_else(|| bad("epoch"))? as usize;
        t.phase = serde_json::from_value(meta["phase"].clone()).map_err(|_| bad("phase"))?;
        t.detector.history = serde_json::from_value(meta["history"].clone()).map_err(|_| bad("history"))?;
        t.events = serde_json::from_value(meta["events"].clone()).map_err(|_| bad("events"))?;
        let steps: Vec<u64> = serde_json::from_value(meta["steps"].clone()).map_err(|_| bad("steps"))?;
        if let Phase::Distill(i) = t.phase {
            t.enter_teacher(i)?;
        }
        let find = |name: &str| -> Result<Vec<f32>> {
            state
                .get(name)
                .map(|e| e.data.clone())
                .ok_or_else(|| Error::Load(format!("training state lacks {name}")))
        };
        let load = |prefix: &str, name: &str, p: &mut Parameter, step: u64| -> Result<()> {
            p.set_values(&find(&format!("{prefix}/{name}"))?)
                .map_err(|e| e.with_context(format!("{prefix}/{name}")))?;
            p.set_moments(
                find(&format!("adam_m/{prefix}/{name}"))?,
                find(&format!("adam_v/{prefix}/{name}"))?,
                step,
            )
        };
        let mut si = steps.iter().copied();
        let mut next_step = || si.next().ok_or_else(|| bad("steps"));
        for (name, p) in t.student.params_mut().iter_mut() {
            load("student", name, p, next_step()?)?;
        }
        if meta["has_regressor"] == true {
            let r = t.regressor.as_mut().ok_or_else(|| bad("regressor phase"))?;
            load("regressor", "weight", &mut r.weight, next_step()?)?;
            load("regressor", "bias", &mut r.bias, next_step()?)?;
        }
        Ok(t)
    }
}

/// Progressive distillation run from a level-1-trained student.
pub fn train_level0_progressive(
    student: Network,
    bank: &TeacherBank,
    data: &Dataset,
    cfg: ProgressiveConfig,
) -> Result<(Network, Vec<EpochEvent>)> {
    let mut t = ProgressiveTrainer::new(student, Some(bank), data, cfg)?;
    t.run()?;
    Ok(t.into_parts())
}

/// Level-0 training without teachers for exactly `epochs` epochs.
pub fn train_level0_plain(
    student: Network,
    data: &Dataset,
    epochs: usize,
    weights: LossWeights,
    train: TrainConfig,
) -> Result<(Network, Vec<EpochEvent>)> {
    let cfg = ProgressiveConfig {
        switch: SwitchMode::default(),
        weights,
        max_epochs: epochs,
        carry_regressor: false,
        train,
    };
    let mut t = ProgressiveTrainer::new(student, None, data, cfg)?;
    t.run()?;
    Ok(t.into_parts())
}

/// Mean level-0 objective of `net` over `data`, without training.
pub fn evaluate_level0(net: &Network, data: &Dataset, w: &LossWeights, p: &Perceptual) -> Result<f64> {
    require_data(data)?;
    no_grad(|| {
        let mut acc = 0.0;
        for s in &data.samples {
            let out = net.forward_full(&s.mosaic)?;
            acc += f64::from(losses::level0_loss(&out.rgb_full, &s.full, w, p)?.item());
        }
        Ok(acc / data.len() as f64)
    })
}
