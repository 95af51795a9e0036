//! The `qxqnet` command line.
//!
//! ```text
//! qxqnet convert --kind 3ccd --width 1600 --height 1200 [--mosaic qxq] in.RAW out.png
//! qxqnet build-dataset --root data --ccd-dir ccd --common-dir div2k --out manifest.tsv
//! qxqnet train --config run.toml [--seed N] [--mode schedule --switch-epochs 7,20] [--resume]
//! qxqnet eval --checkpoint student.qxqw --manifest manifest.tsv [--baseline classical]
//! qxqnet demosaic classical|student.qxqw --width W --height H [--tile 512] in.RAW out.png
//! ```
//!
//! Failures print `error[<class>]: <message>` on one line and exit with 1.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};

use crate::cfa::{self, CfaSpec};
use crate::checkpoint::Checkpoint;
use crate::datapipe::{self, Dataset, DatasetManifest, HybridConfig, Split};
use crate::distill::{
    self, ProgressiveConfig, ProgressiveTrainer, SwitchMode, TeacherBank, TeacherPlan,
};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::losses::{self, LossWeights, MetricsRow};
use crate::model::{ModelConfig, Network};
use crate::rawio::{self, ByteOrder, RawQxqFrame};
use crate::tiling::{tiled_demosaic, Demosaicer};

/// Environment variable naming the directory that holds training runs.
pub const RUN_ROOT_ENV: &str = "QXQNET_RUN_ROOT";

#[derive(Debug, Parser)]
#[command(name = "qxqnet", version, about = "QxQ demosaicing toolkit")]
pub struct Cli {
    /// CFA as `group_size,PATTERN`, e.g. `4,RGGB` (QxQ) or `1,RGGB` (Bayer).
    #[arg(long, global = true, default_value = "4,RGGB")]
    pub cfa: CfaSpec,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode a .RAW dump into a PNG preview.
    Convert(ConvertArgs),
    /// Scan source images and write a patch manifest.
    BuildDataset(BuildArgs),
    /// Level-1 pretraining, teacher training and progressive distillation.
    Train(TrainArgs),
    /// PSNR / MS-SSIM of a checkpoint on a manifest split.
    Eval(EvalArgs),
    /// Demosaic a QxQ .RAW frame into a PNG.
    Demosaic(DemosaicArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RawKind {
    #[value(name = "3ccd")]
    ThreeCcd,
    Qxq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MosaicKind {
    Qxq,
}

#[derive(Debug, Args)]
pub struct RawArgs {
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    /// Samples are stored most-significant byte first.
    #[arg(long)]
    pub big_endian: bool,
    #[arg(long, default_value_t = rawio::DEFAULT_BLACK_LEVEL)]
    pub black_level: u16,
}

impl RawArgs {
    fn order(&self) -> ByteOrder {
        if self.big_endian {
            ByteOrder::Big
        } else {
            ByteOrder::Little
        }
    }
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long, value_enum)]
    pub kind: RawKind,
    #[command(flatten)]
    pub raw: RawArgs,
    /// Also write the CFA-sampled counterpart of a 3CCD frame
    /// (`<out>_qxq.png` and `<out>_qxq.raw`).
    #[arg(long, value_enum)]
    pub mosaic: Option<MosaicKind>,
    pub input: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Directory the manifest paths are relative to.
    #[arg(long, default_value = ".")]
    pub root: PathBuf,
    /// 3CCD `.raw` files.
    #[arg(long)]
    pub ccd_dir: Option<PathBuf>,
    /// ISP-processed `.png` files.
    #[arg(long)]
    pub common_dir: Option<PathBuf>,
    /// TOML file with `HybridConfig` fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub split_ratio: Option<f64>,
    #[arg(long)]
    pub raw_width: Option<usize>,
    #[arg(long)]
    pub raw_height: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Saturation,
    Schedule,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// First epochs of each distillation phase, e.g. `7,20`.
    #[arg(long, value_delimiter = ',')]
    pub switch_epochs: Option<Vec<usize>>,
    /// Run directory; defaults to `$QXQNET_RUN_ROOT/run-<seed>` (or `runs/`).
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Continue from the state saved in the run directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Classical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory the manifest paths are relative to (default: its own directory).
    #[arg(long)]
    pub root: Option<PathBuf>,
    /// Run config whose `student` architecture the checkpoint must match.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// Add a row comparing every ground truth with itself.
    #[arg(long)]
    pub self_test: bool,
}

#[derive(Debug, Args)]
pub struct DemosaicArgs {
    /// A checkpoint path or the word `classical`.
    pub model: String,
    pub input: PathBuf,
    pub output: PathBuf,
    #[command(flatten)]
    pub raw: RawArgs,
    #[arg(long, default_value_t = 512)]
    pub tile: usize,
    #[arg(long, default_value_t = 32)]
    pub overlap: usize,
    /// Center-crop the frame to the largest usable size first.
    #[arg(long)]
    pub crop: bool,
}

/// Everything `train` needs, loaded from TOML and overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub student: ModelConfig,
    pub teacher: ModelConfig,
    pub data: DataConfig,
    pub level1_epochs: usize,
    pub level1_weights: LossWeights,
    pub teacher_plan: TeacherPlan,
    /// Directory of `teacher_<i>.qxqw` files to use instead of training.
    pub teacher_bank: Option<PathBuf>,
    pub progressive: ProgressiveConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub manifest: PathBuf,
    /// Root for manifest paths; defaults to the manifest's directory.
    pub root: Option<PathBuf>,
    pub split: SplitName,
    pub hybrid: HybridConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    #[default]
    Train,
    Test,
}

impl From<SplitName> for Split {
    fn from(s: SplitName) -> Split {
        match s {
            SplitName::Train => Split::Train,
            SplitName::Test => Split::Test,
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("manifest.tsv"),
            root: None,
            split: SplitName::Train,
            hybrid: HybridConfig::default(),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            student: ModelConfig::student_desk(),
            teacher: ModelConfig::teacher_desk(),
            data: DataConfig::default(),
            level1_epochs: 50,
            level1_weights: LossWeights::level1(),
            teacher_plan: TeacherPlan::default(),
            teacher_bank: None,
            progressive: ProgressiveConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.manifest = base.join(&cfg.data.manifest);
        cfg.data.root = cfg.data.root.map(|r| base.join(r));
        cfg.teacher_bank = cfg.teacher_bank.map(|r| base.join(r));
        Ok(cfg)
    }

    /// Apply one seed to every random choice of the run.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.student.seed = seed;
        self.teacher.seed = seed.wrapping_add(1);
        self.progressive.train.seed = seed;
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn data_root(&self) -> PathBuf {
        self.data.root.clone().unwrap_or_else(|| {
            self.data
                .manifest
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("."))
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.teacher_bank.is_none() {
            ModelConfig::validate_pair(&self.student, &self.teacher)?;
        } else {
            self.student.validate()?;
        }
        self.level1_weights.validate()?;
        self.progressive.weights.validate()?;
        Ok(())
    }
}

/// Parse `std::env::args`, run, and map errors to the one-line format.
pub fn main() -> i32 {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.class());
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Convert(a) => cmd_convert(&a, cli.cfa),
        Command::BuildDataset(a) => cmd_build_dataset(&a, cli.cfa),
        Command::Train(a) => cmd_train(&a, cli.cfa).map(|_| ()),
        Command::Eval(a) => {
            let table = cmd_eval(&a, cli.cfa)?;
            print!("{table}");
            Ok(())
        }
        Command::Demosaic(a) => cmd_demosaic(&a, cli.cfa),
    }
}

fn sibling(out: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    out.with_file_name(format!("{stem}{suffix}.{ext}"))
}

pub fn cmd_convert(a: &ConvertArgs, cfa: CfaSpec) -> Result<()> {
    let bytes = rawio::read_file(&a.input)?;
    let ctx = |e: Error| e.with_context(a.input.display());
    match a.kind {
        RawKind::ThreeCcd => {
            let mut frame = rawio::decode_3ccd_with(&bytes, a.raw.width, a.raw.height, a.raw.order())
                .map_err(ctx)?;
            frame.black_level = a.raw.black_level;
            rawio::export_png8(&frame.to_rgb()?, &a.output)?;
            if a.mosaic.is_some() {
                cfa.check_dims(frame.width, frame.height).map_err(ctx)?;
                let mut plane = Vec::with_capacity(frame.width * frame.height);
                for y in 0..frame.height {
                    for x in 0..frame.width {
                        plane.push(frame.planes[cfa.color_at(x, y).index()][y * frame.width + x]);
                    }
                }
                let q = RawQxqFrame {
                    width: frame.width,
                    height: frame.height,
                    plane,
                    black_level: frame.black_level,
                    cfa,
                };
                let m = q.to_mosaic()?;
                rawio::export_gray_png8(m.data(), m.width(), m.height(), &sibling(&a.output, "_qxq", "png"))?;
                let raw_out = sibling(&a.output, "_qxq", "raw");
                let enc = rawio::encode_qxq_with(&q, a.raw.order())?;
                std::fs::write(&raw_out, enc).map_err(|e| Error::io(&raw_out, e))?;
            }
        }
        RawKind::Qxq => {
            let mut frame = rawio::decode_qxq_with(&bytes, a.raw.width, a.raw.height, cfa, a.raw.order())
                .map_err(ctx)?;
            frame.black_level = a.raw.black_level;
            let m = frame.to_mosaic().map_err(ctx)?;
            rawio::export_gray_png8(m.data(), m.width(), m.height(), &a.output)?;
        }
    }
    Ok(())
}

pub fn cmd_build_dataset(a: &BuildArgs, cfa: CfaSpec) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None => HybridConfig::default(),
    };
    cfg.cfa = cfa;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.patch {
        cfg.patch_size = v;
        if a.stride.is_none() {
            cfg.stride = v;
        }
    }
    if let Some(v) = a.stride {
        cfg.stride = v;
    }
    if let Some(v) = a.split_ratio {
        cfg.split_ratio = v;
    }
    if let Some(v) = a.raw_width {
        cfg.raw_width = v;
    }
    if let Some(v) = a.raw_height {
        cfg.raw_height = v;
    }
    let m = datapipe::build_hybrid(&a.root, a.ccd_dir.as_deref(), a.common_dir.as_deref(), &cfg)?;
    m.save(&a.out)?;
    let n_train = m.split(Split::Train).count();
    info!(
        "wrote {} ({} train, {} test patches)",
        a.out.display(),
        n_train,
        m.records.len() - n_train
    );
    Ok(())
}

/// Resolve flags over the config file.
pub fn resolve_run_config(a: &TrainArgs, cfa: CfaSpec) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&a.config)?;
    let seed = a.seed.unwrap_or(cfg.seed);
    cfg = cfg.with_seed(seed);
    cfg.student.cfa = cfa;
    cfg.teacher.cfa = cfa;
    cfg.data.hybrid.cfa = cfa;
    if let Some(s) = &a.switch_epochs {
        if a.mode == Some(ModeArg::Saturation) {
            return Err(Error::Config("--switch-epochs needs --mode schedule".into()));
        }
        cfg.progressive.switch = SwitchMode::Schedule {
            switch_epochs: s.clone(),
        };
    }
    match a.mode {
        Some(ModeArg::Saturation) => {
            let sigma = match &cfg.progressive.switch {
                SwitchMode::Saturation { sigma } => *sigma,
                _ => distill::DEFAULT_SIGMA,
            };
            cfg.progressive.switch = SwitchMode::Saturation { sigma };
        }
        Some(ModeArg::Schedule) if a.switch_epochs.is_none()
            && !matches!(cfg.progressive.switch, SwitchMode::Schedule { .. }) => {
                cfg.progressive.switch = SwitchMode::Schedule {
                    switch_epochs: vec![7, 20],
                };
            }
        _ => {}
    }
    if let Some(sigma) = a.sigma {
        match &mut cfg.progressive.switch {
            SwitchMode::Saturation { sigma: s } => *s = sigma,
            SwitchMode::Schedule { .. } => {
                return Err(Error::Config("--sigma applies to saturation mode only".into()))
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_dir_for(a: &TrainArgs, cfg: &RunConfig) -> PathBuf {
    a.run_dir.clone().unwrap_or_else(|| {
        let root = std::env::var_os(RUN_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"));
        root.join(format!("run-{}", cfg.seed))
    })
}

fn load_split(cfg: &RunConfig, split: Split) -> Result<Dataset> {
    let manifest = DatasetManifest::load(&cfg.data.manifest)?;
    let patches = datapipe::load_patches(&manifest, &cfg.data_root(), split, &cfg.data.hybrid)?;
    Dataset::from_images(&patches, cfg.data.hybrid.cfa)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Run the whole training pipeline; returns the run directory.
pub fn cmd_train(a: &TrainArgs, cfa: CfaSpec) -> Result<PathBuf> {
    let cfg = resolve_run_config(a, cfa)?;
    let dir = run_dir_for(a, &cfg);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let config_path = dir.join("config.toml");
    if a.resume {
        if let Ok(prev) = std::fs::read_to_string(&config_path) {
            if prev != cfg.to_toml() {
                return Err(Error::Config(format!(
                    "{} was written with a different configuration",
                    config_path.display()
                )));
            }
        }
    }
    write_text(&config_path, &cfg.to_toml())?;
    let data = load_split(&cfg, cfg.data.split.into())?;
    let t0 = Instant::now();

    let l1_path = dir.join("level1.qxqw");
    let student = if a.resume && l1_path.exists() {
        info!("resuming: level 1 from {}", l1_path.display());
        let net = Network::student(&cfg.student)?;
        net.load_checkpoint(&Checkpoint::load(&l1_path)?)?;
        net
    } else {
        let mut net = Network::student(&cfg.student)?;
        let events = distill::train_level1(
            &mut net,
            &data,
            cfg.level1_epochs,
            &cfg.level1_weights,
            &cfg.progressive.train,
        )?;
        distill::write_event_log(&events, &dir.join("level1_events.jsonl"))?;
        net.to_checkpoint().save(&l1_path)?;
        net
    };

    let bank_dir = dir.join("teachers");
    let bank = if let Some(src) = &cfg.teacher_bank {
        TeacherBank::load(src)?
    } else if a.resume && bank_dir.join("teacher_1.qxqw").exists() {
        TeacherBank::load(&bank_dir)?
    } else {
        let run = distill::train_teacher(&cfg.teacher, &data, &cfg.teacher_plan, &cfg.progressive.train)?;
        let mut curve = String::from("level\tepoch\tloss\n");
        for (level, c) in &run.curves {
            for (i, l) in c.iter().enumerate() {
                curve.push_str(&format!("{level}\t{}\t{l:.8e}\n", i + 1));
            }
        }
        write_text(&dir.join("teacher_curve.tsv"), &curve)?;
        run.bank.save(&bank_dir)?;
        run.bank
    };

    let state_path = dir.join("state.qxqw");
    let mut trainer = if a.resume && state_path.exists() {
        info!("resuming progressive training from {}", state_path.display());
        ProgressiveTrainer::resume(&Checkpoint::load(&state_path)?, Some(&bank), &data, cfg.progressive.clone())?
    } else {
        ProgressiveTrainer::new(student, Some(&bank), &data, cfg.progressive.clone())?
    };
    let events_path = dir.join("events.jsonl");
    while trainer.run_epoch()?.is_some() {
        trainer.state_checkpoint().save(&state_path)?;
        distill::write_event_log(trainer.events(), &events_path)?;
    }
    distill::write_event_log(trainer.events(), &events_path)?;
    let mut curve = String::from("epoch\tphase\tmonitored_loss\tloss\n");
    for e in trainer.events() {
        curve.push_str(&format!(
            "{}\t{}\t{:.8e}\t{:.8e}\n",
            e.epoch, e.phase, e.monitored_loss, e.loss
        ));
    }
    write_text(&dir.join("loss_curve.tsv"), &curve)?;
    trainer.student().to_checkpoint().save(&dir.join("student.qxqw"))?;
    info!("run finished in {:.1?}: {}", t0.elapsed(), dir.display());
    Ok(dir)
}

fn aggregate(method: &str, per: &[(f64, f64)], params: Option<usize>, macs: Option<u64>) -> MetricsRow {
    let n = per.len() as f64;
    MetricsRow {
        method: method.to_string(),
        psnr: per.iter().map(|p| p.0).sum::<f64>() / n,
        ms_ssim: per.iter().map(|p| p.1).sum::<f64>() / n,
        params,
        macs,
    }
}

/// Per-image and aggregate metrics as text.
pub fn cmd_eval(a: &EvalArgs, cfa: CfaSpec) -> Result<String> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let net = match &a.config {
        Some(p) => {
            let mut run = RunConfig::load(p)?;
            run.student.cfa = cfa;
            let net = Network::student(&run.student)?;
            net.load_checkpoint(&ck).map_err(|e| e.with_context(a.checkpoint.display()))?;
            net
        }
        None => Network::from_checkpoint(&ck).map_err(|e| e.with_context(a.checkpoint.display()))?,
    };
    let manifest = DatasetManifest::load(&a.manifest)?;
    let root = a.root.clone().unwrap_or_else(|| {
        a.manifest.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."))
    });
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let hybrid = HybridConfig {
        cfa: net.config().cfa,
        ..HybridConfig::default()
    };
    let patches = datapipe::load_patches(&manifest, &root, split, &hybrid)?;
    let model = Demosaicer::Network(&net);
    let mut per_image = String::from("image\tmethod\tpsnr_db\tms_ssim\n");
    let mut rows = Vec::new();
    let mut methods: Vec<(&str, Box<dyn Fn(&RgbImage) -> Result<RgbImage> + '_>)> = vec![(
        "model",
        Box::new(|gt: &RgbImage| model.run(&cfa::mosaic(gt, net.config().cfa)?)),
    )];
    if a.baseline == Some(Baseline::Classical) {
        methods.push((
            "classical",
            Box::new(|gt: &RgbImage| Ok(cfa::classical_demosaic(&cfa::mosaic(gt, net.config().cfa)?))),
        ));
    }
    if a.self_test {
        methods.push(("self-test", Box::new(|gt: &RgbImage| Ok(gt.clone()))));
    }
    for (name, f) in &methods {
        let mut per = Vec::new();
        for (i, gt) in patches.iter().enumerate() {
            let out = f(gt)?;
            let p = losses::psnr(&out, gt, 1.0)?;
            let s = losses::ms_ssim(&out, gt)?;
            per_image.push_str(&format!("{i}\t{name}\t{}\t{s:.6}\n", losses::format_psnr(p)));
            per.push((p, s));
        }
        let (params, macs) = if *name == "model" {
            let (h, w) = (patches[0].height(), patches[0].width());
            (Some(net.param_count()), Some(net.mac_count(h, w)))
        } else {
            (None, None)
        };
        rows.push(aggregate(name, &per, params, macs));
    }
    Ok(format!("{per_image}\n{}", losses::format_table(&rows)))
}

pub fn cmd_demosaic(a: &DemosaicArgs, cfa: CfaSpec) -> Result<()> {
    let net = if a.model == "classical" {
        None
    } else {
        let path = Path::new(&a.model);
        let ck = Checkpoint::load(path)?;
        Some(Network::from_checkpoint(&ck).map_err(|e| e.with_context(path.display()))?)
    };
    let cfa = net.as_ref().map(|n| n.config().cfa).unwrap_or(cfa);
    let bytes = rawio::read_file(&a.input)?;
    let mut frame = rawio::decode_qxq_with(&bytes, a.raw.width, a.raw.height, cfa, a.raw.order())
        .map_err(|e| e.with_context(a.input.display()))?;
    frame.black_level = a.raw.black_level;
    let d = match &net {
        Some(n) => Demosaicer::Network(n),
        None => Demosaicer::Classical,
    };
    let mosaic = {
        let m = frame.to_mosaic();
        match m {
            Ok(m) if !a.crop => m,
            _ => {
                // Build the mosaic on the largest period-aligned area, then crop.
                let p = cfa.period();
                let (w, h) = (a.raw.width / p * p, a.raw.height / p * p);
                let plane = rawio::black_level_compensate(&frame.plane, frame.black_level)?;
                let mut data = Vec::with_capacity(w * h);
                let (x0, y0) = ((a.raw.width - w) / 2 / p * p, (a.raw.height - h) / 2 / p * p);
                if !a.crop {
                    return Err(Error::Geometry(format!(
                        "{}x{} frame is not a multiple of {p}; pass --crop",
                        a.raw.width, a.raw.height
                    )));
                }
                for y in y0..y0 + h {
                    data.extend_from_slice(&plane[y * a.raw.width + x0..][..w]);
                }
                cfa::MosaicImage::new(w, h, data, cfa)?
            }
        }
    };
    let mosaic = if a.crop {
        mosaic.center_crop(d.alignment(&mosaic))?
    } else {
        mosaic
    };
    let out = tiled_demosaic(&mosaic, &d, a.tile, a.overlap)?;
    rawio::export_png8(&out.clamped(), &a.output)
}
