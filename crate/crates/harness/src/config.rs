//! Run configuration: a sectioned TOML file plus command-line overrides.
//!
//! Every override flag mirrors one key; when both are given the flag wins.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use waveseg::decoder::{DecoderConfig, SdaMode};
use waveseg::optim::AdamWConfig;
use waveseg::sda::MixerKind;
use waveseg::ssm::{ScanMode, VssmConfig};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SdaToggle {
    On,
    Off,
    Conv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum WmKind {
    Wavelet,
    VssmOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScanKind {
    Sequential,
    Parallel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialization, batch order and, unless overridden, the corpus.
    pub seed: u64,
    /// Directory receiving checkpoints and reports.
    pub out: PathBuf,
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub ablate: AblateConfig,
    pub bench: BenchConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Corpus directory; generated in memory when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub n_train: usize,
    pub n_val: usize,
    pub size: usize,
    pub num_classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub c_dec: usize,
    pub hpg: Toggle,
    pub sda: SdaToggle,
    pub wm: WmKind,
    pub state: usize,
    pub directions: usize,
    pub per_band: bool,
    pub scan: ScanKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup: usize,
    pub weight_decay: f64,
    /// Linear decay of the learning rate to zero at the last step.
    pub decay: bool,
    /// Validation interval in steps; zero evaluates only at the end.
    pub eval_every: usize,
    /// Random flips and transposes of training samples.
    pub augment: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Boundary tolerance in pixels (Chebyshev).
    pub radius: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    Full,
    NoHpg,
    SdaConv,
    SdaOff,
    VssmOnly,
}

impl Arm {
    pub fn label(self) -> &'static str {
        match self {
            Arm::Full => "full",
            Arm::NoHpg => "no-hpg",
            Arm::SdaConv => "sda-conv",
            Arm::SdaOff => "sda-off",
            Arm::VssmOnly => "vssm-only",
        }
    }

    /// The base model configuration with this arm's toggle applied.
    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut m = base.clone();
        match self {
            Arm::Full => {}
            Arm::NoHpg => m.hpg = Toggle::Off,
            Arm::SdaConv => m.sda = SdaToggle::Conv,
            Arm::SdaOff => m.sda = SdaToggle::Off,
            Arm::VssmOnly => m.wm = WmKind::VssmOnly,
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub seeds: Vec<u64>,
    pub arms: Vec<Arm>,
    /// Training steps per run; falls back to `train.steps`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub channels: usize,
    pub states: Vec<usize>,
    pub reps: usize,
    pub warmup: usize,
    pub precision: Precision,
    /// Head width of the quadratic attention baseline; zero disables it.
    pub attention_dim: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out: PathBuf::from("runs"),
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            ablate: AblateConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: None,
            dir: None,
            n_train: 200,
            n_val: 50,
            size: 64,
            num_classes: 4,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            c_dec: 32,
            hpg: Toggle::On,
            sda: SdaToggle::On,
            wm: WmKind::Wavelet,
            state: 8,
            directions: 2,
            per_band: false,
            scan: ScanKind::Sequential,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 8,
            lr: 2e-3,
            warmup: 100,
            weight_decay: 0.01,
            decay: true,
            eval_every: 100,
            augment: true,
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            radius: 2,
            checkpoint: None,
        }
    }
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            arms: vec![Arm::Full, Arm::NoHpg, Arm::SdaConv],
            steps: None,
        }
    }
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            lengths: vec![4096, 8192, 16384],
            channels: 16,
            states: vec![16],
            reps: 7,
            warmup: 2,
            precision: Precision::F64,
            attention_dim: 16,
        }
    }
}

/// Command-line flags that shadow configuration keys.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// Configuration file (TOML).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// `seed`
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    /// `out`
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// `corpus.dir`
    #[arg(long, value_name = "DIR")]
    pub corpus: Option<PathBuf>,
    /// `model.hpg`
    #[arg(long, value_enum)]
    pub toggle_hpg: Option<Toggle>,
    /// `model.sda`
    #[arg(long, value_enum)]
    pub toggle_sda: Option<SdaToggle>,
    /// `model.wm`
    #[arg(long, value_enum)]
    pub wm: Option<WmKind>,
    /// `bench.precision`
    #[arg(long, value_enum)]
    pub precision: Option<Precision>,
    /// `train.steps`
    #[arg(long, value_name = "N")]
    pub steps: Option<usize>,
    /// `eval.checkpoint`
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| locate(text, &e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            HarnessError::Config {
                line,
                field,
                message,
                ..
            } => HarnessError::Config {
                path: Some(path.to_path_buf()),
                line,
                field,
                message,
            },
            other => other,
        })
    }

    /// Loads the file named by `--config` (or defaults) and applies the flags.
    pub fn resolve(ov: &Overrides) -> Result<Self> {
        let mut cfg = match &ov.config {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply(ov);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, ov: &Overrides) {
        if let Some(s) = ov.seed {
            self.seed = s;
        }
        if let Some(o) = &ov.out {
            self.out = o.clone();
        }
        if let Some(d) = &ov.corpus {
            self.corpus.dir = Some(d.clone());
        }
        if let Some(t) = ov.toggle_hpg {
            self.model.hpg = t;
        }
        if let Some(t) = ov.toggle_sda {
            self.model.sda = t;
        }
        if let Some(w) = ov.wm {
            self.model.wm = w;
        }
        if let Some(p) = ov.precision {
            self.bench.precision = p;
        }
        if let Some(s) = ov.steps {
            self.train.steps = s;
        }
        if let Some(c) = &ov.checkpoint {
            self.eval.checkpoint = Some(c.clone());
        }
    }

    pub fn corpus_seed(&self) -> u64 {
        self.corpus.seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.corpus;
        if c.size == 0 || !c.size.is_multiple_of(16) {
            return Err(HarnessError::config(
                "corpus.size",
                format!("must be a positive multiple of 16, got {}", c.size),
            ));
        }
        if !(2..=255).contains(&c.num_classes) {
            return Err(HarnessError::config(
                "corpus.num_classes",
                format!("must be in 2..=255, got {}", c.num_classes),
            ));
        }
        if c.n_train == 0 {
            return Err(HarnessError::config("corpus.n_train", "must be positive"));
        }
        let m = &self.model;
        if m.c_dec == 0 || !m.c_dec.is_multiple_of(2) {
            return Err(HarnessError::config(
                "model.c_dec",
                format!("must be even and positive, got {}", m.c_dec),
            ));
        }
        if m.directions != 2 && m.directions != 4 {
            return Err(HarnessError::config(
                "model.directions",
                format!("must be 2 or 4, got {}", m.directions),
            ));
        }
        if m.state == 0 {
            return Err(HarnessError::config("model.state", "must be positive"));
        }
        let t = &self.train;
        if t.batch == 0 {
            return Err(HarnessError::config("train.batch", "must be positive"));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(HarnessError::config(
                "train.lr",
                format!("must be positive, got {}", t.lr),
            ));
        }
        if t.weight_decay.is_nan() || t.weight_decay < 0.0 {
            return Err(HarnessError::config(
                "train.weight_decay",
                "must be non-negative",
            ));
        }
        if self.eval.radius == 0 {
            return Err(HarnessError::config("eval.radius", "must be at least 1"));
        }
        if self.ablate.seeds.is_empty() || self.ablate.arms.is_empty() {
            return Err(HarnessError::config(
                "ablate",
                "needs at least one seed and one arm",
            ));
        }
        let b = &self.bench;
        if b.lengths.is_empty() || b.lengths.contains(&0) {
            return Err(HarnessError::config(
                "bench.lengths",
                "must be non-empty and positive",
            ));
        }
        if b.states.is_empty() || b.states.contains(&0) || b.channels == 0 {
            return Err(HarnessError::config(
                "bench.states",
                "state sizes and channels must be positive",
            ));
        }
        if b.reps == 0 {
            return Err(HarnessError::config("bench.reps", "must be positive"));
        }
        Ok(())
    }

    pub fn decoder(&self) -> DecoderConfig {
        decoder_config(&self.model, self.corpus.num_classes)
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.train.lr,
            weight_decay: self.train.weight_decay,
            warmup_steps: self.train.warmup,
            total_steps: if self.train.decay {
                self.train.steps
            } else {
                0
            },
            ..Default::default()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration is always serializable")
    }
}

pub fn decoder_config(m: &ModelConfig, num_classes: usize) -> DecoderConfig {
    DecoderConfig {
        c_dec: m.c_dec,
        num_classes,
        vssm: VssmConfig {
            state: m.state,
            directions: m.directions,
            mode: match m.scan {
                ScanKind::Sequential => ScanMode::Sequential,
                ScanKind::Parallel => ScanMode::Parallel,
            },
        },
        per_band: m.per_band,
        mixer: match m.wm {
            WmKind::Wavelet => MixerKind::Wavelet,
            WmKind::VssmOnly => MixerKind::VssmOnly,
        },
        hpg: m.hpg == Toggle::On,
        sda: match m.sda {
            SdaToggle::On => SdaMode::On,
            SdaToggle::Off => SdaMode::Off,
            SdaToggle::Conv => SdaMode::Conv,
        },
        ..Default::default()
    }
}

/// Attaches a 1-based line number and a dotted key path to a parse error.
fn locate(text: &str, err: &toml::de::Error) -> HarnessError {
    let (line, field) = match err.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            (Some(line), key_at(text, line))
        }
        None => (None, None),
    };
    HarnessError::Config {
        path: None,
        line,
        field,
        message: err.message().trim().to_string(),
    }
}

fn key_at(text: &str, line: usize) -> Option<String> {
    let lines: Vec<&str> = text.lines().collect();
    let here = lines.get(line - 1)?.trim();
    let section = lines[..line - 1]
        .iter()
        .rev()
        .map(|l| l.trim())
        .find(|l| l.starts_with('[') && l.ends_with(']'))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    if here.starts_with('[') {
        return Some(
            here.trim_matches(|c| c == '[' || c == ']')
                .trim()
                .to_string(),
        );
    }
    let key = here.split('=').next()?.trim();
    if key.is_empty() {
        return section;
    }
    Some(match section {
        Some(s) => format!("{s}.{key}"),
        None => key.to_string(),
    })
}
