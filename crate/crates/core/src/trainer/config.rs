//! Run configuration and its flat `key=value` text form.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::augment::MixStrategy;
use crate::confidence::ThresholdMode;
use crate::error::{Error, Result};
use crate::losses::{Ablation, CamDivisor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Glyphs,
    /// IDX files (`train-images-idx3-ubyte` and friends) under `data_path`.
    Mnist,
    /// CIFAR-10 binary batches under `data_path`.
    Cifar10,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PseudoSource {
    /// Current weights, batch statistics.
    Live,
    /// EMA weights, running statistics.
    Ema,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// `lr · cos(7πt / 16T)`.
    Cosine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WallClock {
    Measured,
    /// Column left empty so that metrics files are reproducible byte for byte.
    Omitted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dataset: DatasetKind,
    pub data_path: Option<PathBuf>,
    pub labels_per_class: usize,
    pub batch_size: usize,
    pub mu: usize,
    pub tau_m: f64,
    pub alpha_h: f64,
    pub alpha_l: f64,
    pub threshold_mode: ThresholdMode,
    pub tau_fixed: f64,
    pub threshold_ema: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub param_ema: f64,
    pub iterations: u64,
    pub eval_interval: u64,
    pub seed: u64,
    pub mix_strategy: MixStrategy,
    pub ablation: Ablation,
    pub hc_exclusive: bool,
    pub pseudo_source: PseudoSource,
    pub label_weak_aug: bool,
    pub lr_schedule: LrSchedule,
    pub purity_threshold: f64,
    pub out_dir: PathBuf,
    pub model_widths: [usize; 3],
    pub glyph_train_per_class: usize,
    pub glyph_test_per_class: usize,
    pub image_size: usize,
    pub strong_cutout: bool,
    pub independent_strong_views: bool,
    pub cam_divisor: CamDivisor,
    pub wall_clock: WallClock,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Glyphs,
            data_path: None,
            labels_per_class: 4,
            batch_size: 64,
            mu: 7,
            tau_m: 0.999,
            alpha_h: 1.0,
            alpha_l: 16.0,
            threshold_mode: ThresholdMode::Adaptive,
            tau_fixed: 0.95,
            threshold_ema: 0.999,
            lr: 0.03,
            momentum: 0.9,
            weight_decay: 5e-4,
            param_ema: 0.999,
            iterations: 5000,
            eval_interval: 500,
            seed: 0,
            mix_strategy: MixStrategy::ResizeMix,
            ablation: Ablation::None,
            hc_exclusive: false,
            pseudo_source: PseudoSource::Live,
            label_weak_aug: true,
            lr_schedule: LrSchedule::Constant,
            purity_threshold: 0.95,
            out_dir: PathBuf::from("runs/default"),
            model_widths: [32, 64, 128],
            glyph_train_per_class: 500,
            glyph_test_per_class: 100,
            image_size: 32,
            strong_cutout: true,
            independent_strong_views: false,
            cam_divisor: CamDivisor::LowCount,
            wall_clock: WallClock::Measured,
        }
    }
}

/// Every accepted key, in the order the resolved config is written.
pub const CONFIG_KEYS: [&str; 34] = [
    "dataset",
    "data_path",
    "labels_per_class",
    "batch_size",
    "mu",
    "tau_m",
    "alpha_h",
    "alpha_l",
    "threshold_mode",
    "tau_fixed",
    "threshold_ema",
    "lr",
    "momentum",
    "weight_decay",
    "param_ema",
    "iterations",
    "eval_interval",
    "seed",
    "mix_strategy",
    "ablation",
    "hc_exclusive",
    "pseudo_source",
    "label_weak_aug",
    "lr_schedule",
    "purity_threshold",
    "out_dir",
    "model_widths",
    "glyph_train_per_class",
    "glyph_test_per_class",
    "image_size",
    "strong_cutout",
    "strong_views",
    "cam_divisor",
    "wall_clock",
];

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got '{v}'"))),
    }
}

fn choice<T: Copy>(key: &str, v: &str, options: &[(&str, T)]) -> Result<T> {
    options
        .iter()
        .find(|(name, _)| *name == v)
        .map(|(_, t)| *t)
        .ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            Error::Config(format!("{key}: '{v}' is not one of {}", names.join("|")))
        })
}

fn name_of<T: PartialEq>(value: T, options: &[(&'static str, T)]) -> &'static str {
    options.iter().find(|(_, t)| *t == value).map(|(n, _)| *n).unwrap_or("?")
}

const DATASETS: [(&str, DatasetKind); 3] = [
    ("glyphs", DatasetKind::Glyphs),
    ("mnist", DatasetKind::Mnist),
    ("cifar10", DatasetKind::Cifar10),
];
const THRESHOLD_MODES: [(&str, ThresholdMode); 2] =
    [("adaptive", ThresholdMode::Adaptive), ("fixed", ThresholdMode::Fixed)];
const MIX_STRATEGIES: [(&str, MixStrategy); 2] =
    [("resizemix", MixStrategy::ResizeMix), ("mixup", MixStrategy::Mixup)];
const PSEUDO_SOURCES: [(&str, PseudoSource); 2] = [("live", PseudoSource::Live), ("ema", PseudoSource::Ema)];
const LABEL_AUGS: [(&str, bool); 2] = [("weak", true), ("none", false)];
const SCHEDULES: [(&str, LrSchedule); 2] = [("constant", LrSchedule::Constant), ("cosine", LrSchedule::Cosine)];
const VIEWS: [(&str, bool); 2] = [("shared", false), ("independent", true)];
const DIVISORS: [(&str, CamDivisor); 2] = [("low", CamDivisor::LowCount), ("matched", CamDivisor::Matched)];
const CLOCKS: [(&str, WallClock); 2] = [("measured", WallClock::Measured), ("omitted", WallClock::Omitted)];

impl TrainConfig {
    /// Assigns one key; the config is not revalidated.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "dataset" => self.dataset = choice(key, v, &DATASETS)?,
            "data_path" => self.data_path = (!v.is_empty()).then(|| PathBuf::from(v)),
            "labels_per_class" => self.labels_per_class = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "mu" => self.mu = num(key, v)?,
            "tau_m" => self.tau_m = num(key, v)?,
            "alpha_h" => self.alpha_h = num(key, v)?,
            "alpha_l" => self.alpha_l = num(key, v)?,
            "threshold_mode" => self.threshold_mode = choice(key, v, &THRESHOLD_MODES)?,
            "tau_fixed" => self.tau_fixed = num(key, v)?,
            "threshold_ema" => self.threshold_ema = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "momentum" => self.momentum = num(key, v)?,
            "weight_decay" => self.weight_decay = num(key, v)?,
            "param_ema" => self.param_ema = num(key, v)?,
            "iterations" => self.iterations = num(key, v)?,
            "eval_interval" => self.eval_interval = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "mix_strategy" => self.mix_strategy = choice(key, v, &MIX_STRATEGIES)?,
            "ablation" => self.ablation = v.parse()?,
            "hc_exclusive" => self.hc_exclusive = flag(key, v)?,
            "pseudo_source" => self.pseudo_source = choice(key, v, &PSEUDO_SOURCES)?,
            "label_weak_aug" => self.label_weak_aug = choice(key, v, &LABEL_AUGS)?,
            "lr_schedule" => self.lr_schedule = choice(key, v, &SCHEDULES)?,
            "purity_threshold" => self.purity_threshold = num(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "model_widths" => {
                let parts: Vec<usize> = v.split(',').map(|p| num(key, p.trim())).collect::<Result<_>>()?;
                self.model_widths = parts
                    .try_into()
                    .map_err(|_| Error::Config(format!("{key}: expected three widths, got '{v}'")))?;
            }
            "glyph_train_per_class" => self.glyph_train_per_class = num(key, v)?,
            "glyph_test_per_class" => self.glyph_test_per_class = num(key, v)?,
            "image_size" => self.image_size = num(key, v)?,
            "strong_cutout" => self.strong_cutout = flag(key, v)?,
            "strong_views" => self.independent_strong_views = choice(key, v, &VIEWS)?,
            "cam_divisor" => self.cam_divisor = choice(key, v, &DIVISORS)?,
            "wall_clock" => self.wall_clock = choice(key, v, &CLOCKS)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "dataset" => name_of(self.dataset, &DATASETS).into(),
            "data_path" => self.data_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            "labels_per_class" => self.labels_per_class.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "mu" => self.mu.to_string(),
            "tau_m" => self.tau_m.to_string(),
            "alpha_h" => self.alpha_h.to_string(),
            "alpha_l" => self.alpha_l.to_string(),
            "threshold_mode" => name_of(self.threshold_mode, &THRESHOLD_MODES).into(),
            "tau_fixed" => self.tau_fixed.to_string(),
            "threshold_ema" => self.threshold_ema.to_string(),
            "lr" => self.lr.to_string(),
            "momentum" => self.momentum.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "param_ema" => self.param_ema.to_string(),
            "iterations" => self.iterations.to_string(),
            "eval_interval" => self.eval_interval.to_string(),
            "seed" => self.seed.to_string(),
            "mix_strategy" => name_of(self.mix_strategy, &MIX_STRATEGIES).into(),
            "ablation" => self.ablation.name().into(),
            "hc_exclusive" => self.hc_exclusive.to_string(),
            "pseudo_source" => name_of(self.pseudo_source, &PSEUDO_SOURCES).into(),
            "label_weak_aug" => name_of(self.label_weak_aug, &LABEL_AUGS).into(),
            "lr_schedule" => name_of(self.lr_schedule, &SCHEDULES).into(),
            "purity_threshold" => self.purity_threshold.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "model_widths" => {
                let [a, b, c] = self.model_widths;
                format!("{a},{b},{c}")
            }
            "glyph_train_per_class" => self.glyph_train_per_class.to_string(),
            "glyph_test_per_class" => self.glyph_test_per_class.to_string(),
            "image_size" => self.image_size.to_string(),
            "strong_cutout" => self.strong_cutout.to_string(),
            "strong_views" => name_of(self.independent_strong_views, &VIEWS).into(),
            "cam_divisor" => name_of(self.cam_divisor, &DIVISORS).into(),
            "wall_clock" => name_of(self.wall_clock, &CLOCKS).into(),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        })
    }

    /// Parses `key=value` lines over the defaults. `#` starts a comment.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every key with its resolved value.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).expect("listed key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let unit_open = |x: f64| x > 0.0 && x < 1.0;
        if !unit_open(self.tau_m) {
            return bad(format!("tau_m = {} outside (0, 1)", self.tau_m));
        }
        if !unit_open(self.tau_fixed) {
            return bad(format!("tau_fixed = {} outside (0, 1)", self.tau_fixed));
        }
        if self.tau_m <= self.tau_fixed {
            return bad(format!("tau_m = {} must exceed tau_fixed = {}", self.tau_m, self.tau_fixed));
        }
        if self.mu < 1 || self.batch_size < 1 {
            return bad("batch_size and mu must be at least 1".into());
        }
        for (name, a) in [("alpha_h", self.alpha_h), ("alpha_l", self.alpha_l)] {
            if !(a > 0.0 && a.is_finite()) {
                return bad(format!("{name} = {a} must be positive"));
            }
        }
        for (name, d) in [
            ("threshold_ema", self.threshold_ema),
            ("param_ema", self.param_ema),
            ("momentum", self.momentum),
        ] {
            if !(0.0..1.0).contains(&d) {
                return bad(format!("{name} = {d} outside [0, 1)"));
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("lr and weight_decay must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.purity_threshold) {
            return bad(format!("purity_threshold = {} outside [0, 1]", self.purity_threshold));
        }
        if self.eval_interval == 0 {
            return bad("eval_interval must be at least 1".into());
        }
        if self.labels_per_class == 0 {
            return bad("labels_per_class must be at least 1".into());
        }
        if self.model_widths.contains(&0) {
            return bad("model widths must be positive".into());
        }
        if self.dataset == DatasetKind::Glyphs && self.glyph_train_per_class < self.labels_per_class {
            return bad("glyph_train_per_class is smaller than labels_per_class".into());
        }
        if self.dataset != DatasetKind::Glyphs && self.data_path.is_none() {
            return bad("data_path is required for file datasets".into());
        }
        Ok(())
    }

    /// Learning rate at 0-based step `t`.
    pub fn lr_at(&self, t: u64) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let total = self.iterations.max(1) as f64;
                self.lr * (7.0 * std::f64::consts::PI * t as f64 / (16.0 * total)).cos()
            }
        }
    }
}
