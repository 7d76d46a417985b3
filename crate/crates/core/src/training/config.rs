//! Experiment configuration and its `key:value` text form.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::{parse_shift, AugmentPolicy, Domain, SyntheticConfig};
use crate::diffcore::{BackboneSpec, Nonlinearity, PathSpec};
use crate::error::{Error, Result};
use crate::losses::{LossWeights, SimilarityForm};

/// Ablation arm: which domains are sampled and which losses are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    PediatricOnly,
    AdultOnly,
    PediatricOnlyContrastive,
    AdultOnlyContrastive,
    Joint,
    JointContrastive,
    TriadFull,
}

impl Arm {
    pub const ALL: [Arm; 7] = [
        Arm::PediatricOnly,
        Arm::AdultOnly,
        Arm::PediatricOnlyContrastive,
        Arm::AdultOnlyContrastive,
        Arm::Joint,
        Arm::JointContrastive,
        Arm::TriadFull,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::PediatricOnly => "pediatric_only",
            Arm::AdultOnly => "adult_only",
            Arm::PediatricOnlyContrastive => "pediatric_only+contrastive",
            Arm::AdultOnlyContrastive => "adult_only+contrastive",
            Arm::Joint => "joint",
            Arm::JointContrastive => "joint+contrastive",
            Arm::TriadFull => "triad_full",
        }
    }

    /// The single domain a single-domain arm trains on.
    pub fn only_domain(self) -> Option<Domain> {
        match self {
            Arm::PediatricOnly | Arm::PediatricOnlyContrastive => Some(Domain::Pediatric),
            Arm::AdultOnly | Arm::AdultOnlyContrastive => Some(Domain::Adult),
            _ => None,
        }
    }

    pub fn uses_domain(self, d: Domain) -> bool {
        self.only_domain().is_none_or(|only| only == d)
    }

    pub fn contrastive(self) -> bool {
        !matches!(self, Arm::PediatricOnly | Arm::AdultOnly | Arm::Joint)
    }

    /// Whether the arm couples auxiliary paths into the objective.
    pub fn triad(self) -> bool {
        self == Arm::TriadFull
    }
}

impl FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Arm::ALL.iter().map(|a| a.as_str()).collect();
                Error::Config(format!("unknown arm `{s}` (one of {})", names.join(", ")))
            })
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("lr and eps must be > 0, weight_decay >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic,
    Manifest(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub arm: Arm,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub tau: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub weights: LossWeights,
    pub eq12_literal: bool,
    pub seed: u64,
    /// Number of consecutive seeds (`seed`, `seed+1`, ...) for ablations.
    pub seeds: usize,
    pub folds: usize,
    pub fold: usize,
    pub widths: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub nonlinearity: Nonlinearity,
    pub embed_dim: usize,
    pub image_size: usize,
    pub pad_fraction: f64,
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
    pub augment: AugmentPolicy,
    pub data: DataSource,
    /// Generator settings when `data` is synthetic; its seed follows `seed`.
    pub synthetic: SyntheticConfig,
    /// Also train uncoupled auxiliary paths (diagnostics only; they never
    /// touch the common path's objective).
    pub train_auxiliary: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            arm: Arm::TriadFull,
            epochs: 50,
            batch_size: 32,
            optimizer: AdamWConfig::default(),
            tau: 0.1,
            gamma: 2.0,
            alpha: 0.25,
            weights: LossWeights::default(),
            eq12_literal: false,
            seed: 0,
            seeds: 5,
            folds: 4,
            fold: 0,
            widths: vec![8, 16, 32],
            kernel: 3,
            stride: 2,
            nonlinearity: Nonlinearity::Relu,
            embed_dim: 16,
            image_size: 32,
            pad_fraction: 0.0005,
            norm_mean: vec![0.45],
            norm_std: vec![0.25],
            augment: AugmentPolicy::default(),
            data: DataSource::Synthetic,
            synthetic: SyntheticConfig::default(),
            train_auxiliary: false,
        }
    }
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got `{value}`"))),
    }
}

impl ExperimentConfig {
    /// Every key in canonical order with its resolved value.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synthetic;
        vec![
            ("arm", self.arm.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.optimizer.lr.to_string()),
            ("weight_decay", self.optimizer.weight_decay.to_string()),
            ("beta1", self.optimizer.beta1.to_string()),
            ("beta2", self.optimizer.beta2.to_string()),
            ("adam_eps", self.optimizer.eps.to_string()),
            ("tau", self.tau.to_string()),
            ("gamma", self.gamma.to_string()),
            ("alpha", self.alpha.to_string()),
            ("lambda_cls", self.weights.cls.to_string()),
            ("lambda_cont", self.weights.cont.to_string()),
            ("lambda_emb", self.weights.emb.to_string()),
            ("eq12_literal", self.eq12_literal.to_string()),
            ("seed", self.seed.to_string()),
            ("seeds", self.seeds.to_string()),
            ("folds", self.folds.to_string()),
            ("fold", self.fold.to_string()),
            ("widths", list(&self.widths)),
            ("kernel", self.kernel.to_string()),
            ("stride", self.stride.to_string()),
            ("nonlinearity", self.nonlinearity.as_str().to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("image_size", self.image_size.to_string()),
            ("pad_fraction", self.pad_fraction.to_string()),
            ("norm_mean", list(&self.norm_mean)),
            ("norm_std", list(&self.norm_std)),
            ("flip_prob", self.augment.flip_prob.to_string()),
            ("brightness", self.augment.brightness.to_string()),
            ("contrast", self.augment.contrast.to_string()),
            (
                "data",
                match &self.data {
                    DataSource::Synthetic => "synthetic".to_string(),
                    DataSource::Manifest(p) => p.display().to_string(),
                },
            ),
            ("synth_mode", s.mode.to_string()),
            ("n_per_cell", s.n_per_cell.to_string()),
            ("shift", s.shift.to_string()),
            ("separation", s.separation.to_string()),
            ("noise", s.noise.to_string()),
            ("raw_size", s.image_size.to_string()),
            ("vector_dim", s.vector_dim.to_string()),
            ("train_auxiliary", self.train_auxiliary.to_string()),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        ExperimentConfig::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "arm" => self.arm = value.parse()?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "lr" => self.optimizer.lr = parse_num(key, value)?,
            "weight_decay" => self.optimizer.weight_decay = parse_num(key, value)?,
            "beta1" => self.optimizer.beta1 = parse_num(key, value)?,
            "beta2" => self.optimizer.beta2 = parse_num(key, value)?,
            "adam_eps" => self.optimizer.eps = parse_num(key, value)?,
            "tau" => self.tau = parse_num(key, value)?,
            "gamma" => self.gamma = parse_num(key, value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "lambda_cls" => self.weights.cls = parse_num(key, value)?,
            "lambda_cont" => self.weights.cont = parse_num(key, value)?,
            "lambda_emb" => self.weights.emb = parse_num(key, value)?,
            "eq12_literal" => self.eq12_literal = parse_bool(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "seeds" => self.seeds = parse_num(key, value)?,
            "folds" => self.folds = parse_num(key, value)?,
            "fold" => self.fold = parse_num(key, value)?,
            "widths" => self.widths = parse_list(key, value)?,
            "kernel" => self.kernel = parse_num(key, value)?,
            "stride" => self.stride = parse_num(key, value)?,
            "nonlinearity" => self.nonlinearity = Nonlinearity::parse(value)?,
            "embed_dim" => self.embed_dim = parse_num(key, value)?,
            "image_size" => self.image_size = parse_num(key, value)?,
            "pad_fraction" => self.pad_fraction = parse_num(key, value)?,
            "norm_mean" => self.norm_mean = parse_list(key, value)?,
            "norm_std" => self.norm_std = parse_list(key, value)?,
            "flip_prob" => self.augment.flip_prob = parse_num(key, value)?,
            "brightness" => self.augment.brightness = parse_num(key, value)?,
            "contrast" => self.augment.contrast = parse_num(key, value)?,
            "data" => {
                self.data = match value {
                    "synthetic" => DataSource::Synthetic,
                    path => DataSource::Manifest(PathBuf::from(path)),
                }
            }
            "synth_mode" => self.synthetic.mode = value.parse()?,
            "n_per_cell" => self.synthetic.n_per_cell = parse_num(key, value)?,
            "shift" => self.synthetic.shift = parse_shift(value)?,
            "separation" => self.synthetic.separation = parse_num(key, value)?,
            "noise" => self.synthetic.noise = parse_num(key, value)?,
            "raw_size" => self.synthetic.image_size = parse_num(key, value)?,
            "vector_dim" => self.synthetic.vector_dim = parse_num(key, value)?,
            "train_auxiliary" => self.train_auxiliary = parse_bool(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}:{v}\n"))
            .collect()
    }

    /// Applies `key:value` lines (blank and `#` lines ignored) on top of
    /// `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("line {}: expected key:value, got `{line}`", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Desk-scale settings for the five-arm ladder comparison on
    /// moderate-shift synthetic images.
    pub fn benchmark() -> Self {
        let mut c = Self::default();
        c.epochs = 20;
        c.optimizer.lr = 1e-3;
        c.weights.emb = 0.3;
        c.synthetic.separation = 0.5;
        c.synthetic.noise = 0.2;
        c
    }

    pub fn similarity_form(&self) -> SimilarityForm {
        if self.eq12_literal {
            SimilarityForm::Literal
        } else {
            SimilarityForm::Corrected
        }
    }

    /// Generator settings with the experiment seed applied.
    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            seed: self.seed,
            ..self.synthetic.clone()
        }
    }

    /// Path architecture for samples of the given shape.
    pub fn path_spec(&self, sample_shape: &[usize]) -> Result<PathSpec> {
        let backbone = match sample_shape {
            &[c, _, _] => BackboneSpec::Conv {
                in_channels: c,
                input_size: self.image_size,
                widths: self.widths.clone(),
                kernel: self.kernel,
                stride: self.stride,
                nonlinearity: self.nonlinearity,
                bias: true,
            },
            &[d] => BackboneSpec::Dense {
                input_dim: d,
                widths: self.widths.clone(),
                nonlinearity: self.nonlinearity,
                bias: true,
            },
            s => return Err(Error::Config(format!("unsupported sample shape {s:?}"))),
        };
        backbone.validate()?;
        Ok(PathSpec {
            backbone,
            embed_dim: self.embed_dim,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.weights.validate()?;
        self.augment.validate()?;
        if self.batch_size == 0 || self.batch_size % 4 != 0 {
            return Err(Error::Config(format!(
                "batch_size must be a positive multiple of 4, got {}",
                self.batch_size
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.gamma >= 0.0) || !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("gamma must be >= 0 and alpha in (0, 1)".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be >= 2, got {}", self.folds)));
        }
        if self.fold >= self.folds {
            return Err(Error::Config(format!("fold {} out of range for {} folds", self.fold, self.folds)));
        }
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be >= 1".into()));
        }
        if self.widths.is_empty() || self.widths.contains(&0) || self.embed_dim == 0 {
            return Err(Error::Config("widths and embed_dim must be positive".into()));
        }
        if self.image_size < 2 {
            return Err(Error::Config(format!("image_size must be >= 2, got {}", self.image_size)));
        }
        if !(self.pad_fraction >= 0.0) {
            return Err(Error::Config("pad_fraction must be >= 0".into()));
        }
        if self.norm_mean.is_empty() || self.norm_mean.len() != self.norm_std.len() {
            return Err(Error::Config("norm_mean and norm_std need matching non-empty lists".into()));
        }
        if self.norm_std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("norm_std entries must be > 0".into()));
        }
        if self.data == DataSource::Synthetic {
            self.synthetic_config().validate()?;
        }
        Ok(())
    }
}
