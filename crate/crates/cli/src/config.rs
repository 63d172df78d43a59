//! Run configuration: built-in defaults, then an optional `key = value` file,
//! then command-line overrides. Later sources win.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use aadladmm_core::anderson::AAConfig;
use aadladmm_core::data::Normalization;
use aadladmm_core::model::{Activation, Loss, Regularizer};
use aadladmm_core::trainer::{AcceptanceGate, TrainConfig};

use crate::error::{CliError, Result};

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "AA_DLADMM_OUT_DIR";

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth,
    Csv(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsFormat {
    Csv,
    JsonLines,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: DataSource,
    pub header: bool,
    /// Hidden layer widths. `None` picks 16,16 for synthetic data and
    /// 100,100,100 for files.
    pub hidden: Option<Vec<usize>>,
    pub activation: Activation,
    pub loss: Loss,
    pub regularizer: Regularizer,
    pub rho: f64,
    pub m: usize,
    pub epochs: usize,
    pub aa: bool,
    pub gate: AcceptanceGate,
    pub seed: u64,
    pub data_seed: u64,
    pub split_seed: u64,
    pub train_fraction: f64,
    pub normalize: Normalization,
    pub synth_per_class: usize,
    pub synth_dim: usize,
    pub synth_classes: usize,
    pub synth_spread: f64,
    pub lr_gd: f64,
    pub lr_adam: f64,
    pub record_every: usize,
    pub format: MetricsFormat,
    pub timing: bool,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synth,
            header: false,
            hidden: None,
            activation: Activation::Relu,
            loss: Loss::CrossEntropySoftmax,
            regularizer: Regularizer::None,
            rho: 1e-4,
            m: 8,
            epochs: 200,
            aa: true,
            gate: AcceptanceGate::Objective,
            seed: 0,
            data_seed: 0,
            split_seed: 0,
            train_fraction: 0.8,
            normalize: Normalization::None,
            synth_per_class: 100,
            synth_dim: 10,
            synth_classes: 2,
            synth_spread: 0.3,
            lr_gd: 0.01,
            lr_adam: 1e-3,
            record_every: 1,
            format: MetricsFormat::Csv,
            timing: false,
            out: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| CliError::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_switch(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Ok(true),
        "off" | "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config(format!("{key} must be on or off, got {value:?}"))),
    }
}

/// Comma-separated list; empty entries are rejected.
pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v)).collect()
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Sigmoid => "sigmoid",
        Activation::Tanh => "tanh",
    }
}

fn regularizer_string(r: Regularizer) -> String {
    match r {
        Regularizer::None => "none".into(),
        Regularizer::L1(l) => format!("l1:{l}"),
        Regularizer::L2(l) => format!("l2:{l}"),
    }
}

impl RunConfig {
    /// Keys accepted by [`set`](Self::set), in snapshot order.
    pub const KEYS: &'static [&'static str] = &[
        "data",
        "header",
        "hidden",
        "activation",
        "loss",
        "regularizer",
        "rho",
        "m",
        "epochs",
        "aa",
        "aa_gate",
        "seed",
        "data_seed",
        "split_seed",
        "train_fraction",
        "normalize",
        "synth_per_class",
        "synth_dim",
        "synth_classes",
        "synth_spread",
        "lr_gd",
        "lr_adam",
        "record_every",
        "format",
        "timing",
        "out",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "data" => {
                self.data = if v == "synth" {
                    DataSource::Synth
                } else {
                    DataSource::Csv(PathBuf::from(v))
                }
            }
            "header" => self.header = parse_switch(key, v)?,
            "hidden" => self.hidden = Some(parse_list(key, v)?),
            "activation" => {
                self.activation = match v {
                    "relu" => Activation::Relu,
                    "sigmoid" => Activation::Sigmoid,
                    "tanh" => Activation::Tanh,
                    _ => return Err(CliError::Config(format!("unknown activation {v:?}"))),
                }
            }
            "loss" => {
                self.loss = match v {
                    "ce" | "cross_entropy" => Loss::CrossEntropySoftmax,
                    "ls" | "least_squares" => Loss::LeastSquares,
                    _ => return Err(CliError::Config(format!("unknown loss {v:?}"))),
                }
            }
            "regularizer" => {
                self.regularizer = match v.split_once(':') {
                    None if v == "none" => Regularizer::None,
                    Some(("l1", l)) => Regularizer::L1(parse(key, l)?),
                    Some(("l2", l)) => Regularizer::L2(parse(key, l)?),
                    _ => return Err(CliError::Config(format!("regularizer must be none, l1:<f> or l2:<f>, got {v:?}"))),
                }
            }
            "rho" => self.rho = parse(key, v)?,
            "m" => self.m = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "aa" => self.aa = parse_switch(key, v)?,
            "aa_gate" => {
                self.gate = match v {
                    "objective" => AcceptanceGate::Objective,
                    "residual" => AcceptanceGate::ConstraintResidual,
                    _ => return Err(CliError::Config(format!("aa_gate must be objective or residual, got {v:?}"))),
                }
            }
            "seed" => self.seed = parse(key, v)?,
            "data_seed" => self.data_seed = parse(key, v)?,
            "split_seed" => self.split_seed = parse(key, v)?,
            "train_fraction" => self.train_fraction = parse(key, v)?,
            "normalize" => {
                self.normalize = match v {
                    "none" => Normalization::None,
                    "unit_rows" => Normalization::UnitRows,
                    "standardize" => Normalization::Standardize,
                    _ => return Err(CliError::Config(format!("unknown normalization {v:?}"))),
                }
            }
            "synth_per_class" => self.synth_per_class = parse(key, v)?,
            "synth_dim" => self.synth_dim = parse(key, v)?,
            "synth_classes" => self.synth_classes = parse(key, v)?,
            "synth_spread" => self.synth_spread = parse(key, v)?,
            "lr_gd" => self.lr_gd = parse(key, v)?,
            "lr_adam" => self.lr_adam = parse(key, v)?,
            "record_every" => self.record_every = parse(key, v)?,
            "format" => {
                self.format = match v {
                    "csv" => MetricsFormat::Csv,
                    "jsonl" => MetricsFormat::JsonLines,
                    _ => return Err(CliError::Config(format!("format must be csv or jsonl, got {v:?}"))),
                }
            }
            "timing" => self.timing = parse_switch(key, v)?,
            "out" => self.out = Some(PathBuf::from(v)),
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{}:{}: expected key = value", origin.display(), n + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(CliError::Config(msg.into()));
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad("rho must be positive");
        }
        if self.m == 0 || self.epochs == 0 || self.record_every == 0 {
            return bad("m, epochs and record_every must be at least 1");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        if self.hidden.as_ref().is_some_and(|h| h.contains(&0)) {
            return bad("hidden widths must be positive");
        }
        if !(self.lr_gd >= 0.0 && self.lr_adam >= 0.0) {
            return bad("learning rates must be non-negative");
        }
        Ok(())
    }

    pub fn hidden_layers(&self) -> Vec<usize> {
        self.hidden.clone().unwrap_or_else(|| match self.data {
            DataSource::Synth => vec![16, 16],
            DataSource::Csv(_) => vec![100, 100, 100],
        })
    }

    pub fn aa_config(&self) -> AAConfig {
        AAConfig {
            m: self.m,
            ..AAConfig::default()
        }
    }

    pub fn train_config(&self, aa: bool) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            aa: aa.then(|| self.aa_config()),
            seed: self.seed,
            record_every: self.record_every,
            gate: self.gate,
            ..TrainConfig::default()
        }
    }

    /// Output root: the configured `out`, else `$AA_DLADMM_OUT_DIR`, else `runs`.
    pub fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }

    /// Every key with its effective value, for manifests.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let switch = |b: bool| if b { "on" } else { "off" }.to_string();
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put(
            "data",
            match &self.data {
                DataSource::Synth => "synth".into(),
                DataSource::Csv(p) => p.display().to_string(),
            },
        );
        put("header", switch(self.header));
        put(
            "hidden",
            self.hidden_layers().iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        );
        put("activation", activation_name(self.activation).into());
        put(
            "loss",
            match self.loss {
                Loss::CrossEntropySoftmax => "ce",
                Loss::LeastSquares => "ls",
            }
            .into(),
        );
        put("regularizer", regularizer_string(self.regularizer));
        put("rho", self.rho.to_string());
        put("m", self.m.to_string());
        put("epochs", self.epochs.to_string());
        put("aa", switch(self.aa));
        put(
            "aa_gate",
            match self.gate {
                AcceptanceGate::Objective => "objective",
                AcceptanceGate::ConstraintResidual => "residual",
            }
            .into(),
        );
        put("seed", self.seed.to_string());
        put("data_seed", self.data_seed.to_string());
        put("split_seed", self.split_seed.to_string());
        put("train_fraction", self.train_fraction.to_string());
        put(
            "normalize",
            match self.normalize {
                Normalization::None => "none",
                Normalization::UnitRows => "unit_rows",
                Normalization::Standardize => "standardize",
            }
            .into(),
        );
        put("synth_per_class", self.synth_per_class.to_string());
        put("synth_dim", self.synth_dim.to_string());
        put("synth_classes", self.synth_classes.to_string());
        put("synth_spread", self.synth_spread.to_string());
        put("lr_gd", self.lr_gd.to_string());
        put("lr_adam", self.lr_adam.to_string());
        put("record_every", self.record_every.to_string());
        put(
            "format",
            match self.format {
                MetricsFormat::Csv => "csv",
                MetricsFormat::JsonLines => "jsonl",
            }
            .into(),
        );
        put("timing", switch(self.timing));
        put("out", self.out_dir().display().to_string());
        m
    }
}
