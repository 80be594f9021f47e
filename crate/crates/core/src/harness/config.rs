//! Training configuration and its flat `key = value` file format.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which components of the method are switched on. Each variant enables a
/// superset of the previous one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    /// Segmentation loss on the original image only.
    Erm,
    /// Adds the Fourier-augmented view.
    Fda,
    /// Adds the EMA teacher and the consistency term.
    FdaCon,
    /// Adds uncertainty weighting.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Erm, Variant::Fda, Variant::FdaCon, Variant::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Erm => "erm",
            Variant::Fda => "fda",
            Variant::FdaCon => "fda+con",
            Variant::Full => "full",
        }
    }

    pub fn uses_augmentation(self) -> bool {
        self >= Variant::Fda
    }

    pub fn uses_consistency(self) -> bool {
        self >= Variant::FdaCon
    }

    pub fn uses_uncertainty(self) -> bool {
        self == Variant::Full
    }

    /// Augmentation, consistency, uncertainty: the ablation table's columns.
    pub fn component_flags(self) -> [bool; 3] {
        [self.uses_augmentation(), self.uses_consistency(), self.uses_uncertainty()]
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (expected erm, fda, fda+con or full)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "32",
            Precision::F64 => "64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "32" | "f32" | "32-bit" => Ok(Precision::F32),
            "64" | "f64" | "64-bit" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("unknown precision `{s}` (expected 32 or 64)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// EMA momentum of the teacher.
    pub momentum: f64,
    pub beta_max: f64,
    /// Low-frequency window ratio and Beta parameter of the augmentation.
    pub alpha: f64,
    /// Monte Carlo passes per uncertainty estimate.
    pub passes: usize,
    /// Input noise of the Monte Carlo passes.
    pub sigma: f64,
    pub dropout: f64,
    pub seed: u64,
    pub held_out: usize,
    pub variant: Variant,
    pub precision: Precision,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-4,
            momentum: 0.99,
            beta_max: 200.0,
            alpha: 0.1,
            passes: 8,
            sigma: 0.1,
            dropout: 0.1,
            seed: 0,
            held_out: 1,
            variant: Variant::Full,
            precision: Precision::F32,
            threads: 1,
        }
    }
}

pub const KEYS: [&str; 14] = [
    "epochs",
    "batch_size",
    "learning_rate",
    "momentum",
    "beta_max",
    "alpha",
    "passes",
    "sigma",
    "dropout",
    "seed",
    "held_out",
    "variant",
    "precision",
    "threads",
];

fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl TrainConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "momentum" => self.momentum = parse_value(key, value)?,
            "beta_max" => self.beta_max = parse_value(key, value)?,
            "alpha" => self.alpha = parse_value(key, value)?,
            "passes" => self.passes = parse_value(key, value)?,
            "sigma" => self.sigma = parse_value(key, value)?,
            "dropout" => self.dropout = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "held_out" => self.held_out = parse_value(key, value)?,
            "variant" => self.variant = value.parse()?,
            "precision" => self.precision = value.parse()?,
            "threads" => self.threads = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{raw}`", n + 1)))?;
            self.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("config error: "))))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// The resolved configuration in the file format, one key per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let value = match key {
                "epochs" => self.epochs.to_string(),
                "batch_size" => self.batch_size.to_string(),
                "learning_rate" => format!("{:?}", self.learning_rate),
                "momentum" => format!("{:?}", self.momentum),
                "beta_max" => format!("{:?}", self.beta_max),
                "alpha" => format!("{:?}", self.alpha),
                "passes" => self.passes.to_string(),
                "sigma" => format!("{:?}", self.sigma),
                "dropout" => format!("{:?}", self.dropout),
                "seed" => self.seed.to_string(),
                "held_out" => self.held_out.to_string(),
                "variant" => self.variant.to_string(),
                "precision" => self.precision.to_string(),
                "threads" => self.threads.to_string(),
                _ => unreachable!("KEYS is exhaustive"),
            };
            out.push_str(&format!("{key} = {value}\n"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..=1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1], got {}", self.momentum));
        }
        if !(self.beta_max >= 0.0 && self.beta_max.is_finite()) {
            return bad(format!("beta_max must be >= 0, got {}", self.beta_max));
        }
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return bad(format!("alpha must be in (0, 0.5], got {}", self.alpha));
        }
        if self.passes == 0 {
            return bad("passes must be >= 1".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self.held_out == 0 {
            return bad("held_out is a domain id and starts at 1".into());
        }
        if self.threads == 0 {
            return bad("threads must be >= 1".into());
        }
        Ok(())
    }
}
