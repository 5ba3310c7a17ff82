use std::fmt::Write as _;
use std::str::FromStr;

use crate::autodiff::AdamConfig;
use crate::error::{Error, Result};
use crate::model::{config_hash, Ablations, ModelConfig};

/// Everything a training run depends on besides the data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 32,
            total_steps: 20_000,
            lambda1: 1.0,
            lambda2: 1.0,
            mu1: 1.0,
            mu2: 1.0,
            seed: 0,
            checkpoint_every: 1000,
        }
    }
}

/// Recognized keys, in the order they are echoed.
pub const CONFIG_KEYS: [&str; 17] = [
    "resolution",
    "ds_dim",
    "dr_dim",
    "widths",
    "disc_widths",
    "lr",
    "beta1",
    "beta2",
    "batch_size",
    "total_steps",
    "lambda1",
    "lambda2",
    "mu1",
    "mu2",
    "seed",
    "checkpoint_every",
    "ablation",
];

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("key `{key}`: cannot parse `{v}`")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|x| parse_value(key, x.trim())).collect()
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    /// Parses flat `key = value` lines. Blank lines and `#` comments are
    /// skipped; unknown or repeated keys are rejected; missing keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", no + 1))
            })?;
            let (key, v) = (key.trim(), value.trim());
            if !CONFIG_KEYS.contains(&key) {
                return Err(Error::Config(format!("unknown key `{key}` on line {}", no + 1)));
            }
            if seen.iter().any(|s| s == key) {
                return Err(Error::Config(format!("key `{key}` given twice")));
            }
            seen.push(key.to_string());
            match key {
                "resolution" => c.model.resolution = parse_value(key, v)?,
                "ds_dim" => c.model.ds_dim = parse_value(key, v)?,
                "dr_dim" => c.model.dr_dim = parse_value(key, v)?,
                "widths" => c.model.widths = parse_list(key, v)?,
                "disc_widths" => {
                    c.model.disc_widths = parse_list(key, v)?.try_into().map_err(|_| {
                        Error::Config("key `disc_widths`: needs exactly 3 entries".into())
                    })?
                }
                "lr" => c.lr = parse_value(key, v)?,
                "beta1" => c.beta1 = parse_value(key, v)?,
                "beta2" => c.beta2 = parse_value(key, v)?,
                "batch_size" => c.batch_size = parse_value(key, v)?,
                "total_steps" => c.total_steps = parse_value(key, v)?,
                "lambda1" => c.lambda1 = parse_value(key, v)?,
                "lambda2" => c.lambda2 = parse_value(key, v)?,
                "mu1" => c.mu1 = parse_value(key, v)?,
                "mu2" => c.mu2 = parse_value(key, v)?,
                "seed" => c.seed = parse_value(key, v)?,
                "checkpoint_every" => c.checkpoint_every = parse_value(key, v)?,
                "ablation" => {
                    c.model.ablations = Ablations::parse_list(v)
                        .map_err(|e| Error::Config(format!("key `ablation`: {e}")))?
                }
                _ => unreachable!("key list checked above"),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        for (k, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("mu1", self.mu1),
            ("mu2", self.mu2),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("key `{k}` must be a finite value >= 0, got {v}")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("key `lr` must be positive, got {}", self.lr)));
        }
        for (k, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("key `{k}` must lie in [0, 1), got {v}")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "key `batch_size` must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("key `checkpoint_every` must be positive".into()));
        }
        Ok(())
    }

    /// Every key with its resolved value, one `key = value` line each.
    /// Parsing the result gives back an equal config.
    pub fn to_text(&self) -> String {
        self.render(true)
    }

    fn render(&self, schedule: bool) -> String {
        let m = &self.model;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("resolution", m.resolution.to_string());
        put("ds_dim", m.ds_dim.to_string());
        put("dr_dim", m.dr_dim.to_string());
        put("widths", join(&m.widths));
        put("disc_widths", join(&m.disc_widths));
        put("lr", self.lr.to_string());
        put("beta1", self.beta1.to_string());
        put("beta2", self.beta2.to_string());
        put("batch_size", self.batch_size.to_string());
        if schedule {
            put("total_steps", self.total_steps.to_string());
        }
        put("lambda1", self.lambda1.to_string());
        put("lambda2", self.lambda2.to_string());
        put("mu1", self.mu1.to_string());
        put("mu2", self.mu2.to_string());
        put("seed", self.seed.to_string());
        if schedule {
            put("checkpoint_every", self.checkpoint_every.to_string());
        }
        put("ablation", m.ablations.to_string());
        s
    }

    /// Hash of everything that determines the trajectory. `total_steps` and
    /// `checkpoint_every` are excluded so a run can be extended on resume.
    pub fn hash(&self) -> [u8; 32] {
        config_hash(&self.render(false))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    /// Weights actually applied to `L_ns` and `L_rec` after ablations.
    pub fn effective_lambdas(&self) -> (f64, f64) {
        let ab = self.model.ablations;
        (
            if ab.no_lns { 0.0 } else { self.lambda1 },
            if ab.no_lrec { 0.0 } else { self.lambda2 },
        )
    }
}
