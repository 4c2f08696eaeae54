//! Training hyper-parameters and their flat `key=value` file format.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::DEFAULT_LAMBDA;
use crate::model::optim::{DEFAULT_MOMENTUM, DEFAULT_WEIGHT_DECAY};
use crate::model::ModelConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LambdaMode {
    Constant,
    /// `λ·exp(−5·(1 − t/T)²)`
    GaussianWarmup,
}

impl LambdaMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LambdaMode::Constant => "constant",
            LambdaMode::GaussianWarmup => "gaussian_warmup",
        }
    }
}

impl FromStr for LambdaMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LambdaMode::Constant),
            "gaussian_warmup" | "warmup" => Ok(LambdaMode::GaussianWarmup),
            other => Err(Error::Config(format!(
                "unknown lambda mode {other:?} (expected constant or gaussian_warmup)"
            ))),
        }
    }
}

/// Which transforms augmentation may draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augmentation {
    pub rot90: bool,
    pub hflip: bool,
    pub vflip: bool,
}

impl Augmentation {
    pub const ALL: Augmentation = Augmentation {
        rot90: true,
        hflip: true,
        vflip: true,
    };
    pub const NONE: Augmentation = Augmentation {
        rot90: false,
        hflip: false,
        vflip: false,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub image_size: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub max_iters: usize,
    pub poly_power: f64,
    pub lambda_mode: LambdaMode,
    pub lambda_value: f64,
    pub seed: u64,
    pub augmentation: Augmentation,
    pub momentum: f32,
    pub weight_decay: f32,
    /// Validation every this many steps; 0 disables it.
    pub eval_interval: usize,
    pub model: ModelConfig,
    /// Leave out training images whose intersection label is empty.
    pub drop_empty_int: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            image_size: 128,
            batch_size: 8,
            lr0: 0.01,
            max_iters: 2000,
            poly_power: 0.9,
            lambda_mode: LambdaMode::Constant,
            lambda_value: DEFAULT_LAMBDA,
            seed: 0,
            augmentation: Augmentation::ALL,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            eval_interval: 200,
            model: ModelConfig {
                depth: 3,
                base_channels: 8,
            },
            drop_empty_int: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail("lr0 must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.lambda_value >= 0.0 && self.lambda_value.is_finite()) {
            return fail("lambda_value must be non-negative");
        }
        if self.max_iters == 0 {
            return fail("max_iters must be at least 1");
        }
        if !(self.poly_power >= 0.0) {
            return fail("poly_power must be non-negative");
        }
        self.model.validate()?;
        if self.image_size == 0 || !self.image_size.is_multiple_of(self.model.divisor()) {
            return Err(Error::Config(format!(
                "image_size {} must be a positive multiple of {} for depth {}",
                self.image_size,
                self.model.divisor(),
                self.model.depth
            )));
        }
        Ok(())
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "image_size" => self.image_size = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr0" => self.lr0 = parse(key, v)?,
            "max_iters" => self.max_iters = parse(key, v)?,
            "poly_power" => self.poly_power = parse(key, v)?,
            "lambda_mode" => self.lambda_mode = v.parse()?,
            "lambda_value" => self.lambda_value = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "aug_rot90" => self.augmentation.rot90 = parse(key, v)?,
            "aug_hflip" => self.augmentation.hflip = parse(key, v)?,
            "aug_vflip" => self.augmentation.vflip = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "eval_interval" => self.eval_interval = parse(key, v)?,
            "depth" => self.model.depth = parse(key, v)?,
            "base_channels" => self.model.base_channels = parse(key, v)?,
            "drop_empty_int" => self.drop_empty_int = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parses a `key=value` file on top of the defaults. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let a = self.augmentation;
        let pairs: [(&str, String); 17] = [
            ("image_size", self.image_size.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr0", self.lr0.to_string()),
            ("max_iters", self.max_iters.to_string()),
            ("poly_power", self.poly_power.to_string()),
            ("lambda_mode", self.lambda_mode.as_str().to_string()),
            ("lambda_value", self.lambda_value.to_string()),
            ("seed", self.seed.to_string()),
            ("aug_rot90", a.rot90.to_string()),
            ("aug_hflip", a.hflip.to_string()),
            ("aug_vflip", a.vflip.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("eval_interval", self.eval_interval.to_string()),
            ("depth", self.model.depth.to_string()),
            ("base_channels", self.model.base_channels.to_string()),
            ("drop_empty_int", self.drop_empty_int.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// `lr0 · (1 − step/max_iters)^power`, zero from `max_iters` on.
    pub fn poly_lr(&self, step: usize) -> f64 {
        let t = (step.min(self.max_iters) as f64) / self.max_iters as f64;
        self.lr0 * (1.0 - t).powf(self.poly_power)
    }

    pub fn lambda_at(&self, step: usize) -> f64 {
        match self.lambda_mode {
            LambdaMode::Constant => self.lambda_value,
            LambdaMode::GaussianWarmup => {
                let t = (step as f64 / self.max_iters as f64).min(1.0);
                self.lambda_value * (-5.0 * (1.0 - t) * (1.0 - t)).exp()
            }
        }
    }
}
