use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::network::{ModelConfig, Variant};
use crate::synthdata::{DatasetSpec, Difficulty};
use crate::tensor::AdamConfig;

/// Where training data comes from: a directory written by `write_dataset`,
/// or sequences rendered on the fly from `spec`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub root: Option<PathBuf>,
    pub seed: u64,
    pub sequences: usize,
    pub frames: usize,
    pub difficulty: Difficulty,
    pub motion_scale: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: None,
            seed: 7,
            sequences: 20,
            frames: 20,
            difficulty: Difficulty::Textured,
            motion_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub variant: Variant,
    pub loss: LossWeights,
    pub adam: AdamConfig,
    pub max_steps: u64,
    pub window_stride: usize,
    pub seed: u64,
    /// Write a checkpoint every this many steps (0 disables periodic saves).
    pub checkpoint_interval: u64,
    pub clip_norm: f64,
    /// Log a progress line every this many steps.
    pub log_interval: u64,
    pub data: DataConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let model = ModelConfig::desk();
        Self {
            window_stride: (model.window / 2).max(1),
            model,
            variant: Variant::DenseSlamNet,
            loss: LossWeights::default(),
            adam: AdamConfig::default(),
            max_steps: 3000,
            seed: 1,
            checkpoint_interval: 500,
            clip_norm: 10.0,
            log_interval: 100,
            data: DataConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

fn join(v: &[usize]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            seed: self.data.seed,
            sequences: self.data.sequences,
            frames: self.data.frames,
            height: self.model.height,
            width: self.model.width,
            difficulty: self.data.difficulty,
            motion_scale: self.data.motion_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.adam.validate()?;
        if self.window_stride == 0 {
            return Err(Error::Config("train.window_stride must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("train.clip_norm must be positive".into()));
        }
        if self.data.root.is_none() && self.data.frames < self.model.window {
            return Err(Error::Config(format!(
                "data.frames={} is shorter than the window length {}",
                self.data.frames, self.model.window
            )));
        }
        if !(self.data.motion_scale >= 0.0 && self.data.motion_scale.is_finite()) {
            return Err(Error::Config("data.motion_scale must be finite and nonnegative".into()));
        }
        Ok(())
    }

    /// Set one `section.key` entry.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "model.variant" => self.variant = v.parse()?,
            "model.height" => self.model.height = parse(key, v)?,
            "model.width" => self.model.width = parse(key, v)?,
            "model.encoder_channels" => self.model.encoder_channels = parse_list(key, v)?,
            "model.decoder_channels" => self.model.decoder_channels = parse_list(key, v)?,
            "model.pose_hidden" => self.model.pose_hidden = parse(key, v)?,
            "model.window" => self.model.window = parse(key, v)?,
            "model.disp_min" => self.model.disp_min = parse(key, v)?,
            "model.disp_max" => self.model.disp_max = parse(key, v)?,
            "model.disp_init" => self.model.disp_init = parse(key, v)?,
            "loss.depth" => self.loss.depth = parse(key, v)?,
            "loss.grad" => self.loss.grad = parse(key, v)?,
            "loss.rot" => self.loss.rot = parse(key, v)?,
            "loss.trans" => self.loss.trans = parse(key, v)?,
            "train.lr" => self.adam.lr = parse(key, v)?,
            "train.beta1" => self.adam.beta1 = parse(key, v)?,
            "train.beta2" => self.adam.beta2 = parse(key, v)?,
            "train.eps" => self.adam.eps = parse(key, v)?,
            "train.decay_rate" => self.adam.decay_rate = parse(key, v)?,
            "train.decay_steps" => self.adam.decay_steps = parse(key, v)?,
            "train.max_steps" => self.max_steps = parse(key, v)?,
            "train.window_stride" => self.window_stride = parse(key, v)?,
            "train.seed" => self.seed = parse(key, v)?,
            "train.checkpoint_interval" => self.checkpoint_interval = parse(key, v)?,
            "train.clip_norm" => self.clip_norm = parse(key, v)?,
            "train.log_interval" => self.log_interval = parse(key, v)?,
            "data.root" => self.data.root = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.seed" => self.data.seed = parse(key, v)?,
            "data.sequences" => self.data.sequences = parse(key, v)?,
            "data.frames" => self.data.frames = parse(key, v)?,
            "data.difficulty" => self.data.difficulty = v.parse()?,
            "data.motion_scale" => self.data.motion_scale = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Apply `key=value` lines on top of `self`. Blank lines and `#` comments
    /// are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Every setting as `key=value` lines; feeding this back through
    /// [`Self::apply_text`] reproduces the config exactly.
    pub fn to_kv(&self) -> String {
        let m = &self.model;
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("model.variant", self.variant.label().to_string());
        put("model.height", m.height.to_string());
        put("model.width", m.width.to_string());
        put("model.encoder_channels", join(&m.encoder_channels));
        put("model.decoder_channels", join(&m.decoder_channels));
        put("model.pose_hidden", m.pose_hidden.to_string());
        put("model.window", m.window.to_string());
        put("model.disp_min", m.disp_min.to_string());
        put("model.disp_max", m.disp_max.to_string());
        put("model.disp_init", m.disp_init.to_string());
        put("loss.depth", self.loss.depth.to_string());
        put("loss.grad", self.loss.grad.to_string());
        put("loss.rot", self.loss.rot.to_string());
        put("loss.trans", self.loss.trans.to_string());
        put("train.lr", self.adam.lr.to_string());
        put("train.beta1", self.adam.beta1.to_string());
        put("train.beta2", self.adam.beta2.to_string());
        put("train.eps", self.adam.eps.to_string());
        put("train.decay_rate", self.adam.decay_rate.to_string());
        put("train.decay_steps", self.adam.decay_steps.to_string());
        put("train.max_steps", self.max_steps.to_string());
        put("train.window_stride", self.window_stride.to_string());
        put("train.seed", self.seed.to_string());
        put("train.checkpoint_interval", self.checkpoint_interval.to_string());
        put("train.clip_norm", self.clip_norm.to_string());
        put("train.log_interval", self.log_interval.to_string());
        put(
            "data.root",
            self.data.root.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        put("data.seed", self.data.seed.to_string());
        put("data.sequences", self.data.sequences.to_string());
        put("data.frames", self.data.frames.to_string());
        put("data.difficulty", self.data.difficulty.to_string());
        put("data.motion_scale", self.data.motion_scale.to_string());
        s
    }
}

/// Model settings only, as stored in checkpoints.
pub fn model_kv(variant: Variant, m: &ModelConfig) -> String {
    let cfg = TrainConfig {
        model: m.clone(),
        variant,
        ..TrainConfig::default()
    };
    cfg.to_kv().lines().filter(|l| l.starts_with("model.")).map(|l| format!("{l}\n")).collect()
}

/// Inverse of [`model_kv`].
pub fn parse_model_kv(text: &str) -> Result<(Variant, ModelConfig)> {
    let mut cfg = TrainConfig::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Load(format!("malformed config line {line:?}")))?;
        if !k.starts_with("model.") {
            return Err(Error::Load(format!("unexpected key {k:?} in model block")));
        }
        cfg.set(k, v).map_err(|e| Error::Load(e.to_string()))?;
    }
    Ok((cfg.variant, cfg.model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dump_has_paper_learning_rate() {
        assert!(TrainConfig::default().to_kv().lines().any(|l| l == "train.lr=0.0002"));
    }

    #[test]
    fn dump_round_trips() {
        let mut cfg = TrainConfig::default();
        cfg.apply_text("model.variant=CNN-STACK\ntrain.lr=0.0005\ndata.root=/tmp/x\n# note\n").unwrap();
        let mut back = TrainConfig::default();
        back.apply_text(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = TrainConfig::default();
        assert!(matches!(cfg.apply_text("train.learning_rate=1"), Err(Error::Config(_))));
    }

    #[test]
    fn model_block_round_trips() {
        let m = ModelConfig::default();
        assert_eq!(parse_model_kv(&model_kv(Variant::CnnSingle, &m)).unwrap(), (Variant::CnnSingle, m));
    }
}
