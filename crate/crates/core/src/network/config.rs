use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which network to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Encoder/decoder with three conv-LSTM blocks carrying state across frames.
    DenseSlamNet,
    /// Same topology with every LSTM block replaced by a plain convolution.
    CnnSingle,
    /// `CnnSingle` fed the channel stack of the last `window` frames.
    CnnStack,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::CnnSingle, Variant::CnnStack, Variant::DenseSlamNet];

    pub fn label(self) -> &'static str {
        match self {
            Variant::DenseSlamNet => "DenseSLAMNet",
            Variant::CnnSingle => "CNN-SINGLE",
            Variant::CnnStack => "CNN-STACK",
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Variant::DenseSlamNet => 0,
            Variant::CnnSingle => 1,
            Variant::CnnStack => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.tag() == tag)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "denseslamnet" | "rnn" => Ok(Variant::DenseSlamNet),
            "cnnsingle" => Ok(Variant::CnnSingle),
            "cnnstack" => Ok(Variant::CnnStack),
            _ => Err(Error::Config(format!("unknown model variant {s:?}"))),
        }
    }
}

/// Shape of the encoder/decoder.
///
/// Encoder level `k` (1-based) runs at `1/2^k` resolution with
/// `encoder_channels[k-1]` maps. Decoder stage `k` (0-based, 0 = full
/// resolution) has `decoder_channels[k]` maps.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub encoder_channels: Vec<usize>,
    pub decoder_channels: Vec<usize>,
    pub pose_hidden: usize,
    /// Temporal window length N (also the CNN-STACK input depth).
    pub window: usize,
    pub disp_min: f64,
    pub disp_max: f64,
    /// Disparity the head outputs at initialization.
    pub disp_init: f64,
}

impl Default for ModelConfig {
    /// Indoor-resolution network: 192×256 input, five stride-2 stages.
    fn default() -> Self {
        Self {
            height: 192,
            width: 256,
            encoder_channels: vec![32, 64, 128, 256, 512],
            decoder_channels: vec![16, 32, 64, 128, 256],
            pose_hidden: 128,
            window: 10,
            disp_min: 0.01,
            disp_max: 10.0,
            disp_init: 0.25,
        }
    }
}

impl ModelConfig {
    /// 32×48 network small enough to train on one CPU core.
    pub fn desk() -> Self {
        Self {
            height: 32,
            width: 48,
            encoder_channels: vec![32, 32, 48, 64],
            decoder_channels: vec![8, 16, 16, 32],
            pose_hidden: 32,
            ..Self::default()
        }
    }

    pub fn encoder_depth(&self) -> usize {
        self.encoder_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let depth = self.encoder_depth();
        if depth < 2 {
            return Err(Error::Config("encoder needs at least two stride-2 stages".into()));
        }
        if self.decoder_channels.len() != depth {
            return Err(Error::Config(format!(
                "{} decoder widths for {depth} encoder stages",
                self.decoder_channels.len()
            )));
        }
        let step = 1usize << depth;
        if self.height == 0 || self.width == 0 || self.height % step != 0 || self.width % step != 0 {
            return Err(Error::Config(format!(
                "{}x{} is not divisible by 2^{depth}; the bottleneck would be fractional",
                self.height, self.width
            )));
        }
        if self
            .encoder_channels
            .iter()
            .chain(&self.decoder_channels)
            .chain([&self.pose_hidden])
            .any(|&c| c == 0)
        {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window length must be at least 1".into()));
        }
        if !(self.disp_min > 0.0 && self.disp_min < self.disp_max && self.disp_max.is_finite()) {
            return Err(Error::Config(format!(
                "disparity bounds [{}, {}] must satisfy 0 < min < max",
                self.disp_min, self.disp_max
            )));
        }
        if !(self.disp_init > self.disp_min && self.disp_init < self.disp_max) {
            return Err(Error::Config(format!(
                "initial disparity {} outside ({}, {})",
                self.disp_init, self.disp_min, self.disp_max
            )));
        }
        Ok(())
    }

    /// Spatial extents at encoder level `k` (0 = input).
    pub fn extents_at(&self, level: usize) -> (usize, usize) {
        (self.height >> level, self.width >> level)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::desk().validate().unwrap();
    }

    #[test]
    fn fractional_bottleneck_rejected() {
        let cfg = ModelConfig {
            encoder_channels: vec![32, 32, 48, 64, 64],
            decoder_channels: vec![8, 16, 16, 32, 32],
            ..ModelConfig::desk()
        };
        // 48 / 2^5 = 1.5
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.label().parse::<Variant>().unwrap(), v);
            assert_eq!(Variant::from_tag(v.tag()), Some(v));
        }
    }
}
