use std::fmt;
use std::str::FromStr;

use crate::conv::NormalizerKind;
use crate::error::{Error, Result};
use crate::kv;

/// Context-mixing sub-block used by every encoder and decoder block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mechanism {
    SelfAttention,
    LightConv,
    DynamicConv,
    /// Full `k×d×d` convolution without input/output projections.
    CnnNonSeparable,
    /// One unnormalized kernel per channel (`H = d`).
    CnnDepthwise,
}

impl Mechanism {
    pub const ALL: [Mechanism; 5] = [
        Mechanism::SelfAttention,
        Mechanism::LightConv,
        Mechanism::DynamicConv,
        Mechanism::CnnNonSeparable,
        Mechanism::CnnDepthwise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::SelfAttention => "self_attention",
            Mechanism::LightConv => "lightconv",
            Mechanism::DynamicConv => "dynamicconv",
            Mechanism::CnnNonSeparable => "cnn_nonseparable",
            Mechanism::CnnDepthwise => "cnn_depthwise",
        }
    }

    pub fn is_conv(self) -> bool {
        self != Mechanism::SelfAttention
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.replace('-', "_");
        Mechanism::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown mechanism {s:?}")))
    }
}

/// Kernel widths `3, 7, 15, 31, 31, …` for the first `layers` blocks.
pub fn default_kernel_schedule(layers: usize) -> Vec<usize> {
    (0..layers).map(|l| [3, 7, 15, 31].get(l).copied().unwrap_or(31)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub mechanism: Mechanism,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d: usize,
    pub d_ff: usize,
    pub heads: usize,
    pub encoder_kernels: Vec<usize>,
    pub decoder_kernels: Vec<usize>,
    pub use_glu: bool,
    pub dropconnect_p: f64,
    pub dropout_p: f64,
    pub normalizer: NormalizerKind,
    /// Self-attention limited to the layer's kernel width.
    pub windowed_attention: bool,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub max_positions: usize,
}

impl ModelConfig {
    /// A small model with the default kernel schedule.
    pub fn tiny(mechanism: Mechanism, layers: usize, d: usize, heads: usize, vocab: usize) -> Self {
        ModelConfig {
            mechanism,
            encoder_layers: layers,
            decoder_layers: layers,
            d,
            d_ff: 2 * d,
            heads,
            encoder_kernels: default_kernel_schedule(layers),
            decoder_kernels: default_kernel_schedule(layers),
            use_glu: true,
            dropconnect_p: 0.0,
            dropout_p: 0.0,
            normalizer: NormalizerKind::Softmax,
            windowed_attention: false,
            src_vocab: vocab,
            tgt_vocab: vocab,
            max_positions: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d_ff == 0 {
            return Err(Error::config("d and d_ff must be positive"));
        }
        if self.d % 2 != 0 {
            return Err(Error::config(format!("d ({}) must be even", self.d)));
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return Err(Error::config(format!(
                "heads ({}) must divide d ({})",
                self.heads, self.d
            )));
        }
        if self.encoder_kernels.len() != self.encoder_layers {
            return Err(Error::config(format!(
                "{} encoder kernel widths for {} encoder layers",
                self.encoder_kernels.len(),
                self.encoder_layers
            )));
        }
        if self.decoder_kernels.len() != self.decoder_layers {
            return Err(Error::config(format!(
                "{} decoder kernel widths for {} decoder layers",
                self.decoder_kernels.len(),
                self.decoder_layers
            )));
        }
        if self.encoder_kernels.iter().chain(&self.decoder_kernels).any(|&k| k == 0) {
            return Err(Error::config("kernel widths must be positive"));
        }
        if self.mechanism.is_conv() || self.windowed_attention {
            if let Some(k) = self.encoder_kernels.iter().find(|&&k| k % 2 == 0) {
                return Err(Error::config(format!(
                    "encoder kernel width {k} must be odd for centered padding"
                )));
            }
        }
        for (name, p) in [("dropconnect", self.dropconnect_p), ("dropout", self.dropout_p)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::config(format!("{name} probability must lie in [0, 1), got {p}")));
            }
        }
        if self.tgt_vocab < 3 || self.src_vocab < 3 {
            return Err(Error::config("vocabularies must hold pad, bos and eos"));
        }
        if self.max_positions == 0 {
            return Err(Error::config("max_positions must be positive"));
        }
        Ok(())
    }

    /// Heads and normalizer actually used by the convolution.
    pub(crate) fn conv_heads(&self) -> usize {
        match self.mechanism {
            Mechanism::CnnDepthwise => self.d,
            _ => self.heads,
        }
    }

    pub(crate) fn conv_normalizer(&self) -> NormalizerKind {
        match self.mechanism {
            Mechanism::CnnDepthwise | Mechanism::CnnNonSeparable => NormalizerKind::None,
            _ => self.normalizer,
        }
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        put("mechanism", self.mechanism.to_string());
        put("encoder-layers", self.encoder_layers.to_string());
        put("decoder-layers", self.decoder_layers.to_string());
        put("d", self.d.to_string());
        put("d-ff", self.d_ff.to_string());
        put("heads", self.heads.to_string());
        put("encoder-kernels", kv::join(&self.encoder_kernels));
        put("decoder-kernels", kv::join(&self.decoder_kernels));
        put("use-glu", self.use_glu.to_string());
        put("dropconnect", format!("{:?}", self.dropconnect_p));
        put("dropout", format!("{:?}", self.dropout_p));
        put("normalizer", self.normalizer.to_string());
        put("windowed-attention", self.windowed_attention.to_string());
        put("src-vocab", self.src_vocab.to_string());
        put("tgt-vocab", self.tgt_vocab.to_string());
        put("max-positions", self.max_positions.to_string());
        s
    }

    /// Overwrite fields from `key=value` pairs. Unknown keys are returned so
    /// callers can route them elsewhere.
    pub fn apply_kv(&mut self, pairs: &[(String, String)]) -> Result<Vec<(String, String)>> {
        let mut rest = Vec::new();
        for (key, value) in pairs {
            let v = value.as_str();
            match key.as_str() {
                "mechanism" => self.mechanism = v.parse()?,
                "encoder-layers" => self.encoder_layers = kv::parse_value(key, v)?,
                "decoder-layers" => self.decoder_layers = kv::parse_value(key, v)?,
                "d" => self.d = kv::parse_value(key, v)?,
                "d-ff" => self.d_ff = kv::parse_value(key, v)?,
                "heads" => self.heads = kv::parse_value(key, v)?,
                "encoder-kernels" => self.encoder_kernels = kv::parse_list(key, v)?,
                "decoder-kernels" => self.decoder_kernels = kv::parse_list(key, v)?,
                "use-glu" => self.use_glu = kv::parse_bool(key, v)?,
                "dropconnect" => self.dropconnect_p = kv::parse_value(key, v)?,
                "dropout" => self.dropout_p = kv::parse_value(key, v)?,
                "normalizer" => self.normalizer = v.parse()?,
                "windowed-attention" => self.windowed_attention = kv::parse_bool(key, v)?,
                "src-vocab" => self.src_vocab = kv::parse_value(key, v)?,
                "tgt-vocab" => self.tgt_vocab = kv::parse_value(key, v)?,
                "max-positions" => self.max_positions = kv::parse_value(key, v)?,
                _ => rest.push((key.clone(), value.clone())),
            }
        }
        Ok(rest)
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::tiny(Mechanism::LightConv, 0, 8, 1, 3);
        let rest = cfg.apply_kv(&kv::parse(text)?)?;
        if let Some((key, _)) = rest.first() {
            return Err(Error::config(format!("unknown model key {key:?}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_truncates_from_the_front() {
        assert_eq!(default_kernel_schedule(2), vec![3, 7]);
        assert_eq!(default_kernel_schedule(7), vec![3, 7, 15, 31, 31, 31, 31]);
        assert_eq!(default_kernel_schedule(6), vec![3, 7, 15, 31, 31, 31]);
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = ModelConfig::tiny(Mechanism::DynamicConv, 2, 64, 4, 20);
        cfg.dropconnect_p = 0.1;
        cfg.use_glu = false;
        let back = ModelConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn heads_must_divide_d() {
        let mut cfg = ModelConfig::tiny(Mechanism::LightConv, 2, 12, 8, 20);
        assert!(cfg.validate().is_err());
        cfg.heads = 6;
        cfg.validate().unwrap();
    }

    #[test]
    fn schedule_length_must_match() {
        let mut cfg = ModelConfig::tiny(Mechanism::LightConv, 2, 8, 2, 20);
        cfg.encoder_kernels.push(15);
        assert!(cfg.validate().is_err());
    }
}
