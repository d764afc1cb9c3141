use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::NUM_RESERVED;

/// How the text decoder consumes image features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderStyle {
    /// Image and text tokens share one sequence under the seq2seq mask.
    #[default]
    SelfAttentionConcat,
    /// Text-only self-attention plus cross-attention to fixed image features.
    CrossAttention,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub patch_size: usize,
    pub image_size: usize,
    pub channels: usize,
    pub vocab_size: usize,
    /// Longest text input including BOS.
    pub max_text_len: usize,
    pub max_frames: usize,
    pub mlp_ratio: usize,
    pub decoder_style: DecoderStyle,
    pub tie_embeddings: bool,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 128,
            encoder_layers: 2,
            decoder_layers: 6,
            heads: 4,
            patch_size: 4,
            image_size: 12,
            channels: 3,
            vocab_size: 32,
            max_text_len: 24,
            max_frames: 6,
            mlp_ratio: 4,
            decoder_style: DecoderStyle::SelfAttentionConcat,
            tie_embeddings: true,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        for (name, v) in [
            ("hidden_dim", self.hidden_dim),
            ("heads", self.heads),
            ("patch_size", self.patch_size),
            ("image_size", self.image_size),
            ("channels", self.channels),
            ("max_text_len", self.max_text_len),
            ("max_frames", self.max_frames),
            ("mlp_ratio", self.mlp_ratio),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.hidden_dim % self.heads != 0 {
            return bad(format!(
                "hidden_dim {} is not divisible by heads {}",
                self.hidden_dim, self.heads
            ));
        }
        if self.image_size % self.patch_size != 0 {
            return bad(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.vocab_size <= NUM_RESERVED {
            return bad(format!(
                "vocab_size {} leaves no room beyond the {NUM_RESERVED} reserved tokens",
                self.vocab_size
            ));
        }
        if !(self.layer_norm_eps > 0.0 && self.layer_norm_eps.is_finite()) {
            return bad(format!("layer_norm_eps must be > 0, got {}", self.layer_norm_eps));
        }
        Ok(())
    }

    pub fn tokens_per_frame(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }

    /// Parameter count implied by the configuration.
    ///
    /// With `D = hidden_dim`, `F = mlp_ratio·D` and `V = vocab_size`, a
    /// transformer block holds two layer norms (`4D`), four `D×D` attention
    /// projections with bias (`4D² + 4D`) and a two-layer MLP
    /// (`2DF + F + D`). Cross-attention blocks add one more norm and one more
    /// attention unit. On top of the blocks:
    ///
    /// * encoder: patch embedding `P·D + D` (`P` = patch pixels), positions
    ///   `n_patches·D`, projection `D² + D`, projection norm `2D`;
    /// * temporal embedding `max_frames·D`;
    /// * decoder: token embedding `V·D`, positions `max_text_len·D`, input and
    ///   final norms `4D`, output bias `V`, plus an untied output matrix `D·V`.
    pub fn param_count(&self) -> usize {
        let d = self.hidden_dim;
        let f = self.mlp_ratio * d;
        let v = self.vocab_size;
        let norm = 2 * d;
        let attn = 4 * d * d + 4 * d;
        let mlp = 2 * d * f + f + d;
        let block = 2 * norm + attn + mlp;
        let dec_block = match self.decoder_style {
            DecoderStyle::SelfAttentionConcat => block,
            DecoderStyle::CrossAttention => block + norm + attn,
        };
        let encoder = self.patch_dim() * d
            + d
            + self.tokens_per_frame() * d
            + self.encoder_layers * block
            + d * d
            + d
            + norm;
        let temporal = self.max_frames * d;
        let output = v + if self.tie_embeddings { 0 } else { d * v };
        let decoder =
            v * d + self.max_text_len * d + 2 * norm + self.decoder_layers * dec_block + output;
        encoder + temporal + decoder
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_catches_indivisible_shapes() {
        let ok = ModelConfig::default();
        assert!(ok.validate().is_ok());
        let bad = ModelConfig {
            heads: 3,
            ..ok.clone()
        };
        assert!(matches!(bad.validate(), Err(Error::Validation(_))));
        let bad = ModelConfig {
            patch_size: 5,
            ..ok.clone()
        };
        assert!(bad.validate().is_err());
        let bad = ModelConfig {
            vocab_size: 4,
            ..ok
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn parses_from_toml_with_defaults() {
        let cfg: ModelConfig =
            toml::from_str("hidden_dim = 64\ndecoder_style = \"cross-attention\"").unwrap();
        assert_eq!(cfg.hidden_dim, 64);
        assert_eq!(cfg.decoder_style, DecoderStyle::CrossAttention);
        assert_eq!(cfg.decoder_layers, 6);
        assert!(toml::from_str::<ModelConfig>("hiden_dim = 3").is_err());
    }
}
