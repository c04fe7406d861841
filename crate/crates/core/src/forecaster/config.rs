use serde::{Deserialize, Serialize};

use crate::attention::Variant;
use crate::error::{Error, Result};

/// How the static embedding reaches the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    None,
    Sce,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticInjection {
    /// `C` modulates the attention keys.
    Attention,
    /// `C` is concatenated to the history and squeezed back to `L_in` by an MLP.
    InputCompressor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_len: usize,
    pub horizon: usize,
    pub patch_len: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub n_layers: usize,
    pub ff_hidden: usize,
    pub variant: Variant,
    pub quantiles: Vec<f64>,
    pub dropout: f64,
    pub causal_mask: bool,
    pub encoder: EncoderKind,
    pub injection: StaticInjection,
    pub static_names: Vec<String>,
    pub cardinalities: Vec<usize>,
    pub grn_hidden: usize,
    pub compressor_hidden: usize,
    /// Per-layer QKCV switch; empty means every layer.
    pub qkcv_layers: Vec<bool>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_len: 24,
            horizon: 8,
            patch_len: 4,
            heads: 2,
            head_dim: 8,
            n_layers: 2,
            ff_hidden: 32,
            variant: Variant::Vanilla,
            quantiles: vec![0.5, 0.9],
            dropout: 0.1,
            causal_mask: false,
            encoder: EncoderKind::None,
            injection: StaticInjection::Attention,
            static_names: Vec::new(),
            cardinalities: Vec::new(),
            grn_hidden: 8,
            compressor_hidden: 32,
            qkcv_layers: Vec::new(),
        }
    }
}

impl ModelConfig {
    /// Model width `E = H × D`.
    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Number of patch tokens `N = L_in / P`.
    pub fn n_patches(&self) -> usize {
        self.input_len / self.patch_len.max(1)
    }

    pub fn qkcv_in_layer(&self, layer: usize) -> bool {
        self.variant.uses_category() && self.qkcv_layers.get(layer).copied().unwrap_or(true)
    }

    pub fn median_index(&self) -> Option<usize> {
        self.quantiles.iter().position(|&q| q == 0.5)
    }

    pub fn quantile_index(&self, q: f64) -> Option<usize> {
        self.quantiles.iter().position(|&x| x == q)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_len == 0 || self.horizon == 0 || self.patch_len == 0 {
            return bad("input_len, horizon and patch_len must be positive".into());
        }
        if self.input_len % self.patch_len != 0 {
            return bad(format!(
                "input_len {} is not a multiple of patch_len {}",
                self.input_len, self.patch_len
            ));
        }
        if self.heads == 0 || self.head_dim == 0 || self.ff_hidden == 0 {
            return bad("heads, head_dim and ff_hidden must be positive".into());
        }
        if self.n_layers == 0 {
            return bad("n_layers must be at least 1".into());
        }
        if self.quantiles.is_empty()
            || self.quantiles.iter().any(|&q| !(q > 0.0 && q < 1.0))
            || self.quantiles.windows(2).any(|w| w[0] >= w[1])
        {
            return bad(format!(
                "quantiles {:?} must be strictly increasing in (0, 1)",
                self.quantiles
            ));
        }
        if self.median_index().is_none() {
            return bad("quantiles must include 0.5".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !self.qkcv_layers.is_empty() && self.qkcv_layers.len() != self.n_layers {
            return bad(format!(
                "qkcv_layers has {} entries for {} layers",
                self.qkcv_layers.len(),
                self.n_layers
            ));
        }
        match (self.encoder, self.injection) {
            (EncoderKind::None, _) if self.variant.uses_category() => {
                return bad(format!("variant {} needs a static encoder", self.variant))
            }
            (EncoderKind::None, StaticInjection::InputCompressor) => {
                return bad("the input compressor needs a static encoder".into())
            }
            (_, StaticInjection::InputCompressor) if self.variant.uses_category() => {
                return bad("the input compressor replaces QKCV; use variant = vanilla".into())
            }
            (EncoderKind::Sce | EncoderKind::Mlp, StaticInjection::Attention)
                if !self.variant.uses_category() =>
            {
                return bad("a static encoder with vanilla attention has no effect".into())
            }
            _ => {}
        }
        if self.encoder != EncoderKind::None {
            if self.static_names.is_empty() || self.static_names.len() != self.cardinalities.len() {
                return bad("static_names and cardinalities must be non-empty and aligned".into());
            }
            if self.grn_hidden == 0 || self.compressor_hidden == 0 {
                return bad("grn_hidden and compressor_hidden must be positive".into());
            }
        }
        Ok(())
    }
}
