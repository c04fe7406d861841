//! Patch-token transformer forecaster hosting QKCV attention.
//!
//! ```text
//! history [B, L_in] ──(compressor?)──▶ patches [B, N, P] ──Linear──▶ + pos ─▶ x [B, N, E]
//! x ─▶ n_layers × { x = LN(x + MHA(x, C)); x = LN(x + FFN(x)) } ─▶ flatten ─▶ head ─▶ [B, L_out, Q]
//! ```
//!
//! # Parameter count
//!
//! With `E = H·D`, `N = L_in / P`, `Q` quantiles, FFN width `M`, GRN hidden
//! width `h`, `F` static variables with cardinalities `k_f`, and `Λ` the
//! number of layers with QKCV enabled:
//!
//! ```text
//! backbone   = (P·E + E) + N·E
//!            + n_layers · (4·(E² + E) + 4·E + (E·M + M) + (M·E + E))
//!            + (N·E·L_out·Q + L_out·Q)
//! combiner   = Λ · g(E, h)                  g(n, h) = 3·n·h + h² + 2·h + 4·n
//! tables     = Σ_f (k_f + 1)·E
//! sce        = tables + F·g(E, h) + g(E, h)
//!            + (F·E·h + h² + 2·h + 2·h·F + F²·E + 5·F)          selection GRN
//! mlp        = tables + (F·E·E + E) + (E² + E)
//! compressor = encoder + (L_in + E)·c + c + c·L_in + L_in       c = compressor_hidden
//! ```
//!
//! `g(n, h)` is a GRN with equal input and output width `n` and no context.
//! The selection GRN maps `F·E → F` and therefore carries a skip projection.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionConfig, AttentionOutput, MultiHeadQkcv, Variant};
use crate::error::{Error, Result};
use crate::nn::{Binding, Init, LayerNorm, Linear, ParamBuilder, ParamId, ParamStore};
use crate::numeric::{concat, Tensor, Var};
use crate::static_encoder::{EncoderMode, StaticEncoder, StaticEncoderConfig};

use super::config::{EncoderKind, ModelConfig, StaticInjection};

#[derive(Clone, Debug)]
pub struct Block {
    pub attn: MultiHeadQkcv,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct Compressor {
    pub hidden: Linear,
    pub out: Linear,
}

#[derive(Clone, Debug)]
pub struct Forecaster {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: ParamStore,
    pub patch: Linear,
    pub pos: ParamId,
    pub layers: Vec<Block>,
    pub head: Linear,
    pub encoder: Option<StaticEncoder>,
    pub compressor: Option<Compressor>,
}

pub struct ForwardOutput<'t> {
    /// Normalized-scale predictions `[B, L_out, Q]`.
    pub pred: Var<'t>,
    pub attention: Vec<AttentionOutput<'t>>,
    /// `[B, E]`, when an encoder is present.
    pub c_entity: Option<Var<'t>>,
    /// VSN weights `[B, F]` (SCE only).
    pub vsn_weights: Option<Var<'t>>,
}

/// Deterministically initialize a model. Every parameter's initial value
/// depends only on `seed` and its name, so variants built from the same
/// seed share their backbone weights exactly.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Forecaster> {
    config.validate()?;
    let mut params = ParamStore::new();
    let mut b = ParamBuilder::new(&mut params, seed);
    let (e, n) = (config.width(), config.n_patches());
    let patch = b.linear("patch", config.patch_len, e)?;
    let pos = b.tensor("pos", &[n, e], Init::Glorot { fan_in: n, fan_out: e })?;
    let layers = (0..config.n_layers)
        .map(|i| {
            let mut lb = b.sub(&format!("layers.{i}"));
            let variant = if config.qkcv_in_layer(i) {
                config.variant
            } else {
                Variant::Vanilla
            };
            let attn_cfg = AttentionConfig {
                variant,
                heads: config.heads,
                head_dim: config.head_dim,
                causal_mask: config.causal_mask,
            };
            Ok(Block {
                attn: MultiHeadQkcv::new(&mut lb.sub("attn"), attn_cfg, config.grn_hidden)?,
                ln1: lb.layer_norm("ln1", e)?,
                ff1: lb.linear("ff1", e, config.ff_hidden)?,
                ff2: lb.linear("ff2", config.ff_hidden, e)?,
                ln2: lb.layer_norm("ln2", e)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let q = config.quantiles.len();
    let head = b.linear("head", n * e, config.horizon * q)?;
    let encoder = match config.encoder {
        EncoderKind::None => None,
        kind => {
            let enc_cfg = StaticEncoderConfig {
                mode: if kind == EncoderKind::Sce {
                    EncoderMode::Sce
                } else {
                    EncoderMode::Mlp
                },
                names: config.static_names.clone(),
                cardinalities: config.cardinalities.clone(),
                width: e,
                grn_hidden: config.grn_hidden,
            };
            Some(StaticEncoder::new(enc_cfg, &mut b.sub("encoder"))?)
        }
    };
    let compressor = match config.injection {
        StaticInjection::InputCompressor => {
            let mut cb = b.sub("compressor");
            Some(Compressor {
                hidden: cb.linear("hidden", config.input_len + e, config.compressor_hidden)?,
                out: cb.linear("out", config.compressor_hidden, config.input_len)?,
            })
        }
        StaticInjection::Attention => None,
    };
    Ok(Forecaster {
        config: config.clone(),
        seed,
        params,
        patch,
        pos,
        layers,
        head,
        encoder,
        compressor,
    })
}

fn dropout_mask(shape: &[usize], rate: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let keep = 1.0 / (1.0 - rate);
    Tensor::from_fn(shape, |_| if rng.random::<f64>() < rate { 0.0 } else { keep })
}

impl Forecaster {
    /// Forward pass on normalized history `[B, L_in]`. Dropout is active
    /// only when `rng` is given.
    pub fn forward<'t>(
        &self,
        p: &Binding<'t>,
        history: Var<'t>,
        statics: &[Vec<usize>],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput<'t>> {
        let cfg = &self.config;
        let hs = history.shape();
        if hs.len() != 2 || hs[1] != cfg.input_len {
            return Err(Error::dim(
                "forecaster",
                format!("history {:?}, expected [B, {}]", hs, cfg.input_len),
            ));
        }
        let batch = hs[0];
        if self.encoder.is_some() && statics.len() != batch {
            return Err(Error::Data(format!("{} static rows for batch of {batch}", statics.len())));
        }
        let (e, n) = (cfg.width(), cfg.n_patches());
        let rate = cfg.dropout;
        let mut drop = |shape: &[usize]| match rng.as_deref_mut() {
            Some(r) if rate > 0.0 => Some(dropout_mask(shape, rate, r)),
            _ => None,
        };

        let encoded = match &self.encoder {
            Some(enc) => Some(enc.encode(p, statics)?),
            None => None,
        };
        let c_entity = encoded.as_ref().map(|x| x.c_entity);
        let mut series = history;
        if let (Some(comp), Some(c)) = (&self.compressor, c_entity) {
            let h = comp.hidden.forward(p, concat(&[history, c], 1)?)?.elu()?;
            series = comp.out.forward(p, h)?;
        }
        let tokens = series.reshape(&[batch, n, cfg.patch_len])?;
        let mut x = self.patch.forward(p, tokens)?.add(p.get(self.pos))?;

        let attn_c = if self.compressor.is_none() { c_entity } else { None };
        let mut attention = Vec::with_capacity(self.layers.len());
        for block in &self.layers {
            let att_drop = drop(&[batch, cfg.heads, n, n]);
            let out = block.attn.forward(p, x, attn_c, att_drop.as_ref())?;
            x = block.ln1.forward(p, x.add(out.y)?)?;
            let mut ff = block.ff2.forward(p, block.ff1.forward(p, x)?.elu()?)?;
            if let Some(m) = drop(&[batch, n, e]) {
                ff = ff.mul(x.tape().constant(m))?;
            }
            x = block.ln2.forward(p, x.add(ff)?)?;
            attention.push(out.attention);
        }
        let q = cfg.quantiles.len();
        let pred = self
            .head
            .forward(p, x.reshape(&[batch, n * e])?)?
            .reshape(&[batch, cfg.horizon, q])?;
        Ok(ForwardOutput {
            pred,
            attention,
            c_entity,
            vsn_weights: encoded.and_then(|x| x.weights),
        })
    }

    /// Parameter names grouped by the top-level component they belong to.
    pub fn groups(&self) -> BTreeMap<&'static str, Vec<ParamId>> {
        let mut groups: BTreeMap<&'static str, Vec<ParamId>> = BTreeMap::new();
        for (id, name, _) in self.params.iter() {
            groups.entry(param_group(name)).or_default().push(id);
        }
        groups
    }
}

/// Component a parameter belongs to, derived from its name.
pub fn param_group(name: &str) -> &'static str {
    if name.starts_with("patch.") || name == "pos" {
        "patching"
    } else if name.starts_with("head.") {
        "head"
    } else if name.starts_with("encoder.") {
        "encoder"
    } else if name.starts_with("compressor.") {
        "compressor"
    } else if name.starts_with("layers.") && name.contains(".attn.combiner.") {
        "combiner"
    } else if name.starts_with("layers.") {
        "backbone"
    } else {
        "unknown"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tape;

    #[test]
    fn vanilla_has_no_category_path() {
        let m = build_model(&ModelConfig::default(), 0).unwrap();
        let groups = m.groups();
        assert!(!groups.contains_key("encoder"));
        assert!(!groups.contains_key("combiner"));
        assert!(!groups.contains_key("unknown"));
    }

    #[test]
    fn output_shape() {
        let m = build_model(&ModelConfig::default(), 0).unwrap();
        let tape = Tape::new();
        let p = m.params.bind_frozen(&tape);
        let h = tape.constant(Tensor::zeros(&[3, 24]));
        let out = m.forward(&p, h, &[], None).unwrap();
        assert_eq!(out.pred.shape(), vec![3, 8, 2]);
        assert_eq!(out.attention.len(), 2);
    }
}
