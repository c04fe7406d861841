//! Dot-product attention and its category-conditioned (QKCV) variants.
//!
//! QKCV modulates the keys with a static embedding `C` before scoring:
//!
//! | variant | keys                 | divisor     |
//! |---------|----------------------|-------------|
//! | vanilla | `K`                  | `√d_k`      |
//! | v1      | `K ⊙ GRN(C)`         | `√d_k`      |
//! | v2      | `K ⊙ σ(GRN(C))`      | `√d_k`      |
//! | v3      | `K + GRN(C)`         | `√(2·d_k)`  |
//!
//! Layouts: `Q, K, V, C` enter the QKCV functions as `[B, L, H, D]`;
//! [`dot_product_attention`] works on `[B, H, L, D]`. Scores are always
//! `[B, H, L_q, L_k]`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::csvio::fmt_f64;
use crate::error::{Error, Result};
use crate::nn::{Binding, Linear, ParamBuilder, ParamStore};
use crate::numeric::{Tensor, Var};
use crate::static_encoder::{expand_static, Grn};

/// Init-time deviation accepted by the v2 identity modulation: `σ(b) = 1 − ε`.
pub const V2_IDENTITY_EPS: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Vanilla,
    V1,
    V2,
    V3,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Vanilla, Variant::V1, Variant::V2, Variant::V3];
    pub const QKCV: [Variant; 3] = [Variant::V1, Variant::V2, Variant::V3];

    pub fn divisor(self, d_k: usize) -> f64 {
        match self {
            Variant::V3 => (2.0 * d_k as f64).sqrt(),
            _ => (d_k as f64).sqrt(),
        }
    }

    pub fn uses_category(self) -> bool {
        self != Variant::Vanilla
    }

    pub fn modulation_mode(self) -> Option<ModulationMode> {
        match self {
            Variant::Vanilla => None,
            Variant::V1 | Variant::V2 => Some(ModulationMode::Multiplicative),
            Variant::V3 => Some(ModulationMode::Additive),
        }
    }

    /// Constant combiner output that leaves the keys (nearly) untouched.
    pub fn identity_grn_output(self) -> f64 {
        match self {
            Variant::Vanilla | Variant::V3 => 0.0,
            Variant::V1 => 1.0,
            Variant::V2 => ((1.0 - V2_IDENTITY_EPS) / V2_IDENTITY_EPS).ln(),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Vanilla => "vanilla",
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::V3 => "v3",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" => Ok(Variant::Vanilla),
            "v1" => Ok(Variant::V1),
            "v2" => Ok(Variant::V2),
            "v3" => Ok(Variant::V3),
            other => Err(Error::Contract(format!("unknown attention variant `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub variant: Variant,
    pub heads: usize,
    pub head_dim: usize,
    pub causal_mask: bool,
}

impl AttentionConfig {
    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn d_k(&self) -> usize {
        self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.head_dim == 0 {
            return Err(Error::Config("heads and head_dim must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModulationMode {
    Multiplicative,
    Additive,
}

/// The operand combined with `K`: `GRN(C)`, `σ(GRN(C))` or `GRN(C)`.
#[derive(Clone, Debug)]
pub struct Modulation {
    pub mode: ModulationMode,
    pub values: Tensor,
}

impl Modulation {
    /// Long-format CSV: `index,value` over the flattened `[B, L, H, D]` tensor.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_long_csv(&self.values, out)
    }
}

/// Testing hook that bypasses the learned combiner GRN.
#[derive(Clone, Debug)]
pub enum Injection {
    /// Replaces the final modulation operand, used verbatim.
    Modulation(Tensor),
    /// Replaces `GRN(C)` only; the variant's activation is still applied.
    GrnOutput(Tensor),
}

/// Post-softmax attention weights `[B, H, L_q, L_k]`.
#[derive(Clone, Debug)]
pub struct ScoreMatrix {
    pub values: Tensor,
}

impl ScoreMatrix {
    /// Validates row-stochasticity (±`tol`), nonnegativity and, if `causal`,
    /// that no position attends to the future.
    pub fn new(values: Tensor, causal: bool, tol: f64) -> Result<Self> {
        if values.rank() != 4 {
            return Err(Error::dim("score_matrix", format!("expected rank 4, got {:?}", values.shape())));
        }
        let s = ScoreMatrix { values };
        let err = s.max_row_error();
        if err > tol {
            return Err(Error::Contract(format!("score row sums deviate from 1 by {err:e}")));
        }
        if s.values.data().iter().any(|&a| a < 0.0) {
            return Err(Error::Contract("negative attention weight".into()));
        }
        if causal {
            let (lq, lk) = (s.values.shape()[2], s.values.shape()[3]);
            for (r, row) in s.values.data().chunks(lk).enumerate() {
                let i = r % lq;
                if row[i + 1..].iter().any(|&a| a != 0.0) {
                    return Err(Error::Contract(format!("causal row {i} attends to the future")));
                }
            }
        }
        Ok(s)
    }

    pub fn max_row_error(&self) -> f64 {
        let lk = self.values.shape()[3];
        self.values
            .data()
            .chunks(lk)
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_long_csv(&self.values, out)
    }
}

fn write_long_csv<W: Write>(t: &Tensor, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["index", "value"])?;
    for (i, v) in t.data().iter().enumerate() {
        w.write_record([i.to_string(), fmt_f64(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// `mask[i·L_k + j]` is true where query `i` may not see key `j > i`.
pub fn causal_mask(lq: usize, lk: usize) -> Vec<bool> {
    (0..lq).flat_map(|i| (0..lk).map(move |j| j > i)).collect()
}

pub struct AttentionOutput<'t> {
    pub output: Var<'t>,
    /// Post-softmax weights `[B, H, L_q, L_k]`.
    pub scores: Var<'t>,
    /// Scaled (and masked) pre-softmax logits.
    pub logits: Var<'t>,
    /// Modulation operand in `[B, L, H, D]`, for QKCV variants.
    pub modulation: Option<Var<'t>>,
}

fn attend<'t>(
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    divisor: f64,
    mask: Option<&[bool]>,
    dropout: Option<&Tensor>,
) -> Result<AttentionOutput<'t>> {
    let (qs, ks, vs) = (q.shape(), k.shape(), v.shape());
    let ok = qs.len() == 4
        && ks.len() == 4
        && vs.len() == 4
        && qs[..2] == ks[..2]
        && ks[..3] == vs[..3]
        && qs[3] == ks[3];
    if !ok {
        return Err(Error::dim(
            "attention",
            format!("Q {:?}, K {:?}, V {:?} (expected [B,H,L,D] with shared D)", qs, ks, vs),
        ));
    }
    let mut logits = q.bmm(k.transpose(2, 3)?)?.scale(1.0 / divisor)?;
    if let Some(m) = mask {
        logits = logits.masked_fill(m, &[qs[2], ks[2]], f64::NEG_INFINITY)?;
    }
    let scores = logits.softmax()?;
    let weights = match dropout {
        Some(keep) => scores.mul(q.tape().constant(keep.clone()))?,
        None => scores,
    };
    Ok(AttentionOutput {
        output: weights.bmm(v)?,
        scores,
        logits,
        modulation: None,
    })
}

/// `softmax(QKᵀ/√d_k)V` on `[B, H, L, D]` inputs.
pub fn dot_product_attention<'t>(
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    mask: Option<&[bool]>,
) -> Result<AttentionOutput<'t>> {
    let d = *q.shape().last().unwrap_or(&1);
    attend(q, k, v, (d as f64).sqrt(), mask, None)
}

/// Combine keys with the category embedding. Both are `[B, L, H, D]`.
///
/// Returns the modulated keys, the score divisor and the modulation operand.
/// `K` itself is never modified.
pub fn combine_key_category<'t>(
    k: Var<'t>,
    c: Var<'t>,
    variant: Variant,
    grn: Option<(&Grn, &Binding<'t>)>,
    inject: Option<&Injection>,
) -> Result<(Var<'t>, f64, Var<'t>)> {
    let ks = k.shape();
    if ks.len() != 4 || c.shape() != ks {
        return Err(Error::dim(
            "combine_key_category",
            format!("K {:?} and C {:?} must be congruent [B,L,H,D]", ks, c.shape()),
        ));
    }
    let mode = variant
        .modulation_mode()
        .ok_or_else(|| Error::Contract("vanilla attention has no key/category combiner".into()))?;
    let tape = k.tape();
    let constant = |t: &Tensor| -> Result<Var<'t>> {
        if t.shape() != ks.as_slice() {
            return Err(Error::dim(
                "combine_key_category",
                format!("injected modulation {:?} vs K {:?}", t.shape(), ks),
            ));
        }
        Ok(tape.constant(t.clone()))
    };
    let grn_out = |c: Var<'t>| -> Result<Var<'t>> {
        let (g, p) = grn.ok_or_else(|| {
            Error::Contract("QKCV variant needs combiner GRN weights or an injection".into())
        })?;
        let e = ks[2] * ks[3];
        g.forward(p, c.reshape(&[ks[0], ks[1], e])?, None)?.reshape(&ks)
    };
    let activate = |g: Var<'t>| if variant == Variant::V2 { g.sigmoid() } else { Ok(g) };
    let modulation = match inject {
        Some(Injection::Modulation(t)) => constant(t)?,
        Some(Injection::GrnOutput(t)) => activate(constant(t)?)?,
        None => activate(grn_out(c)?)?,
    };
    let k_mod = match mode {
        ModulationMode::Multiplicative => k.mul(modulation)?,
        ModulationMode::Additive => k.add(modulation)?,
    };
    Ok((k_mod, variant.divisor(ks[3]), modulation))
}

/// Optional pieces of a QKCV call.
#[derive(Default, Clone, Copy)]
pub struct QkcvOptions<'a, 't> {
    pub grn: Option<(&'a Grn, &'a Binding<'t>)>,
    pub mask: Option<&'a [bool]>,
    pub inject: Option<&'a Injection>,
    /// Keep-mask (already scaled by `1/(1−p)`) applied to the attention weights.
    pub dropout: Option<&'a Tensor>,
}

/// QKCV attention on `[B, L, H, D]` inputs; output is `[B, L, H, D]`.
pub fn qkcv_attention<'t>(
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    c: Option<Var<'t>>,
    config: &AttentionConfig,
    opts: QkcvOptions<'_, 't>,
) -> Result<AttentionOutput<'t>> {
    let (k_used, divisor, modulation) = if config.variant.uses_category() {
        let c = c.ok_or_else(|| {
            Error::Contract(format!("variant {} requires the category embedding C", config.variant))
        })?;
        let (km, d, m) = combine_key_category(k, c, config.variant, opts.grn, opts.inject)?;
        (km, d, Some(m))
    } else {
        (k, config.variant.divisor(config.d_k()), None)
    };
    let to_heads = |x: Var<'t>| x.transpose(1, 2);
    let mut out = attend(
        to_heads(q)?,
        to_heads(k_used)?,
        to_heads(v)?,
        divisor,
        opts.mask,
        opts.dropout,
    )?;
    out.output = out.output.transpose(1, 2)?;
    out.modulation = modulation;
    Ok(out)
}

/// Multi-head attention block with an optional category combiner GRN.
#[derive(Clone, Debug)]
pub struct MultiHeadQkcv {
    pub config: AttentionConfig,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    pub combiner: Option<Grn>,
}

pub struct MultiHeadOutput<'t> {
    /// `[B, L, E]`
    pub y: Var<'t>,
    pub attention: AttentionOutput<'t>,
}

impl MultiHeadQkcv {
    pub fn new(b: &mut ParamBuilder<'_>, config: AttentionConfig, grn_hidden: usize) -> Result<Self> {
        config.validate()?;
        let e = config.width();
        Ok(MultiHeadQkcv {
            config,
            wq: b.linear("wq", e, e)?,
            wk: b.linear("wk", e, e)?,
            wv: b.linear("wv", e, e)?,
            wo: b.linear("wo", e, e)?,
            combiner: if config.variant.uses_category() {
                Some(Grn::new(b, "combiner", e, e, grn_hidden, None)?)
            } else {
                None
            },
        })
    }

    /// Make the combiner emit the variant's identity modulation for every
    /// input: the output LayerNorm gain is zeroed and its bias holds the
    /// constant.
    pub fn set_identity_modulation(&self, store: &mut ParamStore) {
        if let Some(g) = &self.combiner {
            let c = self.config.variant.identity_grn_output();
            store.data_mut(g.norm.gain).iter_mut().for_each(|v| *v = 0.0);
            store.data_mut(g.norm.bias).iter_mut().for_each(|v| *v = c);
        }
    }

    pub fn forward<'t>(
        &self,
        p: &Binding<'t>,
        x: Var<'t>,
        c_entity: Option<Var<'t>>,
        dropout: Option<&Tensor>,
    ) -> Result<MultiHeadOutput<'t>> {
        let xs = x.shape();
        let (h, d) = (self.config.heads, self.config.head_dim);
        let e = self.config.width();
        if xs.len() != 3 || xs[2] != e {
            return Err(Error::Config(format!(
                "input {:?} does not match width E = H×D = {h}×{d}",
                xs
            )));
        }
        let (batch, len) = (xs[0], xs[1]);
        let split = |lin: &Linear| lin.forward(p, x)?.reshape(&[batch, len, h, d]);
        let (q, k, v) = (split(&self.wq)?, split(&self.wk)?, split(&self.wv)?);
        let c = match (self.config.variant.uses_category(), c_entity) {
            (true, Some(ce)) => Some(expand_static(ce, len, h, d)?),
            (true, None) => {
                return Err(Error::Contract(format!(
                    "variant {} requires a static embedding",
                    self.config.variant
                )))
            }
            (false, _) => None,
        };
        let mask = self.config.causal_mask.then(|| causal_mask(len, len));
        let opts = QkcvOptions {
            grn: self.combiner.as_ref().map(|g| (g, p)),
            mask: mask.as_deref(),
            inject: None,
            dropout,
        };
        let attention = qkcv_attention(q, k, v, c, &self.config, opts)?;
        let merged = attention.output.reshape(&[batch, len, e])?;
        Ok(MultiHeadOutput {
            y: self.wo.forward(p, merged)?,
            attention,
        })
    }
}
