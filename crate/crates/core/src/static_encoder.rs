//! Static categorical features → entity embedding `C`.
//!
//! The SCE path embeds each variable, refines it with a per-variable GRN,
//! mixes the results with softmax selection weights produced by a Variable
//! Selection Network (a GRN over the flattened embeddings) and finishes with
//! a fusion GRN. The MLP path is the ablation: concatenated embeddings
//! through two affine layers.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::csvio::fmt_f64;
use crate::error::{Error, Result};
use crate::nn::{Binding, Init, LayerNorm, Linear, ParamBuilder, ParamId, ParamStore};
use crate::numeric::{concat, Tensor, Var};

/// Gated Residual Network:
/// `LayerNorm(skip(a) + GLU(W₁·ELU(W₂a + W₃c + b₂) + b₁))` with
/// `GLU(x) = σ(W₄x + b₄) ⊙ (W₅x + b₅)`. `skip` is the identity when input
/// and output widths agree, a learned affine map otherwise.
#[derive(Clone, Debug)]
pub struct Grn {
    pub input: usize,
    pub output: usize,
    pub hidden: usize,
    pub w2: Linear,
    pub w3: Option<(ParamId, usize)>,
    pub w1: Linear,
    pub gate: Linear,
    pub value: Linear,
    pub skip: Option<Linear>,
    pub norm: LayerNorm,
}

impl Grn {
    pub fn new(
        b: &mut ParamBuilder<'_>,
        name: &str,
        input: usize,
        output: usize,
        hidden: usize,
        context: Option<usize>,
    ) -> Result<Self> {
        let mut b = b.sub(name);
        let w2 = b.linear("w2", input, hidden)?;
        let w3 = match context {
            Some(c) => Some((
                b.tensor("w3.weight", &[c, hidden], Init::Glorot { fan_in: c, fan_out: hidden })?,
                c,
            )),
            None => None,
        };
        let w1 = b.linear("w1", hidden, hidden)?;
        let gate = b.linear("gate", hidden, output)?;
        let value = b.linear("value", hidden, output)?;
        let skip = if input != output {
            Some(b.linear("skip", input, output)?)
        } else {
            None
        };
        let norm = b.layer_norm("norm", output)?;
        Ok(Grn {
            input,
            output,
            hidden,
            w2,
            w3,
            w1,
            gate,
            value,
            skip,
            norm,
        })
    }

    pub fn forward<'t>(
        &self,
        p: &Binding<'t>,
        a: Var<'t>,
        context: Option<Var<'t>>,
    ) -> Result<Var<'t>> {
        let shape = a.shape();
        if shape.last() != Some(&self.input) {
            return Err(Error::dim(
                "grn",
                format!("expected last axis {}, got input {:?}", self.input, shape),
            ));
        }
        let mut h = self.w2.forward(p, a)?;
        match (context, self.w3) {
            (None, _) => {}
            (Some(c), Some((w3, width))) => {
                let cs = c.shape();
                if cs.last() != Some(&width) || cs[..cs.len() - 1] != shape[..shape.len() - 1] {
                    return Err(Error::dim(
                        "grn",
                        format!("context {:?} does not match input {:?}", cs, shape),
                    ));
                }
                let c2 = c.reshape(&[cs.iter().product::<usize>() / width, width])?;
                let mut hs = shape.clone();
                *hs.last_mut().unwrap() = self.hidden;
                h = h.add(c2.matmul(p.get(w3))?.reshape(&hs)?)?;
            }
            (Some(_), None) => {
                return Err(Error::Config("GRN built without context weights got a context".into()))
            }
        }
        let eta = self.w1.forward(p, h.elu()?)?;
        let glu = self
            .gate
            .forward(p, eta)?
            .sigmoid()?
            .mul(self.value.forward(p, eta)?)?;
        let skip = match &self.skip {
            Some(l) => l.forward(p, a)?,
            None => a,
        };
        self.norm.forward(p, skip.add(glu)?)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.w2.weight, self.w2.bias];
        if let Some((w3, _)) = self.w3 {
            ids.push(w3);
        }
        for l in [&self.w1, &self.gate, &self.value] {
            ids.extend([l.weight, l.bias]);
        }
        if let Some(s) = &self.skip {
            ids.extend([s.weight, s.bias]);
        }
        ids.extend([self.norm.gain, self.norm.bias]);
        ids
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderMode {
    Sce,
    Mlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticEncoderConfig {
    pub mode: EncoderMode,
    pub names: Vec<String>,
    /// Declared number of known categories per variable. Tables get one
    /// extra row: code `cardinality` is the reserved unknown-category slot.
    pub cardinalities: Vec<usize>,
    /// Output width `E` (also the per-variable embedding width).
    pub width: usize,
    pub grn_hidden: usize,
}

impl StaticEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.names.is_empty() || self.names.len() != self.cardinalities.len() {
            return Err(Error::Config(format!(
                "{} static variable names for {} cardinalities",
                self.names.len(),
                self.cardinalities.len()
            )));
        }
        if self.cardinalities.contains(&0) || self.width == 0 || self.grn_hidden == 0 {
            return Err(Error::Config("static encoder widths and cardinalities must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
enum Body {
    Sce {
        var_grns: Vec<Grn>,
        selection: Grn,
        fusion: Grn,
    },
    Mlp {
        hidden: Linear,
        out: Linear,
    },
}

#[derive(Clone, Debug)]
pub struct StaticEncoder {
    pub config: StaticEncoderConfig,
    tables: Vec<ParamId>,
    body: Body,
}

/// Output of an encoder pass.
pub struct Encoded<'t> {
    /// `[B, E]`
    pub c_entity: Var<'t>,
    /// `[B, F]` VSN selection weights (SCE only).
    pub weights: Option<Var<'t>>,
}

impl StaticEncoder {
    pub fn new(config: StaticEncoderConfig, b: &mut ParamBuilder<'_>) -> Result<Self> {
        config.validate()?;
        let e = config.width;
        let f = config.cardinalities.len();
        let tables = config
            .cardinalities
            .iter()
            .enumerate()
            .map(|(i, &card)| {
                let rows = card + 1;
                b.tensor(
                    &format!("embed.{i}"),
                    &[rows, e],
                    Init::Glorot { fan_in: rows, fan_out: e },
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let body = match config.mode {
            EncoderMode::Sce => Body::Sce {
                var_grns: (0..f)
                    .map(|i| Grn::new(b, &format!("var_grn.{i}"), e, e, config.grn_hidden, None))
                    .collect::<Result<_>>()?,
                selection: Grn::new(b, "selection", f * e, f, config.grn_hidden, None)?,
                fusion: Grn::new(b, "fusion", e, e, config.grn_hidden, None)?,
            },
            EncoderMode::Mlp => Body::Mlp {
                hidden: b.linear("mlp.hidden", f * e, e)?,
                out: b.linear("mlp.out", e, e)?,
            },
        };
        Ok(StaticEncoder {
            config,
            tables,
            body,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.tables.len()
    }

    pub fn table(&self, var: usize) -> ParamId {
        self.tables[var]
    }

    pub fn validate_codes(&self, codes: &[Vec<usize>]) -> Result<()> {
        if codes.is_empty() {
            return Err(Error::Contract("empty static batch".into()));
        }
        for row in codes {
            if row.len() != self.n_vars() {
                return Err(Error::Data(format!(
                    "expected {} static codes per entity, got {}",
                    self.n_vars(),
                    row.len()
                )));
            }
            for (f, (&code, &card)) in row.iter().zip(&self.config.cardinalities).enumerate() {
                if code > card {
                    return Err(Error::Data(format!(
                        "static variable `{}`: code {code} outside 0..={card}",
                        self.config.names[f]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Per-variable embeddings, each `[B, E]`.
    fn embed<'t>(&self, p: &Binding<'t>, codes: &[Vec<usize>]) -> Result<Vec<Var<'t>>> {
        self.validate_codes(codes)?;
        let batch = codes.len();
        let tape = p.get(self.tables[0]).tape();
        self.tables
            .iter()
            .zip(&self.config.cardinalities)
            .enumerate()
            .map(|(f, (&table, &card))| {
                let rows = card + 1;
                let mut onehot = Tensor::zeros(&[batch, rows]);
                for (b, row) in codes.iter().enumerate() {
                    onehot.data_mut()[b * rows + row[f]] = 1.0;
                }
                tape.constant(onehot).matmul(p.get(table))
            })
            .collect()
    }

    pub fn encode<'t>(&self, p: &Binding<'t>, codes: &[Vec<usize>]) -> Result<Encoded<'t>> {
        match self.config.mode {
            EncoderMode::Sce => {
                let (c_entity, weights) = self.static_covariate_encode(p, codes)?;
                Ok(Encoded {
                    c_entity,
                    weights: Some(weights),
                })
            }
            EncoderMode::Mlp => Ok(Encoded {
                c_entity: self.mlp_encode(p, codes)?,
                weights: None,
            }),
        }
    }

    /// SCE path. Returns `C_entity [B, E]` and VSN weights `[B, F]`.
    pub fn static_covariate_encode<'t>(
        &self,
        p: &Binding<'t>,
        codes: &[Vec<usize>],
    ) -> Result<(Var<'t>, Var<'t>)> {
        let Body::Sce {
            var_grns,
            selection,
            fusion,
        } = &self.body
        else {
            return Err(Error::Contract("static_covariate_encode on an MLP encoder".into()));
        };
        let embeds = self.embed(p, codes)?;
        let (batch, e, f) = (codes.len(), self.config.width, self.n_vars());
        let weights = selection.forward(p, concat(&embeds, 1)?, None)?.softmax()?;
        let refined = embeds
            .iter()
            .zip(var_grns)
            .map(|(&x, g)| g.forward(p, x, None)?.reshape(&[batch, 1, e]))
            .collect::<Result<Vec<_>>>()?;
        let mixed = concat(&refined, 1)?
            .mul(weights.reshape(&[batch, f, 1])?)?
            .sum(1)?;
        Ok((fusion.forward(p, mixed, None)?, weights))
    }

    pub fn mlp_encode<'t>(&self, p: &Binding<'t>, codes: &[Vec<usize>]) -> Result<Var<'t>> {
        let Body::Mlp { hidden, out } = &self.body else {
            return Err(Error::Contract("mlp_encode on an SCE encoder".into()));
        };
        let embeds = self.embed(p, codes)?;
        let h = hidden.forward(p, concat(&embeds, 1)?)?.elu()?;
        out.forward(p, h)
    }
}

/// Repeat `C_entity [B, E]` over `len` positions and split `E` into heads:
/// `result[b, l, h, d] = C_entity[b, h·D + d]`.
pub fn expand_static<'t>(
    c_entity: Var<'t>,
    len: usize,
    heads: usize,
    head_dim: usize,
) -> Result<Var<'t>> {
    let shape = c_entity.shape();
    if shape.len() != 2 {
        return Err(Error::dim("expand_static", format!("expected [B, E], got {:?}", shape)));
    }
    let (batch, e) = (shape[0], shape[1]);
    if e != heads * head_dim {
        return Err(Error::Config(format!(
            "embedding width {e} != heads {heads} × head_dim {head_dim}"
        )));
    }
    c_entity
        .reshape(&[batch, 1, e])?
        .broadcast_to(&[batch, len, e])?
        .reshape(&[batch, len, heads, head_dim])
}

/// Mean VSN selection weight per static variable.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceReport {
    pub names: Vec<String>,
    pub weights: Vec<f64>,
}

impl ImportanceReport {
    pub fn argmax(&self) -> usize {
        self.weights
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &w)| if w > best.1 { (i, w) } else { best })
            .0
    }

    /// CSV with columns `variable_name, mean_weight`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["variable_name", "mean_weight"])?;
        for (n, v) in self.names.iter().zip(&self.weights) {
            w.write_record([n.as_str(), &fmt_f64(*v)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Average the VSN weights of every sample in `samples`.
pub fn feature_importance(
    encoder: &StaticEncoder,
    params: &ParamStore,
    samples: &[Vec<usize>],
) -> Result<ImportanceReport> {
    if samples.is_empty() {
        return Err(Error::Contract("feature importance over an empty dataset".into()));
    }
    if encoder.config.mode != EncoderMode::Sce {
        return Err(Error::Contract("feature importance requires the SCE encoder".into()));
    }
    let f = encoder.n_vars();
    let mut totals = vec![0.0; f];
    for chunk in samples.chunks(256) {
        let tape = crate::numeric::Tape::new();
        let p = params.bind_frozen(&tape);
        let (_, weights) = encoder.static_covariate_encode(&p, chunk)?;
        for row in weights.value().data().chunks(f) {
            totals.iter_mut().zip(row).for_each(|(t, w)| *t += w);
        }
    }
    Ok(ImportanceReport {
        names: encoder.config.names.clone(),
        weights: totals.into_iter().map(|t| t / samples.len() as f64).collect(),
    })
}
