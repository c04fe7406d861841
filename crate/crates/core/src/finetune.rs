//! Fine-tuning a frozen pretrained forecaster through the category path.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::Variant;
use crate::csvio::fmt_f64;
use crate::error::{Error, Result};
use crate::forecaster::{
    build_model, checkpoint, evaluate, param_group, train_subset, Adam, EncoderKind, Forecaster,
    MetricsReport, ModelConfig, StaticInjection, TrainConfig, WindowSet,
};
use crate::nn::ParamId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FinetuneMode {
    #[serde(rename = "PL")]
    Pl,
    #[serde(rename = "FP")]
    Fp,
    #[serde(rename = "PL+QKCV")]
    PlQkcv,
    #[serde(rename = "FP+QKCV")]
    FpQkcv,
    #[serde(rename = "compressor-MLP")]
    CompressorMlp,
    #[serde(rename = "compressor-SCE")]
    CompressorSce,
}

impl FinetuneMode {
    pub const ALL: [FinetuneMode; 6] = [
        FinetuneMode::Pl,
        FinetuneMode::Fp,
        FinetuneMode::PlQkcv,
        FinetuneMode::FpQkcv,
        FinetuneMode::CompressorMlp,
        FinetuneMode::CompressorSce,
    ];

    pub fn label(self) -> &'static str {
        match self {
            FinetuneMode::Pl => "PL",
            FinetuneMode::Fp => "FP",
            FinetuneMode::PlQkcv => "PL+QKCV",
            FinetuneMode::FpQkcv => "FP+QKCV",
            FinetuneMode::CompressorMlp => "compressor-MLP",
            FinetuneMode::CompressorSce => "compressor-SCE",
        }
    }

    pub fn uses_qkcv(self) -> bool {
        matches!(self, FinetuneMode::PlQkcv | FinetuneMode::FpQkcv)
    }

    pub fn compressor_encoder(self) -> Option<EncoderKind> {
        match self {
            FinetuneMode::CompressorMlp => Some(EncoderKind::Mlp),
            FinetuneMode::CompressorSce => Some(EncoderKind::Sce),
            _ => None,
        }
    }

    fn trains_group(self, group: &str) -> bool {
        match self {
            FinetuneMode::Fp | FinetuneMode::FpQkcv => true,
            FinetuneMode::Pl | FinetuneMode::PlQkcv => {
                matches!(group, "patching" | "head" | "encoder" | "combiner")
            }
            FinetuneMode::CompressorMlp | FinetuneMode::CompressorSce => {
                matches!(group, "patching" | "head" | "encoder" | "compressor")
            }
        }
    }
}

impl fmt::Display for FinetuneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for FinetuneMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FinetuneMode::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown fine-tuning mode `{s}`")))
    }
}

/// Trainable/frozen split of a model's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FreezePolicy {
    pub mode: FinetuneMode,
    pub trainable: BTreeSet<String>,
    pub frozen: BTreeSet<String>,
    pub trainable_n: usize,
    pub frozen_n: usize,
    pub total_n: usize,
}

impl FreezePolicy {
    /// Per-[`ParamId`] trainable flags for `model`.
    pub fn mask(&self, model: &Forecaster) -> Vec<bool> {
        model
            .params
            .iter()
            .map(|(_, name, _)| self.trainable.contains(name))
            .collect()
    }

    /// Freeze everything (an inert policy, useful as a control).
    pub fn all_frozen(model: &Forecaster, mode: FinetuneMode) -> Self {
        let frozen: BTreeSet<String> = model.params.iter().map(|(_, n, _)| n.to_string()).collect();
        let total = model.params.numel();
        FreezePolicy {
            mode,
            trainable: BTreeSet::new(),
            frozen,
            trainable_n: 0,
            frozen_n: total,
            total_n: total,
        }
    }
}

/// A vanilla, encoder-free forecaster plus the hash of its checkpoint bytes.
#[derive(Clone, Debug)]
pub struct PretrainedBase {
    pub model: Forecaster,
    pub checkpoint_sha256: String,
}

impl PretrainedBase {
    pub fn new(model: Forecaster) -> Result<Self> {
        if model.config.variant != Variant::Vanilla || model.config.encoder != EncoderKind::None {
            return Err(Error::Contract("a pretrained base must be vanilla with no encoder".into()));
        }
        let bytes = checkpoint::to_bytes(&model)?;
        Ok(PretrainedBase {
            checkpoint_sha256: crate::harness::manifest::sha256_hex(&bytes),
            model,
        })
    }
}

/// Default backbone of the pretrained stand-in.
pub fn base_config() -> ModelConfig {
    ModelConfig {
        input_len: 20,
        horizon: 10,
        patch_len: 4,
        heads: 4,
        head_dim: 8,
        n_layers: 2,
        ff_hidden: 128,
        dropout: 0.1,
        ..Default::default()
    }
}

/// Train a base from scratch on category-free data.
pub fn pretrain_base(
    config: &ModelConfig,
    seed: u64,
    train: &WindowSet,
    val: Option<&WindowSet>,
    opt: &TrainConfig,
) -> Result<PretrainedBase> {
    let mut model = build_model(config, seed)?;
    let all = vec![true; model.params.len()];
    train_subset(&mut model, train, val, opt, &all)?;
    PretrainedBase::new(model)
}

/// Static-variable description for the attached encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticsSpec {
    pub names: Vec<String>,
    pub cardinalities: Vec<usize>,
    pub grn_hidden: usize,
}

fn derived(base: &PretrainedBase, config: ModelConfig) -> Result<Forecaster> {
    let mut model = build_model(&config, base.model.seed)?;
    for (_, name, t) in base.model.params.iter() {
        let id = model
            .params
            .id(name)
            .ok_or_else(|| Error::Internal(format!("base parameter `{name}` missing after attach")))?;
        model.params.set(id, t.clone())?;
    }
    Ok(model)
}

/// Add a static encoder and per-layer combiner GRNs to a frozen base.
/// Combiners start at the identity modulation, so v1 reproduces the base
/// exactly, v2 within 1e-3 and v3 up to the `1/√2` logit temperature.
pub fn attach_qkcv(
    base: &PretrainedBase,
    encoder: EncoderKind,
    statics: &StaticsSpec,
    variant: Variant,
) -> Result<Forecaster> {
    if !variant.uses_category() {
        return Err(Error::Contract("nothing to attach for vanilla attention".into()));
    }
    if encoder == EncoderKind::None {
        return Err(Error::Contract("QKCV needs a static encoder".into()));
    }
    let config = ModelConfig {
        variant,
        encoder,
        injection: StaticInjection::Attention,
        static_names: statics.names.clone(),
        cardinalities: statics.cardinalities.clone(),
        grn_hidden: statics.grn_hidden,
        ..base.model.config.clone()
    };
    let mut model = derived(base, config)?;
    for block in &model.layers {
        block.attn.set_identity_modulation(&mut model.params);
    }
    Ok(model)
}

/// Feed `[history ⊕ C]` through an MLP back to `L_in` steps instead of
/// touching attention.
pub fn attach_compressor(
    base: &PretrainedBase,
    encoder: EncoderKind,
    statics: &StaticsSpec,
) -> Result<Forecaster> {
    if encoder == EncoderKind::None {
        return Err(Error::Contract("the input compressor needs a static encoder".into()));
    }
    let config = ModelConfig {
        encoder,
        injection: StaticInjection::InputCompressor,
        static_names: statics.names.clone(),
        cardinalities: statics.cardinalities.clone(),
        grn_hidden: statics.grn_hidden,
        ..base.model.config.clone()
    };
    derived(base, config)
}

/// Build the model a mode runs on: the base itself for PL/FP, QKCV-augmented
/// for the `+QKCV` modes, compressor-augmented otherwise.
pub fn model_for_mode(
    base: &PretrainedBase,
    mode: FinetuneMode,
    statics: &StaticsSpec,
    variant: Variant,
) -> Result<Forecaster> {
    match mode {
        FinetuneMode::Pl | FinetuneMode::Fp => Ok(base.model.clone()),
        FinetuneMode::PlQkcv | FinetuneMode::FpQkcv => {
            attach_qkcv(base, EncoderKind::Sce, statics, variant)
        }
        FinetuneMode::CompressorMlp | FinetuneMode::CompressorSce => {
            attach_compressor(base, mode.compressor_encoder().expect("compressor mode"), statics)
        }
    }
}

pub fn partition_parameters(model: &Forecaster, mode: FinetuneMode) -> Result<FreezePolicy> {
    let has_combiner = model.config.variant.uses_category();
    let has_compressor = model.compressor.is_some();
    match mode {
        FinetuneMode::PlQkcv | FinetuneMode::FpQkcv if !has_combiner => {
            return Err(Error::Contract(format!("{mode} needs a QKCV-augmented model")))
        }
        FinetuneMode::CompressorMlp | FinetuneMode::CompressorSce if !has_compressor => {
            return Err(Error::Contract(format!("{mode} needs an input compressor")))
        }
        _ => {}
    }
    let mut policy = FreezePolicy {
        mode,
        trainable: BTreeSet::new(),
        frozen: BTreeSet::new(),
        trainable_n: 0,
        frozen_n: 0,
        total_n: 0,
    };
    for (_, name, t) in model.params.iter() {
        let group = param_group(name);
        if group == "unknown" {
            return Err(Error::Internal(format!("parameter `{name}` belongs to no component")));
        }
        if mode.trains_group(group) {
            policy.trainable.insert(name.to_string());
            policy.trainable_n += t.numel();
        } else {
            policy.frozen.insert(name.to_string());
            policy.frozen_n += t.numel();
        }
        policy.total_n += t.numel();
    }
    Ok(policy)
}

/// One row of the fine-tuning comparison table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FinetuneReport {
    pub mode: FinetuneMode,
    pub variant: Variant,
    pub trainable_params: usize,
    pub total_params: usize,
    pub optimizer_bytes: usize,
    pub metrics: MetricsReport,
    pub steps: usize,
}

/// Train under `policy`, then verify every frozen tensor is bitwise intact.
pub fn finetune_run(
    mut model: Forecaster,
    policy: &FreezePolicy,
    train: &WindowSet,
    val: Option<&WindowSet>,
    test: &WindowSet,
    opt: &TrainConfig,
) -> Result<(Forecaster, FinetuneReport)> {
    let mask = policy.mask(&model);
    if mask.iter().filter(|&&m| m).count() != policy.trainable.len() {
        return Err(Error::Internal("policy names parameters the model does not have".into()));
    }
    let frozen_before: Vec<(ParamId, String)> = model
        .params
        .iter()
        .filter(|(id, _, _)| !mask[id.index()])
        .map(|(id, _, t)| (id, t.content_hash()))
        .collect();
    let history = train_subset(&mut model, train, val, opt, &mask)?;
    for (id, hash) in &frozen_before {
        if model.params.get(*id).content_hash() != *hash {
            return Err(Error::Internal(format!(
                "frozen parameter `{}` changed during fine-tuning",
                model.params.name(*id)
            )));
        }
    }
    let ids: Vec<ParamId> = model.params.ids().filter(|id| mask[id.index()]).collect();
    let report = FinetuneReport {
        mode: policy.mode,
        variant: model.config.variant,
        trainable_params: policy.trainable_n,
        total_params: policy.total_n,
        optimizer_bytes: Adam::new(opt.lr, &model.params, &ids).state_bytes(),
        metrics: evaluate(&model, test)?,
        steps: history.train_loss.len(),
    };
    Ok((model, report))
}

/// CSV: `mode, variant, trainable_params, total_params, wpe, mae, p50, p90, optimizer_bytes`.
pub fn write_report_csv<W: Write>(rows: &[FinetuneReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "mode",
        "variant",
        "trainable_params",
        "total_params",
        "wpe",
        "mae",
        "p50",
        "p90",
        "optimizer_bytes",
    ])?;
    for r in rows {
        w.write_record([
            r.mode.label().to_string(),
            r.variant.to_string(),
            r.trainable_params.to_string(),
            r.total_params.to_string(),
            fmt_f64(r.metrics.wpe),
            fmt_f64(r.metrics.mae),
            fmt_f64(r.metrics.p50),
            fmt_f64(r.metrics.p90),
            r.optimizer_bytes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
