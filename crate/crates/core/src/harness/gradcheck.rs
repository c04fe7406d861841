//! Finite-difference checks over the primitive op set and composed blocks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionConfig, MultiHeadQkcv, Variant};
use crate::error::Result;
use crate::nn::{gradcheck_params, ParamBuilder, ParamStore};
use crate::numeric::{opset, Tensor};
use crate::static_encoder::{EncoderMode, Grn, StaticEncoder, StaticEncoderConfig};

pub const PRIMITIVE_TOL: f64 = 1e-6;
pub const COMPOSED_TOL: f64 = 1e-4;
pub const EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub seed: u64,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub fn primitive_checks(seed: u64) -> Result<Vec<CheckResult>> {
    opset::primitives()
        .iter()
        .map(|p| {
            Ok(CheckResult {
                name: p.name.to_string(),
                seed,
                max_rel_error: p.check(seed, EPS)?,
                tolerance: PRIMITIVE_TOL,
            })
        })
        .collect()
}

fn composed(name: &str, seed: u64, err: f64) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        seed,
        max_rel_error: err,
        tolerance: COMPOSED_TOL,
    }
}

fn encoder(mode: EncoderMode, seed: u64) -> Result<(ParamStore, StaticEncoder)> {
    let mut store = ParamStore::new();
    let cfg = StaticEncoderConfig {
        mode,
        names: vec!["a".into(), "b".into(), "c".into()],
        cardinalities: vec![3, 2, 4],
        width: 4,
        grn_hidden: 3,
    };
    let enc = StaticEncoder::new(cfg, &mut ParamBuilder::new(&mut store, seed))?;
    Ok((store, enc))
}

/// GRN (with context and skip), VSN, MLP encoder and every attention variant's block.
pub fn composed_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut store = ParamStore::new();
    let grn = Grn::new(&mut ParamBuilder::new(&mut store, seed), "grn", 4, 3, 5, Some(2))?;
    let (a, c) = (Tensor::randn(&[3, 4], &mut rng), Tensor::randn(&[3, 2], &mut rng));
    let err = gradcheck_params(&store, &[a, c], |p, v| grn.forward(p, v[0], Some(v[1])), EPS, None)?;
    out.push(composed("grn", seed, err));

    let codes = vec![vec![0, 1, 3], vec![2, 0, 1], vec![1, 1, 0]];
    let (store, enc) = encoder(EncoderMode::Sce, seed)?;
    let err = gradcheck_params(
        &store,
        &[],
        |p, _| {
            let (c, w) = enc.static_covariate_encode(p, &codes)?;
            crate::numeric::concat(&[c, w], 1)
        },
        EPS,
        None,
    )?;
    out.push(composed("vsn_encoder", seed, err));

    let (store, enc) = encoder(EncoderMode::Mlp, seed)?;
    let err = gradcheck_params(&store, &[], |p, _| enc.mlp_encode(p, &codes), EPS, None)?;
    out.push(composed("mlp_encoder", seed, err));

    for variant in Variant::ALL {
        let mut store = ParamStore::new();
        let cfg = AttentionConfig {
            variant,
            heads: 2,
            head_dim: 2,
            causal_mask: seed % 2 == 1,
        };
        let block = MultiHeadQkcv::new(&mut ParamBuilder::new(&mut store, seed), cfg, 3)?;
        let x = Tensor::randn(&[2, 3, 4], &mut rng);
        let ce = Tensor::randn(&[2, 4], &mut rng);
        let err = gradcheck_params(
            &store,
            &[x, ce],
            |p, v| Ok(block.forward(p, v[0], Some(v[1]), None)?.y),
            EPS,
            None,
        )?;
        out.push(composed(&format!("attention_{variant}"), seed, err));
    }
    Ok(out)
}
