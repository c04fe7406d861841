//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qkcv::attention::{
    causal_mask, qkcv_attention, AttentionConfig, Injection, QkcvOptions, ScoreMatrix, Variant,
};
use qkcv::finetune::{
    base_config, finetune_run, model_for_mode, partition_parameters, pretrain_base, FinetuneMode,
    StaticsSpec,
};
use qkcv::forecaster::{build_model, evaluate, train, EncoderKind, Forecaster, ModelConfig, TrainConfig};
use qkcv::harness::cli::run_cli;
use qkcv::harness::config::FinetuneConfig;
use qkcv::harness::export::{export_attention, validate_attention_heatmap};
use qkcv::harness::gradcheck::{composed_checks, primitive_checks};
use qkcv::harness::{
    generate_synthetic, leakage_violations, load_csv, split_and_window, Boundaries, DatasetSchema,
    Frequency, Splits, SyntheticSpec,
};
use qkcv::nn::{ParamBuilder, ParamStore};
use qkcv::numeric::{Tape, Tensor};
use qkcv::static_encoder::{feature_importance, Grn};

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: &'static str, title: &'static str, result: Result<(bool, String), String>) -> Outcome {
    match result {
        Ok((pass, detail)) => Outcome { id, title, pass, detail },
        Err(e) => Outcome { id, title, pass: false, detail: format!("error: {e}") },
    }
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    common::max_abs_diff(a, b)
}

fn random_qkvc(rng: &mut ChaCha8Rng, shape: &[usize]) -> [Tensor; 4] {
    [
        Tensor::randn(shape, rng),
        Tensor::randn(shape, rng),
        Tensor::randn(shape, rng),
        Tensor::randn(shape, rng),
    ]
}

fn attention_config(variant: Variant, heads: usize, head_dim: usize, causal: bool) -> AttentionConfig {
    AttentionConfig { variant, heads, head_dim, causal_mask: causal }
}

// 1: finite differences over the primitive set and composed blocks.
fn gradient_correctness() -> Result<(bool, String), String> {
    let t0 = Instant::now();
    let mut worst_prim: f64 = 0.0;
    let mut worst_comp: f64 = 0.0;
    let mut failed = Vec::new();
    for seed in SEEDS {
        for r in primitive_checks(seed).map_err(e2s)? {
            worst_prim = worst_prim.max(r.max_rel_error);
            if !r.passed() {
                failed.push(format!("{}@{seed}", r.name));
            }
        }
        for r in composed_checks(seed).map_err(e2s)? {
            worst_comp = worst_comp.max(r.max_rel_error);
            if !r.passed() {
                failed.push(format!("{}@{seed}", r.name));
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = failed.is_empty() && secs < 60.0;
    Ok((
        pass,
        format!(
            "max rel err primitives {worst_prim:.2e} (<1e-6), composed {worst_comp:.2e} (<1e-4), {secs:.1}s (<60s){}",
            if failed.is_empty() { String::new() } else { format!(", failing: {}", failed.join(" ")) }
        ),
    ))
}

// 2: injected identity modulations reduce every variant to vanilla.
fn identity_collapse() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_12, mut worst_3): (f64, f64) = (0.0, 0.0);
    for trial in 0..50 {
        let shape = [rng.random_range(1..=3), rng.random_range(1..=7), rng.random_range(1..=3), rng.random_range(1..=6)];
        let causal = trial % 2 == 1;
        let [q, k, v, c] = random_qkvc(&mut rng, &shape);
        let mask = causal.then(|| causal_mask(shape[1], shape[1]));
        let run = |variant: Variant, inject: Option<Injection>| -> Result<(Tensor, Tensor), String> {
            let tape = Tape::new();
            let out = qkcv_attention(
                tape.constant(q.clone()),
                tape.constant(k.clone()),
                tape.constant(v.clone()),
                Some(tape.constant(c.clone())),
                &attention_config(variant, shape[2], shape[3], causal),
                QkcvOptions { inject: inject.as_ref(), mask: mask.as_deref(), ..Default::default() },
            )
            .map_err(e2s)?;
            Ok(((*out.scores.value()).clone(), (*out.logits.value()).clone()))
        };
        let (vs, vl) = run(Variant::Vanilla, None)?;
        for variant in [Variant::V1, Variant::V2] {
            let (s, _) = run(variant, Some(Injection::Modulation(Tensor::ones(&shape))))?;
            worst_12 = worst_12.max(max_diff(s.data(), vs.data()));
        }
        let (_, l3) = run(Variant::V3, Some(Injection::Modulation(Tensor::zeros(&shape))))?;
        for (a, b) in l3.data().iter().zip(vl.data()) {
            if b.is_finite() {
                worst_3 = worst_3.max((a - b / 2f64.sqrt()).abs());
            } else if a.is_finite() {
                worst_3 = f64::INFINITY;
            }
        }
    }
    Ok((
        worst_12 < 1e-10 && worst_3 < 1e-12,
        format!("v1/v2 scores vs vanilla {worst_12:.2e} (<1e-10), v3 logits vs vanilla/sqrt2 {worst_3:.2e} (<1e-12), 50 trials"),
    ))
}

// 3: vectorized attention against the triple-loop oracle.
fn brute_force() -> Result<(bool, String), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let trials = 60;
    for trial in 0..trials {
        let shape = [rng.random_range(1..=2), rng.random_range(1..=5), rng.random_range(1..=2), rng.random_range(1..=4)];
        let (b, l, h, d) = (shape[0], shape[1], shape[2], shape[3]);
        let causal = trial % 2 == 0;
        let [q, k, v, c] = random_qkvc(&mut rng, &shape);
        let mut store = ParamStore::new();
        let grn = Grn::new(&mut ParamBuilder::new(&mut store, trial), "g", h * d, h * d, 3, None).map_err(e2s)?;
        let g = {
            let tape = Tape::new();
            let p = store.bind_frozen(&tape);
            let flat = tape.constant(c.reshape(&[b, l, h * d]).map_err(e2s)?);
            grn.forward(&p, flat, None).map_err(e2s)?.value().reshape(&shape).map_err(e2s)?
        };
        for variant in Variant::ALL {
            let tape = Tape::new();
            let p = store.bind_frozen(&tape);
            let mask = causal.then(|| causal_mask(l, l));
            let out = qkcv_attention(
                tape.constant(q.clone()),
                tape.constant(k.clone()),
                tape.constant(v.clone()),
                Some(tape.constant(c.clone())),
                &attention_config(variant, h, d, causal),
                QkcvOptions { grn: Some((&grn, &p)), mask: mask.as_deref(), ..Default::default() },
            )
            .map_err(e2s)?;
            let (o, s, _) = common::naive_qkcv(&q, &k, &v, Some(&g), variant, causal);
            worst = worst.max(max_diff(out.output.value().data(), &o));
            worst = worst.max(max_diff(out.scores.value().data(), &s));
        }
    }
    Ok((worst < 1e-12, format!("max abs diff {worst:.2e} (<1e-12), {trials} shapes x 4 variants")))
}

// 4: exported score matrices are row-stochastic.
fn row_stochasticity() -> Result<(bool, String), String> {
    let dir = tempfile::tempdir().map_err(e2s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = generate_synthetic(&SyntheticSpec { n_entities: 16, length: 60, ..Default::default() })
        .map_err(e2s)?
        .dataset;
    let mut worst: f64 = 0.0;
    let mut matrices = 0;
    for trial in 0..100u64 {
        let variant = Variant::ALL[rng.random_range(0..4)];
        let patch_len = rng.random_range(1..=4);
        let encoder = match (variant, rng.random_bool(0.5)) {
            (Variant::Vanilla, _) => EncoderKind::None,
            (_, true) => EncoderKind::Sce,
            (_, false) => EncoderKind::Mlp,
        };
        let cfg = ModelConfig {
            variant,
            encoder,
            input_len: patch_len * rng.random_range(1..=6),
            patch_len,
            horizon: rng.random_range(1..=4),
            heads: rng.random_range(1..=3),
            head_dim: rng.random_range(1..=4),
            n_layers: rng.random_range(1..=2),
            ff_hidden: 8,
            causal_mask: rng.random_bool(0.5),
            static_names: vec!["static_0".into()],
            cardinalities: vec![8],
            ..Default::default()
        };
        let splits = split_and_window(&data, cfg.input_len, cfg.horizon, Boundaries { train_end: 40, val_end: 50 })
            .map_err(e2s)?;
        let mut model = build_model(&cfg, trial).map_err(e2s)?;
        if trial % 2 == 0 {
            let opt = TrainConfig { max_steps: 5, lr: 1e-2, seed: trial, ..Default::default() };
            model = train(model, &splits.train, None, &opt).map_err(e2s)?.0;
        }
        let files = export_attention(&model, &splits.test, 0).map_err(e2s)?;
        for (name, bytes) in &files {
            let path = dir.path().join(format!("{trial}_{name}"));
            std::fs::write(&path, bytes).map_err(e2s)?;
            if name.starts_with("attention_layer") {
                worst = worst.max(validate_attention_heatmap(&path, cfg.n_patches(), 1e-6).map_err(e2s)?);
                matrices += 1;
            }
        }
    }
    // a non-stochastic matrix must be rejected
    let bad = ScoreMatrix::new(Tensor::full(&[1, 1, 2, 2], 0.6), false, 1e-6).is_err();
    Ok((
        worst <= 1e-6 && bad,
        format!("max |row sum - 1| {worst:.2e} (<=1e-6) over {matrices} exported layers from 100 configs"),
    ))
}

fn category_splits(spec: &SyntheticSpec, cfg: &ModelConfig) -> Result<Splits, String> {
    let data = generate_synthetic(spec).map_err(e2s)?.dataset;
    split_and_window(&data, cfg.input_len, cfg.horizon, Boundaries { train_end: 140, val_end: 170 }).map_err(e2s)
}

fn fit(cfg: &ModelConfig, seed: u64, s: &Splits) -> Result<Forecaster, String> {
    let opt = TrainConfig { seed, ..Default::default() };
    Ok(train(build_model(cfg, seed).map_err(e2s)?, &s.train, Some(&s.val), &opt).map_err(e2s)?.0)
}

// 5: category signal helps each QKCV variant over the vanilla twin.
fn category_benefit() -> Result<(bool, String), String> {
    let t0 = Instant::now();
    let per_seed = std::thread::scope(|scope| {
        let handles: Vec<_> = SEEDS
            .iter()
            .map(|&seed| {
                scope.spawn(move || -> Result<Vec<f64>, String> {
                    let spec = SyntheticSpec { seed, ..Default::default() };
                    let mut wpe = Vec::new();
                    for variant in Variant::ALL {
                        let cfg = ModelConfig {
                            variant,
                            encoder: if variant == Variant::Vanilla { EncoderKind::None } else { EncoderKind::Sce },
                            static_names: vec!["static_0".into()],
                            cardinalities: vec![8],
                            ..Default::default()
                        };
                        let s = category_splits(&spec, &cfg)?;
                        wpe.push(evaluate(&fit(&cfg, seed, &s)?, &s.test).map_err(e2s)?.wpe);
                    }
                    Ok(wpe)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("criterion 5 worker panicked")).collect::<Result<Vec<_>, _>>()
    })?;
    let secs = t0.elapsed().as_secs_f64();
    let mut pass = secs < 600.0;
    let mut parts = Vec::new();
    for (vi, variant) in Variant::ALL.iter().enumerate().skip(1) {
        let wins = per_seed.iter().filter(|w| w[vi] < w[0]).count();
        pass &= wins >= 2;
        parts.push(format!("{variant} {wins}/3"));
    }
    let table: Vec<String> = per_seed
        .iter()
        .zip(SEEDS)
        .map(|(w, s)| format!("seed {s}: {}", w.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join("/")))
        .collect();
    Ok((
        pass,
        format!(
            "wins over vanilla: {} (need >=2/3 each); WPE vanilla/v1/v2/v3 {}; {secs:.0}s (<600s)",
            parts.join(", "),
            table.join("; ")
        ),
    ))
}

struct FinetuneSeed {
    pl: f64,
    pl_qkcv: [f64; 3],
    compressor: [f64; 2],
    frozen_ok: bool,
}

fn finetune_seed(seed: u64) -> Result<FinetuneSeed, String> {
    let ft = FinetuneConfig::default();
    let pre_spec = SyntheticSpec { seed: ft.pretrain_data.seed + seed, ..ft.pretrain_data.clone() };
    let pre = generate_synthetic(&pre_spec).map_err(e2s)?.dataset;
    let bounds = Boundaries { train_end: ft.pretrain_train_end, val_end: ft.pretrain_val_end };
    let ps = split_and_window(&pre, ft.base.input_len, ft.base.horizon, bounds).map_err(e2s)?;
    let opt = TrainConfig { seed, max_steps: ft.pretrain_steps, ..Default::default() };
    let base = pretrain_base(&base_config(), seed, &ps.train, Some(&ps.val), &opt).map_err(e2s)?;

    let target = SyntheticSpec { seed, ..Default::default() };
    let s = category_splits(&target, &base.model.config)?;
    let statics = StaticsSpec { names: vec!["static_0".into()], cardinalities: vec![8], grn_hidden: ft.grn_hidden };
    let opt = TrainConfig { seed, ..Default::default() };
    let mut frozen_ok = true;
    let mut run = |mode: FinetuneMode, variant: Variant| -> Result<f64, String> {
        let model = model_for_mode(&base, mode, &statics, variant).map_err(e2s)?;
        let policy = partition_parameters(&model, mode).map_err(e2s)?;
        let before = model.clone();
        let (after, report) = finetune_run(model, &policy, &s.train, Some(&s.val), &s.test, &opt).map_err(e2s)?;
        for (id, name, t) in before.params.iter() {
            if policy.frozen.contains(name) && !after.params.get(id).bit_eq(t) {
                frozen_ok = false;
            }
        }
        Ok(report.metrics.wpe)
    };
    let pl = run(FinetuneMode::Pl, Variant::Vanilla)?;
    let pl_qkcv = [
        run(FinetuneMode::PlQkcv, Variant::V1)?,
        run(FinetuneMode::PlQkcv, Variant::V2)?,
        run(FinetuneMode::PlQkcv, Variant::V3)?,
    ];
    let compressor = [
        run(FinetuneMode::CompressorMlp, Variant::Vanilla)?,
        run(FinetuneMode::CompressorSce, Variant::Vanilla)?,
    ];
    Ok(FinetuneSeed { pl, pl_qkcv, compressor, frozen_ok })
}

// 6: fine-tuning a frozen pretrained base.
fn finetuning() -> Result<(bool, String), String> {
    let ft = FinetuneConfig::default();
    let base = qkcv::finetune::PretrainedBase::new(build_model(&base_config(), 0).map_err(e2s)?).map_err(e2s)?;
    let statics = StaticsSpec { names: vec!["static_0".into()], cardinalities: vec![8], grn_hidden: ft.grn_hidden };
    let m = model_for_mode(&base, FinetuneMode::PlQkcv, &statics, Variant::V1).map_err(e2s)?;
    let pl = partition_parameters(&m, FinetuneMode::PlQkcv).map_err(e2s)?.trainable_n;
    let fp = partition_parameters(&m, FinetuneMode::FpQkcv).map_err(e2s)?.trainable_n;
    let ratio = pl as f64 / fp as f64;

    let seeds = std::thread::scope(|scope| {
        let handles: Vec<_> = SEEDS.iter().map(|&s| scope.spawn(move || finetune_seed(s))).collect();
        handles.into_iter().map(|h| h.join().expect("criterion 6 worker panicked")).collect::<Result<Vec<_>, _>>()
    })?;
    let a = seeds.iter().all(|s| s.frozen_ok);
    let b = ratio < 0.5;
    let c_wins = seeds.iter().filter(|s| s.pl_qkcv[0] < s.pl).count();
    let best = |s: &FinetuneSeed| s.pl_qkcv.iter().cloned().fold(f64::INFINITY, f64::min);
    let d_wins = seeds.iter().filter(|s| s.compressor.iter().all(|&c| c >= best(s))).count();
    let (c, d) = (c_wins >= 2, d_wins >= 2);
    let rows: Vec<String> = seeds
        .iter()
        .zip(SEEDS)
        .map(|(s, k)| {
            format!(
                "seed {k}: PL {:.4}, PL+QKCV v1/v2/v3 {:.4}/{:.4}/{:.4}, compressor MLP/SCE {:.4}/{:.4}",
                s.pl, s.pl_qkcv[0], s.pl_qkcv[1], s.pl_qkcv[2], s.compressor[0], s.compressor[1]
            )
        })
        .collect();
    let mark = |ok: bool| if ok { "ok" } else { "FAIL" };
    Ok((
        a && b && c && d,
        format!(
            "(a) frozen weights bitwise {}; (b) trainable ratio {ratio:.3} (<0.5) {}; (c) PL+QKCV v1 beats PL {c_wins}/3 {}; \
             (d) compressors do not beat best PL+QKCV {d_wins}/3 {}; {}",
            mark(a),
            mark(b),
            mark(c),
            mark(d),
            rows.join("; ")
        ),
    ))
}

fn cli(args: &[&str]) -> i32 {
    let mut v = vec!["qkcv"];
    v.extend_from_slice(args);
    run_cli(v)
}

fn dir_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map_err(e2s)?
        .map(|e| {
            let e = e.map_err(e2s)?;
            Ok((e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).map_err(e2s)?))
        })
        .collect::<Result<_, String>>()?;
    files.sort();
    Ok(files)
}

// 7: repeated CLI runs produce identical bytes.
fn determinism() -> Result<(bool, String), String> {
    let tmp = tempfile::tempdir().map_err(e2s)?;
    let ckpt_dir = tmp.path().join("ckpt");
    let quick = ["--seed", "3", "--set", "train.max_steps=40", "--set", "train.eval_every=10", "--set", "data.synthetic.n_entities=16"];
    let sce = ["--set", "model.variant=v2", "--set", "model.encoder=sce"];
    let mut args = vec!["train", "--out", ckpt_dir.to_str().unwrap()];
    args.extend(quick);
    args.extend(sce);
    if cli(&args) != 0 {
        return Err("seed checkpoint run failed".into());
    }
    let ckpt = ckpt_dir.join("model.ckpt");
    let ckpt = ckpt.to_str().unwrap().to_string();
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("gen-data", vec!["--set", "data.synthetic.length=40"]),
        ("train", sce.to_vec()),
        ("evaluate", vec!["--checkpoint", &ckpt]),
        ("export-attention", vec!["--checkpoint", &ckpt, "--samples", "4"]),
        ("importance", vec!["--checkpoint", &ckpt]),
        (
            "finetune",
            vec![
                "--set",
                "finetune.pretrain_steps=20",
                "--set",
                "finetune.modes=[\"PL\",\"PL+QKCV\",\"compressor-SCE\"]",
            ],
        ),
    ];
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for (cmd, extra) in &commands {
        let mut outs = Vec::new();
        for rep in 0..2 {
            let out = tmp.path().join(format!("{cmd}_{rep}"));
            let mut args = vec![*cmd, "--out", out.to_str().unwrap()];
            args.extend(quick);
            args.extend(extra.iter().copied());
            if cli(&args) != 0 {
                return Err(format!("`qkcv {cmd}` failed"));
            }
            outs.push(dir_bytes(&out)?);
        }
        compared += outs[0].len();
        if outs[0] != outs[1] {
            mismatches.push(cmd.to_string());
        }
        if !outs[0].iter().any(|(n, _)| n == "manifest.json") {
            mismatches.push(format!("{cmd} (no manifest)"));
        }
    }
    Ok((
        mismatches.is_empty(),
        format!(
            "{} commands x 2 runs, {compared} files compared byte-for-byte{}",
            commands.len(),
            if mismatches.is_empty() { String::new() } else { format!("; differing: {}", mismatches.join(", ")) }
        ),
    ))
}

// 8: the VSN ranks the informative variable first.
fn importance() -> Result<(bool, String), String> {
    let results = std::thread::scope(|scope| {
        let handles: Vec<_> = SEEDS
            .iter()
            .map(|&seed| {
                scope.spawn(move || -> Result<(Vec<f64>, f64), String> {
                    let spec = SyntheticSpec {
                        n_categories: vec![8, 8, 8],
                        informative: vec![true, false, false],
                        seed,
                        ..Default::default()
                    };
                    let cfg = ModelConfig {
                        variant: Variant::V1,
                        encoder: EncoderKind::Sce,
                        static_names: spec.variable_names(),
                        cardinalities: spec.n_categories.clone(),
                        ..Default::default()
                    };
                    let data = generate_synthetic(&spec).map_err(e2s)?.dataset;
                    let s = category_splits(&spec, &cfg)?;
                    let model = fit(&cfg, seed, &s)?;
                    let enc = model.encoder.as_ref().ok_or("no encoder")?;
                    let samples: Vec<Vec<usize>> = data.entities.iter().map(|e| e.statics.clone()).collect();
                    let report = feature_importance(enc, &model.params, &samples).map_err(e2s)?;
                    // per-sample simplex check
                    let tape = Tape::new();
                    let p = model.params.bind_frozen(&tape);
                    let (_, w) = enc.static_covariate_encode(&p, &samples).map_err(e2s)?;
                    let mut dev = (report.weights.iter().sum::<f64>() - 1.0).abs();
                    for row in w.value().data().chunks(3) {
                        dev = dev.max((row.iter().sum::<f64>() - 1.0).abs());
                        if row.iter().any(|&x| x < 0.0) {
                            dev = f64::INFINITY;
                        }
                    }
                    Ok((report.weights, dev))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("criterion 8 worker panicked")).collect::<Result<Vec<_>, _>>()
    })?;
    let top = results
        .iter()
        .filter(|(w, _)| w[0] > w[1] && w[0] > w[2])
        .count();
    let dev = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let rows: Vec<String> = results
        .iter()
        .zip(SEEDS)
        .map(|((w, _), s)| format!("seed {s}: {:.3}/{:.3}/{:.3}", w[0], w[1], w[2]))
        .collect();
    Ok((
        top >= 2 && dev <= 1e-6,
        format!(
            "informative variable ranked first {top}/3 (need >=2); simplex deviation {dev:.2e} (<=1e-6); weights {}",
            rows.join("; ")
        ),
    ))
}

// 9: fill rules and leakage scan on the fixtures.
fn data_pipeline() -> Result<(bool, String), String> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures");
    let kind = |frequency| DatasetSchema { frequency, static_columns: vec!["kind".into()], ..Default::default() };
    let weekly = load_csv(&fixtures.join("weekly_gap.csv"), &kind(Frequency::Weekly), None).map_err(e2s)?;
    let ffill = weekly.entities[0].values == [5.0, 5.0, 7.0];
    let late = load_csv(&fixtures.join("late_entity.csv"), &kind(Frequency::Daily), None).map_err(e2s)?;
    let zeros = late.entities[1].values == [0.0, 0.0, 0.0, 9.0, 8.0];
    let panel_schema = DatasetSchema {
        entity_column: "store".into(),
        time_column: "day".into(),
        target_column: "sales".into(),
        static_columns: vec!["region".into(), "format".into()],
        ..Default::default()
    };
    let panel = load_csv(&fixtures.join("panel.csv"), &panel_schema, None).map_err(e2s)?;
    let synthetic = generate_synthetic(&SyntheticSpec::default()).map_err(e2s)?.dataset;
    let cases = [
        (&weekly, Boundaries { train_end: 2, val_end: 3 }),
        (&late, Boundaries { train_end: 3, val_end: 4 }),
        (&panel, Boundaries { train_end: 40, val_end: 50 }),
        (&synthetic, Boundaries { train_end: 140, val_end: 170 }),
    ];
    let mut violations = 0;
    let mut windows = 0;
    for (data, b) in cases {
        for (l_in, l_out) in [(1, 1), (2, 1), (4, 2), (8, 3), (24, 8)] {
            let Ok(s) = split_and_window(data, l_in, l_out, b) else { continue };
            windows += s.train.len() + s.val.len() + s.test.len();
            violations += leakage_violations(&s, b, data.len());
        }
    }
    Ok((
        ffill && zeros && violations == 0,
        format!(
            "weekly gap [5,5,7] {}; late entity [0,0,0,9,8] {}; {violations} leakage violations over {windows} windows",
            if ffill { "ok" } else { "FAIL" },
            if zeros { "ok" } else { "FAIL" }
        ),
    ))
}

fn main() {
    let t0 = Instant::now();
    let mut results = vec![
        outcome("1", "gradient correctness", gradient_correctness()),
        outcome("2", "identity collapse", identity_collapse()),
        outcome("3", "brute-force equivalence", brute_force()),
        outcome("4", "row-stochasticity", row_stochasticity()),
        outcome("9", "data pipeline", data_pipeline()),
    ];
    let heavy = std::thread::scope(|scope| {
        let c5 = scope.spawn(category_benefit);
        let c6 = scope.spawn(finetuning);
        let c7 = scope.spawn(determinism);
        let c8 = scope.spawn(importance);
        [
            outcome("5", "category-signal benefit", c5.join().expect("criterion 5 panicked")),
            outcome("6", "fine-tuning", c6.join().expect("criterion 6 panicked")),
            outcome("7", "determinism", c7.join().expect("criterion 7 panicked")),
            outcome("8", "importance sanity", c8.join().expect("criterion 8 panicked")),
        ]
    });
    results.extend(heavy);
    results.sort_by_key(|r| r.id);

    println!();
    println!("acceptance summary ({:.0}s)", t0.elapsed().as_secs_f64());
    for r in &results {
        println!("{} criterion {}: {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.id, r.title, r.detail);
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
