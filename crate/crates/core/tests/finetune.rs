use std::collections::BTreeSet;

use qkcv::attention::Variant;
use qkcv::finetune::{
    attach_compressor, attach_qkcv, base_config, finetune_run, model_for_mode, partition_parameters,
    write_report_csv, FinetuneMode, PretrainedBase, StaticsSpec,
};
use qkcv::forecaster::{build_model, predict, EncoderKind, ModelConfig, TrainConfig};
use qkcv::harness::{generate_synthetic, split_and_window, Boundaries, Splits, SyntheticSpec};
use qkcv::Error;

fn base() -> PretrainedBase {
    PretrainedBase::new(build_model(&base_config(), 11).unwrap()).unwrap()
}

fn statics() -> StaticsSpec {
    StaticsSpec {
        names: vec!["static_0".into()],
        cardinalities: vec![8],
        grn_hidden: 8,
    }
}

fn data() -> Splits {
    let d = generate_synthetic(&SyntheticSpec { n_entities: 16, ..Default::default() }).unwrap();
    let c = base_config();
    split_and_window(&d.dataset, c.input_len, c.horizon, Boundaries { train_end: 140, val_end: 170 }).unwrap()
}

#[test]
fn base_must_be_plain_vanilla() {
    let cfg = ModelConfig {
        variant: Variant::V1,
        encoder: EncoderKind::Sce,
        static_names: vec!["a".into()],
        cardinalities: vec![2],
        ..base_config()
    };
    assert!(matches!(PretrainedBase::new(build_model(&cfg, 0).unwrap()), Err(Error::Contract(_))));
}

#[test]
fn identity_attachment_reproduces_base() {
    let b = base();
    let s = data();
    let want = predict(&b.model, &s.test).unwrap().values;
    let v1 = attach_qkcv(&b, EncoderKind::Sce, &statics(), Variant::V1).unwrap();
    let got = predict(&v1, &s.test).unwrap().values;
    assert!(got.max_abs_diff(&want).unwrap() < 1e-12);

    let v2 = attach_qkcv(&b, EncoderKind::Mlp, &statics(), Variant::V2).unwrap();
    let got = predict(&v2, &s.test).unwrap().values;
    let scale = want.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(got.max_abs_diff(&want).unwrap() < 1e-2 * scale);

    // the backbone is copied, never re-drawn
    for (_, name, t) in b.model.params.iter() {
        assert!(v1.params.by_name(name).unwrap().bit_eq(t), "{name}");
    }
    assert!(matches!(
        attach_qkcv(&b, EncoderKind::Sce, &statics(), Variant::Vanilla),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        attach_qkcv(&b, EncoderKind::None, &statics(), Variant::V1),
        Err(Error::Contract(_))
    ));
}

#[test]
fn partitions_follow_mode_rules() {
    let b = base();
    let st = statics();
    for mode in FinetuneMode::ALL {
        let m = model_for_mode(&b, mode, &st, Variant::V2).unwrap();
        let p = partition_parameters(&m, mode).unwrap();
        assert_eq!(p.trainable_n + p.frozen_n, p.total_n);
        assert_eq!(p.total_n, m.params.numel());
        let all: BTreeSet<String> = m.params.iter().map(|(_, n, _)| n.to_string()).collect();
        assert_eq!(&p.trainable | &p.frozen, all);
        assert!(p.trainable.is_disjoint(&p.frozen));
        let frozen_layer = p.frozen.iter().any(|n| n.starts_with("layers.") && !n.contains("combiner"));
        match mode {
            FinetuneMode::Fp | FinetuneMode::FpQkcv => assert!(p.frozen.is_empty()),
            _ => assert!(frozen_layer, "{mode}"),
        }
        assert!(p.trainable.contains("patch.weight") && p.trainable.contains("head.weight"));
        if mode == FinetuneMode::PlQkcv {
            assert!(p.trainable.iter().any(|n| n.contains("combiner")));
            assert!(p.frozen.iter().all(|n| n.starts_with("layers.") || n == "pos"));
        }
    }
    let plain = model_for_mode(&b, FinetuneMode::Pl, &st, Variant::V1).unwrap();
    assert_eq!(plain.config.variant, Variant::Vanilla);
    assert!(matches!(partition_parameters(&plain, FinetuneMode::PlQkcv), Err(Error::Contract(_))));
    assert!(matches!(partition_parameters(&plain, FinetuneMode::CompressorMlp), Err(Error::Contract(_))));
}

#[test]
fn pl_qkcv_trains_under_half_of_fp_qkcv() {
    let b = base();
    for v in Variant::QKCV {
        let m = attach_qkcv(&b, EncoderKind::Sce, &statics(), v).unwrap();
        let pl = partition_parameters(&m, FinetuneMode::PlQkcv).unwrap();
        let fp = partition_parameters(&m, FinetuneMode::FpQkcv).unwrap();
        assert!((pl.trainable_n as f64) < 0.5 * fp.trainable_n as f64);
    }
}

#[test]
fn frozen_weights_survive_fine_tuning_bitwise() {
    let b = base();
    let s = data();
    let opt = TrainConfig { max_steps: 25, lr: 1e-2, ..Default::default() };
    for mode in [FinetuneMode::Pl, FinetuneMode::PlQkcv, FinetuneMode::CompressorSce] {
        let m = model_for_mode(&b, mode, &statics(), Variant::V1).unwrap();
        let policy = partition_parameters(&m, mode).unwrap();
        let before = m.clone();
        let (after, report) = finetune_run(m, &policy, &s.train, Some(&s.val), &s.test, &opt).unwrap();
        let mut moved = 0;
        for (id, name, t) in before.params.iter() {
            let same = after.params.get(id).bit_eq(t);
            if policy.frozen.contains(name) {
                assert!(same, "{mode}: frozen `{name}` changed");
            } else if !same {
                moved += 1;
            }
        }
        assert!(moved > 0, "{mode}: nothing trained");
        assert_eq!(report.trainable_params, policy.trainable_n);
        assert_eq!(report.optimizer_bytes, 2 * 8 * policy.trainable_n);
    }
}

#[test]
fn compressor_attachment_keeps_attention_vanilla() {
    let b = base();
    let m = attach_compressor(&b, EncoderKind::Mlp, &statics()).unwrap();
    assert_eq!(m.config.variant, Variant::Vanilla);
    assert!(m.compressor.is_some());
    assert!(m.params.iter().all(|(_, n, _)| !n.contains("combiner")));
    assert!(attach_compressor(&b, EncoderKind::None, &statics()).is_err());
}

#[test]
fn mode_labels_round_trip() {
    for mode in FinetuneMode::ALL {
        assert_eq!(mode.label().parse::<FinetuneMode>().unwrap(), mode);
        let json = serde_json::to_string(&mode).unwrap();
        assert_eq!(json, format!("\"{}\"", mode.label()));
    }
    assert!("PL+QKCV+X".parse::<FinetuneMode>().is_err());
}

#[test]
fn report_csv_has_expected_columns() {
    let b = base();
    let s = data();
    let m = model_for_mode(&b, FinetuneMode::Pl, &statics(), Variant::Vanilla).unwrap();
    let policy = partition_parameters(&m, FinetuneMode::Pl).unwrap();
    let opt = TrainConfig { max_steps: 2, ..Default::default() };
    let (_, r) = finetune_run(m, &policy, &s.train, None, &s.test, &opt).unwrap();
    let mut buf = Vec::new();
    write_report_csv(&[r], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "mode,variant,trainable_params,total_params,wpe,mae,p50,p90,optimizer_bytes"
    );
    assert!(lines.next().unwrap().starts_with("PL,vanilla,"));
}
