//! `qkcv` command-line driver.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::attention::Variant;
use crate::csvio::fmt_f64;
use crate::error::{Error, Result};
use crate::finetune::{
    finetune_run, model_for_mode, partition_parameters, pretrain_base, write_report_csv,
    FinetuneReport, FreezePolicy, PretrainedBase, StaticsSpec,
};
use crate::forecaster::{build_model, checkpoint, evaluate, train, EncoderKind, Forecaster, MetricsReport};
use crate::static_encoder::feature_importance;

use super::config::{DataSource, RunConfig};
use super::dataset::{load_csv, Dataset, Vocabulary};
use super::export::{export_attention, validate_attention_heatmap};
use super::gradcheck::{composed_checks, primitive_checks};
use super::manifest::RunManifest;
use super::synthetic::{generate_synthetic, write_truth_csv};
use super::windows::{split_and_window, Boundaries, Splits};

/// Environment variable naming the root directory for run outputs.
pub const OUT_ROOT_ENV: &str = "QKCV_OUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "qkcv", version, about = "Category-conditioned attention forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set model.variant=v2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run seed (overrides `seed` in the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: `$QKCV_OUT_ROOT/<run_id>`, else `runs/<run_id>`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the configured synthetic dataset and its generator parameters.
    GenData(Common),
    /// Train a forecaster and report test metrics.
    Train(Common),
    /// Evaluate a checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Pretrain (or load) a base model and compare fine-tuning modes.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Pretrained base checkpoint; pretrains one when absent.
        #[arg(long)]
        base: Option<PathBuf>,
    },
    /// Finite-difference checks of every primitive and composed block.
    Gradcheck {
        #[arg(long, default_value_t = 2)]
        max_seed: u64,
    },
    /// Export attention scores, modulations and static embeddings as CSV.
    ExportAttention {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Maximum number of entities (0 = all).
        #[arg(long, default_value_t = 0)]
        samples: usize,
    },
    /// Mean VSN selection weight per static variable.
    Importance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// Run the CLI on `args` (including the program name) and return the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("qkcv: error: {e}");
            1
        }
    }
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
    manifest: RunManifest,
}

impl Run {
    fn start(command: &str, common: &Common) -> Result<Self> {
        let mut overrides = common.set.clone();
        if let Some(seed) = common.seed {
            overrides.push(format!("seed={seed}"));
        }
        let cfg = RunConfig::load(common.config.as_deref(), &overrides)?;
        let out = match &common.out {
            Some(p) => p.clone(),
            None => std::env::var_os(OUT_ROOT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("runs"))
                .join(&cfg.run_id),
        };
        std::fs::create_dir_all(&out)?;
        let mut manifest = RunManifest::new(command, &cfg.run_id, cfg.seed, cfg.to_json()?);
        manifest.add_input("config", serde_json::to_string(&cfg)?.as_bytes());
        Ok(Run { cfg, out, manifest })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(self.out.join(name), bytes)?;
        self.manifest.add_output(name, bytes);
        Ok(())
    }

    fn finish(self) -> Result<i32> {
        self.manifest.write(&self.out.join("manifest.json"))?;
        let _ = writeln!(std::io::stdout(), "outputs written to {}", self.out.display());
        Ok(0)
    }

    fn dataset(&mut self) -> Result<Dataset> {
        let d = &self.cfg.data;
        match d.source {
            DataSource::Synthetic => Ok(generate_synthetic(&d.synthetic)?.dataset),
            DataSource::Csv => {
                let path = d
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("data.path is required for csv data".into()))?;
                self.manifest.add_input("data", &std::fs::read(path)?);
                let vocab = match &d.vocabulary {
                    Some(v) => {
                        self.manifest.add_input("vocabulary", &std::fs::read(v)?);
                        Some(Vocabulary::load(Path::new(v))?)
                    }
                    None => None,
                };
                load_csv(Path::new(path), &d.schema, vocab.as_ref())
            }
        }
    }

    fn splits(&self, data: &Dataset, input_len: usize, horizon: usize) -> Result<Splits> {
        let b = Boundaries {
            train_end: self.cfg.data.train_end,
            val_end: self.cfg.data.val_end,
        };
        let s = split_and_window(data, input_len, horizon, b)?;
        if s.skipped.iter().any(|&n| n > 0) {
            eprintln!(
                "warning: skipped short segments (train/val/test): {:?}",
                s.skipped
            );
        }
        Ok(s)
    }

    fn load_checkpoint(&mut self, path: &Path) -> Result<Forecaster> {
        let bytes = std::fs::read(path)?;
        self.manifest.add_input("checkpoint", &bytes);
        checkpoint::from_bytes(&bytes)
    }
}

struct MetricsRow<'a> {
    model: &'a str,
    variant: Variant,
    mode: &'a str,
    metrics: MetricsReport,
}

fn metrics_csv(run_id: &str, rows: &[MetricsRow<'_>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run_id", "model", "variant", "mode", "wpe", "p50", "p90", "mae"])?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            run_id.to_string(),
            r.model.to_string(),
            r.variant.to_string(),
            r.mode.to_string(),
            fmt_f64(m.wpe),
            fmt_f64(m.p50),
            fmt_f64(m.p90),
            fmt_f64(m.mae),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Internal(e.to_string()))
}

fn print_table(rows: &[MetricsRow<'_>]) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{:<16} {:<8} {:<16} {:>9} {:>9} {:>9} {:>9}", "model", "variant", "mode", "WPE", "P50", "P90", "MAE");
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{:<16} {:<8} {:<16} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            r.model, r.variant.to_string(), r.mode, m.wpe, m.p50, m.p90, m.mae
        );
    }
}

fn model_label(model: &Forecaster) -> &'static str {
    match model.config.encoder {
        EncoderKind::None => "forecaster",
        EncoderKind::Sce => "forecaster+sce",
        EncoderKind::Mlp => "forecaster+mlp",
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::GenData(common) => gen_data(&common),
        Command::Train(common) => train_cmd(&common),
        Command::Evaluate { common, checkpoint } => evaluate_cmd(&common, &checkpoint),
        Command::Finetune { common, base } => finetune_cmd(&common, base.as_deref()),
        Command::Gradcheck { max_seed } => gradcheck_cmd(max_seed),
        Command::ExportAttention {
            common,
            checkpoint,
            samples,
        } => export_cmd(&common, &checkpoint, samples),
        Command::Importance { common, checkpoint } => importance_cmd(&common, &checkpoint),
    }
}

fn gen_data(common: &Common) -> Result<i32> {
    let mut run = Run::start("gen-data", common)?;
    let data = generate_synthetic(&run.cfg.data.synthetic)?;
    let mut buf = Vec::new();
    data.dataset.write_csv(&mut buf)?;
    run.write("data.csv", &buf)?;
    let mut buf = Vec::new();
    write_truth_csv(&data.truth, &mut buf)?;
    run.write("ground_truth.csv", &buf)?;
    let vocab = serde_json::to_string_pretty(&data.dataset.vocabulary)? + "\n";
    run.write("vocabulary.json", vocab.as_bytes())?;
    run.finish()
}

/// Fill the encoder's variable list from the data when the config leaves it empty.
fn resolve_statics(cfg: &mut crate::forecaster::ModelConfig, data: &Dataset) {
    if cfg.encoder != EncoderKind::None && cfg.static_names.is_empty() {
        cfg.static_names = data.vocabulary.names();
        cfg.cardinalities = data.vocabulary.cardinalities();
    }
}

fn write_checkpoint(run: &mut Run, name: &str, model: &Forecaster) -> Result<()> {
    run.write(&format!("{name}.ckpt"), &checkpoint::to_bytes(model)?)?;
    let m = serde_json::to_string_pretty(&checkpoint::manifest(model))? + "\n";
    run.write(&format!("{name}.manifest.json"), m.as_bytes())
}

fn train_cmd(common: &Common) -> Result<i32> {
    let mut run = Run::start("train", common)?;
    let data = run.dataset()?;
    let mut model_cfg = run.cfg.model.clone();
    resolve_statics(&mut model_cfg, &data);
    let splits = run.splits(&data, model_cfg.input_len, model_cfg.horizon)?;
    let model = build_model(&model_cfg, run.cfg.seed)?;
    let val = (!splits.val.is_empty()).then_some(&splits.val);
    let (model, history) = train(model, &splits.train, val, &run.cfg.train)?;
    let metrics = evaluate(&model, &splits.test)?;
    let rows = [MetricsRow {
        model: model_label(&model),
        variant: model.config.variant,
        mode: "train",
        metrics,
    }];
    print_table(&rows);
    run.write("metrics.csv", &metrics_csv(&run.cfg.run_id, &rows)?)?;
    write_checkpoint(&mut run, "model", &model)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["step", "train_loss", "val_p50"])?;
    for (step, loss) in history.train_loss.iter().enumerate() {
        let val = history
            .val_p50
            .iter()
            .find(|(s, _)| *s == step)
            .map_or(String::new(), |(_, v)| fmt_f64(*v));
        w.write_record([step.to_string(), fmt_f64(*loss), val])?;
    }
    let buf = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    run.write("history.csv", &buf)?;
    let vocab = serde_json::to_string_pretty(&data.vocabulary)? + "\n";
    run.write("vocabulary.json", vocab.as_bytes())?;
    run.finish()
}

fn evaluate_cmd(common: &Common, ckpt: &Path) -> Result<i32> {
    let mut run = Run::start("evaluate", common)?;
    let model = run.load_checkpoint(ckpt)?;
    let data = run.dataset()?;
    let splits = run.splits(&data, model.config.input_len, model.config.horizon)?;
    let rows = [MetricsRow {
        model: model_label(&model),
        variant: model.config.variant,
        mode: "evaluate",
        metrics: evaluate(&model, &splits.test)?,
    }];
    print_table(&rows);
    run.write("metrics.csv", &metrics_csv(&run.cfg.run_id, &rows)?)?;
    run.finish()
}

fn finetune_cmd(common: &Common, base_path: Option<&Path>) -> Result<i32> {
    let mut run = Run::start("finetune", common)?;
    let ft = run.cfg.finetune.clone();
    let base = match base_path {
        Some(p) => PretrainedBase::new(run.load_checkpoint(p)?)?,
        None => {
            let pre = generate_synthetic(&ft.pretrain_data)?.dataset;
            let b = Boundaries {
                train_end: ft.pretrain_train_end,
                val_end: ft.pretrain_val_end,
            };
            let s = split_and_window(&pre, ft.base.input_len, ft.base.horizon, b)?;
            let opt = crate::forecaster::TrainConfig {
                max_steps: ft.pretrain_steps,
                ..run.cfg.train.clone()
            };
            let val = (!s.val.is_empty()).then_some(&s.val);
            let base = pretrain_base(&ft.base, run.cfg.seed, &s.train, val, &opt)?;
            write_checkpoint(&mut run, "base", &base.model)?;
            base
        }
    };
    let data = run.dataset()?;
    let splits = run.splits(&data, base.model.config.input_len, base.model.config.horizon)?;
    let statics = StaticsSpec {
        names: data.vocabulary.names(),
        cardinalities: data.vocabulary.cardinalities(),
        grn_hidden: ft.grn_hidden,
    };
    let val = (!splits.val.is_empty()).then_some(&splits.val);
    let base_metrics = evaluate(&base.model, &splits.test)?;
    let mut reports: Vec<FinetuneReport> = Vec::new();
    for &mode in &ft.modes {
        let variants = if mode.uses_qkcv() { ft.variants.clone() } else { vec![Variant::Vanilla] };
        for variant in variants {
            let model = model_for_mode(&base, mode, &statics, variant)?;
            let policy: FreezePolicy = partition_parameters(&model, mode)?;
            let (_, report) = finetune_run(model, &policy, &splits.train, val, &splits.test, &run.cfg.train)?;
            eprintln!("{mode} {variant}: WPE {:.4}", report.metrics.wpe);
            reports.push(report);
        }
    }
    let mut buf = Vec::new();
    write_report_csv(&reports, &mut buf)?;
    run.write("finetune.csv", &buf)?;
    let labels: Vec<String> = reports.iter().map(|r| r.mode.label().to_string()).collect();
    let mut rows = vec![MetricsRow {
        model: "pretrained-base",
        variant: Variant::Vanilla,
        mode: "frozen",
        metrics: base_metrics,
    }];
    rows.extend(reports.iter().zip(&labels).map(|(r, l)| MetricsRow {
        model: "pretrained-base",
        variant: r.variant,
        mode: l,
        metrics: r.metrics,
    }));
    print_table(&rows);
    run.write("metrics.csv", &metrics_csv(&run.cfg.run_id, &rows)?)?;
    run.finish()
}

fn gradcheck_cmd(max_seed: u64) -> Result<i32> {
    let mut failed = Vec::new();
    let mut out = std::io::stdout().lock();
    for seed in 0..=max_seed {
        for r in primitive_checks(seed)?.into_iter().chain(composed_checks(seed)?) {
            let status = if r.passed() { "ok" } else { "FAIL" };
            let _ = writeln!(
                out,
                "seed {seed} {:<20} max_rel_err {:.3e} (tol {:.0e}) {status}",
                r.name, r.max_rel_error, r.tolerance
            );
            if !r.passed() {
                failed.push(r.name);
            }
        }
    }
    if failed.is_empty() {
        Ok(0)
    } else {
        failed.dedup();
        eprintln!("qkcv: gradcheck failed for: {}", failed.join(", "));
        Ok(1)
    }
}

fn export_cmd(common: &Common, ckpt: &Path, samples: usize) -> Result<i32> {
    let mut run = Run::start("export-attention", common)?;
    let model = run.load_checkpoint(ckpt)?;
    let data = run.dataset()?;
    let splits = run.splits(&data, model.config.input_len, model.config.horizon)?;
    let files = export_attention(&model, &splits.test, samples)?;
    for (name, bytes) in &files {
        run.write(name, bytes)?;
    }
    let n = model.config.n_patches();
    for layer in 0..model.config.n_layers {
        let path = run.out.join(format!("attention_layer{layer}.csv"));
        let worst = validate_attention_heatmap(&path, n, 1e-6)?;
        let _ = writeln!(std::io::stdout(), "layer {layer}: max |row sum - 1| = {worst:.2e}");
    }
    run.finish()
}

fn importance_cmd(common: &Common, ckpt: &Path) -> Result<i32> {
    let mut run = Run::start("importance", common)?;
    let model = run.load_checkpoint(ckpt)?;
    let encoder = model
        .encoder
        .as_ref()
        .ok_or_else(|| Error::Contract("checkpoint has no static encoder".into()))?;
    let data = run.dataset()?;
    let samples: Vec<Vec<usize>> = data.entities.iter().map(|e| e.statics.clone()).collect();
    let report = feature_importance(encoder, &model.params, &samples)?;
    for (n, w) in report.names.iter().zip(&report.weights) {
        let _ = writeln!(std::io::stdout(), "{n:<20} {w:.6}");
    }
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    run.write("importance.csv", &buf)?;
    run.finish()
}
