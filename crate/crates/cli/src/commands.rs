//! Subcommand implementations. Each returns `Ok(true)` on success and
//! `Ok(false)` when the command ran but its check failed (gradcheck).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pact_core::data::{
    generate, split, write_csv, DatasetDescription, EncodedDataset, Feature, FeatureSchema, GenConfig, Preprocessor,
    BaseKind,
};
use pact_core::hash::sha256_hex;
use pact_core::models::{Checkpoint, Model, ModelConfig, ModelKind};
use pact_core::tensor::{primitive_suite, GRAD_TOLERANCE};
use pact_core::train::{
    compare_report, evaluate, fit, multi_seed_run, prepare, random_search, scaling_experiment, score_external,
    seed_range, write_comparison_csv, write_metrics_csv, write_scaling_csv, write_trials_csv, Prepared, RunMetrics,
    SeedResult,
};
use pact_core::{Error, Result};
use serde::Serialize;

use crate::config::Config;
use crate::manifest::{RunIdentity, RunManifest};

pub const OUTPUT_ROOT_ENV: &str = "PACT_OUTPUT_ROOT";
const VERSION: &str = env!("CARGO_PKG_VERSION");

/// `--out` if given, else the command name; relative paths are placed under
/// `$PACT_OUTPUT_ROOT` when it is set.
pub fn output_dir(out: Option<&Path>, command: &str) -> PathBuf {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("runs").join(command));
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn to_value(v: &impl Serialize) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(v)?)
}

/// Writes the manifest and returns its hash.
fn manifest(
    command: &str,
    config: serde_json::Value,
    data: Option<&Prepared>,
    seeds: Vec<u64>,
    config_path: Option<&Path>,
    out: &Path,
) -> Result<String> {
    let identity = RunIdentity {
        tool_version: VERSION.into(),
        command: command.into(),
        config,
        dataset_hash: data.map(|d| d.dataset_hash.clone()).unwrap_or_default(),
        split_hash: data.map(|d| d.test_hash.clone()).unwrap_or_default(),
        seeds,
    };
    let m = RunManifest::new(identity, config_path, out)?;
    m.save(out)?;
    Ok(m.hash)
}

fn load_prepared(cfg: &Config) -> Result<Prepared> {
    let (data, spec) = cfg.dataset()?;
    prepare(&data, &spec)
}

fn save_checkpoint(dir: &Path, model: &Model, pre: &Preprocessor, seed: u64) -> Result<()> {
    let dir = dir.join("checkpoints");
    create_dir(&dir)?;
    Checkpoint::new(model, Some(pre)).save(&dir.join(format!("{}-seed{seed}.json", model.kind())))
}

fn print_runs(runs: &[RunMetrics]) {
    println!("{:<16} {:>9} {:>12} {:>12} {:>12} {:>12}", "model", "fraction", "MAE_mean", "MAE_std", "MSE_mean", "MSE_std");
    for r in runs {
        println!(
            "{:<16} {:>9} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            r.model, r.fraction, r.mae_mean, r.mae_std, r.mse_mean, r.mse_std
        );
        for f in &r.failures {
            println!("  seed {} failed: {}", f.seed, f.error);
        }
    }
}

#[derive(Serialize)]
struct Timings {
    total_seconds: f64,
    runs: BTreeMap<String, Vec<(u64, f64)>>,
}

fn timings(start: Instant, runs: &[RunMetrics]) -> Timings {
    let mut map = BTreeMap::new();
    for r in runs {
        map.insert(
            format!("{}@{}", r.model, r.fraction),
            r.seeds.iter().map(|s| (s.seed, s.wall_seconds)).collect(),
        );
    }
    Timings {
        total_seconds: start.elapsed().as_secs_f64(),
        runs: map,
    }
}

pub struct SynthArgs {
    pub preset: Option<String>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
    pub gamma: Option<f64>,
    pub sigma: Option<f64>,
}

/// Writes `data.csv`, `description.json` and the manifest.
pub fn synth(cfg: &mut Config, args: SynthArgs, config_path: Option<&Path>, out: &Path) -> Result<bool> {
    if let Some(p) = args.preset {
        cfg.data.preset = p;
    }
    if let Some(n) = args.n {
        cfg.data.n = n;
    }
    if let Some(s) = args.seed {
        cfg.data.seed = s;
    }
    cfg.data.gamma = args.gamma.or(cfg.data.gamma);
    cfg.data.sigma = args.sigma.or(cfg.data.sigma);
    let gen: GenConfig = cfg.generator()?;
    let (data, prov) = generate(&gen, cfg.data.seed)?;
    create_dir(out)?;
    write_csv(&out.join("data.csv"), &data)?;
    let desc = DatasetDescription {
        schema: data.schema.clone(),
        split: cfg.data.split.clone().unwrap_or_default(),
        generator: Some(gen),
        provenance: Some(prov),
    };
    desc.save(&out.join("description.json"))?;
    let identity = RunIdentity {
        tool_version: VERSION.into(),
        command: "synth".into(),
        config: to_value(&cfg.data)?,
        dataset_hash: data.hash(),
        split_hash: String::new(),
        seeds: vec![cfg.data.seed],
    };
    RunManifest::new(identity, config_path, out)?.save(out)?;
    println!("wrote {} rows x {} columns to {}", data.len(), data.schema.features.len() + 1, out.display());
    Ok(true)
}

/// One training run: metrics, learning curve and checkpoint.
pub fn train(cfg: &mut Config, kind: Option<ModelKind>, seed: Option<u64>, config_path: Option<&Path>, out: &Path) -> Result<bool> {
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let model_cfg = cfg.model(kind);
    cfg.train.validate()?;
    let data = load_prepared(cfg)?;
    create_dir(out)?;
    let snapshot = serde_json::json!({ "data": to_value(&cfg.data)?, "model": to_value(&model_cfg)?, "train": to_value(&cfg.train)? });
    let hash = manifest("train", snapshot, Some(&data), vec![cfg.train.seed], config_path, out)?;
    let start = Instant::now();
    let r = fit(&model_cfg, &data.train, &data.val, &cfg.train)?;
    let (mae, mse) = evaluate(&r.model, &data.test)?;
    let result = SeedResult {
        seed: cfg.train.seed,
        mae,
        mse,
        best_epoch: r.best_epoch,
        epochs_run: r.epochs_run,
        n_train: r.n_train,
        wall_seconds: r.wall_seconds,
    };
    let run = RunMetrics::from_results(model_cfg.kind.name(), cfg.train.train_fraction, &data.test_hash, vec![result], vec![]);
    write_metrics_csv(&out.join("metrics.csv"), std::slice::from_ref(&run), &hash)?;
    write_history(&out.join("history.csv"), &r.train_loss, &r.val_mae, &hash)?;
    save_checkpoint(out, &r.model, &data.preprocessor, cfg.train.seed)?;
    write_json(&out.join("timings.json"), &timings(start, std::slice::from_ref(&run)))?;
    print_runs(std::slice::from_ref(&run));
    println!("best epoch {} of {}", r.best_epoch, r.epochs_run);
    Ok(true)
}

fn write_history(path: &Path, loss: &[f64], val: &[f64], manifest: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_MAE", "manifest"])?;
    for (i, (l, v)) in loss.iter().zip(val).enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string(), v.to_string(), manifest.to_string()])?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Scores a checkpoint on the configured test split. Writes `metrics.csv`
/// and `predictions.csv` (`row,prediction`).
pub fn eval(cfg: &Config, checkpoint: &Path, config_path: Option<&Path>, out: &Path) -> Result<bool> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = ck.model()?;
    let pre = ck
        .preprocessor
        .as_ref()
        .ok_or_else(|| Error::Config("checkpoint has no preprocessor".into()))?;
    let (data, spec) = cfg.dataset()?;
    if data.schema.hash() != ck.schema_hash {
        return Err(Error::Schema("dataset schema does not match the checkpoint".into()));
    }
    let (_, _, test, indices) = split(&data, &spec)?;
    let test: EncodedDataset = pre.apply(&test)?;
    create_dir(out)?;
    let ck_text = std::fs::read(checkpoint).map_err(|e| Error::Io {
        path: checkpoint.to_path_buf(),
        source: e,
    })?;
    let snapshot = serde_json::json!({ "data": to_value(&cfg.data)?, "checkpoint": sha256_hex(&ck_text) });
    let identity = RunIdentity {
        tool_version: VERSION.into(),
        command: "eval".into(),
        config: snapshot,
        dataset_hash: data.hash(),
        split_hash: indices.test_hash(&data),
        seeds: vec![ck.seed],
    };
    let m = RunManifest::new(identity, config_path, out)?;
    m.save(out)?;
    let pred = model.predict(&test)?;
    let (mae, mse) = (pact_core::train::mae(&pred, &test.target)?, pact_core::train::mse(&pred, &test.target)?);
    let result = SeedResult {
        seed: ck.seed,
        mae,
        mse,
        best_epoch: 0,
        epochs_run: 0,
        n_train: 0,
        wall_seconds: 0.0,
    };
    let run = RunMetrics::from_results(model.kind().name(), 1.0, test.split_hash(), vec![result], vec![]);
    write_metrics_csv(&out.join("metrics.csv"), std::slice::from_ref(&run), &m.hash)?;
    let mut w = csv::Writer::from_path(out.join("predictions.csv"))?;
    w.write_record(["row", "prediction"])?;
    for (id, p) in test.row_ids.iter().zip(&pred) {
        w.write_record([id.to_string(), p.to_string()])?;
    }
    w.flush().map_err(|e| Error::Io {
        path: out.join("predictions.csv"),
        source: e,
    })?;
    print_runs(std::slice::from_ref(&run));
    Ok(true)
}

fn select_models(cfg: &Config, only: &[ModelKind]) -> Vec<ModelConfig> {
    if only.is_empty() {
        cfg.models.clone()
    } else {
        only.iter().map(|&k| cfg.model(Some(k))).collect()
    }
}

/// Multi-seed runs of every configured model plus external predictions,
/// summarized in `comparison.csv`.
pub fn benchmark(cfg: &Config, only: &[ModelKind], config_path: Option<&Path>, out: &Path) -> Result<bool> {
    cfg.validate()?;
    let models = select_models(cfg, only);
    let seeds = seed_range(cfg.first_seed, cfg.seeds);
    let data = load_prepared(cfg)?;
    create_dir(out)?;
    let snapshot = serde_json::json!({
        "data": to_value(&cfg.data)?,
        "models": to_value(&models)?,
        "train": to_value(&cfg.train)?,
        "compare": to_value(&cfg.compare)?,
        "external": to_value(&cfg.external)?,
    });
    let hash = manifest("benchmark", snapshot, Some(&data), seeds.clone(), config_path, out)?;
    let start = Instant::now();
    let mut runs = Vec::new();
    for m in &models {
        let (run, trained) = multi_seed_run(m, &cfg.train, &data, &seeds)?;
        for (model, s) in trained.iter().zip(&run.seeds) {
            save_checkpoint(out, model, &data.preprocessor, s.seed)?;
        }
        runs.push(run);
    }
    let trained_runs = runs.clone();
    for e in &cfg.external {
        runs.push(score_external(&e.path, &e.name, &data.test)?);
    }
    let pair = cfg.compare.as_ref().filter(|p| runs.iter().any(|r| r.model == p.model) && runs.iter().any(|r| r.model == p.baseline));
    let cmp = compare_report(&runs, pair.map(|p| (p.model.as_str(), p.baseline.as_str())))?;
    write_metrics_csv(&out.join("metrics.csv"), &trained_runs, &hash)?;
    write_comparison_csv(&out.join("comparison.csv"), &cmp, &hash)?;
    write_json(&out.join("comparison.json"), &cmp)?;
    write_json(&out.join("timings.json"), &timings(start, &trained_runs))?;
    print_runs(&runs);
    if let Some(imp) = &cmp.improvement {
        println!(
            "{} vs {}: MAE {:+.2}%, MSE {:+.2}%",
            imp.model, imp.baseline, imp.mae_pct, imp.mse_pct
        );
    }
    Ok(true)
}

/// Mean/std test metrics per model at each training fraction.
pub fn scaling(cfg: &Config, only: &[ModelKind], config_path: Option<&Path>, out: &Path) -> Result<bool> {
    cfg.validate()?;
    let models = select_models(cfg, only);
    let seeds = seed_range(cfg.first_seed, cfg.seeds);
    let data = load_prepared(cfg)?;
    create_dir(out)?;
    let snapshot = serde_json::json!({
        "data": to_value(&cfg.data)?,
        "models": to_value(&models)?,
        "train": to_value(&cfg.train)?,
        "fractions": to_value(&cfg.fractions)?,
    });
    let hash = manifest("scaling", snapshot, Some(&data), seeds.clone(), config_path, out)?;
    let start = Instant::now();
    let runs = scaling_experiment(&models, &cfg.train, &data, &cfg.fractions, &seeds)?;
    write_scaling_csv(&out.join("scaling.csv"), &runs, &hash)?;
    write_metrics_csv(&out.join("metrics.csv"), &runs, &hash)?;
    write_json(&out.join("timings.json"), &timings(start, &runs))?;
    print_runs(&runs);
    Ok(true)
}

#[derive(Serialize)]
struct Best<'a> {
    trial: usize,
    model: &'a ModelConfig,
    train: &'a pact_core::train::TrainConfig,
}

/// Random search on train/val only; writes `trials.csv` and `best.json`.
pub fn search(cfg: &mut Config, kind: Option<ModelKind>, seed: Option<u64>, budget: Option<usize>, config_path: Option<&Path>, out: &Path) -> Result<bool> {
    if let Some(s) = seed {
        cfg.search.seed = s;
    }
    if let Some(b) = budget {
        cfg.search.budget = b;
    }
    let model_cfg = cfg.model(kind);
    cfg.search.validate()?;
    let data = load_prepared(cfg)?;
    create_dir(out)?;
    let snapshot = serde_json::json!({
        "data": to_value(&cfg.data)?,
        "model": to_value(&model_cfg)?,
        "train": to_value(&cfg.train)?,
        "search": to_value(&cfg.search)?,
    });
    let hash = manifest("search", snapshot, Some(&data), vec![cfg.search.seed], config_path, out)?;
    let start = Instant::now();
    let result = random_search(&cfg.search, &model_cfg, &cfg.train, &data.train, &data.val)?;
    write_trials_csv(&out.join("trials.csv"), &result.trials, &hash)?;
    write_json(
        &out.join("best.json"),
        &Best {
            trial: result.best_trial,
            model: &result.best_model,
            train: &result.best_train,
        },
    )?;
    write_json(&out.join("timings.json"), &serde_json::json!({ "total_seconds": start.elapsed().as_secs_f64() }))?;
    for t in &result.trials {
        println!("trial {:>3}  val MAE {:>12.6}  {}", t.trial, t.val_mae, t.status);
    }
    println!("best trial {}", result.best_trial);
    Ok(true)
}

/// Schema with every feature kind, used for gradient checks.
fn gradcheck_schema() -> Result<FeatureSchema> {
    FeatureSchema::new(
        "y",
        2,
        vec![
            Feature::numerical("a"),
            Feature::numerical("b"),
            Feature::categorical("k", 3),
            Feature::categorical("g", 2),
            Feature::contextual("r", BaseKind::Numerical, -2),
            Feature::contextual("r", BaseKind::Numerical, 1),
            Feature::contextual("c", BaseKind::Categorical { cardinality: 3 }, 2),
        ],
    )
}

fn gradcheck_batch(schema: &FeatureSchema, n: usize, seed: u64) -> Result<EncodedDataset> {
    use pact_core::data::InputRow;
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let t = (i as f64 + 1.0) * 0.37 + seed as f64 * 0.11;
        rows.push(InputRow {
            x_cont: vec![t.sin(), (2.0 * t).cos()],
            x_cat: vec![i % 3, (i + 1) % 2],
            x_context_num: vec![(3.0 * t).sin(), 0.5 - t.cos()],
            x_context_cat: vec![(i + 2) % 3],
            context_present: vec![true, i % 2 == 0, i != 1],
            target: t,
        });
    }
    EncodedDataset::from_rows(schema, &rows)
}

/// Gradient checks of every primitive and of the selected models.
pub fn gradcheck(kinds: &[ModelKind], small: bool, batch: usize, seed: u64) -> Result<bool> {
    let mut worst = 0.0f64;
    for (name, err) in primitive_suite(seed)? {
        println!("{name:<24} {err:.3e}");
        worst = worst.max(err);
    }
    let schema = gradcheck_schema()?;
    let data = gradcheck_batch(&schema, batch.max(1), seed)?;
    let kinds = if kinds.is_empty() { &[ModelKind::Pact][..] } else { kinds };
    for &kind in kinds {
        let cfg = if small { ModelConfig::small(kind) } else { ModelConfig::new(kind) };
        let model = Model::build(&cfg, &schema, seed)?;
        let report = model.grad_check(&data, 1e-5)?;
        println!("{:<24} {:.3e}  ({} parameters)", format!("model {kind}"), report.max_rel_error, model.n_params());
        worst = worst.max(report.max_rel_error);
    }
    let ok = worst < GRAD_TOLERANCE;
    println!("max relative error {worst:.3e} ({})", if ok { "ok" } else { "FAILED" });
    Ok(ok)
}
