//! Comparison tables and CSV reports.
//!
//! Every report row ends with a `manifest` column holding the hash of the
//! run manifest that produced it. Floats use shortest round-trip formatting,
//! so values read back from a report are bit-identical to those written.
//! Wall-clock times are kept out of CSV reports so reruns are byte-identical.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::{RunMetrics, SeedResult, Trial};
use super::metrics::{mae, mse, relative_improvement};
use crate::data::EncodedDataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
}

/// Relative improvement of `model` over `baseline`, in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub model: String,
    pub baseline: String,
    pub mae_pct: f64,
    pub mse_pct: f64,
}

impl Improvement {
    pub fn from_rows(model: &ComparisonRow, baseline: &ComparisonRow) -> Self {
        Improvement {
            model: model.model.clone(),
            baseline: baseline.model.clone(),
            mae_pct: relative_improvement(baseline.mae_mean, model.mae_mean),
            mse_pct: relative_improvement(baseline.mse_mean, model.mse_mean),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub improvement: Option<Improvement>,
    pub test_hash: String,
}

/// Table of mean/std test metrics per model plus the improvement of
/// `pair.0` over `pair.1`. Refuses runs evaluated on different test splits.
pub fn compare_report(runs: &[RunMetrics], pair: Option<(&str, &str)>) -> Result<Comparison> {
    let first = runs.first().ok_or_else(|| Error::Config("nothing to compare".into()))?;
    if let Some(r) = runs.iter().find(|r| r.test_hash != first.test_hash) {
        return Err(Error::SplitMismatch {
            expected: first.test_hash.clone(),
            found: format!("{} ({})", r.test_hash, r.model),
        });
    }
    let rows: Vec<ComparisonRow> = runs
        .iter()
        .map(|r| ComparisonRow {
            model: r.model.clone(),
            mae_mean: r.mae_mean,
            mae_std: r.mae_std,
            mse_mean: r.mse_mean,
            mse_std: r.mse_std,
        })
        .collect();
    let improvement = match pair {
        None => None,
        Some((model, baseline)) => {
            let find = |name: &str| {
                rows.iter()
                    .find(|r| r.model == name)
                    .ok_or_else(|| Error::Config(format!("model {name} is not in the comparison")))
            };
            Some(Improvement::from_rows(find(model)?, find(baseline)?))
        }
    };
    Ok(Comparison {
        rows,
        improvement,
        test_hash: first.test_hash.clone(),
    })
}

/// Scores an external prediction file (`row,prediction`, where `row` is the
/// dataset row id) against the test split, using the same metric code.
pub fn score_external(path: &Path, name: &str, test: &EncodedDataset) -> Result<RunMetrics> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let position: std::collections::HashMap<usize, usize> =
        test.row_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut pred = vec![f64::NAN; test.len()];
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 2 {
            return Err(parse_err(line, "expected two columns: row,prediction".into()));
        }
        let id: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad row id {:?}", &record[0])))?;
        let value: f64 = record[1]
            .trim()
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| parse_err(line, format!("bad prediction {:?}", &record[1])))?;
        let &i = position
            .get(&id)
            .ok_or_else(|| parse_err(line, format!("row {id} is not in the test split")))?;
        if !seen.insert(id) {
            return Err(parse_err(line, format!("row {id} predicted twice")));
        }
        pred[i] = value;
    }
    if seen.len() != test.len() {
        return Err(Error::Schema(format!(
            "{} covers {} of {} test rows",
            path.display(),
            seen.len(),
            test.len()
        )));
    }
    let result = SeedResult {
        seed: 0,
        mae: mae(&pred, &test.target)?,
        mse: mse(&pred, &test.target)?,
        best_epoch: 0,
        epochs_run: 0,
        n_train: 0,
        wall_seconds: 0.0,
    };
    Ok(RunMetrics::from_results(name, 1.0, test.split_hash(), vec![result], vec![]))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Per-seed rows: `model,seed,fraction,best_epoch,epochs,n_train,MAE,MSE,manifest`.
pub fn write_metrics_csv(path: &Path, runs: &[RunMetrics], manifest: &str) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["model", "seed", "fraction", "best_epoch", "epochs", "n_train", "MAE", "MSE", "manifest"])?;
    for r in runs {
        for s in &r.seeds {
            w.write_record([
                r.model.clone(),
                s.seed.to_string(),
                r.fraction.to_string(),
                s.best_epoch.to_string(),
                s.epochs_run.to_string(),
                s.n_train.to_string(),
                s.mae.to_string(),
                s.mse.to_string(),
                manifest.to_string(),
            ])?;
        }
    }
    finish(w, path)
}

/// Comparison table: `model,MAE_mean,MAE_std,MSE_mean,MSE_std,manifest`.
pub fn write_comparison_csv(path: &Path, cmp: &Comparison, manifest: &str) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["model", "MAE_mean", "MAE_std", "MSE_mean", "MSE_std", "manifest"])?;
    for r in &cmp.rows {
        w.write_record([
            r.model.clone(),
            r.mae_mean.to_string(),
            r.mae_std.to_string(),
            r.mse_mean.to_string(),
            r.mse_std.to_string(),
            manifest.to_string(),
        ])?;
    }
    finish(w, path)
}

/// Plot data: `fraction,model,MAE_mean,MAE_std,MSE_mean,MSE_std,n_seeds,manifest`.
pub fn write_scaling_csv(path: &Path, runs: &[RunMetrics], manifest: &str) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["fraction", "model", "MAE_mean", "MAE_std", "MSE_mean", "MSE_std", "n_seeds", "manifest"])?;
    for r in runs {
        w.write_record([
            r.fraction.to_string(),
            r.model.clone(),
            r.mae_mean.to_string(),
            r.mae_std.to_string(),
            r.mse_mean.to_string(),
            r.mse_std.to_string(),
            r.seeds.len().to_string(),
            manifest.to_string(),
        ])?;
    }
    finish(w, path)
}

/// Search log: `trial,model,d,n_layers,hidden,width,blocks,dropout,lr,
/// weight_decay,best_epoch,val_MAE,status,manifest`. There are no test
/// columns; search never sees the test split.
pub fn write_trials_csv(path: &Path, trials: &[Trial], manifest: &str) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "trial",
        "model",
        "d",
        "n_layers",
        "hidden",
        "width",
        "blocks",
        "dropout",
        "lr",
        "weight_decay",
        "best_epoch",
        "val_MAE",
        "status",
        "manifest",
    ])?;
    for t in trials {
        let m = &t.model;
        let hidden: Vec<String> = m.hidden.iter().map(usize::to_string).collect();
        w.write_record([
            t.trial.to_string(),
            m.kind.to_string(),
            m.d.to_string(),
            m.n_layers.to_string(),
            hidden.join(" "),
            m.width.to_string(),
            m.blocks.to_string(),
            m.dropout.to_string(),
            t.lr.to_string(),
            t.weight_decay.to_string(),
            t.best_epoch.to_string(),
            t.val_mae.to_string(),
            t.status.clone(),
            manifest.to_string(),
        ])?;
    }
    finish(w, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(model: &str, mae: f64, mse: f64, hash: &str) -> RunMetrics {
        let s = SeedResult {
            seed: 0,
            mae,
            mse,
            best_epoch: 1,
            epochs_run: 1,
            n_train: 1,
            wall_seconds: 0.0,
        };
        RunMetrics::from_results(model, 1.0, hash, vec![s], vec![])
    }

    #[test]
    fn improvement_from_reported_values() {
        let runs = [run("ft_transformer", 38.07, 448.90, "h"), run("pact", 37.13, 351.01, "h")];
        let cmp = compare_report(&runs, Some(("pact", "ft_transformer"))).unwrap();
        let imp = cmp.improvement.unwrap();
        assert!((imp.mae_pct - 2.47).abs() < 0.005, "{}", imp.mae_pct);
        assert!((imp.mse_pct - 21.81).abs() < 0.005, "{}", imp.mse_pct);
    }

    #[test]
    fn identical_metrics_give_zero() {
        let runs = [run("a", 2.0, 3.0, "h"), run("b", 2.0, 3.0, "h")];
        let imp = compare_report(&runs, Some(("a", "b"))).unwrap().improvement.unwrap();
        assert_eq!((imp.mae_pct, imp.mse_pct), (0.0, 0.0));
    }

    #[test]
    fn split_mismatch_refused() {
        let runs = [run("a", 1.0, 1.0, "h1"), run("b", 1.0, 1.0, "h2")];
        assert!(matches!(compare_report(&runs, None), Err(Error::SplitMismatch { .. })));
    }
}
