//! Consistency checks on a finished run directory.

use std::collections::BTreeMap;
use std::path::Path;

use pact_core::models::Checkpoint;
use pact_core::train::mean_std;
use pact_core::{Error, Result};

use crate::manifest::{RunManifest, MANIFEST_FILE};

/// Files that are data rather than reports and carry no manifest column.
const DATA_FILES: [&str; 2] = ["data.csv", "predictions.csv"];

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Table { header, rows })
    }

    fn col(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

fn parse(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

/// Per-group (MAE, MSE) lists from a per-seed metrics table, keyed by
/// `(model, fraction)` and kept in file order.
fn per_seed(metrics: &Table) -> BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> {
    let (m, f, a, s) = (
        metrics.col("model").unwrap_or(0),
        metrics.col("fraction").unwrap_or(0),
        metrics.col("MAE").unwrap_or(0),
        metrics.col("MSE").unwrap_or(0),
    );
    let mut groups: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &metrics.rows {
        let g = groups.entry((r[m].clone(), r[f].clone())).or_default();
        g.0.push(parse(&r[a]));
        g.1.push(parse(&r[s]));
    }
    groups
}

fn check_summary(
    name: &str,
    summary: &Table,
    groups: &BTreeMap<(String, String), (Vec<f64>, Vec<f64>)>,
    fraction: Option<&str>,
    issues: &mut Vec<String>,
) {
    let cols = ["MAE_mean", "MAE_std", "MSE_mean", "MSE_std"].map(|c| summary.col(c));
    let (Some(model_col), [Some(am), Some(asd), Some(sm), Some(ssd)]) = (summary.col("model"), cols) else {
        issues.push(format!("{name}: missing summary columns"));
        return;
    };
    let frac_col = summary.col("fraction");
    for r in &summary.rows {
        let frac = match (fraction, frac_col) {
            (Some(f), _) => f.to_string(),
            (None, Some(c)) => r[c].clone(),
            (None, None) => "1".into(),
        };
        let Some((maes, mses)) = groups.get(&(r[model_col].clone(), frac.clone())) else {
            // Rows for external predictions have no per-seed entries.
            continue;
        };
        let (ma, sa) = mean_std(maes);
        let (mm, sm_) = mean_std(mses);
        let expect = [ma, sa, mm, sm_];
        for (col, want) in [am, asd, sm, ssd].into_iter().zip(expect) {
            if parse(&r[col]).to_bits() != want.to_bits() {
                issues.push(format!(
                    "{name}: {} {} at fraction {frac} is {}, recomputed {want}",
                    r[model_col], summary.header[col], r[col]
                ));
            }
        }
    }
}

/// Returns every inconsistency found in `dir`; empty means the run checks out.
pub fn verify(dir: &Path) -> Result<Vec<String>> {
    let manifest = RunManifest::load(dir)?;
    let mut issues = Vec::new();
    let recomputed = manifest.identity.hash()?;
    if recomputed != manifest.hash {
        issues.push(format!("{MANIFEST_FILE}: recorded hash {} but contents hash to {recomputed}", manifest.hash));
    }

    let mut tables = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for entry in entries {
        let path = entry.map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?
        .path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()).map(str::to_string) else { continue };
        if !name.ends_with(".csv") || DATA_FILES.contains(&name.as_str()) {
            continue;
        }
        let table = Table::read(&path)?;
        match table.col("manifest") {
            None => issues.push(format!("{name}: no manifest column")),
            Some(c) => {
                if let Some((i, r)) = table.rows.iter().enumerate().find(|(_, r)| r[c] != manifest.hash) {
                    issues.push(format!("{name}: row {} cites manifest {} instead of {}", i + 1, r[c], manifest.hash));
                }
            }
        }
        tables.insert(name, table);
    }

    if let Some(trials) = tables.get("trials.csv") {
        for h in &trials.header {
            let lower = h.to_lowercase();
            if lower.contains("test") || h == "MAE" || h == "MSE" {
                issues.push(format!("trials.csv: column {h} looks like a test metric"));
            }
        }
    }
    if let Some(metrics) = tables.get("metrics.csv") {
        let groups = per_seed(metrics);
        if let Some(cmp) = tables.get("comparison.csv") {
            // Benchmarks train on the full split.
            let full = groups.keys().map(|k| k.1.clone()).next().unwrap_or_else(|| "1".into());
            check_summary("comparison.csv", cmp, &groups, Some(&full), &mut issues);
        }
        if let Some(scaling) = tables.get("scaling.csv") {
            check_summary("scaling.csv", scaling, &groups, None, &mut issues);
        }
    }

    let ck_dir = dir.join("checkpoints");
    if ck_dir.is_dir() {
        let entries = std::fs::read_dir(&ck_dir).map_err(|e| Error::Io {
            path: ck_dir.clone(),
            source: e,
        })?;
        for entry in entries.flatten() {
            if let Err(e) = Checkpoint::load(&entry.path()) {
                issues.push(format!("{}: {e}", entry.path().display()));
            }
        }
    }
    Ok(issues)
}
