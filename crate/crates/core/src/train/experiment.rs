//! Multi-seed runs, random search and train-size scaling.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{evaluate, fit, TrainConfig};
use super::metrics::mean_std;
use crate::data::{split, Dataset, EncodedDataset, Preprocessor, SplitIndices, SplitSpec};
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig, ModelKind};

/// Preprocessed train/val/test splits of one dataset.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub preprocessor: Preprocessor,
    pub train: EncodedDataset,
    pub val: EncodedDataset,
    pub test: EncodedDataset,
    pub indices: SplitIndices,
    pub dataset_hash: String,
    pub test_hash: String,
}

/// Splits `data`, fits the preprocessor on the training split and applies
/// it to all three.
pub fn prepare(data: &Dataset, spec: &SplitSpec) -> Result<Prepared> {
    let (train, val, test, indices) = split(data, spec)?;
    let (preprocessor, train, rest) = Preprocessor::fit_apply(&train, &[&val, &test])?;
    let [val, test]: [EncodedDataset; 2] = rest.try_into().expect("two held-out splits");
    let test_hash = indices.test_hash(data);
    Ok(Prepared {
        preprocessor,
        train,
        val,
        test,
        indices,
        dataset_hash: data.hash(),
        test_hash,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub mae: f64,
    pub mse: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub n_train: usize,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

/// Test metrics of one model over several seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub model: String,
    pub fraction: f64,
    pub seeds: Vec<SeedResult>,
    pub failures: Vec<SeedFailure>,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub test_hash: String,
}

impl RunMetrics {
    /// Aggregates per-seed results with [`mean_std`].
    pub fn from_results(
        model: impl Into<String>,
        fraction: f64,
        test_hash: impl Into<String>,
        seeds: Vec<SeedResult>,
        failures: Vec<SeedFailure>,
    ) -> Self {
        let maes: Vec<f64> = seeds.iter().map(|s| s.mae).collect();
        let mses: Vec<f64> = seeds.iter().map(|s| s.mse).collect();
        let (mae_mean, mae_std) = mean_std(&maes);
        let (mse_mean, mse_std) = mean_std(&mses);
        RunMetrics {
            model: model.into(),
            fraction,
            seeds,
            failures,
            mae_mean,
            mae_std,
            mse_mean,
            mse_std,
            test_hash: test_hash.into(),
        }
    }
}

/// Seeds `first..first + n`.
pub fn seed_range(first: u64, n: usize) -> Vec<u64> {
    (first..first + n as u64).collect()
}

/// Trains and evaluates one model per seed (in parallel). Failed seeds are
/// recorded; the run fails only if every seed does.
pub fn multi_seed_run(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    data: &Prepared,
    seeds: &[u64],
) -> Result<(RunMetrics, Vec<Model>)> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let outcomes: Vec<(u64, Result<(SeedResult, Model)>)> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = TrainConfig { seed, ..train_cfg.clone() };
            let run = fit(model_cfg, &data.train, &data.val, &cfg).and_then(|r| {
                let (mae, mse) = evaluate(&r.model, &data.test)?;
                let res = SeedResult {
                    seed,
                    mae,
                    mse,
                    best_epoch: r.best_epoch,
                    epochs_run: r.epochs_run,
                    n_train: r.n_train,
                    wall_seconds: r.wall_seconds,
                };
                Ok((res, r.model))
            });
            (seed, run)
        })
        .collect();
    let mut results = Vec::new();
    let mut models = Vec::new();
    let mut failures = Vec::new();
    let mut first_error = None;
    for (seed, outcome) in outcomes {
        match outcome {
            Ok((r, m)) => {
                results.push(r);
                models.push(m);
            }
            Err(e) => {
                failures.push(SeedFailure {
                    seed,
                    error: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if results.is_empty() {
        return Err(first_error.expect("no seeds succeeded"));
    }
    let metrics = RunMetrics::from_results(
        model_cfg.kind.name(),
        train_cfg.train_fraction,
        &data.test_hash,
        results,
        failures,
    );
    Ok((metrics, models))
}

/// Bounds for random search. Pin a dimension by giving equal bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    /// Learning rate, sampled log-uniformly.
    pub lr: [f64; 2],
    /// Token/embedding width; rounded up to a multiple of `n_heads` for
    /// attention models.
    pub d: [usize; 2],
    /// Transformer layers, ResNet blocks, or MLP hidden-layer count.
    pub depth: [usize; 2],
    /// MLP/TabTransformer hidden width and ResNet width.
    pub width: [usize; 2],
    pub dropout: [f64; 2],
    pub weight_decay: [f64; 2],
    pub budget: usize,
    /// Stop launching trials after this many seconds. Off by default, since
    /// a wall-clock limit makes the trial count machine-dependent.
    pub time_budget_secs: Option<f64>,
    pub seed: u64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            lr: [1e-4, 3e-3],
            d: [8, 32],
            depth: [1, 3],
            width: [16, 128],
            dropout: [0.0, 0.2],
            weight_decay: [0.0, 0.0],
            budget: 20,
            time_budget_secs: None,
            seed: 0,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("search space: {m}")));
        if !(self.lr[0] > 0.0 && self.lr[0] <= self.lr[1]) {
            return fail("lr bounds must satisfy 0 < lo <= hi");
        }
        if self.d[0] == 0 || self.d[0] > self.d[1] || self.width[0] == 0 || self.width[0] > self.width[1] {
            return fail("d and width bounds must satisfy 1 <= lo <= hi");
        }
        if self.depth[0] > self.depth[1] {
            return fail("depth bounds must satisfy lo <= hi");
        }
        if !(0.0 <= self.dropout[0] && self.dropout[0] <= self.dropout[1] && self.dropout[1] < 1.0) {
            return fail("dropout bounds must satisfy 0 <= lo <= hi < 1");
        }
        if !(0.0 <= self.weight_decay[0] && self.weight_decay[0] <= self.weight_decay[1]) {
            return fail("weight_decay bounds must satisfy 0 <= lo <= hi");
        }
        if self.budget == 0 {
            return fail("budget must be >= 1");
        }
        Ok(())
    }

    /// Draws one configuration on top of `base`.
    pub fn sample(&self, rng: &mut impl Rng, base_model: &ModelConfig, base_train: &TrainConfig) -> (ModelConfig, TrainConfig) {
        let uniform = |rng: &mut dyn rand::RngCore, [lo, hi]: [f64; 2]| if lo == hi { lo } else { rng.random_range(lo..hi) };
        let lr = if self.lr[0] == self.lr[1] {
            self.lr[0]
        } else {
            rng.random_range(self.lr[0].ln()..self.lr[1].ln()).exp()
        };
        let d = rng.random_range(self.d[0]..=self.d[1]);
        let depth = rng.random_range(self.depth[0]..=self.depth[1]);
        let width = rng.random_range(self.width[0]..=self.width[1]);
        let dropout = uniform(rng, self.dropout);
        let weight_decay = uniform(rng, self.weight_decay);

        let mut m = base_model.clone();
        m.dropout = dropout;
        match m.kind {
            ModelKind::Mlp => {
                m.d = d;
                m.hidden = vec![width; depth.max(1)];
            }
            ModelKind::Resnet => {
                m.d = d;
                m.width = width;
                m.blocks = depth;
            }
            ModelKind::Tabtransformer | ModelKind::FtTransformer | ModelKind::Pact => {
                m.d = d.div_ceil(m.n_heads) * m.n_heads;
                m.n_layers = depth;
                if m.kind == ModelKind::Tabtransformer {
                    m.hidden = vec![width; m.hidden.len().max(1)];
                }
            }
        }
        let mut t = base_train.clone();
        t.adam.lr = lr;
        t.adam.weight_decay = weight_decay;
        (m, t)
    }
}

/// One search trial. Only validation metrics are recorded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial: usize,
    pub model: ModelConfig,
    pub lr: f64,
    pub weight_decay: f64,
    pub best_epoch: usize,
    pub val_mae: f64,
    pub status: String,
}

#[derive(Clone, Debug)]
pub struct SearchResult {
    pub best_model: ModelConfig,
    pub best_train: TrainConfig,
    pub best_trial: usize,
    pub trials: Vec<Trial>,
}

/// Seeded random search minimizing validation MAE. Sees only the training
/// and validation splits.
pub fn random_search(
    space: &SearchSpace,
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    train: &EncodedDataset,
    val: &EncodedDataset,
) -> Result<SearchResult> {
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(space.seed);
    let candidates: Vec<(ModelConfig, TrainConfig)> = (0..space.budget)
        .map(|_| space.sample(&mut rng, base_model, base_train))
        .collect();
    let start = Instant::now();
    let trials: Vec<Trial> = candidates
        .par_iter()
        .enumerate()
        .map(|(i, (m, t))| {
            let mut trial = Trial {
                trial: i,
                model: m.clone(),
                lr: t.adam.lr,
                weight_decay: t.adam.weight_decay,
                best_epoch: 0,
                val_mae: f64::NAN,
                status: "ok".into(),
            };
            if space.time_budget_secs.is_some_and(|limit| start.elapsed().as_secs_f64() > limit) {
                trial.status = "skipped: time budget exhausted".into();
                return trial;
            }
            match fit(m, train, val, t) {
                Ok(r) => {
                    trial.best_epoch = r.best_epoch;
                    trial.val_mae = r.best_val_mae;
                }
                Err(e) => trial.status = format!("failed: {e}"),
            }
            trial
        })
        .collect();
    let best = trials
        .iter()
        .filter(|t| t.status == "ok")
        .min_by(|a, b| a.val_mae.total_cmp(&b.val_mae).then(a.trial.cmp(&b.trial)));
    let Some(best) = best else {
        return Err(Error::SearchFailed { trials: trials.len() });
    };
    let (best_model, best_train) = candidates[best.trial].clone();
    Ok(SearchResult {
        best_model,
        best_train,
        best_trial: best.trial,
        trials,
    })
}

/// Train-size fractions swept by default.
pub const DEFAULT_FRACTIONS: [f64; 8] = [0.05, 0.15, 0.3, 0.4, 0.5, 0.7, 0.8, 0.9];

/// Multi-seed runs of every model at every training fraction, in
/// `(fraction, model)` order.
pub fn scaling_experiment(
    models: &[ModelConfig],
    train_cfg: &TrainConfig,
    data: &Prepared,
    fractions: &[f64],
    seeds: &[u64],
) -> Result<Vec<RunMetrics>> {
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(Error::Config(format!("fraction {f} outside (0, 1]")));
    }
    let mut out = Vec::new();
    for &f in fractions {
        for m in models {
            let cfg = TrainConfig {
                train_fraction: f,
                ..train_cfg.clone()
            };
            out.push(multi_seed_run(m, &cfg, data, seeds)?.0);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GenConfig};

    fn prepared() -> Prepared {
        let (ds, _) = generate(&GenConfig::linear(60), 0).unwrap();
        prepare(&ds, &SplitSpec::default()).unwrap()
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            max_epochs: 3,
            patience: 2,
            ..Default::default()
        }
    }

    #[test]
    fn single_seed_has_zero_std() {
        let data = prepared();
        let (m, models) = multi_seed_run(&ModelConfig::small(ModelKind::Mlp), &quick(), &data, &[4]).unwrap();
        assert_eq!(models.len(), 1);
        assert_eq!(m.mae_mean, m.seeds[0].mae);
        assert_eq!(m.mae_std, 0.0);
    }

    #[test]
    fn duplicate_seeds_have_zero_std() {
        let data = prepared();
        let (m, _) = multi_seed_run(&ModelConfig::small(ModelKind::Mlp), &quick(), &data, &[1, 1, 1]).unwrap();
        assert_eq!(m.mae_std, 0.0);
        assert_eq!(m.mse_std, 0.0);
    }

    #[test]
    fn pinned_space_returns_the_point() {
        let data = prepared();
        let space = SearchSpace {
            lr: [2e-3, 2e-3],
            d: [4, 4],
            depth: [1, 1],
            width: [5, 5],
            dropout: [0.0, 0.0],
            budget: 2,
            ..Default::default()
        };
        let base = ModelConfig::small(ModelKind::Mlp);
        let r = random_search(&space, &base, &quick(), &data.train, &data.val).unwrap();
        assert_eq!(r.best_train.adam.lr, 2e-3);
        assert_eq!(r.best_model.hidden, vec![5]);
        assert_eq!(r.trials.len(), 2);
    }

    #[test]
    fn fraction_one_is_plain_run() {
        let data = prepared();
        let cfg = ModelConfig::small(ModelKind::Mlp);
        let a = multi_seed_run(&cfg, &quick(), &data, &[0]).unwrap().0;
        let b = scaling_experiment(&[cfg], &quick(), &data, &[1.0], &[0]).unwrap();
        assert_eq!(b[0].seeds[0].mae, a.seeds[0].mae);
        assert!(scaling_experiment(&[], &quick(), &data, &[0.0], &[0]).is_err());
    }
}
