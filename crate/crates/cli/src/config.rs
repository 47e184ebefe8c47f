//! Run configuration file.
//!
//! Every section is optional; missing keys take the defaults below. Relative
//! paths are resolved against the directory of the config file.
//!
//! ```json
//! {
//!   "data": { "preset": "benchmark", "n": 50000, "seed": 0,
//!             "csv": null, "description": null, "split": null },
//!   "models": [ { "kind": "pact", "d": 32, "n_layers": 3 }, { "kind": "ft_transformer" } ],
//!   "train": { "batch_size": 256, "max_epochs": 200, "patience": 16, "lr": 0.001 },
//!   "seeds": 10, "first_seed": 0,
//!   "fractions": [0.05, 0.15, 0.3, 0.4, 0.5, 0.7, 0.8, 0.9],
//!   "search": { "budget": 20, "lr": [0.0001, 0.003] },
//!   "compare": { "model": "pact", "baseline": "ft_transformer" },
//!   "external": [ { "name": "gbdt", "path": "gbdt_predictions.csv" } ]
//! }
//! ```

use std::path::{Path, PathBuf};

use pact_core::data::{generate, load_csv, Dataset, DatasetDescription, GenConfig, SplitSpec};
use pact_core::models::{ModelConfig, ModelKind};
use pact_core::train::{SearchSpace, TrainConfig, DEFAULT_FRACTIONS};
use pact_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Generator preset, used when neither `csv` nor `description` is set.
    pub preset: String,
    pub n: usize,
    /// Generator seed.
    pub seed: u64,
    pub gamma: Option<f64>,
    pub sigma: Option<f64>,
    /// CSV file to load; needs `description` for the schema.
    pub csv: Option<PathBuf>,
    /// Dataset description (schema, split, generator).
    pub description: Option<PathBuf>,
    /// Overrides the description's split.
    pub split: Option<SplitSpec>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            preset: "benchmark".into(),
            n: 50_000,
            seed: 0,
            gamma: None,
            sigma: None,
            csv: None,
            description: None,
            split: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparePair {
    pub model: String,
    pub baseline: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalPredictions {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub models: Vec<ModelConfig>,
    pub train: TrainConfig,
    pub seeds: usize,
    pub first_seed: u64,
    pub fractions: Vec<f64>,
    pub search: SearchSpace,
    pub compare: Option<ComparePair>,
    pub external: Vec<ExternalPredictions>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            data: DataConfig::default(),
            models: ModelKind::ALL.iter().map(|&k| ModelConfig::new(k)).collect(),
            train: TrainConfig::default(),
            seeds: 10,
            first_seed: 0,
            fractions: DEFAULT_FRACTIONS.to_vec(),
            search: SearchSpace::default(),
            compare: Some(ComparePair {
                model: ModelKind::Pact.name().into(),
                baseline: ModelKind::FtTransformer.name().into(),
            }),
            external: Vec::new(),
        }
    }
}

impl Config {
    /// Reads `path`, or the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Config::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg: Config = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p.as_mut().filter(|p| p.is_relative()) {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.data.csv);
        resolve(&mut cfg.data.description);
        for e in &mut cfg.external {
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.seeds == 0 {
            return Err(Error::Config("seeds must be >= 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("no models configured".into()));
        }
        Ok(())
    }

    /// The configured model of `kind`, or its defaults.
    pub fn model(&self, kind: Option<ModelKind>) -> ModelConfig {
        match kind {
            None => self.models[0].clone(),
            Some(k) => self
                .models
                .iter()
                .find(|m| m.kind == k)
                .cloned()
                .unwrap_or_else(|| ModelConfig::new(k)),
        }
    }

    pub fn generator(&self) -> Result<GenConfig> {
        let mut g = GenConfig::preset(&self.data.preset, self.data.n)?;
        if let Some(v) = self.data.gamma {
            g.gamma = v;
        }
        if let Some(v) = self.data.sigma {
            g.sigma = v;
        }
        g.validate()?;
        Ok(g)
    }

    /// Loads or generates the dataset and returns it with the split to use.
    pub fn dataset(&self) -> Result<(Dataset, SplitSpec)> {
        let d = &self.data;
        let desc = d.description.as_deref().map(DatasetDescription::load).transpose()?;
        let (data, split) = match (&d.csv, desc) {
            (Some(csv), Some(desc)) => (load_csv(csv, &desc.schema)?, desc.split),
            (Some(_), None) => {
                return Err(Error::Config("data.csv needs data.description for the schema".into()));
            }
            (None, Some(desc)) => {
                let (Some(gen), Some(prov)) = (desc.generator, desc.provenance) else {
                    return Err(Error::Config("description has no generator; set data.csv".into()));
                };
                (generate(&gen, prov.seed)?.0, desc.split)
            }
            (None, None) => (generate(&self.generator()?, d.seed)?.0, SplitSpec::default()),
        };
        let split = d.split.clone().unwrap_or(split);
        split.validate()?;
        Ok((data, split))
    }
}
