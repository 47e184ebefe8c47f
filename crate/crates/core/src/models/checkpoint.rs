//! JSON checkpoint container.
//!
//! ```text
//! { "version": 1, "config": {..}, "schema": {..}, "schema_hash": "..",
//!   "seed": 0, "params": { "<name>": { "shape": [..], "data": [..] }, .. },
//!   "preprocessor": {..} }
//! ```
//!
//! Floats are written with shortest round-trip formatting, so a reload is
//! bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::data::{FeatureSchema, Preprocessor};
use crate::error::{Error, Result};
use crate::params::ParamSet;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub schema: FeatureSchema,
    pub schema_hash: String,
    pub seed: u64,
    pub params: ParamSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocessor: Option<Preprocessor>,
}

impl Checkpoint {
    pub fn new(model: &Model, preprocessor: Option<&Preprocessor>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            schema: model.schema.clone(),
            schema_hash: model.schema.hash(),
            seed: model.seed,
            params: model.params.clone(),
            preprocessor: preprocessor.cloned(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        if ck.schema.hash() != ck.schema_hash {
            return Err(Error::Schema("checkpoint schema does not match its recorded hash".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn model(&self) -> Result<Model> {
        Model::from_params(&self.config, &self.schema, self.seed, self.params.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, GenConfig};
    use crate::models::ModelKind;

    #[test]
    fn round_trip_is_bit_exact() {
        let (ds, _) = generate(&GenConfig::linear(8), 1).unwrap();
        let (pre, enc, _) = Preprocessor::fit_apply(&ds, &[]).unwrap();
        for kind in ModelKind::ALL {
            let m = Model::build(&super::super::ModelConfig::small(kind), &ds.schema, 2).unwrap();
            let text = Checkpoint::new(&m, Some(&pre)).to_json().unwrap();
            let back = Checkpoint::from_json(&text).unwrap();
            assert_eq!(back.preprocessor.as_ref(), Some(&pre));
            let m2 = back.model().unwrap();
            assert_eq!(m2, m);
            let (a, b) = (m.predict(&enc).unwrap(), m2.predict(&enc).unwrap());
            assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn version_is_checked() {
        let (ds, _) = generate(&GenConfig::linear(8), 1).unwrap();
        let m = Model::build(&ModelConfig::small(ModelKind::Mlp), &ds.schema, 2).unwrap();
        let mut ck = Checkpoint::new(&m, None);
        ck.version = 99;
        let text = serde_json::to_string(&ck).unwrap();
        assert!(Checkpoint::from_json(&text).is_err());
    }
}
