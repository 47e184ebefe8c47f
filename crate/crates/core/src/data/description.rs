use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::FeatureSchema;
use super::split::SplitSpec;
use super::synth::{GenConfig, Provenance};
use crate::error::{Error, Result};

/// JSON dataset description: the schema (which names the target and the
/// window), the split to apply, and, for generated data, the generator
/// parameters and the drawn coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescription {
    pub schema: FeatureSchema,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GenConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl DatasetDescription {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let desc: DatasetDescription = serde_json::from_str(&text)?;
        desc.schema.validate()?;
        desc.split.validate()?;
        Ok(desc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::generate;

    #[test]
    fn round_trip() {
        let cfg = GenConfig::linear(10);
        let (ds, prov) = generate(&cfg, 1).unwrap();
        let desc = DatasetDescription {
            schema: ds.schema.clone(),
            split: SplitSpec::default(),
            generator: Some(cfg),
            provenance: Some(prov),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        desc.save(&path).unwrap();
        assert_eq!(DatasetDescription::load(&path).unwrap(), desc);
    }

    #[test]
    fn split_defaults_when_omitted() {
        let text = r#"{"schema":{"target":"y","window":0,"features":[{"name":"x","kind":"numerical"}]}}"#;
        let desc: DatasetDescription = serde_json::from_str(text).unwrap();
        assert_eq!(desc.split, SplitSpec::default());
    }
}
