//! Dataset description, CSV ingestion, preprocessing, splitting and the
//! synthetic generator.

pub mod csvio;
pub mod dataset;
pub mod description;
pub mod preprocess;
pub mod schema;
pub mod split;
pub mod synth;

pub use csvio::{load_csv, write_csv};
pub use dataset::{Batch, Column, Dataset, EncodedDataset, InputRow};
pub use description::DatasetDescription;
pub use preprocess::Preprocessor;
pub use schema::{context_column, BaseKind, Feature, FeatureKind, FeatureSchema, Group, TokenBlock};
pub use split::{split, SplitIndices, SplitSpec};
pub use synth::{generate, target_of, GenConfig, Provenance};
