//! The five architectures behind one interface.
//!
//! Baselines see contextual columns as ordinary features: MLP and ResNet
//! flatten them, FT-Transformer tokenizes them without offset embeddings.
//! PACT is FT-Transformer plus the offset embeddings.

pub mod checkpoint;
pub mod dense;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{EncodedDataset, FeatureSchema};
use crate::encoder::{encoder_forward, encoder_forward_cls, predict, DropoutRng, EncoderConfig};
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamSet};
use crate::tensor::{grad_check_many, GradCheckReport, Tape, Tensor, Var};
use crate::tokenizer::Tokenizer;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use dense::FlatInputs;

/// Rows per forward pass when predicting a whole dataset.
pub const PREDICT_CHUNK: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    Resnet,
    Tabtransformer,
    FtTransformer,
    Pact,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Mlp,
        ModelKind::Resnet,
        ModelKind::Tabtransformer,
        ModelKind::FtTransformer,
        ModelKind::Pact,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Resnet => "resnet",
            ModelKind::Tabtransformer => "tabtransformer",
            ModelKind::FtTransformer => "ft_transformer",
            ModelKind::Pact => "pact",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind {s}")))
    }
}

/// Hyperparameters for every kind. Fields a kind does not use are ignored.
///
/// `d` is the token width of the transformer kinds and the categorical
/// embedding width of all kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub d: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub dropout: f64,
    pub prenorm: bool,
    /// MLP hidden sizes; also the TabTransformer head.
    pub hidden: Vec<usize>,
    /// ResNet width and block count.
    pub width: usize,
    pub blocks: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        ModelConfig {
            kind: ModelKind::Pact,
            d: enc.d,
            n_layers: enc.n_layers,
            n_heads: enc.n_heads,
            ffn_mult: enc.ffn_mult,
            dropout: enc.dropout,
            prenorm: enc.prenorm,
            hidden: vec![64, 64],
            width: 64,
            blocks: 2,
        }
    }
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            ..Default::default()
        }
    }

    /// Tiny sizes for gradient checks and unit tests.
    pub fn small(kind: ModelKind) -> Self {
        ModelConfig {
            kind,
            d: 4,
            n_layers: 1,
            n_heads: 2,
            ffn_mult: 2,
            dropout: 0.0,
            prenorm: true,
            hidden: vec![6],
            width: 6,
            blocks: 1,
        }
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            d: self.d,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            ffn_mult: self.ffn_mult,
            dropout: self.dropout,
            prenorm: self.prenorm,
        }
    }

    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        if self.d == 0 {
            return Err(Error::Config("d must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        if schema.n_tokens() == 0 {
            return Err(Error::Config("schema declares no features".into()));
        }
        match self.kind {
            ModelKind::Mlp => {
                if self.hidden.contains(&0) {
                    return Err(Error::Config("hidden sizes must be >= 1".into()));
                }
            }
            ModelKind::Resnet => {
                if self.width == 0 {
                    return Err(Error::Config("resnet width must be >= 1".into()));
                }
            }
            ModelKind::Tabtransformer => {
                self.encoder().validate()?;
                if self.hidden.contains(&0) {
                    return Err(Error::Config("hidden sizes must be >= 1".into()));
                }
                if FlatInputs::new(schema).n_cat() == 0 {
                    return Err(Error::Config("tabtransformer needs categorical features".into()));
                }
            }
            ModelKind::FtTransformer => self.encoder().validate()?,
            ModelKind::Pact => {
                self.encoder().validate()?;
                if schema.n_contextual() == 0 {
                    return Err(Error::Config("pact needs contextual features in the schema".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Arch {
    Flat(FlatInputs),
    Tokens(Tokenizer),
}

/// A built model: configuration, schema and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub schema: FeatureSchema,
    pub seed: u64,
    pub params: ParamSet,
    arch: Arch,
}

impl Model {
    /// Seeded initialization: identical config, schema and seed give
    /// bit-identical parameters.
    pub fn build(config: &ModelConfig, schema: &FeatureSchema, seed: u64) -> Result<Model> {
        let mut model = Self::skeleton(config, schema, seed)?;
        let mut init = Init::new(seed);
        let p = &mut model.params;
        let d = config.d;
        match (&model.arch, config.kind) {
            (Arch::Flat(flat), ModelKind::Mlp) => {
                flat.init(&mut init, p, d)?;
                dense::init_mlp_stack(&mut init, p, "mlp", flat.width(d), &config.hidden)?;
            }
            (Arch::Flat(flat), ModelKind::Resnet) => {
                flat.init(&mut init, p, d)?;
                dense::init_resnet(&mut init, p, flat.width(d), config.width, config.blocks)?;
            }
            (Arch::Flat(flat), ModelKind::Tabtransformer) => {
                let bound = 1.0 / (d as f64).sqrt();
                flat.init(&mut init, p, d)?;
                p.insert("tab.b", init.uniform(&[flat.n_cat(), d], bound))?;
                config.encoder().init(&mut init, p, false)?;
                let input = flat.n_real() + flat.n_cat() * d;
                dense::init_mlp_stack(&mut init, p, "mlp", input, &config.hidden)?;
            }
            (Arch::Tokens(tok), _) => {
                tok.init(&mut init, p)?;
                config.encoder().init(&mut init, p, true)?;
                tok.init_offsets(&mut init, p)?;
            }
            _ => unreachable!("arch follows kind"),
        }
        Ok(model)
    }

    fn skeleton(config: &ModelConfig, schema: &FeatureSchema, seed: u64) -> Result<Model> {
        config.validate(schema)?;
        let arch = match config.kind {
            ModelKind::Mlp | ModelKind::Resnet | ModelKind::Tabtransformer => Arch::Flat(FlatInputs::new(schema)),
            ModelKind::FtTransformer => Arch::Tokens(Tokenizer::new(schema, config.d, false)?),
            ModelKind::Pact => Arch::Tokens(Tokenizer::new(schema, config.d, true)?),
        };
        Ok(Model {
            config: config.clone(),
            schema: schema.clone(),
            seed,
            params: ParamSet::new(),
            arch,
        })
    }

    /// Rebuilds a model around existing parameters, checking names and shapes.
    pub fn from_params(config: &ModelConfig, schema: &FeatureSchema, seed: u64, params: ParamSet) -> Result<Model> {
        let reference = Self::build(config, schema, seed)?;
        let same_layout = reference.params.len() == params.len()
            && reference
                .params
                .iter()
                .zip(params.iter())
                .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape());
        if !same_layout {
            return Err(Error::Config("parameters do not match the model layout".into()));
        }
        Ok(Model { params, ..reference })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn n_params(&self) -> usize {
        self.params.count()
    }

    pub fn tokenizer(&self) -> Option<&Tokenizer> {
        match &self.arch {
            Arch::Tokens(t) => Some(t),
            Arch::Flat(_) => None,
        }
    }

    /// Predictions `[B]` for a preprocessed batch. Dropout is active only
    /// when `rng` is given.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, batch: &EncodedDataset, mut rng: DropoutRng) -> Result<Var> {
        batch.conforms_to(&self.schema)?;
        if batch.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let cfg = &self.config;
        let d = cfg.d;
        match &self.arch {
            Arch::Flat(flat) => match cfg.kind {
                ModelKind::Mlp => {
                    let x = flat.input(tape, p, batch, d)?;
                    dense::mlp_stack(tape, p, "mlp", &cfg.hidden, x, cfg.dropout, &mut rng)
                }
                ModelKind::Resnet => {
                    let x = flat.input(tape, p, batch, d)?;
                    dense::resnet(tape, p, cfg.blocks, x, cfg.dropout, &mut rng)
                }
                ModelKind::Tabtransformer => {
                    let b = batch.len();
                    let m = flat.n_cat();
                    let idx = flat.indices(batch)?;
                    let e = tape.gather(p.get("emb.table")?, &idx, "embedding")?;
                    let e = tape.reshape(e, &[b, m, d])?;
                    let tokens = tape.add(p.get("tab.b")?, e)?;
                    let ctx = encoder_forward(tape, p, &cfg.encoder(), tokens, rng.as_deref_mut().map(|r| r as _))?;
                    let ctx = tape.reshape(ctx, &[b, m * d])?;
                    let x = match flat.real(tape, batch)? {
                        Some(real) => tape.concat(&[real, ctx], 1)?,
                        None => ctx,
                    };
                    dense::mlp_stack(tape, p, "mlp", &cfg.hidden, x, cfg.dropout, &mut rng)
                }
                _ => unreachable!("arch follows kind"),
            },
            Arch::Tokens(tok) => {
                let seq = tok.tokenize(tape, p, batch)?;
                let cls = encoder_forward_cls(tape, p, &cfg.encoder(), seq.tokens, rng)?;
                predict(tape, p, cls)
            }
        }
    }

    /// Evaluation-mode predictions for every row of `data`.
    pub fn predict(&self, data: &EncodedDataset) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(data.len());
        let mut tape = Tape::new();
        for start in (0..data.len()).step_by(PREDICT_CHUNK) {
            tape.clear();
            let end = (start + PREDICT_CHUNK).min(data.len());
            let batch = data.slice(start, end);
            let p = self.params.bind(&mut tape, false);
            let y = self.forward(&mut tape, &p, &batch, None)?;
            let y = tape.value(y)?;
            if !y.all_finite() {
                return Err(Error::Numeric("non-finite prediction".into()));
            }
            out.extend_from_slice(y.data());
        }
        Ok(out)
    }

    /// Finite-difference check of the gradient of `sum_i w_i * y_i` with
    /// respect to every parameter, for a batch in evaluation mode.
    pub fn grad_check(&self, batch: &EncodedDataset, eps: f64) -> Result<GradCheckReport> {
        let names: Vec<String> = self.params.names().map(str::to_string).collect();
        let inputs: Vec<Tensor> = self.params.iter().map(|(_, t)| t.clone()).collect();
        let weights: Vec<f64> = (0..batch.len()).map(|i| 1.0 + 0.25 * i as f64).collect();
        grad_check_many(
            |tape, vars| {
                let p = Bound::from_vars(names.iter().cloned(), vars);
                let y = self.forward(tape, &p, batch, None)?;
                let w = tape.constant(Tensor::vector(weights.clone()));
                let yw = tape.mul(y, w)?;
                tape.sum(yw, None, false)
            },
            &inputs,
            eps,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, Feature, GenConfig, InputRow, Preprocessor};

    fn data() -> EncodedDataset {
        let mut cfg = GenConfig::linear(12);
        cfg.gamma = 0.5;
        let (ds, _) = generate(&cfg, 0).unwrap();
        Preprocessor::fit_apply(&ds, &[]).unwrap().1
    }

    #[test]
    fn build_is_deterministic_and_all_kinds_run() {
        let batch = data();
        for kind in ModelKind::ALL {
            let cfg = ModelConfig::small(kind);
            let a = Model::build(&cfg, &batch.schema, 3).unwrap();
            let b = Model::build(&cfg, &batch.schema, 3).unwrap();
            assert_eq!(a.params, b.params, "{kind}");
            let c = Model::build(&cfg, &batch.schema, 4).unwrap();
            assert_ne!(a.params, c.params, "{kind}");
            let y = a.predict(&batch).unwrap();
            assert_eq!(y.len(), batch.len());
        }
    }

    #[test]
    fn pact_needs_context() {
        let s = FeatureSchema::new("y", 0, vec![Feature::numerical("x")]).unwrap();
        assert!(matches!(
            Model::build(&ModelConfig::small(ModelKind::Pact), &s, 0),
            Err(Error::Config(_))
        ));
        assert!(Model::build(&ModelConfig::small(ModelKind::FtTransformer), &s, 0).is_ok());
    }

    #[test]
    fn mlp_parameter_count_by_hand() {
        // c = 3, one categorical with S = 4, d = 2, hidden [8, 8]:
        // embeddings 4*2 = 8; input width 3 + 2 = 5; (5+1)*8 = 48;
        // (8+1)*8 = 72; (8+1)*1 = 9. Total 137.
        let s = FeatureSchema::new(
            "y",
            0,
            vec![
                Feature::numerical("a"),
                Feature::numerical("b"),
                Feature::numerical("c"),
                Feature::categorical("k", 4),
            ],
        )
        .unwrap();
        let cfg = ModelConfig {
            d: 2,
            hidden: vec![8, 8],
            ..ModelConfig::new(ModelKind::Mlp)
        };
        assert_eq!(Model::build(&cfg, &s, 0).unwrap().n_params(), 137);
    }

    #[test]
    fn mlp_hand_forward() {
        // Two inputs, one hidden unit: y = v * relu(w1 x1 + w2 x2 + b) + c.
        let s = FeatureSchema::new("y", 0, vec![Feature::numerical("a"), Feature::numerical("b")]).unwrap();
        let cfg = ModelConfig {
            hidden: vec![1],
            dropout: 0.0,
            ..ModelConfig::new(ModelKind::Mlp)
        };
        let mut m = Model::build(&cfg, &s, 0).unwrap();
        *m.params.get_mut("mlp.0.w").unwrap() = Tensor::matrix(2, 1, vec![0.5, -1.5]).unwrap();
        *m.params.get_mut("mlp.0.b").unwrap() = Tensor::vector(vec![0.25]);
        *m.params.get_mut("out.w").unwrap() = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        *m.params.get_mut("out.b").unwrap() = Tensor::vector(vec![-0.1]);
        let rows = [(1.0, -1.0), (0.0, 1.0)].map(|(a, b)| InputRow {
            x_cont: vec![a, b],
            x_cat: vec![],
            x_context_num: vec![],
            x_context_cat: vec![],
            context_present: vec![],
            target: 0.0,
        });
        let batch = EncodedDataset::from_rows(&s, &rows).unwrap();
        let y = m.predict(&batch).unwrap();
        let want = [2.0 * (0.5 + 1.5 + 0.25) - 0.1, -0.1];
        for (a, b) in y.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
