mod common;

use pact_core::data::{Feature, FeatureSchema};
use pact_core::models::{Model, ModelConfig, ModelKind};
use pact_core::params::{Init, ParamSet};
use pact_core::tensor::{Tape, Tensor};
use pact_core::tokenizer::Tokenizer;

#[test]
fn zero_input_gives_bias_token() {
    let schema = FeatureSchema::new("y", 0, vec![Feature::numerical("a"), Feature::numerical("b")]).unwrap();
    let tok = Tokenizer::new(&schema, 3, false).unwrap();
    let mut params = ParamSet::new();
    tok.init(&mut Init::new(4), &mut params).unwrap();
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, false);
    let t = tok.tokenize_numerical(&mut tape, &p, &[0.0, 0.0]).unwrap();
    assert_eq!(tape.value(t).unwrap().data(), params.get("tok.num.b").unwrap().data());
}

fn tokens(model: &Model, data: &pact_core::data::EncodedDataset) -> Tensor {
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, false);
    let seq = model.tokenizer().unwrap().tokenize(&mut tape, &p, data).unwrap();
    tape.value(seq.tokens).unwrap().clone()
}

#[test]
fn pact_with_zero_offsets_is_ft_transformer() {
    let data = common::encoded(10, 3);
    for prenorm in [true, false] {
        let mk = |kind| ModelConfig {
            prenorm,
            ..ModelConfig::small(kind)
        };
        let ft = Model::build(&mk(ModelKind::FtTransformer), &data.schema, 11).unwrap();
        let mut pact = Model::build(&mk(ModelKind::Pact), &data.schema, 11).unwrap();

        // Same seed: every parameter but the offsets is shared.
        let mut shared = pact.params.clone();
        shared.remove("tok.offset");
        assert_eq!(shared, ft.params);

        for v in pact.params.get_mut("tok.offset").unwrap().data_mut() {
            *v = 0.0;
        }
        let (a, b) = (tokens(&ft, &data), tokens(&pact, &data));
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let (ya, yb) = (ft.predict(&data).unwrap(), pact.predict(&data).unwrap());
        for (x, y) in ya.iter().zip(&yb) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }
}

#[test]
fn pact_prediction_depends_on_offset_three_context() {
    let data = common::encoded(6, 4);
    let model = Model::build(&ModelConfig::small(ModelKind::Pact), &data.schema, 2).unwrap();
    let col = data.schema.index_of("r0@o+3").expect("contextual column");
    let pos = data
        .schema
        .block(pact_core::data::TokenBlock::ContextNumerical)
        .iter()
        .position(|&c| c == col)
        .unwrap();
    let sn = data.schema.block(pact_core::data::TokenBlock::ContextNumerical).len();
    let base = model.predict(&data).unwrap();
    let h = 1e-4;
    let mut bumped = data.clone();
    for r in 0..bumped.len() {
        bumped.ctx_num[r * sn + pos] += h;
    }
    let moved = model.predict(&bumped).unwrap();
    for (a, b) in base.iter().zip(&moved) {
        assert!(((b - a) / h).abs() > 1e-8, "no sensitivity: {a} vs {b}");
    }
}

#[test]
fn absent_round_contributes_bias_plus_offset() {
    let data = common::encoded(3, 5);
    let model = Model::build(&ModelConfig::small(ModelKind::Pact), &data.schema, 6).unwrap();
    // Row 0 has slot 0 (offset -3) absent.
    let t = tokens(&model, &data);
    let d = model.config.d;
    let k = t.shape()[1];
    let col = data.schema.index_of("r1@o-3").unwrap();
    let order = data.schema.token_order();
    let row = 1 + order.iter().position(|&c| c == col).unwrap();
    let j = data
        .schema
        .block(pact_core::data::TokenBlock::ContextNumerical)
        .iter()
        .position(|&c| c == col)
        .unwrap();
    let bias = &model.params.get("tok.cnum.b").unwrap().data()[j * d..(j + 1) * d];
    let p0 = &model.params.get("tok.offset").unwrap().data()[..d];
    let got = &t.data()[row * d..(row + 1) * d];
    assert_eq!(t.shape(), &[3, k, d]);
    for i in 0..d {
        assert_eq!(got[i], bias[i] + p0[i]);
    }
}
