//! Feature tokenizer: every feature becomes a `d`-wide token
//! `T_j = b_j + f_j(x_j)`, preceded by a learned CLS token. Contextual
//! features additionally receive the offset embedding `P_o` of their round
//! offset when offsets are enabled.
//!
//! Parameter layout (blocks with no features own no parameters):
//!
//! | name              | shape            |
//! |-------------------|------------------|
//! | `tok.cls`         | `[d]`            |
//! | `tok.num.w/b`     | `[c, d]`         |
//! | `tok.cat.table`   | `[sum S_j, d]`   |
//! | `tok.cat.b`       | `[m, d]`         |
//! | `tok.cnum.w/b`    | `[s_num, d]`     |
//! | `tok.ccat.table`  | `[sum S_j, d]`   |
//! | `tok.ccat.b`      | `[s_cat, d]`     |
//! | `tok.offset`      | `[2w, d]`        |
//!
//! Categorical tables are stacked: feature `j` owns rows
//! `start_j .. start_j + S_j`.

use crate::data::{EncodedDataset, FeatureSchema, TokenBlock};
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamSet};
use crate::tensor::{Tape, Tensor, Var};

pub const CLS_NAME: &str = "[CLS]";

/// Stacked embedding tables for one categorical block.
#[derive(Clone, Debug, PartialEq)]
struct Tables {
    names: Vec<String>,
    cardinality: Vec<usize>,
    start: Vec<usize>,
    rows: usize,
}

impl Tables {
    fn new(schema: &FeatureSchema, block: TokenBlock) -> Self {
        let cols = schema.block(block);
        let mut start = Vec::with_capacity(cols.len());
        let mut rows = 0;
        let mut cardinality = Vec::with_capacity(cols.len());
        for &c in &cols {
            let s = schema.features[c].kind.cardinality().expect("categorical block");
            start.push(rows);
            cardinality.push(s);
            rows += s;
        }
        Tables {
            names: cols.iter().map(|&c| schema.features[c].name.clone()).collect(),
            cardinality,
            start,
            rows,
        }
    }

    fn len(&self) -> usize {
        self.names.len()
    }

    /// Row-major `[B, len]` raw indices to stacked-table rows.
    fn global(&self, idx: &[usize]) -> Result<Vec<usize>> {
        let m = self.len();
        if idx.len() % m != 0 {
            return Err(Error::Schema(format!("{} indices for {m} categorical features", idx.len())));
        }
        idx.iter()
            .enumerate()
            .map(|(i, &v)| {
                let j = i % m;
                if v >= self.cardinality[j] {
                    Err(Error::Index {
                        table: self.names[j].clone(),
                        index: v,
                        len: self.cardinality[j],
                    })
                } else {
                    Ok(self.start[j] + v)
                }
            })
            .collect()
    }
}

/// Tokens `[B, k+1, d]` with CLS in row 0, plus the feature name of each row.
#[derive(Clone, Debug)]
pub struct TokenSequence {
    pub tokens: Var,
    pub provenance: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tokenizer {
    d: usize,
    offsets: bool,
    num: Vec<String>,
    cat: Tables,
    cnum: Vec<String>,
    ccat: Tables,
    /// Offset slot of every contextual token, numerical-base first.
    slots: Vec<usize>,
    n_slots: usize,
}

impl Tokenizer {
    /// `offsets` enables the offset embeddings (PACT); without them the
    /// contextual columns are tokenized as ordinary features.
    pub fn new(schema: &FeatureSchema, d: usize, offsets: bool) -> Result<Self> {
        schema.validate()?;
        if d == 0 {
            return Err(Error::Config("token width d must be >= 1".into()));
        }
        let names = |b: TokenBlock| -> Vec<String> {
            schema.block(b).iter().map(|&c| schema.features[c].name.clone()).collect()
        };
        let slots = schema
            .block(TokenBlock::ContextNumerical)
            .into_iter()
            .chain(schema.block(TokenBlock::ContextCategorical))
            .map(|c| schema.offset_slot(schema.features[c].kind.offset().expect("contextual")))
            .collect::<Result<Vec<_>>>()?;
        if offsets && slots.is_empty() {
            return Err(Error::Config("offset embeddings need contextual features in the schema".into()));
        }
        Ok(Tokenizer {
            d,
            offsets,
            num: names(TokenBlock::Numerical),
            cat: Tables::new(schema, TokenBlock::Categorical),
            cnum: names(TokenBlock::ContextNumerical),
            ccat: Tables::new(schema, TokenBlock::ContextCategorical),
            slots,
            n_slots: schema.n_offset_slots(),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn has_offsets(&self) -> bool {
        self.offsets
    }

    /// Tokens per row including CLS. Depends on the schema only.
    pub fn n_tokens(&self) -> usize {
        1 + self.num.len() + self.cat.len() + self.cnum.len() + self.ccat.len()
    }

    /// Draws every parameter except the offset embeddings from
    /// `uniform(-1/sqrt(d), 1/sqrt(d))`.
    pub fn init(&self, init: &mut Init, params: &mut ParamSet) -> Result<()> {
        let d = self.d;
        let bound = 1.0 / (d as f64).sqrt();
        params.insert("tok.cls", init.uniform(&[d], bound))?;
        if !self.num.is_empty() {
            params.insert("tok.num.w", init.uniform(&[self.num.len(), d], bound))?;
            params.insert("tok.num.b", init.uniform(&[self.num.len(), d], bound))?;
        }
        if self.cat.len() > 0 {
            params.insert("tok.cat.table", init.uniform(&[self.cat.rows, d], bound))?;
            params.insert("tok.cat.b", init.uniform(&[self.cat.len(), d], bound))?;
        }
        if !self.cnum.is_empty() {
            params.insert("tok.cnum.w", init.uniform(&[self.cnum.len(), d], bound))?;
            params.insert("tok.cnum.b", init.uniform(&[self.cnum.len(), d], bound))?;
        }
        if self.ccat.len() > 0 {
            params.insert("tok.ccat.table", init.uniform(&[self.ccat.rows, d], bound))?;
            params.insert("tok.ccat.b", init.uniform(&[self.ccat.len(), d], bound))?;
        }
        Ok(())
    }

    /// Draws the offset embeddings `[2w, d]`, if enabled. Kept separate so
    /// that models with and without offsets share every other draw.
    pub fn init_offsets(&self, init: &mut Init, params: &mut ParamSet) -> Result<()> {
        if self.offsets {
            let bound = 1.0 / (self.d as f64).sqrt();
            params.insert("tok.offset", init.uniform(&[self.n_slots, self.d], bound))?;
        }
        Ok(())
    }

    fn affine(&self, tape: &mut Tape, w: Var, b: Var, x: &[f64], width: usize) -> Result<Var> {
        if width == 0 || x.len() % width != 0 || x.is_empty() {
            return Err(Error::Schema(format!("{} values for {width} numerical features", x.len())));
        }
        let x = tape.constant(Tensor::new(vec![x.len() / width, width, 1], x.to_vec())?);
        let xw = tape.mul(x, w)?;
        tape.add(b, xw)
    }

    /// `x`: row-major `[B, c]`. Row `j` of each output is `b_j + x_j * W_j`.
    pub fn tokenize_numerical(&self, tape: &mut Tape, p: &Bound, x: &[f64]) -> Result<Var> {
        self.affine(tape, p.get("tok.num.w")?, p.get("tok.num.b")?, x, self.num.len())
    }

    fn lookup(&self, tape: &mut Tape, tables: &Tables, table: Var, idx: &[usize]) -> Result<Var> {
        if tables.len() == 0 || idx.is_empty() {
            return Err(Error::Schema("no categorical features to tokenize".into()));
        }
        let global = tables.global(idx)?;
        let rows = tape.gather(table, &global, "embedding")?;
        tape.reshape(rows, &[idx.len() / tables.len(), tables.len(), self.d])
    }

    /// `idx`: row-major `[B, m]`. Row `j` is `b_j + W_j[idx_j]`.
    pub fn tokenize_categorical(&self, tape: &mut Tape, p: &Bound, idx: &[usize]) -> Result<Var> {
        let looked = self.lookup(tape, &self.cat, p.get("tok.cat.table")?, idx)?;
        tape.add(p.get("tok.cat.b")?, looked)
    }

    /// Contextual tokens `[B, s, d]`, numerical-base features first.
    ///
    /// `present` (row-major `[B, s]`, 1.0 or 0.0) marks rounds that exist;
    /// an absent feature contributes its bias (plus `P_o`) only.
    pub fn tokenize_context(
        &self,
        tape: &mut Tape,
        p: &Bound,
        num: &[f64],
        cat: &[usize],
        present: &[f64],
    ) -> Result<Var> {
        let (sn, sc) = (self.cnum.len(), self.ccat.len());
        let s = sn + sc;
        if s == 0 {
            return Err(Error::Schema("schema declares no contextual features".into()));
        }
        if present.len() % s != 0 || present.is_empty() {
            return Err(Error::Schema(format!("{} presence flags for {s} contextual features", present.len())));
        }
        let b = present.len() / s;
        if num.len() != b * sn || cat.len() != b * sc {
            return Err(Error::Schema("contextual value counts do not match the presence mask".into()));
        }
        let mut parts = Vec::with_capacity(2);
        if sn > 0 {
            let masked: Vec<f64> = num
                .iter()
                .enumerate()
                .map(|(i, &v)| v * present[(i / sn) * s + i % sn])
                .collect();
            parts.push(self.affine(tape, p.get("tok.cnum.w")?, p.get("tok.cnum.b")?, &masked, sn)?);
        }
        if sc > 0 {
            let looked = self.lookup(tape, &self.ccat, p.get("tok.ccat.table")?, cat)?;
            let mask: Vec<f64> = (0..b).flat_map(|r| present[r * s + sn..(r + 1) * s].iter().copied()).collect();
            let mask = tape.constant(Tensor::new(vec![b, sc, 1], mask)?);
            let looked = tape.mul(looked, mask)?;
            parts.push(tape.add(p.get("tok.ccat.b")?, looked)?);
        }
        let tokens = if parts.len() == 1 { parts[0] } else { tape.concat(&parts, 1)? };
        if !self.offsets {
            return Ok(tokens);
        }
        let offsets = tape.gather(p.get("tok.offset")?, &self.slots, "offset embeddings")?;
        tape.add(tokens, offsets)
    }

    /// Stacks `[cls; num; cat; ctx]` along the token axis. Absent blocks are
    /// skipped; with no features at all the sequence is CLS alone.
    pub fn assemble_sequence(
        &self,
        tape: &mut Tape,
        p: &Bound,
        batch: usize,
        num: Option<Var>,
        cat: Option<Var>,
        ctx: Option<Var>,
    ) -> Result<TokenSequence> {
        let d = self.d;
        let zeros = tape.constant(Tensor::zeros(&[batch, 1, d]));
        let cls = tape.add(zeros, p.get("tok.cls")?)?;
        let mut rows = vec![cls];
        let mut provenance = vec![CLS_NAME.to_string()];
        let blocks = [
            (num, self.num.clone()),
            (cat, self.cat.names.clone()),
            (ctx, self.cnum.iter().chain(&self.ccat.names).cloned().collect()),
        ];
        for (var, names) in blocks {
            let Some(var) = var else { continue };
            let shape = tape.shape(var)?;
            if shape.len() != 3 || shape[0] != batch || shape[2] != d || shape[1] != names.len() {
                return Err(Error::dim("assemble_sequence", &[batch, names.len(), d], shape));
            }
            rows.push(var);
            provenance.extend(names);
        }
        let tokens = if rows.len() == 1 { cls } else { tape.concat(&rows, 1)? };
        Ok(TokenSequence { tokens, provenance })
    }

    /// Full tokenization of an encoded batch.
    pub fn tokenize(&self, tape: &mut Tape, p: &Bound, batch: &EncodedDataset) -> Result<TokenSequence> {
        let b = batch.len();
        let num = if self.num.is_empty() {
            None
        } else {
            Some(self.tokenize_numerical(tape, p, &batch.num)?)
        };
        let cat = if self.cat.len() == 0 {
            None
        } else {
            Some(self.tokenize_categorical(tape, p, &batch.cat)?)
        };
        let ctx = if self.slots.is_empty() {
            None
        } else {
            Some(self.tokenize_context(tape, p, &batch.ctx_num, &batch.ctx_cat, &batch.ctx_present)?)
        };
        self.assemble_sequence(tape, p, b, num, cat, ctx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BaseKind, Feature};

    fn schema() -> FeatureSchema {
        FeatureSchema::new(
            "y",
            1,
            vec![
                Feature::numerical("x"),
                Feature::categorical("k", 2),
                Feature::contextual("r", BaseKind::Numerical, -1),
                Feature::contextual("r", BaseKind::Numerical, 1),
                Feature::contextual("g", BaseKind::Categorical { cardinality: 3 }, 1),
            ],
        )
        .unwrap()
    }

    fn params(tok: &Tokenizer) -> ParamSet {
        let mut p = ParamSet::new();
        let mut init = Init::new(5);
        tok.init(&mut init, &mut p).unwrap();
        tok.init_offsets(&mut init, &mut p).unwrap();
        p
    }

    #[test]
    fn numerical_hand_value() {
        let s = FeatureSchema::new("y", 0, vec![Feature::numerical("x")]).unwrap();
        let tok = Tokenizer::new(&s, 2, false).unwrap();
        let mut p = ParamSet::new();
        p.insert("tok.num.w", Tensor::matrix(1, 2, vec![0.5, -1.0]).unwrap()).unwrap();
        p.insert("tok.num.b", Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let t = tok.tokenize_numerical(&mut tape, &b, &[3.0]).unwrap();
        assert_eq!(tape.value(t).unwrap().data(), &[2.5, -3.0]);
    }

    #[test]
    fn categorical_lookup_and_range_error() {
        let tok = Tokenizer::new(&schema(), 3, true).unwrap();
        let p = params(&tok);
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let t = tok.tokenize_categorical(&mut tape, &b, &[1]).unwrap();
        let table = p.get("tok.cat.table").unwrap();
        let bias = p.get("tok.cat.b").unwrap();
        let want: Vec<f64> = table.row(1).iter().zip(bias.row(0)).map(|(w, b)| b + w).collect();
        assert_eq!(tape.value(t).unwrap().data(), &want[..]);
        match tok.tokenize_categorical(&mut tape, &b, &[2]) {
            Err(Error::Index { table, index: 2, len: 2 }) => assert_eq!(table, "k"),
            other => panic!("expected index error, got {other:?}"),
        }
    }

    #[test]
    fn sequence_layout_and_provenance() {
        let s = schema();
        let tok = Tokenizer::new(&s, 4, true).unwrap();
        let p = params(&tok);
        let rows = crate::data::InputRow {
            x_cont: vec![0.3],
            x_cat: vec![1],
            x_context_num: vec![0.1, -0.2],
            x_context_cat: vec![2],
            context_present: vec![true, true, false],
            target: 0.0,
        };
        let batch = EncodedDataset::from_rows(&s, &[rows.clone(), rows]).unwrap();
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let seq = tok.tokenize(&mut tape, &b, &batch).unwrap();
        assert_eq!(tape.shape(seq.tokens).unwrap(), &[2, 6, 4]);
        assert_eq!(seq.provenance, ["[CLS]", "x", "k", "r@o-1", "r@o+1", "g@o+1"]);
        // Absent categorical context: bias + P_o only.
        let v = tape.value(seq.tokens).unwrap();
        let want: Vec<f64> = p
            .get("tok.ccat.b")
            .unwrap()
            .row(0)
            .iter()
            .zip(p.get("tok.offset").unwrap().row(1))
            .map(|(b, o)| b + o)
            .collect();
        for (got, want) in (0..4).map(|i| v.at(&[0, 5, i])).zip(want) {
            assert_eq!(got, want);
        }
    }

    #[test]
    fn cls_only_sequence() {
        let s = FeatureSchema::new("y", 0, vec![]).unwrap();
        let tok = Tokenizer::new(&s, 2, false).unwrap();
        let p = params(&tok);
        let mut tape = Tape::new();
        let b = p.bind(&mut tape, false);
        let seq = tok.assemble_sequence(&mut tape, &b, 1, None, None, None).unwrap();
        assert_eq!(tape.shape(seq.tokens).unwrap(), &[1, 1, 2]);
        assert_eq!(tok.n_tokens(), 1);
    }

    #[test]
    fn offsets_need_context() {
        let s = FeatureSchema::new("y", 0, vec![Feature::numerical("x")]).unwrap();
        assert!(Tokenizer::new(&s, 2, true).is_err());
    }
}
