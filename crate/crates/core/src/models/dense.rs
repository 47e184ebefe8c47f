//! Flat-input models: MLP and ResNet, plus the shared input encoding used
//! by them and by the TabTransformer head.
//!
//! Every categorical column (plain and contextual) owns an embedding table of
//! width `d`, stacked into `emb.table` `[sum S_j, d]`. The network input for
//! a row is `[x_num, x_ctx_num, e_1, .., e_m']` with width
//! `c + s_num + (m + s_cat) * d`.
//!
//! MLP layout: `mlp.{i}.w` `[in_i, h_i]`, `mlp.{i}.b` `[h_i]`, then
//! `out.w` `[h_last, 1]`, `out.b` `[1]`. Parameter count for hidden sizes
//! `h_1..h_L` is `sum S_j * d + sum (in_i + 1) h_i + h_L + 1`.
//!
//! ResNet layout: `res.in.w/b` (input to `width`), per block `res.{i}.ln.g/b`,
//! `res.{i}.l1.w/b` and `res.{i}.l2.w/b` (`width -> width -> width`), then
//! `res.out.ln.g/b` and `out.w/b`.

use crate::data::{EncodedDataset, FeatureSchema, TokenBlock};
use crate::encoder::{DropoutRng, LN_EPS};
use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamSet};
use crate::tensor::{Tape, Tensor, Var};

/// Column layout of the flattened model input.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatInputs {
    pub n_num: usize,
    pub n_ctx_num: usize,
    pub names: Vec<String>,
    pub cardinality: Vec<usize>,
    pub start: Vec<usize>,
    pub rows: usize,
    pub n_plain_cat: usize,
}

impl FlatInputs {
    pub fn new(schema: &FeatureSchema) -> Self {
        let cols: Vec<usize> = schema
            .block(TokenBlock::Categorical)
            .into_iter()
            .chain(schema.block(TokenBlock::ContextCategorical))
            .collect();
        let mut start = Vec::new();
        let mut cardinality = Vec::new();
        let mut rows = 0;
        for &c in &cols {
            let s = schema.features[c].kind.cardinality().expect("categorical-valued");
            start.push(rows);
            cardinality.push(s);
            rows += s;
        }
        FlatInputs {
            n_num: schema.block(TokenBlock::Numerical).len(),
            n_ctx_num: schema.block(TokenBlock::ContextNumerical).len(),
            names: cols.iter().map(|&c| schema.features[c].name.clone()).collect(),
            cardinality,
            start,
            rows,
            n_plain_cat: schema.n_categorical(),
        }
    }

    pub fn n_real(&self) -> usize {
        self.n_num + self.n_ctx_num
    }

    pub fn n_cat(&self) -> usize {
        self.names.len()
    }

    pub fn width(&self, d: usize) -> usize {
        self.n_real() + self.n_cat() * d
    }

    /// Real-valued inputs `[B, c + s_num]`, or `None` when there are none.
    pub fn real(&self, tape: &mut Tape, batch: &EncodedDataset) -> Result<Option<Var>> {
        let (c, sn) = (self.n_num, self.n_ctx_num);
        if c + sn == 0 {
            return Ok(None);
        }
        let b = batch.len();
        let mut data = Vec::with_capacity(b * (c + sn));
        for r in 0..b {
            data.extend_from_slice(&batch.num[r * c..(r + 1) * c]);
            data.extend_from_slice(&batch.ctx_num[r * sn..(r + 1) * sn]);
        }
        Ok(Some(tape.constant(Tensor::new(vec![b, c + sn], data)?)))
    }

    /// Stacked-table rows for every categorical value, row-major `[B, m']`.
    pub fn indices(&self, batch: &EncodedDataset) -> Result<Vec<usize>> {
        let (m, sc) = (self.n_plain_cat, self.n_cat() - self.n_plain_cat);
        let b = batch.len();
        let mut out = Vec::with_capacity(b * (m + sc));
        for r in 0..b {
            let raw = batch.cat[r * m..(r + 1) * m].iter().chain(&batch.ctx_cat[r * sc..(r + 1) * sc]);
            for (j, &v) in raw.enumerate() {
                if v >= self.cardinality[j] {
                    return Err(Error::Index {
                        table: self.names[j].clone(),
                        index: v,
                        len: self.cardinality[j],
                    });
                }
                out.push(self.start[j] + v);
            }
        }
        Ok(out)
    }

    /// Embedded categoricals `[B, m' * d]`, or `None` when there are none.
    pub fn embedded(&self, tape: &mut Tape, p: &Bound, batch: &EncodedDataset, d: usize) -> Result<Option<Var>> {
        if self.n_cat() == 0 {
            return Ok(None);
        }
        let idx = self.indices(batch)?;
        let e = tape.gather(p.get("emb.table")?, &idx, "embedding")?;
        Ok(Some(tape.reshape(e, &[batch.len(), self.n_cat() * d])?))
    }

    /// Full flat input `[B, width]`.
    pub fn input(&self, tape: &mut Tape, p: &Bound, batch: &EncodedDataset, d: usize) -> Result<Var> {
        let parts: Vec<Var> = [self.real(tape, batch)?, self.embedded(tape, p, batch, d)?]
            .into_iter()
            .flatten()
            .collect();
        match parts.len() {
            0 => Err(Error::Config("schema declares no features".into())),
            1 => Ok(parts[0]),
            _ => tape.concat(&parts, 1),
        }
    }

    pub fn init(&self, init: &mut Init, params: &mut ParamSet, d: usize) -> Result<()> {
        if self.n_cat() > 0 {
            params.insert("emb.table", init.uniform(&[self.rows, d], 1.0 / (d as f64).sqrt()))?;
        }
        Ok(())
    }
}

pub(crate) fn linear(tape: &mut Tape, x: Var, p: &Bound, prefix: &str) -> Result<Var> {
    let y = tape.matmul(x, p.get(&format!("{prefix}.w"))?)?;
    tape.add(y, p.get(&format!("{prefix}.b"))?)
}

pub(crate) fn init_linear(init: &mut Init, params: &mut ParamSet, prefix: &str, fan_in: usize, fan_out: usize) -> Result<()> {
    params.insert(format!("{prefix}.w"), init.fan_in(&[fan_in, fan_out], fan_in))?;
    params.insert(format!("{prefix}.b"), init.fan_in(&[fan_out], fan_in))
}

pub(crate) fn dropout(tape: &mut Tape, x: Var, p: f64, rng: &mut DropoutRng) -> Result<Var> {
    match rng {
        Some(r) if p > 0.0 => tape.dropout(x, p, *r),
        _ => Ok(x),
    }
}

/// Relu MLP with a scalar output: `[B, in]` to `[B]`.
pub(crate) fn mlp_stack(
    tape: &mut Tape,
    p: &Bound,
    prefix: &str,
    hidden: &[usize],
    x: Var,
    drop: f64,
    rng: &mut DropoutRng,
) -> Result<Var> {
    let mut h = x;
    for i in 0..hidden.len() {
        h = linear(tape, h, p, &format!("{prefix}.{i}"))?;
        h = tape.relu(h)?;
        h = dropout(tape, h, drop, rng)?;
    }
    let y = linear(tape, h, p, "out")?;
    let b = tape.shape(y)?[0];
    tape.reshape(y, &[b])
}

pub(crate) fn init_mlp_stack(
    init: &mut Init,
    params: &mut ParamSet,
    prefix: &str,
    input: usize,
    hidden: &[usize],
) -> Result<()> {
    let mut fan_in = input;
    for (i, &h) in hidden.iter().enumerate() {
        init_linear(init, params, &format!("{prefix}.{i}"), fan_in, h)?;
        fan_in = h;
    }
    init_linear(init, params, "out", fan_in, 1)
}

pub(crate) fn resnet(
    tape: &mut Tape,
    p: &Bound,
    blocks: usize,
    x: Var,
    drop: f64,
    rng: &mut DropoutRng,
) -> Result<Var> {
    let ln = |tape: &mut Tape, x: Var, prefix: &str| -> Result<Var> {
        let g = p.get(&format!("{prefix}.g"))?;
        let b = p.get(&format!("{prefix}.b"))?;
        tape.layer_norm(x, g, b, LN_EPS)
    };
    let mut x = linear(tape, x, p, "res.in")?;
    for i in 0..blocks {
        let h = ln(tape, x, &format!("res.{i}.ln"))?;
        let h = linear(tape, h, p, &format!("res.{i}.l1"))?;
        let h = tape.relu(h)?;
        let h = dropout(tape, h, drop, rng)?;
        let h = linear(tape, h, p, &format!("res.{i}.l2"))?;
        let h = dropout(tape, h, drop, rng)?;
        x = tape.add(x, h)?;
    }
    let h = ln(tape, x, "res.out.ln")?;
    let h = tape.relu(h)?;
    let y = linear(tape, h, p, "out")?;
    let b = tape.shape(y)?[0];
    tape.reshape(y, &[b])
}

pub(crate) fn init_resnet(init: &mut Init, params: &mut ParamSet, input: usize, width: usize, blocks: usize) -> Result<()> {
    init_linear(init, params, "res.in", input, width)?;
    for i in 0..blocks {
        params.insert(format!("res.{i}.ln.g"), Tensor::ones(&[width]))?;
        params.insert(format!("res.{i}.ln.b"), Tensor::zeros(&[width]))?;
        init_linear(init, params, &format!("res.{i}.l1"), width, width)?;
        init_linear(init, params, &format!("res.{i}.l2"), width, width)?;
    }
    params.insert("res.out.ln.g", Tensor::ones(&[width]))?;
    params.insert("res.out.ln.b", Tensor::zeros(&[width]))?;
    init_linear(init, params, "out", width, 1)
}
