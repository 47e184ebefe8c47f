//! Multi-head self-attention encoder with a CLS readout head.
//!
//! Per layer `l` the parameters are `enc.{l}.{wq,wk,wv,wo}` `[d, d]` with
//! biases `enc.{l}.{bq,bv,bo}` `[d]`, the feed-forward pair
//! `enc.{l}.w1` `[d, ffn_mult*d]`, `enc.{l}.b1`, `enc.{l}.w2`
//! `[ffn_mult*d, d]`, `enc.{l}.b2`, and two norms `enc.{l}.ln{1,2}.{g,b}`.
//! The head owns `head.ln.{g,b}`, `head.w` `[d, 1]` and `head.b` `[1]`.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Bound, Init, ParamSet};
use crate::tensor::{Tape, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

/// Source of dropout masks; `None` means evaluation mode.
pub type DropoutRng<'a> = Option<&'a mut dyn RngCore>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub d: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub dropout: f64,
    pub prenorm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d: 32,
            n_layers: 3,
            n_heads: 4,
            ffn_mult: 2,
            dropout: 0.1,
            prenorm: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_heads == 0 || self.ffn_mult == 0 {
            return Err(Error::Config("d, n_heads and ffn_mult must be >= 1".into()));
        }
        if self.d % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "n_heads ({}) must divide d ({})",
                self.n_heads, self.d
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.n_heads
    }

    /// Draws layer parameters in layer order, then the head. Weight matrices
    /// use `uniform(±1/sqrt(fan_in))`, biases zero, norms `(1, 0)`.
    pub fn init(&self, init: &mut Init, params: &mut ParamSet, with_head: bool) -> Result<()> {
        self.validate()?;
        let d = self.d;
        let h = self.ffn_mult * d;
        for l in 0..self.n_layers {
            for m in ["q", "k", "v", "o"] {
                params.insert(format!("enc.{l}.w{m}"), init.fan_in(&[d, d], d))?;
                // A key bias shifts every score of a query equally, which
                // softmax ignores, so keys have none.
                if m != "k" {
                    params.insert(format!("enc.{l}.b{m}"), Tensor::zeros(&[d]))?;
                }
            }
            params.insert(format!("enc.{l}.w1"), init.fan_in(&[d, h], d))?;
            params.insert(format!("enc.{l}.b1"), Tensor::zeros(&[h]))?;
            params.insert(format!("enc.{l}.w2"), init.fan_in(&[h, d], h))?;
            params.insert(format!("enc.{l}.b2"), Tensor::zeros(&[d]))?;
            for n in ["ln1", "ln2"] {
                params.insert(format!("enc.{l}.{n}.g"), Tensor::ones(&[d]))?;
                params.insert(format!("enc.{l}.{n}.b"), Tensor::zeros(&[d]))?;
            }
        }
        if with_head {
            params.insert("head.ln.g", Tensor::ones(&[d]))?;
            params.insert("head.ln.b", Tensor::zeros(&[d]))?;
            params.insert("head.w", init.fan_in(&[d, 1], d))?;
            params.insert("head.b", Tensor::zeros(&[1]))?;
        }
        Ok(())
    }
}

fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add(y, b)
}

fn dropout(tape: &mut Tape, x: Var, p: f64, rng: &mut DropoutRng) -> Result<Var> {
    match rng {
        Some(r) if p > 0.0 => tape.dropout(x, p, *r),
        _ => Ok(x),
    }
}

fn layer_norm(tape: &mut Tape, x: Var, p: &Bound, prefix: &str) -> Result<Var> {
    let g = p.get(&format!("{prefix}.g"))?;
    let b = p.get(&format!("{prefix}.b"))?;
    tape.layer_norm(x, g, b, LN_EPS)
}

/// `[B, T, d]` to `[B*H, T, d_h]`.
fn split_heads(tape: &mut Tape, x: Var, heads: usize) -> Result<Var> {
    let s = tape.shape(x)?.to_vec();
    let (b, t, d) = (s[0], s[1], s[2]);
    let x = tape.reshape(x, &[b, t, heads, d / heads])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[b * heads, t, d / heads])
}

fn merge_heads(tape: &mut Tape, x: Var, batch: usize, heads: usize) -> Result<Var> {
    let s = tape.shape(x)?.to_vec();
    let (t, dh) = (s[1], s[2]);
    let x = tape.reshape(x, &[batch, heads, t, dh])?;
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[batch, t, heads * dh])
}

/// Attention output and the attention weights `[B*H, Tq, T]`.
pub struct Attention {
    pub output: Var,
    pub weights: Var,
}

/// Unmasked multi-head self-attention. Queries come from the first
/// `n_queries` rows of `x` (all rows when `None`); keys and values from
/// every row.
pub fn mhsa(
    tape: &mut Tape,
    p: &Bound,
    cfg: &EncoderConfig,
    layer: usize,
    x: Var,
    n_queries: Option<usize>,
) -> Result<Attention> {
    let s = tape.shape(x)?.to_vec();
    if s.len() != 3 || s[2] != cfg.d {
        return Err(Error::dim("mhsa", &[0, 0, cfg.d], &s));
    }
    let batch = s[0];
    let w = |n: &str| p.get(&format!("enc.{layer}.{n}"));
    let xq = match n_queries {
        Some(n) if n < s[1] => tape.narrow(x, 1, 0, n)?,
        _ => x,
    };
    let q = linear(tape, xq, w("wq")?, w("bq")?)?;
    let k = tape.matmul(x, w("wk")?)?;
    let v = linear(tape, x, w("wv")?, w("bv")?)?;
    let q = split_heads(tape, q, cfg.n_heads)?;
    let k = split_heads(tape, k, cfg.n_heads)?;
    let v = split_heads(tape, v, cfg.n_heads)?;
    let logits = tape.bmm(q, k, true)?;
    let logits = tape.scale(logits, 1.0 / (cfg.head_dim() as f64).sqrt())?;
    let weights = tape.softmax(logits)?;
    let heads = tape.bmm(weights, v, false)?;
    let merged = merge_heads(tape, heads, batch, cfg.n_heads)?;
    let output = linear(tape, merged, w("wo")?, w("bo")?)?;
    Ok(Attention { output, weights })
}

fn ffn(tape: &mut Tape, p: &Bound, layer: usize, x: Var) -> Result<Var> {
    let w = |n: &str| p.get(&format!("enc.{layer}.{n}"));
    let h = linear(tape, x, w("w1")?, w("b1")?)?;
    let h = tape.gelu(h)?;
    linear(tape, h, w("w2")?, w("b2")?)
}

fn layer(
    tape: &mut Tape,
    p: &Bound,
    cfg: &EncoderConfig,
    l: usize,
    x: Var,
    n_queries: Option<usize>,
    rng: &mut DropoutRng,
) -> Result<Var> {
    let ln1 = format!("enc.{l}.ln1");
    let ln2 = format!("enc.{l}.ln2");
    // Residual rows follow the query rows.
    let residual = |tape: &mut Tape, x: Var| -> Result<Var> {
        match n_queries {
            Some(n) if n < tape.shape(x)?[1] => tape.narrow(x, 1, 0, n),
            _ => Ok(x),
        }
    };
    if cfg.prenorm {
        let h = layer_norm(tape, x, p, &ln1)?;
        let a = mhsa(tape, p, cfg, l, h, n_queries)?.output;
        let a = dropout(tape, a, cfg.dropout, rng)?;
        let x = residual(tape, x)?;
        let x = tape.add(x, a)?;
        let h = layer_norm(tape, x, p, &ln2)?;
        let f = ffn(tape, p, l, h)?;
        let f = dropout(tape, f, cfg.dropout, rng)?;
        tape.add(x, f)
    } else {
        let a = mhsa(tape, p, cfg, l, x, n_queries)?.output;
        let a = dropout(tape, a, cfg.dropout, rng)?;
        let x = residual(tape, x)?;
        let x = tape.add(x, a)?;
        let x = layer_norm(tape, x, p, &ln1)?;
        let f = ffn(tape, p, l, x)?;
        let f = dropout(tape, f, cfg.dropout, rng)?;
        let x = tape.add(x, f)?;
        layer_norm(tape, x, p, &ln2)
    }
}

/// Runs every layer over all rows: `[B, T, d]` in, `[B, T, d]` out.
pub fn encoder_forward(tape: &mut Tape, p: &Bound, cfg: &EncoderConfig, x: Var, mut rng: DropoutRng) -> Result<Var> {
    cfg.validate()?;
    let mut x = x;
    for l in 0..cfg.n_layers {
        x = layer(tape, p, cfg, l, x, None, &mut rng)?;
    }
    Ok(x)
}

/// Final CLS representation `[B, 1, d]`. Equal to row 0 of
/// [`encoder_forward`]; the last layer only computes the CLS query, since no
/// other row of it is ever read.
pub fn encoder_forward_cls(
    tape: &mut Tape,
    p: &Bound,
    cfg: &EncoderConfig,
    x: Var,
    mut rng: DropoutRng,
) -> Result<Var> {
    cfg.validate()?;
    let mut x = x;
    for l in 0..cfg.n_layers {
        let queries = (l + 1 == cfg.n_layers).then_some(1);
        x = layer(tape, p, cfg, l, x, queries, &mut rng)?;
    }
    tape.narrow(x, 1, 0, 1)
}

/// `y = head.w^T relu(LN(cls)) + head.b` for `cls: [B, .., d]` (only
/// token row 0 is read). Returns `[B]`.
pub fn predict(tape: &mut Tape, p: &Bound, seq_out: Var) -> Result<Var> {
    let s = tape.shape(seq_out)?.to_vec();
    let batch = s[0];
    let d = *s.last().expect("rank >= 2");
    let cls = if s.len() == 3 {
        let c = tape.narrow(seq_out, 1, 0, 1)?;
        tape.reshape(c, &[batch, d])?
    } else {
        seq_out
    };
    let h = layer_norm(tape, cls, p, "head.ln")?;
    let h = tape.relu(h)?;
    let y = linear(tape, h, p.get("head.w")?, p.get("head.b")?)?;
    tape.reshape(y, &[batch])
}
