//! Synthetic user-round-spends data with a planted context-window signal.
//!
//! Numerical columns are `u0..` (user) followed by `r0..r{q-1}` (current
//! round); categoricals are `k0..`; contextual columns are `r{j}@o{offset}`
//! for every offset in `[-w..w] \ {0}`. All real features are `N(0, 1)`,
//! categoricals uniform. The target is
//!
//! ```text
//! P = <a, x_num> + sum_j u_j[k_j] + sum_o gamma^|o| * tanh(r0@o * r1@o) + eps
//! ```
//!
//! with `a ~ N(0, 1/c)`, `u_j[v] ~ N(0, 1/m)` and `eps ~ N(0, sigma^2)`.
//! Coefficients are drawn from stream 0 of a ChaCha generator and row `i`
//! from stream `i + 1`, so rows do not depend on how generation is chunked.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{Column, Dataset};
use super::schema::{BaseKind, Feature, FeatureSchema, Group};
use crate::error::{Error, Result};

pub const TARGET: &str = "spend";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n: usize,
    /// Numerical columns `c`, including the `q` current-round features.
    pub numerical: usize,
    /// Raw category counts, one per categorical column (`m` entries). The
    /// schema cardinality adds one for the reserved unseen index.
    pub cardinalities: Vec<usize>,
    /// Round features per offset `q`.
    pub round_features: usize,
    pub window: usize,
    pub gamma: f64,
    pub sigma: f64,
}

impl GenConfig {
    /// Production-shaped benchmark: 120 numerical, 21 categorical, 6 round features over
    /// a ±5 window (60 contextual columns).
    pub fn benchmark(n: usize) -> Self {
        GenConfig {
            n,
            numerical: 120,
            cardinalities: (0..21).map(|j| 2 + (j * 7) % 15).collect(),
            round_features: 6,
            window: 5,
            gamma: 0.6,
            sigma: 0.25,
        }
    }

    /// Small noiseless linear problem (no context signal).
    pub fn linear(n: usize) -> Self {
        GenConfig {
            n,
            numerical: 8,
            cardinalities: vec![3, 5],
            round_features: 2,
            window: 1,
            gamma: 0.0,
            sigma: 0.0,
        }
    }

    pub fn preset(name: &str, n: usize) -> Result<Self> {
        match name {
            "benchmark" => Ok(Self::benchmark(n)),
            "linear" => Ok(Self::linear(n)),
            other => Err(Error::Config(format!("unknown preset {other} (expected benchmark or linear)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n == 0 {
            return fail("n must be >= 1".into());
        }
        if self.round_features < 2 {
            return fail("round_features must be >= 2 (the planted interaction uses two)".into());
        }
        if self.numerical < self.round_features {
            return fail("numerical must include the current-round features".into());
        }
        if self.window == 0 {
            return fail("window must be >= 1".into());
        }
        if self.cardinalities.iter().any(|&c| c == 0) {
            return fail("category counts must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma must be in [0, 1), got {}", self.gamma));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return fail(format!("sigma must be >= 0, got {}", self.sigma));
        }
        Ok(())
    }

    pub fn offsets(&self) -> Vec<i32> {
        let w = self.window as i32;
        (-w..=w).filter(|&o| o != 0).collect()
    }

    pub fn schema(&self) -> Result<FeatureSchema> {
        let q = self.round_features;
        let users = self.numerical - q;
        let mut features = Vec::new();
        for i in 0..users {
            let tag = ["U_d", "U_w", "U_b"][i % 3];
            features.push(Feature::numerical(format!("u{i}")).with_group(Group::User, Some(tag)));
        }
        for j in 0..q {
            let tag = if j == 0 { "R_u" } else { "R_f" };
            features.push(Feature::numerical(format!("r{j}")).with_group(Group::Round, Some(tag)));
        }
        let m = self.cardinalities.len();
        for (j, &card) in self.cardinalities.iter().enumerate() {
            let (group, tag) = if j < m.div_ceil(2) { (Group::User, "U_d") } else { (Group::Round, "R_g") };
            features.push(Feature::categorical(format!("k{j}"), card + 1).with_group(group, Some(tag)));
        }
        for o in self.offsets() {
            for j in 0..q {
                features.push(Feature::contextual(&format!("r{j}"), BaseKind::Numerical, o));
            }
        }
        FeatureSchema::new(TARGET, self.window, features)
    }
}

/// Coefficients a dataset was generated with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    /// Weights on the numerical columns.
    pub a: Vec<f64>,
    /// Per categorical column, the effect of each raw category value.
    pub u: Vec<Vec<f64>>,
}

/// Per-row draws, before assembly into columns.
struct RowDraw {
    num: Vec<f64>,
    cat: Vec<usize>,
    ctx: Vec<f64>,
    noise: f64,
}

fn draw_row(cfg: &GenConfig, seed: u64, row: usize) -> RowDraw {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64 + 1);
    let num = (0..cfg.numerical).map(|_| rng.sample(StandardNormal)).collect();
    let cat = cfg.cardinalities.iter().map(|&c| rng.random_range(0..c)).collect();
    let ctx = (0..cfg.offsets().len() * cfg.round_features)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let noise: f64 = rng.sample(StandardNormal);
    RowDraw {
        num,
        cat,
        ctx,
        noise: noise * cfg.sigma,
    }
}

/// Evaluates the generating function on already-drawn features.
pub fn target_of(cfg: &GenConfig, prov: &Provenance, num: &[f64], cat: &[usize], ctx: &[f64], noise: f64) -> f64 {
    let linear: f64 = prov.a.iter().zip(num).map(|(a, x)| a * x).sum();
    let categorical: f64 = prov.u.iter().zip(cat).map(|(u, &k)| u[k]).sum();
    let q = cfg.round_features;
    let context: f64 = cfg
        .offsets()
        .iter()
        .enumerate()
        .map(|(slot, &o)| {
            let r = &ctx[slot * q..(slot + 1) * q];
            cfg.gamma.powi(o.abs()) * (r[0] * r[1]).tanh()
        })
        .sum();
    linear + categorical + context + noise
}

pub fn generate(cfg: &GenConfig, seed: u64) -> Result<(Dataset, Provenance)> {
    cfg.validate()?;
    let schema = cfg.schema()?;
    let mut coef = ChaCha8Rng::seed_from_u64(seed);
    coef.set_stream(0);
    let a_dist = Normal::new(0.0, (1.0 / cfg.numerical as f64).sqrt()).expect("positive std");
    let m = cfg.cardinalities.len().max(1);
    let u_dist = Normal::new(0.0, (1.0 / m as f64).sqrt()).expect("positive std");
    let a: Vec<f64> = (0..cfg.numerical).map(|_| a_dist.sample(&mut coef)).collect();
    let u: Vec<Vec<f64>> = cfg
        .cardinalities
        .iter()
        .map(|&c| (0..c).map(|_| u_dist.sample(&mut coef)).collect())
        .collect();
    let prov = Provenance { seed, a, u };

    let n = cfg.n;
    let n_ctx = cfg.offsets().len() * cfg.round_features;
    let mut num_cols = vec![Vec::with_capacity(n); cfg.numerical];
    let mut cat_cols = vec![Vec::with_capacity(n); cfg.cardinalities.len()];
    let mut ctx_cols = vec![Vec::with_capacity(n); n_ctx];
    let mut target = Vec::with_capacity(n);
    for row in 0..n {
        let d = draw_row(cfg, seed, row);
        target.push(target_of(cfg, &prov, &d.num, &d.cat, &d.ctx, d.noise));
        for (col, v) in num_cols.iter_mut().zip(d.num) {
            col.push(v);
        }
        for (col, v) in cat_cols.iter_mut().zip(d.cat) {
            col.push(v.to_string());
        }
        for (col, v) in ctx_cols.iter_mut().zip(d.ctx) {
            col.push(v);
        }
    }
    let columns = num_cols
        .into_iter()
        .map(Column::Numerical)
        .chain(cat_cols.into_iter().map(Column::Categorical))
        .chain(ctx_cols.into_iter().map(Column::Numerical))
        .collect();
    let ds = Dataset::new(schema, columns, vec![0; n], target)?;
    Ok((ds, prov))
}
