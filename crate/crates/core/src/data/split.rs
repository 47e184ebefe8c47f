use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::hash::Fingerprint;

/// Row counts of the production train/val/test split the `benchmark` preset
/// mirrors.
pub const PRODUCTION_COUNTS: [u64; 3] = [7_074_749, 1_165_011, 831_583];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self> {
        let s = SplitSpec { train, val, test, seed };
        s.validate()?;
        Ok(s)
    }

    /// Proportions of the production dataset (about 0.78 / 0.128 / 0.092).
    pub fn production(seed: u64) -> Self {
        let total: u64 = PRODUCTION_COUNTS.iter().sum();
        let f = |c: u64| c as f64 / total as f64;
        SplitSpec {
            train: f(PRODUCTION_COUNTS[0]),
            val: f(PRODUCTION_COUNTS[1]),
            test: f(PRODUCTION_COUNTS[2]),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train, self.val, self.test];
        if fr.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::Config(format!("split fractions must be positive: {fr:?}")));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must sum to 1: {fr:?}")));
        }
        Ok(())
    }

    /// Subset sizes for `n` rows: train and val rounded, test takes the rest.
    pub fn sizes(&self, n: usize) -> Result<[usize; 3]> {
        self.validate()?;
        let n_train = (self.train * n as f64).round() as usize;
        let n_val = (self.val * n as f64).round() as usize;
        if n_train == 0 || n_val == 0 || n_train + n_val >= n {
            return Err(Error::Config(format!("{n} rows are too few for a non-empty three-way split")));
        }
        Ok([n_train, n_val, n - n_train - n_val])
    }
}

/// Row indices of each subset. Pairwise disjoint, union `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    /// Seeded shuffle of `0..n`, then contiguous train/val/test partition.
    pub fn new(n: usize, spec: &SplitSpec) -> Result<Self> {
        let [a, b, _] = spec.sizes(n)?;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
        let test = idx.split_off(a + b);
        let val = idx.split_off(a);
        Ok(SplitIndices { train: idx, val, test })
    }

    /// Fingerprint of the test subset: source row ids and targets.
    pub fn test_hash(&self, data: &Dataset) -> String {
        let mut f = Fingerprint::new();
        f.usize(self.test.len());
        for &i in &self.test {
            f.usize(data.row_ids[i]).f64(data.target[i]);
        }
        f.finish()
    }
}

/// Splits `data` into `(train, val, test)`.
pub fn split(data: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset, SplitIndices)> {
    let idx = SplitIndices::new(data.len(), spec)?;
    Ok((data.select(&idx.train), data.select(&idx.val), data.select(&idx.test), idx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_rows_give_8_1_1() {
        let s = SplitSpec::new(0.8, 0.1, 0.1, 1).unwrap();
        let idx = SplitIndices::new(10, &s).unwrap();
        assert_eq!((idx.train.len(), idx.val.len(), idx.test.len()), (8, 1, 1));
        assert_eq!(idx, SplitIndices::new(10, &s).unwrap());
    }

    #[test]
    fn partition_is_exhaustive_and_disjoint() {
        let s = SplitSpec::production(7);
        let idx = SplitIndices::new(1000, &s).unwrap();
        let mut all: Vec<usize> = idx.train.iter().chain(&idx.val).chain(&idx.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn production_proportions() {
        let s = SplitSpec::production(0);
        assert!((s.train - 0.78).abs() < 0.005);
        assert!((s.val - 0.128).abs() < 0.001);
        assert!((s.test - 0.092).abs() < 0.001);
        s.validate().unwrap();
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(SplitSpec::new(0.9, 0.1, 0.0, 0).is_err());
        assert!(SplitSpec::new(0.5, 0.3, 0.3, 0).is_err());
        let s = SplitSpec::default();
        assert!(SplitIndices::new(3, &s).is_err());
    }
}
