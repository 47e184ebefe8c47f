#![allow(dead_code)]

use pact_core::data::{generate, EncodedDataset, GenConfig, Preprocessor};

/// Small dataset with every feature kind, including contextual columns at
/// offsets -3..3 and a few absent rounds.
pub fn small_config(n: usize) -> GenConfig {
    GenConfig {
        n,
        numerical: 5,
        cardinalities: vec![3, 4],
        round_features: 2,
        window: 3,
        gamma: 0.5,
        sigma: 0.1,
    }
}

pub fn encoded(n: usize, seed: u64) -> EncodedDataset {
    let (mut ds, _) = generate(&small_config(n), seed).unwrap();
    // Mark the round at offset -3 (slot 0) as missing for every third row.
    for (i, a) in ds.absent.iter_mut().enumerate() {
        if i % 3 == 0 {
            *a |= 1;
        }
    }
    Preprocessor::fit_apply(&ds, &[]).unwrap().1
}
