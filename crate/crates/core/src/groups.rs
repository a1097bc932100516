//! Construction of the sample groups on which ensemble members are fitted.
//!
//! Three strategies are provided: known labels, consecutive blocks for
//! data whose coefficients drift smoothly with the sample index, and random
//! subsamples (without replacement inside a group, independently across
//! groups) when the group structure is unknown.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of the random generator used throughout the crate. Recorded
/// in output metadata so runs can be reproduced elsewhere.
pub const RNG_ALGORITHM: &str = "ChaCha20Rng(seed_from_u64, stream=sub-seed)";

/// A reproducible generator for stream `stream` of `seed`.
///
/// Independent pieces of a computation (one group, the noise vector, ...)
/// draw from distinct streams, so they can be generated in any order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Known,
    ConsecutiveBlocks,
    RandomSubsample,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Known => "known",
            Strategy::ConsecutiveBlocks => "consecutive_blocks",
            Strategy::RandomSubsample => "random_subsample",
        }
    }
}

/// `G` index sets over `0..n`, possibly overlapping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grouping {
    pub strategy: Strategy,
    pub n: usize,
    pub groups: Vec<Vec<usize>>,
    pub seed: Option<u64>,
}

impl Grouping {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn min_group_size(&self) -> usize {
        self.groups.iter().map(Vec::len).min().unwrap_or(0)
    }

    /// Checks the structural invariants shared by all strategies.
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::InvalidInput("grouping has no groups".into()));
        }
        for (g, idx) in self.groups.iter().enumerate() {
            if idx.is_empty() {
                return Err(Error::InvalidInput(format!("group {g} is empty")));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= self.n) {
                return Err(Error::InvalidInput(format!(
                    "group {g} contains index {bad} outside 0..{}",
                    self.n
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: Grouping = serde_json::from_str(s)?;
        g.validate()?;
        Ok(g)
    }
}

/// One group per distinct label, in ascending label order.
pub fn known_groups(labels: &[i64]) -> Result<Grouping> {
    if labels.is_empty() {
        return Err(Error::InvalidInput("label vector is empty".into()));
    }
    let mut by_label: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    Ok(Grouping {
        strategy: Strategy::Known,
        n: labels.len(),
        groups: by_label.into_values().collect(),
        seed: None,
    })
}

/// `G` contiguous blocks of `⌊n/G⌋` samples; the last block takes the
/// remainder.
pub fn consecutive_blocks(n: usize, num_groups: usize) -> Result<Grouping> {
    if num_groups == 0 || num_groups > n {
        return Err(Error::InvalidInput(format!(
            "need 1 <= G <= n for consecutive blocks, got G={num_groups}, n={n}"
        )));
    }
    let m = n / num_groups;
    let groups = (0..num_groups)
        .map(|g| {
            let end = if g + 1 == num_groups { n } else { (g + 1) * m };
            (g * m..end).collect()
        })
        .collect();
    Ok(Grouping {
        strategy: Strategy::ConsecutiveBlocks,
        n,
        groups,
        seed: None,
    })
}

/// `G` groups of `m` distinct indices each, drawn independently.
///
/// Group `g` draws from stream `g` of `seed`, so the result does not depend
/// on generation order. Indices are sorted within each group.
pub fn random_subsample(n: usize, num_groups: usize, m: usize, seed: u64) -> Result<Grouping> {
    if m == 0 || m > n {
        return Err(Error::InvalidInput(format!(
            "group size m={m} must satisfy 1 <= m <= n={n}"
        )));
    }
    if num_groups == 0 {
        return Err(Error::InvalidInput("need at least one group".into()));
    }
    let groups = (0..num_groups)
        .map(|g| {
            let mut rng = stream_rng(seed, g as u64);
            let mut idx = rand::seq::index::sample(&mut rng, n, m).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect();
    Ok(Grouping {
        strategy: Strategy::RandomSubsample,
        n,
        groups,
        seed: Some(seed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_group_examples() {
        assert_eq!(known_groups(&[0, 0, 1, 1]).unwrap().groups, vec![vec![0, 1], vec![2, 3]]);
        assert_eq!(
            known_groups(&[2, 0, 2, 0, 1]).unwrap().groups,
            vec![vec![1, 3], vec![4], vec![0, 2]]
        );
        let g = known_groups(&[7; 6]).unwrap();
        assert_eq!(g.groups, vec![(0..6).collect::<Vec<_>>()]);
        assert!(known_groups(&[]).is_err());
    }

    #[test]
    fn consecutive_block_examples() {
        let g = consecutive_blocks(10, 3).unwrap();
        assert_eq!(g.groups, vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7, 8, 9]]);
        let g = consecutive_blocks(4, 4).unwrap();
        assert_eq!(g.groups, vec![vec![0], vec![1], vec![2], vec![3]]);
        assert_eq!(consecutive_blocks(7, 1).unwrap().groups, vec![(0..7).collect::<Vec<_>>()]);
        assert!(consecutive_blocks(3, 4).is_err());
        assert!(consecutive_blocks(3, 0).is_err());
    }

    #[test]
    fn exhaustive_subsample_covers_everything() {
        let g = random_subsample(9, 4, 9, 1).unwrap();
        for idx in &g.groups {
            assert_eq!(*idx, (0..9).collect::<Vec<_>>());
        }
        assert!(random_subsample(5, 2, 6, 0).is_err());
    }

    #[test]
    fn subsample_is_deterministic_per_seed() {
        assert_eq!(random_subsample(100, 5, 10, 42).unwrap(), random_subsample(100, 5, 10, 42).unwrap());
        assert_ne!(random_subsample(100, 5, 10, 42).unwrap(), random_subsample(100, 5, 10, 43).unwrap());
    }

    #[test]
    fn subsample_inclusion_frequency_is_uniform() {
        let (n, m, num_groups) = (10_000, 100, 50);
        let g = random_subsample(n, num_groups, m, 2024).unwrap();
        let mut counts = vec![0usize; n];
        for idx in &g.groups {
            assert_eq!(idx.len(), m);
            assert!(idx.windows(2).all(|w| w[0] < w[1]));
            for &i in idx {
                counts[i] += 1;
            }
        }
        // Per-group inclusion indicator has mean m/n; averaged over G groups
        // the standard error is sqrt(q(1-q)/G).
        let q = m as f64 / n as f64;
        let se = (q * (1.0 - q) / num_groups as f64).sqrt();
        // Pool over index blocks of 1000 to get stable frequencies.
        for block in counts.chunks(1000) {
            let freq = block.iter().sum::<usize>() as f64 / (block.len() * num_groups) as f64;
            let block_se = se / (block.len() as f64).sqrt();
            assert!((freq - q).abs() <= 3.0 * block_se, "freq {freq} vs {q}");
        }
    }

    #[test]
    fn json_shape() {
        let g = random_subsample(5, 2, 2, 9).unwrap();
        let v: serde_json::Value = serde_json::from_str(&g.to_json().unwrap()).unwrap();
        assert_eq!(v["strategy"], "random_subsample");
        assert_eq!(v["n"], 5);
        assert_eq!(v["seed"], 9);
        assert_eq!(v["groups"].as_array().unwrap().len(), 2);
        assert_eq!(Grouping::from_json(&g.to_json().unwrap()).unwrap(), g);
        let blocks = consecutive_blocks(4, 2).unwrap();
        let v: serde_json::Value = serde_json::from_str(&blocks.to_json().unwrap()).unwrap();
        assert!(v["seed"].is_null());
    }

    proptest! {
        #[test]
        fn blocks_concatenate_to_range(n in 1usize..300, g in 1usize..40) {
            prop_assume!(g <= n);
            let grouping = consecutive_blocks(n, g).unwrap();
            grouping.validate().unwrap();
            let flat: Vec<usize> = grouping.groups.concat();
            prop_assert_eq!(flat, (0..n).collect::<Vec<_>>());
            let m = n / g;
            for idx in &grouping.groups[..g - 1] {
                prop_assert_eq!(idx.len(), m);
            }
        }

        #[test]
        fn known_groups_partition(labels in prop::collection::vec(-3i64..4, 1..60)) {
            let grouping = known_groups(&labels).unwrap();
            grouping.validate().unwrap();
            let mut flat = grouping.groups.concat();
            flat.sort_unstable();
            prop_assert_eq!(flat, (0..labels.len()).collect::<Vec<_>>());
            for idx in &grouping.groups {
                prop_assert!(idx.iter().all(|&i| labels[i] == labels[idx[0]]));
            }
        }

        #[test]
        fn subsample_groups_have_distinct_indices(n in 1usize..200, g in 1usize..10, frac in 0.01f64..1.0, seed in any::<u64>()) {
            let m = ((n as f64 * frac).ceil() as usize).clamp(1, n);
            let grouping = random_subsample(n, g, m, seed).unwrap();
            grouping.validate().unwrap();
            for idx in &grouping.groups {
                prop_assert_eq!(idx.len(), m);
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
