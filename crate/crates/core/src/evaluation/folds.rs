//! Person-camera grouped k-fold splits.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Group key → fold index.
    pub assignment: BTreeMap<String, usize>,
}

/// Shuffles the distinct groups with `seed`, then deals each to the fold with
/// the fewest examples so far (lowest index on ties). `groups` holds one key
/// per example.
pub fn grouped_kfold<S: AsRef<str>>(groups: &[S], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for g in groups {
        *sizes.entry(g.as_ref()).or_default() += 1;
    }
    if sizes.len() < k {
        return Err(Error::Config(format!(
            "{} groups cannot fill {k} folds",
            sizes.len()
        )));
    }
    let mut keys: Vec<&str> = sizes.keys().copied().collect();
    keys.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut load = vec![0usize; k];
    let mut assignment = BTreeMap::new();
    for key in keys {
        let f = (0..k).min_by_key(|&f| (load[f], f)).unwrap();
        load[f] += sizes[key];
        assignment.insert(key.to_string(), f);
    }
    Ok(FoldPlan {
        k,
        seed,
        assignment,
    })
}

impl FoldPlan {
    pub fn fold_of(&self, group: &str) -> Option<usize> {
        self.assignment.get(group).copied()
    }

    /// `(train, test)` example indices for `fold`.
    pub fn split<S: AsRef<str>>(
        &self,
        groups: &[S],
        fold: usize,
    ) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, g) in groups.iter().enumerate() {
            match self.fold_of(g.as_ref()) {
                Some(f) if f == fold => test.push(i),
                Some(_) => train.push(i),
                None => {
                    return Err(Error::Config(format!(
                        "group {} is not in the fold plan",
                        g.as_ref()
                    )))
                }
            }
        }
        Ok((train, test))
    }

    pub fn fold_sizes<S: AsRef<str>>(&self, groups: &[S]) -> Vec<usize> {
        let mut n = vec![0; self.k];
        for g in groups {
            if let Some(f) = self.fold_of(g.as_ref()) {
                n[f] += 1;
            }
        }
        n
    }
}

/// Fails if any group appears on both sides of a split.
pub fn assert_disjoint<S: AsRef<str>>(
    groups: &[S],
    train: &[usize],
    test: &[usize],
    what: &str,
) -> Result<()> {
    let test_groups: BTreeSet<&str> = test.iter().map(|&i| groups[i].as_ref()).collect();
    if let Some(&i) = train
        .iter()
        .find(|&&i| test_groups.contains(groups[i].as_ref()))
    {
        return Err(Error::Leakage(format!(
            "{what}: group {} is in both the training and the test data",
            groups[i].as_ref()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ten_groups_ten_folds() {
        let groups: Vec<String> = (0..10).flat_map(|g| vec![format!("p{g}:c0"); 3]).collect();
        let plan = grouped_kfold(&groups, 10, 1).unwrap();
        let mut seen = [0; 10];
        for f in plan.assignment.values() {
            seen[*f] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert!(grouped_kfold(&groups, 11, 1).is_err());
    }

    #[test]
    fn greedy_balance_matches_recomputation() {
        let mut groups = Vec::new();
        for g in 0..30 {
            for _ in 0..(1 + (g * 7) % 13) {
                groups.push(format!("g{g}"));
            }
        }
        let plan = grouped_kfold(&groups, 5, 9).unwrap();
        // Oracle: replay the deal with the same shuffled order.
        let mut keys: Vec<String> = {
            let mut s: Vec<String> = groups.clone();
            s.sort();
            s.dedup();
            s
        };
        keys.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
        let mut load = [0usize; 5];
        for key in &keys {
            let size = groups.iter().filter(|g| *g == key).count();
            let mut best = 0;
            for f in 1..5 {
                if load[f] < load[best] {
                    best = f;
                }
            }
            assert_eq!(plan.fold_of(key), Some(best));
            load[best] += size;
        }
        let sizes = plan.fold_sizes(&groups);
        let largest_group = 13;
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= largest_group);
    }

    #[test]
    fn leakage_detected() {
        let groups = vec!["a", "a", "b"];
        assert!(assert_disjoint(&groups, &[0], &[2], "t").is_ok());
        assert!(matches!(
            assert_disjoint(&groups, &[0], &[1], "t"),
            Err(Error::Leakage(_))
        ));
    }

    proptest! {
        #[test]
        fn every_group_in_exactly_one_test_fold(sizes in proptest::collection::vec(1usize..20, 5..40), seed in 0u64..100) {
            let groups: Vec<String> = sizes.iter().enumerate().flat_map(|(g, &n)| vec![format!("g{g}"); n]).collect();
            let k = 5.min(sizes.len());
            let plan = grouped_kfold(&groups, k, seed).unwrap();
            let mut tested = vec![0usize; groups.len()];
            for f in 0..k {
                let (train, test) = plan.split(&groups, f).unwrap();
                prop_assert_eq!(train.len() + test.len(), groups.len());
                assert_disjoint(&groups, &train, &test, "prop").unwrap();
                for i in test {
                    tested[i] += 1;
                }
            }
            prop_assert!(tested.iter().all(|&c| c == 1));
        }
    }
}
