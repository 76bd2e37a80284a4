//! Balanced random partitions of `0..n` into validation folds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub v: usize,
    /// `assignment[i]` is the validation fold of subject `i`.
    pub assignment: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn validation(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn training(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.v];
        for &f in &self.assignment {
            s[f] += 1;
        }
        s
    }
}

/// Random partition into `v` folds whose sizes differ by at most one.
pub fn make_folds(n: usize, v: usize, seed: u64) -> Result<FoldPlan> {
    if v < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {v}")));
    }
    if v > n {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} subjects into {v} folds"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let mut assignment = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        assignment[i] = pos % v;
    }
    Ok(FoldPlan {
        v,
        assignment,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_folds() {
        let plan = make_folds(10, 10, 1).unwrap();
        assert_eq!(plan.sizes(), vec![1; 10]);
    }

    #[test]
    fn balanced_sizes() {
        let plan = make_folds(10, 3, 1).unwrap();
        let mut s = plan.sizes();
        s.sort_unstable();
        assert_eq!(s, vec![3, 3, 4]);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        assert_eq!(make_folds(57, 5, 9).unwrap(), make_folds(57, 5, 9).unwrap());
        assert_ne!(
            make_folds(57, 5, 9).unwrap().assignment,
            make_folds(57, 5, 10).unwrap().assignment
        );
    }

    #[test]
    fn rejects_bad_fold_counts() {
        assert!(make_folds(3, 4, 0).is_err());
        assert!(make_folds(3, 1, 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn folds_partition_the_sample(n in 2usize..300, v in 2usize..12, seed in 0u64..1000) {
            proptest::prop_assume!(v <= n);
            let plan = make_folds(n, v, seed).unwrap();
            let sizes = plan.sizes();
            let max = *sizes.iter().max().unwrap();
            let min = *sizes.iter().min().unwrap();
            proptest::prop_assert!(max - min <= 1);
            proptest::prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            let mut all: Vec<usize> = (0..v).flat_map(|f| plan.validation(f)).collect();
            all.sort_unstable();
            proptest::prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
