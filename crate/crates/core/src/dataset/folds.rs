use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use super::{Corpus, DatasetError};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub train: BTreeSet<usize>,
    pub test: BTreeSet<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub folds: Vec<Fold>,
}

/// Shuffles students with a seeded RNG and deals them into `n_folds`
/// test sets whose sizes differ by at most one.
pub fn split_folds(corpus: &Corpus, n_folds: usize, seed: u64) -> Result<FoldSplit, DatasetError> {
    let n = corpus.num_students();
    if n_folds < 2 || n < n_folds {
        return Err(DatasetError::TooFewStudents {
            needed: n_folds.max(2),
            have: n,
            folds: n_folds,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::rng(rng::derive_tag(seed, "folds")));
    let base = n / n_folds;
    let extra = n % n_folds;
    let mut folds = Vec::with_capacity(n_folds);
    let mut start = 0;
    for f in 0..n_folds {
        let size = base + usize::from(f < extra);
        let test: BTreeSet<usize> = order[start..start + size].iter().copied().collect();
        let train = (0..n).filter(|i| !test.contains(i)).collect();
        folds.push(Fold { train, test });
        start += size;
    }
    Ok(FoldSplit { folds })
}
