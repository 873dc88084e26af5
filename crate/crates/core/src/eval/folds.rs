//! Subject-level fold assignment for cross-validation.
//!
//! Folds partition *subjects*, not windows: every window of a subject lands
//! in exactly one fold, so a model is never scored on a person it saw during
//! training. The assignment is a seeded shuffle of the sorted subject list
//! chopped into near-equal parts, and depends only on `(subjects, k, seed)`.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::substream;

/// A k-way partition of subject ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    folds: Vec<Vec<u32>>,
}

/// Shuffles the distinct subjects with the `fold` substream of `seed` and
/// deals them into `k` parts whose sizes differ by at most one (larger parts
/// first). Duplicate ids collapse; fewer distinct subjects than folds is a
/// configuration error.
pub fn plan_folds(subjects: &[u32], k: usize, seed: u64) -> Result<FoldPlan> {
    let mut distinct: Vec<u32> = subjects.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if k == 0 || distinct.len() < k {
        return Err(Error::TooFewSubjects {
            subjects: distinct.len(),
            k,
        });
    }

    let mut rng = substream(seed, "fold", 0);
    distinct.shuffle(&mut rng);

    let base = distinct.len() / k;
    let extra = distinct.len() % k;
    let mut folds = Vec::with_capacity(k);
    let mut at = 0;
    for f in 0..k {
        let take = base + usize::from(f < extra);
        let mut fold: Vec<u32> = distinct[at..at + take].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        at += take;
    }
    Ok(FoldPlan { folds })
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Subjects held out by fold `i`, ascending.
    pub fn held_out(&self, i: usize) -> &[u32] {
        &self.folds[i]
    }

    /// Subjects trained on by fold `i`: everyone not held out.
    pub fn train_subjects(&self, i: usize) -> Vec<u32> {
        let mut s: Vec<u32> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(f, _)| *f != i)
            .flat_map(|(_, fold)| fold.iter().copied())
            .collect();
        s.sort_unstable();
        s
    }
}
