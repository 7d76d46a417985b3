use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::util::rng_for;

/// Fold index in `[0, k)` for every sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    folds: Vec<usize>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, sample: usize) -> usize {
        self.folds[sample]
    }

    pub fn folds(&self) -> &[usize] {
        &self.folds
    }

    /// Sample positions assigned to `fold`, ascending.
    pub fn members(&self, fold: usize) -> Vec<usize> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Per-class shuffled round-robin assignment.
///
/// Each class is shuffled with its own seeded stream and dealt to folds in
/// turn; the dealing position carries over between classes so fold totals
/// stay balanced as well.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    if let Some((class, members)) = by_class.iter().find(|(_, m)| m.len() < k) {
        return Err(Error::invalid(format!(
            "class {class} has {} members, fewer than k = {k}",
            members.len()
        )));
    }
    let mut folds = vec![0; labels.len()];
    let mut next = 0;
    for (class, mut members) in by_class {
        let mut rng = rng_for(seed, &["kfold", &class.to_string()]);
        members.shuffle(&mut rng);
        for i in members {
            folds[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldAssignment { k, folds })
}
