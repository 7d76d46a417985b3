//! Domain- and class-balanced mini-batches.

use rand::seq::SliceRandom;

use super::sample::{Dataset, Domain, Split};
use crate::error::{Error, Result};
use crate::util::rng_for;

/// Dataset indices of one domain, split by class.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Cells {
    pub negatives: Vec<usize>,
    pub positives: Vec<usize>,
}

impl Cells {
    pub fn from_indices(dataset: &Dataset, indices: &[usize]) -> Self {
        let (positives, negatives) = indices.iter().partition(|&&i| dataset.get(i).label == 1);
        Self {
            negatives,
            positives,
        }
    }

    pub fn of(dataset: &Dataset, domain: Domain, split: Split) -> Self {
        Self::from_indices(dataset, &dataset.indices(domain, split))
    }

    fn by_class(&self) -> [&[usize]; 2] {
        [&self.negatives, &self.positives]
    }

    fn largest(&self) -> usize {
        self.negatives.len().max(self.positives.len())
    }
}

/// One step's worth of indices; each half holds `batch_size/4` negatives
/// followed by `batch_size/4` positives. A half is empty when its domain is
/// not being sampled.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DomainBatch {
    pub pediatric: Vec<usize>,
    pub adult: Vec<usize>,
}

/// Yields batches with exactly `batch_size/4` samples per (domain, class)
/// cell. An epoch is `⌊largest cell / (batch_size/4)⌋` steps; cells are
/// consumed as fresh permutations, repeated as needed for smaller cells,
/// and the partial remainder is dropped.
#[derive(Clone, Debug)]
pub struct BalancedSampler {
    pediatric: Option<Cells>,
    adult: Option<Cells>,
    per_cell: usize,
    steps: usize,
    seed: u64,
}

impl BalancedSampler {
    pub fn new(pediatric: Cells, adult: Cells, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 || batch_size % 4 != 0 {
            return Err(Error::invalid(format!(
                "batch size must be a positive multiple of 4, got {batch_size}"
            )));
        }
        for (domain, cells) in [(Domain::Pediatric, &pediatric), (Domain::Adult, &adult)] {
            for (class, cell) in cells.by_class().iter().enumerate() {
                if cell.is_empty() {
                    return Err(Error::invalid(format!(
                        "cell (domain {}, class {class}) is empty",
                        domain.as_str()
                    )));
                }
            }
        }
        let per_cell = batch_size / 4;
        let largest = pediatric.largest().max(adult.largest());
        Ok(Self {
            pediatric: Some(pediatric),
            adult: Some(adult),
            per_cell,
            steps: (largest / per_cell).max(1),
            seed,
        })
    }

    /// Stops sampling the other domain. Epoch length and the kept domain's
    /// batches are unchanged, so the kept half matches the two-domain stream.
    pub fn restricted_to(mut self, keep: Domain) -> Self {
        match keep {
            Domain::Pediatric => self.adult = None,
            Domain::Adult => self.pediatric = None,
        }
        self
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps
    }

    pub fn per_cell(&self) -> usize {
        self.per_cell
    }

    fn cell_stream(&self, domain: Domain, class: usize, cell: &[usize], epoch: usize) -> Vec<usize> {
        let need = self.steps * self.per_cell;
        let mut rng = rng_for(
            self.seed,
            &["sampler", domain.as_str(), &class.to_string(), &epoch.to_string()],
        );
        let mut out = Vec::with_capacity(need + cell.len());
        while out.len() < need {
            let mut perm = cell.to_vec();
            perm.shuffle(&mut rng);
            out.extend(perm);
        }
        out.truncate(need);
        out
    }

    fn domain_batches(&self, domain: Domain, cells: Option<&Cells>, epoch: usize) -> Vec<Vec<usize>> {
        let Some(cells) = cells else {
            return vec![Vec::new(); self.steps];
        };
        let streams: Vec<Vec<usize>> = cells
            .by_class()
            .iter()
            .enumerate()
            .map(|(class, cell)| self.cell_stream(domain, class, cell, epoch))
            .collect();
        (0..self.steps)
            .map(|s| {
                let span = s * self.per_cell..(s + 1) * self.per_cell;
                streams.iter().flat_map(|st| st[span.clone()].iter().copied()).collect()
            })
            .collect()
    }

    pub fn epoch(&self, epoch: usize) -> Vec<DomainBatch> {
        let p = self.domain_batches(Domain::Pediatric, self.pediatric.as_ref(), epoch);
        let a = self.domain_batches(Domain::Adult, self.adult.as_ref(), epoch);
        p.into_iter()
            .zip(a)
            .map(|(pediatric, adult)| DomainBatch { pediatric, adult })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn cells(offset: usize, neg: usize, pos: usize) -> Cells {
        Cells {
            negatives: (offset..offset + neg).collect(),
            positives: (offset + neg..offset + neg + pos).collect(),
        }
    }

    #[test]
    fn hundred_per_cell_gives_twelve_batches_without_repeats() {
        let s = BalancedSampler::new(cells(0, 100, 100), cells(200, 100, 100), 32, 1).unwrap();
        let epoch = s.epoch(0);
        assert_eq!(epoch.len(), 12);
        let mut seen = HashMap::new();
        for b in &epoch {
            assert_eq!(b.pediatric.len(), 16);
            assert_eq!(b.adult.len(), 16);
            assert!(b.pediatric[..8].iter().all(|&i| i < 100));
            assert!(b.pediatric[8..].iter().all(|&i| (100..200).contains(&i)));
            for &i in b.pediatric.iter().chain(&b.adult) {
                *seen.entry(i).or_insert(0) += 1;
            }
        }
        assert!(seen.values().all(|&c| c == 1));
        assert_eq!(seen.len(), 4 * 96);
    }

    #[test]
    fn tiny_minority_cell_is_oversampled_evenly() {
        let s = BalancedSampler::new(cells(0, 100, 3), cells(200, 100, 100), 32, 9).unwrap();
        let epoch = s.epoch(4);
        let mut freq = HashMap::new();
        for b in &epoch {
            assert_eq!(b.pediatric[8..].iter().filter(|&&i| (100..103).contains(&i)).count(), 8);
            for &i in &b.pediatric[8..] {
                *freq.entry(i).or_insert(0) += 1;
            }
        }
        // 96 draws over 3 samples
        assert_eq!(freq.values().copied().collect::<Vec<_>>(), vec![32; 3]);
    }

    #[test]
    fn restriction_keeps_the_kept_half() {
        let s = BalancedSampler::new(cells(0, 30, 10), cells(100, 50, 50), 8, 3).unwrap();
        let full = s.epoch(2);
        let p_only = s.clone().restricted_to(Domain::Pediatric).epoch(2);
        assert_eq!(full.len(), 25);
        assert_eq!(p_only.len(), 25);
        for (f, p) in full.iter().zip(&p_only) {
            assert_eq!(f.pediatric, p.pediatric);
            assert!(p.adult.is_empty());
        }
    }

    #[test]
    fn epochs_and_seeds_reshuffle() {
        let s = BalancedSampler::new(cells(0, 20, 20), cells(40, 20, 20), 8, 3).unwrap();
        assert_eq!(s.epoch(0), s.epoch(0));
        assert_ne!(s.epoch(0), s.epoch(1));
        let t = BalancedSampler::new(cells(0, 20, 20), cells(40, 20, 20), 8, 4).unwrap();
        assert_ne!(s.epoch(0), t.epoch(0));
    }

    #[test]
    fn construction_errors() {
        assert!(BalancedSampler::new(cells(0, 4, 4), cells(8, 4, 4), 30, 0).is_err());
        assert!(BalancedSampler::new(cells(0, 4, 0), cells(8, 4, 4), 8, 0).is_err());
    }
}
