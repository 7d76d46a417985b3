use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub id: String,
    pub score: f64,
    pub label: u8,
}

/// Scores with binary labels, the input to [`auroc`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoredSet {
    pub entries: Vec<Scored>,
}

impl ScoredSet {
    pub fn from_parts(ids: &[String], scores: &[f64], labels: &[u8]) -> Result<Self> {
        if ids.len() != scores.len() || scores.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} ids, {} scores, {} labels",
                ids.len(),
                scores.len(),
                labels.len()
            )));
        }
        Ok(Self {
            entries: ids
                .iter()
                .zip(scores)
                .zip(labels)
                .map(|((id, &score), &label)| Scored {
                    id: id.clone(),
                    score,
                    label,
                })
                .collect(),
        })
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.entries.iter().map(|e| e.label).collect()
    }
}

pub fn auroc(set: &ScoredSet) -> Result<f64> {
    auroc_scores(&set.scores(), &set.labels())
}

/// `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)` via mid-ranks.
///
/// Ranks are kept doubled so every intermediate is an integer; the result is
/// a single division of two exact integers.
pub fn auroc_scores(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::shape(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::invalid(format!("labels must be 0 or 1, got {bad}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::AurocUndefined(format!(
            "{n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share the mid-rank (i+1+j)/2
        let doubled = (i + 1 + j) as u128;
        let positives = order[i..j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        doubled_rank_sum += doubled * positives;
        i = j;
    }
    let doubled_u = doubled_rank_sum - n_pos * (n_pos + 1);
    Ok(doubled_u as f64 / (2 * n_pos * n_neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_reversed() {
        assert_eq!(auroc_scores(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc_scores(&[0.1, 0.2, 0.8, 0.9], &[1, 1, 0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn all_ties_is_half() {
        assert_eq!(auroc_scores(&[3.0; 7], &[0, 1, 1, 0, 1, 0, 0]).unwrap(), 0.5);
    }

    #[test]
    fn hand_value_with_tie() {
        // pairs (pos, neg): (0.5,0.2)>, (0.5,0.5)=, (0.9,0.2)>, (0.9,0.5)> → 3.5/4
        assert_eq!(auroc_scores(&[0.2, 0.5, 0.5, 0.9], &[0, 0, 1, 1]).unwrap(), 0.875);
    }

    #[test]
    fn single_class_is_undefined() {
        let e = auroc_scores(&[0.1, 0.2], &[1, 1]).unwrap_err();
        assert!(e.to_string().contains("AUROC undefined"));
    }

    #[test]
    fn infinite_scores_are_ordered() {
        let s = [f64::NEG_INFINITY, 0.0, f64::INFINITY];
        assert_eq!(auroc_scores(&s, &[0, 1, 1]).unwrap(), 1.0);
        assert!(auroc_scores(&[f64::NAN, 0.0], &[0, 1]).is_err());
    }
}
