//! Cosine diagnostics between classwise mean embeddings.

use crate::error::{Error, Result};
use crate::losses::{cosine, ClasswiseEmbeddings};

/// Cross-path similarities for one class; `None` when the class is absent
/// from either path or a mean has zero norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassAlignment {
    pub class: usize,
    pub common_pediatric: Option<f64>,
    pub common_adult: Option<f64>,
    pub pediatric_adult: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentReport {
    pub classes: Vec<ClassAlignment>,
    /// `interclass[i][j]` = SIM of common-path means of classes `i` and `j`.
    pub interclass: Vec<Vec<Option<f64>>>,
}

fn sim(a: &ClasswiseEmbeddings<f64>, b: &ClasswiseEmbeddings<f64>, j: usize) -> Option<f64> {
    cosine(a.row(j)?, b.row(j)?)
}

fn between(w: &ClasswiseEmbeddings<f64>, i: usize, j: usize) -> Option<f64> {
    cosine(w.row(i)?, w.row(j)?)
}

pub fn alignment_report(
    w_c: &ClasswiseEmbeddings<f64>,
    w_p: &ClasswiseEmbeddings<f64>,
    w_a: &ClasswiseEmbeddings<f64>,
) -> Result<AlignmentReport> {
    let c = w_c.classes();
    if w_p.classes() != c || w_a.classes() != c || w_p.w.shape() != w_c.w.shape() || w_a.w.shape() != w_c.w.shape() {
        return Err(Error::shape("class-mean matrices disagree in shape"));
    }
    let classes = (0..c)
        .map(|j| ClassAlignment {
            class: j,
            common_pediatric: sim(w_c, w_p, j),
            common_adult: sim(w_c, w_a, j),
            pediatric_adult: sim(w_p, w_a, j),
        })
        .collect();
    let interclass = (0..c)
        .map(|i| (0..c).map(|j| between(w_c, i, j)).collect())
        .collect();
    Ok(AlignmentReport {
        classes,
        interclass,
    })
}

impl AlignmentReport {
    /// Mean of every defined `SIM(w_c, w_p)` and `SIM(w_c, w_a)` entry.
    pub fn mean_cross_path(&self) -> Option<f64> {
        let vals: Vec<f64> = self
            .classes
            .iter()
            .flat_map(|c| [c.common_pediatric, c.common_adult])
            .flatten()
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor64;

    fn ce(rows: &[Vec<f64>], present: &[bool]) -> ClasswiseEmbeddings<f64> {
        ClasswiseEmbeddings {
            w: Tensor64::from_rows(rows).unwrap(),
            present: present.to_vec(),
        }
    }

    #[test]
    fn identical_means_align_perfectly() {
        let w = ce(&[vec![1.0, 2.0], vec![-1.0, 0.5]], &[true, true]);
        let r = alignment_report(&w, &w, &w).unwrap();
        for c in &r.classes {
            for v in [c.common_pediatric, c.common_adult, c.pediatric_adult] {
                assert!((v.unwrap() - 1.0).abs() < 1e-15);
            }
        }
        assert!((r.mean_cross_path().unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_common_means_have_zero_interclass_entry() {
        let w = ce(&[vec![1.0, 0.0], vec![0.0, 3.0]], &[true, true]);
        let r = alignment_report(&w, &w, &w).unwrap();
        assert_eq!(r.interclass[0][1], Some(0.0));
        assert_eq!(r.interclass[1][0], Some(0.0));
    }

    #[test]
    fn absent_class_is_masked() {
        let w = ce(&[vec![1.0, 0.0], vec![0.0, 3.0]], &[true, true]);
        let p = ce(&[vec![1.0, 0.0], vec![0.0, 0.0]], &[true, false]);
        let r = alignment_report(&w, &p, &w).unwrap();
        assert_eq!(r.classes[1].common_pediatric, None);
        assert!(r.classes[1].common_adult.is_some());
    }
}
