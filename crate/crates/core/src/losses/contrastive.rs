//! Multi-positive contrastive loss.
//!
//! For an anchor `a` and candidates `b_1..b_N` (all unit norm) the predicted
//! distribution is a temperature softmax over dot products, the target
//! distribution is uniform over candidates sharing the anchor's label, and
//! the loss is the cross-entropy between the two.

use super::{check_unit_rows, PathTag, LOG_FLOOR, UNIT_NORM_TOL};
use crate::diffcore::{Function, Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn check_tau<T: Scalar>(tau: T) -> Result<()> {
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

fn check_unit<T: Scalar>(v: &[T], what: &str) -> Result<()> {
    let norm = dot(v, v).sqrt().to_f64_lossy();
    if (norm - 1.0).abs() > UNIT_NORM_TOL {
        return Err(Error::invalid(format!("{what} is not unit norm (|v| = {norm})")));
    }
    Ok(())
}

/// Softmax of `anchor · candidate / τ` over the candidates, computed with
/// max subtraction.
pub fn contrastive_distribution<T: Scalar>(anchor: &[T], candidates: &[&[T]], tau: T) -> Result<Vec<T>> {
    check_tau(tau)?;
    if candidates.is_empty() {
        return Err(Error::invalid("need at least one candidate"));
    }
    check_unit(anchor, "anchor")?;
    for (i, c) in candidates.iter().enumerate() {
        if c.len() != anchor.len() {
            return Err(Error::shape(format!(
                "candidate {i} has width {}, anchor has {}",
                c.len(),
                anchor.len()
            )));
        }
        check_unit(c, &format!("candidate {i}"))?;
    }
    let logits: Vec<T> = candidates.iter().map(|c| dot(anchor, c) / tau).collect();
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Uniform distribution over candidates whose label equals the anchor's.
pub fn match_distribution<T: Scalar>(anchor_label: usize, candidate_labels: &[usize]) -> Result<Vec<T>> {
    let k = candidate_labels.iter().filter(|&&l| l == anchor_label).count();
    if k == 0 {
        return Err(Error::NoPositives);
    }
    let share = T::one() / T::from_usize_lossy(k);
    Ok(candidate_labels
        .iter()
        .map(|&l| if l == anchor_label { share } else { T::zero() })
        .collect())
}

/// `H(p, q) = −Σ p_i ln max(q_i, 1e-12)`.
pub fn cross_entropy<T: Scalar>(p: &[T], q: &[T]) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::shape(format!("p has {} entries, q has {}", p.len(), q.len())));
    }
    let floor = T::lit(LOG_FLOOR);
    Ok(p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > T::zero())
        .map(|(&pi, &qi)| -pi * qi.max(floor).ln())
        .sum())
}

/// Unit-norm embeddings of one path with their class labels.
#[derive(Clone, Debug)]
pub struct EmbeddingBatch<T> {
    z: Tensor<T>,
    labels: Vec<usize>,
    path: PathTag,
}

impl<T: Scalar> EmbeddingBatch<T> {
    pub fn new(z: Tensor<T>, labels: Vec<usize>, path: PathTag) -> Result<Self> {
        if z.rank() != 2 || z.shape()[0] != labels.len() {
            return Err(Error::shape(format!(
                "embedding batch {:?} with {} labels",
                z.shape(),
                labels.len()
            )));
        }
        check_unit_rows(&z)?;
        Ok(Self { z, labels, path })
    }

    pub fn z(&self) -> &Tensor<T> {
        &self.z
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn path(&self) -> PathTag {
        self.path
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-anchor predicted and target distributions over the other samples
/// of a batch (self excluded, so each vector has `N − 1` entries).
#[derive(Clone, Debug)]
pub struct ContrastiveDistributions<T> {
    pub tau: T,
    pub q: Vec<Vec<T>>,
    /// `None` for anchors without a positive.
    pub p: Vec<Option<Vec<T>>>,
}

pub fn contrastive_distributions<T: Scalar>(
    batch: &EmbeddingBatch<T>,
    tau: T,
) -> Result<ContrastiveDistributions<T>> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::invalid("contrastive evaluation needs at least 2 samples"));
    }
    let mut q = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    for i in 0..n {
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let cands: Vec<&[T]> = others.iter().map(|&j| batch.z.row(j)).collect();
        q.push(contrastive_distribution(batch.z.row(i), &cands, tau)?);
        let labels: Vec<usize> = others.iter().map(|&j| batch.labels[j]).collect();
        p.push(match match_distribution(batch.labels[i], &labels) {
            Ok(v) => Some(v),
            Err(Error::NoPositives) => None,
            Err(e) => return Err(e),
        });
    }
    Ok(ContrastiveDistributions { tau, q, p })
}

/// Mean over anchors with at least one positive of `H(p, q)`, where the
/// candidates of each anchor are all other samples of the batch.
pub fn multi_positive_contrastive_loss<T: Scalar>(batch: &EmbeddingBatch<T>, tau: T) -> Result<T> {
    if batch.len() < 2 {
        return Err(Error::invalid("contrastive evaluation needs at least 2 samples"));
    }
    let mut op = MultiPositiveContrastive::new(batch.labels.clone(), tau)?;
    op.forward(&[&batch.z])?.item()
}

/// Graph form of [`multi_positive_contrastive_loss`], differentiable in `z`.
///
/// Does not re-check unit norm so that finite-difference perturbations of
/// `z` remain evaluable.
pub struct MultiPositiveContrastive<T> {
    labels: Vec<usize>,
    tau: T,
    /// Row-major `N×N` softmax probabilities (diagonal zero).
    q: Vec<T>,
    /// Per anchor: whether it contributes.
    valid: Vec<bool>,
    /// Per (anchor, candidate): whether the log term is above the floor.
    active: Vec<bool>,
    n_valid: usize,
}

impl<T: Scalar> MultiPositiveContrastive<T> {
    pub fn new(labels: Vec<usize>, tau: T) -> Result<Self> {
        check_tau(tau)?;
        Ok(Self {
            labels,
            tau,
            q: Vec::new(),
            valid: Vec::new(),
            active: Vec::new(),
            n_valid: 0,
        })
    }
}

impl<T: Scalar> Function<T> for MultiPositiveContrastive<T> {
    fn name(&self) -> &'static str {
        "multi_positive_contrastive"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let z = inputs[0];
        if z.rank() != 2 || z.shape()[0] != self.labels.len() {
            return Err(Error::shape(format!(
                "contrastive loss got embeddings {:?} for {} labels",
                z.shape(),
                self.labels.len()
            )));
        }
        let n = self.labels.len();
        if n < 2 {
            return Err(Error::invalid("contrastive evaluation needs at least 2 samples"));
        }
        let floor = T::lit(LOG_FLOOR);
        let log_floor = floor.ln();
        self.q = vec![T::zero(); n * n];
        self.valid = vec![false; n];
        self.active = vec![false; n * n];
        self.n_valid = 0;
        let mut total = T::zero();
        for i in 0..n {
            let k = (0..n)
                .filter(|&j| j != i && self.labels[j] == self.labels[i])
                .count();
            if k == 0 {
                continue;
            }
            self.valid[i] = true;
            self.n_valid += 1;
            let zi = z.row(i);
            let logits: Vec<T> = (0..n)
                .map(|j| if j == i { T::neg_infinity() } else { dot(zi, z.row(j)) / self.tau })
                .collect();
            let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + logits
                .iter()
                .filter(|l| l.is_finite())
                .map(|&l| (l - max).exp())
                .sum::<T>()
                .ln();
            let share = T::one() / T::from_usize_lossy(k);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let log_q = logits[j] - lse;
                self.q[i * n + j] = log_q.exp();
                if self.labels[j] == self.labels[i] {
                    let active = log_q >= log_floor;
                    self.active[i * n + j] = active;
                    total = total - share * if active { log_q } else { log_floor };
                }
            }
        }
        if self.n_valid == 0 {
            return Err(Error::NoValidAnchors);
        }
        Ok(Tensor::scalar(total / T::from_usize_lossy(self.n_valid)))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Tensor<T>> {
        let z = inputs[0];
        let n = self.labels.len();
        let e = z.shape()[1];
        let scale = grad.data()[0] / (T::from_usize_lossy(self.n_valid) * self.tau);
        // dL/dS[i][l], S = Z Zᵀ / τ
        let mut gs = vec![T::zero(); n * n];
        for i in (0..n).filter(|&i| self.valid[i]) {
            let k = (0..n)
                .filter(|&j| j != i && self.labels[j] == self.labels[i])
                .count();
            let share = T::one() / T::from_usize_lossy(k);
            let active_mass = share
                * T::from_usize_lossy((0..n).filter(|&j| self.active[i * n + j]).count());
            for l in (0..n).filter(|&l| l != i) {
                let mut v = self.q[i * n + l] * active_mass;
                if self.active[i * n + l] {
                    v = v - share;
                }
                gs[i * n + l] = v;
            }
        }
        let mut dz = Tensor::zeros(z.shape());
        let dzd = dz.data_mut();
        for i in 0..n {
            for l in 0..n {
                let c = (gs[i * n + l] + gs[l * n + i]) * scale;
                if c == T::zero() {
                    continue;
                }
                let zl = z.row(l);
                for (d, &v) in dzd[i * e..(i + 1) * e].iter_mut().zip(zl) {
                    *d = *d + c * v;
                }
            }
        }
        vec![dz]
    }
}

impl<T: Scalar> Graph<T> {
    pub fn multi_positive_contrastive(&mut self, z: Var, labels: &[usize], tau: T) -> Result<Var> {
        self.apply(MultiPositiveContrastive::new(labels.to_vec(), tau)?, &[z])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const E: f64 = std::f64::consts::E;

    #[test]
    fn identical_candidates_give_uniform_q() {
        let a = [0.6, 0.8];
        let c: Vec<&[f64]> = vec![&a, &a, &a, &a];
        let q = contrastive_distribution(&a, &c, 0.1).unwrap();
        assert!(q.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn two_candidate_hand_value() {
        let q = contrastive_distribution(&[1.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]], 1.0).unwrap();
        assert!((q[0] - E / (E + 1.0)).abs() < 1e-15);
        assert!((q[1] - 1.0 / (E + 1.0)).abs() < 1e-15);
        assert!((q[0] - 0.7311).abs() < 1e-4 && (q[1] - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn small_temperature_concentrates() {
        let a = [1.0, 0.0];
        let b = [0.8, 0.6];
        let c = [0.0, 1.0];
        let q = contrastive_distribution(&a, &[&b, &c], 1e-3).unwrap();
        assert!(q[0] > 1.0 - 1e-12);
    }

    #[test]
    fn rejects_bad_temperature_and_non_unit_inputs() {
        let a = [1.0, 0.0];
        assert!(contrastive_distribution(&a, &[&a], 0.0).is_err());
        assert!(contrastive_distribution(&a, &[&a], -1.0).is_err());
        assert!(contrastive_distribution(&[2.0, 0.0], &[&a], 1.0).is_err());
    }

    #[test]
    fn match_distribution_cases() {
        assert_eq!(match_distribution::<f64>(1, &[1, 0, 0]).unwrap(), vec![1.0, 0.0, 0.0]);
        let third = 1.0 / 3.0;
        assert_eq!(
            match_distribution::<f64>(1, &[1, 1, 0, 1]).unwrap(),
            vec![third, third, 0.0, third]
        );
        assert!(matches!(match_distribution::<f64>(0, &[1, 1]), Err(Error::NoPositives)));
    }

    #[test]
    fn cross_entropy_cases() {
        let n = 5;
        let u = vec![1.0 / n as f64; n];
        assert!((cross_entropy(&u, &u).unwrap() - (n as f64).ln()).abs() < 1e-14);
        assert_eq!(cross_entropy(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
        let h: f64 = cross_entropy(&[0.5, 0.5, 0.0], &[0.7311, 0.2689, 0.0]).unwrap();
        assert!((h - 0.8133).abs() < 1e-4, "{h}");
        // floored, not infinite
        assert!(cross_entropy::<f64>(&[1.0], &[0.0]).unwrap().is_finite());
    }

    #[test]
    fn no_valid_anchor_is_an_error() {
        let z = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = EmbeddingBatch::new(z, vec![0, 1], PathTag::Common).unwrap();
        assert!(matches!(
            multi_positive_contrastive_loss(&b, 0.1),
            Err(Error::NoValidAnchors)
        ));
    }

    #[test]
    fn anchors_without_positives_are_skipped() {
        // label 2 has a single member; only the two label-0 anchors count.
        let z = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let b = EmbeddingBatch::new(z, vec![0, 0, 2], PathTag::Common).unwrap();
        let loss = multi_positive_contrastive_loss(&b, 1.0).unwrap();
        let expect = -(E / (E + 1.0)).ln();
        assert!((loss - expect).abs() < 1e-14);
    }

    #[test]
    fn sharp_temperature_with_clustered_positives_goes_to_zero() {
        let z = Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
        ])
        .unwrap();
        let b = EmbeddingBatch::new(z, vec![1, 1, 0, 0], PathTag::Pediatric).unwrap();
        assert!(multi_positive_contrastive_loss(&b, 0.01).unwrap() < 1e-12);
    }

    #[test]
    fn batch_rejects_non_unit_rows() {
        let z = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.0]]).unwrap();
        assert!(EmbeddingBatch::new(z, vec![0, 0], PathTag::Adult).is_err());
    }
}
