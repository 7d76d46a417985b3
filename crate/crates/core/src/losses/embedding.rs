//! Classwise mean embeddings and the cross-path similarity / intra-path
//! dissimilarity losses built on them.
//!
//! Class means are not re-normalized; cosine similarity absorbs scale.

use super::EmbeddingBatch;
use crate::diffcore::{Function, Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Norm below which a class mean is treated as zero.
pub const MIN_MEAN_NORM: f64 = 1e-12;

/// Per-class mean embeddings of one path, `C × e`, plus which classes were
/// present in the batch. Rows of absent classes are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ClasswiseEmbeddings<T> {
    pub w: Tensor<T>,
    pub present: Vec<bool>,
}

impl<T: Scalar> ClasswiseEmbeddings<T> {
    pub fn classes(&self) -> usize {
        self.present.len()
    }

    pub fn row(&self, class: usize) -> Option<&[T]> {
        self.present[class].then(|| self.w.row(class))
    }
}

pub fn class_presence(labels: &[usize], classes: usize) -> Vec<bool> {
    let mut present = vec![false; classes];
    for &l in labels {
        if l < classes {
            present[l] = true;
        }
    }
    present
}

/// Averages the rows of `[N×e]` per label into `[C×e]`.
pub struct ClasswiseMean {
    labels: Vec<usize>,
    classes: usize,
    counts: Vec<usize>,
}

impl ClasswiseMean {
    pub fn new(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {classes}")));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} out of range for {classes} classes")));
        }
        let mut counts = vec![0; classes];
        for &l in &labels {
            counts[l] += 1;
        }
        Ok(Self {
            labels,
            classes,
            counts,
        })
    }
}

impl<T: Scalar> Function<T> for ClasswiseMean {
    fn name(&self) -> &'static str {
        "classwise_mean"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let z = inputs[0];
        if z.rank() != 2 || z.shape()[0] != self.labels.len() {
            return Err(Error::shape(format!(
                "classwise mean got {:?} for {} labels",
                z.shape(),
                self.labels.len()
            )));
        }
        let e = z.shape()[1];
        let mut w = Tensor::zeros(&[self.classes, e]);
        let wd = w.data_mut();
        for (i, &l) in self.labels.iter().enumerate() {
            let inv = T::one() / T::from_usize_lossy(self.counts[l]);
            for (acc, &v) in wd[l * e..(l + 1) * e].iter_mut().zip(z.row(i)) {
                *acc = *acc + v * inv;
            }
        }
        Ok(w)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Tensor<T>> {
        let z = inputs[0];
        let e = z.shape()[1];
        let mut d = Tensor::zeros(z.shape());
        for (i, row) in d.data_mut().chunks_mut(e).enumerate() {
            let l = self.labels[i];
            let inv = T::one() / T::from_usize_lossy(self.counts[l]);
            for (dv, &g) in row.iter_mut().zip(grad.row(l)) {
                *dv = g * inv;
            }
        }
        vec![d]
    }
}

pub fn classwise_mean_embeddings<T: Scalar>(
    batch: &EmbeddingBatch<T>,
    classes: usize,
) -> Result<ClasswiseEmbeddings<T>> {
    let mut op = ClasswiseMean::new(batch.labels().to_vec(), classes)?;
    let w = op.forward(&[batch.z()])?;
    Ok(ClasswiseEmbeddings {
        w,
        present: class_presence(batch.labels(), classes),
    })
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Cosine similarity, or `None` when either vector is (near) zero.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Option<T> {
    let (na, nb) = (norm(a), norm(b));
    let min = T::lit(MIN_MEAN_NORM);
    if na < min || nb < min {
        return None;
    }
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    Some(dot / (na * nb))
}

/// Adds `scale · ∂cos(a,b)/∂a` into `da` and `scale · ∂cos(a,b)/∂b` into `db`.
fn cosine_grad<T: Scalar>(a: &[T], b: &[T], scale: T, da: &mut [T], db: &mut [T]) {
    let (na, nb) = (norm(a), norm(b));
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let cos = dot / (na * nb);
    for i in 0..a.len() {
        da[i] = da[i] + scale * (b[i] / (na * nb) - cos * a[i] / (na * na));
        db[i] = db[i] + scale * (a[i] / (na * nb) - cos * b[i] / (nb * nb));
    }
}

/// Sign convention for the cross-path similarity term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimilarityForm {
    /// `Σ_j (2 − SIM(w_c, w_a) − SIM(w_c, w_p))`: pulls both auxiliary
    /// means toward the common one.
    Corrected,
    /// `Σ_j (2 − SIM(w_c, w_a) + SIM(w_c, w_p))`, with the pediatric sign flipped.
    Literal,
}

impl SimilarityForm {
    fn pediatric_sign<T: Scalar>(self) -> T {
        match self {
            SimilarityForm::Corrected => -T::one(),
            SimilarityForm::Literal => T::one(),
        }
    }
}

/// Inputs `w_c, w_p, w_a` (each `C×e`); a class contributes only when it is
/// present in all three paths and none of its three means is zero.
pub struct EmbeddingSimilarity {
    present: Vec<bool>,
    form: SimilarityForm,
    skipped: usize,
}

impl EmbeddingSimilarity {
    pub fn new(present: Vec<bool>, form: SimilarityForm) -> Self {
        Self {
            present,
            form,
            skipped: 0,
        }
    }

    /// Present classes dropped because a class mean had zero norm.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    fn usable<T: Scalar>(&self, j: usize, inputs: &[&Tensor<T>]) -> bool {
        self.present[j]
            && inputs
                .iter()
                .all(|w| norm(w.row(j)) >= T::lit(MIN_MEAN_NORM))
    }
}

impl<T: Scalar> Function<T> for EmbeddingSimilarity {
    fn name(&self) -> &'static str {
        "embedding_similarity"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let shape = inputs[0].shape();
        if shape.len() != 2
            || shape[0] != self.present.len()
            || inputs.iter().any(|w| w.shape() != shape)
        {
            return Err(Error::shape(format!(
                "embedding similarity needs three {}×e class-mean matrices, got {:?}",
                self.present.len(),
                inputs.iter().map(|w| w.shape().to_vec()).collect::<Vec<_>>()
            )));
        }
        let (wc, wp, wa) = (inputs[0], inputs[1], inputs[2]);
        let sign: T = self.form.pediatric_sign();
        self.skipped = 0;
        let mut total = T::zero();
        for j in 0..self.present.len() {
            if !self.present[j] {
                continue;
            }
            if !self.usable(j, inputs) {
                self.skipped += 1;
                log::warn!("class {j} skipped in embedding similarity: zero-norm class mean");
                continue;
            }
            let ca = cosine(wc.row(j), wa.row(j)).expect("usable");
            let cp = cosine(wc.row(j), wp.row(j)).expect("usable");
            total = total + T::lit(2.0) - ca + sign * cp;
        }
        Ok(Tensor::scalar(total))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Tensor<T>> {
        let (wc, wp, wa) = (inputs[0], inputs[1], inputs[2]);
        let e = wc.shape()[1];
        let g = grad.data()[0];
        let sign: T = self.form.pediatric_sign();
        let mut dc = Tensor::zeros(wc.shape());
        let mut dp = Tensor::zeros(wp.shape());
        let mut da = Tensor::zeros(wa.shape());
        for j in (0..self.present.len()).filter(|&j| self.usable(j, inputs)) {
            let r = j * e..(j + 1) * e;
            cosine_grad(
                wc.row(j),
                wa.row(j),
                -g,
                &mut dc.data_mut()[r.clone()],
                &mut da.data_mut()[r.clone()],
            );
            cosine_grad(
                wc.row(j),
                wp.row(j),
                sign * g,
                &mut dc.data_mut()[r.clone()],
                &mut dp.data_mut()[r],
            );
        }
        vec![dc, dp, da]
    }
}

/// Result of [`embedding_similarity_loss`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityLoss<T> {
    pub value: T,
    /// Classes skipped because a class mean had zero norm.
    pub skipped: usize,
}

pub fn embedding_similarity_loss<T: Scalar>(
    w_c: &ClasswiseEmbeddings<T>,
    w_p: &ClasswiseEmbeddings<T>,
    w_a: &ClasswiseEmbeddings<T>,
    form: SimilarityForm,
) -> Result<SimilarityLoss<T>> {
    let present = joint_presence(&[&w_c.present, &w_p.present, &w_a.present])?;
    let mut op = EmbeddingSimilarity::new(present, form);
    let value = op.forward(&[&w_c.w, &w_p.w, &w_a.w])?.item()?;
    Ok(SimilarityLoss {
        value,
        skipped: op.skipped(),
    })
}

/// Classes present in every mask.
pub fn joint_presence(masks: &[&[bool]]) -> Result<Vec<bool>> {
    let c = masks.first().map(|m| m.len()).unwrap_or(0);
    if masks.iter().any(|m| m.len() != c) {
        return Err(Error::shape("presence masks disagree on the number of classes"));
    }
    Ok((0..c).map(|j| masks.iter().all(|m| m[j])).collect())
}

/// `Σ_{i≠j} max(0, SIM(w_j, w_i))` over ordered pairs of present classes.
pub struct EmbeddingDissimilarity {
    present: Vec<bool>,
}

impl EmbeddingDissimilarity {
    pub fn new(present: Vec<bool>) -> Self {
        Self { present }
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let c = self.present.len();
        (0..c)
            .flat_map(move |i| (0..c).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.present[i] && self.present[j])
    }
}

impl<T: Scalar> Function<T> for EmbeddingDissimilarity {
    fn name(&self) -> &'static str {
        "embedding_dissimilarity"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let w = inputs[0];
        if w.rank() != 2 || w.shape()[0] != self.present.len() {
            return Err(Error::shape(format!(
                "embedding dissimilarity got {:?} for {} classes",
                w.shape(),
                self.present.len()
            )));
        }
        let total = self
            .pairs()
            .filter_map(|(i, j)| cosine(w.row(j), w.row(i)))
            .map(|s| s.max(T::zero()))
            .sum();
        Ok(Tensor::scalar(total))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Tensor<T>> {
        let w = inputs[0];
        let e = w.shape()[1];
        let g = grad.data()[0];
        let mut d = Tensor::zeros(w.shape());
        for (i, j) in self.pairs() {
            match cosine(w.row(j), w.row(i)) {
                Some(s) if s > T::zero() => {}
                _ => continue,
            }
            let mut dj = vec![T::zero(); e];
            let mut di = vec![T::zero(); e];
            cosine_grad(w.row(j), w.row(i), g, &mut dj, &mut di);
            let dd = d.data_mut();
            for k in 0..e {
                dd[j * e + k] = dd[j * e + k] + dj[k];
                dd[i * e + k] = dd[i * e + k] + di[k];
            }
        }
        vec![d]
    }
}

pub fn embedding_dissimilarity_loss<T: Scalar>(w_c: &ClasswiseEmbeddings<T>) -> Result<T> {
    let mut op = EmbeddingDissimilarity::new(w_c.present.clone());
    op.forward(&[&w_c.w])?.item()
}

impl<T: Scalar> Graph<T> {
    pub fn classwise_mean(&mut self, z: Var, labels: &[usize], classes: usize) -> Result<Var> {
        self.apply(ClasswiseMean::new(labels.to_vec(), classes)?, &[z])
    }

    pub fn embedding_similarity(
        &mut self,
        w_c: Var,
        w_p: Var,
        w_a: Var,
        present: Vec<bool>,
        form: SimilarityForm,
    ) -> Result<Var> {
        self.apply(EmbeddingSimilarity::new(present, form), &[w_c, w_p, w_a])
    }

    pub fn embedding_dissimilarity(&mut self, w_c: Var, present: Vec<bool>) -> Result<Var> {
        self.apply(EmbeddingDissimilarity::new(present), &[w_c])
    }
}
