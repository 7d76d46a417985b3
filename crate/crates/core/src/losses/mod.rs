//! Contrastive, focal and embedding-alignment losses.
//!
//! Each loss is available both as a plain function of tensors and as a
//! [`Function`](crate::diffcore::Function) recorded on a graph.

pub mod contrastive;
pub mod embedding;
pub mod focal;
pub mod total;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use contrastive::{
    contrastive_distribution, contrastive_distributions, cross_entropy, match_distribution,
    multi_positive_contrastive_loss, ContrastiveDistributions, EmbeddingBatch,
    MultiPositiveContrastive,
};
pub use embedding::{
    class_presence, classwise_mean_embeddings, cosine, embedding_dissimilarity_loss,
    embedding_similarity_loss, joint_presence, ClasswiseEmbeddings, ClasswiseMean,
    EmbeddingDissimilarity, EmbeddingSimilarity, SimilarityForm, SimilarityLoss,
};
pub use focal::{binary_cross_entropy, focal_loss, FocalLoss};
pub use total::{total_loss, LossBreakdown, LossComponents, LossWeights};

/// Floor applied to probabilities inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

/// Allowed deviation of an embedding row norm from 1.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Which of the three parallel paths a tensor belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PathTag {
    Common,
    Pediatric,
    Adult,
}

impl PathTag {
    pub const ALL: [PathTag; 3] = [PathTag::Common, PathTag::Pediatric, PathTag::Adult];

    pub fn as_str(self) -> &'static str {
        match self {
            PathTag::Common => "common",
            PathTag::Pediatric => "pediatric",
            PathTag::Adult => "adult",
        }
    }
}

pub(crate) fn check_unit_rows<T: Scalar>(z: &Tensor<T>) -> Result<()> {
    for i in 0..z.rows() {
        let n = z.row(i).iter().map(|&v| v * v).sum::<T>().sqrt().to_f64_lossy();
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::invalid(format!("embedding row {i} has norm {n}, expected 1")));
        }
    }
    Ok(())
}
