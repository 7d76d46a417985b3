//! Fold splits, cached preprocessing and batch materialization.

use std::collections::BTreeSet;

use super::config::ExperimentConfig;
use super::step::HalfBatch;
use crate::data::{augment, bbox_crop, resize_normalize, stratified_kfold, AugmentPolicy, Dataset, Domain, Split};
use crate::diffcore::{path_forward, PathSpec};
use crate::error::{Error, Result};
use crate::ParameterSet64;
use crate::Tensor64;

/// Dataset indices used by one fold of one run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub train_pediatric: Vec<usize>,
    pub val_pediatric: Vec<usize>,
    pub test_pediatric: Vec<usize>,
    pub train_adult: Vec<usize>,
}

/// Stratified folds over the pediatric training pool: fold `fold` is the
/// test set and fold `fold+1 (mod k)` the validation set. Pediatric samples
/// tagged `test` in the dataset replace the test fold when present, in
/// which case fold `fold` becomes the validation set. Adult training
/// samples all go to training.
pub fn fold_split(dataset: &Dataset, folds: usize, fold: usize, seed: u64) -> Result<FoldSplit> {
    if fold >= folds {
        return Err(Error::Config(format!("fold {fold} out of range for {folds} folds")));
    }
    let pool = dataset.indices(Domain::Pediatric, Split::Train);
    let fixed_test = dataset.indices(Domain::Pediatric, Split::Test);
    let labels: Vec<u8> = pool.iter().map(|&i| dataset.get(i).label).collect();
    let assignment = stratified_kfold(&labels, folds, seed)?;
    let pick = |f: usize| -> Vec<usize> { assignment.members(f).into_iter().map(|j| pool[j]).collect() };
    let (test, val_fold, held) = if fixed_test.is_empty() {
        if folds < 3 {
            return Err(Error::Config("need at least 3 folds without a fixed test split".into()));
        }
        let val = (fold + 1) % folds;
        (pick(fold), val, vec![fold, val])
    } else {
        (fixed_test, fold, vec![fold])
    };
    let train: BTreeSet<usize> = (0..folds).filter(|f| !held.contains(f)).flat_map(pick).collect();
    Ok(FoldSplit {
        train_pediatric: train.into_iter().collect(),
        val_pediatric: pick(val_fold),
        test_pediatric: test,
        train_adult: dataset.indices(Domain::Adult, Split::Train),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrepSettings {
    pub image_size: usize,
    pub pad_fraction: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub augment: AugmentPolicy,
    pub seed: u64,
}

impl PrepSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            image_size: cfg.image_size,
            pad_fraction: cfg.pad_fraction,
            mean: cfg.norm_mean.clone(),
            std: cfg.norm_std.clone(),
            augment: cfg.augment,
            seed: cfg.seed,
        }
    }
}

/// Lazily preprocessed samples with an access log.
pub struct Pipeline<'a> {
    dataset: &'a Dataset,
    settings: PrepSettings,
    cache: Vec<Option<Tensor64>>,
    touched: BTreeSet<usize>,
}

impl<'a> Pipeline<'a> {
    pub fn new(dataset: &'a Dataset, settings: PrepSettings) -> Self {
        Self {
            dataset,
            settings,
            cache: vec![None; dataset.len()],
            touched: BTreeSet::new(),
        }
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    /// Crop, resize and normalize (images) or pass through (vectors).
    pub fn prepared(&mut self, i: usize) -> Result<&Tensor64> {
        if self.cache[i].is_none() {
            self.touched.insert(i);
            let s = self.dataset.get(i);
            let out = if s.image.rank() == 3 {
                let c = s.image.shape()[0];
                let broadcast = |v: &[f64]| if v.len() == 1 { vec![v[0]; c] } else { v.to_vec() };
                let cropped = match &s.mask {
                    Some(m) => bbox_crop(&s.image, m, self.settings.pad_fraction)?,
                    None => s.image.clone(),
                };
                resize_normalize(
                    &cropped,
                    self.settings.image_size,
                    &broadcast(&self.settings.mean),
                    &broadcast(&self.settings.std),
                )?
            } else {
                s.image.clone()
            };
            self.cache[i] = Some(out);
        }
        Ok(self.cache[i].as_ref().expect("filled"))
    }

    /// Stacks samples; `epoch = Some(e)` applies the seeded augmentation.
    pub fn batch(&mut self, indices: &[usize], epoch: Option<usize>) -> Result<HalfBatch> {
        let mut data = Vec::new();
        let mut labels = Vec::with_capacity(indices.len());
        let mut shape = Vec::new();
        for &i in indices {
            let policy = self.settings.augment;
            let seed = self.settings.seed;
            let x = self.prepared(i)?.clone();
            let x = match epoch {
                Some(e) if x.rank() == 3 => augment(&x, &policy, &self.dataset.get(i).id, e, seed)?,
                _ => x,
            };
            shape = x.shape().to_vec();
            data.extend_from_slice(x.data());
            labels.push(self.dataset.get(i).label);
        }
        shape.insert(0, indices.len());
        Ok(HalfBatch {
            images: Tensor64::new(shape, data)?,
            labels,
        })
    }

    /// Domains of every sample read so far.
    pub fn touched_domains(&self) -> BTreeSet<Domain> {
        self.touched.iter().map(|&i| self.dataset.get(i).domain).collect()
    }

    /// Per-sample shape after preprocessing.
    pub fn prepared_shape(&self) -> Result<Vec<usize>> {
        let first = self.dataset.samples().first().ok_or_else(|| Error::invalid("empty dataset"))?;
        Ok(match first.image.shape() {
            &[c, _, _] => vec![c, self.settings.image_size, self.settings.image_size],
            s => s.to_vec(),
        })
    }
}

const EVAL_CHUNK: usize = 128;

pub struct Evaluated {
    pub logits: Vec<f64>,
    pub embeddings: Tensor64,
    pub labels: Vec<u8>,
}

/// Un-augmented forward pass of one path over `indices`.
pub fn evaluate_path(
    pipeline: &mut Pipeline<'_>,
    spec: &PathSpec,
    params: &ParameterSet64,
    indices: &[usize],
) -> Result<Evaluated> {
    let mut logits = Vec::with_capacity(indices.len());
    let mut emb = Vec::new();
    let mut labels = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(EVAL_CHUNK) {
        let b = pipeline.batch(chunk, None)?;
        let out = path_forward(spec, params, &b.images)?;
        logits.extend_from_slice(out.logits.data());
        emb.extend_from_slice(out.embedding.data());
        labels.extend(b.labels);
    }
    let embeddings = Tensor64::new(vec![indices.len(), spec.embed_dim], emb)?;
    Ok(Evaluated {
        logits,
        embeddings,
        labels,
    })
}
