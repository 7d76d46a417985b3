//! One optimization step over the active paths.

use super::config::{AdamWConfig, ExperimentConfig};
use super::model::{PathState, TriadModel};
use super::optim::adamw_update;
use crate::diffcore::model::{backbone_graph, classifier_graph, projection_graph};
use crate::diffcore::{BoundParams, Graph, PathSpec, Var};
use crate::error::{Error, Result};
use crate::losses::{
    class_presence, joint_presence, total_loss, LossBreakdown, LossComponents, LossWeights,
    SimilarityForm,
};
use crate::Tensor64;

/// Inputs `[B × sample shape]` and binary labels for one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct HalfBatch {
    pub images: Tensor64,
    pub labels: Vec<u8>,
}

/// The domains present in one step; single-domain arms fill one half.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepInput {
    pub pediatric: Option<HalfBatch>,
    pub adult: Option<HalfBatch>,
}

impl StepInput {
    /// Pediatric rows first, then adult rows.
    pub fn concatenated(&self) -> Result<HalfBatch> {
        let halves: Vec<&HalfBatch> = [&self.pediatric, &self.adult].into_iter().flatten().collect();
        let first = halves.first().ok_or_else(|| Error::invalid("step has no data"))?;
        let tail = &first.images.shape()[1..];
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut rows = 0;
        for h in &halves {
            if &h.images.shape()[1..] != tail {
                return Err(Error::shape("domain halves differ in sample shape"));
            }
            rows += h.images.shape()[0];
            data.extend_from_slice(h.images.data());
            labels.extend_from_slice(&h.labels);
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(tail);
        Ok(HalfBatch {
            images: Tensor64::new(shape, data)?,
            labels,
        })
    }
}

/// Loss settings resolved from an [`ExperimentConfig`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSettings {
    pub tau: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub weights: LossWeights,
    pub form: SimilarityForm,
    /// Contrastive terms on every present path.
    pub contrastive: bool,
    /// Embedding similarity/dissimilarity coupling the paths.
    pub coupled: bool,
    pub optimizer: AdamWConfig,
}

impl StepSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            tau: cfg.tau,
            gamma: cfg.gamma,
            alpha: cfg.alpha,
            weights: cfg.weights,
            form: cfg.similarity_form(),
            contrastive: cfg.arm.contrastive(),
            coupled: cfg.arm.triad(),
            optimizer: cfg.optimizer,
        }
    }
}

fn named(component: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::NonFinite {
            component: component.to_string(),
        },
        other => other,
    }
}

struct PathGraph {
    bound: BoundParams,
    z: Var,
    logits: Var,
}

fn record_path(
    g: &mut Graph<f64>,
    spec: &PathSpec,
    path: &PathState,
    batch: &HalfBatch,
) -> Result<PathGraph> {
    let bound = path.params.bind(g);
    let x = g.constant(batch.images.clone());
    let h = backbone_graph(g, &spec.backbone, &bound, x)?;
    let z = projection_graph(g, &bound, h)?;
    let logits = classifier_graph(g, &bound, h)?;
    Ok(PathGraph { bound, z, logits })
}

/// Result of a forward/backward pass before the optimizer update.
pub struct StepGradients {
    pub breakdown: LossBreakdown,
    /// Per active path (common, pediatric, adult order), one gradient per
    /// parameter.
    pub grads: Vec<Vec<Tensor64>>,
}

/// Forward and backward over all active paths without updating them.
pub fn step_gradients(model: &TriadModel, input: &StepInput, s: &StepSettings) -> Result<StepGradients> {
    let mut g = Graph::new();
    let main = input.concatenated()?;
    let labels_c: Vec<usize> = main.labels.iter().map(|&l| l as usize).collect();
    let common = record_path(&mut g, &model.spec, &model.common, &main)?;

    let mut comps = LossComponents::default();
    let mut terms: Vec<(f64, Var)> = Vec::new();
    let value = |g: &Graph<f64>, v: Var| g.value(v).data()[0];

    let focal_c = g
        .focal_loss(common.logits, &main.labels, s.gamma, s.alpha)
        .map_err(named("focal_c"))?;
    comps.focal_c = value(&g, focal_c);
    terms.push((s.weights.cls, focal_c));
    if s.contrastive {
        let cont_c = g
            .multi_positive_contrastive(common.z, &labels_c, s.tau)
            .map_err(named("cont_c"))?;
        comps.cont_c = value(&g, cont_c);
        terms.push((s.weights.cont, cont_c));
    }

    let mut aux = Vec::new();
    if let (Some(pp), Some(pa)) = (&model.pediatric, &model.adult) {
        let (Some(bp), Some(ba)) = (&input.pediatric, &input.adult) else {
            return Err(Error::invalid("auxiliary paths need both domain halves"));
        };
        let p = record_path(&mut g, &model.spec, pp, bp)?;
        let a = record_path(&mut g, &model.spec, pa, ba)?;
        let lp: Vec<usize> = bp.labels.iter().map(|&l| l as usize).collect();
        let la: Vec<usize> = ba.labels.iter().map(|&l| l as usize).collect();

        let focal_p = g.focal_loss(p.logits, &bp.labels, s.gamma, s.alpha).map_err(named("focal_p"))?;
        let focal_a = g.focal_loss(a.logits, &ba.labels, s.gamma, s.alpha).map_err(named("focal_a"))?;
        comps.focal_p = value(&g, focal_p);
        comps.focal_a = value(&g, focal_a);
        terms.push((s.weights.cls, focal_p));
        terms.push((s.weights.cls, focal_a));
        if s.contrastive {
            let cont_p = g.multi_positive_contrastive(p.z, &lp, s.tau).map_err(named("cont_p"))?;
            let cont_a = g.multi_positive_contrastive(a.z, &la, s.tau).map_err(named("cont_a"))?;
            comps.cont_p = value(&g, cont_p);
            comps.cont_a = value(&g, cont_a);
            terms.push((s.weights.cont, cont_p));
            terms.push((s.weights.cont, cont_a));
        }
        if s.coupled {
            let w_c = g.classwise_mean(common.z, &labels_c, 2)?;
            let w_p = g.classwise_mean(p.z, &lp, 2)?;
            let w_a = g.classwise_mean(a.z, &la, 2)?;
            let pres_c = class_presence(&labels_c, 2);
            let present = joint_presence(&[&pres_c, &class_presence(&lp, 2), &class_presence(&la, 2)])?;
            let sim = g
                .embedding_similarity(w_c, w_p, w_a, present, s.form)
                .map_err(named("emb_sim"))?;
            let dissim = g
                .embedding_dissimilarity(w_c, pres_c)
                .map_err(named("emb_dissim"))?;
            comps.emb_sim = value(&g, sim);
            comps.emb_dissim = value(&g, dissim);
            terms.push((s.weights.emb, sim));
            terms.push((s.weights.emb, dissim));
        }
        aux = vec![p, a];
    } else if s.coupled {
        return Err(Error::invalid("coupled step needs auxiliary paths"));
    }

    let breakdown = total_loss(comps, s.weights)?;
    if let Some(bad) = breakdown.first_non_finite() {
        return Err(Error::NonFinite {
            component: bad.to_string(),
        });
    }
    terms.retain(|(w, _)| *w != 0.0);
    let paths: Vec<&PathGraph> = std::iter::once(&common).chain(&aux).collect();
    let grads = if terms.is_empty() {
        model
            .paths()
            .map(|(_, p)| p.params.iter().map(|q| Tensor64::zeros(q.value.shape())).collect())
            .collect()
    } else {
        let total = g.linear_combination(&terms).map_err(named("total"))?;
        let grads = g.backward(total)?;
        paths
            .iter()
            .map(|p| p.bound.vars().map(|v| grads.get(v)).collect())
            .collect()
    };
    Ok(StepGradients { breakdown, grads })
}

/// Forward, backward and one AdamW update on every active path.
pub fn triad_step(model: &mut TriadModel, input: &StepInput, s: &StepSettings) -> Result<LossBreakdown> {
    let StepGradients { breakdown, grads } = step_gradients(model, input, s)?;
    let mut grads = grads.into_iter();
    adamw_update(&mut model.common.params, &grads.next().expect("common"), &mut model.common.opt, &s.optimizer)?;
    for path in [model.pediatric.as_mut(), model.adult.as_mut()].into_iter().flatten() {
        let g = grads.next().expect("auxiliary gradients");
        adamw_update(&mut path.params, &g, &mut path.opt, &s.optimizer)?;
    }
    Ok(breakdown)
}
