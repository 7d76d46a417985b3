//! Parameter and optimizer state of the active paths.

use super::optim::OptimizerState;
use crate::diffcore::{Checkpoint, ParameterSet, PathSpec};
use crate::error::{Error, Result};
use crate::losses::PathTag;
use crate::tensor::Tensor;
use crate::util::rng_for;
use crate::ParameterSet64;

#[derive(Clone, Debug, PartialEq)]
pub struct PathState {
    pub params: ParameterSet64,
    pub opt: OptimizerState<f64>,
}

impl PathState {
    /// Fresh parameters from a stream that depends only on `(seed, tag)`,
    /// so a given path starts identically in every arm.
    pub fn init(spec: &PathSpec, seed: u64, tag: PathTag) -> Result<Self> {
        let mut rng = rng_for(seed, &["init", tag.as_str()]);
        let params = ParameterSet::init(spec, &mut rng)?;
        let opt = OptimizerState::new(&params);
        Ok(Self { params, opt })
    }
}

/// The common path plus, when present, the two auxiliary paths.
#[derive(Clone, Debug, PartialEq)]
pub struct TriadModel {
    pub spec: PathSpec,
    pub common: PathState,
    pub pediatric: Option<PathState>,
    pub adult: Option<PathState>,
}

/// Scalars stored next to the optimizer state in a checkpoint.
pub type Progress = Vec<(String, f64)>;

impl TriadModel {
    pub fn init(spec: PathSpec, seed: u64, auxiliary: bool) -> Result<Self> {
        let common = PathState::init(&spec, seed, PathTag::Common)?;
        let (pediatric, adult) = if auxiliary {
            (
                Some(PathState::init(&spec, seed, PathTag::Pediatric)?),
                Some(PathState::init(&spec, seed, PathTag::Adult)?),
            )
        } else {
            (None, None)
        };
        Ok(Self {
            spec,
            common,
            pediatric,
            adult,
        })
    }

    pub fn has_auxiliary(&self) -> bool {
        self.pediatric.is_some() && self.adult.is_some()
    }

    pub fn paths(&self) -> impl Iterator<Item = (PathTag, &PathState)> {
        [
            Some((PathTag::Common, &self.common)),
            self.pediatric.as_ref().map(|p| (PathTag::Pediatric, p)),
            self.adult.as_ref().map(|p| (PathTag::Adult, p)),
        ]
        .into_iter()
        .flatten()
    }

    fn path_mut(&mut self, tag: PathTag) -> Option<&mut PathState> {
        match tag {
            PathTag::Common => Some(&mut self.common),
            PathTag::Pediatric => self.pediatric.as_mut(),
            PathTag::Adult => self.adult.as_mut(),
        }
    }

    pub fn to_checkpoint(&self, progress: &[(String, f64)]) -> Checkpoint {
        let mut ck = Checkpoint::default();
        for (tag, path) in self.paths() {
            let t = tag.as_str();
            for (i, p) in path.params.iter().enumerate() {
                ck.parameters.push((format!("{t}/{}", p.name), p.value.clone()));
                ck.optimizer.push((format!("{t}/m/{}", p.name), path.opt.m[i].clone()));
                ck.optimizer.push((format!("{t}/v/{}", p.name), path.opt.v[i].clone()));
            }
            ck.optimizer
                .push((format!("{t}/step"), Tensor::scalar(path.opt.step as f64)));
        }
        for (k, v) in progress {
            ck.optimizer.push((format!("progress/{k}"), Tensor::scalar(*v)));
        }
        ck
    }

    /// Restores every value of a checkpoint written by [`to_checkpoint`]
    /// for a model of the same architecture and path layout.
    ///
    /// [`to_checkpoint`]: TriadModel::to_checkpoint
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<Progress> {
        let missing = |what: String| Error::Integrity {
            section: "parameters".into(),
            detail: format!("missing `{what}`"),
        };
        let tags: Vec<PathTag> = self.paths().map(|(t, _)| t).collect();
        for tag in tags {
            let t = tag.as_str();
            let path = self.path_mut(tag).expect("listed path");
            let names: Vec<String> = path.params.iter().map(|p| p.name.clone()).collect();
            for (i, name) in names.iter().enumerate() {
                let value = ck.get(&format!("{t}/{name}")).ok_or_else(|| missing(format!("{t}/{name}")))?;
                let slot = path.params.get_mut(name).expect("own name");
                if value.shape() != slot.shape() {
                    return Err(Error::Integrity {
                        section: "parameters".into(),
                        detail: format!("`{t}/{name}` has shape {:?}, expected {:?}", value.shape(), slot.shape()),
                    });
                }
                *slot = value.clone();
                let find = |key: String| {
                    ck.optimizer
                        .iter()
                        .find(|(n, _)| *n == key)
                        .map(|(_, v)| v.clone())
                        .ok_or_else(|| Error::Integrity {
                            section: "optimizer".into(),
                            detail: format!("missing `{key}`"),
                        })
                };
                path.opt.m[i] = find(format!("{t}/m/{name}"))?;
                path.opt.v[i] = find(format!("{t}/v/{name}"))?;
            }
            let step = ck
                .optimizer
                .iter()
                .find(|(n, _)| *n == format!("{t}/step"))
                .ok_or_else(|| Error::Integrity {
                    section: "optimizer".into(),
                    detail: format!("missing `{t}/step`"),
                })?;
            path.opt.step = step.1.item()? as u64;
        }
        Ok(ck
            .optimizer
            .iter()
            .filter_map(|(n, v)| {
                let key = n.strip_prefix("progress/")?;
                Some((key.to_string(), v.item().ok()?))
            })
            .collect())
    }
}
