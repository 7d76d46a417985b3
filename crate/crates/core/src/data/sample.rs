use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::Tensor64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Domain {
    /// Target domain (pediatric analog).
    Pediatric,
    /// Auxiliary domain (adult analog).
    Adult,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::Pediatric, Domain::Adult];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Pediatric => "P",
            Domain::Adult => "A",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "P" => Ok(Domain::Pediatric),
            "A" => Ok(Domain::Adult),
            other => Err(Error::invalid(format!("unknown domain `{other}` (expected P or A)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// One image (`C×H×W`) or feature vector (`[D]`) with its label and domain.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub image: Tensor64,
    /// Foreground mask (`H×W`) used for bounding-box cropping.
    pub mask: Option<Tensor64>,
    pub label: u8,
    pub domain: Domain,
    pub split: Split,
}

/// A validated collection of samples sharing one input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<LabeledSample>,
}

pub(crate) fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl Dataset {
    pub fn new(samples: Vec<LabeledSample>) -> Result<Self> {
        let mut problems = Vec::new();
        let mut seen = BTreeSet::new();
        let shape = samples.first().map(|s| s.image.shape().to_vec());
        for s in &samples {
            if !valid_id(&s.id) {
                problems.push(format!("invalid id `{}`", s.id));
            }
            if !seen.insert(s.id.as_str()) {
                problems.push(format!("duplicate id `{}`", s.id));
            }
            if s.label > 1 {
                problems.push(format!("`{}`: label {} is not binary", s.id, s.label));
            }
            if Some(s.image.shape().to_vec()) != shape {
                problems.push(format!(
                    "`{}`: shape {:?} differs from {:?}",
                    s.id,
                    s.image.shape(),
                    shape.as_deref().unwrap_or(&[])
                ));
            }
            if let Some(m) = &s.mask {
                let r = s.image.rank();
                if r != 3 || m.shape() != &s.image.shape()[1..] {
                    problems.push(format!(
                        "`{}`: mask shape {:?} does not match image {:?}",
                        s.id,
                        m.shape(),
                        s.image.shape()
                    ));
                }
            }
        }
        if !problems.is_empty() {
            return Err(Error::Manifest(problems));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[LabeledSample] {
        &self.samples
    }

    pub fn get(&self, i: usize) -> &LabeledSample {
        &self.samples[i]
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_shape(&self) -> Option<&[usize]> {
        self.samples.first().map(|s| s.image.shape())
    }

    /// Indices of samples matching a domain and split.
    pub fn indices(&self, domain: Domain, split: Split) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.domain == domain && s.split == split)
            .map(|(i, _)| i)
            .collect()
    }
}
