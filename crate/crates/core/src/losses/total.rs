use crate::error::{Error, Result};

/// Weights of the three loss groups in the objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub cls: f64,
    pub cont: f64,
    pub emb: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 1.0,
            cont: 1.0,
            emb: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("cls", self.cls), ("cont", self.cont), ("emb", self.emb)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(Error::invalid(format!("loss weight {name} must be >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

/// Unweighted loss components of one step. Inactive terms are zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub cont_c: f64,
    pub cont_p: f64,
    pub cont_a: f64,
    pub focal_c: f64,
    pub focal_p: f64,
    pub focal_a: f64,
    pub emb_sim: f64,
    pub emb_dissim: f64,
}

impl LossComponents {
    pub fn named(&self) -> [(&'static str, f64); 8] {
        [
            ("cont_c", self.cont_c),
            ("cont_p", self.cont_p),
            ("cont_a", self.cont_a),
            ("focal_c", self.focal_c),
            ("focal_p", self.focal_p),
            ("focal_a", self.focal_a),
            ("emb_sim", self.emb_sim),
            ("emb_dissim", self.emb_dissim),
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub components: LossComponents,
    pub weights: LossWeights,
    pub total: f64,
}

impl LossBreakdown {
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.components
            .named()
            .into_iter()
            .chain([("total", self.total)])
            .find(|(_, v)| !v.is_finite())
            .map(|(n, _)| n)
    }
}

/// `λ_cls·Σ focal + λ_cont·Σ cont + λ_emb·(sim + dissim)`.
pub fn total_loss(components: LossComponents, weights: LossWeights) -> Result<LossBreakdown> {
    weights.validate()?;
    let c = &components;
    let total = weights.cls * (c.focal_c + c.focal_p + c.focal_a)
        + weights.cont * (c.cont_c + c.cont_p + c.cont_a)
        + weights.emb * (c.emb_sim + c.emb_dissim);
    Ok(LossBreakdown {
        components,
        weights,
        total,
    })
}
