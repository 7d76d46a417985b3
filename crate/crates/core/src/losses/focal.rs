use super::LOG_FLOOR;
use crate::diffcore::{Function, Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `log σ(u)` without overflow.
fn log_sigmoid<T: Scalar>(u: T) -> T {
    -((-u).max(T::zero()) + (T::one() + (-u.abs()).exp()).ln())
}

fn sigmoid<T: Scalar>(u: T) -> T {
    if u >= T::zero() {
        T::one() / (T::one() + (-u).exp())
    } else {
        let e = u.exp();
        e / (T::one() + e)
    }
}

fn check_params<T: Scalar>(gamma: T, alpha: T) -> Result<()> {
    if !(gamma >= T::zero()) || !gamma.is_finite() {
        return Err(Error::invalid(format!("focal gamma must be >= 0, got {gamma}")));
    }
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(Error::invalid(format!("focal alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn check_targets(targets: &[u8], n: usize) -> Result<()> {
    if targets.len() != n {
        return Err(Error::shape(format!("{n} logits but {} targets", targets.len())));
    }
    if let Some(bad) = targets.iter().find(|&&t| t > 1) {
        return Err(Error::invalid(format!("focal targets must be 0 or 1, got {bad}")));
    }
    Ok(())
}

/// Binary focal loss on raw logits, averaged over the batch.
///
/// With `s = σ(logit)`, `p_t = s` for positives and `1 − s` for negatives,
/// `α_t = α` for positives and `1 − α` for negatives, each sample
/// contributes `−α_t (1 − p_t)^γ ln max(p_t, 1e-12)`.
pub struct FocalLoss<T> {
    targets: Vec<u8>,
    gamma: T,
    alpha: T,
}

impl<T: Scalar> FocalLoss<T> {
    pub fn new(targets: Vec<u8>, gamma: T, alpha: T) -> Result<Self> {
        check_params(gamma, alpha)?;
        check_targets(&targets, targets.len())?;
        Ok(Self {
            targets,
            gamma,
            alpha,
        })
    }

    fn signed(&self, i: usize, logit: T) -> (T, T) {
        if self.targets[i] == 1 {
            (logit, self.alpha)
        } else {
            (-logit, T::one() - self.alpha)
        }
    }
}

impl<T: Scalar> Function<T> for FocalLoss<T> {
    fn name(&self) -> &'static str {
        "focal_loss"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let logits = inputs[0];
        check_targets(&self.targets, logits.len())?;
        let log_floor = T::lit(LOG_FLOOR).ln();
        let mut total = T::zero();
        for (i, &x) in logits.data().iter().enumerate() {
            let (u, a) = self.signed(i, x);
            let log_pt = log_sigmoid(u).max(log_floor);
            let one_minus = sigmoid(-u);
            total = total - a * one_minus.powf(self.gamma) * log_pt;
        }
        Ok(Tensor::scalar(total / T::from_usize_lossy(logits.len())))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Tensor<T>> {
        let logits = inputs[0];
        let log_floor = T::lit(LOG_FLOOR).ln();
        let scale = grad.data()[0] / T::from_usize_lossy(logits.len());
        let mut d = Tensor::zeros(logits.shape());
        for (i, (dv, &x)) in d.data_mut().iter_mut().zip(logits.data()).enumerate() {
            let (u, a) = self.signed(i, x);
            let p = sigmoid(u);
            let one_minus = sigmoid(-u);
            let raw_log = log_sigmoid(u);
            let floored = raw_log < log_floor;
            let log_pt = if floored { log_floor } else { raw_log };
            let mod_factor = one_minus.powf(self.gamma);
            // d/du [(1−p)^γ] = −γ (1−p)^γ p ;  d/du ln p = 1 − p
            let mut du = -self.gamma * mod_factor * p * log_pt;
            if !floored {
                du = du + mod_factor * one_minus;
            }
            du = -a * du;
            let dx = if self.targets[i] == 1 { du } else { -du };
            *dv = dx * scale;
        }
        vec![d]
    }
}

pub fn focal_loss<T: Scalar>(logits: &Tensor<T>, targets: &[u8], gamma: T, alpha: T) -> Result<T> {
    let mut op = FocalLoss::new(targets.to_vec(), gamma, alpha)?;
    op.forward(&[logits])?.item()
}

/// Mean binary cross-entropy on logits (reference for the `γ = 0` case).
pub fn binary_cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[u8]) -> Result<T> {
    check_targets(targets, logits.len())?;
    let log_floor = T::lit(LOG_FLOOR).ln();
    let total: T = logits
        .data()
        .iter()
        .zip(targets)
        .map(|(&x, &y)| {
            let u = if y == 1 { x } else { -x };
            -log_sigmoid(u).max(log_floor)
        })
        .sum();
    Ok(total / T::from_usize_lossy(logits.len()))
}

impl<T: Scalar> Graph<T> {
    pub fn focal_loss(&mut self, logits: Var, targets: &[u8], gamma: T, alpha: T) -> Result<Var> {
        self.apply(FocalLoss::new(targets.to_vec(), gamma, alpha)?, &[logits])
    }
}
