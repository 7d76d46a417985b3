//! AdamW with decoupled weight decay.

use super::config::AdamWConfig;
use crate::diffcore::ParameterSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Moment estimates for one [`ParameterSet`], in parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParameterSet<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One AdamW step: `θ ← θ − lr·wd·θ`, then the bias-corrected adaptive
/// step `θ ← θ − lr·m̂/(√v̂ + ε)`.
pub fn adamw_update<T: Scalar>(
    params: &mut ParameterSet<T>,
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    hp: &AdamWConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.value.shape() != g.shape() || p.value.shape() != m.shape() {
            return Err(Error::shape(format!(
                "parameter `{}` {:?} vs gradient {:?}",
                p.name,
                p.value.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::lit(hp.beta1), T::lit(hp.beta2));
    let (lr, eps) = (T::lit(hp.lr), T::lit(hp.eps));
    let decay = T::lit(hp.lr * hp.weight_decay);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        let it = p
            .value
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((theta, &gi), (mi, vi)) in it {
            *theta = *theta - decay * *theta;
            *mi = b1 * *mi + (T::one() - b1) * gi;
            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
