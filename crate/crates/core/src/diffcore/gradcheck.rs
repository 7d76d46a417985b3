//! Central finite-difference verification of reverse-mode gradients.

use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    /// `max |analytic − numeric| / max(1, |numeric|)` over all coordinates.
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: (usize, usize),
    /// Coordinates where a perturbed evaluation failed or was non-finite.
    pub non_finite: Vec<(usize, usize)>,
    pub coordinates: usize,
}

impl GradcheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.non_finite.is_empty() && self.max_rel_error < tolerance
    }
}

fn eval_scalar<T, F>(f: &F, points: &[Tensor<T>]) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = points.iter().map(|p| g.constant(p.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out).item()?;
    if !v.is_finite() {
        return Err(Error::NonFinite {
            component: "gradcheck objective".into(),
        });
    }
    Ok(v)
}

/// Compares the analytic gradient of a scalar graph function against central
/// differences with step `epsilon`, for every coordinate of every input.
pub fn gradcheck_multi<T, F>(f: F, points: &[Tensor<T>], epsilon: T) -> Result<GradcheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = points.iter().map(|p| g.param(p.clone())).collect();
    let root = f(&mut g, &vars)?;
    let grads = g.backward(root)?;
    let analytic: Vec<Tensor<T>> = vars.iter().map(|&v| grads.get(v)).collect();

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        non_finite: Vec::new(),
        coordinates: 0,
    };
    let mut work: Vec<Tensor<T>> = points.to_vec();
    let two_eps = epsilon + epsilon;
    for (input, point) in points.iter().enumerate() {
        for coord in 0..point.len() {
            report.coordinates += 1;
            let orig = point.data()[coord];
            work[input].data_mut()[coord] = orig + epsilon;
            let plus = eval_scalar(&f, &work);
            work[input].data_mut()[coord] = orig - epsilon;
            let minus = eval_scalar(&f, &work);
            work[input].data_mut()[coord] = orig;
            let (Ok(plus), Ok(minus)) = (plus, minus) else {
                report.non_finite.push((input, coord));
                continue;
            };
            let numeric = ((plus - minus) / two_eps).to_f64_lossy();
            let exact = analytic[input].data()[coord].to_f64_lossy();
            let rel = (exact - numeric).abs() / numeric.abs().max(1.0);
            if !rel.is_finite() {
                report.non_finite.push((input, coord));
            } else if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (input, coord);
            }
        }
    }
    Ok(report)
}

/// Single-input form of [`gradcheck_multi`].
pub fn gradcheck<T, F>(f: F, point: &Tensor<T>, epsilon: T) -> Result<GradcheckReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    gradcheck_multi(|g, v| f(g, v[0]), std::slice::from_ref(point), epsilon)
}
