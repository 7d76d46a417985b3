//! Finite-difference checks of every loss and layer at random points.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::gradcheck::{gradcheck_multi, GradcheckReport};
use super::graph::{Graph, Var};
use super::model::{
    backbone_graph, classifier_graph, projection_graph, BackboneSpec, BoundParams, Nonlinearity,
    ParameterSet, PathSpec,
};
use crate::error::Result;
use crate::losses::SimilarityForm;
use crate::util::rng_for;
use crate::Tensor64;

pub const DEFAULT_POINTS: usize = 100;
pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

type CaseFn = fn(&mut ChaCha8Rng) -> Result<GradcheckReport>;

/// Names of every checked function, in report order.
pub const CASES: [(&str, CaseFn); 19] = [
    ("multi_positive_contrastive", contrastive),
    ("contrastive_on_normalized", contrastive_normalized),
    ("focal", focal),
    ("focal_gamma0", focal_gamma0),
    ("classwise_mean", classwise_mean),
    ("embedding_similarity_corrected", similarity_corrected),
    ("embedding_similarity_literal", similarity_literal),
    ("embedding_dissimilarity", dissimilarity),
    ("dense", dense),
    ("matmul", matmul),
    ("relu", relu),
    ("tanh", tanh),
    ("l2_normalize_rows", l2_normalize),
    ("global_avg_pool", global_avg_pool),
    ("conv2d_stride2_pad1", conv_strided),
    ("conv2d_stride1_nobias", conv_plain),
    ("concat_reshape_combine", plumbing),
    ("path_conv", path_conv),
    ("path_dense", path_dense),
];

#[derive(Clone, Debug)]
pub struct SuiteRow {
    pub name: &'static str,
    pub points: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub non_finite: usize,
}

impl SuiteRow {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.non_finite == 0 && self.max_rel_error < tolerance
    }
}

/// Runs `points` random instances of each named case (all cases when
/// `only` is empty) and keeps the worst error per case.
pub fn gradcheck_suite(seed: u64, points: usize, only: &[&str]) -> Result<Vec<SuiteRow>> {
    CASES
        .iter()
        .filter(|(name, _)| only.is_empty() || only.contains(name))
        .map(|&(name, case)| {
            let mut row = SuiteRow {
                name,
                points,
                coordinates: 0,
                max_rel_error: 0.0,
                non_finite: 0,
            };
            for i in 0..points {
                let mut rng = rng_for(seed, &["gradcheck", name, &i.to_string()]);
                let r = case(&mut rng)?;
                row.coordinates += r.coordinates;
                row.non_finite += r.non_finite.len();
                row.max_rel_error = row.max_rel_error.max(r.max_rel_error);
            }
            Ok(row)
        })
        .collect()
}

pub fn suite_table(rows: &[SuiteRow], tolerance: f64) -> String {
    let mut s = format!("{:<32} {:>6} {:>8} {:>12}  status\n", "function", "points", "coords", "max_rel_err");
    for r in rows {
        s += &format!(
            "{:<32} {:>6} {:>8} {:>12.3e}  {}\n",
            r.name,
            r.points,
            r.coordinates,
            r.max_rel_error,
            if r.passed(tolerance) { "ok" } else { "FAIL" }
        );
    }
    s
}

fn normal(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor64 {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    Tensor64::new(shape.to_vec(), data).expect("shape volume")
}

/// Labels over two classes with at least two of each, shuffled.
fn two_class_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut l: Vec<usize> = (0..n)
        .map(|i| if i < 4 { i % 2 } else { rng.random_range(0..2) })
        .collect();
    l.shuffle(rng);
    l
}

/// Reduces any output to a scalar through a random linear readout so no
/// coordinate's gradient is trivially uniform.
fn readout(g: &mut Graph<f64>, out: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let shape = g.value(out).shape().to_vec();
    let (rows, cols) = match shape.as_slice() {
        [] => (1, 1),
        [n] => (1, *n),
        [b, rest @ ..] => (*b, rest.iter().product()),
    };
    let flat = g.reshape(out, vec![rows, cols])?;
    let r = g.constant(normal(rng, &[cols, 1], 1.0));
    let y = g.matmul(flat, r)?;
    g.sum(y)
}

fn check(points: Vec<Tensor64>, f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) -> Result<GradcheckReport> {
    gradcheck_multi(f, &points, DEFAULT_EPSILON)
}

fn contrastive(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let n = rng.random_range(4..=10);
    let labels = two_class_labels(rng, n);
    let tau = rng.random_range(0.1..1.0);
    let z = normal(rng, &[n, 3], 0.5);
    check(vec![z], |g, v| g.multi_positive_contrastive(v[0], &labels, tau))
}

fn contrastive_normalized(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let n = rng.random_range(4..=10);
    let labels = two_class_labels(rng, n);
    let tau = rng.random_range(0.1..1.0);
    let x = normal(rng, &[n, 4], 1.0);
    check(vec![x], |g, v| {
        let z = g.l2_normalize_rows(v[0])?;
        g.multi_positive_contrastive(z, &labels, tau)
    })
}

fn focal_case(rng: &mut ChaCha8Rng, gamma: f64) -> Result<GradcheckReport> {
    let n = rng.random_range(2..=12);
    let targets: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let alpha = rng.random_range(0.1..0.9);
    let logits = normal(rng, &[n], 2.0);
    check(vec![logits], |g, v| g.focal_loss(v[0], &targets, gamma, alpha))
}

fn focal(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let gamma = rng.random_range(0.5..3.0);
    focal_case(rng, gamma)
}

fn focal_gamma0(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    focal_case(rng, 0.0)
}

fn classwise_mean(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let n = rng.random_range(4..=10);
    let labels = two_class_labels(rng, n);
    let z = normal(rng, &[n, 3], 1.0);
    with_readout(rng, vec![z], |g, v| g.classwise_mean(v[0], &labels, 2))
}

fn similarity(rng: &mut ChaCha8Rng, form: SimilarityForm) -> Result<GradcheckReport> {
    let d = rng.random_range(2..=5);
    let points = (0..3).map(|_| normal(rng, &[2, d], 1.0)).collect();
    check(points, |g, v| g.embedding_similarity(v[0], v[1], v[2], vec![true, true], form))
}

fn similarity_corrected(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    similarity(rng, SimilarityForm::Corrected)
}

fn similarity_literal(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    similarity(rng, SimilarityForm::Literal)
}

fn dissimilarity(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let d = rng.random_range(2..=5);
    let w = normal(rng, &[2, d], 1.0);
    check(vec![w], |g, v| g.embedding_dissimilarity(v[0], vec![true, true]))
}

/// Cases whose scalarization needs a fixed readout draw.
fn with_readout(
    rng: &mut ChaCha8Rng,
    points: Vec<Tensor64>,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<GradcheckReport> {
    let readout_seed: u64 = rng.random();
    check(points, |g, v| {
        let out = f(g, v)?;
        readout(g, out, &mut rng_for(readout_seed, &["readout"]))
    })
}

fn dense(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let (b, i, o) = (rng.random_range(1..=4), rng.random_range(1..=5), rng.random_range(1..=4));
    let points = vec![normal(rng, &[b, i], 1.0), normal(rng, &[i, o], 1.0), normal(rng, &[o], 1.0)];
    with_readout(rng, points, |g, v| g.dense(v[0], v[1], Some(v[2])))
}

fn matmul(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let (m, k, n) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
    let points = vec![normal(rng, &[m, k], 1.0), normal(rng, &[k, n], 1.0)];
    with_readout(rng, points, |g, v| g.matmul(v[0], v[1]))
}

/// Values kept at least 0.05 away from zero, where ReLU has its kink.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor64 {
    normal(rng, shape, 1.0).map(|x| x + 0.05 * x.signum())
}

fn relu(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let x = away_from_zero(rng, &[3, 4]);
    with_readout(rng, vec![x], |g, v| g.relu(v[0]))
}

fn tanh(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let x = normal(rng, &[3, 4], 1.5);
    with_readout(rng, vec![x], |g, v| g.tanh(v[0]))
}

fn l2_normalize(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let d = rng.random_range(2..=5);
    let x = normal(rng, &[3, d], 1.0);
    with_readout(rng, vec![x], |g, v| g.l2_normalize_rows(v[0]))
}

fn global_avg_pool(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let x = normal(rng, &[2, 3, 3, 4], 1.0);
    with_readout(rng, vec![x], |g, v| g.global_avg_pool(v[0]))
}

fn conv_strided(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let points = vec![
        normal(rng, &[2, 2, 5, 5], 1.0),
        normal(rng, &[3, 2, 3, 3], 0.5),
        normal(rng, &[3], 0.5),
    ];
    with_readout(rng, points, |g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1))
}

fn conv_plain(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let points = vec![normal(rng, &[1, 2, 5, 4], 1.0), normal(rng, &[2, 2, 2, 2], 0.5)];
    with_readout(rng, points, |g, v| g.conv2d(v[0], v[1], None, 1, 0))
}

fn plumbing(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let points = vec![normal(rng, &[2, 3], 1.0), normal(rng, &[1, 3], 1.0), normal(rng, &[3, 3], 1.0)];
    let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    with_readout(rng, points, move |g, v| {
        let top = g.concat_rows(&[v[0], v[1]])?;
        let sum = g.add(top, v[2])?;
        let scaled = g.scale(sum, 0.5)?;
        let flat = g.reshape(scaled, vec![9])?;
        let (m, s) = (g.mean(flat)?, g.sum(v[2])?);
        let mixed = g.linear_combination(&[(a, m), (b, s)])?;
        let m = g.reshape(mixed, vec![1, 1])?;
        let column = g.reshape(flat, vec![9, 1])?;
        g.concat_rows(&[column, m])
    })
}

/// Full path (backbone, projection head, classifier) under focal plus
/// contrastive loss, differentiated with respect to every parameter.
fn path_case(rng: &mut ChaCha8Rng, spec: PathSpec, input_shape: &[usize]) -> Result<GradcheckReport> {
    let params = ParameterSet::<f64>::init(&spec, rng)?;
    let n = 6;
    let labels = two_class_labels(rng, n);
    let targets: Vec<u8> = labels.iter().map(|&l| l as u8).collect();
    let mut shape = vec![n];
    shape.extend_from_slice(input_shape);
    let x = normal(rng, &shape, 1.0);
    let names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();
    let points: Vec<Tensor64> = params.iter().map(|p| p.value.clone()).collect();
    check(points, |g, v| {
        let bound = BoundParams::from_vars(names.iter().cloned(), v.iter().copied());
        let input = g.constant(x.clone());
        let h = backbone_graph(g, &spec.backbone, &bound, input)?;
        let z = projection_graph(g, &bound, h)?;
        let logits = classifier_graph(g, &bound, h)?;
        let f = g.focal_loss(logits, &targets, 2.0, 0.25)?;
        let c = g.multi_positive_contrastive(z, &labels, 0.5)?;
        g.linear_combination(&[(1.0, f), (0.5, c)])
    })
}

fn path_conv(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let spec = PathSpec {
        backbone: BackboneSpec::Conv {
            in_channels: 1,
            input_size: 6,
            widths: vec![2, 3],
            kernel: 3,
            stride: 2,
            nonlinearity: Nonlinearity::Tanh,
            bias: true,
        },
        embed_dim: 3,
    };
    path_case(rng, spec, &[1, 6, 6])
}

fn path_dense(rng: &mut ChaCha8Rng) -> Result<GradcheckReport> {
    let spec = PathSpec {
        backbone: BackboneSpec::Dense {
            input_dim: 4,
            widths: vec![5, 3],
            nonlinearity: Nonlinearity::Tanh,
            bias: true,
        },
        embed_dim: 3,
    };
    path_case(rng, spec, &[4])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes_at_a_few_points() {
        let rows = gradcheck_suite(11, 3, &[]).unwrap();
        assert_eq!(rows.len(), CASES.len());
        for r in &rows {
            assert!(r.passed(DEFAULT_TOLERANCE), "{}", suite_table(&rows, DEFAULT_TOLERANCE));
        }
    }

    #[test]
    fn filter_selects_named_cases() {
        let rows = gradcheck_suite(0, 1, &["relu", "focal"]).unwrap();
        let names: Vec<_> = rows.iter().map(|r| r.name).collect();
        assert_eq!(names, ["focal", "relu"]);
    }
}
