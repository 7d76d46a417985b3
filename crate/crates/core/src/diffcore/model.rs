//! One path's network: backbone → (projection head, classifier).

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::conv::conv_output_size;
use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Nonlinearity {
    Relu,
    Tanh,
}

impl Nonlinearity {
    pub fn as_str(self) -> &'static str {
        match self {
            Nonlinearity::Relu => "relu",
            Nonlinearity::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Nonlinearity::Relu),
            "tanh" => Ok(Nonlinearity::Tanh),
            other => Err(Error::Config(format!("unknown nonlinearity `{other}`"))),
        }
    }

    fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        match self {
            Nonlinearity::Relu => g.relu(x),
            Nonlinearity::Tanh => g.tanh(x),
        }
    }
}

/// Feature extractor architecture.
#[derive(Clone, Debug, PartialEq)]
pub enum BackboneSpec {
    /// Strided convolution stages followed by global average pooling.
    Conv {
        in_channels: usize,
        input_size: usize,
        widths: Vec<usize>,
        kernel: usize,
        stride: usize,
        nonlinearity: Nonlinearity,
        bias: bool,
    },
    /// Dense layers on flat feature vectors.
    Dense {
        input_dim: usize,
        widths: Vec<usize>,
        nonlinearity: Nonlinearity,
        bias: bool,
    },
}

impl Default for BackboneSpec {
    fn default() -> Self {
        BackboneSpec::Conv {
            in_channels: 1,
            input_size: 32,
            widths: vec![8, 16, 32],
            kernel: 3,
            stride: 2,
            nonlinearity: Nonlinearity::Relu,
            bias: true,
        }
    }
}

impl BackboneSpec {
    /// Length of the pooled representation `h`.
    pub fn feature_dim(&self) -> usize {
        match self {
            BackboneSpec::Conv { widths, .. } | BackboneSpec::Dense { widths, .. } => {
                *widths.last().unwrap_or(&0)
            }
        }
    }

    /// Per-sample input shape.
    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            BackboneSpec::Conv {
                in_channels,
                input_size,
                ..
            } => vec![*in_channels, *input_size, *input_size],
            BackboneSpec::Dense { input_dim, .. } => vec![*input_dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BackboneSpec::Conv {
                in_channels,
                input_size,
                widths,
                kernel,
                stride,
                ..
            } => {
                if widths.is_empty() || widths.contains(&0) || *in_channels == 0 {
                    return Err(Error::Config("conv backbone needs positive widths".into()));
                }
                if *kernel == 0 || *stride == 0 {
                    return Err(Error::Config("kernel and stride must be positive".into()));
                }
                let mut size = *input_size;
                for (i, _) in widths.iter().enumerate() {
                    size = conv_output_size(size, *kernel, *stride, kernel / 2).ok_or_else(|| {
                        Error::Config(format!("input size {input_size} vanishes at stage {i}"))
                    })?;
                }
                Ok(())
            }
            BackboneSpec::Dense {
                input_dim, widths, ..
            } => {
                if widths.is_empty() || widths.contains(&0) || *input_dim == 0 {
                    return Err(Error::Config("dense backbone needs positive widths".into()));
                }
                Ok(())
            }
        }
    }
}

/// Architecture of one full path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSpec {
    pub backbone: BackboneSpec,
    /// Projection output width `e`.
    pub embed_dim: usize,
}

impl Default for PathSpec {
    fn default() -> Self {
        Self {
            backbone: BackboneSpec::default(),
            embed_dim: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Named parameter tensors of one path. Names are unique and shapes are
/// fixed at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T> {
    params: Vec<Parameter<T>>,
}

fn uniform_tensor<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = (1.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::lit(rng.random_range(-bound..bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape volume")
}

impl<T: Scalar> ParameterSet<T> {
    pub fn from_parameters(params: Vec<Parameter<T>>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for p in &params {
            if !seen.insert(p.name.as_str()) {
                return Err(Error::invalid(format!("duplicate parameter name `{}`", p.name)));
            }
        }
        Ok(Self { params })
    }

    /// Uniform `[−√(1/fan_in), +√(1/fan_in)]` initialization for every
    /// weight and bias.
    pub fn init(spec: &PathSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.backbone.validate()?;
        let mut params = Vec::new();
        let mut push = |name: String, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng| {
            params.push(Parameter {
                name,
                value: uniform_tensor(rng, shape, fan_in),
            });
        };
        match &spec.backbone {
            BackboneSpec::Conv {
                in_channels,
                widths,
                kernel,
                bias,
                ..
            } => {
                let mut cin = *in_channels;
                for (i, &w) in widths.iter().enumerate() {
                    let fan_in = cin * kernel * kernel;
                    push(format!("backbone.conv{i}.weight"), &[w, cin, *kernel, *kernel], fan_in, rng);
                    if *bias {
                        push(format!("backbone.conv{i}.bias"), &[w], fan_in, rng);
                    }
                    cin = w;
                }
            }
            BackboneSpec::Dense {
                input_dim,
                widths,
                bias,
                ..
            } => {
                let mut din = *input_dim;
                for (i, &w) in widths.iter().enumerate() {
                    push(format!("backbone.fc{i}.weight"), &[din, w], din, rng);
                    if *bias {
                        push(format!("backbone.fc{i}.bias"), &[w], din, rng);
                    }
                    din = w;
                }
            }
        }
        let d = spec.backbone.feature_dim();
        push("head.fc0.weight".into(), &[d, d], d, rng);
        push("head.fc0.bias".into(), &[d], d, rng);
        push("head.fc1.weight".into(), &[d, spec.embed_dim], d, rng);
        push("head.fc1.bias".into(), &[spec.embed_dim], d, rng);
        push("classifier.weight".into(), &[d, 1], d, rng);
        push("classifier.bias".into(), &[1], d, rng);
        Self::from_parameters(params)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| &mut p.value)
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter as a gradient-receiving leaf.
    pub fn bind(&self, g: &mut Graph<T>) -> BoundParams {
        self.bind_with(g, true)
    }

    /// Records every parameter as a constant (inference only).
    pub fn bind_frozen(&self, g: &mut Graph<T>) -> BoundParams {
        self.bind_with(g, false)
    }

    fn bind_with(&self, g: &mut Graph<T>, trainable: bool) -> BoundParams {
        let vars = self
            .params
            .iter()
            .map(|p| {
                let v = if trainable {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                };
                (p.name.clone(), v)
            })
            .collect();
        BoundParams { vars }
    }
}

/// Graph handles for a bound [`ParameterSet`], in parameter order.
#[derive(Clone, Debug)]
pub struct BoundParams {
    vars: Vec<(String, Var)>,
}

impl BoundParams {
    /// Pairs parameter names with already-recorded graph handles.
    pub fn from_vars(names: impl IntoIterator<Item = String>, vars: impl IntoIterator<Item = Var>) -> Self {
        Self {
            vars: names.into_iter().zip(vars).collect(),
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.try_var(name)
            .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.vars.iter().map(|(_, v)| *v)
    }
}

fn check_batch_shape(spec: &BackboneSpec, shape: &[usize]) -> Result<()> {
    let expect = spec.input_shape();
    if shape.len() != expect.len() + 1 {
        return Err(Error::shape(format!(
            "backbone input rank: expected {} (batch + {:?}), got shape {shape:?}",
            expect.len() + 1,
            expect
        )));
    }
    if shape[0] == 0 {
        return Err(Error::shape("batch dimension must be at least 1"));
    }
    let names: &[&str] = if expect.len() == 3 {
        &["channel", "height", "width"]
    } else {
        &["feature"]
    };
    for (i, (&got, &want)) in shape[1..].iter().zip(&expect).enumerate() {
        if got != want {
            return Err(Error::shape(format!(
                "backbone input {} dimension: expected {want}, got {got}",
                names[i]
            )));
        }
    }
    Ok(())
}

/// Records the backbone on `g`, returning `h: [B×d]`.
pub fn backbone_graph<T: Scalar>(
    g: &mut Graph<T>,
    spec: &BackboneSpec,
    params: &BoundParams,
    images: Var,
) -> Result<Var> {
    check_batch_shape(spec, g.value(images).shape())?;
    match spec {
        BackboneSpec::Conv {
            widths,
            kernel,
            stride,
            nonlinearity,
            ..
        } => {
            let mut x = images;
            for i in 0..widths.len() {
                let w = params.var(&format!("backbone.conv{i}.weight"))?;
                let b = params.try_var(&format!("backbone.conv{i}.bias"));
                x = g.conv2d(x, w, b, *stride, kernel / 2)?;
                x = nonlinearity.apply(g, x)?;
            }
            g.global_avg_pool(x)
        }
        BackboneSpec::Dense {
            widths,
            nonlinearity,
            ..
        } => {
            let mut x = images;
            for i in 0..widths.len() {
                let w = params.var(&format!("backbone.fc{i}.weight"))?;
                let b = params.try_var(&format!("backbone.fc{i}.bias"));
                x = g.dense(x, w, b)?;
                x = nonlinearity.apply(g, x)?;
            }
            Ok(x)
        }
    }
}

/// dense(d→d) → ReLU → dense(d→e) → l2 normalize.
pub fn projection_graph<T: Scalar>(g: &mut Graph<T>, params: &BoundParams, h: Var) -> Result<Var> {
    let w0 = params.var("head.fc0.weight")?;
    check_width(g, h, w0, "projection head")?;
    let x = g.dense(h, w0, Some(params.var("head.fc0.bias")?))?;
    let x = g.relu(x)?;
    let x = g.dense(x, params.var("head.fc1.weight")?, Some(params.var("head.fc1.bias")?))?;
    g.l2_normalize_rows(x)
}

/// Affine map to one logit per sample, returned as `[B]`.
pub fn classifier_graph<T: Scalar>(g: &mut Graph<T>, params: &BoundParams, h: Var) -> Result<Var> {
    let w = params.var("classifier.weight")?;
    check_width(g, h, w, "classifier")?;
    let logits = g.dense(h, w, Some(params.var("classifier.bias")?))?;
    let b = g.value(logits).shape()[0];
    g.reshape(logits, vec![b])
}

fn check_width<T: Scalar>(g: &Graph<T>, h: Var, w: Var, what: &str) -> Result<()> {
    let hs = g.value(h).shape();
    let ws = g.value(w).shape();
    if hs.len() != 2 || hs[1] != ws[0] {
        return Err(Error::shape(format!(
            "{what} expects representation width {}, got shape {hs:?}",
            ws[0]
        )));
    }
    Ok(())
}

/// Forward outputs of one path for a batch.
pub struct PathOutputs<T> {
    pub representation: Tensor<T>,
    pub embedding: Tensor<T>,
    pub logits: Tensor<T>,
}

pub fn backbone_forward<T: Scalar>(
    spec: &PathSpec,
    params: &ParameterSet<T>,
    images: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let bound = params.bind_frozen(&mut g);
    let x = g.constant(images.clone());
    let h = backbone_graph(&mut g, &spec.backbone, &bound, x)?;
    Ok(g.value(h).clone())
}

pub fn projection_forward<T: Scalar>(params: &ParameterSet<T>, h: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let bound = params.bind_frozen(&mut g);
    let x = g.constant(h.clone());
    let z = projection_graph(&mut g, &bound, x)?;
    Ok(g.value(z).clone())
}

pub fn classifier_forward<T: Scalar>(params: &ParameterSet<T>, h: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let bound = params.bind_frozen(&mut g);
    let x = g.constant(h.clone());
    let y = classifier_graph(&mut g, &bound, x)?;
    Ok(g.value(y).clone())
}

/// Inference through backbone, head and classifier in one pass.
pub fn path_forward<T: Scalar>(
    spec: &PathSpec,
    params: &ParameterSet<T>,
    images: &Tensor<T>,
) -> Result<PathOutputs<T>> {
    let mut g = Graph::new();
    let bound = params.bind_frozen(&mut g);
    let x = g.constant(images.clone());
    let h = backbone_graph(&mut g, &spec.backbone, &bound, x)?;
    let z = projection_graph(&mut g, &bound, h)?;
    let y = classifier_graph(&mut g, &bound, h)?;
    Ok(PathOutputs {
        representation: g.value(h).clone(),
        embedding: g.value(z).clone(),
        logits: g.value(y).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_conv() -> PathSpec {
        PathSpec {
            backbone: BackboneSpec::Conv {
                in_channels: 1,
                input_size: 8,
                widths: vec![4, 6],
                kernel: 3,
                stride: 2,
                nonlinearity: Nonlinearity::Relu,
                bias: true,
            },
            embed_dim: 5,
        }
    }

    #[test]
    fn parameter_names_are_unique_and_stable() {
        let spec = small_conv();
        let p = ParameterSet::<f64>::init(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let names: Vec<_> = p.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "backbone.conv0.weight",
                "backbone.conv0.bias",
                "backbone.conv1.weight",
                "backbone.conv1.bias",
                "head.fc0.weight",
                "head.fc0.bias",
                "head.fc1.weight",
                "head.fc1.bias",
                "classifier.weight",
                "classifier.bias"
            ]
        );
        let dup = vec![
            Parameter { name: "a".into(), value: Tensor::<f64>::zeros(&[1]) },
            Parameter { name: "a".into(), value: Tensor::<f64>::zeros(&[1]) },
        ];
        assert!(ParameterSet::from_parameters(dup).is_err());
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let spec = small_conv();
        let p = ParameterSet::<f64>::init(&spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let w = p.get("backbone.conv1.weight").unwrap();
        let bound = (1.0f64 / (4.0 * 9.0)).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn shape_errors_name_the_dimension() {
        let spec = small_conv();
        let p = ParameterSet::<f64>::init(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let err = backbone_forward(&spec, &p, &Tensor::zeros(&[2, 1, 8, 7]))
            .unwrap_err()
            .to_string();
        assert!(err.contains("width"), "{err}");
        let err = backbone_forward(&spec, &p, &Tensor::zeros(&[2, 3, 8, 8]))
            .unwrap_err()
            .to_string();
        assert!(err.contains("channel"), "{err}");
    }

    #[test]
    fn zero_classifier_gives_zero_logits() {
        let spec = small_conv();
        let mut p = ParameterSet::<f64>::init(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        p.get_mut("classifier.weight").unwrap().data_mut().fill(0.0);
        p.get_mut("classifier.bias").unwrap().data_mut().fill(0.0);
        let h = Tensor::filled(&[3, 6], 0.7);
        let logits = classifier_forward(&p, &h).unwrap();
        assert_eq!(logits.shape(), &[3]);
        assert!(logits.data().iter().all(|&v| v == 0.0));
        let prob = 1.0 / (1.0 + (-logits.data()[0]).exp());
        assert_eq!(prob, 0.5);
    }

    #[test]
    fn head_rejects_wrong_width() {
        let spec = small_conv();
        let p = ParameterSet::<f64>::init(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(projection_forward(&p, &Tensor::ones(&[2, 5])).is_err());
        assert!(classifier_forward(&p, &Tensor::ones(&[2, 5])).is_err());
    }
}
