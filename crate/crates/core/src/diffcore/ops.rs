//! Elementary differentiable operations and their graph helpers.

use super::graph::{Function, Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::{MatLayout, Scalar};
use crate::tensor::Tensor;

/// Elementwise sum of two same-shaped tensors.
pub struct Add;

impl<T: Scalar> Function<T> for Add {
    fn name(&self) -> &'static str {
        "add"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (a, b) = (inputs[0], inputs[1]);
        if a.shape() != b.shape() {
            return Err(Error::shape(format!("add: {:?} vs {:?}", a.shape(), b.shape())));
        }
        let mut out = a.clone();
        out.axpy(T::one(), b)?;
        Ok(out)
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Tensor<T>> {
        vec![g.clone(), g.clone()]
    }
}

/// Multiplication by a fixed constant.
pub struct Scale<T>(pub T);

impl<T: Scalar> Function<T> for Scale<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let c = self.0;
        Ok(inputs[0].map(|x| x * c))
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Tensor<T>> {
        let c = self.0;
        vec![g.map(|x| x * c)]
    }
}

/// Sum of all elements, producing a scalar.
pub struct Sum;

impl<T: Scalar> Function<T> for Sum {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(Tensor::scalar(inputs[0].sum()))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Tensor<T>> {
        vec![Tensor::filled(inputs[0].shape(), g.data()[0])]
    }
}

/// Mean of all elements, producing a scalar.
pub struct Mean;

impl<T: Scalar> Function<T> for Mean {
    fn name(&self) -> &'static str {
        "mean"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let n = T::from_usize_lossy(inputs[0].len());
        Ok(Tensor::scalar(inputs[0].sum() / n))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Tensor<T>> {
        let n = T::from_usize_lossy(inputs[0].len());
        vec![Tensor::filled(inputs[0].shape(), g.data()[0] / n)]
    }
}

/// `Σ coeffs[i] · inputs[i]` over scalar inputs.
pub struct LinearCombination<T>(pub Vec<T>);

impl<T: Scalar> Function<T> for LinearCombination<T> {
    fn name(&self) -> &'static str {
        "linear_combination"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        if inputs.len() != self.0.len() {
            return Err(Error::shape(format!(
                "linear_combination: {} coefficients for {} inputs",
                self.0.len(),
                inputs.len()
            )));
        }
        let mut total = T::zero();
        for (c, x) in self.0.iter().zip(inputs) {
            total = total + *c * x.item()?;
        }
        Ok(Tensor::scalar(total))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Tensor<T>> {
        let g = g.data()[0];
        self.0
            .iter()
            .zip(inputs)
            .map(|(&c, x)| Tensor::filled(x.shape(), c * g))
            .collect()
    }
}

/// `[B×k] · [k×n]` matrix product.
pub struct MatMul;

impl<T: Scalar> Function<T> for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (a, b) = (inputs[0], inputs[1]);
        if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(Error::shape(format!(
                "matmul: input width {:?} does not match weight {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        T::gemm(
            a.data(),
            MatLayout::row_major(m, k),
            b.data(),
            MatLayout::row_major(k, n),
            T::zero(),
            out.data_mut(),
            MatLayout::row_major(m, n),
        );
        Ok(out)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Tensor<T>> {
        let (a, b) = (inputs[0], inputs[1]);
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        // dA = G · Bᵀ
        let mut da = Tensor::zeros(&[m, k]);
        T::gemm(
            g.data(),
            MatLayout::row_major(m, n),
            b.data(),
            MatLayout::transposed(n, k),
            T::zero(),
            da.data_mut(),
            MatLayout::row_major(m, k),
        );
        // dB = Aᵀ · G
        let mut db = Tensor::zeros(&[k, n]);
        T::gemm(
            a.data(),
            MatLayout::transposed(k, m),
            g.data(),
            MatLayout::row_major(m, n),
            T::zero(),
            db.data_mut(),
            MatLayout::row_major(k, n),
        );
        vec![da, db]
    }
}

/// Adds a length-n bias to every row of a `[B×n]` matrix.
pub struct AddRowBias;

impl<T: Scalar> Function<T> for AddRowBias {
    fn name(&self) -> &'static str {
        "add_row_bias"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let (x, b) = (inputs[0], inputs[1]);
        if x.rank() != 2 || b.rank() != 1 || x.shape()[1] != b.shape()[0] {
            return Err(Error::shape(format!(
                "add_row_bias: {:?} with bias {:?}",
                x.shape(),
                b.shape()
            )));
        }
        let n = b.len();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v + b.data()[i % n];
        }
        Ok(out)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Tensor<T>> {
        let n = inputs[1].len();
        let mut db = Tensor::zeros(&[n]);
        for (i, &v) in g.data().iter().enumerate() {
            db.data_mut()[i % n] = db.data()[i % n] + v;
        }
        vec![g.clone(), db]
    }
}

pub struct Relu;

impl<T: Scalar> Function<T> for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(inputs[0].map(|x| x.max(T::zero())))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Tensor<T>> {
        let mut d = g.clone();
        for (dv, &x) in d.data_mut().iter_mut().zip(inputs[0].data()) {
            if x <= T::zero() {
                *dv = T::zero();
            }
        }
        vec![d]
    }
}

pub struct Tanh;

impl<T: Scalar> Function<T> for Tanh {
    fn name(&self) -> &'static str {
        "tanh"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        Ok(inputs[0].map(T::tanh))
    }

    fn backward(&self, _: &[&Tensor<T>], out: &Tensor<T>, g: &Tensor<T>) -> Vec<Tensor<T>> {
        let mut d = g.clone();
        for (dv, &y) in d.data_mut().iter_mut().zip(out.data()) {
            *dv = *dv * (T::one() - y * y);
        }
        vec![d]
    }
}

/// Spatial mean of `[B×C×H×W]`, producing `[B×C]`.
pub struct GlobalAvgPool;

impl<T: Scalar> Function<T> for GlobalAvgPool {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = inputs[0];
        if x.rank() != 4 {
            return Err(Error::shape(format!("global_avg_pool expects rank 4, got {:?}", x.shape())));
        }
        let (b, c) = (x.shape()[0], x.shape()[1]);
        let hw = x.shape()[2] * x.shape()[3];
        let n = T::from_usize_lossy(hw);
        let data = x
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().copied().sum::<T>() / n)
            .collect();
        Tensor::new(vec![b, c], data)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Tensor<T>> {
        let x = inputs[0];
        let hw = x.shape()[2] * x.shape()[3];
        let n = T::from_usize_lossy(hw);
        let mut d = Tensor::zeros(x.shape());
        for (plane, &gv) in d.data_mut().chunks_mut(hw).zip(g.data()) {
            plane.fill(gv / n);
        }
        vec![d]
    }
}

/// Smallest row norm accepted by [`L2NormalizeRows`].
pub const MIN_ROW_NORM: f64 = 1e-12;

/// Scales every row of a `[B×e]` matrix to unit Euclidean norm.
pub struct L2NormalizeRows {
    norms: Vec<f64>,
}

impl L2NormalizeRows {
    pub fn new() -> Self {
        Self { norms: Vec::new() }
    }
}

impl Default for L2NormalizeRows {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Function<T> for L2NormalizeRows {
    fn name(&self) -> &'static str {
        "l2_normalize_rows"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let x = inputs[0];
        if x.rank() != 2 {
            return Err(Error::shape(format!("l2_normalize_rows expects rank 2, got {:?}", x.shape())));
        }
        let w = x.shape()[1];
        let mut out = x.clone();
        self.norms.clear();
        for (i, row) in out.data_mut().chunks_mut(w).enumerate() {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if norm < T::lit(MIN_ROW_NORM) {
                return Err(Error::Degenerate(format!(
                    "row {i} has norm {} below {MIN_ROW_NORM:e}",
                    norm
                )));
            }
            self.norms.push(norm.to_f64_lossy());
            for v in row.iter_mut() {
                *v = *v / norm;
            }
        }
        Ok(out)
    }

    fn backward(&self, _: &[&Tensor<T>], out: &Tensor<T>, g: &Tensor<T>) -> Vec<Tensor<T>> {
        // d(x/|x|) = (g − y (y·g)) / |x|
        let w = out.shape()[1];
        let mut d = Tensor::zeros(out.shape());
        for (i, ((drow, yrow), grow)) in d
            .data_mut()
            .chunks_mut(w)
            .zip(out.data().chunks(w))
            .zip(g.data().chunks(w))
            .enumerate()
        {
            let norm = T::lit(self.norms[i]);
            let dot: T = yrow.iter().zip(grow).map(|(&y, &gv)| y * gv).sum();
            for ((dv, &y), &gv) in drow.iter_mut().zip(yrow).zip(grow) {
                *dv = (gv - y * dot) / norm;
            }
        }
        vec![d]
    }
}

/// Concatenates tensors along the leading axis.
pub struct ConcatRows;

impl<T: Scalar> Function<T> for ConcatRows {
    fn name(&self) -> &'static str {
        "concat_rows"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape("concat_rows needs at least one input"))?;
        let tail = &first.shape()[1..];
        let mut rows = 0;
        let mut data = Vec::new();
        for (i, t) in inputs.iter().enumerate() {
            if t.rank() == 0 || &t.shape()[1..] != tail {
                return Err(Error::shape(format!(
                    "concat_rows input {i} has shape {:?}, expected [_, {tail:?}]",
                    t.shape()
                )));
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(tail);
        Tensor::new(shape, data)
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Tensor<T>> {
        let mut offset = 0;
        inputs
            .iter()
            .map(|t| {
                let n = t.len();
                let part = Tensor::new(t.shape().to_vec(), g.data()[offset..offset + n].to_vec())
                    .expect("slice matches input shape");
                offset += n;
                part
            })
            .collect()
    }
}

/// Shape change without data movement.
pub struct Reshape(pub Vec<usize>);

impl<T: Scalar> Function<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        inputs[0].clone().reshape(self.0.clone())
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Tensor<T>> {
        vec![g.clone().reshape(inputs[0].shape().to_vec()).expect("same volume")]
    }
}

impl<T: Scalar> Graph<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Add, &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var> {
        self.apply(Scale(c), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(Sum, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.apply(Mean, &[x])
    }

    pub fn linear_combination(&mut self, terms: &[(T, Var)]) -> Result<Var> {
        let coeffs = terms.iter().map(|t| t.0).collect();
        let vars: Vec<Var> = terms.iter().map(|t| t.1).collect();
        self.apply(LinearCombination(coeffs), &vars)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(MatMul, &[a, b])
    }

    /// `x · W + b` for `x: [B×in]`, `W: [in×out]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        match bias {
            Some(b) => self.apply(AddRowBias, &[y, b]),
            None => Ok(y),
        }
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(Relu, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.apply(Tanh, &[x])
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.apply(GlobalAvgPool, &[x])
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        self.apply(L2NormalizeRows::new(), &[x])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(ConcatRows, parts)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        self.apply(Reshape(shape), &[x])
    }
}
