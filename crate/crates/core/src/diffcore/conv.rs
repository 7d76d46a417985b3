use super::graph::{Function, Graph, Var};
use crate::error::{Error, Result};
use crate::scalar::{MatLayout, Scalar};
use crate::tensor::Tensor;

/// 2-D cross-correlation with zero padding.
///
/// Inputs: `x: [B×C×H×W]`, `w: [O×C×k×k]`, optional `b: [O]`.
#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub stride: usize,
    pub padding: usize,
}

pub fn conv_output_size(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct Geometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    oh: usize,
    ow: usize,
}

impl Conv2d {
    fn geometry<T: Scalar>(&self, x: &Tensor<T>, w: &Tensor<T>) -> Result<Geometry> {
        if x.rank() != 4 {
            return Err(Error::shape(format!("conv2d input must be [B×C×H×W], got {:?}", x.shape())));
        }
        if w.rank() != 4 || w.shape()[2] != w.shape()[3] {
            return Err(Error::shape(format!("conv2d kernel must be [O×C×k×k], got {:?}", w.shape())));
        }
        let (batch, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, k) = (w.shape()[0], w.shape()[2]);
        if w.shape()[1] != cin {
            return Err(Error::shape(format!(
                "conv2d channel dimension: input has {cin}, kernel expects {}",
                w.shape()[1]
            )));
        }
        let oh = conv_output_size(h, k, self.stride, self.padding)
            .ok_or_else(|| Error::shape(format!("conv2d height {h} too small for kernel {k}")))?;
        let ow = conv_output_size(wd, k, self.stride, self.padding)
            .ok_or_else(|| Error::shape(format!("conv2d width {wd} too small for kernel {k}")))?;
        Ok(Geometry {
            batch,
            cin,
            h,
            w: wd,
            cout,
            k,
            oh,
            ow,
        })
    }

    /// Valid output index range along one axis for kernel offset `kk`.
    #[inline]
    fn span(&self, kk: usize, input: usize, out: usize) -> (usize, usize) {
        // input index = o*stride + kk - padding must lie in [0, input)
        let s = self.stride;
        let p = self.padding;
        let lo = if kk >= p { 0 } else { (p - kk).div_ceil(s) };
        let hi = if input + p > kk {
            ((input + p - kk - 1) / s + 1).min(out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

impl Geometry {
    fn plane(&self) -> usize {
        self.oh * self.ow
    }

    /// Rows of the unfolded input (`C·k·k`).
    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    /// Columns of the unfolded input (`B·oh·ow`).
    fn columns(&self) -> usize {
        self.batch * self.plane()
    }
}

impl Conv2d {
    /// Unfolds `x` into a `[C·k·k] × [B·oh·ow]` matrix, zero where the
    /// kernel overhangs the padding.
    fn im2col<T: Scalar>(&self, x: &[T], g: &Geometry) -> Vec<T> {
        let (plane, cols) = (g.plane(), g.columns());
        let mut out = vec![T::zero(); g.patch() * cols];
        for c in 0..g.cin {
            for ky in 0..g.k {
                let (y0, y1) = self.span(ky, g.h, g.oh);
                for kx in 0..g.k {
                    let (x0, x1) = self.span(kx, g.w, g.ow);
                    let row = ((c * g.k + ky) * g.k + kx) * cols;
                    for bi in 0..g.batch {
                        let xplane = &x[(bi * g.cin + c) * g.h * g.w..][..g.h * g.w];
                        for oy in y0..y1 {
                            let iy = oy * self.stride + ky - self.padding;
                            let dst = &mut out[row + bi * plane + oy * g.ow..][..g.ow];
                            for ox in x0..x1 {
                                dst[ox] = xplane[iy * g.w + ox * self.stride + kx - self.padding];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`Conv2d::im2col`]: accumulates unfolded gradients into `dx`.
    fn col2im<T: Scalar>(&self, dcols: &[T], g: &Geometry, dx: &mut [T]) {
        let (plane, cols) = (g.plane(), g.columns());
        for c in 0..g.cin {
            for ky in 0..g.k {
                let (y0, y1) = self.span(ky, g.h, g.oh);
                for kx in 0..g.k {
                    let (x0, x1) = self.span(kx, g.w, g.ow);
                    let row = ((c * g.k + ky) * g.k + kx) * cols;
                    for bi in 0..g.batch {
                        let xplane = &mut dx[(bi * g.cin + c) * g.h * g.w..][..g.h * g.w];
                        for oy in y0..y1 {
                            let iy = oy * self.stride + ky - self.padding;
                            let src = &dcols[row + bi * plane + oy * g.ow..][..g.ow];
                            for ox in x0..x1 {
                                let i = iy * g.w + ox * self.stride + kx - self.padding;
                                xplane[i] = xplane[i] + src[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Conv2d {
    fn checked<T: Scalar>(&self, inputs: &[&Tensor<T>]) -> Result<Geometry> {
        let g = self.geometry(inputs[0], inputs[1])?;
        if let Some(b) = inputs.get(2) {
            if b.shape() != [g.cout] {
                return Err(Error::shape(format!(
                    "conv2d bias must be [{}], got {:?}",
                    g.cout,
                    b.shape()
                )));
            }
        }
        Ok(g)
    }

    fn forward_unfolded<T: Scalar>(&self, inputs: &[&Tensor<T>], g: &Geometry, unfolded: &[T]) -> Tensor<T> {
        let (plane, cols, patch) = (g.plane(), g.columns(), g.patch());
        let mut mat = vec![T::zero(); g.cout * cols];
        T::gemm(
            inputs[1].data(),
            MatLayout::row_major(g.cout, patch),
            unfolded,
            MatLayout::row_major(patch, cols),
            T::zero(),
            &mut mat,
            MatLayout::row_major(g.cout, cols),
        );
        let mut out = Tensor::zeros(&[g.batch, g.cout, g.oh, g.ow]);
        let od = out.data_mut();
        for (o, row) in mat.chunks_exact(cols).enumerate() {
            let bias = inputs.get(2).map_or(T::zero(), |b| b.data()[o]);
            for bi in 0..g.batch {
                let dst = &mut od[(bi * g.cout + o) * plane..][..plane];
                for (d, &v) in dst.iter_mut().zip(&row[bi * plane..][..plane]) {
                    *d = v + bias;
                }
            }
        }
        out
    }

    fn backward_unfolded<T: Scalar>(
        &self,
        inputs: &[&Tensor<T>],
        grad: &Tensor<T>,
        need_dx: bool,
        unfolded: &[T],
    ) -> Vec<Tensor<T>> {
        let (x, w) = (inputs[0], inputs[1]);
        let g = self.geometry(x, w).expect("validated in forward");
        let (plane, cols, patch) = (g.plane(), g.columns(), g.patch());
        let gd = grad.data();

        // gradient as a [O] × [B·oh·ow] matrix
        let mut gmat = vec![T::zero(); g.cout * cols];
        for bi in 0..g.batch {
            for o in 0..g.cout {
                gmat[o * cols + bi * plane..][..plane].copy_from_slice(&gd[(bi * g.cout + o) * plane..][..plane]);
            }
        }

        let mut dw = Tensor::zeros(w.shape());
        T::gemm(
            &gmat,
            MatLayout::row_major(g.cout, cols),
            unfolded,
            MatLayout::transposed(cols, patch),
            T::zero(),
            dw.data_mut(),
            MatLayout::row_major(g.cout, patch),
        );
        let mut dx = Tensor::zeros(x.shape());
        if need_dx {
            let mut dcols = vec![T::zero(); patch * cols];
            T::gemm(
                w.data(),
                MatLayout::transposed(patch, g.cout),
                &gmat,
                MatLayout::row_major(g.cout, cols),
                T::zero(),
                &mut dcols,
                MatLayout::row_major(patch, cols),
            );
            self.col2im(&dcols, &g, dx.data_mut());
        }
        let mut out = vec![dx, dw];
        if inputs.len() > 2 {
            let db: Vec<T> = gmat.chunks_exact(cols).map(|r| r.iter().copied().sum()).collect();
            out.push(Tensor::new(vec![g.cout], db).expect("bias shape"));
        }
        out
    }
}

impl<T: Scalar> Function<T> for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let g = self.checked(inputs)?;
        let unfolded = self.im2col(inputs[0].data(), &g);
        Ok(self.forward_unfolded(inputs, &g, &unfolded))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Tensor<T>> {
        let g = self.geometry(inputs[0], inputs[1]).expect("validated in forward");
        let unfolded = self.im2col(inputs[0].data(), &g);
        self.backward_unfolded(inputs, grad, true, &unfolded)
    }
}

/// [`Conv2d`] that keeps the unfolded input from the forward pass for its
/// backward pass.
struct RecordedConv2d<T> {
    conv: Conv2d,
    unfolded: Vec<T>,
}

impl<T: Scalar> Function<T> for RecordedConv2d<T> {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&mut self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let g = self.conv.checked(inputs)?;
        self.unfolded = self.conv.im2col(inputs[0].data(), &g);
        Ok(self.conv.forward_unfolded(inputs, &g, &self.unfolded))
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>) -> Vec<Tensor<T>> {
        self.conv.backward_unfolded(inputs, grad, true, &self.unfolded)
    }

    fn backward_needed(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needed: &[bool]) -> Vec<Tensor<T>> {
        self.conv
            .backward_unfolded(inputs, grad, needed.first().copied().unwrap_or(true), &self.unfolded)
    }
}

impl<T: Scalar> Graph<T> {
    pub fn conv2d(
        &mut self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let op = RecordedConv2d {
            conv: Conv2d { stride, padding },
            unfolded: Vec::new(),
        };
        match bias {
            Some(b) => self.apply(op, &[x, weight, b]),
            None => self.apply(op, &[x, weight]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct textbook evaluation with explicit bounds checks.
    fn naive(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
        let (b, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (o, k) = (w.shape()[0], w.shape()[2]);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; b * o * oh * ow];
        for bi in 0..b {
            for oi in 0..o {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (y * stride + ky) as isize - pad as isize;
                                    let ix = (xx * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += w.data()[((oi * c + ci) * k + ky) * k + kx]
                                        * x.data()[((bi * c + ci) * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                        out[((bi * o + oi) * oh + y) * ow + xx] = acc;
                    }
                }
            }
        }
        Tensor::new(vec![b, o, oh, ow], out).unwrap()
    }

    fn ramp(shape: &[usize], scale: f64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|i| ((i * 37 % 23) as f64 - 11.0) * scale).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn matches_naive_for_several_geometries() {
        for &(h, k, s, p) in &[(8, 3, 2, 1), (7, 3, 1, 1), (5, 1, 1, 0), (9, 3, 2, 0), (6, 5, 2, 2)] {
            let x = ramp(&[2, 3, h, h], 0.1);
            let w = ramp(&[4, 3, k, k], 0.05);
            let mut op = Conv2d { stride: s, padding: p };
            let fast = Function::<f64>::forward(&mut op, &[&x, &w]).unwrap();
            let slow = naive(&x, &w, s, p);
            assert_eq!(fast.shape(), slow.shape());
            assert!(fast.max_abs_diff(&slow) < 1e-12, "h={h} k={k} s={s} p={p}");
        }
    }

    #[test]
    fn channel_mismatch_is_named() {
        let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f64>::zeros(&[1, 3, 3, 3]);
        let err = Function::<f64>::forward(&mut Conv2d { stride: 1, padding: 1 }, &[&x, &w])
            .unwrap_err()
            .to_string();
        assert!(err.contains("channel"), "{err}");
    }
}
