use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Real scalar usable throughout the differentiable core.
///
/// Implemented for `f32` and `f64`. Training and all verification run in
/// `f64`; `f32` is kept working for the forward/backward machinery.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Gemm + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }
}

/// Strided view of an `rows × cols` matrix inside a slice.
#[derive(Clone, Copy, Debug)]
pub struct MatLayout {
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl MatLayout {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major `cols × rows` matrix.
    pub fn transposed(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_stride: 1,
            col_stride: rows,
        }
    }

    fn check(&self, len: usize) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride;
            assert!(last < len, "matrix layout {self:?} exceeds slice of length {len}");
        }
    }
}

/// `c ← a·b + beta·c` through the `matrixmultiply` kernels.
pub trait Gemm: Sized {
    fn gemm(a: &[Self], la: MatLayout, b: &[Self], lb: MatLayout, beta: Self, c: &mut [Self], lc: MatLayout);
}

fn check_product(la: &MatLayout, lb: &MatLayout, lc: &MatLayout) {
    assert!(
        la.cols == lb.rows && lc.rows == la.rows && lc.cols == lb.cols,
        "gemm shapes {la:?} x {lb:?} -> {lc:?}"
    );
}

macro_rules! gemm_impl {
    ($t:ty, $f:path) => {
        impl Gemm for $t {
            fn gemm(a: &[Self], la: MatLayout, b: &[Self], lb: MatLayout, beta: Self, c: &mut [Self], lc: MatLayout) {
                check_product(&la, &lb, &lc);
                la.check(a.len());
                lb.check(b.len());
                lc.check(c.len());
                let s = |x: usize| x as isize;
                // SAFETY: every index the kernel touches was bounds-checked above.
                unsafe {
                    $f(
                        la.rows,
                        la.cols,
                        lb.cols,
                        1.0,
                        a.as_ptr(),
                        s(la.row_stride),
                        s(la.col_stride),
                        b.as_ptr(),
                        s(lb.row_stride),
                        s(lb.col_stride),
                        beta,
                        c.as_mut_ptr(),
                        s(lc.row_stride),
                        s(lc.col_stride),
                    );
                }
            }
        }
    };
}

gemm_impl!(f32, matrixmultiply::sgemm);
gemm_impl!(f64, matrixmultiply::dgemm);

impl Scalar for f32 {}
impl Scalar for f64 {}
