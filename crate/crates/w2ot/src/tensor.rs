//! Dense row-major tensors, the sole numeric carrier of the crate.
//!
//! Tensors are immutable after construction and hold only finite values;
//! every operation that could produce a NaN/Inf checks its output.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// Build a tensor, validating shape/length agreement and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                details: format!(
                    "shape {:?} implies {} values, got {}",
                    shape,
                    len,
                    data.len()
                ),
            });
        }
        let t = Tensor { shape, data };
        t.check_finite("Tensor::new")?;
        Ok(t)
    }

    /// Like `new` but skips the finiteness scan. For internal use where the
    /// caller has already validated the values.
    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape,
            data: vec![S::zero(); len],
        }
    }

    pub fn scalar(v: S) -> Result<Self> {
        Tensor::new(vec![1], vec![v])
    }

    pub fn vector(v: Vec<S>) -> Result<Self> {
        Tensor::new(vec![v.len()], v)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows / columns when viewed as a 2-D array. A vector of
    /// length n is treated as [1, n]; a scalar as [1, 1].
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> Result<S> {
        if !self.is_scalar() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::scalar_value",
                details: format!("expected a single element, shape is {:?}", self.shape),
            });
        }
        Ok(self.data[0])
    }

    pub fn get2(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[S] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op, context: None })
        }
    }

    pub fn map<F: Fn(S) -> S>(&self, f: F) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Convert element type (used when loading checkpoints into a
    /// different precision than they were written with).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&v| T::from_f64(Scalar::to_f64(v)))
                .collect(),
        }
    }

    pub fn frobenius_sq(&self) -> S {
        self.data.iter().map(|&v| v * v).sum()
    }
}

/// out[i] = sum_j A[i,j] x[j]. Plain (non-tape) matrix-vector product.
pub fn matvec<S: Scalar>(a: &Tensor<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    if a.shape().len() != 2 || x.shape().len() != 1 || a.cols() != x.len() {
        return Err(Error::ShapeMismatch {
            op: "matvec",
            details: format!("A shape {:?}, x shape {:?}", a.shape(), x.shape()),
        });
    }
    let m = a.rows();
    let n = a.cols();
    let mut out = vec![S::zero(); m];
    for (i, slot) in out.iter_mut().enumerate().take(m) {
        let mut acc = S::zero();
        let row = a.row(i);
        for (rj, xj) in row.iter().take(n).zip(x.data()) {
            acc = acc + *rj * *xj;
        }
        *slot = acc;
    }
    let t = Tensor::from_parts_unchecked(vec![m], out);
    t.check_finite("matvec")?;
    Ok(t)
}

/// c = a * op(b1) * op(b2) on row-major buffers. `ta`/`tb` transpose the
/// logical operand without copying, via swapped strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_into<S: Scalar>(
    alpha: S,
    a: &[S],
    a_rows: usize,
    a_cols: usize,
    ta: bool,
    b: &[S],
    b_rows: usize,
    b_cols: usize,
    tb: bool,
    beta: S,
    c: &mut [S],
) {
    let (m, k1) = if ta {
        (a_cols, a_rows)
    } else {
        (a_rows, a_cols)
    };
    let (k2, n) = if tb {
        (b_cols, b_rows)
    } else {
        (b_rows, b_cols)
    };
    assert_eq!(k1, k2, "gemm inner dimensions disagree");
    assert_eq!(c.len(), m * n, "gemm output buffer has wrong length");
    let (rsa, csa) = if ta {
        (1isize, a_cols as isize)
    } else {
        (a_cols as isize, 1isize)
    };
    let (rsb, csb) = if tb {
        (1isize, b_cols as isize)
    } else {
        (b_cols as isize, 1isize)
    };
    unsafe {
        S::gemm(
            m,
            k1,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
