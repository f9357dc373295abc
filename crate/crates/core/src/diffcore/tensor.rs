//! Dense row-major tensors.

use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use crate::error::{CoreError, Result};

/// Dense real array, row-major, with a flag controlling whether tape ops
/// treat it as a gradient recipient when registered as a leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBase<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
    #[serde(default = "default_grad")]
    grad_enabled: bool,
}

fn default_grad() -> bool {
    true
}

impl<S: Scalar> TensorBase<S> {
    /// Build a tensor, checking that `data.len() == product(shape)`.
    pub fn from_vec(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.iter().any(|&e| e == 0) {
            return Err(CoreError::InvalidArgument(format!(
                "tensor shape {:?} needs {} values, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(TensorBase {
            shape,
            data,
            grad_enabled: true,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        TensorBase {
            shape,
            data: vec![S::zero(); numel],
            grad_enabled: true,
        }
    }

    pub fn filled(shape: Vec<usize>, value: S) -> Self {
        let numel: usize = shape.iter().product();
        TensorBase {
            shape,
            data: vec![value; numel],
            grad_enabled: true,
        }
    }

    pub fn scalar(value: S) -> Self {
        TensorBase {
            shape: vec![1],
            data: vec![value],
            grad_enabled: true,
        }
    }

    /// Length-n vector.
    pub fn vector(data: Vec<S>) -> Self {
        TensorBase {
            shape: vec![data.len()],
            data,
            grad_enabled: true,
        }
    }

    /// Disable gradient tracking when this tensor is registered as a leaf.
    pub fn no_grad(mut self) -> Self {
        self.grad_enabled = false;
        self
    }

    pub fn with_grad(mut self, enabled: bool) -> Self {
        self.grad_enabled = enabled;
        self
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> S {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Rows of a matrix, or 1 for a vector.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[0],
            _ => panic!("rows() on rank-{} tensor", self.shape.len()),
        }
    }

    /// Columns of a matrix, or the length of a vector.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[1],
            _ => panic!("cols() on rank-{} tensor", self.shape.len()),
        }
    }

    pub fn row(&self, i: usize) -> &[S] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += c * other`, shapes must match.
    pub fn add_scaled(&mut self, other: &TensorBase<S>, c: S) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += c * *b;
        }
    }

    pub fn scale_in_place(&mut self, c: S) {
        for a in self.data.iter_mut() {
            *a *= c;
        }
    }

    pub fn sq_norm(&self) -> S {
        self.data.iter().map(|&v| v * v).sum()
    }

    /// Little-endian byte image of the values, for checksums.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            out.extend_from_slice(&v.into_float().to_le_bytes());
        }
        out
    }
}

// ── raw kernels used by forward ops and backward closures ───────────

/// `a (m×k) * b (k×n) -> (m×n)`. Panics on bad ranks; shape agreement is
/// checked by the tape op before calling in.
pub(crate) fn matmul_raw<S: Scalar>(a: &TensorBase<S>, b: &TensorBase<S>) -> TensorBase<S> {
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    debug_assert_eq!(k, b.rows());
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let arow = a.row(i);
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aik) in arow.iter().enumerate() {
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += aik * bv;
            }
        }
    }
    TensorBase {
        shape: vec![m, n],
        data: out,
        grad_enabled: true,
    }
}

/// `a (m×k) * b^T where b is (n×k) -> (m×n)`.
pub(crate) fn matmul_nt<S: Scalar>(a: &TensorBase<S>, b: &TensorBase<S>) -> TensorBase<S> {
    let (m, k) = (a.rows(), a.cols());
    let n = b.rows();
    debug_assert_eq!(k, b.cols());
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            let brow = b.row(j);
            let mut acc = S::zero();
            for (&x, &y) in arow.iter().zip(brow.iter()) {
                acc += x * y;
            }
            out[i * n + j] = acc;
        }
    }
    TensorBase {
        shape: vec![m, n],
        data: out,
        grad_enabled: true,
    }
}

/// `a^T (k×m -> m×k transposed) * b (k×n) -> (m×n)` where a is (k×m).
pub(crate) fn matmul_tn<S: Scalar>(a: &TensorBase<S>, b: &TensorBase<S>) -> TensorBase<S> {
    let (k, m) = (a.rows(), a.cols());
    let n = b.cols();
    debug_assert_eq!(k, b.rows());
    let mut out = vec![S::zero(); m * n];
    for p in 0..k {
        let arow = a.row(p);
        let brow = b.row(p);
        for (i, &aip) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += aip * bv;
            }
        }
    }
    TensorBase {
        shape: vec![m, n],
        data: out,
        grad_enabled: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        let r = TensorBase::<f64>::from_vec(vec![2, 3], vec![1.0; 5]);
        assert!(r.is_err());
    }

    #[test]
    fn matmul_kernels_agree() {
        let a = TensorBase::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = TensorBase::from_vec(vec![3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let ab = matmul_raw(&a, &b);
        assert_eq!(ab.data(), &[58.0, 64.0, 139.0, 154.0]);

        // a * b == a * (b^T)^T via matmul_nt on the transposed operand
        let bt = TensorBase::from_vec(vec![2, 3], vec![7.0, 9.0, 11.0, 8.0, 10.0, 12.0]).unwrap();
        let ab2 = matmul_nt(&a, &bt);
        assert_eq!(ab.data(), ab2.data());

        // (a^T)^T * b via matmul_tn on the transposed operand
        let at = TensorBase::from_vec(vec![3, 2], vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]).unwrap();
        let ab3 = matmul_tn(&at, &b);
        assert_eq!(ab.data(), ab3.data());
    }
}
