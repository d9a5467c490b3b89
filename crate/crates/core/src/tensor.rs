//! Dense row-major `f64` tensors.
//!
//! The universal numeric carrier for this crate. Shapes are explicit and
//! validated at construction; the flat data is stored row-major. Heavy math
//! (matrix products, activations) lives either here or in the autodiff tape,
//! always with a fixed accumulation order so results are bitwise reproducible
//! for a given input.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense n-dimensional array of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking that the shape matches the data length.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dimension(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    /// 2-D tensor from nested rows. All rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let dim = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::dimension(format!(
                    "row {} has length {}, expected {}",
                    i,
                    row.len(),
                    dim
                )));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![n, dim], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row count of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Column count of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Borrow row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Error if any entry is NaN or infinite. `what` names the tensor in
    /// the diagnostic.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::numeric(format!(
                    "{what} contains non-finite value {v} at flat index {i}"
                )));
            }
        }
        Ok(())
    }

    /// Matrix product `self[m,k] @ other[k,n]`.
    ///
    /// Accumulates over `k` in ascending order for every output element, so
    /// the result is a pure deterministic function of the inputs.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if !self.is_matrix() || !other.is_matrix() {
            return Err(Error::dimension(format!(
                "matmul needs 2-D operands, got {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::dimension(format!(
                "matmul inner dimensions differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// Convex row combination: `out[i] = lambda * self[i] + (1-lambda) * self[perm[i]]`,
    /// clamped elementwise to the interval spanned by the two parent entries
    /// so the result never leaves their convex hull even under rounding.
    pub fn mix_rows(&self, perm: &[usize], lambda: f64) -> Result<Tensor> {
        self.mix_rows_impl(perm, |_| lambda)
    }

    /// Row combination with one mixing weight per row.
    pub fn mix_rows_per_sample(&self, perm: &[usize], lambdas: &[f64]) -> Result<Tensor> {
        if lambdas.len() != self.rows() {
            return Err(Error::dimension(format!(
                "{} mixing weights for {} rows",
                lambdas.len(),
                self.rows()
            )));
        }
        self.mix_rows_impl(perm, |i| lambdas[i])
    }

    fn mix_rows_impl(&self, perm: &[usize], lambda_of: impl Fn(usize) -> f64) -> Result<Tensor> {
        if !self.is_matrix() {
            return Err(Error::dimension(format!(
                "mix_rows needs a 2-D tensor, got {:?}",
                self.shape
            )));
        }
        let n = self.rows();
        validate_permutation(perm, n)?;
        let c = self.cols();
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            let lambda = lambda_of(i);
            if !(0.0..=1.0).contains(&lambda) {
                return Err(Error::validation(format!(
                    "mixing weight must be in [0,1], got {lambda}"
                )));
            }
            let lam_c = 1.0 - lambda;
            let a = self.row(i);
            let b = self.row(perm[i]);
            let orow = &mut out[i * c..(i + 1) * c];
            for d in 0..c {
                let lo = a[d].min(b[d]);
                let hi = a[d].max(b[d]);
                orow[d] = (lambda * a[d] + lam_c * b[d]).clamp(lo, hi);
            }
        }
        Tensor::new(vec![n, c], out)
    }
}

/// Check that `perm` is a bijection on `0..n`.
pub fn validate_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::dimension(format!(
            "permutation length {} does not match batch size {}",
            perm.len(),
            n
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::validation(format!(
                "permutation is not a bijection on 0..{n}"
            )));
        }
        seen[p] = true;
    }
    Ok(())
}
