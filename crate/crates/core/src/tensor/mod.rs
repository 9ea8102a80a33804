//! Dense row-major `f64` tensors and a reverse-mode differentiation tape.

mod graph;
mod kernels;

pub use graph::{Graph, Unary, Var};
pub use kernels::{matmul_into, Transpose};

use crate::error::{Error, Result};

/// A dense n-dimensional array of `f64` values in row-major order.
///
/// Tensors are plain values; differentiation state lives in a [`Graph`].
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Dimension(format!(
                "all extents must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Row-major `rows × cols` matrix.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::matrix(rows.len(), cols, rows.concat())
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Leading extent. For a vector this is its length.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Product of the trailing extents (1 for a vector).
    pub fn cols(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::Contract(format!(
                "item() on a tensor of shape {:?}",
                self.shape
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Rows `start..end` of a matrix as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.rows() {
            return Err(Error::Dimension(format!(
                "row range {start}..{end} out of bounds for {} rows",
                self.rows()
            )));
        }
        let c = self.cols();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Self::new(shape, self.data[start * c..end * c].to_vec())
    }

    /// Matrix made of the given rows (gather).
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= self.rows() {
                return Err(Error::Dimension(format!("row {i} out of bounds")));
            }
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Self::new(shape, data)
    }

    /// Plain (non-recorded) matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = as_matrix(self)?;
        let (k2, n) = as_matrix(other)?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul inner extents differ: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(
            m,
            k,
            n,
            &self.data,
            Transpose::No,
            &other.data,
            Transpose::No,
            &mut out,
            0.0,
        );
        Tensor::matrix(m, n, out)
    }

    /// Sum or mean over all entries (`axis = None`) or along one axis.
    ///
    /// Accumulation runs left to right in index order, so results are
    /// reproducible bit for bit.
    pub fn reduce(&self, kind: Reduction, axis: Option<usize>) -> Result<Tensor> {
        match axis {
            None => {
                let v = match kind {
                    Reduction::Sum => self.data.iter().fold(0.0, |acc, v| acc + v),
                    Reduction::Mean => running_mean(self.data.iter().copied()),
                };
                Ok(Tensor::scalar(v))
            }
            Some(ax) => {
                if ax >= self.rank() {
                    return Err(Error::Dimension(format!(
                        "axis {ax} out of range for rank {}",
                        self.rank()
                    )));
                }
                let (outer, len, inner) = axis_split(&self.shape, ax);
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for j in 0..len {
                        let base = (o * len + j) * inner;
                        for i in 0..inner {
                            let x = self.data[base + i];
                            let acc = &mut out[o * inner + i];
                            match kind {
                                Reduction::Sum => *acc += x,
                                Reduction::Mean => *acc += (x - *acc) / (j + 1) as f64,
                            }
                        }
                    }
                }
                let mut shape: Vec<usize> = self.shape.clone();
                shape.remove(ax);
                if shape.is_empty() {
                    shape.push(1);
                }
                Tensor::new(shape, out)
            }
        }
    }
}

/// Incremental mean; exact when all inputs are equal.
pub(crate) fn running_mean(xs: impl Iterator<Item = f64>) -> f64 {
    let mut m = 0.0;
    for (k, x) in xs.enumerate() {
        m += (x - m) / (k + 1) as f64;
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

/// Splits a shape at `axis` into (outer, axis extent, inner) products.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn as_matrix(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        [n] => Ok((1, *n)),
        s => Err(Error::Dimension(format!("expected a matrix, got shape {s:?}"))),
    }
}
