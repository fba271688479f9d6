//! Dense column-major d-way tensors.
//!
//! Modes are zero-based: mode 0 indexes rows of a frontal slice, mode 1 its
//! columns, and modes `2..d` (the "trailing" modes) select the slice. In
//! column-major order every frontal slice is one contiguous run of
//! `rows * cols` entries, so slices are handed out as borrowed matrices.

use crate::matrix::{Matrix, MatrixRef};
use crate::{Error, Result};

/// Column-major offset of `idx` in a box of extents `dims`.
pub fn linear_index(dims: &[usize], idx: &[usize]) -> Result<usize> {
    if idx.len() != dims.len() || idx.iter().zip(dims).any(|(&i, &n)| i >= n) {
        return Err(Error::IndexOutOfRange {
            index: idx.to_vec(),
            dims: dims.to_vec(),
        });
    }
    let mut offset = 0;
    let mut stride = 1;
    for (&i, &n) in idx.iter().zip(dims) {
        offset += i * stride;
        stride *= n;
    }
    Ok(offset)
}

/// Inverse of [`linear_index`].
pub fn multi_index(dims: &[usize], mut offset: usize) -> Result<Vec<usize>> {
    let total: usize = dims.iter().product();
    if offset >= total {
        return Err(Error::IndexOutOfRange {
            index: vec![offset],
            dims: dims.to_vec(),
        });
    }
    let mut idx = Vec::with_capacity(dims.len());
    for &n in dims {
        idx.push(offset % n);
        offset /= n;
    }
    Ok(idx)
}

fn checked_len(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(Error::InvalidShape("tensor needs at least one mode".into()));
    }
    if let Some(k) = dims.iter().position(|&n| n == 0) {
        return Err(Error::InvalidShape(format!("mode {k} has zero extent")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| Error::InvalidShape(format!("dims {dims:?} overflow usize")))
}

/// Position of a frontal slice: the trailing multi-index and its flat
/// column-major rank among all slices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceIndex {
    trailing: Vec<usize>,
    flat: usize,
}

impl SliceIndex {
    pub fn from_trailing(dims: &[usize], trailing: &[usize]) -> Result<Self> {
        let tdims = dims.get(2..).unwrap_or(&[]);
        let flat = linear_index(tdims, trailing)?;
        Ok(Self {
            trailing: trailing.to_vec(),
            flat,
        })
    }

    pub fn from_flat(dims: &[usize], flat: usize) -> Result<Self> {
        let tdims = dims.get(2..).unwrap_or(&[]);
        let count: usize = tdims.iter().product();
        if flat >= count {
            return Err(Error::SliceOutOfRange { flat, count });
        }
        let trailing = if tdims.is_empty() {
            Vec::new()
        } else {
            multi_index(tdims, flat)?
        };
        Ok(Self { trailing, flat })
    }

    pub fn trailing(&self) -> &[usize] {
        &self.trailing
    }

    pub fn flat(&self) -> usize {
        self.flat
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = checked_len(&dims)?;
        if data.len() != len {
            return Err(Error::InvalidShape(format!(
                "dims {dims:?} need {len} entries, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        let len = checked_len(&dims)?;
        Ok(Self {
            dims,
            data: vec![0.0; len],
        })
    }

    /// Fill by evaluating `f` at every multi-index, in column-major order.
    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = checked_len(&dims)?;
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; dims.len()];
        for _ in 0..len {
            data.push(f(&idx));
            for (i, &n) in idx.iter_mut().zip(&dims) {
                *i += 1;
                if *i < n {
                    break;
                }
                *i = 0;
            }
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.data[linear_index(&self.dims, idx)?])
    }

    /// Rows of a frontal slice (`n_1`).
    pub fn slice_rows(&self) -> usize {
        self.dims[0]
    }

    /// Columns of a frontal slice (`n_2`, or 1 for a vector).
    pub fn slice_cols(&self) -> usize {
        self.dims.get(1).copied().unwrap_or(1)
    }

    pub fn slice_len(&self) -> usize {
        self.slice_rows() * self.slice_cols()
    }

    pub fn trailing_dims(&self) -> &[usize] {
        self.dims.get(2..).unwrap_or(&[])
    }

    /// Number of frontal slices, `prod(dims[2..])`.
    pub fn num_slices(&self) -> usize {
        self.trailing_dims().iter().product()
    }

    pub fn frontal_slice(&self, s: &SliceIndex) -> Result<MatrixRef<'_>> {
        self.slice(s.flat())
    }

    /// Frontal slice by flat slice index, borrowed without copying.
    pub fn slice(&self, flat: usize) -> Result<MatrixRef<'_>> {
        let count = self.num_slices();
        if flat >= count {
            return Err(Error::SliceOutOfRange { flat, count });
        }
        let len = self.slice_len();
        Ok(MatrixRef::new(
            self.slice_rows(),
            self.slice_cols(),
            &self.data[flat * len..(flat + 1) * len],
        ))
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.ndim() {
            return Err(Error::InvalidMode {
                mode,
                ndim: self.ndim(),
            });
        }
        Ok(())
    }

    /// Mode-`mode` unfolding: an `n_mode x prod(other dims)` matrix whose
    /// columns are the mode fibers in column-major order of the other modes.
    pub fn unfold(&self, mode: usize) -> Result<Matrix> {
        self.check_mode(mode)?;
        let left: usize = self.dims[..mode].iter().product();
        let n = self.dims[mode];
        let right: usize = self.dims[mode + 1..].iter().product();
        let mut out = vec![0.0; self.len()];
        for r in 0..right {
            for i in 0..n {
                let src = &self.data[(i + r * n) * left..(i + r * n + 1) * left];
                for (l, &x) in src.iter().enumerate() {
                    out[i + (l + r * left) * n] = x;
                }
            }
        }
        Matrix::from_col_major(n, left * right, out)
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn refold(unfolded: &Matrix, mode: usize, dims: &[usize]) -> Result<Self> {
        let len = checked_len(dims)?;
        if mode >= dims.len() {
            return Err(Error::InvalidMode {
                mode,
                ndim: dims.len(),
            });
        }
        let left: usize = dims[..mode].iter().product();
        let n = dims[mode];
        let right: usize = dims[mode + 1..].iter().product();
        if unfolded.rows() != n || unfolded.cols() * n != len {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} unfolding does not match dims {dims:?} at mode {mode}",
                unfolded.rows(),
                unfolded.cols()
            )));
        }
        let src = unfolded.data();
        let mut data = vec![0.0; len];
        for r in 0..right {
            for i in 0..n {
                let dst = &mut data[(i + r * n) * left..(i + r * n + 1) * left];
                for (l, x) in dst.iter_mut().enumerate() {
                    *x = src[i + (l + r * left) * n];
                }
            }
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(&self.data)
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Self::new(dims, self.data)
    }
}

pub(crate) fn frobenius_norm(data: &[f64]) -> f64 {
    data.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `||reference - approx||_F / ||reference||_F`.
///
/// Returns the absolute error when the reference is all zeros.
pub fn relative_error(reference: &DenseTensor, approx: &DenseTensor) -> Result<f64> {
    if reference.dims() != approx.dims() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            reference.dims(),
            approx.dims()
        )));
    }
    let diff = reference
        .data()
        .iter()
        .zip(approx.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm = reference.frobenius_norm();
    Ok(if norm == 0.0 { diff } else { diff / norm })
}
