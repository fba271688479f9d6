//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here calls the library's kernels: TTMs are evaluated fiber by
//! fiber from index arithmetic, and SVDs come from nalgebra.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use starm::{DenseTensor, Matrix, MatrixRef, Transform, TransformSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(dims: Vec<usize>, rng: &mut ChaCha8Rng) -> DenseTensor {
    let len = dims.iter().product();
    let data = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
    DenseTensor::new(dims, data).unwrap()
}

pub fn random_dims(rng: &mut ChaCha8Rng, ndim: usize, max_extent: usize) -> Vec<usize> {
    (0..ndim).map(|_| rng.random_range(1..=max_extent)).collect()
}

pub fn to_na(m: MatrixRef<'_>) -> DMatrix<f64> {
    DMatrix::from_column_slice(m.rows(), m.cols(), m.data())
}

pub fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_col_major(m.nrows(), m.ncols(), m.as_slice().to_vec()).unwrap()
}

/// Orthonormal `n x n` matrix from the QR factorization of a Gaussian one.
pub fn random_orthonormal(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    from_na(&g.qr().q())
}

/// `t x_mode m`, one fiber at a time.
pub fn ttm_oracle(t: &DenseTensor, mode: usize, m: &Matrix) -> DenseTensor {
    let mut dims = t.dims().to_vec();
    dims[mode] = m.rows();
    DenseTensor::from_fn(dims, |idx| {
        let mut src = idx.to_vec();
        (0..m.cols())
            .map(|k| {
                src[mode] = k;
                m.get(idx[mode], k) * t.get(&src).unwrap()
            })
            .sum()
    })
    .unwrap()
}

/// Forward transform of every trailing mode via the fiber oracle.
pub fn forward_oracle(t: &DenseTensor, ts: &TransformSet) -> DenseTensor {
    ts.iter()
        .enumerate()
        .fold(t.clone(), |acc, (k, tr)| ttm_oracle(&acc, k + 2, tr.matrix()))
}

pub fn inverse_oracle(t: &DenseTensor, ts: &TransformSet) -> DenseTensor {
    ts.iter()
        .enumerate()
        .fold(t.clone(), |acc, (k, tr)| ttm_oracle(&acc, k + 2, &tr.matrix().transpose()))
}

/// Singular values of one matrix, non-increasing.
pub fn singular_values(m: MatrixRef<'_>) -> Vec<f64> {
    let mut s: Vec<f64> = to_na(m).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Singular values of every frontal slice, slice-major.
pub fn slice_values(t: &DenseTensor) -> Vec<Vec<f64>> {
    (0..t.num_slices()).map(|i| singular_values(t.slice(i).unwrap())).collect()
}

/// `||a - b||_F / ||a||_F`.
pub fn rel_err(reference: &[f64], approx: &[f64]) -> f64 {
    assert_eq!(reference.len(), approx.len());
    let diff: f64 = reference.iter().zip(approx).map(|(x, y)| (x - y).powi(2)).sum();
    let norm: f64 = reference.iter().map(|x| x * x).sum();
    if norm == 0.0 {
        diff.sqrt()
    } else {
        (diff / norm).sqrt()
    }
}

/// Largest entrywise deviation relative to the largest reference entry.
pub fn max_rel_err(reference: &[f64], approx: &[f64]) -> f64 {
    assert_eq!(reference.len(), approx.len());
    let diff = reference.iter().zip(approx).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = reference.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// One transform set of every kind for `t`.
pub fn all_transform_sets(t: &DenseTensor, rng: &mut ChaCha8Rng) -> Vec<(&'static str, TransformSet)> {
    let dims = t.dims();
    let custom = dims[2..]
        .iter()
        .map(|&n| Transform::custom(random_orthonormal(n, rng)).unwrap())
        .collect();
    let mut sets = vec![
        ("identity", TransformSet::identity(dims).unwrap()),
        ("dct", TransformSet::dct(dims).unwrap()),
        ("custom", TransformSet::new(dims, custom).unwrap()),
    ];
    if t.frobenius_norm() > 0.0 {
        sets.push(("data", TransformSet::data_driven(t).unwrap()));
    }
    sets
}

/// Squared Frobenius error of the best rank-`r` approximation of each slice.
pub fn tail_energy(values: &[Vec<f64>], ranks: &[usize]) -> f64 {
    values
        .iter()
        .zip(ranks)
        .map(|(s, &r)| s.iter().skip(r).map(|x| x * x).sum::<f64>())
        .sum()
}
