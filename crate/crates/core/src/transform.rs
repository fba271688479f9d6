//! Orthonormal per-mode transforms `M_k` that map a tensor into the transform
//! domain. Only orthonormal matrices are accepted, so the inverse is always
//! the transpose.

use std::f64::consts::PI;
use std::fmt;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::svd::{svd, svd_scratch, ComputeSvdVectors};
use faer::{Col, Mat, Par};

use crate::matrix::Matrix;
use crate::tensor::DenseTensor;
use crate::{Error, Result};

/// Maximum accepted `||M^T M - I||_F / sqrt(n)`.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Identity,
    Dct,
    DataDriven,
    Custom,
}

impl TransformKind {
    /// Code used in the compressed file header.
    pub fn code(self) -> u8 {
        match self {
            TransformKind::Identity => 0,
            TransformKind::Dct => 1,
            TransformKind::DataDriven => 2,
            TransformKind::Custom => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => TransformKind::Identity,
            1 => TransformKind::Dct,
            2 => TransformKind::DataDriven,
            3 => TransformKind::Custom,
            _ => return None,
        })
    }

    /// Whether the matrix can be regenerated from the kind and size alone.
    pub fn is_analytic(self) -> bool {
        matches!(self, TransformKind::Identity | TransformKind::Dct)
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransformKind::Identity => "identity",
            TransformKind::Dct => "dct",
            TransformKind::DataDriven => "data",
            TransformKind::Custom => "custom",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transform {
    kind: TransformKind,
    matrix: Matrix,
}

/// `||M^T M - I||_F / sqrt(n)` for a square matrix.
pub fn orthonormality_residual(m: &Matrix) -> Result<f64> {
    if m.rows() != m.cols() {
        return Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let n = m.rows();
    if n == 0 {
        return Err(Error::InvalidParameter("empty transform".into()));
    }
    let mut gram = Mat::<f64>::zeros(n, n);
    faer::linalg::matmul::matmul(
        gram.as_mut(),
        faer::Accum::Replace,
        m.faer().transpose(),
        m.faer(),
        1.0,
        Par::Seq,
    );
    let mut sq = 0.0;
    for j in 0..n {
        for i in 0..n {
            let d = gram[(i, j)] - if i == j { 1.0 } else { 0.0 };
            sq += d * d;
        }
    }
    Ok(sq.sqrt() / (n as f64).sqrt())
}

impl Transform {
    pub fn identity(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("transform size must be >= 1".into()));
        }
        Ok(Self {
            kind: TransformKind::Identity,
            matrix: Matrix::identity(n),
        })
    }

    /// Orthonormal DCT-II: `M[j,k] = c_j cos(pi (2k+1) j / 2n)` with
    /// `c_0 = sqrt(1/n)` and `c_j = sqrt(2/n)` otherwise.
    pub fn dct(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("transform size must be >= 1".into()));
        }
        let nf = n as f64;
        let c0 = (1.0 / nf).sqrt();
        let c = (2.0 / nf).sqrt();
        let matrix = Matrix::from_fn(n, n, |j, k| {
            let scale = if j == 0 { c0 } else { c };
            scale * (PI * (2 * k + 1) as f64 * j as f64 / (2.0 * nf)).cos()
        });
        Ok(Self {
            kind: TransformKind::Dct,
            matrix,
        })
    }

    /// `M = U^T` where `U` holds the left singular vectors of the mode
    /// unfolding of `t`, completed to a full orthonormal basis when the
    /// unfolding is rank deficient.
    pub fn data_driven(t: &DenseTensor, mode: usize) -> Result<Self> {
        if mode < 2 {
            return Err(Error::ModeNotContractible(mode));
        }
        let unfolded = t.unfold(mode)?;
        if unfolded.data().iter().all(|&x| x == 0.0) {
            return Err(Error::Degenerate(
                "all-zero tensor has no singular vectors".into(),
            ));
        }
        if unfolded.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::Degenerate("non-finite entries in unfolding".into()));
        }
        let n = unfolded.rows();
        let cols = unfolded.cols();
        let r = n.min(cols);
        let mut u = Mat::<f64>::zeros(n, n);
        let mut s = Col::<f64>::zeros(r);
        let req = svd_scratch::<f64>(
            n,
            cols,
            ComputeSvdVectors::Full,
            ComputeSvdVectors::No,
            Par::Seq,
            Default::default(),
        );
        let mut buf = MemBuffer::new(req);
        svd(
            unfolded.faer(),
            s.as_mut().as_diagonal_mut(),
            Some(u.as_mut()),
            None,
            Par::Seq,
            MemStack::new(&mut buf),
            Default::default(),
        )
        .map_err(|_| Error::Degenerate("SVD of unfolding did not converge".into()))?;
        let matrix = Matrix::from_fn(n, n, |i, j| u[(j, i)]);
        Self::from_parts(TransformKind::DataDriven, matrix)
    }

    /// Wrap a user-supplied matrix after checking orthonormality.
    pub fn custom(matrix: Matrix) -> Result<Self> {
        Self::from_parts(TransformKind::Custom, matrix)
    }

    /// Validating constructor used when decoding stored transforms.
    pub fn from_parts(kind: TransformKind, matrix: Matrix) -> Result<Self> {
        let residual = orthonormality_residual(&matrix)?;
        // written as a negated comparison so NaN is rejected too
        if !(residual <= ORTHONORMALITY_TOL) {
            return Err(Error::NotOrthonormal { residual });
        }
        Ok(Self { kind, matrix })
    }

    /// Regenerate an analytic transform.
    pub fn analytic(kind: TransformKind, n: usize) -> Result<Self> {
        match kind {
            TransformKind::Identity => Self::identity(n),
            TransformKind::Dct => Self::dct(n),
            other => Err(Error::InvalidParameter(format!(
                "{other} transforms cannot be regenerated from their size"
            ))),
        }
    }

    pub fn kind(&self) -> TransformKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.matrix.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }
}

/// One transform per trailing mode (zero-based modes `2..d`).
#[derive(Clone, Debug, PartialEq)]
pub struct TransformSet {
    transforms: Vec<Transform>,
}

impl TransformSet {
    pub fn new(dims: &[usize], transforms: Vec<Transform>) -> Result<Self> {
        let set = Self { transforms };
        set.check_dims(dims)?;
        Ok(set)
    }

    pub fn identity(dims: &[usize]) -> Result<Self> {
        Self::uniform_analytic(dims, TransformKind::Identity)
    }

    pub fn dct(dims: &[usize]) -> Result<Self> {
        Self::uniform_analytic(dims, TransformKind::Dct)
    }

    pub fn uniform_analytic(dims: &[usize], kind: TransformKind) -> Result<Self> {
        let transforms = dims
            .get(2..)
            .unwrap_or(&[])
            .iter()
            .map(|&n| Transform::analytic(kind, n))
            .collect::<Result<_>>()?;
        Self::new(dims, transforms)
    }

    /// Independent data-driven transform for every trailing mode of `t`.
    pub fn data_driven(t: &DenseTensor) -> Result<Self> {
        let transforms = (2..t.ndim())
            .map(|mode| Transform::data_driven(t, mode))
            .collect::<Result<_>>()?;
        Self::new(t.dims(), transforms)
    }

    pub fn check_dims(&self, dims: &[usize]) -> Result<()> {
        let trailing = dims.get(2..).unwrap_or(&[]);
        if trailing.len() != self.transforms.len()
            || trailing
                .iter()
                .zip(&self.transforms)
                .any(|(&n, t)| t.size() != n)
        {
            return Err(Error::DimensionMismatch(format!(
                "transform sizes {:?} do not match trailing dims {trailing:?}",
                self.sizes()
            )));
        }
        Ok(())
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.transforms.iter().map(Transform::size).collect()
    }

    pub fn kinds(&self) -> Vec<TransformKind> {
        self.transforms.iter().map(Transform::kind).collect()
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    /// Transform for zero-based `mode >= 2`.
    pub fn for_mode(&self, mode: usize) -> Option<&Transform> {
        mode.checked_sub(2).and_then(|k| self.transforms.get(k))
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Transform> {
        self.transforms.iter()
    }

    /// Entries that must be stored alongside compressed factors:
    /// `sum n_k^2` over non-analytic transforms.
    pub fn stored_entries(&self) -> usize {
        self.transforms
            .iter()
            .filter(|t| !t.kind().is_analytic())
            .map(|t| t.size() * t.size())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dct_small_cases() {
        assert_eq!(Transform::dct(1).unwrap().matrix().data(), &[1.0]);
        let m = Transform::dct(2).unwrap();
        let h = 0.5f64.sqrt();
        let expect = [[h, h], [(PI / 4.0).cos(), (3.0 * PI / 4.0).cos()]];
        for (j, row) in expect.iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                assert!((m.matrix().get(j, k) - v).abs() < 1e-15);
            }
        }
        assert!((m.matrix().get(1, 1) + h).abs() < 1e-15);
        assert!(Transform::dct(0).is_err());
    }

    #[test]
    fn dct_is_orthonormal() {
        for n in 1..=64 {
            let m = Transform::dct(n).unwrap();
            let g = m.matrix().transpose().matmul(m.matrix()).unwrap();
            let mut sq = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let d = g.get(i, j) - if i == j { 1.0 } else { 0.0 };
                    sq += d * d;
                }
            }
            assert!(sq.sqrt() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn dct_rows_have_unit_norm() {
        for n in [1usize, 2, 3, 17, 128, 513, 1024] {
            let m = Transform::dct(n).unwrap();
            for j in 0..n {
                let norm = (0..n).map(|k| m.matrix().get(j, k).powi(2)).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-13, "n={n} row={j} norm={norm}");
            }
        }
    }

    #[test]
    fn identity_is_exact() {
        let t = Transform::identity(3).unwrap();
        assert_eq!(t.matrix(), &Matrix::identity(3));
        assert_eq!(t.kind(), TransformKind::Identity);
    }

    #[test]
    fn validate_accepts_permutation_and_reflector() {
        let p = Matrix::from_rows(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(Transform::custom(p).unwrap().kind(), TransformKind::Custom);

        let v = [1.0, -2.0, 0.5, 3.0];
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        let h = Matrix::from_fn(4, 4, |i, j| {
            (if i == j { 1.0 } else { 0.0 }) - 2.0 * v[i] * v[j] / vtv
        });
        assert!(orthonormality_residual(&h).unwrap() < 1e-15);
        assert!(Transform::custom(h).is_ok());
    }

    #[test]
    fn validate_rejects_scaled_identity() {
        let mut m = Matrix::identity(2);
        m.set(0, 0, 2.0);
        m.set(1, 1, 2.0);
        // (2I)^T (2I) - I = 3I, ||3I||_F / sqrt(2) = 3
        match Transform::custom(m) {
            Err(Error::NotOrthonormal { residual }) => assert!((residual - 3.0).abs() < 1e-15),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            Transform::custom(Matrix::zeros(2, 3)),
            Err(Error::NotSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn data_driven_rank_one_fibers() {
        let u = [1.0, 2.0, -2.0];
        let coef = |i: usize, j: usize| 1.0 + i as f64 + 0.5 * j as f64;
        let t = DenseTensor::from_fn(vec![2, 3, 3], |ix| coef(ix[0], ix[1]) * u[ix[2]]).unwrap();
        let m = Transform::data_driven(&t, 2).unwrap();
        assert_eq!(m.kind(), TransformKind::DataDriven);
        let sign = m.matrix().get(0, 0).signum();
        for k in 0..3 {
            assert!((m.matrix().get(0, k) - sign * u[k] / 3.0).abs() < 1e-12);
        }
        assert!(orthonormality_residual(m.matrix()).unwrap() < 1e-10);
    }

    #[test]
    fn data_driven_signed_permutation() {
        // mode-2 fibers live on distinct coordinate axes with distinct
        // energies, so the unfolding has orthogonal rows
        let scale = [1.0, 5.0, 3.0];
        let t = DenseTensor::from_fn(vec![3, 1, 3], |ix| {
            if ix[0] == ix[2] {
                scale[ix[2]]
            } else {
                0.0
            }
        })
        .unwrap();
        let m = Transform::data_driven(&t, 2).unwrap();
        // rows ordered by decreasing energy: axis 1, axis 2, axis 0
        let expect = [1usize, 2, 0];
        for (row, &col) in expect.iter().enumerate() {
            for k in 0..3 {
                let v = m.matrix().get(row, k).abs();
                let target = if k == col { 1.0 } else { 0.0 };
                assert!((v - target).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn data_driven_completes_rank_deficient_basis() {
        // 1 column in the unfolding, 4 rows
        let t = DenseTensor::new(vec![1, 1, 4], vec![1.0, 0.0, 2.0, 0.0]).unwrap();
        let m = Transform::data_driven(&t, 2).unwrap();
        assert_eq!(m.size(), 4);
        assert!(orthonormality_residual(m.matrix()).unwrap() < 1e-12);
    }

    #[test]
    fn data_driven_rejects_zero_tensor() {
        let t = DenseTensor::zeros(vec![2, 2, 3]).unwrap();
        assert!(matches!(Transform::data_driven(&t, 2), Err(Error::Degenerate(_))));
        assert!(matches!(
            Transform::data_driven(&t, 1),
            Err(Error::ModeNotContractible(1))
        ));
    }

    #[test]
    fn transform_set_checks_sizes() {
        let dims = [2, 3, 4, 5];
        let set = TransformSet::dct(&dims).unwrap();
        assert_eq!(set.sizes(), vec![4, 5]);
        assert!(set.check_dims(&[2, 3, 5, 4]).is_err());
        assert_eq!(set.stored_entries(), 0);
        assert!(TransformSet::new(&dims, vec![Transform::identity(4).unwrap()]).is_err());
    }
}
