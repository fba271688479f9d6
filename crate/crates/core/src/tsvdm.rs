//! The star-M product and the t-SVDM family: full factorization, uniform-rank
//! truncation (t-SVDM-I) and tolerance-driven variable-rank truncation
//! (t-SVDM-II), plus reconstruction and compression-ratio accounting.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use faer::linalg::matmul::matmul;
use faer::{Accum, MatMut, MatRef, Par};
use rayon::prelude::*;

use crate::exec::Context;
use crate::matrix::Matrix;
use crate::slice_svd::{
    svd_all_slices, svd_truncated_from_cache, svd_truncated_slices, svd_values_cached,
    svd_values_only, SliceSvdSet, VariableRankFactors,
};
use crate::tensor::DenseTensor;
use crate::transform::TransformSet;
use crate::ttm::{from_transform_domain, release, to_transform_domain};
use crate::{Error, Result};

/// Execution strategy of t-SVDM-II.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Tsvdm2Strategy {
    /// Full factorization of every slice, then discard.
    Truncate,
    /// Values-only first pass that caches the slice copies, truncated second
    /// pass from the cache.
    ComputeEfficient,
    /// Values-only first pass, truncated second pass from the transformed
    /// tensor. Lowest peak memory.
    #[default]
    MemoryEfficient,
}

impl Tsvdm2Strategy {
    pub const ALL: [Tsvdm2Strategy; 3] = [
        Tsvdm2Strategy::Truncate,
        Tsvdm2Strategy::ComputeEfficient,
        Tsvdm2Strategy::MemoryEfficient,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tsvdm2Strategy::Truncate => "truncate",
            Tsvdm2Strategy::ComputeEfficient => "compute",
            Tsvdm2Strategy::MemoryEfficient => "memory",
        }
    }
}

impl fmt::Display for Tsvdm2Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Tsvdm2Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truncate" => Ok(Tsvdm2Strategy::Truncate),
            "compute" | "compute-efficient" => Ok(Tsvdm2Strategy::ComputeEfficient),
            "memory" | "memory-efficient" => Ok(Tsvdm2Strategy::MemoryEfficient),
            _ => Err(Error::InvalidParameter(format!(
                "unknown t-SVDM-II strategy {s:?}"
            ))),
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must lie in (0, 1), got {epsilon}"
        )));
    }
    Ok(())
}

/// Global energy threshold over all squared singular values.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdResult {
    /// Squared singular values in ascending order.
    pub sorted_sq: Vec<f64>,
    /// Running sums of `sorted_sq`.
    pub cumulative: Vec<f64>,
    /// Number of discarded values: the largest count whose energy stays below
    /// `epsilon^2` of the total, backed off so that ties at the cutoff are kept.
    pub j: usize,
    /// Largest discarded squared value, 0 when nothing is discarded.
    pub tau: f64,
    /// Per-slice retained ranks, `#{ sigma^2 > tau }`.
    pub ranks: Vec<usize>,
    /// Energy of the discarded values.
    pub discarded_energy: f64,
    /// Total energy `||S||_F^2`.
    pub total_energy: f64,
}

/// Choose per-slice ranks from the `r x N` singular value matrix `s` so that
/// the discarded energy is below `epsilon^2 ||s||_F^2`.
pub fn compute_threshold(s: &Matrix, epsilon: f64) -> Result<ThresholdResult> {
    check_epsilon(epsilon)?;
    if let Some(bad) = s.data().iter().find(|x| !(**x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "singular values must be finite and non-negative, found {bad}"
        )));
    }
    let mut sorted_sq: Vec<f64> = s.data().iter().map(|x| x * x).collect();
    sorted_sq.sort_by(f64::total_cmp);
    let mut cumulative = Vec::with_capacity(sorted_sq.len());
    let mut acc = 0.0;
    for v in &sorted_sq {
        acc += v;
        cumulative.push(acc);
    }
    let total = acc;
    let limit = epsilon * epsilon;

    let mut j = if total > 0.0 {
        cumulative.partition_point(|w| w / total < limit)
    } else {
        0
    };
    // values tied with the cutoff beyond j cannot all be dropped; keep them
    if j > 0 && j < sorted_sq.len() && sorted_sq[j] == sorted_sq[j - 1] {
        let tied = sorted_sq[j - 1];
        j = sorted_sq.partition_point(|v| *v < tied);
    }
    let tau = if j == 0 { 0.0 } else { sorted_sq[j - 1] };
    let discarded_energy = if j == 0 { 0.0 } else { cumulative[j - 1] };
    let ranks = (0..s.cols())
        .map(|i| s.col(i).iter().filter(|x| *x * *x > tau).count())
        .collect();
    Ok(ThresholdResult {
        sorted_sq,
        cumulative,
        j,
        tau,
        ranks,
        discarded_energy,
        total_energy: total,
    })
}

/// Truncation rule stored with a compressed tensor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    /// t-SVDM-I with uniform rank `r`.
    FixedRank(usize),
    /// t-SVDM-II with relative tolerance `epsilon`.
    Tolerance(f64),
}

impl Method {
    pub fn code(self) -> u8 {
        match self {
            Method::FixedRank(_) => 1,
            Method::Tolerance(_) => 2,
        }
    }

    pub fn param(self) -> f64 {
        match self {
            Method::FixedRank(r) => r as f64,
            Method::Tolerance(eps) => eps,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::FixedRank(_) => "tsvdm1",
            Method::Tolerance(_) => "tsvdm2",
        }
    }
}

/// Variable-rank compressed representation.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressedTensor {
    dims: Vec<usize>,
    method: Method,
    transforms: TransformSet,
    factors: VariableRankFactors,
}

impl CompressedTensor {
    pub fn new(
        dims: Vec<usize>,
        method: Method,
        transforms: TransformSet,
        factors: VariableRankFactors,
    ) -> Result<Self> {
        if dims.len() < 3 || dims.contains(&0) {
            return Err(Error::InvalidShape(format!(
                "compressed tensors need at least 3 positive extents, got {dims:?}"
            )));
        }
        transforms.check_dims(&dims)?;
        let n: usize = dims[2..].iter().product();
        if factors.rows() != dims[0] || factors.cols() != dims[1] || factors.ranks().len() != n {
            return Err(Error::InvalidRanks(format!(
                "factors for {}x{} slices with {} ranks do not fit dims {dims:?}",
                factors.rows(),
                factors.cols(),
                factors.ranks().len()
            )));
        }
        if let Method::FixedRank(r) = method {
            if factors.ranks().iter().any(|&x| x != r) {
                return Err(Error::InvalidRanks(format!(
                    "fixed-rank artifact must have every rank equal to {r}"
                )));
            }
        }
        Ok(Self {
            dims,
            method,
            transforms,
            factors,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn transforms(&self) -> &TransformSet {
        &self.transforms
    }

    pub fn factors(&self) -> &VariableRankFactors {
        &self.factors
    }

    pub fn ranks(&self) -> &[usize] {
        self.factors.ranks()
    }

    /// Stored factor entries plus stored transform entries.
    pub fn stored_entries(&self) -> usize {
        self.factors.stored_entries() + self.transforms.stored_entries()
    }

    pub fn compression_ratio(&self) -> f64 {
        compression_ratio(self)
    }
}

/// Original entry count over stored entry count; `+inf` when nothing is stored.
pub fn compression_ratio(c: &CompressedTensor) -> f64 {
    let original: f64 = c.dims.iter().map(|&n| n as f64).product();
    let stored = c.stored_entries();
    if stored == 0 {
        f64::INFINITY
    } else {
        original / stored as f64
    }
}

/// Wall time of each stage of a decomposition.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub transform: Duration,
    pub stage1_svd: Duration,
    pub threshold: Duration,
    pub stage2_svd: Duration,
    pub pack: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.transform + self.stage1_svd + self.threshold + self.stage2_svd + self.pack
    }
}

/// A compressed tensor with the bookkeeping of how it was produced.
#[derive(Clone, Debug)]
pub struct Compression {
    pub compressed: CompressedTensor,
    /// Squared Frobenius norm of the discarded part.
    pub discarded_energy: f64,
    /// Squared Frobenius norm of the transformed tensor.
    pub total_energy: f64,
    /// Present for t-SVDM-II only.
    pub threshold: Option<ThresholdResult>,
    pub timings: StageTimings,
}

impl Compression {
    /// Relative reconstruction error predicted by the discarded energy.
    pub fn relative_error(&self) -> f64 {
        if self.total_energy > 0.0 {
            (self.discarded_energy / self.total_energy).sqrt()
        } else {
            0.0
        }
    }
}

/// Full t-SVDM: slice factors in the transform domain.
#[derive(Clone, Debug)]
pub struct TsvdmResult {
    pub svd: SliceSvdSet,
    pub transforms: TransformSet,
}

impl TsvdmResult {
    /// `U *M S *M V^T` back in the original domain.
    pub fn reconstruct(&self, ctx: &Context) -> Result<DenseTensor> {
        let (m, p) = (self.svd.u.dims()[0], self.svd.v.dims()[0]);
        let (r, n) = (self.svd.rank(), self.svd.num_slices());
        let mut dims = vec![m, p];
        dims.extend_from_slice(&self.svd.u.dims()[2..]);
        ctx.meter().charge_f64s(m * p * n).keep();
        let mut data = vec![0.0; m * p * n];
        let (u, s, v) = (self.svd.u.data(), self.svd.s.data(), self.svd.v.data());
        ctx.install(|| {
            data.par_chunks_exact_mut(m * p)
                .enumerate()
                .for_each(|(i, dst)| {
                    let ui = MatRef::from_column_major_slice(&u[i * m * r..(i + 1) * m * r], m, r);
                    let vi = MatRef::from_column_major_slice(&v[i * p * r..(i + 1) * p * r], p, r);
                    let si = &s[i * r..(i + 1) * r];
                    let mut us = ui.to_owned();
                    for (j, sv) in si.iter().enumerate() {
                        for x in us.col_mut(j).iter_mut() {
                            *x *= sv;
                        }
                    }
                    let c = MatMut::from_column_major_slice_mut(dst, m, p);
                    matmul(c, Accum::Replace, us.as_ref(), vi.transpose(), 1.0, Par::Seq);
                });
        });
        let hat = DenseTensor::new(dims, data)?;
        let out = from_transform_domain(&hat, &self.transforms, ctx.ttm_variant(), ctx);
        release(ctx, &hat);
        out
    }
}

fn check_decomposable(a: &DenseTensor, ts: &TransformSet) -> Result<()> {
    if a.ndim() < 3 {
        return Err(Error::InvalidShape(format!(
            "decompositions need a tensor with at least 3 modes, got {:?}",
            a.dims()
        )));
    }
    ts.check_dims(a.dims())
}

/// Full t-SVDM of `a`.
pub fn full_tsvdm(a: &DenseTensor, ts: &TransformSet, ctx: &Context) -> Result<TsvdmResult> {
    check_decomposable(a, ts)?;
    let ahat = to_transform_domain(a, ts, ctx.ttm_variant(), ctx)?;
    let svd = svd_all_slices(&ahat, ctx.svd_strategy(), ctx);
    release(ctx, &ahat);
    Ok(TsvdmResult {
        svd: svd?,
        transforms: ts.clone(),
    })
}

/// Uniform-rank truncation, keeping `r` triplets in every transformed slice.
pub fn tsvdm_fixed_rank(a: &DenseTensor, ts: &TransformSet, r: usize, ctx: &Context) -> Result<CompressedTensor> {
    Ok(tsvdm_fixed_rank_detailed(a, ts, r, ctx)?.compressed)
}

pub fn tsvdm_fixed_rank_detailed(
    a: &DenseTensor,
    ts: &TransformSet,
    r: usize,
    ctx: &Context,
) -> Result<Compression> {
    check_decomposable(a, ts)?;
    let max_rank = a.slice_rows().min(a.slice_cols());
    if r == 0 || r > max_rank {
        return Err(Error::InvalidParameter(format!(
            "rank must lie in 1..={max_rank}, got {r}"
        )));
    }
    let mut timings = StageTimings::default();
    let clock = Instant::now();
    let ahat = to_transform_domain(a, ts, ctx.ttm_variant(), ctx)?;
    timings.transform = clock.elapsed();

    let clock = Instant::now();
    let ranks = vec![r; ahat.num_slices()];
    let trunc = svd_truncated_slices(&ahat, &ranks, ctx.svd_strategy(), ctx);
    let total_energy = ahat.data().iter().map(|x| x * x).sum();
    release(ctx, &ahat);
    let trunc = trunc?;
    timings.stage1_svd = clock.elapsed();

    let clock = Instant::now();
    let compressed = CompressedTensor::new(a.dims().to_vec(), Method::FixedRank(r), ts.clone(), trunc.factors)?;
    timings.pack = clock.elapsed();
    Ok(Compression {
        compressed,
        discarded_energy: trunc.discarded_energy,
        total_energy,
        threshold: None,
        timings,
    })
}

/// Tolerance-driven truncation: relative reconstruction error below `epsilon`.
pub fn tsvdm_tolerance(
    a: &DenseTensor,
    ts: &TransformSet,
    epsilon: f64,
    strategy: Tsvdm2Strategy,
    ctx: &Context,
) -> Result<CompressedTensor> {
    Ok(tsvdm_tolerance_detailed(a, ts, epsilon, strategy, ctx)?.compressed)
}

pub fn tsvdm_tolerance_detailed(
    a: &DenseTensor,
    ts: &TransformSet,
    epsilon: f64,
    strategy: Tsvdm2Strategy,
    ctx: &Context,
) -> Result<Compression> {
    check_epsilon(epsilon)?;
    check_decomposable(a, ts)?;
    let svd_strategy = ctx.svd_strategy();
    let mut timings = StageTimings::default();

    let clock = Instant::now();
    let ahat = to_transform_domain(a, ts, ctx.ttm_variant(), ctx)?;
    timings.transform = clock.elapsed();

    let (threshold, factors, discarded_energy) = match strategy {
        Tsvdm2Strategy::Truncate => {
            let clock = Instant::now();
            let full = svd_all_slices(&ahat, svd_strategy, ctx);
            release(ctx, &ahat);
            let full = full?;
            timings.stage1_svd = clock.elapsed();

            let clock = Instant::now();
            let threshold = compute_threshold(&full.s, epsilon)?;
            timings.threshold = clock.elapsed();

            let clock = Instant::now();
            let factors = discard_trailing(&full, &threshold.ranks, ctx)?;
            release_svd(ctx, &full);
            timings.pack = clock.elapsed();
            let discarded = threshold.discarded_energy;
            (threshold, factors, discarded)
        }
        Tsvdm2Strategy::ComputeEfficient => {
            let clock = Instant::now();
            let cache = svd_values_cached(&ahat, svd_strategy, ctx);
            release(ctx, &ahat);
            let cache = cache?;
            timings.stage1_svd = clock.elapsed();

            let clock = Instant::now();
            let threshold = compute_threshold(cache.values(), epsilon)?;
            timings.threshold = clock.elapsed();

            let clock = Instant::now();
            let trunc = svd_truncated_from_cache(cache, &threshold.ranks, svd_strategy, ctx)?;
            timings.stage2_svd = clock.elapsed();
            (threshold, trunc.factors, trunc.discarded_energy)
        }
        Tsvdm2Strategy::MemoryEfficient => {
            let clock = Instant::now();
            let values = svd_values_only(&ahat, svd_strategy, ctx);
            let values = match values {
                Ok(v) => v,
                Err(e) => {
                    release(ctx, &ahat);
                    return Err(e);
                }
            };
            timings.stage1_svd = clock.elapsed();

            let clock = Instant::now();
            let threshold = compute_threshold(&values, epsilon);
            drop(ctx.meter().adopt(values.data().len() * 8));
            timings.threshold = clock.elapsed();

            let clock = Instant::now();
            let trunc = threshold
                .and_then(|t| Ok((svd_truncated_slices(&ahat, &t.ranks, svd_strategy, ctx)?, t)));
            release(ctx, &ahat);
            let (trunc, threshold) = trunc?;
            timings.stage2_svd = clock.elapsed();
            (threshold, trunc.factors, trunc.discarded_energy)
        }
    };

    let clock = Instant::now();
    let total_energy = threshold.total_energy;
    let compressed = CompressedTensor::new(a.dims().to_vec(), Method::Tolerance(epsilon), ts.clone(), factors)?;
    timings.pack += clock.elapsed();
    Ok(Compression {
        compressed,
        discarded_energy,
        total_energy,
        threshold: Some(threshold),
        timings,
    })
}

fn release_svd(ctx: &Context, full: &SliceSvdSet) {
    let count = full.u.len() + full.v.len() + full.s.data().len();
    drop(ctx.meter().adopt(count * std::mem::size_of::<f64>()));
}

/// Keep the leading `ranks[i]` columns of every slice of a full factorization.
fn discard_trailing(full: &SliceSvdSet, ranks: &[usize], ctx: &Context) -> Result<VariableRankFactors> {
    let (m, p) = (full.u.dims()[0], full.v.dims()[0]);
    let r = full.rank();
    let total: usize = ranks.iter().sum();
    ctx.meter().charge_f64s(total * (m + p)).keep();
    let mut u = Vec::with_capacity(total * m);
    let mut g = Vec::with_capacity(total * p);
    for (i, &rho) in ranks.iter().enumerate() {
        let ui = &full.u.data()[i * m * r..];
        u.extend_from_slice(&ui[..rho * m]);
        let vi = &full.v.data()[i * p * r..];
        for c in 0..p {
            for j in 0..rho {
                g.push(full.s.get(j, i) * vi[c + j * p]);
            }
        }
    }
    VariableRankFactors::new(m, p, ranks.to_vec(), u, g)
}

/// Facewise products `U_i G_i` mapped back to the original domain.
pub fn reconstruct(c: &CompressedTensor, ctx: &Context) -> Result<DenseTensor> {
    let hat = DenseTensor::new(c.dims.clone(), c.factors.expand(ctx))?;
    let out = from_transform_domain(&hat, &c.transforms, ctx.ttm_variant(), ctx);
    release(ctx, &hat);
    out
}

/// The star-M product `a *M b` of an `m x p x ..` and a `p x l x ..` tensor.
pub fn starm_product(a: &DenseTensor, b: &DenseTensor, ts: &TransformSet, ctx: &Context) -> Result<DenseTensor> {
    if a.ndim() < 3 || b.ndim() != a.ndim() {
        return Err(Error::DimensionMismatch(format!(
            "operands {:?} and {:?} must share at least 3 modes",
            a.dims(),
            b.dims()
        )));
    }
    if a.dims()[1] != b.dims()[0] {
        return Err(Error::DimensionMismatch(format!(
            "inner extents differ: {} vs {}",
            a.dims()[1],
            b.dims()[0]
        )));
    }
    if a.trailing_dims() != b.trailing_dims() {
        return Err(Error::DimensionMismatch(format!(
            "trailing extents differ: {:?} vs {:?}",
            a.trailing_dims(),
            b.trailing_dims()
        )));
    }
    ts.check_dims(a.dims())?;
    let variant = ctx.ttm_variant();
    let ahat = to_transform_domain(a, ts, variant, ctx)?;
    let bhat = to_transform_domain(b, ts, variant, ctx)?;
    let (m, p, l) = (a.dims()[0], a.dims()[1], b.dims()[1]);
    let n = a.num_slices();
    ctx.meter().charge_f64s(m * l * n).keep();
    let mut data = vec![0.0; m * l * n];
    ctx.install(|| {
        data.par_chunks_exact_mut(m * l)
            .zip(ahat.data().par_chunks_exact(m * p))
            .zip(bhat.data().par_chunks_exact(p * l))
            .for_each(|((dst, ai), bi)| {
                let c = MatMut::from_column_major_slice_mut(dst, m, l);
                let ai = MatRef::from_column_major_slice(ai, m, p);
                let bi = MatRef::from_column_major_slice(bi, p, l);
                matmul(c, Accum::Replace, ai, bi, 1.0, Par::Seq);
            });
    });
    release(ctx, &ahat);
    release(ctx, &bhat);
    let mut dims = vec![m, l];
    dims.extend_from_slice(a.trailing_dims());
    let chat = DenseTensor::new(dims, data)?;
    let out = from_transform_domain(&chat, ts, variant, ctx);
    release(ctx, &chat);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::Transform;

    fn ctx() -> Context {
        Context::new(2).unwrap()
    }

    fn sample(dims: Vec<usize>, seed: u64) -> DenseTensor {
        let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
        DenseTensor::from_fn(dims, |_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .unwrap()
    }

    fn diag_slice(values: &[f64]) -> DenseTensor {
        let n = values.len();
        DenseTensor::from_fn(vec![n, n, 1], |i| if i[0] == i[1] { values[i[0]] } else { 0.0 }).unwrap()
    }

    #[test]
    fn threshold_fixture() {
        let s = Matrix::from_col_major(3, 1, vec![3.0, 2.0, 1.0]).unwrap();
        let t = compute_threshold(&s, 0.32).unwrap();
        assert_eq!(t.sorted_sq, vec![1.0, 4.0, 9.0]);
        assert_eq!(t.cumulative, vec![1.0, 5.0, 14.0]);
        assert_eq!((t.j, t.tau, t.ranks.clone()), (1, 1.0, vec![2]));
        assert_eq!(t.discarded_energy, 1.0);
    }

    #[test]
    fn threshold_tiny_epsilon_keeps_positive_values() {
        let s = Matrix::from_col_major(2, 2, vec![3.0, 2.0, 1.0, 0.5]).unwrap();
        let t = compute_threshold(&s, 1e-15).unwrap();
        assert_eq!((t.j, t.tau), (0, 0.0));
        assert_eq!(t.ranks, vec![2, 2]);

        // exact zeros are dropped at no cost
        let s = Matrix::from_col_major(3, 2, vec![3.0, 2.0, 0.0, 1.0, 0.5, 0.0]).unwrap();
        let t = compute_threshold(&s, 1e-15).unwrap();
        assert_eq!((t.j, t.tau, t.discarded_energy), (2, 0.0, 0.0));
        assert_eq!(t.ranks, vec![2, 2]);
    }

    #[test]
    fn threshold_drops_whole_slice() {
        let s = Matrix::from_col_major(2, 2, vec![5.0, 0.1, 0.2, 0.1]).unwrap();
        let t = compute_threshold(&s, 0.9).unwrap();
        assert_eq!(t.ranks, vec![1, 0]);
    }

    #[test]
    fn threshold_keeps_ties_that_would_break_the_bound() {
        // four equal values: dropping one is allowed, dropping all four is not
        let s = Matrix::from_col_major(4, 1, vec![1.0; 4]).unwrap();
        let t = compute_threshold(&s, 0.6).unwrap();
        assert_eq!((t.j, t.tau, t.ranks.clone()), (0, 0.0, vec![4]));
        assert_eq!(t.discarded_energy, 0.0);
    }

    #[test]
    fn threshold_rejects_bad_epsilon() {
        let s = Matrix::from_col_major(1, 1, vec![1.0]).unwrap();
        for eps in [0.0, 1.0, 1.5, -0.1, f64::NAN] {
            assert!(matches!(compute_threshold(&s, eps), Err(Error::InvalidParameter(_))));
        }
    }

    #[test]
    fn full_tsvdm_reconstructs() {
        let ctx = ctx();
        let a = sample(vec![6, 5, 4, 3], 3);
        for ts in [
            TransformSet::identity(a.dims()).unwrap(),
            TransformSet::dct(a.dims()).unwrap(),
            TransformSet::data_driven(&a).unwrap(),
        ] {
            let res = full_tsvdm(&a, &ts, &ctx).unwrap();
            let back = res.reconstruct(&ctx).unwrap();
            assert!(crate::tensor::relative_error(&a, &back).unwrap() < 1e-11);
        }
    }

    #[test]
    fn full_tsvdm_of_zero_tensor() {
        let ctx = ctx();
        let a = DenseTensor::zeros(vec![3, 2, 2]).unwrap();
        let res = full_tsvdm(&a, &TransformSet::dct(a.dims()).unwrap(), &ctx).unwrap();
        assert!(res.svd.s.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn fixed_rank_full_is_lossless_and_error_identity_holds() {
        let ctx = ctx();
        let a = sample(vec![5, 4, 3], 5);
        let ts = TransformSet::dct(a.dims()).unwrap();
        let c = tsvdm_fixed_rank(&a, &ts, 4, &ctx).unwrap();
        let back = reconstruct(&c, &ctx).unwrap();
        assert!(crate::tensor::relative_error(&a, &back).unwrap() < 1e-11);

        let full = full_tsvdm(&a, &ts, &ctx).unwrap();
        let expected: f64 = (0..3)
            .map(|i| (2..4).map(|j| full.svd.s.get(j, i).powi(2)).sum::<f64>())
            .sum();
        let c = tsvdm_fixed_rank_detailed(&a, &ts, 2, &ctx).unwrap();
        assert_eq!(c.compressed.ranks(), &[2, 2, 2]);
        let back = reconstruct(&c.compressed, &ctx).unwrap();
        let err: f64 = a.data().iter().zip(back.data()).map(|(x, y)| (x - y).powi(2)).sum();
        assert!((err - expected).abs() <= 1e-10 * expected);
        assert!((c.discarded_energy - expected).abs() <= 1e-10 * expected);
    }

    #[test]
    fn fixed_rank_range() {
        let ctx = ctx();
        let a = sample(vec![3, 2, 2], 1);
        let ts = TransformSet::identity(a.dims()).unwrap();
        assert!(tsvdm_fixed_rank(&a, &ts, 0, &ctx).is_err());
        assert!(tsvdm_fixed_rank(&a, &ts, 3, &ctx).is_err());
    }

    #[test]
    fn tolerance_fixture_end_to_end() {
        let ctx = ctx();
        let a = diag_slice(&[3.0, 2.0, 1.0]);
        let ts = TransformSet::identity(a.dims()).unwrap();
        for strategy in Tsvdm2Strategy::ALL {
            let c = tsvdm_tolerance_detailed(&a, &ts, 0.32, strategy, &ctx).unwrap();
            assert_eq!(c.compressed.ranks(), &[2]);
            let back = reconstruct(&c.compressed, &ctx).unwrap();
            let err = crate::tensor::relative_error(&a, &back).unwrap();
            assert!((err - 1.0 / 14f64.sqrt()).abs() < 1e-12, "{strategy}: {err}");
            assert!((c.relative_error() - 1.0 / 14f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn strategies_agree() {
        let ctx = ctx();
        let a = sample(vec![6, 5, 3, 2], 9);
        let ts = TransformSet::dct(a.dims()).unwrap();
        let results: Vec<_> = Tsvdm2Strategy::ALL
            .iter()
            .map(|&s| tsvdm_tolerance(&a, &ts, 0.3, s, &ctx).unwrap())
            .collect();
        let base = reconstruct(&results[0], &ctx).unwrap();
        for c in &results[1..] {
            assert_eq!(c.ranks(), results[0].ranks());
            let other = reconstruct(c, &ctx).unwrap();
            assert!(crate::tensor::relative_error(&base, &other).unwrap() < 1e-10);
        }
        let err = crate::tensor::relative_error(&a, &base).unwrap();
        assert!(err < 0.3);
    }

    #[test]
    fn strategy_memory_ordering() {
        let ctx = Context::new(1).unwrap();
        let a = sample(vec![16, 16, 32], 2);
        let ts = TransformSet::dct(a.dims()).unwrap();
        let mut peaks = Vec::new();
        for s in Tsvdm2Strategy::ALL {
            ctx.meter().reset();
            let c = tsvdm_tolerance(&a, &ts, 0.9, s, &ctx).unwrap();
            peaks.push(ctx.meter().peak());
            drop(c);
        }
        // truncate, compute, memory
        assert!(peaks[2] <= peaks[1] && peaks[1] <= peaks[0], "{peaks:?}");
    }

    #[test]
    fn compression_ratio_examples() {
        let ctx = ctx();
        let a = sample(vec![10, 10, 10], 4);
        let c = tsvdm_fixed_rank(&a, &TransformSet::dct(a.dims()).unwrap(), 10, &ctx).unwrap();
        assert_eq!(compression_ratio(&c), 0.5);

        let zero = VariableRankFactors::new(10, 10, vec![0; 10], vec![], vec![]).unwrap();
        let dims = vec![10, 10, 10];
        let c = CompressedTensor::new(dims.clone(), Method::Tolerance(0.5), TransformSet::dct(&dims).unwrap(), zero.clone()).unwrap();
        assert_eq!(compression_ratio(&c), f64::INFINITY);
        assert!(reconstruct(&c, &ctx).unwrap().data().iter().all(|&x| x == 0.0));

        let data = TransformSet::new(&dims, vec![Transform::custom(Matrix::identity(10)).unwrap()]).unwrap();
        let c = CompressedTensor::new(dims, Method::Tolerance(0.5), data, zero).unwrap();
        assert_eq!(compression_ratio(&c), 10.0);
    }

    #[test]
    fn fixed_rank_artifact_requires_uniform_ranks() {
        let dims = vec![2, 2, 2];
        let f = VariableRankFactors::new(2, 2, vec![1, 0], vec![0.0; 2], vec![0.0; 2]).unwrap();
        let ts = TransformSet::identity(&dims).unwrap();
        assert!(CompressedTensor::new(dims, Method::FixedRank(1), ts, f).is_err());
    }

    #[test]
    fn starm_product_with_identity_slices() {
        let ctx = ctx();
        let a = sample(vec![3, 4, 5], 8);
        let b = DenseTensor::from_fn(vec![4, 4, 5], |i| if i[0] == i[1] { 1.0 } else { 0.0 }).unwrap();
        let ts = TransformSet::identity(a.dims()).unwrap();
        let c = starm_product(&a, &b, &ts, &ctx).unwrap();
        assert!(crate::tensor::relative_error(&a, &c).unwrap() < 1e-13);
    }

    #[test]
    fn starm_product_shape_errors() {
        let ctx = ctx();
        let a = sample(vec![3, 4, 5], 8);
        let ts = TransformSet::identity(a.dims()).unwrap();
        assert!(starm_product(&a, &sample(vec![3, 2, 5], 1), &ts, &ctx).is_err());
        assert!(starm_product(&a, &sample(vec![4, 2, 6], 1), &ts, &ctx).is_err());
    }
}
