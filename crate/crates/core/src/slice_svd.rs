//! Batched thin SVDs over the frontal slices of a transform-domain tensor.
//!
//! Two threading strategies are offered. `SlicesParallel` hands whole slices
//! to pool threads, each running a sequential SVD; `SvdParallel` walks the
//! slices in order and threads inside every SVD. Each slice is copied into a
//! per-thread, alignment-stable scratch matrix before factorization so that
//! results do not depend on which thread handled a slice.

use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::svd::{svd, svd_scratch, ComputeSvdVectors};
use faer::{Col, Mat, MatMut, MatRef, Par};
use rayon::prelude::*;

use crate::exec::{Context, Lease, MemoryMeter};
use crate::matrix::{Matrix, MatrixRef};
use crate::tensor::DenseTensor;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum SvdStrategy {
    /// Parallel loop over slices, sequential SVD per slice.
    #[default]
    SlicesParallel,
    /// Sequential loop over slices, threaded SVD per slice.
    SvdParallel,
}

impl SvdStrategy {
    pub const ALL: [SvdStrategy; 2] = [SvdStrategy::SlicesParallel, SvdStrategy::SvdParallel];

    pub fn name(self) -> &'static str {
        match self {
            SvdStrategy::SlicesParallel => "slices",
            SvdStrategy::SvdParallel => "svd",
        }
    }
}

impl fmt::Display for SvdStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SvdStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "slices" | "slices-parallel" => Ok(SvdStrategy::SlicesParallel),
            "svd" | "svd-parallel" => Ok(SvdStrategy::SvdParallel),
            _ => Err(Error::InvalidParameter(format!("unknown SVD strategy {s:?}"))),
        }
    }
}

/// Full thin SVD of every frontal slice.
///
/// `u` has dims `[m, r, n_2, ..]`, `v` has dims `[p, r, n_2, ..]` and `s` is
/// `r x N` with `r = min(m, p)`; column `i` of `s` holds the singular values of
/// slice `i` in non-increasing order.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceSvdSet {
    pub u: DenseTensor,
    pub s: Matrix,
    pub v: DenseTensor,
}

impl SliceSvdSet {
    pub fn rank(&self) -> usize {
        self.s.rows()
    }

    pub fn num_slices(&self) -> usize {
        self.s.cols()
    }

    /// `U_i diag(S_i) V_i^T`.
    pub fn reconstruct_slice(&self, i: usize) -> Result<Matrix> {
        let u = self.u.slice(i)?;
        let v = self.v.slice(i)?;
        let r = self.rank();
        Ok(Matrix::from_fn(u.rows(), v.rows(), |a, b| {
            (0..r).map(|j| u.get(a, j) * self.s.get(j, i) * v.get(b, j)).sum()
        }))
    }
}

/// Variable-rank packed factors: for slice `i`, an `m x rho_i` block of left
/// singular vectors and a `rho_i x p` block `G_i = S_i V_i^T`, both
/// column-major and concatenated in slice order with no padding.
#[derive(Clone, Debug, PartialEq)]
pub struct VariableRankFactors {
    rows: usize,
    cols: usize,
    ranks: Vec<usize>,
    u: Vec<f64>,
    g: Vec<f64>,
}

impl VariableRankFactors {
    pub fn new(rows: usize, cols: usize, ranks: Vec<usize>, u: Vec<f64>, g: Vec<f64>) -> Result<Self> {
        let max_rank = rows.min(cols);
        if let Some((i, &r)) = ranks.iter().enumerate().find(|(_, &r)| r > max_rank) {
            return Err(Error::InvalidRanks(format!(
                "slice {i} has rank {r} > min(m, p) = {max_rank}"
            )));
        }
        let total: usize = ranks.iter().sum();
        if u.len() != total * rows || g.len() != total * cols {
            return Err(Error::InvalidRanks(format!(
                "ranks sum to {total}, expected {} U and {} G entries, got {} and {}",
                total * rows,
                total * cols,
                u.len(),
                g.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            ranks,
            u,
            g,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn u_data(&self) -> &[f64] {
        &self.u
    }

    pub fn g_data(&self) -> &[f64] {
        &self.g
    }

    /// Stored entries, `sum rho_i (m + p)`.
    pub fn stored_entries(&self) -> usize {
        self.u.len() + self.g.len()
    }

    fn offset(&self, i: usize) -> usize {
        self.ranks[..i].iter().sum()
    }

    pub fn u_block(&self, i: usize) -> MatrixRef<'_> {
        let start = self.offset(i) * self.rows;
        let len = self.ranks[i] * self.rows;
        MatrixRef::new(self.rows, self.ranks[i], &self.u[start..start + len])
    }

    pub fn g_block(&self, i: usize) -> MatrixRef<'_> {
        let start = self.offset(i) * self.cols;
        let len = self.ranks[i] * self.cols;
        MatrixRef::new(self.ranks[i], self.cols, &self.g[start..start + len])
    }

    /// Facewise products `U_i G_i` laid out as consecutive `m x p` slices.
    pub fn expand(&self, ctx: &Context) -> Vec<f64> {
        let (m, p) = (self.rows, self.cols);
        ctx.meter().charge_f64s(m * p * self.ranks.len()).keep();
        let mut out = vec![0.0; m * p * self.ranks.len()];
        let mut blocks = Vec::with_capacity(self.ranks.len());
        let (mut uo, mut go) = (0, 0);
        for &r in &self.ranks {
            blocks.push((uo, go, r));
            uo += r * m;
            go += r * p;
        }
        ctx.install(|| {
            out.par_chunks_exact_mut(m * p)
                .zip(blocks.par_iter())
                .for_each(|(dst, &(uo, go, r))| {
                    if r == 0 {
                        return;
                    }
                    let u = MatRef::from_column_major_slice(&self.u[uo..uo + r * m], m, r);
                    let g = MatRef::from_column_major_slice(&self.g[go..go + r * p], r, p);
                    let c = MatMut::from_column_major_slice_mut(dst, m, p);
                    faer::linalg::matmul::matmul(c, faer::Accum::Replace, u, g, 1.0, Par::Seq);
                });
        });
        out
    }
}

/// Output of [`svd_truncated_slices`].
#[derive(Clone, Debug)]
pub struct Truncation {
    pub factors: VariableRankFactors,
    /// `sum_i sum_{j >= rho_i} sigma_{j,i}^2`: squared Frobenius error of the
    /// truncation in the transform domain.
    pub discarded_energy: f64,
}

/// Slice copies plus singular values kept from the first pass of the
/// compute-efficient strategy, consumed by [`svd_truncated_from_cache`].
pub struct SliceCache {
    rows: usize,
    cols: usize,
    slices: Mat<f64>,
    values: Matrix,
}

impl SliceCache {
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    fn bytes(&self) -> usize {
        mat_bytes(&self.slices) + self.values.data().len() * 8
    }
}

fn mat_bytes(m: &Mat<f64>) -> usize {
    (m.col_stride().unsigned_abs() * m.ncols()).max(m.nrows()) * std::mem::size_of::<f64>()
}

/// Per-thread factorization scratch.
struct Workspace {
    a: Mat<f64>,
    s: Col<f64>,
    u: Mat<f64>,
    v: Mat<f64>,
    stack: MemBuffer,
    vectors: bool,
    par: Par,
}

impl Workspace {
    fn new(m: usize, p: usize, vectors: bool, copy_input: bool, par: Par) -> Self {
        let r = m.min(p);
        let mode = if vectors {
            ComputeSvdVectors::Thin
        } else {
            ComputeSvdVectors::No
        };
        let req = svd_scratch::<f64>(m, p, mode, mode, par, Default::default());
        let (ur, vr) = if vectors { (m, p) } else { (0, 0) };
        let (am, ap) = if copy_input { (m, p) } else { (0, 0) };
        Self {
            a: Mat::zeros(am, ap),
            s: Col::zeros(r),
            u: Mat::zeros(ur, if vectors { r } else { 0 }),
            v: Mat::zeros(vr, if vectors { r } else { 0 }),
            stack: MemBuffer::new(req),
            vectors,
            par,
        }
    }

    fn bytes(&self) -> usize {
        mat_bytes(&self.a)
            + mat_bytes(&self.u)
            + mat_bytes(&self.v)
            + self.s.nrows() * 8
            + self.stack.len()
    }

    fn load(&mut self, slice: &[f64]) {
        let (m, p) = (self.a.nrows(), self.a.ncols());
        self.a
            .as_mut()
            .copy_from(MatRef::from_column_major_slice(slice, m, p));
    }

    /// Factor the loaded slice copy.
    fn factor_loaded(&mut self, slice: usize) -> Result<()> {
        let a = std::mem::replace(&mut self.a, Mat::zeros(0, 0));
        let res = self.factor(a.as_ref(), slice);
        self.a = a;
        res
    }

    /// Factor `a`; all-zero slices get zero values and identity bases.
    fn factor(&mut self, a: MatRef<'_, f64>, slice: usize) -> Result<()> {
        let zero = (0..a.ncols()).all(|j| a.col(j).iter().all(|&x| x == 0.0));
        if zero {
            self.s.fill(0.0);
            if self.vectors {
                self.u.fill(0.0);
                self.v.fill(0.0);
                for j in 0..self.s.nrows() {
                    self.u[(j, j)] = 1.0;
                    self.v[(j, j)] = 1.0;
                }
            }
            return Ok(());
        }
        let (u, v) = if self.vectors {
            (Some(self.u.as_mut()), Some(self.v.as_mut()))
        } else {
            (None, None)
        };
        svd(
            a,
            self.s.as_mut().as_diagonal_mut(),
            u,
            v,
            self.par,
            MemStack::new(&mut self.stack),
            Default::default(),
        )
        .map_err(|_| Error::SvdNoConvergence { slice })
    }
}

/// Lazily created scratch, one per pool thread.
struct WorkspacePool<'m> {
    slots: Vec<Mutex<Option<(Workspace, Lease<'m>)>>>,
    meter: &'m MemoryMeter,
    rows: usize,
    cols: usize,
    vectors: bool,
    copy_input: bool,
    par: Par,
}

impl<'m> WorkspacePool<'m> {
    fn new(threads: usize, rows: usize, cols: usize, vectors: bool, copy_input: bool, par: Par, meter: &'m MemoryMeter) -> Self {
        Self {
            slots: (0..threads).map(|_| Mutex::new(None)).collect(),
            meter,
            rows,
            cols,
            vectors,
            copy_input,
            par,
        }
    }

    fn with<R>(&self, f: impl FnOnce(&mut Workspace) -> R) -> R {
        let idx = rayon::current_thread_index().unwrap_or(0) % self.slots.len();
        let mut slot = self.slots[idx].lock().unwrap_or_else(|e| e.into_inner());
        let (ws, _) = slot.get_or_insert_with(|| {
            let ws = Workspace::new(self.rows, self.cols, self.vectors, self.copy_input, self.par);
            let lease = self.meter.charge(ws.bytes());
            (ws, lease)
        });
        f(ws)
    }
}

fn check_input(ahat: &DenseTensor) -> Result<()> {
    if ahat.ndim() < 3 {
        return Err(Error::InvalidShape(format!(
            "slice-wise SVD needs a tensor with at least 3 modes, got dims {:?}",
            ahat.dims()
        )));
    }
    let len = ahat.slice_len();
    if let Some(slice) = ahat
        .data()
        .chunks_exact(len)
        .position(|s| s.iter().any(|x| !x.is_finite()))
    {
        return Err(Error::NonFinite { slice });
    }
    Ok(())
}

fn pool_width(strategy: SvdStrategy, ctx: &Context) -> (usize, Par) {
    match strategy {
        SvdStrategy::SlicesParallel => (ctx.threads(), Par::Seq),
        SvdStrategy::SvdParallel => (1, ctx.par()),
    }
}

/// Run `body(slice_index, item, workspace)` over every slice according to
/// the strategy.
fn for_each_slice<I, F>(
    items: Vec<I>,
    strategy: SvdStrategy,
    ctx: &Context,
    pool: &WorkspacePool<'_>,
    body: F,
) -> Result<()>
where
    I: Send,
    F: Fn(usize, I, &mut Workspace) -> Result<()> + Sync,
{
    ctx.install(|| match strategy {
        SvdStrategy::SlicesParallel => items
            .into_par_iter()
            .enumerate()
            .try_for_each(|(i, item)| pool.with(|ws| body(i, item, ws))),
        SvdStrategy::SvdParallel => items
            .into_iter()
            .enumerate()
            .try_for_each(|(i, item)| pool.with(|ws| body(i, item, ws))),
    })
}

/// Thin SVD of every frontal slice of `ahat`.
pub fn svd_all_slices(ahat: &DenseTensor, strategy: SvdStrategy, ctx: &Context) -> Result<SliceSvdSet> {
    check_input(ahat)?;
    let (m, p, n) = (ahat.slice_rows(), ahat.slice_cols(), ahat.num_slices());
    let r = m.min(p);
    let meter = ctx.meter();
    meter.charge_f64s(n * r * (m + p + 1)).keep();
    let mut u = vec![0.0; m * r * n];
    let mut v = vec![0.0; p * r * n];
    let mut s = vec![0.0; r * n];

    let (width, par) = pool_width(strategy, ctx);
    let pool = WorkspacePool::new(width, m, p, true, true, par, meter);
    let items: Vec<_> = ahat
        .data()
        .chunks_exact(m * p)
        .zip(u.chunks_exact_mut(m * r))
        .zip(v.chunks_exact_mut(p * r))
        .zip(s.chunks_exact_mut(r))
        .collect();
    for_each_slice(items, strategy, ctx, &pool, |i, (((src, ud), vd), sd), ws| {
        ws.load(src);
        ws.factor_loaded(i)?;
        MatMut::from_column_major_slice_mut(ud, m, r).copy_from(ws.u.as_ref());
        MatMut::from_column_major_slice_mut(vd, p, r).copy_from(ws.v.as_ref());
        for (d, x) in sd.iter_mut().zip(ws.s.iter()) {
            *d = *x;
        }
        Ok(())
    })?;
    drop(pool);

    let mut udims = vec![m, r];
    udims.extend_from_slice(ahat.trailing_dims());
    let mut vdims = vec![p, r];
    vdims.extend_from_slice(ahat.trailing_dims());
    Ok(SliceSvdSet {
        u: DenseTensor::new(udims, u)?,
        s: Matrix::from_col_major(r, n, s)?,
        v: DenseTensor::new(vdims, v)?,
    })
}

/// Singular values of every frontal slice (`r x N`), no singular vectors.
pub fn svd_values_only(ahat: &DenseTensor, strategy: SvdStrategy, ctx: &Context) -> Result<Matrix> {
    check_input(ahat)?;
    let (m, p, n) = (ahat.slice_rows(), ahat.slice_cols(), ahat.num_slices());
    let r = m.min(p);
    let meter = ctx.meter();
    meter.charge_f64s(r * n).keep();
    let mut s = vec![0.0; r * n];

    let (width, par) = pool_width(strategy, ctx);
    let pool = WorkspacePool::new(width, m, p, false, true, par, meter);
    let items: Vec<_> = ahat
        .data()
        .chunks_exact(m * p)
        .zip(s.chunks_exact_mut(r))
        .collect();
    for_each_slice(items, strategy, ctx, &pool, |i, (src, sd), ws| {
        ws.load(src);
        ws.factor_loaded(i)?;
        for (d, x) in sd.iter_mut().zip(ws.s.iter()) {
            *d = *x;
        }
        Ok(())
    })?;
    Matrix::from_col_major(r, n, s)
}

fn check_ranks(ranks: &[usize], n: usize, max_rank: usize) -> Result<()> {
    if ranks.len() != n {
        return Err(Error::InvalidRanks(format!(
            "{} ranks for {n} slices",
            ranks.len()
        )));
    }
    if let Some((i, &r)) = ranks.iter().enumerate().find(|(_, &r)| r > max_rank) {
        return Err(Error::InvalidRanks(format!(
            "slice {i} has rank {r} > min(m, p) = {max_rank}"
        )));
    }
    Ok(())
}

/// Per-slice output blocks of the packed factor buffers.
fn split_blocks<'a>(
    mut u: &'a mut [f64],
    mut g: &'a mut [f64],
    ranks: &[usize],
    m: usize,
    p: usize,
) -> Vec<(&'a mut [f64], &'a mut [f64])> {
    let mut out = Vec::with_capacity(ranks.len());
    for &r in ranks {
        let (ub, urest) = std::mem::take(&mut u).split_at_mut(r * m);
        let (gb, grest) = std::mem::take(&mut g).split_at_mut(r * p);
        out.push((ub, gb));
        u = urest;
        g = grest;
    }
    out
}

/// Write the leading `rank` triplets of a factored workspace into packed
/// blocks and return the discarded energy of the slice.
fn pack_leading(ws: &Workspace, rank: usize, ud: &mut [f64], gd: &mut [f64], m: usize, p: usize) -> f64 {
    MatMut::from_column_major_slice_mut(ud, m, rank).copy_from(ws.u.as_ref().subcols(0, rank));
    let mut g = MatMut::from_column_major_slice_mut(gd, rank, p);
    for c in 0..p {
        for j in 0..rank {
            g[(j, c)] = ws.s[j] * ws.v[(c, j)];
        }
    }
    ws.s.iter().skip(rank).map(|x| x * x).sum()
}

/// Leading `ranks[i]` singular triplets of every slice in packed form.
///
/// Slices with rank 0 are not factored. The triplets are taken from a full
/// thin SVD, which is cheaper in practice than a bisection-based partial SVD.
pub fn svd_truncated_slices(
    ahat: &DenseTensor,
    ranks: &[usize],
    strategy: SvdStrategy,
    ctx: &Context,
) -> Result<Truncation> {
    check_input(ahat)?;
    let (m, p, n) = (ahat.slice_rows(), ahat.slice_cols(), ahat.num_slices());
    check_ranks(ranks, n, m.min(p))?;
    let total: usize = ranks.iter().sum();
    let meter = ctx.meter();
    meter.charge_f64s(total * (m + p)).keep();
    let mut u = vec![0.0; total * m];
    let mut g = vec![0.0; total * p];
    let mut discarded = vec![0.0; n];

    let (width, par) = pool_width(strategy, ctx);
    let pool = WorkspacePool::new(width, m, p, true, true, par, meter);
    let items: Vec<_> = ahat
        .data()
        .chunks_exact(m * p)
        .zip(ranks.iter().copied())
        .zip(split_blocks(&mut u, &mut g, ranks, m, p))
        .zip(discarded.iter_mut())
        .collect();
    for_each_slice(items, strategy, ctx, &pool, |i, (((src, rank), (ud, gd)), dis), ws| {
        if rank == 0 {
            *dis = src.iter().map(|x| x * x).sum();
            return Ok(());
        }
        ws.load(src);
        ws.factor_loaded(i)?;
        *dis = pack_leading(ws, rank, ud, gd, m, p);
        Ok(())
    })?;
    drop(pool);
    Ok(Truncation {
        factors: VariableRankFactors::new(m, p, ranks.to_vec(), u, g)?,
        discarded_energy: discarded.iter().sum(),
    })
}

/// First pass of the compute-efficient strategy: copy every slice into a
/// persistent cache and compute its singular values from the cached copy.
pub fn svd_values_cached(ahat: &DenseTensor, strategy: SvdStrategy, ctx: &Context) -> Result<SliceCache> {
    check_input(ahat)?;
    let (m, p, n) = (ahat.slice_rows(), ahat.slice_cols(), ahat.num_slices());
    let r = m.min(p);
    let meter = ctx.meter();
    let mut cache = SliceCache {
        rows: m,
        cols: p,
        slices: Mat::zeros(m, p * n),
        values: Matrix::zeros(r, n),
    };
    meter.charge(cache.bytes()).keep();

    let (width, par) = pool_width(strategy, ctx);
    let pool = WorkspacePool::new(width, m, p, false, false, par, meter);
    let mut views = Vec::with_capacity(n);
    let mut rest = cache.slices.as_mut();
    let values = cache.values.data_mut();
    for _ in 0..n {
        let (head, tail) = rest.split_at_col_mut(p);
        views.push(head);
        rest = tail;
    }
    let items: Vec<_> = ahat
        .data()
        .chunks_exact(m * p)
        .zip(views)
        .zip(values.chunks_exact_mut(r))
        .collect();
    for_each_slice(items, strategy, ctx, &pool, |i, ((src, mut view), sd), ws| {
        view.copy_from(MatRef::from_column_major_slice(src, m, p));
        ws.factor(view.as_ref(), i)?;
        for (d, x) in sd.iter_mut().zip(ws.s.iter()) {
            *d = *x;
        }
        Ok(())
    })?;
    drop(pool);
    Ok(cache)
}

/// Second pass of the compute-efficient strategy: factor the cached slice
/// copies and keep the leading `ranks[i]` triplets. Releases the cache.
pub fn svd_truncated_from_cache(
    cache: SliceCache,
    ranks: &[usize],
    strategy: SvdStrategy,
    ctx: &Context,
) -> Result<Truncation> {
    let (m, p) = (cache.rows, cache.cols);
    let n = cache.values.cols();
    check_ranks(ranks, n, m.min(p))?;
    let total: usize = ranks.iter().sum();
    let meter = ctx.meter();
    let cache_lease = meter.adopt(cache.bytes());
    meter.charge_f64s(total * (m + p)).keep();
    let mut u = vec![0.0; total * m];
    let mut g = vec![0.0; total * p];
    let mut discarded = vec![0.0; n];

    let (width, par) = pool_width(strategy, ctx);
    let pool = WorkspacePool::new(width, m, p, true, false, par, meter);
    let items: Vec<_> = (0..n)
        .map(|i| cache.slices.as_ref().subcols(i * p, p))
        .zip(ranks.iter().copied())
        .zip(split_blocks(&mut u, &mut g, ranks, m, p))
        .zip(discarded.iter_mut())
        .collect();
    let values = &cache.values;
    for_each_slice(items, strategy, ctx, &pool, |i, (((view, rank), (ud, gd)), dis), ws| {
        if rank == 0 {
            *dis = values.col(i).iter().map(|x| x * x).sum();
            return Ok(());
        }
        ws.factor(view, i)?;
        *dis = pack_leading(ws, rank, ud, gd, m, p);
        Ok(())
    })?;
    drop(pool);
    drop(cache);
    drop(cache_lease);
    Ok(Truncation {
        factors: VariableRankFactors::new(m, p, ranks.to_vec(), u, g)?,
        discarded_energy: discarded.iter().sum(),
    })
}
