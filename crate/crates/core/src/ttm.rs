//! Mode-k tensor-times-matrix products for the trailing modes.
//!
//! In column-major layout a tensor with extents `n_0..n_{d-1}` is, for mode
//! `k`, a stack of `P_k = prod(n_{k+1..})` contiguous `M_k x n_k` blocks with
//! `M_k = prod(n_{..k})`. The product `A x_k M` right-multiplies every block
//! by `M^T`, writing `M_k x J` blocks. For the last mode `P_k == 1` and the
//! whole tensor is a single GEMM.

use std::fmt;
use std::str::FromStr;

use faer::linalg::matmul::matmul;
use faer::{Accum, MatMut, MatRef, Par};
use rayon::prelude::*;

use crate::exec::Context;
use crate::matrix::Matrix;
use crate::tensor::DenseTensor;
use crate::transform::{Transform, TransformKind, TransformSet};
use crate::{Error, Result};

/// How the `P_k` block products of a middle-mode TTM are scheduled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum TtmVariant {
    /// One strided batch dispatch: all blocks (split further by rows when the
    /// batch is small) are scheduled together on the pool.
    #[default]
    Batched,
    /// Sequential loop over blocks, each product internally threaded.
    Loop,
    /// Parallel loop over blocks, each product sequential.
    Parfor,
}

impl TtmVariant {
    pub const ALL: [TtmVariant; 3] = [TtmVariant::Batched, TtmVariant::Loop, TtmVariant::Parfor];

    pub fn name(self) -> &'static str {
        match self {
            TtmVariant::Batched => "batched",
            TtmVariant::Loop => "loop",
            TtmVariant::Parfor => "parfor",
        }
    }
}

impl fmt::Display for TtmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TtmVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batched" => Ok(TtmVariant::Batched),
            "loop" => Ok(TtmVariant::Loop),
            "parfor" => Ok(TtmVariant::Parfor),
            _ => Err(Error::InvalidParameter(format!("unknown TTM variant {s:?}"))),
        }
    }
}

/// Block geometry of one TTM.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TtmPlan {
    pub mode: usize,
    /// `M_k`: rows of every block.
    pub rows: usize,
    /// `n_k`: the contracted extent.
    pub inner: usize,
    /// `P_k`: number of blocks.
    pub batch: usize,
    /// `J`: extent of the mode after the product.
    pub out: usize,
    pub variant: TtmVariant,
}

impl TtmPlan {
    pub fn new(dims: &[usize], mode: usize, out: usize, variant: TtmVariant) -> Result<Self> {
        if mode >= dims.len() {
            return Err(Error::InvalidMode {
                mode,
                ndim: dims.len(),
            });
        }
        if mode < 2 {
            return Err(Error::ModeNotContractible(mode));
        }
        if out == 0 {
            return Err(Error::InvalidShape("TTM output extent must be >= 1".into()));
        }
        Ok(Self {
            mode,
            rows: dims[..mode].iter().product(),
            inner: dims[mode],
            batch: dims[mode + 1..].iter().product(),
            out,
            variant,
        })
    }

    pub fn is_last_mode(&self) -> bool {
        self.batch == 1
    }

    fn in_block(&self) -> usize {
        self.rows * self.inner
    }

    fn out_block(&self) -> usize {
        self.rows * self.out
    }
}

// Rows per task when the batched variant splits blocks.
const MIN_TASK_ROWS: usize = 32;

fn block_rows(plan: &TtmPlan, threads: usize) -> usize {
    if threads == 1 {
        return plan.rows;
    }
    let target_tasks = 4 * threads;
    let per_block = target_tasks.div_ceil(plan.batch);
    plan.rows.div_ceil(per_block).max(MIN_TASK_ROWS).min(plan.rows)
}

/// Core kernel: `out_b = in_b * rhs` for every block `b`, with `rhs` of shape
/// `n_k x J`.
fn apply(t: &DenseTensor, plan: &TtmPlan, rhs: MatRef<'_, f64>, ctx: &Context) -> Vec<f64> {
    debug_assert_eq!((rhs.nrows(), rhs.ncols()), (plan.inner, plan.out));
    let input = t.data();
    let mut out = vec![0.0; plan.out_block() * plan.batch];
    let (rows, inner, j) = (plan.rows, plan.inner, plan.out);

    ctx.install(|| match plan.variant {
        TtmVariant::Batched => {
            let step = block_rows(plan, ctx.threads());
            let mut tasks = Vec::with_capacity(plan.batch * rows.div_ceil(step));
            for (src, dst) in input
                .chunks_exact(plan.in_block())
                .zip(out.chunks_exact_mut(plan.out_block()))
            {
                let a = MatRef::from_column_major_slice(src, rows, inner);
                let mut c = MatMut::from_column_major_slice_mut(dst, rows, j);
                let mut start = 0;
                while start < rows {
                    let len = step.min(rows - start);
                    let (top, rest) = c.split_at_row_mut(len);
                    tasks.push((a.subrows(start, len), top));
                    c = rest;
                    start += len;
                }
            }
            tasks.into_par_iter().for_each(|(a, c)| {
                matmul(c, Accum::Replace, a, rhs, 1.0, Par::Seq);
            });
        }
        TtmVariant::Loop => {
            for (src, dst) in input
                .chunks_exact(plan.in_block())
                .zip(out.chunks_exact_mut(plan.out_block()))
            {
                let a = MatRef::from_column_major_slice(src, rows, inner);
                let c = MatMut::from_column_major_slice_mut(dst, rows, j);
                matmul(c, Accum::Replace, a, rhs, 1.0, ctx.par());
            }
        }
        TtmVariant::Parfor => {
            // at the last mode this is a single sequential product
            input
                .par_chunks_exact(plan.in_block())
                .zip(out.par_chunks_exact_mut(plan.out_block()))
                .for_each(|(src, dst)| {
                    let a = MatRef::from_column_major_slice(src, rows, inner);
                    let c = MatMut::from_column_major_slice_mut(dst, rows, j);
                    matmul(c, Accum::Replace, a, rhs, 1.0, Par::Seq);
                });
        }
    });
    out
}

fn output_dims(t: &DenseTensor, plan: &TtmPlan) -> Vec<usize> {
    let mut dims = t.dims().to_vec();
    dims[plan.mode] = plan.out;
    dims
}

/// `t x_mode m` for an arbitrary `J x n_mode` matrix.
pub fn ttm(
    t: &DenseTensor,
    mode: usize,
    m: &Matrix,
    variant: TtmVariant,
    ctx: &Context,
) -> Result<DenseTensor> {
    let plan = TtmPlan::new(t.dims(), mode, m.rows(), variant)?;
    if m.cols() != plan.inner {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} matrix cannot contract mode {mode} of extent {}",
            m.rows(),
            m.cols(),
            plan.inner
        )));
    }
    ctx.meter().charge_f64s(plan.out_block() * plan.batch).keep();
    let data = apply(t, &plan, m.faer().transpose(), ctx);
    DenseTensor::new(output_dims(t, &plan), data)
}

fn check_transform(t: &DenseTensor, mode: usize, m: &Transform) -> Result<TtmPlan> {
    let plan = TtmPlan::new(t.dims(), mode, m.size(), TtmVariant::default())?;
    if plan.inner != m.size() {
        return Err(Error::DimensionMismatch(format!(
            "transform of size {} cannot contract mode {mode} of extent {}",
            m.size(),
            plan.inner
        )));
    }
    Ok(plan)
}

/// Forward transform along one mode, `t x_mode M`.
pub fn ttm_transform(
    t: &DenseTensor,
    mode: usize,
    m: &Transform,
    variant: TtmVariant,
    ctx: &Context,
) -> Result<DenseTensor> {
    let plan = TtmPlan {
        variant,
        ..check_transform(t, mode, m)?
    };
    ctx.meter().charge_f64s(t.len()).keep();
    if m.kind() == TransformKind::Identity {
        return Ok(t.clone());
    }
    let data = apply(t, &plan, m.matrix().faer().transpose(), ctx);
    DenseTensor::new(t.dims().to_vec(), data)
}

/// Inverse transform along one mode, `t x_mode M^T`.
pub fn ttm_inverse(
    t: &DenseTensor,
    mode: usize,
    m: &Transform,
    variant: TtmVariant,
    ctx: &Context,
) -> Result<DenseTensor> {
    let plan = TtmPlan {
        variant,
        ..check_transform(t, mode, m)?
    };
    ctx.meter().charge_f64s(t.len()).keep();
    if m.kind() == TransformKind::Identity {
        return Ok(t.clone());
    }
    let data = apply(t, &plan, m.matrix().faer(), ctx);
    DenseTensor::new(t.dims().to_vec(), data)
}

/// Apply every transform of `ts`, modes in ascending order.
pub fn to_transform_domain(
    t: &DenseTensor,
    ts: &TransformSet,
    variant: TtmVariant,
    ctx: &Context,
) -> Result<DenseTensor> {
    ts.check_dims(t.dims())?;
    let mut cur: Option<DenseTensor> = None;
    for (k, m) in ts.iter().enumerate() {
        let src = cur.as_ref().unwrap_or(t);
        let next = ttm_transform(src, k + 2, m, variant, ctx)?;
        if let Some(prev) = cur.replace(next) {
            release(ctx, &prev);
        }
    }
    match cur {
        Some(c) => Ok(c),
        None => {
            ctx.meter().charge_f64s(t.len()).keep();
            Ok(t.clone())
        }
    }
}

/// Undo [`to_transform_domain`], modes in descending order.
pub fn from_transform_domain(
    t: &DenseTensor,
    ts: &TransformSet,
    variant: TtmVariant,
    ctx: &Context,
) -> Result<DenseTensor> {
    ts.check_dims(t.dims())?;
    let mut cur: Option<DenseTensor> = None;
    for (k, m) in ts.iter().enumerate().rev() {
        let src = cur.as_ref().unwrap_or(t);
        let next = ttm_inverse(src, k + 2, m, variant, ctx)?;
        if let Some(prev) = cur.replace(next) {
            release(ctx, &prev);
        }
    }
    match cur {
        Some(c) => Ok(c),
        None => {
            ctx.meter().charge_f64s(t.len()).keep();
            Ok(t.clone())
        }
    }
}

/// Uncharge an intermediate tensor that is about to be dropped.
pub(crate) fn release(ctx: &Context, t: &DenseTensor) {
    drop(ctx.meter().adopt(t.len() * std::mem::size_of::<f64>()));
}
