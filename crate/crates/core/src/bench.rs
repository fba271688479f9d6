//! Timing harness for the TTM variants, the slicewise SVD strategies and the
//! staged t-SVDM decompositions. Every timed run yields one [`BenchRow`].

use std::time::{Duration, Instant};

use crate::codec::BenchRow;
use crate::exec::Context;
use crate::slice_svd::{svd_all_slices, SvdStrategy};
use crate::tensor::DenseTensor;
use crate::transform::{Transform, TransformSet};
use crate::tsvdm::{tsvdm_fixed_rank_detailed, tsvdm_tolerance_detailed, StageTimings, Tsvdm2Strategy};
use crate::ttm::{release, ttm_transform, TtmVariant};
use crate::Result;

/// Median of a non-empty sample; NaN for an empty one.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Median seconds per `(kernel, variant, mode, threads)` group, in first-seen order.
pub fn summarize(rows: &[BenchRow]) -> Vec<(BenchRow, f64)> {
    let mut groups: Vec<(BenchRow, Vec<f64>)> = Vec::new();
    for row in rows {
        let key = |r: &BenchRow| (r.kernel.clone(), r.variant.clone(), r.mode, r.threads);
        match groups.iter_mut().find(|(g, _)| key(g) == key(row)) {
            Some((_, secs)) => secs.push(row.seconds),
            None => groups.push((row.clone(), vec![row.seconds])),
        }
    }
    groups.into_iter().map(|(row, secs)| (row, median(&secs))).collect()
}

fn row(kernel: &str, variant: &str, mode: Option<usize>, threads: usize, trial: usize, elapsed: Duration, peak: usize) -> BenchRow {
    BenchRow {
        kernel: kernel.to_string(),
        variant: variant.to_string(),
        mode,
        threads,
        trial,
        seconds: elapsed.as_secs_f64(),
        peak_bytes: peak,
    }
}

/// Forward DCT along each zero-based `mode`, for every variant and thread count.
pub fn bench_ttm(
    t: &DenseTensor,
    variants: &[TtmVariant],
    modes: &[usize],
    threads: &[usize],
    trials: usize,
) -> Result<Vec<BenchRow>> {
    let transforms = modes
        .iter()
        .map(|&k| match t.dims().get(k) {
            Some(&n) => Transform::dct(n),
            None => Err(crate::Error::InvalidMode { mode: k, ndim: t.ndim() }),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &nt in threads {
        let ctx = Context::new(nt)?;
        for &variant in variants {
            for (&mode, m) in modes.iter().zip(&transforms) {
                for trial in 0..trials {
                    ctx.meter().reset();
                    let clock = Instant::now();
                    let out = ttm_transform(t, mode, m, variant, &ctx)?;
                    let elapsed = clock.elapsed();
                    release(&ctx, &out);
                    rows.push(row("ttm", variant.name(), Some(mode + 1), nt, trial, elapsed, ctx.meter().peak()));
                }
            }
        }
    }
    Ok(rows)
}

/// Full slicewise SVD of `t` for every strategy and thread count.
pub fn bench_svd(t: &DenseTensor, strategies: &[SvdStrategy], threads: &[usize], trials: usize) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &nt in threads {
        let ctx = Context::new(nt)?;
        for &strategy in strategies {
            for trial in 0..trials {
                ctx.meter().reset();
                let clock = Instant::now();
                let out = svd_all_slices(t, strategy, &ctx)?;
                let elapsed = clock.elapsed();
                drop(out);
                rows.push(row("svd", strategy.name(), None, nt, trial, elapsed, ctx.meter().peak()));
            }
        }
    }
    Ok(rows)
}

fn stage_rows(prefix: &str, variant: &str, threads: usize, trial: usize, t: &StageTimings, peak: usize) -> Vec<BenchRow> {
    [
        ("transform", t.transform),
        ("stage1-svd", t.stage1_svd),
        ("threshold", t.threshold),
        ("stage2-svd", t.stage2_svd),
        ("pack", t.pack),
        ("total", t.total()),
    ]
    .into_iter()
    .map(|(stage, d)| row(&format!("{prefix}-{stage}"), variant, None, threads, trial, d, peak))
    .collect()
}

/// Per-stage rows of t-SVDM-II, plus the rank profile of the last run.
pub struct Tsvdm2Bench {
    pub rows: Vec<BenchRow>,
    pub ranks: Vec<usize>,
}

pub fn bench_tsvdm2(
    t: &DenseTensor,
    ts: &TransformSet,
    epsilon: f64,
    strategies: &[Tsvdm2Strategy],
    threads: &[usize],
    trials: usize,
) -> Result<Tsvdm2Bench> {
    let mut rows = Vec::new();
    let mut ranks = Vec::new();
    for &nt in threads {
        let ctx = Context::new(nt)?;
        for &strategy in strategies {
            for trial in 0..trials {
                ctx.meter().reset();
                let c = tsvdm_tolerance_detailed(t, ts, epsilon, strategy, &ctx)?;
                rows.extend(stage_rows("tsvdm2", strategy.name(), nt, trial, &c.timings, ctx.meter().peak()));
                ranks = c.compressed.ranks().to_vec();
            }
        }
    }
    Ok(Tsvdm2Bench { rows, ranks })
}

pub fn bench_tsvdm1(t: &DenseTensor, ts: &TransformSet, rank: usize, threads: &[usize], trials: usize) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &nt in threads {
        let ctx = Context::new(nt)?;
        for trial in 0..trials {
            ctx.meter().reset();
            let c = tsvdm_fixed_rank_detailed(t, ts, rank, &ctx)?;
            rows.extend(stage_rows("tsvdm1", &format!("rank{rank}"), nt, trial, &c.timings, ctx.meter().peak()));
        }
    }
    Ok(rows)
}
