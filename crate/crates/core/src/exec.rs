//! Execution context: thread pool, default kernel strategies and the memory
//! accounting hook.
//!
//! Every parallel entry point takes a [`Context`]. The context owns a rayon
//! pool sized to the requested thread count, so concurrent callers with
//! different thread counts do not interfere with each other.

use std::sync::atomic::{AtomicUsize, Ordering};

use faer::Par;
use rayon::{ThreadPool, ThreadPoolBuilder};

use crate::slice_svd::SvdStrategy;
use crate::ttm::TtmVariant;
use crate::{Error, Result};

/// Tracks live and peak bytes of the buffers allocated by library kernels.
///
/// Kernels charge every buffer they allocate (outputs, factor tensors, caches,
/// per-worker scratch including the SVD backend workspace). The input tensor
/// is never charged. Call [`MemoryMeter::reset`] before an operation and read
/// [`MemoryMeter::peak`] afterwards.
#[derive(Debug, Default)]
pub struct MemoryMeter {
    live: AtomicUsize,
    peak: AtomicUsize,
}

impl MemoryMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&self) {
        self.live.store(0, Ordering::SeqCst);
        self.peak.store(0, Ordering::SeqCst);
    }

    pub fn live(&self) -> usize {
        self.live.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    /// Charge `bytes`; the returned lease releases them when dropped.
    pub fn charge(&self, bytes: usize) -> Lease<'_> {
        let now = self.live.fetch_add(bytes, Ordering::SeqCst) + bytes;
        self.peak.fetch_max(now, Ordering::SeqCst);
        Lease { meter: self, bytes }
    }

    pub fn charge_f64s(&self, count: usize) -> Lease<'_> {
        self.charge(count * std::mem::size_of::<f64>())
    }

    /// Take back ownership of bytes previously left charged by
    /// [`Lease::keep`]; dropping the returned lease releases them.
    pub fn adopt(&self, bytes: usize) -> Lease<'_> {
        Lease { meter: self, bytes }
    }
}

/// A charged allocation. Dropping it releases the bytes; [`Lease::keep`]
/// leaves them charged (used for buffers that outlive the operation).
#[must_use]
#[derive(Debug)]
pub struct Lease<'a> {
    meter: &'a MemoryMeter,
    bytes: usize,
}

impl Lease<'_> {
    pub fn bytes(&self) -> usize {
        self.bytes
    }

    pub fn keep(self) {
        std::mem::forget(self);
    }
}

impl Drop for Lease<'_> {
    fn drop(&mut self) {
        // saturating: a reset while leases are outstanding must not wrap
        let _ = self
            .meter
            .live
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |v| {
                Some(v.saturating_sub(self.bytes))
            });
    }
}

pub struct Context {
    threads: usize,
    pool: ThreadPool,
    meter: MemoryMeter,
    ttm_variant: TtmVariant,
    svd_strategy: SvdStrategy,
}

impl std::fmt::Debug for Context {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Context")
            .field("threads", &self.threads)
            .field("ttm_variant", &self.ttm_variant)
            .field("svd_strategy", &self.svd_strategy)
            .finish()
    }
}

impl Context {
    pub fn new(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Err(Error::InvalidParameter("thread count must be >= 1".into()));
        }
        let pool = ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("starm-{i}"))
            .build()
            .map_err(|e| Error::ThreadPool(e.to_string()))?;
        Ok(Self {
            threads,
            pool,
            meter: MemoryMeter::new(),
            ttm_variant: TtmVariant::default(),
            svd_strategy: SvdStrategy::default(),
        })
    }

    pub fn with_ttm_variant(mut self, variant: TtmVariant) -> Self {
        self.ttm_variant = variant;
        self
    }

    pub fn with_svd_strategy(mut self, strategy: SvdStrategy) -> Self {
        self.svd_strategy = strategy;
        self
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn ttm_variant(&self) -> TtmVariant {
        self.ttm_variant
    }

    pub fn svd_strategy(&self) -> SvdStrategy {
        self.svd_strategy
    }

    pub fn meter(&self) -> &MemoryMeter {
        &self.meter
    }

    /// Run `op` inside this context's pool.
    pub fn install<R: Send>(&self, op: impl FnOnce() -> R + Send) -> R {
        self.pool.install(op)
    }

    /// Parallelism handed to the linear algebra backend for a single kernel
    /// that should use every thread of the context.
    pub(crate) fn par(&self) -> Par {
        if self.threads == 1 {
            Par::Seq
        } else {
            Par::rayon(self.threads)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meter_tracks_peak_across_leases() {
        let meter = MemoryMeter::new();
        let a = meter.charge(100);
        {
            let _b = meter.charge(50);
            assert_eq!(meter.live(), 150);
        }
        assert_eq!(meter.live(), 100);
        assert_eq!(meter.peak(), 150);
        a.keep();
        assert_eq!(meter.live(), 100);
        meter.reset();
        assert_eq!(meter.peak(), 0);
    }

    #[test]
    fn zero_threads_rejected() {
        assert!(matches!(Context::new(0), Err(Error::InvalidParameter(_))));
    }
}
