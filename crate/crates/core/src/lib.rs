//! Shared-memory parallel star-M tensor SVD.
//!
//! Dense column-major tensors are mapped into a transform domain by
//! orthonormal matrices along every mode after the second, factored slice by
//! slice, and truncated either to a uniform rank or to a global relative error
//! tolerance. Modes are zero-based throughout: the first two modes index the
//! rows and columns of a frontal slice, modes `2..d` are the transformed ones.

pub mod bench;
pub mod codec;
pub mod error;
pub mod exec;
pub mod matrix;
pub mod slice_svd;
pub mod synth;
pub mod tensor;
pub mod transform;
pub mod tsvdm;
pub mod ttm;

pub use codec::BenchRow;
pub use error::{Error, Result};
pub use exec::{Context, MemoryMeter};
pub use matrix::{Matrix, MatrixRef};
pub use slice_svd::{SliceSvdSet, SvdStrategy, VariableRankFactors};
pub use synth::SynthSpec;
pub use tensor::{relative_error, DenseTensor, SliceIndex};
pub use transform::{Transform, TransformKind, TransformSet};
pub use ttm::{TtmPlan, TtmVariant};
pub use tsvdm::{
    compression_ratio, compute_threshold, full_tsvdm, reconstruct, starm_product, tsvdm_fixed_rank,
    tsvdm_tolerance, CompressedTensor, Compression, Method, ThresholdResult, Tsvdm2Strategy,
    TsvdmResult,
};
