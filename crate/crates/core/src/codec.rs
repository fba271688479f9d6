//! Binary formats for raw and compressed tensors, and the benchmark CSV.
//!
//! Raw tensor (`STARMTEN`):
//!
//! ```text
//! magic    8 bytes  "STARMTEN"
//! version  u8       1
//! dtype    u8       0 (float64)
//! ndim     u32
//! dims     u64 x ndim
//! payload  f64 x prod(dims), column-major
//! ```
//!
//! Compressed tensor (`STARMCMP`):
//!
//! ```text
//! magic    8 bytes  "STARMCMP"
//! version  u8       1
//! method   u8       1 = fixed rank, 2 = tolerance
//! param    f64      rank or tolerance
//! ndim     u32
//! dims     u64 x ndim
//! kinds    u8 x (ndim - 2)   0 identity, 1 dct, 2 data-driven, 3 custom
//! N        u64
//! ranks    u32 x N
//! matrices f64 x n_k^2 for every mode of kind 2 or 3, in mode order
//! U        f64 x sum(rho_i) m, slice blocks m x rho_i
//! G        f64 x sum(rho_i) p, slice blocks rho_i x p
//! ```
//!
//! Every multi-byte field is little-endian.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::slice_svd::VariableRankFactors;
use crate::tensor::DenseTensor;
use crate::transform::{Transform, TransformKind, TransformSet};
use crate::tsvdm::{CompressedTensor, Method};
use crate::{Error, Result};

pub const TENSOR_MAGIC: [u8; 8] = *b"STARMTEN";
pub const COMPRESSED_MAGIC: [u8; 8] = *b"STARMCMP";
pub const VERSION: u8 = 1;
pub const DTYPE_F64: u8 = 0;

// Upper bound on entries read per chunk, so a corrupt size field costs at
// most this much memory before the stream runs dry.
const CHUNK: usize = 1 << 16;

/// Byte length of a raw tensor header with `ndim` modes.
pub fn tensor_header_len(ndim: usize) -> usize {
    8 + 1 + 1 + 4 + 8 * ndim
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileKind {
    Tensor,
    Compressed,
}

impl FileKind {
    pub fn from_magic(magic: [u8; 8]) -> Result<Self> {
        match magic {
            TENSOR_MAGIC => Ok(FileKind::Tensor),
            COMPRESSED_MAGIC => Ok(FileKind::Compressed),
            found => Err(Error::BadMagic {
                found,
                expected: TENSOR_MAGIC,
            }),
        }
    }
}

/// Identify a file by its magic bytes.
pub fn detect_kind(path: impl AsRef<Path>) -> Result<FileKind> {
    let mut magic = [0u8; 8];
    let mut f = File::open(path)?;
    read_exact_or(&mut f, &mut magic, Error::TruncatedHeader)?;
    FileKind::from_magic(magic)
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], err: Error) -> Result<()> {
    match r.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(err),
        Err(e) => Err(e.into()),
    }
}

struct Decoder<R> {
    inner: R,
}

impl<R: Read> Decoder<R> {
    fn bytes<const N: usize>(&mut self, truncated: fn() -> Error) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        read_exact_or(&mut self.inner, &mut buf, truncated())?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>(|| Error::TruncatedHeader)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(|| Error::TruncatedHeader)?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(|| Error::TruncatedHeader)?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(|| Error::TruncatedHeader)?))
    }

    /// `count` fixed-width little-endian values, read in bounded chunks.
    fn array<T, const N: usize>(
        &mut self,
        count: usize,
        truncated: fn() -> Error,
        decode: fn([u8; N]) -> T,
    ) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(count.min(CHUNK));
        let mut buf = vec![0u8; count.min(CHUNK) * N];
        let mut left = count;
        while left > 0 {
            let take = left.min(CHUNK);
            let bytes = &mut buf[..take * N];
            read_exact_or(&mut self.inner, bytes, truncated())?;
            out.extend(
                bytes
                    .chunks_exact(N)
                    .map(|c| decode(c.try_into().expect("chunk width"))),
            );
            left -= take;
        }
        Ok(out)
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        self.array(count, || Error::TruncatedPayload, f64::from_le_bytes)
    }

    fn dims(&mut self) -> Result<Vec<usize>> {
        let ndim = self.u32()? as usize;
        self.array(ndim, || Error::TruncatedHeader, u64::from_le_bytes)?
            .into_iter()
            .map(|n| usize::try_from(n).map_err(|_| Error::Corrupt(format!("extent {n} too large"))))
            .collect()
    }

    fn magic_version(&mut self, expected: [u8; 8]) -> Result<()> {
        let found = self.bytes::<8>(|| Error::TruncatedHeader)?;
        if found != expected {
            return Err(Error::BadMagic { found, expected });
        }
        let version = self.u8()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        loop {
            match self.inner.read(&mut probe) {
                Ok(0) => return Ok(()),
                Ok(_) => return Err(Error::TrailingData),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }
}

fn entry_count(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .filter(|len| len.checked_mul(8).is_some())
        .ok_or_else(|| Error::Corrupt(format!("dims {dims:?} overflow")))
}

fn put_f64s(w: &mut impl Write, values: &[f64]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(values.len().min(CHUNK) * 8);
    for chunk in values.chunks(CHUNK) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn put_dims(w: &mut impl Write, dims: &[usize]) -> Result<()> {
    let ndim = u32::try_from(dims.len()).map_err(|_| Error::InvalidShape("too many modes".into()))?;
    w.write_all(&ndim.to_le_bytes())?;
    for &n in dims {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    Ok(())
}

pub fn write_tensor(mut w: impl Write, t: &DenseTensor) -> Result<()> {
    w.write_all(&TENSOR_MAGIC)?;
    w.write_all(&[VERSION, DTYPE_F64])?;
    put_dims(&mut w, t.dims())?;
    put_f64s(&mut w, t.data())?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor(r: impl Read) -> Result<DenseTensor> {
    let mut d = Decoder { inner: r };
    d.magic_version(TENSOR_MAGIC)?;
    let dtype = d.u8()?;
    if dtype != DTYPE_F64 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let dims = d.dims()?;
    if dims.is_empty() {
        return Err(Error::Corrupt("tensor has no modes".into()));
    }
    let len = entry_count(&dims)?;
    let data = d.f64s(len)?;
    d.finish()?;
    DenseTensor::new(dims, data)
}

pub fn write_compressed(mut w: impl Write, c: &CompressedTensor) -> Result<()> {
    let f = c.factors();
    w.write_all(&COMPRESSED_MAGIC)?;
    w.write_all(&[VERSION, c.method().code()])?;
    w.write_all(&c.method().param().to_le_bytes())?;
    put_dims(&mut w, c.dims())?;
    let kinds: Vec<u8> = c.transforms().kinds().iter().map(|k| k.code()).collect();
    w.write_all(&kinds)?;
    w.write_all(&(f.ranks().len() as u64).to_le_bytes())?;
    for &rho in f.ranks() {
        let rho = u32::try_from(rho).map_err(|_| Error::InvalidRanks(format!("rank {rho} exceeds u32")))?;
        w.write_all(&rho.to_le_bytes())?;
    }
    for t in c.transforms().iter().filter(|t| !t.kind().is_analytic()) {
        put_f64s(&mut w, t.matrix().data())?;
    }
    put_f64s(&mut w, f.u_data())?;
    put_f64s(&mut w, f.g_data())?;
    w.flush()?;
    Ok(())
}

pub fn read_compressed(r: impl Read) -> Result<CompressedTensor> {
    let mut d = Decoder { inner: r };
    d.magic_version(COMPRESSED_MAGIC)?;
    let method_code = d.u8()?;
    let param = d.f64()?;
    let method = match method_code {
        1 if param >= 1.0 && param.fract() == 0.0 && param <= u32::MAX as f64 => Method::FixedRank(param as usize),
        1 => return Err(Error::Corrupt(format!("fixed-rank parameter {param} is not a rank"))),
        2 if param > 0.0 && param < 1.0 => Method::Tolerance(param),
        2 => return Err(Error::Corrupt(format!("tolerance {param} outside (0, 1)"))),
        other => return Err(Error::Corrupt(format!("unknown method code {other}"))),
    };
    let dims = d.dims()?;
    if dims.len() < 3 {
        return Err(Error::Corrupt(format!("compressed tensor with {} modes", dims.len())));
    }
    let total = entry_count(&dims)?;
    let (m, p) = (dims[0], dims[1]);
    let kinds = d
        .array(dims.len() - 2, || Error::TruncatedHeader, |[b]: [u8; 1]| b)?
        .into_iter()
        .map(|code| TransformKind::from_code(code).ok_or_else(|| Error::Corrupt(format!("unknown transform kind {code}"))))
        .collect::<Result<Vec<_>>>()?;
    let n = d.u64()?;
    let expected_n = if m == 0 || p == 0 { 0 } else { total / (m * p) };
    if n != expected_n as u64 {
        return Err(Error::Corrupt(format!("{n} slices declared, dims {dims:?} imply {expected_n}")));
    }
    let ranks: Vec<usize> = d
        .array(expected_n, || Error::TruncatedHeader, u32::from_le_bytes)?
        .into_iter()
        .map(|r| r as usize)
        .collect();
    let max_rank = m.min(p);
    if let Some((i, r)) = ranks.iter().enumerate().find(|(_, &r)| r > max_rank) {
        return Err(Error::Corrupt(format!("slice {i} has rank {r} > {max_rank}")));
    }
    let rank_sum: usize = ranks.iter().sum();

    let mut transforms = Vec::with_capacity(kinds.len());
    for (&kind, &size) in kinds.iter().zip(&dims[2..]) {
        let t = if kind.is_analytic() {
            Transform::analytic(kind, size)?
        } else {
            let data = d.f64s(size * size)?;
            Transform::from_parts(kind, Matrix::from_col_major(size, size, data)?)
                .map_err(|e| Error::Corrupt(format!("stored {kind} transform: {e}")))?
        };
        transforms.push(t);
    }
    let u = d.f64s(rank_sum * m)?;
    let g = d.f64s(rank_sum * p)?;
    d.finish()?;
    let factors = VariableRankFactors::new(m, p, ranks, u, g)?;
    let transforms = TransformSet::new(&dims, transforms)?;
    CompressedTensor::new(dims, method, transforms, factors).map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn write_tensor_file(path: impl AsRef<Path>, t: &DenseTensor) -> Result<()> {
    write_tensor(BufWriter::new(File::create(path)?), t)
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<DenseTensor> {
    read_tensor(BufReader::new(File::open(path)?))
}

pub fn write_compressed_file(path: impl AsRef<Path>, c: &CompressedTensor) -> Result<()> {
    write_compressed(BufWriter::new(File::create(path)?), c)
}

pub fn read_compressed_file(path: impl AsRef<Path>) -> Result<CompressedTensor> {
    read_compressed(BufReader::new(File::open(path)?))
}

/// Load a square matrix stored as a raw tensor of dims `(n, n)` or `(n, n, 1)`.
pub fn read_matrix_file(path: impl AsRef<Path>) -> Result<Matrix> {
    let t = read_tensor_file(path)?;
    match *t.dims() {
        [r, c] | [r, c, 1] => Matrix::from_col_major(r, c, t.into_data()),
        ref dims => Err(Error::InvalidShape(format!(
            "expected a matrix stored as (n, n) or (n, n, 1), got {dims:?}"
        ))),
    }
}

/// One timed benchmark run. `mode` is one-based and empty for kernels that
/// are not tied to a mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub kernel: String,
    pub variant: String,
    pub mode: Option<usize>,
    pub threads: usize,
    pub trial: usize,
    pub seconds: f64,
    pub peak_bytes: usize,
}

pub fn write_bench_csv<'a>(w: impl Write, rows: impl IntoIterator<Item = &'a BenchRow>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_bench_csv(r: impl Read) -> Result<Vec<BenchRow>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}
