//! Seeded synthetic tensors with controllable facewise rank and noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::exec::Context;
use crate::tensor::DenseTensor;
use crate::transform::{TransformKind, TransformSet};
use crate::ttm::{from_transform_domain, release};
use crate::{Error, Result};

/// Low facewise-rank signal in a chosen transform domain plus Gaussian noise.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub dims: Vec<usize>,
    /// Rank of every transformed slice of the signal.
    pub rank: usize,
    /// Signal-to-noise ratio in decibels; `None` for a noiseless tensor.
    pub snr_db: Option<f64>,
    /// Analytic transform in which the signal is low rank.
    pub kind: TransformKind,
    /// Slice `i` is scaled by `decay^i`, so later slices carry less energy.
    pub decay: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(dims: Vec<usize>, rank: usize, seed: u64) -> Self {
        Self {
            dims,
            rank,
            snr_db: None,
            kind: TransformKind::Dct,
            decay: 1.0,
            seed,
        }
    }

    pub fn snr_db(mut self, snr: f64) -> Self {
        self.snr_db = Some(snr);
        self
    }

    pub fn kind(mut self, kind: TransformKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn decay(mut self, decay: f64) -> Self {
        self.decay = decay;
        self
    }
}

fn gaussian(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Tensor of i.i.d. standard normal entries.
pub fn gaussian_tensor(dims: Vec<usize>, seed: u64) -> Result<DenseTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = dims.iter().product();
    DenseTensor::new(dims, gaussian(&mut rng, len))
}

pub fn generate(spec: &SynthSpec, ctx: &Context) -> Result<DenseTensor> {
    if spec.dims.len() < 3 {
        return Err(Error::InvalidShape(format!(
            "synthetic tensors need at least 3 modes, got {:?}",
            spec.dims
        )));
    }
    let (m, p) = (spec.dims[0], spec.dims[1]);
    if spec.rank > m.min(p) {
        return Err(Error::InvalidParameter(format!(
            "rank {} exceeds min(m, p) = {}",
            spec.rank,
            m.min(p)
        )));
    }
    if !spec.decay.is_finite() || spec.decay <= 0.0 {
        return Err(Error::InvalidParameter(format!("decay must be positive, got {}", spec.decay)));
    }
    let ts = TransformSet::uniform_analytic(&spec.dims, spec.kind)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let s = spec.rank;
    let n: usize = spec.dims[2..].iter().product();

    let mut hat = vec![0.0; m * p * n];
    let mut scale = 1.0;
    for slice in hat.chunks_exact_mut(m * p) {
        let u = gaussian(&mut rng, m * s);
        let v = gaussian(&mut rng, p * s);
        for c in 0..p {
            for r in 0..m {
                let x: f64 = (0..s).map(|k| u[r + k * m] * v[c + k * p]).sum();
                slice[r + c * m] = scale * x;
            }
        }
        scale *= spec.decay;
    }
    let hat = DenseTensor::new(spec.dims.clone(), hat)?;
    let signal = from_transform_domain(&hat, &ts, ctx.ttm_variant(), ctx)?;
    release(ctx, &hat);

    let Some(snr_db) = spec.snr_db else {
        return Ok(signal);
    };
    let noise = gaussian(&mut rng, signal.len());
    let signal_energy: f64 = signal.data().iter().map(|x| x * x).sum();
    let noise_energy: f64 = noise.iter().map(|x| x * x).sum();
    let target = signal_energy / 10f64.powf(snr_db / 10.0);
    let gain = if noise_energy > 0.0 {
        (target / noise_energy).sqrt()
    } else {
        0.0
    };
    let data = signal.data().iter().zip(&noise).map(|(x, e)| x + gain * e).collect();
    DenseTensor::new(spec.dims.clone(), data)
}
