//! Reproducible, splittable randomness.
//!
//! Every consumer draws from its own ChaCha8 stream, addressed by a
//! `(seed, stream)` pair. Streams for pipeline stages are derived from the
//! stage name, and per-item streams from a parent stream plus an index, so a
//! new consumer never shifts the draws seen by an existing one.
//!
//! Pinned sampling rules (ports must match these exactly):
//! - uniform `f64` in `[0, 1)`: `(next_u64() >> 11) * 2^-53`
//! - Poisson with mean `λ < 10`: sequential CDF inversion from `k = 0`
//! - Poisson with mean `λ ≥ 10`: Hörmann's PTRS transformed rejection

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const INVERSION_LIMIT: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    /// Stream addressed by a stage name such as `"mask-init"` or `"noise"`.
    pub fn for_stage(seed: u64, stage: &str) -> Self {
        Self::new(seed, stage_stream_id(stage))
    }

    /// Independent child stream, e.g. one per dataset item.
    pub fn derive(&self, index: u64) -> Self {
        Self::new(self.seed, splitmix64(self.stream ^ splitmix64(index)))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` by multiply-shift.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.inner.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn poisson(&mut self, lambda: f64) -> Result<f64> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::NegativeRate(lambda));
        }
        if lambda == 0.0 {
            return Ok(0.0);
        }
        if lambda < INVERSION_LIMIT {
            Ok(self.poisson_inversion(lambda))
        } else {
            Ok(self.poisson_ptrs(lambda))
        }
    }

    fn poisson_inversion(&mut self, lambda: f64) -> f64 {
        let u = self.next_f64();
        let mut k = 0u64;
        let mut p = (-lambda).exp();
        let mut cdf = p;
        // The tail mass beyond k = 200 is below f64 resolution for λ < 10.
        while u > cdf && k < 200 {
            k += 1;
            p *= lambda / k as f64;
            cdf += p;
        }
        k as f64
    }

    fn poisson_ptrs(&mut self, lambda: f64) -> f64 {
        let slam = lambda.sqrt();
        let loglam = lambda.ln();
        let b = 0.931 + 2.53 * slam;
        let a = -0.059 + 0.02483 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let vr = 0.9277 - 3.6224 / (b - 2.0);
        loop {
            let u = self.next_f64() - 0.5;
            let v = self.next_f64();
            let us = 0.5 - u.abs();
            let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
            if us >= 0.07 && v <= vr {
                return k;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
            let rhs = -lambda + k * loglam - libm::lgamma(k + 1.0);
            if lhs <= rhs {
                return k;
            }
        }
    }
}

/// Tensor of i.i.d. uniforms in `[lo, hi)`.
pub fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor> {
    if !(lo <= hi) {
        return Err(Error::InvalidArgument(format!(
            "uniform bounds out of order: lo={lo}, hi={hi}"
        )));
    }
    let n = crate::tensor::element_count(shape)?;
    let data = (0..n).map(|_| rng.uniform_in(lo, hi)).collect();
    Tensor::new(shape, data)
}

/// Element-wise Poisson draws; output values are integers stored as floats.
pub fn poisson(rng: &mut Rng, rates: &Tensor) -> Result<Tensor> {
    let data = rates
        .values()
        .map(|rate| rng.poisson(rate))
        .collect::<Result<Vec<_>>>()?;
    Tensor::new(rates.shape(), data)
}

/// Stream id for a named pipeline stage (first 8 bytes of SHA-256, little-endian).
pub fn stage_stream_id(stage: &str) -> u64 {
    let digest = Sha256::digest(stage.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
