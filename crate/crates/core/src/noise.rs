//! Johnson-noise generation.
//!
//! Each party's noise generator emits band-limited white Gaussian noise
//! whose power spectral density is `4 k T R`. Samples are produced at
//! `f_s = 2 * delta_f * oversample`. With `oversample == 1` (Nyquist rate)
//! the samples are i.i.d.; with `oversample > 1` a moving-average low-pass
//! of width `oversample` is applied to a faster i.i.d. sequence so that the
//! per-sample variance is still `psd * delta_f`.
//!
//! Randomness comes from [`RandomStream`]s derived from a master seed, the
//! bit index and a party tag, so every (bit, party) pair has its own
//! independent generator and any trial can be replayed in isolation.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure_domain, Error, Result};

/// Boltzmann constant in J/K (exact SI value).
pub const BOLTZMANN: f64 = 1.380649e-23;

/// Default effective temperature of the emulated noise generators.
pub const DEFAULT_T_EFF: f64 = 1e9;

pub const MIN_SAMPLES_PER_BIT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Effective temperature in kelvin.
    pub t_eff: f64,
    /// Noise bandwidth in hertz.
    pub delta_f: f64,
    pub samples_per_bit: usize,
    pub oversample: usize,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            t_eff: DEFAULT_T_EFF,
            delta_f: 1e3,
            samples_per_bit: 1000,
            oversample: 1,
        }
    }
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        ensure_domain(self.t_eff.is_finite() && self.t_eff > 0.0, || {
            format!("T_eff must be positive, got {}", self.t_eff)
        })?;
        ensure_domain(self.delta_f.is_finite() && self.delta_f > 0.0, || {
            format!("delta_f must be positive, got {}", self.delta_f)
        })?;
        ensure_domain(self.samples_per_bit >= MIN_SAMPLES_PER_BIT, || {
            format!(
                "samples_per_bit must be at least {MIN_SAMPLES_PER_BIT}, got {}",
                self.samples_per_bit
            )
        })?;
        ensure_domain(self.oversample >= 1, || {
            "oversample must be at least 1".into()
        })
    }

    /// Sample rate `2 * delta_f * oversample` in hertz.
    pub fn sample_rate(&self) -> f64 {
        2.0 * self.delta_f * self.oversample as f64
    }
}

/// A uniformly sampled real-valued signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Contract(
                "waveform must contain at least one sample".into(),
            ));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Domain(format!("waveform sample {i} is not finite")));
        }
        ensure_domain(sample_rate.is_finite() && sample_rate > 0.0, || {
            format!("sample rate must be positive, got {sample_rate}")
        })?;
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Builds a waveform holding `value` in every sample.
    pub fn constant(value: f64, len: usize, sample_rate: f64) -> Result<Self> {
        Self::new(vec![value; len], sample_rate)
    }

    pub(crate) fn from_parts_unchecked(samples: Vec<f64>, sample_rate: f64) -> Self {
        debug_assert!(!samples.is_empty());
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Finite-ness is not re-checked; callers only add finite offsets.
    pub(crate) fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_parts_unchecked(
            self.samples.iter().map(|s| s * factor).collect(),
            self.sample_rate,
        )
    }

    pub fn mean_square(&self) -> f64 {
        mean_square(&self.samples)
    }
}

pub(crate) fn mean_square(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64
}

/// Who a derived random stream belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Party {
    Alice,
    Bob,
    EveInjection,
}

impl Party {
    fn tag(self) -> &'static [u8] {
        match self {
            Party::Alice => b"alice",
            Party::Bob => b"bob",
            Party::EveInjection => b"eve",
        }
    }
}

/// Deterministic pseudo-random stream keyed by a 256-bit derived key.
///
/// Streams are plain values: they can be moved between threads, but a single
/// stream must not be shared while sampling.
#[derive(Debug, Clone)]
pub struct RandomStream(ChaCha12Rng);

impl RandomStream {
    pub fn from_key(key: [u8; 32]) -> Self {
        Self(ChaCha12Rng::from_seed(key))
    }

    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    pub fn coin(&mut self) -> bool {
        self.0.random::<bool>()
    }

    /// Bernoulli draw with success probability `p` (clamped to `[0, 1]`).
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p.clamp(0.0, 1.0)
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

/// Hashes `(domain, master_seed, index)` into a stream key.
///
/// `domain` separates independent uses of the same seed and index (noise
/// generators, protocol coins, Eve's private coin, ...).
pub fn derive_labeled(master_seed: u64, index: u64, domain: &[u8]) -> RandomStream {
    let mut hasher = Sha256::new();
    hasher.update(b"kljn-stream/v1/");
    hasher.update((domain.len() as u64).to_le_bytes());
    hasher.update(domain);
    hasher.update(master_seed.to_le_bytes());
    hasher.update(index.to_le_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    RandomStream::from_key(key)
}

/// Noise stream of `party` for clock period `bit_index`.
pub fn derive_stream(master_seed: u64, bit_index: u64, party: Party) -> RandomStream {
    let mut domain = b"noise/".to_vec();
    domain.extend_from_slice(party.tag());
    derive_labeled(master_seed, bit_index, &domain)
}

/// Johnson noise voltage power spectral density `4 k T R` in V^2/Hz.
pub fn johnson_psd(resistance: f64, t_eff: f64) -> Result<f64> {
    ensure_domain(resistance >= 0.0, || {
        format!("resistance must be non-negative, got {resistance}")
    })?;
    ensure_domain(t_eff >= 0.0, || {
        format!("temperature must be non-negative, got {t_eff}")
    })?;
    Ok(4.0 * BOLTZMANN * t_eff * resistance)
}

/// Draws one clock period of noise with power spectral density `psd`.
///
/// The returned waveform has `params.samples_per_bit` samples of variance
/// `psd * delta_f` at the rate given by [`NoiseParams::sample_rate`].
pub fn sample_noise(psd: f64, params: &NoiseParams, stream: &mut RandomStream) -> Result<Waveform> {
    ensure_domain(psd.is_finite(), || format!("psd must be finite, got {psd}"))?;
    ensure_domain(psd >= 0.0, || {
        format!("psd must be non-negative, got {psd}")
    })?;
    params.validate()?;

    let n = params.samples_per_bit;
    let width = params.oversample;
    let variance = psd * params.delta_f;
    let samples = if width == 1 {
        let sigma = variance.sqrt();
        (0..n).map(|_| sigma * stream.normal()).collect()
    } else {
        // Width-m boxcar over i.i.d. samples of variance m*sigma^2 keeps the
        // output variance at sigma^2.
        let raw_sigma = (variance * width as f64).sqrt();
        let raw: Vec<f64> = (0..n + width - 1)
            .map(|_| raw_sigma * stream.normal())
            .collect();
        let inv = 1.0 / width as f64;
        let mut acc: f64 = raw[..width].iter().sum();
        let mut out = Vec::with_capacity(n);
        out.push(acc * inv);
        for i in width..raw.len() {
            acc += raw[i] - raw[i - width];
            out.push(acc * inv);
        }
        out
    };
    Ok(Waveform::from_parts_unchecked(
        samples,
        params.sample_rate(),
    ))
}
