//! Alice/Bob bit-exchange state machine.
//!
//! One clock period: both parties pick a resistor from `{R0, R1}`, their
//! noise generators drive the loop, and each party measures the wire
//! voltage and current at its own end. After the public comparison the
//! exchange is discarded if the resistor pair is insecure (`LL`/`HH`), if
//! any measured amplitude leaves its expected range, or if the
//! eavesdropper-visible asymmetry `delta` reaches the threshold `omega`.
//! Otherwise each party infers the other's bit from the mean-square levels
//! and the bit becomes part of the key.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{
    solve_nonideal_loop, wire_from_q, LoopTrace, NonIdealityVector, WireGeometry, WireModel,
    DEFAULT_PROPAGATION_SPEED,
};
use crate::error::{ensure_domain, Error, Result};
use crate::noise::{
    derive_labeled, derive_stream, johnson_psd, mean_square, sample_noise, NoiseParams, Party,
    Waveform, BOLTZMANN,
};

/// Closed interval applied to sample magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub const UNBOUNDED: Band = Band {
        lo: 0.0,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        ensure_domain(
            lo >= 0.0 && hi >= lo && !lo.is_nan() && !hi.is_nan(),
            || format!("band [{lo}, {hi}] is not a valid magnitude interval"),
        )?;
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, magnitude: f64) -> bool {
        self.lo <= magnitude && magnitude <= self.hi
    }
}

/// Which eavesdropper-visible statistic the parties threshold against `omega`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distinguisher {
    /// `|<u_alice_end^2> - <u_bob_end^2>|`.
    WireResistance,
    /// `|<U I>| / sqrt(<U^2> <I^2>)` on the wire-average voltage and current.
    #[default]
    CrossCorrelation,
}

/// How the parties' instruments treat out-of-range amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuardMode {
    /// Range guard active on the raw samples.
    #[default]
    Guarded,
    /// No range guard; instruments saturate at the band edges.
    NoGuardClipping,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    pub r0: f64,
    pub r1: f64,
    pub noise: NoiseParams,
    pub q: NonIdealityVector,
    /// Replaces the wire derived from `q` when set.
    pub wire_override: Option<WireModel>,
    pub propagation_speed: f64,
    pub omega: f64,
    pub distinguisher: Distinguisher,
    pub voltage_band: Band,
    pub current_band: Band,
    pub master_seed: u64,
    /// Size `M` of the public measurement word, for authentication cost.
    pub auth_word_size: u64,
}

/// Sigma multiple used for the default measurement bands.
pub const DEFAULT_BAND_SIGMAS: f64 = 7.0;

impl SystemParams {
    /// Parameters with an ideal line, no `omega` filtering and default bands.
    pub fn new(r0: f64, r1: f64, noise: NoiseParams) -> Self {
        let mut p = Self {
            r0,
            r1,
            noise,
            q: NonIdealityVector::IDEAL,
            wire_override: None,
            propagation_speed: DEFAULT_PROPAGATION_SPEED,
            omega: f64::INFINITY,
            distinguisher: Distinguisher::default(),
            voltage_band: Band::UNBOUNDED,
            current_band: Band::UNBOUNDED,
            master_seed: 0,
            auth_word_size: 1 << 16,
        };
        p.reset_bands();
        p
    }

    /// Sets both bands to `DEFAULT_BAND_SIGMAS` times the largest standard
    /// deviation any resistor pair can produce at the hotter temperature.
    pub fn reset_bands(&mut self) {
        let (t_a, t_b) = self.temperatures();
        let c = 4.0 * BOLTZMANN * t_a.max(t_b) * self.noise.delta_f;
        let r_max = self.r0.max(self.r1);
        let r_min = self.r0.min(self.r1);
        self.voltage_band = Band {
            lo: 0.0,
            hi: DEFAULT_BAND_SIGMAS * (c * r_max).sqrt(),
        };
        self.current_band = Band {
            lo: 0.0,
            hi: DEFAULT_BAND_SIGMAS * (c / r_min).sqrt(),
        };
    }

    pub fn validate(&self) -> Result<()> {
        ensure_domain(self.r0.is_finite() && self.r0 > 0.0, || {
            format!("R0 must be positive, got {}", self.r0)
        })?;
        ensure_domain(self.r1.is_finite() && self.r1 > 0.0, || {
            format!("R1 must be positive, got {}", self.r1)
        })?;
        ensure_domain(self.r0 != self.r1, || "R0 must differ from R1".into())?;
        ensure_domain(self.omega >= 0.0, || {
            format!("omega must be >= 0, got {}", self.omega)
        })?;
        self.noise.validate()?;
        self.q.validate()?;
        ensure_domain(self.q.temperature_mismatch < 2.0, || {
            "temperature mismatch must be below 2 so both temperatures stay positive".into()
        })?;
        ensure_domain(self.propagation_speed > 0.0, || {
            "propagation speed must be positive".into()
        })?;
        let wire = self.wire();
        wire.validate()?;
        if wire.transient_skip >= self.noise.samples_per_bit {
            return Err(Error::Config(format!(
                "transient skip of {} samples leaves nothing of a {}-sample clock period",
                wire.transient_skip, self.noise.samples_per_bit
            )));
        }
        Ok(())
    }

    pub fn wire(&self) -> WireModel {
        self.wire_override.unwrap_or_else(|| {
            wire_from_q(
                &self.q,
                &WireGeometry {
                    propagation_speed: self.propagation_speed,
                    sample_rate: self.noise.sample_rate(),
                },
            )
        })
    }

    /// Alice's and Bob's generator temperatures after applying the mismatch.
    pub fn temperatures(&self) -> (f64, f64) {
        let half = self.q.temperature_mismatch / 2.0;
        (
            self.noise.t_eff * (1.0 + half),
            self.noise.t_eff * (1.0 - half),
        )
    }

    /// The same system with a perfect line and matched temperatures.
    pub fn idealized(&self) -> Self {
        Self {
            q: NonIdealityVector::IDEAL,
            wire_override: None,
            ..self.clone()
        }
    }
}

#[allow(clippy::upper_case_acronyms)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StateClass {
    LL,
    LH,
    HL,
    HH,
}

impl StateClass {
    pub fn from_bits(alice_bit: bool, bob_bit: bool) -> Self {
        match (alice_bit, bob_bit) {
            (false, false) => StateClass::LL,
            (false, true) => StateClass::LH,
            (true, false) => StateClass::HL,
            (true, true) => StateClass::HH,
        }
    }

    pub fn bits(self) -> (bool, bool) {
        match self {
            StateClass::LL => (false, false),
            StateClass::LH => (false, true),
            StateClass::HL => (true, false),
            StateClass::HH => (true, true),
        }
    }

    pub fn is_secure(self) -> bool {
        matches!(self, StateClass::LH | StateClass::HL)
    }

    /// The state with the parties' roles exchanged.
    pub fn swapped(self) -> Self {
        let (a, b) = self.bits();
        Self::from_bits(b, a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Kept,
    DiscardedInsecureState,
    DiscardedDelta,
    DiscardedRange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Keep,
    Discard,
}

/// Summary statistics of one clock period, computed after the transient skip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub n_samples: usize,
    pub ms_u_alice: f64,
    pub ms_u_bob: f64,
    pub ms_i_alice: f64,
    pub ms_i_bob: f64,
    /// Mean-square of the wire-average voltage `(u_alice_end + u_bob_end) / 2`.
    pub ms_u: f64,
    /// Mean-square of the wire-average current.
    pub ms_i: f64,
    /// `<U I>` on the wire-average voltage and current.
    pub cross_ui: f64,
    pub max_abs_u: f64,
    pub min_abs_u: f64,
    pub max_abs_i: f64,
    pub min_abs_i: f64,
}

impl TraceStats {
    pub fn from_trace(trace: &LoopTrace, skip: usize) -> Self {
        fn window(w: &Waveform, skip: usize) -> &[f64] {
            &w.samples()[skip.min(w.len())..]
        }
        let sl = |w| window(w, skip);
        let (ua, ub) = (sl(&trace.u_alice_end), sl(&trace.u_bob_end));
        let (ia, ib) = (sl(&trace.i_alice_end), sl(&trace.i_bob_end));
        let n = ua.len();
        let mut ms_u = 0.0;
        let mut ms_i = 0.0;
        let mut cross = 0.0;
        for k in 0..n {
            let u = 0.5 * (ua[k] + ub[k]);
            let i = 0.5 * (ia[k] + ib[k]);
            ms_u += u * u;
            ms_i += i * i;
            cross += u * i;
        }
        let nf = n as f64;
        let mags = |xs: &[f64], ys: &[f64]| {
            xs.iter()
                .chain(ys)
                .fold((0.0f64, f64::INFINITY), |(hi, lo), x| {
                    (hi.max(x.abs()), lo.min(x.abs()))
                })
        };
        let (max_abs_u, min_abs_u) = mags(ua, ub);
        let (max_abs_i, min_abs_i) = mags(ia, ib);
        Self {
            n_samples: n,
            ms_u_alice: mean_square(ua),
            ms_u_bob: mean_square(ub),
            ms_i_alice: mean_square(ia),
            ms_i_bob: mean_square(ib),
            ms_u: ms_u / nf,
            ms_i: ms_i / nf,
            cross_ui: cross / nf,
            max_abs_u,
            min_abs_u,
            max_abs_i,
            min_abs_i,
        }
    }

    /// Normalized cross-correlation of wire voltage and current.
    pub fn correlation_ui(&self) -> f64 {
        let denom = (self.ms_u * self.ms_i).sqrt();
        if denom > 0.0 {
            self.cross_ui / denom
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitExchangeRecord {
    pub bit_index: u64,
    pub alice_bit: bool,
    pub bob_bit: bool,
    pub state_class: StateClass,
    pub stats: TraceStats,
    pub delta: f64,
    pub decision: Decision,
    /// Alice's inference of Bob's bit.
    pub alice_inferred_bit: bool,
    /// Bob's inference of Alice's bit.
    pub bob_inferred_bit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyPair {
    pub alice_key: Vec<bool>,
    pub bob_key: Vec<bool>,
    pub records: Vec<BitExchangeRecord>,
    pub auth_bits_spent: u64,
}

impl KeyPair {
    pub fn kept_fraction(&self) -> f64 {
        self.alice_key.len() as f64 / self.records.len() as f64
    }

    pub fn bit_errors(&self) -> usize {
        self.alice_key
            .iter()
            .zip(&self.bob_key)
            .filter(|(a, b)| a != b)
            .count()
    }
}

pub fn select_resistor(bit: bool, params: &SystemParams) -> f64 {
    if bit {
        params.r1
    } else {
        params.r0
    }
}

pub fn classify_state(r_a: f64, r_b: f64, params: &SystemParams) -> Result<StateClass> {
    let to_bit = |r: f64| {
        if r == params.r0 {
            Ok(false)
        } else if r == params.r1 {
            Ok(true)
        } else {
            Err(Error::Domain(format!(
                "resistance {r} is neither R0 = {} nor R1 = {}",
                params.r0, params.r1
            )))
        }
    };
    Ok(StateClass::from_bits(to_bit(r_a)?, to_bit(r_b)?))
}

pub fn compute_delta(stats: &TraceStats, distinguisher: Distinguisher) -> f64 {
    match distinguisher {
        Distinguisher::WireResistance => (stats.ms_u_alice - stats.ms_u_bob).abs(),
        Distinguisher::CrossCorrelation => stats.correlation_ui().abs(),
    }
}

/// Discards when `delta >= omega` (boundary inclusive).
pub fn threshold_filter(delta: f64, omega: f64) -> Verdict {
    if delta >= omega {
        Verdict::Discard
    } else {
        Verdict::Keep
    }
}

pub fn range_guard(stats: &TraceStats, voltage: &Band, current: &Band) -> Verdict {
    let ok = voltage.contains(stats.max_abs_u)
        && voltage.contains(stats.min_abs_u)
        && current.contains(stats.max_abs_i)
        && current.contains(stats.min_abs_i);
    if ok {
        Verdict::Keep
    } else {
        Verdict::Discard
    }
}

/// Expected `(<U^2>, <I^2>)` on an ideal line for a resistor pair.
pub fn expected_mean_squares(own_r: f64, partner_r: f64, params: &SystemParams) -> (f64, f64) {
    let c = 4.0 * BOLTZMANN * params.noise.t_eff * params.noise.delta_f;
    let total = own_r + partner_r;
    (c * own_r * partner_r / total, c / total)
}

/// Decides which resistor the partner used from mean-square measurements.
///
/// Returns the hypothesis with the smaller summed squared relative deviation
/// of `<U^2>` and `<I^2>`; ties go to bit 0.
pub fn infer_partner_bit(own_r: f64, ms_u: f64, ms_i: f64, params: &SystemParams) -> bool {
    let deviation = |partner_r: f64| {
        let (pu, pi) = expected_mean_squares(own_r, partner_r, params);
        ((ms_u - pu) / pu).powi(2) + ((ms_i - pi) / pi).powi(2)
    };
    let d0 = deviation(params.r0);
    let d1 = deviation(params.r1);
    let tie = (d0 - d1).abs() <= 1e-12 * (d0 + d1);
    !tie && d1 < d0
}

/// Secure bits spent authenticating one public measurement word of size `m`.
pub fn auth_cost(m: u64) -> Result<u32> {
    ensure_domain(m >= 2, || {
        format!("measurement word size must be >= 2, got {m}")
    })?;
    Ok(64 - (m - 1).leading_zeros())
}

/// An additive current spike driven into the wire midpoint.
///
/// The current is sized so that on a secure resistor pair the wire voltage
/// jumps by `amplitude` volts at both ends; the split of the current between
/// the two branches depends on which side holds the smaller resistor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeInjection {
    pub amplitude: f64,
    pub position: usize,
}

impl SpikeInjection {
    pub fn injected_current(&self, params: &SystemParams) -> f64 {
        let parallel = params.r0 * params.r1 / (params.r0 + params.r1);
        self.amplitude / parallel
    }

    pub(crate) fn apply(&self, trace: &mut LoopTrace, r_a: f64, r_b: f64, params: &SystemParams) {
        if self.amplitude == 0.0 || self.position >= trace.len() {
            return;
        }
        let i_s = self.injected_current(params);
        let total = r_a + r_b;
        let k = self.position;
        let dv = i_s * r_a * r_b / total;
        trace.u_alice_end.samples_mut()[k] += dv;
        trace.u_bob_end.samples_mut()[k] += dv;
        trace.i_alice_end.samples_mut()[k] -= i_s * r_b / total;
        trace.i_bob_end.samples_mut()[k] += i_s * r_a / total;
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExchangeOptions {
    pub injection: Option<SpikeInjection>,
    pub guard: GuardMode,
}

/// A full clock period including waveforms, for attacks and diagnostics.
#[derive(Debug, Clone)]
pub struct ExchangeRun {
    pub record: BitExchangeRecord,
    /// Wire trace as it exists physically (before any instrument clipping).
    pub trace: LoopTrace,
    pub u_alice_source: Waveform,
    pub u_bob_source: Waveform,
    pub r_alice: f64,
    pub r_bob: f64,
    pub wire: WireModel,
}

pub fn run_bit_exchange(
    params: &SystemParams,
    bit_index: u64,
    alice_bit: bool,
    bob_bit: bool,
) -> Result<BitExchangeRecord> {
    run_bit_exchange_with(
        params,
        bit_index,
        alice_bit,
        bob_bit,
        &ExchangeOptions::default(),
    )
    .map(|run| run.record)
}

pub fn run_bit_exchange_with(
    params: &SystemParams,
    bit_index: u64,
    alice_bit: bool,
    bob_bit: bool,
    options: &ExchangeOptions,
) -> Result<ExchangeRun> {
    let r_a = select_resistor(alice_bit, params);
    let r_b = select_resistor(bob_bit, params);
    let (t_a, t_b) = params.temperatures();
    let seed = params.master_seed;
    let u_a = sample_noise(
        johnson_psd(r_a, t_a)?,
        &params.noise,
        &mut derive_stream(seed, bit_index, Party::Alice),
    )?;
    let u_b = sample_noise(
        johnson_psd(r_b, t_b)?,
        &params.noise,
        &mut derive_stream(seed, bit_index, Party::Bob),
    )?;
    let wire = params.wire();
    let mut trace = solve_nonideal_loop(&u_a, &u_b, r_a, r_b, &wire)?;
    if let Some(spike) = &options.injection {
        spike.apply(&mut trace, r_a, r_b, params);
    }

    let state_class = StateClass::from_bits(alice_bit, bob_bit);
    let raw = TraceStats::from_trace(&trace, wire.transient_skip);
    let (stats, range_ok) = match options.guard {
        GuardMode::Guarded => (
            raw,
            range_guard(&raw, &params.voltage_band, &params.current_band) == Verdict::Keep,
        ),
        GuardMode::NoGuardClipping => {
            let clipped = clip_trace(&trace, &params.voltage_band, &params.current_band);
            (TraceStats::from_trace(&clipped, wire.transient_skip), true)
        }
    };
    let delta = compute_delta(&stats, params.distinguisher);
    let decision = if !state_class.is_secure() {
        Decision::DiscardedInsecureState
    } else if !range_ok {
        Decision::DiscardedRange
    } else if threshold_filter(delta, params.omega) == Verdict::Discard {
        Decision::DiscardedDelta
    } else {
        Decision::Kept
    };
    let alice_inferred_bit = infer_partner_bit(r_a, stats.ms_u_alice, stats.ms_i_alice, params);
    let bob_inferred_bit = infer_partner_bit(r_b, stats.ms_u_bob, stats.ms_i_bob, params);

    Ok(ExchangeRun {
        record: BitExchangeRecord {
            bit_index,
            alice_bit,
            bob_bit,
            state_class,
            stats,
            delta,
            decision,
            alice_inferred_bit,
            bob_inferred_bit,
        },
        trace,
        u_alice_source: u_a,
        u_bob_source: u_b,
        r_alice: r_a,
        r_bob: r_b,
        wire,
    })
}

/// Saturating instruments: every sample is limited to the band's upper edge.
fn clip_trace(trace: &LoopTrace, voltage: &Band, current: &Band) -> LoopTrace {
    let clip = |w: &Waveform, hi: f64| {
        Waveform::from_parts_unchecked(
            w.samples().iter().map(|x| x.clamp(-hi, hi)).collect(),
            w.sample_rate(),
        )
    };
    LoopTrace {
        u_alice_end: clip(&trace.u_alice_end, voltage.hi),
        u_bob_end: clip(&trace.u_bob_end, voltage.hi),
        i_alice_end: clip(&trace.i_alice_end, current.hi),
        i_bob_end: clip(&trace.i_bob_end, current.hi),
    }
}

/// Both parties' private fair coins for clock period `bit_index`.
pub fn party_bits(master_seed: u64, bit_index: u64) -> (bool, bool) {
    let a = derive_labeled(master_seed, bit_index, b"coin/alice").coin();
    let b = derive_labeled(master_seed, bit_index, b"coin/bob").coin();
    (a, b)
}

/// Runs clock periods until `target_bits` exchanges are kept.
///
/// The key bit is Alice's resistor bit; Bob reconstructs it from his
/// inference. Clock periods are simulated in parallel batches but the
/// result only depends on `params`, never on the batch size.
pub fn run_key_exchange(
    params: &SystemParams,
    target_bits: usize,
    max_attempts: usize,
) -> Result<KeyPair> {
    if target_bits == 0 {
        return Err(Error::Domain("target_bits must be positive".into()));
    }
    params.validate()?;
    let per_exchange = u64::from(auth_cost(params.auth_word_size)?);
    let batch = (4 * target_bits).clamp(64, 8192);
    let mut records = Vec::new();
    let mut kept = 0usize;
    let mut next = 0usize;
    'outer: while next < max_attempts {
        let end = (next + batch).min(max_attempts);
        let chunk: Vec<BitExchangeRecord> = (next..end)
            .into_par_iter()
            .map(|i| {
                let (a, b) = party_bits(params.master_seed, i as u64);
                run_bit_exchange(params, i as u64, a, b)
            })
            .collect::<Result<_>>()?;
        for rec in chunk {
            let done = rec.decision == Decision::Kept;
            records.push(rec);
            if done {
                kept += 1;
                if kept == target_bits {
                    break 'outer;
                }
            }
        }
        next = end;
    }
    if kept < target_bits {
        return Err(Error::NonConvergence {
            target: target_bits,
            attempts: max_attempts,
            kept,
        });
    }
    let (alice_key, bob_key) = records
        .iter()
        .filter(|r| r.decision == Decision::Kept)
        .map(|r| (r.alice_bit, r.bob_inferred_bit))
        .unzip();
    let auth_bits_spent = per_exchange * records.len() as u64;
    Ok(KeyPair {
        alice_key,
        bob_key,
        records,
        auth_bits_spent,
    })
}

/// Default threshold: `3 x` the median ideal-line `delta` over `n_trials`
/// secure exchanges at the configured samples per bit.
pub fn calibrate_omega(params: &SystemParams, n_trials: usize) -> Result<f64> {
    let ideal = SystemParams {
        omega: f64::INFINITY,
        master_seed: derive_labeled(params.master_seed, 0, b"calibration").next_u64(),
        ..params.idealized()
    };
    ideal.validate()?;
    let mut deltas: Vec<f64> = (0..n_trials as u64)
        .into_par_iter()
        .map(|i| {
            let alice = i % 2 == 0;
            run_bit_exchange(&ideal, i, alice, !alice).map(|r| r.delta)
        })
        .collect::<Result<_>>()?;
    let median = median(&mut deltas);
    if median > 0.0 {
        Ok(3.0 * median)
    } else {
        Err(Error::Config(format!(
            "ideal-line calibration of the {:?} distinguisher gave a zero median delta; \
             set omega explicitly",
            params.distinguisher
        )))
    }
}

pub(crate) fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}
