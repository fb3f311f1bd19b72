//! Eavesdropper models.
//!
//! Passive attacks see only the wire (both ends when the wire is
//! non-ideal) and public knowledge. Each returns a guess between the two
//! secure states `LH` and `HL`. When the observation carries no
//! information for the rule in use, the guess falls back to a coin drawn
//! from Eve's own seeded stream.
//!
//! Power-flow estimation is a white-box tool: it splits the loop response
//! into each party's contribution, which a tap on the wire cannot do.

use serde::{Deserialize, Serialize};

use crate::circuit::{solve_nonideal_loop, LoopTrace, WireModel};
use crate::error::{ensure_domain, Result};
use crate::noise::{RandomStream, Waveform, BOLTZMANN};
use crate::protocol::{ExchangeRun, SpikeInjection, StateClass, SystemParams, TraceStats};

/// What Eve knows without touching the private resistor choices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublicKnowledge {
    pub r0: f64,
    pub r1: f64,
    pub t_eff: f64,
    pub delta_f: f64,
    pub omega: f64,
    /// The physical line is public: Eve may survey it.
    pub wire: WireModel,
}

impl PublicKnowledge {
    pub fn from_params(params: &SystemParams) -> Self {
        Self {
            r0: params.r0,
            r1: params.r1,
            t_eff: params.noise.t_eff,
            delta_f: params.noise.delta_f,
            omega: params.omega,
            wire: params.wire(),
        }
    }

    fn scale(&self) -> f64 {
        4.0 * BOLTZMANN * self.t_eff * self.delta_f
    }

    fn resistances(&self, state: StateClass) -> (f64, f64) {
        let (a, b) = state.bits();
        let pick = |bit| if bit { self.r1 } else { self.r0 };
        (pick(a), pick(b))
    }

    /// Predicted `(<u_alice_end^2>, <u_bob_end^2>)` for a state on a
    /// resistive wire at the nominal temperature.
    pub fn predicted_end_mean_squares(&self, state: StateClass) -> (f64, f64) {
        let (r_a, r_b) = self.resistances(state);
        let r_w = self.wire.series_resistance;
        let total = r_a + r_b + r_w;
        let c = self.scale() / (total * total);
        let alice = c * (r_a * (r_b + r_w).powi(2) + r_b * r_a * r_a);
        let bob = c * (r_b * (r_a + r_w).powi(2) + r_a * r_b * r_b);
        (alice, bob)
    }

    /// Nominal `<U^2>` of a secure state on an ideal line.
    pub fn predicted_secure_mean_square(&self) -> f64 {
        self.scale() * self.r0 * self.r1 / (self.r0 + self.r1)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EveObservation<'a> {
    pub taps: &'a LoopTrace,
    /// Leading samples excluded from Eve's statistics (the public transient window).
    pub skip: usize,
    pub public: PublicKnowledge,
}

impl<'a> EveObservation<'a> {
    pub fn new(taps: &'a LoopTrace, params: &SystemParams) -> Self {
        Self {
            taps,
            skip: params.wire().transient_skip,
            public: PublicKnowledge::from_params(params),
        }
    }

    pub fn stats(&self) -> TraceStats {
        TraceStats::from_trace(self.taps, self.skip)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub guess: StateClass,
    pub delta_seen: f64,
    /// Filled in by whoever knows the ground truth.
    pub correct: Option<bool>,
}

impl AttackOutcome {
    fn new(guess: StateClass, delta_seen: f64) -> Self {
        Self {
            guess,
            delta_seen,
            correct: None,
        }
    }

    pub fn graded(mut self, truth: StateClass) -> Self {
        self.correct = Some(self.guess == truth);
        self
    }
}

pub trait Attack: Sync {
    fn name(&self) -> &'static str;
    fn attack(&self, obs: &EveObservation<'_>, rng: &mut RandomStream) -> AttackOutcome;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassiveAttack {
    MeanSquare,
    CrossCorrelation,
    WireResistance,
}

impl PassiveAttack {
    pub const ALL: [PassiveAttack; 3] = [
        PassiveAttack::MeanSquare,
        PassiveAttack::CrossCorrelation,
        PassiveAttack::WireResistance,
    ];
}

impl Attack for PassiveAttack {
    fn name(&self) -> &'static str {
        match self {
            PassiveAttack::MeanSquare => "mean_square",
            PassiveAttack::CrossCorrelation => "cross_correlation",
            PassiveAttack::WireResistance => "wire_resistance",
        }
    }

    fn attack(&self, obs: &EveObservation<'_>, rng: &mut RandomStream) -> AttackOutcome {
        match self {
            PassiveAttack::MeanSquare => attack_mean_square(obs, rng),
            PassiveAttack::CrossCorrelation => attack_cross_correlation(obs, rng),
            PassiveAttack::WireResistance => attack_wire_resistance(obs, rng),
        }
    }
}

fn coin_guess(rng: &mut RandomStream) -> StateClass {
    if rng.coin() {
        StateClass::HL
    } else {
        StateClass::LH
    }
}

/// Mean-square fit of the end voltages against the two secure hypotheses.
///
/// On an ideal line both hypotheses predict the same values, so the
/// relative-deviation scores tie and the guess is Eve's coin.
pub fn attack_mean_square(obs: &EveObservation<'_>, rng: &mut RandomStream) -> AttackOutcome {
    let s = obs.stats();
    let score = |state| {
        let (pa, pb) = obs.public.predicted_end_mean_squares(state);
        ((s.ms_u_alice - pa) / pa).powi(2) + ((s.ms_u_bob - pb) / pb).powi(2)
    };
    let lh = score(StateClass::LH);
    let hl = score(StateClass::HL);
    let guess = if (lh - hl).abs() <= 1e-12 * (lh + hl) {
        coin_guess(rng)
    } else if lh < hl {
        StateClass::LH
    } else {
        StateClass::HL
    };
    AttackOutcome::new(guess, (s.ms_u_alice - s.ms_u_bob).abs())
}

/// Power-flow direction combined with the mean-square excess.
///
/// The sign of `<U I>` tells which party's generator runs hotter. A hotter
/// generator behind the small resistor raises `<U^2>` above the nominal
/// secure value; behind the large resistor it lowers it. Hence `LH` when
/// the two signs agree and `HL` when they differ. In particular, power
/// flowing toward Bob with `<U^2>` at or below nominal reads as `HL`.
pub fn attack_cross_correlation(obs: &EveObservation<'_>, rng: &mut RandomStream) -> AttackOutcome {
    let s = obs.stats();
    let flow = s.cross_ui;
    let excess = s.ms_u - obs.public.predicted_secure_mean_square();
    let product = flow * excess;
    let guess = if product > 0.0 {
        StateClass::LH
    } else if product < 0.0 || (flow > 0.0 && excess == 0.0) {
        StateClass::HL
    } else {
        coin_guess(rng)
    };
    AttackOutcome::new(guess, s.correlation_ui().abs())
}

/// Sign of the end-to-end mean-square asymmetry against its prediction.
pub fn attack_wire_resistance(obs: &EveObservation<'_>, rng: &mut RandomStream) -> AttackOutcome {
    let s = obs.stats();
    let measured = s.ms_u_alice - s.ms_u_bob;
    let predicted = |state| {
        let (a, b) = obs.public.predicted_end_mean_squares(state);
        a - b
    };
    let lh = predicted(StateClass::LH);
    let hl = predicted(StateClass::HL);
    let guess = if measured == 0.0 || lh.signum() == hl.signum() {
        coin_guess(rng)
    } else if measured.signum() == lh.signum() {
        StateClass::LH
    } else {
        StateClass::HL
    };
    AttackOutcome::new(guess, measured.abs())
}

/// Directed heating powers between the two resistors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerFlows {
    pub alice_to_bob: f64,
    pub bob_to_alice: f64,
    pub se_alice_to_bob: f64,
    pub se_bob_to_alice: f64,
    /// `4 k T_A R_A R_B / (R_A + R_B)^2 * delta_f`.
    pub reference_alice_to_bob: f64,
    pub reference_bob_to_alice: f64,
    pub n_samples: usize,
}

impl PowerFlows {
    pub fn combined_standard_error(&self) -> f64 {
        self.se_alice_to_bob.hypot(self.se_bob_to_alice)
    }
}

/// Closed-form power delivered by a generator at `t_src` behind `r_src`
/// into `r_dst` over bandwidth `delta_f`.
pub fn power_flow_reference(r_src: f64, r_dst: f64, t_src: f64, delta_f: f64) -> f64 {
    4.0 * BOLTZMANN * t_src * r_src * r_dst / (r_src + r_dst).powi(2) * delta_f
}

/// Monte-Carlo directed powers from one exchange's private source waveforms.
///
/// The loop is solved once per source with the other source silenced; by
/// linearity the two responses add up to the physical trace.
pub fn estimate_power_flows(
    u_alice: &Waveform,
    u_bob: &Waveform,
    r_a: f64,
    r_b: f64,
    wire: &WireModel,
    temperatures: (f64, f64),
    delta_f: f64,
) -> Result<PowerFlows> {
    let silent = Waveform::constant(0.0, u_alice.len(), u_alice.sample_rate())?;
    let from_alice = solve_nonideal_loop(u_alice, &silent, r_a, r_b, wire)?;
    let from_bob = solve_nonideal_loop(&silent, u_bob, r_a, r_b, wire)?;
    let skip = wire.transient_skip;
    let heating = |current: &Waveform, r: f64| {
        let xs: Vec<f64> = current.samples()[skip..]
            .iter()
            .map(|i| i * i * r)
            .collect();
        mean_and_se(&xs)
    };
    let (alice_to_bob, se_ab) = heating(&from_alice.i_bob_end, r_b);
    let (bob_to_alice, se_ba) = heating(&from_bob.i_alice_end, r_a);
    Ok(PowerFlows {
        alice_to_bob,
        bob_to_alice,
        se_alice_to_bob: se_ab,
        se_bob_to_alice: se_ba,
        reference_alice_to_bob: power_flow_reference(r_a, r_b, temperatures.0, delta_f),
        reference_bob_to_alice: power_flow_reference(r_b, r_a, temperatures.1, delta_f),
        n_samples: u_alice.len() - skip,
    })
}

/// [`estimate_power_flows`] on a recorded exchange.
pub fn estimate_exchange_power_flows(
    run: &ExchangeRun,
    params: &SystemParams,
) -> Result<PowerFlows> {
    estimate_power_flows(
        &run.u_alice_source,
        &run.u_bob_source,
        run.r_alice,
        run.r_bob,
        &run.wire,
        params.temperatures(),
        params.noise.delta_f,
    )
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Prepares a blinding spike of `amplitude` volts at sample `position`.
pub fn attack_blinding(
    params: &SystemParams,
    amplitude: f64,
    position: usize,
) -> Result<SpikeInjection> {
    ensure_domain(amplitude.is_finite() && amplitude >= 0.0, || {
        format!("spike amplitude must be finite and >= 0, got {amplitude}")
    })?;
    ensure_domain(position < params.noise.samples_per_bit, || {
        format!(
            "spike position {position} is outside the {}-sample clock period",
            params.noise.samples_per_bit
        )
    })?;
    Ok(SpikeInjection {
        amplitude,
        position,
    })
}

/// Eve reads how her injected current split between the two branches.
///
/// The branch toward the smaller resistor takes the larger share, so the
/// sum of the end currents at the spike sample is negative for `LH`.
pub fn blinding_guess(
    obs: &EveObservation<'_>,
    spike: &SpikeInjection,
    rng: &mut RandomStream,
) -> AttackOutcome {
    let k = spike.position;
    let split = obs.taps.i_alice_end.samples()[k] + obs.taps.i_bob_end.samples()[k];
    let guess = if spike.amplitude == 0.0 || split == 0.0 {
        coin_guess(rng)
    } else if split < 0.0 {
        StateClass::LH
    } else {
        StateClass::HL
    };
    AttackOutcome::new(guess, split.abs())
}

/// [`blinding_guess`] packaged as an [`Attack`] for the trial runner.
///
/// The same spike must be passed to the exchanges through
/// [`crate::protocol::ExchangeOptions::injection`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlindingAttack {
    pub spike: SpikeInjection,
}

impl Attack for BlindingAttack {
    fn name(&self) -> &'static str {
        "blinding"
    }

    fn attack(&self, obs: &EveObservation<'_>, rng: &mut RandomStream) -> AttackOutcome {
        blinding_guess(obs, &self.spike, rng)
    }
}
