//! Kirchhoff loop of the key-exchange line.
//!
//! Each party is a noise voltage source in series with its selected
//! resistor; the two are joined by a wire. The ideal wire is a single node.
//! The non-ideal wire is one lumped section: half the series resistance on
//! each side of a shunt capacitor at the midpoint, with an integer-sample
//! propagation delay between the two ends.
//!
//! Sign convention: positive current flows from Alice toward Bob.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{ensure_domain, Error, Result};
use crate::noise::Waveform;

/// Non-ideality strengths of a realized line. All components are `>= 0` and
/// the all-zero vector is the mathematically ideal system.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonIdealityVector {
    /// Cable length in metres.
    pub cable_length: f64,
    /// Noise bandwidth in hertz.
    pub bandwidth: f64,
    /// Conductor resistivity in ohm metres.
    pub resistivity: f64,
    /// Reciprocal of the conductor diameter, 1/m.
    pub inverse_diameter: f64,
    /// Parasitic capacitance per metre, F/m.
    pub parasitic_capacitance: f64,
    /// Propagation time divided by the transient-protocol duration.
    pub transient_ratio: f64,
    /// `|T_A - T_B| / T_eff`.
    pub temperature_mismatch: f64,
}

/// Index into [`NonIdealityVector`], `x1` through `x7`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    CableLength,
    Bandwidth,
    Resistivity,
    InverseDiameter,
    ParasiticCapacitance,
    TransientRatio,
    TemperatureMismatch,
}

impl Component {
    pub const ALL: [Component; 7] = [
        Component::CableLength,
        Component::Bandwidth,
        Component::Resistivity,
        Component::InverseDiameter,
        Component::ParasiticCapacitance,
        Component::TransientRatio,
        Component::TemperatureMismatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::CableLength => "cable_length",
            Component::Bandwidth => "bandwidth",
            Component::Resistivity => "resistivity",
            Component::InverseDiameter => "inverse_diameter",
            Component::ParasiticCapacitance => "parasitic_capacitance",
            Component::TransientRatio => "transient_ratio",
            Component::TemperatureMismatch => "temperature_mismatch",
        }
    }
}

impl NonIdealityVector {
    pub const IDEAL: Self = Self {
        cable_length: 0.0,
        bandwidth: 0.0,
        resistivity: 0.0,
        inverse_diameter: 0.0,
        parasitic_capacitance: 0.0,
        transient_ratio: 0.0,
        temperature_mismatch: 0.0,
    };

    pub fn get(&self, c: Component) -> f64 {
        match c {
            Component::CableLength => self.cable_length,
            Component::Bandwidth => self.bandwidth,
            Component::Resistivity => self.resistivity,
            Component::InverseDiameter => self.inverse_diameter,
            Component::ParasiticCapacitance => self.parasitic_capacitance,
            Component::TransientRatio => self.transient_ratio,
            Component::TemperatureMismatch => self.temperature_mismatch,
        }
    }

    pub fn with(mut self, c: Component, value: f64) -> Self {
        let slot = match c {
            Component::CableLength => &mut self.cable_length,
            Component::Bandwidth => &mut self.bandwidth,
            Component::Resistivity => &mut self.resistivity,
            Component::InverseDiameter => &mut self.inverse_diameter,
            Component::ParasiticCapacitance => &mut self.parasitic_capacitance,
            Component::TransientRatio => &mut self.transient_ratio,
            Component::TemperatureMismatch => &mut self.temperature_mismatch,
        };
        *slot = value;
        self
    }

    pub fn is_ideal(&self) -> bool {
        Component::ALL.iter().all(|&c| self.get(c) == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for c in Component::ALL {
            let v = self.get(c);
            ensure_domain(v.is_finite() && v >= 0.0, || {
                format!("non-ideality {} must be finite and >= 0, got {v}", c.name())
            })?;
        }
        Ok(())
    }
}

/// Lumped single-section wire.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WireModel {
    /// Total series resistance in ohms, split evenly either side of the shunt.
    pub series_resistance: f64,
    /// Shunt capacitance at the midpoint in farads.
    pub shunt_capacitance: f64,
    /// End-to-end propagation delay in samples.
    pub delay_samples: usize,
    /// Samples discarded at the start of each clock period.
    pub transient_skip: usize,
}

impl WireModel {
    pub const IDEAL: Self = Self {
        series_resistance: 0.0,
        shunt_capacitance: 0.0,
        delay_samples: 0,
        transient_skip: 0,
    };

    /// Purely resistive wire.
    pub fn resistive(series_resistance: f64) -> Self {
        Self {
            series_resistance,
            ..Self::IDEAL
        }
    }

    pub fn is_ideal(&self) -> bool {
        self.series_resistance == 0.0 && self.shunt_capacitance == 0.0 && self.delay_samples == 0
    }

    pub fn validate(&self) -> Result<()> {
        ensure_domain(
            self.series_resistance.is_finite() && self.series_resistance >= 0.0,
            || {
                format!(
                    "wire resistance must be finite and >= 0, got {}",
                    self.series_resistance
                )
            },
        )?;
        ensure_domain(
            self.shunt_capacitance.is_finite() && self.shunt_capacitance >= 0.0,
            || {
                format!(
                    "wire capacitance must be finite and >= 0, got {}",
                    self.shunt_capacitance
                )
            },
        )
    }
}

/// Physical constants needed to turn a [`NonIdealityVector`] into a wire.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireGeometry {
    /// Signal propagation speed along the cable, m/s.
    pub propagation_speed: f64,
    /// Simulation sample rate, Hz.
    pub sample_rate: f64,
}

pub const DEFAULT_PROPAGATION_SPEED: f64 = 2e8;

const TRANSIENT_RATIO_FLOOR: f64 = 1e-9;

pub fn wire_from_q(q: &NonIdealityVector, geometry: &WireGeometry) -> WireModel {
    let series_resistance = if q.inverse_diameter == 0.0 {
        0.0
    } else {
        let radius = 1.0 / (2.0 * q.inverse_diameter);
        q.resistivity * q.cable_length / (PI * radius * radius)
    };
    let shunt_capacitance = q.parasitic_capacitance * q.cable_length;
    let delay_samples = if q.cable_length == 0.0 {
        0
    } else {
        (q.cable_length / geometry.propagation_speed * geometry.sample_rate).round() as usize
    };
    let transient_skip = if q.transient_ratio > 0.0 {
        (delay_samples as f64 / q.transient_ratio.max(TRANSIENT_RATIO_FLOOR)).ceil() as usize
    } else {
        0
    };
    WireModel {
        series_resistance,
        shunt_capacitance,
        delay_samples,
        transient_skip,
    }
}

/// Voltages and currents at both ends of the wire over one clock period.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopTrace {
    pub u_alice_end: Waveform,
    pub u_bob_end: Waveform,
    pub i_alice_end: Waveform,
    pub i_bob_end: Waveform,
}

impl LoopTrace {
    pub fn len(&self) -> usize {
        self.u_alice_end.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u_alice_end.is_empty()
    }

    pub fn sample_rate(&self) -> f64 {
        self.u_alice_end.sample_rate()
    }

    fn zeros(len: usize, rate: f64) -> Self {
        let z = Waveform::from_parts_unchecked(vec![0.0; len], rate);
        Self {
            u_alice_end: z.clone(),
            u_bob_end: z.clone(),
            i_alice_end: z.clone(),
            i_bob_end: z,
        }
    }
}

fn check_inputs(u_a: &Waveform, u_b: &Waveform, r_a: f64, r_b: f64) -> Result<()> {
    if u_a.len() != u_b.len() {
        return Err(Error::Contract(format!(
            "source waveforms differ in length ({} vs {})",
            u_a.len(),
            u_b.len()
        )));
    }
    if u_a.sample_rate() != u_b.sample_rate() {
        return Err(Error::Contract(format!(
            "source waveforms differ in sample rate ({} vs {})",
            u_a.sample_rate(),
            u_b.sample_rate()
        )));
    }
    ensure_domain(r_a.is_finite() && r_a > 0.0, || {
        format!("Alice's resistance must be positive, got {r_a}")
    })?;
    ensure_domain(r_b.is_finite() && r_b > 0.0, || {
        format!("Bob's resistance must be positive, got {r_b}")
    })
}

/// Solves the loop with an ideal wire: one common voltage and current.
pub fn solve_ideal_loop(u_a: &Waveform, u_b: &Waveform, r_a: f64, r_b: f64) -> Result<LoopTrace> {
    check_inputs(u_a, u_b, r_a, r_b)?;
    let total = r_a + r_b;
    let rate = u_a.sample_rate();
    let (voltage, current): (Vec<f64>, Vec<f64>) = u_a
        .samples()
        .iter()
        .zip(u_b.samples())
        .map(|(&a, &b)| ((a * r_b + b * r_a) / total, (a - b) / total))
        .unzip();
    let voltage = Waveform::from_parts_unchecked(voltage, rate);
    let current = Waveform::from_parts_unchecked(current, rate);
    Ok(LoopTrace {
        u_alice_end: voltage.clone(),
        u_bob_end: voltage,
        i_alice_end: current.clone(),
        i_bob_end: current,
    })
}

/// Solves the loop through a lumped RC wire with propagation delay.
///
/// The midpoint capacitor starts discharged at the beginning of the clock
/// period and is advanced with a forward-difference update.
pub fn solve_nonideal_loop(
    u_a: &Waveform,
    u_b: &Waveform,
    r_a: f64,
    r_b: f64,
    wire: &WireModel,
) -> Result<LoopTrace> {
    check_inputs(u_a, u_b, r_a, r_b)?;
    wire.validate()?;
    if wire.is_ideal() {
        return solve_ideal_loop(u_a, u_b, r_a, r_b);
    }

    let left = r_a + wire.series_resistance / 2.0;
    let right = r_b + wire.series_resistance / 2.0;
    let dt = 1.0 / u_a.sample_rate();
    if wire.shunt_capacitance > 0.0 {
        let tau = wire.shunt_capacitance * left * right / (left + right);
        if 2.0 * tau <= dt {
            return Err(Error::UnstableWire {
                time_constant: tau,
                sample_period: dt,
            });
        }
    }

    let section = Section {
        r_a,
        r_b,
        left,
        right,
        capacitance: wire.shunt_capacitance,
        dt,
    };
    let d = wire.delay_samples;
    if d == 0 {
        return Ok(section.run(u_a.samples(), u_b.samples(), u_a.sample_rate()));
    }

    // Linear superposition: each end sees its own source immediately and
    // the far source `d` samples late.
    let n = u_a.len();
    let rate = u_a.sample_rate();
    let zero = vec![0.0; n];
    let from_a = section.run(u_a.samples(), &zero, rate);
    let from_b = section.run(&zero, u_b.samples(), rate);
    let mut out = LoopTrace::zeros(n, rate);
    let delayed = |w: &Waveform, k: usize| if k >= d { w.samples()[k - d] } else { 0.0 };
    let mut ua = Vec::with_capacity(n);
    let mut ub = Vec::with_capacity(n);
    let mut ia = Vec::with_capacity(n);
    let mut ib = Vec::with_capacity(n);
    for k in 0..n {
        ua.push(from_a.u_alice_end.samples()[k] + delayed(&from_b.u_alice_end, k));
        ia.push(from_a.i_alice_end.samples()[k] + delayed(&from_b.i_alice_end, k));
        ub.push(delayed(&from_a.u_bob_end, k) + from_b.u_bob_end.samples()[k]);
        ib.push(delayed(&from_a.i_bob_end, k) + from_b.i_bob_end.samples()[k]);
    }
    out.u_alice_end = Waveform::from_parts_unchecked(ua, rate);
    out.u_bob_end = Waveform::from_parts_unchecked(ub, rate);
    out.i_alice_end = Waveform::from_parts_unchecked(ia, rate);
    out.i_bob_end = Waveform::from_parts_unchecked(ib, rate);
    Ok(out)
}

struct Section {
    r_a: f64,
    r_b: f64,
    /// `r_a` plus half the wire resistance.
    left: f64,
    right: f64,
    capacitance: f64,
    dt: f64,
}

impl Section {
    fn run(&self, u_a: &[f64], u_b: &[f64], rate: f64) -> LoopTrace {
        let n = u_a.len();
        let mut ua = Vec::with_capacity(n);
        let mut ub = Vec::with_capacity(n);
        let mut ia = Vec::with_capacity(n);
        let mut ib = Vec::with_capacity(n);
        let mut v_mid = 0.0;
        let g_left = 1.0 / self.left;
        let g_right = 1.0 / self.right;
        for (&a, &b) in u_a.iter().zip(u_b) {
            let (cur_a, cur_b) = if self.capacitance > 0.0 {
                let cur_a = (a - v_mid) * g_left;
                let cur_b = (v_mid - b) * g_right;
                v_mid += self.dt / self.capacitance * (cur_a - cur_b);
                (cur_a, cur_b)
            } else {
                let cur = (a - b) / (self.left + self.right);
                (cur, cur)
            };
            ia.push(cur_a);
            ib.push(cur_b);
            ua.push(a - cur_a * self.r_a);
            ub.push(b + cur_b * self.r_b);
        }
        LoopTrace {
            u_alice_end: Waveform::from_parts_unchecked(ua, rate),
            u_bob_end: Waveform::from_parts_unchecked(ub, rate),
            i_alice_end: Waveform::from_parts_unchecked(ia, rate),
            i_bob_end: Waveform::from_parts_unchecked(ib, rate),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{derive_stream, johnson_psd, sample_noise, NoiseParams, Party, BOLTZMANN};

    const RATE: f64 = 2e3;

    fn dc(v: f64, n: usize) -> Waveform {
        Waveform::constant(v, n, RATE).unwrap()
    }

    fn noise(r: f64, n: usize, seed: u64, party: Party) -> Waveform {
        let p = NoiseParams {
            samples_per_bit: n,
            ..NoiseParams::default()
        };
        let psd = johnson_psd(r, p.t_eff).unwrap();
        sample_noise(psd, &p, &mut derive_stream(seed, 0, party)).unwrap()
    }

    fn max_dev(a: &LoopTrace, b: &LoopTrace) -> f64 {
        let pairs = [
            (&a.u_alice_end, &b.u_alice_end),
            (&a.u_bob_end, &b.u_bob_end),
            (&a.i_alice_end, &b.i_alice_end),
            (&a.i_bob_end, &b.i_bob_end),
        ];
        pairs
            .iter()
            .flat_map(|(x, y)| {
                x.samples()
                    .iter()
                    .zip(y.samples())
                    .map(|(p, q)| (p - q).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn symmetric_divider() {
        let r = 1e3;
        let t = solve_ideal_loop(&dc(1.0, 10), &dc(0.0, 10), r, r).unwrap();
        assert!(t
            .u_alice_end
            .samples()
            .iter()
            .all(|&u| (u - 0.5).abs() < 1e-15));
        assert!(t
            .i_alice_end
            .samples()
            .iter()
            .all(|&i| (i - 1.0 / (2.0 * r)).abs() < 1e-18));
        assert_eq!(t.u_alice_end, t.u_bob_end);
        assert_eq!(t.i_alice_end, t.i_bob_end);
    }

    #[test]
    fn zero_sources_zero_trace() {
        let t = solve_ideal_loop(&dc(0.0, 8), &dc(0.0, 8), 1e3, 1e4).unwrap();
        assert!(t.u_alice_end.samples().iter().all(|&u| u == 0.0));
        assert!(t.i_bob_end.samples().iter().all(|&i| i == 0.0));
    }

    #[test]
    fn contract_and_domain_errors() {
        assert!(matches!(
            solve_ideal_loop(&dc(0.0, 8), &dc(0.0, 9), 1.0, 1.0),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            solve_ideal_loop(&dc(0.0, 8), &dc(0.0, 8), 0.0, 1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            solve_ideal_loop(&dc(0.0, 8), &dc(0.0, 8), 1.0, -2.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn ideal_mean_square_matches_parallel_resistance() {
        let n = 1_000_000;
        let (r0, r1) = (1e3, 1e4);
        let ua = noise(r0, n, 21, Party::Alice);
        let ub = noise(r1, n, 21, Party::Bob);
        let t = solve_ideal_loop(&ua, &ub, r0, r1).unwrap();
        let expected = 4.0 * BOLTZMANN * 1e9 * (r0 * r1 / (r0 + r1)) * 1e3;
        let got = t.u_alice_end.mean_square();
        assert!((got / expected - 1.0).abs() < 0.03, "{got} vs {expected}");
    }

    #[test]
    fn zero_wire_reduces_to_ideal_bit_exactly() {
        let ua = noise(1e3, 1000, 3, Party::Alice);
        let ub = noise(1e4, 1000, 3, Party::Bob);
        let ideal = solve_ideal_loop(&ua, &ub, 1e3, 1e4).unwrap();
        let wired = solve_nonideal_loop(&ua, &ub, 1e3, 1e4, &WireModel::IDEAL).unwrap();
        assert_eq!(ideal, wired);
    }

    #[test]
    fn resistive_ladder_matches_hand_solution() {
        let r = 1e3;
        let r_w = 50.0;
        let t = solve_nonideal_loop(&dc(1.0, 5), &dc(0.0, 5), r, r, &WireModel::resistive(r_w))
            .unwrap();
        let i = 1.0 / (2.0 * r + r_w);
        for k in 0..5 {
            assert!((t.i_alice_end.samples()[k] - i).abs() < 1e-15);
            assert!((t.i_bob_end.samples()[k] - i).abs() < 1e-15);
            assert!((t.u_alice_end.samples()[k] - (1.0 - i * r)).abs() < 1e-12);
            assert!((t.u_bob_end.samples()[k] - i * r).abs() < 1e-12);
        }
    }

    #[test]
    fn wire_resistance_breaks_end_symmetry() {
        let n = 200_000;
        let (r0, r1) = (1e3, 1e4);
        let ua = noise(r0, n, 8, Party::Alice);
        let ub = noise(r1, n, 8, Party::Bob);
        let t = solve_nonideal_loop(&ua, &ub, r0, r1, &WireModel::resistive(200.0)).unwrap();
        let a = t.u_alice_end.mean_square();
        let b = t.u_bob_end.mean_square();
        // Expected difference is 4kT df R_w^2 (R_A - R_B) / (R_A + R_B + R_w)^2 < 0.
        let c = 4.0 * BOLTZMANN * 1e9 * 1e3;
        let expected = c * 200.0f64.powi(2) * (r0 - r1) / (r0 + r1 + 200.0f64).powi(2);
        assert!(a < b, "alice end {a} should be quieter than bob end {b}");
        assert!(
            ((a - b) / expected - 1.0).abs() < 0.5,
            "{} vs {expected}",
            a - b
        );
    }

    #[test]
    fn power_into_bob_is_non_negative() {
        let ua = noise(1e3, 10_000, 4, Party::Alice);
        let zero = dc(0.0, 10_000);
        for wire in [WireModel::IDEAL, WireModel::resistive(30.0)] {
            let t = solve_nonideal_loop(&ua, &zero, 1e3, 1e4, &wire).unwrap();
            let p: f64 = t
                .u_bob_end
                .samples()
                .iter()
                .zip(t.i_bob_end.samples())
                .map(|(u, i)| u * i)
                .sum::<f64>()
                / 10_000.0;
            assert!(p >= 0.0);
        }
    }

    #[test]
    fn nonideal_trace_converges_to_ideal() {
        let ua = noise(1e3, 2000, 5, Party::Alice);
        let ub = noise(1e4, 2000, 5, Party::Bob);
        let ideal = solve_ideal_loop(&ua, &ub, 1e3, 1e4).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..8 {
            let r_w = 100.0 * 0.5f64.powi(k);
            let t = solve_nonideal_loop(&ua, &ub, 1e3, 1e4, &WireModel::resistive(r_w)).unwrap();
            let dev = max_dev(&t, &ideal);
            assert!(dev < prev, "deviation did not shrink at step {k}");
            prev = dev;
        }
        assert!(prev < 1e-2 * max_dev(&LoopTrace::zeros(2000, RATE), &ideal));
    }

    #[test]
    fn capacitor_guard_names_time_constant() {
        let wire = WireModel {
            series_resistance: 0.0,
            shunt_capacitance: 1e-9,
            ..WireModel::IDEAL
        };
        let err = solve_nonideal_loop(&dc(1.0, 10), &dc(0.0, 10), 1e3, 1e3, &wire).unwrap_err();
        match err {
            Error::UnstableWire { time_constant, .. } => {
                assert!((time_constant - 5e-7).abs() < 1e-18)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn capacitor_settles_to_resistive_solution() {
        // tau = C * (R||R) = 1e-3 * 500 = 0.5 s, dt = 0.5 ms.
        let wire = WireModel {
            series_resistance: 0.0,
            shunt_capacitance: 1e-3,
            ..WireModel::IDEAL
        };
        let t = solve_nonideal_loop(&dc(1.0, 20_000), &dc(0.0, 20_000), 1e3, 1e3, &wire).unwrap();
        assert_eq!(t.u_alice_end.samples()[0], 0.0);
        let last = *t.u_alice_end.samples().last().unwrap();
        assert!((last - 0.5).abs() < 1e-6);
    }

    #[test]
    fn delay_shifts_far_source() {
        let wire = WireModel {
            series_resistance: 10.0,
            delay_samples: 3,
            ..WireModel::IDEAL
        };
        let mut spike = vec![0.0; 10];
        spike[0] = 1.0;
        let ua = Waveform::new(spike, RATE).unwrap();
        let t = solve_nonideal_loop(&ua, &dc(0.0, 10), 1e3, 1e3, &wire).unwrap();
        assert!(t.u_alice_end.samples()[0] > 0.0);
        assert_eq!(t.u_bob_end.samples()[0], 0.0);
        assert!(t.u_bob_end.samples()[3] > 0.0);
    }

    #[test]
    fn wire_mapping_from_q() {
        let g = WireGeometry {
            propagation_speed: 2e8,
            sample_rate: 2e3,
        };
        assert_eq!(wire_from_q(&NonIdealityVector::IDEAL, &g), WireModel::IDEAL);

        let q = NonIdealityVector {
            cable_length: 1e3,
            resistivity: 1.7e-8,
            inverse_diameter: 1e3,
            ..NonIdealityVector::IDEAL
        };
        let w = wire_from_q(&q, &g);
        let expected = 1.7e-8 * 1e3 / (PI * 5e-4f64.powi(2));
        assert!((w.series_resistance - expected).abs() < 1e-12 * expected);

        let thinner = wire_from_q(&q.with(Component::InverseDiameter, 2e3), &g);
        assert!((thinner.series_resistance / w.series_resistance - 4.0).abs() < 1e-12);
    }

    #[test]
    fn wire_mapping_delay_and_transient() {
        let g = WireGeometry {
            propagation_speed: 2e8,
            sample_rate: 2e6,
        };
        let q = NonIdealityVector {
            cable_length: 1e4,
            parasitic_capacitance: 1e-10,
            transient_ratio: 0.1,
            ..NonIdealityVector::IDEAL
        };
        let w = wire_from_q(&q, &g);
        assert_eq!(w.delay_samples, 100);
        assert_eq!(w.transient_skip, 1000);
        assert!((w.shunt_capacitance - 1e-6).abs() < 1e-18);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ideal_loop_is_linear(
                a in prop::collection::vec(-1.0f64..1.0, 16),
                b in prop::collection::vec(-1.0f64..1.0, 16),
                scale in -10.0f64..10.0,
                ra in 1.0f64..1e5,
                rb in 1.0f64..1e5,
            ) {
                let ua = Waveform::new(a, RATE).unwrap();
                let ub = Waveform::new(b, RATE).unwrap();
                let base = solve_ideal_loop(&ua, &ub, ra, rb).unwrap();
                let scaled = solve_ideal_loop(&ua.scaled(scale), &ub.scaled(scale), ra, rb).unwrap();
                for (x, y) in base.u_alice_end.samples().iter().zip(scaled.u_alice_end.samples()) {
                    prop_assert!((x * scale - y).abs() <= 1e-12 * (1.0 + y.abs()));
                }
                for (x, y) in base.i_alice_end.samples().iter().zip(scaled.i_alice_end.samples()) {
                    prop_assert!((x * scale - y).abs() <= 1e-12 * (1.0 + y.abs()));
                }
                prop_assert_eq!(&base.u_alice_end, &base.u_bob_end);
            }
        }
    }
}
