//! Acceptance criteria 1-9. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line; exits nonzero on any FAIL.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use kljn::attacks::{
    attack_blinding, estimate_exchange_power_flows, Attack, BlindingAttack, PassiveAttack,
};
use kljn::circuit::WireModel;
use kljn::config::{parse_config, Overrides};
use kljn::experiment::run_experiment;
use kljn::noise::{derive_labeled, NoiseParams, BOLTZMANN};
use kljn::protocol::{
    calibrate_omega, party_bits, range_guard, run_bit_exchange, run_bit_exchange_with, Decision,
    ExchangeOptions, GuardMode, StateClass, SystemParams, Verdict,
};
use kljn::security::{
    amplified_success, run_attack_trials, tvd_approx, tvd_bruteforce, tvd_exact,
    xor_privacy_amplify, ProbabilityEstimate, Z_95,
};
use rayon::prelude::*;

const R0: f64 = 1e3;
const R1: f64 = 1e4;
const T_EFF: f64 = 1e9;
const DELTA_F: f64 = 1e3;
const SEED: u64 = 1;

// Tolerances.
const SPECTRUM_REL_TOL: f64 = 0.03;
const POWER_SE_TOL: f64 = 3.0;
const POWER_REL_TOL: f64 = 0.05;
const CHANCE_ABS_TOL: f64 = 0.02;
const SWEEP_SE_TOL: f64 = 2.0;
const SWEEP_MIN_SIGNAL_SE: f64 = 3.0;
const TVD_REL_TOL: f64 = 1e-12;
const TVD_APPROX_REL_TOL: f64 = 0.10;
const TVD_APPROX_NQ_MAX: f64 = 0.05;
const XOR_TARGET: f64 = 0.52;
const BLINDING_SE_TOL: f64 = 3.0;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
    limit: Duration,
}

fn params(samples_per_bit: usize) -> SystemParams {
    let mut p = SystemParams::new(
        R0,
        R1,
        NoiseParams {
            t_eff: T_EFF,
            delta_f: DELTA_F,
            samples_per_bit,
            oversample: 1,
        },
    );
    p.master_seed = SEED;
    p
}

fn rel(x: f64, reference: f64) -> f64 {
    ((x - reference) / reference).abs()
}

fn spectra() -> Outcome {
    let p = params(1_000_000);
    let u_ref = 4.0 * BOLTZMANN * T_EFF * R0 * R1 / (R0 + R1) * DELTA_F;
    let i_ref = 4.0 * BOLTZMANN * T_EFF / (R0 + R1) * DELTA_F;
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (k, state) in [StateClass::LH, StateClass::HL].into_iter().enumerate() {
        let (a, b) = state.bits();
        let rec = run_bit_exchange(&p, k as u64, a, b).expect("exchange");
        let (du, di) = (rel(rec.stats.ms_u, u_ref), rel(rec.stats.ms_i, i_ref));
        worst = worst.max(du).max(di);
        parts.push(format!("{state:?} dU {:.4} dI {:.4}", du, di));
    }
    Outcome {
        passed: worst <= SPECTRUM_REL_TOL,
        detail: format!("{} (limit {SPECTRUM_REL_TOL})", parts.join(", ")),
        limit: Duration::from_secs(10),
    }
}

fn power_balance() -> Outcome {
    let p = params(1_000_000);
    let (a, b) = StateClass::LH.bits();
    let run = run_bit_exchange_with(&p, 0, a, b, &ExchangeOptions::default()).expect("exchange");
    let f = estimate_exchange_power_flows(&run, &p).expect("power flows");
    let reference = 4.0 * BOLTZMANN * T_EFF * R0 * R1 / (R0 + R1).powi(2) * DELTA_F;
    let se = f.combined_standard_error();
    let gap_se = (f.alice_to_bob - f.bob_to_alice).abs() / se;
    let worst = rel(f.alice_to_bob, reference).max(rel(f.bob_to_alice, reference));
    Outcome {
        passed: gap_se <= POWER_SE_TOL && worst <= POWER_REL_TOL,
        detail: format!(
            "|P01 - P10| = {gap_se:.2} SE (limit {POWER_SE_TOL}), worst deviation from closed form {worst:.4} (limit {POWER_REL_TOL})"
        ),
        limit: Duration::from_secs(30),
    }
}

fn chance_level() -> Outcome {
    let p = params(1000);
    let attacks: Vec<&dyn Attack> = PassiveAttack::ALL
        .iter()
        .map(|a| a as &dyn Attack)
        .collect();
    let trials =
        run_attack_trials(&attacks, &p, 5000, &ExchangeOptions::default()).expect("trials");
    let mut passed = true;
    let mut parts = Vec::new();
    for t in &trials {
        let e = t.estimate(false);
        passed &= e.contains(0.5) && (e.p_hat - 0.5).abs() <= CHANCE_ABS_TOL;
        parts.push(format!(
            "{} {:.4} [{:.4}, {:.4}]",
            t.attack, e.p_hat, e.ci_low, e.ci_high
        ));
    }
    Outcome {
        passed,
        detail: format!("{} (|p-0.5| limit {CHANCE_ABS_TOL})", parts.join("; ")),
        limit: Duration::from_secs(120),
    }
}

fn monotonicity() -> Outcome {
    let mut base = params(10_000);
    base.omega = calibrate_omega(&base, 1000).expect("calibration");
    let attack = PassiveAttack::WireResistance;
    let mut sweep: Vec<(f64, ProbabilityEstimate)> = Vec::new();
    let mut filtered = None;
    for rw in [0.0, 1.0, 5.0, 20.0] {
        let p = SystemParams {
            wire_override: Some(WireModel::resistive(rw)),
            ..base.clone()
        };
        let trials =
            run_attack_trials(&[&attack], &p, 5000, &ExchangeOptions::default()).expect("trials");
        sweep.push((rw, trials[0].estimate(false)));
        if rw == 20.0 {
            filtered = Some(trials[0].estimate(true));
        }
    }
    let monotone = sweep.windows(2).all(|w| {
        let se = w[0].1.standard_error().hypot(w[1].1.standard_error());
        w[1].1.p_hat >= w[0].1.p_hat - SWEEP_SE_TOL * se
    });
    let top = sweep.last().unwrap().1;
    let signal = (top.p_hat - 0.5) / top.standard_error();
    let filtered = filtered.unwrap();
    let passed = monotone && signal >= SWEEP_MIN_SIGNAL_SE && filtered.p_hat < top.p_hat;
    let grid: Vec<String> = sweep
        .iter()
        .map(|(rw, e)| format!("{rw}:{:.4}", e.p_hat))
        .collect();
    Outcome {
        passed,
        detail: format!(
            "p_hat by R_w [{}], monotone within {SWEEP_SE_TOL} SE: {monotone}; p(20)-0.5 = {signal:.2} SE (min {SWEEP_MIN_SIGNAL_SE}); \
             omega {:.4e}: kept p_hat {:.4} vs unfiltered {:.4}",
            grid.join(", "),
            base.omega,
            filtered.p_hat,
            top.p_hat
        ),
        limit: Duration::from_secs(300),
    }
}

fn tvd() -> Outcome {
    let mut worst_brute = 0.0f64;
    let mut worst_approx = 0.0f64;
    for q in [0.0, 0.01, 0.05, 0.2] {
        for n in 1..=12 {
            let exact = tvd_exact(q, n).unwrap();
            let brute = tvd_bruteforce(q, n).unwrap();
            let approx = tvd_approx(q, n).unwrap();
            let gap = |x: f64| if exact == 0.0 { x.abs() } else { rel(x, exact) };
            worst_brute = worst_brute.max(gap(brute));
            if n as f64 * q <= TVD_APPROX_NQ_MAX {
                worst_approx = worst_approx.max(gap(approx));
            }
        }
    }
    Outcome {
        passed: worst_brute <= TVD_REL_TOL && worst_approx <= TVD_APPROX_REL_TOL,
        detail: format!(
            "bruteforce vs exact {worst_brute:.2e} (limit {TVD_REL_TOL:e}), approx vs exact {worst_approx:.4} where Nq <= {TVD_APPROX_NQ_MAX} (limit {TVD_APPROX_REL_TOL})"
        ),
        limit: Duration::from_secs(1),
    }
}

fn xor_amplification() -> Outcome {
    let pairs = 100_000;
    let p_raw = 0.6;
    let mut rng = derive_labeled(SEED, 0, b"acceptance/xor");
    let mut key = Vec::with_capacity(2 * pairs);
    let mut guesses = Vec::with_capacity(2 * pairs);
    for _ in 0..2 * pairs {
        let bit = rng.coin();
        key.push(bit);
        guesses.push(if rng.bernoulli(p_raw) { bit } else { !bit });
    }
    let (k, g) = xor_privacy_amplify(&key, &guesses).unwrap();
    let hits = k.iter().zip(&g).filter(|(a, b)| a == b).count();
    let p_hat = hits as f64 / pairs as f64;
    let target = amplified_success(p_raw);
    let half_width = Z_95 * (XOR_TARGET * (1.0 - XOR_TARGET) / pairs as f64).sqrt();
    Outcome {
        passed: (target - XOR_TARGET).abs() < 1e-12 && (p_hat - XOR_TARGET).abs() <= half_width,
        detail: format!("p' = {p_hat:.5}, interval {XOR_TARGET} +/- {half_width:.5}"),
        limit: Duration::from_secs(5),
    }
}

fn blinding() -> Outcome {
    let p = params(1000);
    let n = 1000;
    let spike = attack_blinding(&p, 100.0 * p.voltage_band.hi, 500).unwrap();
    let guarded = ExchangeOptions {
        injection: Some(spike),
        guard: GuardMode::Guarded,
    };
    // LL/HH periods are discarded before the range check runs, so the guard
    // verdict is checked directly on every attacked period.
    let range_discards = (0..n as u64)
        .into_par_iter()
        .filter(|&i| {
            let (a, b) = party_bits(SEED, i);
            let rec = run_bit_exchange_with(&p, i, a, b, &guarded).unwrap().record;
            range_guard(&rec.stats, &p.voltage_band, &p.current_band) == Verdict::Discard
                && rec.decision != Decision::Kept
        })
        .count();
    let open = ExchangeOptions {
        injection: Some(spike),
        guard: GuardMode::NoGuardClipping,
    };
    let trials = run_attack_trials(&[&BlindingAttack { spike }], &p, n, &open).unwrap();
    let e = trials[0].estimate(false);
    let margin = 0.5 + BLINDING_SE_TOL * e.standard_error();
    Outcome {
        passed: range_discards == n && e.p_hat > margin,
        detail: format!(
            "guarded: {range_discards}/{n} discarded by range guard; no guard: Eve p_hat {:.4} (needs > {margin:.4})",
            e.p_hat
        ),
        limit: Duration::from_secs(60),
    }
}

/// Close resistor pair so that inference errors are frequent enough to count.
const TREND_R1: f64 = 1.13e3;
const TREND_TRIALS: u64 = 10_000;

fn bit_error_trend() -> Outcome {
    let mut rates = Vec::new();
    for n in [100usize, 1_000, 10_000] {
        let mut p = params(n);
        p.r1 = TREND_R1;
        p.reset_bands();
        let errors: usize = (0..TREND_TRIALS)
            .into_par_iter()
            .map(|i| {
                let (a, b) = party_bits(SEED, i);
                let r = run_bit_exchange(&p, i, a, b).unwrap();
                usize::from(r.bob_inferred_bit != r.alice_bit)
                    + usize::from(r.alice_inferred_bit != r.bob_bit)
            })
            .sum();
        rates.push((n, errors as f64 / (2 * TREND_TRIALS) as f64));
    }
    let decreasing = rates.windows(2).all(|w| w[1].1 < w[0].1);
    let observed: Vec<(f64, f64)> = rates
        .iter()
        .filter(|(_, r)| *r > 0.0)
        .map(|&(n, r)| ((n as f64).ln(), r.ln()))
        .collect();
    let slopes: Vec<f64> = observed
        .windows(2)
        .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
        .collect();
    let log_monotone = slopes.iter().all(|&s| s < 0.0);
    let concave = slopes.windows(2).all(|w| w[1] <= w[0]);
    let table: Vec<String> = rates.iter().map(|(n, r)| format!("{n}:{r:.3e}")).collect();
    Outcome {
        passed: decreasing && log_monotone && concave && observed.len() >= 2,
        detail: format!(
            "error rate by samples_per_bit [{}] (R1 = {TREND_R1}); log-log slopes {:?}; strictly decreasing {decreasing}, convex-down {concave}",
            table.join(", "),
            slopes.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>()
        ),
        limit: Duration::from_secs(300),
    }
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

const DETERMINISM_CONFIGS: [&str; 6] = [
    r#"{"experiment": "baseline", "n_trials": 400, "key_length": 16, "system": {"calibration_trials": 200}}"#,
    r#"{"experiment": "q-sweep", "n_trials": 200, "system": {"omega": 0.05},
        "sweep": {"target": "temperature_mismatch", "values": [0, 0.1]},
        "slopes": {"steps": [["temperature_mismatch", 0.1]]}}"#,
    r#"{"experiment": "omega-sweep", "n_trials": 200, "system": {"wire": {"series_resistance": 20}, "omega": 0.05},
        "omega_grid": [0.01, 0.02, 1]}"#,
    r#"{"experiment": "blinding-demo", "n_trials": 200, "system": {"omega": 0.05}}"#,
    r#"{"experiment": "tvd-table", "system": {"omega": 1}}"#,
    r#"{"experiment": "power-balance", "power_samples": 100000, "system": {"omega": 1}}"#,
];

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let mut mismatched = Vec::new();
    let mut files = 0;
    for (k, text) in DETERMINISM_CONFIGS.iter().enumerate() {
        let run = |tag: &str| {
            let dir = root.path().join(format!("{k}-{tag}"));
            let o = Overrides {
                output_dir: Some(dir.clone()),
                ..Overrides::default()
            };
            let cfg = parse_config(text, &o).unwrap();
            run_experiment(&cfg).unwrap();
            read_dir(&dir)
        };
        let first = run("a");
        let second = single.install(|| run("b"));
        files += first.len();
        if first != second {
            mismatched.push(k);
        }
    }
    Outcome {
        passed: mismatched.is_empty() && files > 0,
        detail: format!(
            "{files} files from 6 experiments, rerun on a single worker; mismatching experiments: {mismatched:?}"
        ),
        limit: Duration::from_secs(120),
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1 spectra", spectra),
        ("2 power balance", power_balance),
        ("3 ideal chance level", chance_level),
        ("4 non-ideality monotonicity", monotonicity),
        ("5 total variation distance", tvd),
        ("6 XOR amplification", xor_amplification),
        ("7 blinding defense", blinding),
        ("8 bit-error trend", bit_error_trend),
        ("9 determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failures = 0;
    for (name, criterion) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let out = criterion();
        let elapsed = start.elapsed();
        let in_time = elapsed <= out.limit;
        let passed = out.passed && in_time;
        failures += usize::from(!passed);
        println!(
            "{} criterion {name}: {} [{:.2}s, limit {}s]",
            if passed { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            out.limit.as_secs()
        );
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criterion(s) failed");
        ExitCode::FAILURE
    }
}
