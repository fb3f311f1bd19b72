//! Named experiment suites behind `kljn-sim`.
//!
//! Every run writes its CSV tables, a `summary.json` with the invariant
//! checks and, for attack experiments, a `report.json` holding a
//! [`SecurityReport`]. Files are written to a temporary sibling and renamed
//! into place. Nothing written depends on timing or worker count.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::attacks::{
    attack_blinding, estimate_exchange_power_flows, Attack, BlindingAttack, PassiveAttack,
};
use crate::config::{Experiment, ExperimentConfig};
use crate::error::{Error, Result};
use crate::protocol::{
    calibrate_omega, run_bit_exchange_with, run_key_exchange, Decision, ExchangeOptions, GuardMode,
    StateClass, SystemParams,
};
use crate::security::{
    run_attack_trials, sensitivity_slopes, tvd_approx, tvd_bruteforce, tvd_exact, AttackReport,
    AttackTrials, ProbabilityEstimate, SecurityReport, Slope,
};

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "KLJN_SIM_WORKERS";

/// Header shared by every sweep table after its leading key column.
pub const SWEEP_COLUMNS: [&str; 5] = [
    "p_hat",
    "ci_low",
    "ci_high",
    "kept_fraction",
    "delta_median",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub experiment: &'static str,
    pub master_seed: u64,
    pub n_trials: usize,
    pub omega: f64,
    /// Human-readable result table, one line per row.
    pub table: Vec<String>,
    pub checks: Vec<Check>,
    /// Output files relative to the output directory, in write order.
    pub files: Vec<String>,
}

impl RunSummary {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for RunSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "experiment {} (seed {}, {} trials, omega {:.6e})",
            self.experiment, self.master_seed, self.n_trials, self.omega
        )?;
        for line in &self.table {
            writeln!(f, "  {line}")?;
        }
        writeln!(f, "checks:")?;
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "  [{tag}] {}: {}", c.name, c.detail)?;
        }
        writeln!(f, "files:")?;
        for file in &self.files {
            writeln!(f, "  {file}")?;
        }
        Ok(())
    }
}

/// One row of a sweep table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub estimate: ProbabilityEstimate,
    pub kept_fraction: f64,
    pub delta_median: f64,
}

impl SweepRow {
    fn from_trials(value: f64, trials: &AttackTrials, filter: bool) -> Self {
        Self {
            value,
            estimate: trials.estimate(filter),
            kept_fraction: trials.kept_fraction(),
            delta_median: trials.delta_median(),
        }
    }

    fn fields(&self) -> [f64; 5] {
        [
            self.estimate.p_hat,
            self.estimate.ci_low,
            self.estimate.ci_high,
            self.kept_fraction,
            self.delta_median,
        ]
    }
}

/// Runs the configured experiment and writes its artifacts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let name = cfg.experiment.name();
    let params =
        resolve_params(cfg).map_err(|e| e.context(format!("{name}: calibrating omega")))?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| {
        Error::from(e).context(format!("{name}: creating {}", cfg.output_dir.display()))
    })?;
    let mut out = Output::new(&cfg.output_dir);
    let mut summary = RunSummary {
        experiment: name,
        master_seed: params.master_seed,
        n_trials: cfg.n_trials,
        omega: params.omega,
        table: Vec::new(),
        checks: Vec::new(),
        files: Vec::new(),
    };
    let result = match cfg.experiment {
        Experiment::Baseline => baseline(cfg, &params, &mut out, &mut summary),
        Experiment::QSweep => q_sweep(cfg, &params, &mut out, &mut summary),
        Experiment::OmegaSweep => omega_sweep(cfg, &params, &mut out, &mut summary),
        Experiment::BlindingDemo => blinding_demo(cfg, &params, &mut out, &mut summary),
        Experiment::TvdTable => tvd_table(cfg, &mut out, &mut summary),
        Experiment::PowerBalance => power_balance(cfg, &params, &mut out, &mut summary),
    };
    result.map_err(|e| e.context(name))?;
    summary.files = out.files.clone();
    summary.files.push("summary.json".into());
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    out.write("summary.json", json.as_bytes())
        .map_err(|e| e.context(format!("{name}: writing summary.json")))?;
    Ok(summary)
}

/// Configured parameters with `omega` calibrated when the file left it out.
pub fn resolve_params(cfg: &ExperimentConfig) -> Result<SystemParams> {
    let mut params = cfg.system.clone();
    if !cfg.omega_given {
        params.omega = calibrate_omega(&params, cfg.calibration_trials)?;
    }
    Ok(params)
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(header).map_err(io)?;
        for row in rows {
            w.write_record(row).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        self.write(name, &bytes)
    }

    fn report(&mut self, report: &SecurityReport) -> Result<()> {
        self.write("report.json", report.to_json().as_bytes())
    }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::from(e.error))?;
    Ok(())
}

fn passive(cfg: &ExperimentConfig) -> Vec<&dyn Attack> {
    cfg.attacks.iter().map(|a| a as &dyn Attack).collect()
}

fn sweep_row_strings(key: String, row: &SweepRow) -> Vec<String> {
    let mut v = vec![key];
    v.extend(row.fields().iter().map(f64::to_string));
    v
}

fn sweep_header(key: &str) -> Vec<&str> {
    let mut h = vec![key];
    h.extend(SWEEP_COLUMNS);
    h
}

fn table_line(label: &str, row: &SweepRow) -> String {
    let e = &row.estimate;
    format!(
        "{label:<28} p_hat {:.4} [{:.4}, {:.4}] n {:>6} kept {:.4} delta_med {:.4e}",
        e.p_hat, e.ci_low, e.ci_high, e.n_trials, row.kept_fraction, row.delta_median
    )
}

fn slopes_for(
    cfg: &ExperimentConfig,
    params: &SystemParams,
    attack: PassiveAttack,
) -> Result<Vec<Slope>> {
    if cfg.slopes.steps.is_empty() {
        return Ok(Vec::new());
    }
    sensitivity_slopes(
        |q| {
            let p = SystemParams {
                q: *q,
                ..params.clone()
            };
            let trials =
                run_attack_trials(&[&attack], &p, cfg.n_trials, &ExchangeOptions::default())?;
            Ok(trials[0].estimate(cfg.filter))
        },
        &params.q,
        &cfg.slopes.steps,
        cfg.slopes.richardson,
    )
}

fn build_report(
    cfg: &ExperimentConfig,
    params: &SystemParams,
    trials: &[AttackTrials],
) -> Result<SecurityReport> {
    let attacks = cfg
        .attacks
        .iter()
        .zip(trials)
        .map(|(&attack, t)| {
            let slopes = slopes_for(cfg, params, attack)?;
            AttackReport::new(&t.attack, &t.estimate(cfg.filter), slopes, cfg.key_length)
        })
        .collect::<Result<_>>()?;
    Ok(SecurityReport { attacks })
}

fn line_is_ideal(params: &SystemParams) -> bool {
    params.wire().is_ideal() && params.q.temperature_mismatch == 0.0
}

fn baseline(
    cfg: &ExperimentConfig,
    params: &SystemParams,
    out: &mut Output,
    summary: &mut RunSummary,
) -> Result<()> {
    let trials = run_attack_trials(
        &passive(cfg),
        params,
        cfg.n_trials,
        &ExchangeOptions::default(),
    )?;
    let mut rows = Vec::new();
    for t in &trials {
        let row = SweepRow::from_trials(f64::NAN, t, cfg.filter);
        summary.table.push(table_line(&t.attack, &row));
        rows.push(sweep_row_strings(t.attack.clone(), &row));
        if line_is_ideal(params) {
            let e = &row.estimate;
            summary.checks.push(Check::new(
                format!("{} at chance on the ideal line", t.attack),
                e.contains(0.5),
                format!(
                    "p_hat {:.4}, 95% CI [{:.4}, {:.4}]",
                    e.p_hat, e.ci_low, e.ci_high
                ),
            ));
        }
    }
    out.csv("baseline.csv", &sweep_header("attack"), &rows)?;

    let max_attempts = 1000 + 200 * cfg.key_length;
    let key = run_key_exchange(params, cfg.key_length, max_attempts)?;
    let leaked = key
        .records
        .iter()
        .filter(|r| r.decision == Decision::Kept && !r.state_class.is_secure())
        .count();
    summary.table.push(format!(
        "key exchange: {} bits from {} clock periods, {} bit errors, {} auth bits",
        key.alice_key.len(),
        key.records.len(),
        key.bit_errors(),
        key.auth_bits_spent
    ));
    summary.checks.push(Check::new(
        "no insecure-state bit is kept",
        leaked == 0,
        format!("{leaked} kept LL/HH periods out of {}", key.records.len()),
    ));

    out.report(&build_report(cfg, params, &trials)?)
}

fn q_sweep(
    cfg: &ExperimentConfig,
    params: &SystemParams,
    out: &mut Output,
    summary: &mut RunSummary,
) -> Result<()> {
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("q-sweep needs a sweep section".into()))?;
    let key = sweep.target.name();
    let attacks = passive(cfg);
    let mut per_attack: Vec<Vec<SweepRow>> = vec![Vec::new(); attacks.len()];
    let mut last = Vec::new();
    for &value in &sweep.values {
        let p = sweep.target.apply(params, value);
        let trials = run_attack_trials(&attacks, &p, cfg.n_trials, &ExchangeOptions::default())
            .map_err(|e| e.context(format!("{key} = {value}")))?;
        for (rows, t) in per_attack.iter_mut().zip(&trials) {
            rows.push(SweepRow::from_trials(value, t, cfg.filter));
        }
        last = trials;
    }
    for (attack, rows) in attacks.iter().zip(&per_attack) {
        let name = attack.name();
        let lines: Vec<Vec<String>> = rows
            .iter()
            .map(|r| sweep_row_strings(r.value.to_string(), r))
            .collect();
        out.csv(&format!("q_sweep_{name}.csv"), &sweep_header(key), &lines)?;
        for r in rows {
            summary
                .table
                .push(table_line(&format!("{name} {key}={}", r.value), r));
        }
        let worst = rows
            .windows(2)
            .map(|w| {
                let se = w[0]
                    .estimate
                    .standard_error()
                    .hypot(w[1].estimate.standard_error());
                (w[1].estimate.p_hat - w[0].estimate.p_hat) / se.max(f64::MIN_POSITIVE)
            })
            .fold(f64::INFINITY, f64::min);
        summary.checks.push(Check::new(
            format!("{name} p_hat non-decreasing in {key}"),
            worst >= -3.0,
            if rows.len() < 2 {
                "single grid point".to_string()
            } else {
                format!(
                    "largest drop between neighbours {:.2} SE (limit 3)",
                    (-worst).max(0.0)
                )
            },
        ));
    }
    let at_last = sweep
        .target
        .apply(params, *sweep.values.last().expect("grid validated"));
    out.report(&build_report(cfg, &at_last, &last)?)
}

fn omega_sweep(
    cfg: &ExperimentConfig,
    params: &SystemParams,
    out: &mut Output,
    summary: &mut RunSummary,
) -> Result<()> {
    let open = SystemParams {
        omega: f64::INFINITY,
        ..params.clone()
    };
    let trials = run_attack_trials(
        &passive(cfg),
        &open,
        cfg.n_trials,
        &ExchangeOptions::default(),
    )?;
    let mut grid = cfg.omega_grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    for t in &trials {
        let unfiltered = t.estimate(false);
        let rows: Vec<SweepRow> = grid
            .iter()
            .map(|&omega| {
                let at = AttackTrials {
                    attack: t.attack.clone(),
                    outcomes: t
                        .outcomes
                        .iter()
                        .map(|o| {
                            let mut o = *o;
                            o.kept = o.kept && o.delta < omega;
                            o
                        })
                        .collect(),
                };
                SweepRow {
                    delta_median: kept_delta_median(&at),
                    ..SweepRow::from_trials(omega, &at, true)
                }
            })
            .collect();
        let lines: Vec<Vec<String>> = rows
            .iter()
            .map(|r| sweep_row_strings(r.value.to_string(), r))
            .collect();
        out.csv(
            &format!("omega_sweep_{}.csv", t.attack),
            &sweep_header("omega"),
            &lines,
        )?;
        for r in &rows {
            summary.table.push(table_line(
                &format!("{} omega={:.4e}", t.attack, r.value),
                r,
            ));
        }
        let monotone = rows
            .windows(2)
            .all(|w| w[0].kept_fraction <= w[1].kept_fraction);
        summary.checks.push(Check::new(
            format!("{} kept fraction non-decreasing in omega", t.attack),
            monotone,
            format!(
                "kept from {:.4} to {:.4}",
                rows.first().map_or(0.0, |r| r.kept_fraction),
                rows.last().map_or(0.0, |r| r.kept_fraction)
            ),
        ));
        let excess = rows
            .iter()
            .filter(|r| !r.estimate.degenerate)
            .map(|r| {
                let se = r
                    .estimate
                    .standard_error()
                    .hypot(unfiltered.standard_error());
                (r.estimate.p_hat - unfiltered.p_hat) / se.max(f64::MIN_POSITIVE)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        summary.checks.push(Check::new(
            format!("{} filtering never helps Eve", t.attack),
            excess <= 3.0,
            format!(
                "unfiltered p_hat {:.4}; largest filtered excess {:.2} SE (limit 3)",
                unfiltered.p_hat,
                excess.max(0.0)
            ),
        ));
    }
    out.report(&build_report(cfg, params, &trials)?)
}

/// Median `delta` of the kept bits; `NaN` when nothing is kept.
fn kept_delta_median(trials: &AttackTrials) -> f64 {
    let kept = AttackTrials {
        attack: String::new(),
        outcomes: trials.outcomes.iter().filter(|o| o.kept).copied().collect(),
    };
    kept.delta_median()
}

fn blinding_demo(
    cfg: &ExperimentConfig,
    params: &SystemParams,
    out: &mut Output,
    summary: &mut RunSummary,
) -> Result<()> {
    let amplitude = cfg.blinding.spike_factor * params.voltage_band.hi;
    let spike = attack_blinding(params, amplitude, cfg.blinding.position)?;
    let attack = BlindingAttack { spike };
    let mut rows = Vec::new();
    let mut report = None;
    for (mode, guard) in [
        ("guarded", GuardMode::Guarded),
        ("no_guard_clipping", GuardMode::NoGuardClipping),
    ] {
        let options = ExchangeOptions {
            injection: Some(spike),
            guard,
        };
        let trials = run_attack_trials(&[&attack], params, cfg.n_trials, &options)
            .map_err(|e| e.context(mode))?;
        let t = &trials[0];
        let row = SweepRow::from_trials(f64::NAN, t, true);
        summary.table.push(table_line(mode, &row));
        rows.push(sweep_row_strings(mode.to_string(), &row));
        match guard {
            GuardMode::Guarded => summary.checks.push(Check::new(
                "range guard discards every blinded bit",
                row.kept_fraction == 0.0,
                format!("kept fraction {:.4}", row.kept_fraction),
            )),
            GuardMode::NoGuardClipping => {
                let e = t.estimate(false);
                let margin = 0.5 + 3.0 * e.standard_error();
                summary.checks.push(Check::new(
                    "blinding succeeds without the guard",
                    !e.degenerate && e.p_hat > margin,
                    format!(
                        "p_hat {:.4} over {} attacked bits (needs > {margin:.4})",
                        e.p_hat, e.n_trials
                    ),
                ));
                report = Some(AttackReport::new(
                    &t.attack,
                    &e,
                    Vec::new(),
                    cfg.key_length,
                )?);
            }
        }
    }
    out.csv("blinding.csv", &sweep_header("mode"), &rows)?;
    out.report(&SecurityReport {
        attacks: report.into_iter().collect(),
    })
}

/// Header of `tvd_table.csv`.
pub const TVD_COLUMNS: [&str; 5] = ["q", "n", "tvd_exact", "tvd_approx", "tvd_bruteforce"];

fn tvd_table(cfg: &ExperimentConfig, out: &mut Output, summary: &mut RunSummary) -> Result<()> {
    let mut rows = Vec::new();
    let mut worst_brute = 0.0f64;
    let mut worst_approx = 0.0f64;
    for &q in &cfg.tvd.q_values {
        for n in 1..=cfg.tvd.max_n {
            let exact = tvd_exact(q, n)?;
            let approx = tvd_approx(q, n)?;
            let brute = tvd_bruteforce(q, n)?;
            worst_brute = worst_brute.max(relative_gap(brute, exact));
            if n as f64 * q <= 0.05 {
                worst_approx = worst_approx.max(relative_gap(approx, exact));
            }
            rows.push(vec![
                q.to_string(),
                n.to_string(),
                exact.to_string(),
                approx.to_string(),
                brute.to_string(),
            ]);
        }
        summary.table.push(format!(
            "q {q:<6} tvd(N={}) exact {:.6e} approx {:.6e}",
            cfg.tvd.max_n,
            tvd_exact(q, cfg.tvd.max_n)?,
            tvd_approx(q, cfg.tvd.max_n)?
        ));
    }
    out.csv("tvd_table.csv", &TVD_COLUMNS, &rows)?;
    summary.checks.push(Check::new(
        "bruteforce matches closed form",
        worst_brute <= 1e-12,
        format!("largest relative gap {worst_brute:.3e} (limit 1e-12)"),
    ));
    summary.checks.push(Check::new(
        "first-order approximation where N q <= 0.05",
        worst_approx <= 0.10,
        format!("largest relative gap {worst_approx:.4} (limit 0.10)"),
    ));
    Ok(())
}

fn relative_gap(x: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        if x.abs() <= 1e-15 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        ((x - reference) / reference).abs()
    }
}

/// Header of `power_balance.csv`.
pub const POWER_COLUMNS: [&str; 8] = [
    "state",
    "alice_to_bob",
    "bob_to_alice",
    "se_alice_to_bob",
    "se_bob_to_alice",
    "reference_alice_to_bob",
    "reference_bob_to_alice",
    "n_samples",
];

fn power_balance(
    cfg: &ExperimentConfig,
    params: &SystemParams,
    out: &mut Output,
    summary: &mut RunSummary,
) -> Result<()> {
    let mut p = params.clone();
    p.noise.samples_per_bit = cfg.power_samples;
    let (t_a, t_b) = p.temperatures();
    let mut rows = Vec::new();
    for (i, state) in [StateClass::LH, StateClass::HL].into_iter().enumerate() {
        let (a, b) = state.bits();
        let run = run_bit_exchange_with(&p, i as u64, a, b, &ExchangeOptions::default())?;
        let flows = estimate_exchange_power_flows(&run, &p)?;
        let se = flows.combined_standard_error();
        let net = flows.alice_to_bob - flows.bob_to_alice;
        summary.table.push(format!(
            "{state:?}: A->B {:.6e} W, B->A {:.6e} W, net {:.3e} (SE {:.3e})",
            flows.alice_to_bob, flows.bob_to_alice, net, se
        ));
        if t_a == t_b {
            summary.checks.push(Check::new(
                format!("{state:?} net power flow is zero"),
                net.abs() <= 3.0 * se,
                format!("|net| = {:.2} SE (limit 3)", net.abs() / se),
            ));
        } else {
            let hotter_sends = if t_a > t_b { net > 0.0 } else { net < 0.0 };
            summary.checks.push(Check::new(
                format!("{state:?} net power flows from the hotter side"),
                hotter_sends,
                format!("T_A {t_a:.4e} K, T_B {t_b:.4e} K, net {net:.3e} W"),
            ));
        }
        if run.wire.is_ideal() {
            let gap = relative_gap(flows.alice_to_bob, flows.reference_alice_to_bob).max(
                relative_gap(flows.bob_to_alice, flows.reference_bob_to_alice),
            );
            summary.checks.push(Check::new(
                format!("{state:?} flows match the closed form"),
                gap <= 0.05,
                format!("largest relative gap {gap:.4} (limit 0.05)"),
            ));
        }
        rows.push(vec![
            format!("{state:?}"),
            flows.alice_to_bob.to_string(),
            flows.bob_to_alice.to_string(),
            flows.se_alice_to_bob.to_string(),
            flows.se_bob_to_alice.to_string(),
            flows.reference_alice_to_bob.to_string(),
            flows.reference_bob_to_alice.to_string(),
            flows.n_samples.to_string(),
        ]);
    }
    out.csv("power_balance.csv", &POWER_COLUMNS, &rows)
}
