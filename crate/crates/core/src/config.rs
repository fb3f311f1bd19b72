//! JSON experiment configuration.
//!
//! Parsing goes through `serde_path_to_error` so type errors carry the
//! offending field path; semantic validation then collects every problem
//! it finds rather than stopping at the first.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::PassiveAttack;
use crate::circuit::{Component, NonIdealityVector, WireModel, DEFAULT_PROPAGATION_SPEED};
use crate::noise::{NoiseParams, DEFAULT_T_EFF, MIN_SAMPLES_PER_BIT};
use crate::protocol::{Band, Distinguisher, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Baseline,
    QSweep,
    OmegaSweep,
    BlindingDemo,
    TvdTable,
    PowerBalance,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Baseline,
        Experiment::QSweep,
        Experiment::OmegaSweep,
        Experiment::BlindingDemo,
        Experiment::TvdTable,
        Experiment::PowerBalance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Baseline => "baseline",
            Experiment::QSweep => "q-sweep",
            Experiment::OmegaSweep => "omega-sweep",
            Experiment::BlindingDemo => "blinding-demo",
            Experiment::TvdTable => "tvd-table",
            Experiment::PowerBalance => "power-balance",
        }
    }

    pub fn parse(name: &str) -> Result<Self, ConfigError> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == name)
            .ok_or_else(|| {
                ConfigError::single(
                    "experiment",
                    format!(
                        "unknown experiment `{name}`; valid names are: {}",
                        Self::ALL.map(Experiment::name).join(", ")
                    ),
                )
            })
    }
}

/// What a Q sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepTarget {
    CableLength,
    Bandwidth,
    Resistivity,
    InverseDiameter,
    ParasiticCapacitance,
    TransientRatio,
    TemperatureMismatch,
    /// Series resistance of an explicit resistive wire, ohms.
    WireResistance,
}

impl SweepTarget {
    pub fn name(self) -> &'static str {
        match self.component() {
            Some(c) => c.name(),
            None => "wire_resistance",
        }
    }

    pub fn component(self) -> Option<Component> {
        Some(match self {
            SweepTarget::CableLength => Component::CableLength,
            SweepTarget::Bandwidth => Component::Bandwidth,
            SweepTarget::Resistivity => Component::Resistivity,
            SweepTarget::InverseDiameter => Component::InverseDiameter,
            SweepTarget::ParasiticCapacitance => Component::ParasiticCapacitance,
            SweepTarget::TransientRatio => Component::TransientRatio,
            SweepTarget::TemperatureMismatch => Component::TemperatureMismatch,
            SweepTarget::WireResistance => return None,
        })
    }

    /// `params` with the swept quantity set to `value`.
    pub fn apply(self, params: &SystemParams, value: f64) -> SystemParams {
        let mut p = params.clone();
        match self.component() {
            Some(c) => p.q = p.q.with(c, value),
            None => {
                let mut wire = p.wire_override.unwrap_or(WireModel::IDEAL);
                wire.series_resistance = value;
                p.wire_override = Some(wire);
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub target: SweepTarget,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SlopeConfig {
    /// Forward-difference step per component.
    pub steps: Vec<(Component, f64)>,
    pub richardson: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TvdConfig {
    pub q_values: Vec<f64>,
    pub max_n: usize,
}

impl Default for TvdConfig {
    fn default() -> Self {
        Self {
            q_values: vec![0.0, 0.01, 0.05],
            max_n: 12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlindingConfig {
    /// Spike amplitude as a multiple of the voltage band's upper edge.
    pub spike_factor: f64,
    pub position: usize,
}

impl Default for BlindingConfig {
    fn default() -> Self {
        Self {
            spike_factor: 100.0,
            position: 0,
        }
    }
}

/// System section of the file. Omitted fields take the values of
/// [`RawSystem::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawSystem {
    pub r0: f64,
    pub r1: f64,
    pub t_eff: f64,
    pub delta_f: f64,
    pub samples_per_bit: usize,
    pub oversample: usize,
    pub q: NonIdealityVector,
    pub wire: Option<WireModel>,
    pub propagation_speed: f64,
    /// `None` calibrates from ideal-line exchanges before the run.
    pub omega: Option<f64>,
    pub calibration_trials: usize,
    pub distinguisher: Distinguisher,
    pub voltage_band: Option<Band>,
    pub current_band: Option<Band>,
    pub master_seed: u64,
    pub auth_word_size: u64,
}

impl Default for RawSystem {
    fn default() -> Self {
        Self {
            r0: 1e3,
            r1: 1e4,
            t_eff: DEFAULT_T_EFF,
            delta_f: 1e3,
            samples_per_bit: 1000,
            oversample: 1,
            q: NonIdealityVector::IDEAL,
            wire: None,
            propagation_speed: DEFAULT_PROPAGATION_SPEED,
            omega: None,
            calibration_trials: 1000,
            distinguisher: Distinguisher::default(),
            voltage_band: None,
            current_band: None,
            master_seed: 1,
            auth_word_size: 1 << 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RawConfig {
    pub experiment: Option<String>,
    pub system: RawSystem,
    pub attacks: Vec<PassiveAttack>,
    pub n_trials: usize,
    pub key_length: usize,
    /// Estimate Eve's success on kept bits only.
    pub filter: bool,
    pub sweep: Option<SweepConfig>,
    pub omega_grid: Vec<f64>,
    pub slopes: SlopeConfig,
    pub tvd: TvdConfig,
    pub blinding: BlindingConfig,
    pub power_samples: usize,
    pub output_dir: PathBuf,
}

impl Default for RawConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            system: RawSystem::default(),
            attacks: PassiveAttack::ALL.to_vec(),
            n_trials: 2000,
            key_length: 64,
            filter: false,
            sweep: None,
            omega_grid: Vec::new(),
            slopes: SlopeConfig::default(),
            tvd: TvdConfig::default(),
            blinding: BlindingConfig::default(),
            power_samples: 1_000_000,
            output_dir: PathBuf::from("results"),
        }
    }
}

/// A validated configuration ready to run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub system: SystemParams,
    /// False when `omega` must be calibrated before running.
    pub omega_given: bool,
    pub calibration_trials: usize,
    pub attacks: Vec<PassiveAttack>,
    pub n_trials: usize,
    pub key_length: usize,
    pub filter: bool,
    pub sweep: Option<SweepConfig>,
    pub omega_grid: Vec<f64>,
    pub slopes: SlopeConfig,
    pub tvd: TvdConfig,
    pub blinding: BlindingConfig,
    pub power_samples: usize,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub issues: Vec<Issue>,
}

impl ConfigError {
    fn single(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            issues: vec![Issue {
                path: path.into(),
                message: message.into(),
            }],
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} issue(s)):", self.issues.len())?;
        for issue in &self.issues {
            writeln!(f, "  {}: {}", issue.path, issue.message)?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigError {}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub experiment: Option<Experiment>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    load_config_with(path, &Overrides::default())
}

pub fn load_config_with(
    path: &Path,
    overrides: &Overrides,
) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigError::single("<file>", format!("cannot read {}: {e}", path.display()))
    })?;
    parse_config(&text, overrides)
}

pub fn parse_config(text: &str, overrides: &Overrides) -> Result<ExperimentConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let mut raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." {
            "<root>".to_string()
        } else {
            path
        };
        ConfigError::single(path, e.into_inner().to_string())
    })?;
    if let Some(seed) = overrides.seed {
        raw.system.master_seed = seed;
    }
    if let Some(trials) = overrides.trials {
        raw.n_trials = trials;
    }
    if let Some(dir) = &overrides.output_dir {
        raw.output_dir = dir.clone();
    }
    let experiment = match (overrides.experiment, &raw.experiment) {
        (Some(e), _) => e,
        (None, Some(name)) => Experiment::parse(name)?,
        (None, None) => {
            return Err(ConfigError::single(
                "experiment",
                format!(
                    "no experiment given; valid names are: {}",
                    Experiment::ALL.map(Experiment::name).join(", ")
                ),
            ))
        }
    };
    validate(raw, experiment)
}

fn validate(raw: RawConfig, experiment: Experiment) -> Result<ExperimentConfig, ConfigError> {
    let mut issues = Vec::new();
    let mut bad = |path: &str, message: String| {
        issues.push(Issue {
            path: path.to_string(),
            message,
        })
    };
    let s = &raw.system;

    for (path, v) in [("system.r0", s.r0), ("system.r1", s.r1)] {
        if !(v.is_finite() && v > 0.0) {
            bad(path, format!("resistance must be positive, got {v}"));
        }
    }
    if s.r0 == s.r1 {
        bad(
            "system.r1",
            "R0 != R1 rule violated: the two bit resistors must differ".into(),
        );
    }
    if !(s.t_eff.is_finite() && s.t_eff > 0.0) {
        bad("system.t_eff", format!("must be positive, got {}", s.t_eff));
    }
    if !(s.delta_f.is_finite() && s.delta_f > 0.0) {
        bad(
            "system.delta_f",
            format!("must be positive, got {}", s.delta_f),
        );
    }
    if s.samples_per_bit < MIN_SAMPLES_PER_BIT {
        bad(
            "system.samples_per_bit",
            format!(
                "must be at least {MIN_SAMPLES_PER_BIT}, got {}",
                s.samples_per_bit
            ),
        );
    }
    if s.oversample == 0 {
        bad("system.oversample", "must be at least 1".into());
    }
    for c in Component::ALL {
        let v = s.q.get(c);
        if !(v.is_finite() && v >= 0.0) {
            bad(
                &format!("system.q.{}", c.name()),
                format!("must be finite and >= 0, got {v}"),
            );
        }
    }
    if s.q.temperature_mismatch >= 2.0 {
        bad("system.q.temperature_mismatch", "must be below 2".into());
    }
    if let Some(w) = s.wire {
        if w.validate().is_err() {
            bad(
                "system.wire",
                "resistance and capacitance must be finite and >= 0".into(),
            );
        }
    }
    if s.propagation_speed.is_nan() || s.propagation_speed <= 0.0 {
        bad("system.propagation_speed", "must be positive".into());
    }
    if let Some(omega) = s.omega {
        if omega.is_nan() || omega < 0.0 {
            bad("system.omega", format!("must be >= 0, got {omega}"));
        }
    } else if s.calibration_trials < 10 {
        bad(
            "system.calibration_trials",
            "at least 10 trials are needed to calibrate omega".into(),
        );
    }
    for (path, band) in [
        ("system.voltage_band", s.voltage_band),
        ("system.current_band", s.current_band),
    ] {
        if let Some(b) = band {
            if Band::new(b.lo, b.hi).is_err() {
                bad(
                    path,
                    format!("[{}, {}] is not a valid magnitude interval", b.lo, b.hi),
                );
            }
        }
    }
    if s.auth_word_size < 2 {
        bad("system.auth_word_size", "must be at least 2".into());
    }
    if raw.n_trials < crate::security::MIN_TRIALS {
        bad(
            "n_trials",
            format!(
                "must be at least {}, got {}",
                crate::security::MIN_TRIALS,
                raw.n_trials
            ),
        );
    }
    if raw.key_length == 0 {
        bad("key_length", "must be at least 1".into());
    }
    let needs_attacks = matches!(
        experiment,
        Experiment::Baseline | Experiment::QSweep | Experiment::OmegaSweep
    );
    if needs_attacks && raw.attacks.is_empty() {
        bad("attacks", "at least one attack is required".into());
    }
    for (i, (c, h)) in raw.slopes.steps.iter().enumerate() {
        if !(h.is_finite() && *h > 0.0) {
            bad(
                &format!("slopes.steps[{i}]"),
                format!("step for {} must be positive", c.name()),
            );
        }
    }
    match experiment {
        Experiment::QSweep => match &raw.sweep {
            None => bad("sweep", "q-sweep needs a sweep section".into()),
            Some(sw) if sw.values.is_empty() => {
                bad("sweep.values", "grid must not be empty".into())
            }
            Some(sw) => {
                for (i, v) in sw.values.iter().enumerate() {
                    if !(v.is_finite() && *v >= 0.0) {
                        bad(
                            &format!("sweep.values[{i}]"),
                            format!("must be finite and >= 0, got {v}"),
                        );
                    }
                }
            }
        },
        Experiment::OmegaSweep => {
            if raw.omega_grid.is_empty() {
                bad("omega_grid", "grid must not be empty".into());
            }
            for (i, v) in raw.omega_grid.iter().enumerate() {
                if v.is_nan() || *v < 0.0 {
                    bad(
                        &format!("omega_grid[{i}]"),
                        format!("must be >= 0, got {v}"),
                    );
                }
            }
        }
        Experiment::TvdTable => {
            if raw.tvd.q_values.is_empty() {
                bad("tvd.q_values", "grid must not be empty".into());
            }
            for (i, q) in raw.tvd.q_values.iter().enumerate() {
                if !(0.0..=0.5).contains(q) {
                    bad(
                        &format!("tvd.q_values[{i}]"),
                        format!("must lie in [0, 0.5], got {q}"),
                    );
                }
            }
            if raw.tvd.max_n == 0 || raw.tvd.max_n > crate::security::MAX_BRUTEFORCE_BITS {
                bad(
                    "tvd.max_n",
                    format!("must be in 1..={}", crate::security::MAX_BRUTEFORCE_BITS),
                );
            }
        }
        Experiment::BlindingDemo => {
            if !(raw.blinding.spike_factor.is_finite() && raw.blinding.spike_factor >= 0.0) {
                bad("blinding.spike_factor", "must be finite and >= 0".into());
            }
            if raw.blinding.position >= s.samples_per_bit {
                bad(
                    "blinding.position",
                    "must fall inside the clock period".into(),
                );
            }
        }
        Experiment::PowerBalance => {
            if raw.power_samples < MIN_SAMPLES_PER_BIT {
                bad(
                    "power_samples",
                    format!("must be at least {MIN_SAMPLES_PER_BIT}"),
                );
            }
        }
        Experiment::Baseline => {}
    }
    if let Err(e) = check_output_dir(&raw.output_dir) {
        bad("output_dir", e);
    }
    if !issues.is_empty() {
        return Err(ConfigError { issues });
    }

    let noise = NoiseParams {
        t_eff: s.t_eff,
        delta_f: s.delta_f,
        samples_per_bit: s.samples_per_bit,
        oversample: s.oversample,
    };
    let mut system = SystemParams::new(s.r0, s.r1, noise);
    system.q = s.q;
    system.wire_override = s.wire;
    system.propagation_speed = s.propagation_speed;
    system.omega = s.omega.unwrap_or(f64::INFINITY);
    system.distinguisher = s.distinguisher;
    system.master_seed = s.master_seed;
    system.auth_word_size = s.auth_word_size;
    system.reset_bands();
    if let Some(b) = s.voltage_band {
        system.voltage_band = b;
    }
    if let Some(b) = s.current_band {
        system.current_band = b;
    }
    if let Err(e) = system.validate() {
        return Err(ConfigError::single("system", e.to_string()));
    }

    Ok(ExperimentConfig {
        experiment,
        system,
        omega_given: s.omega.is_some(),
        calibration_trials: s.calibration_trials,
        attacks: raw.attacks,
        n_trials: raw.n_trials,
        key_length: raw.key_length,
        filter: raw.filter,
        sweep: raw.sweep,
        omega_grid: raw.omega_grid,
        slopes: raw.slopes,
        tvd: raw.tvd,
        blinding: raw.blinding,
        power_samples: raw.power_samples,
        output_dir: raw.output_dir,
    })
}

/// The directory must exist and be writable, or be creatable.
fn check_output_dir(dir: &Path) -> Result<(), String> {
    let mut probe = dir;
    loop {
        if probe.as_os_str().is_empty() {
            probe = Path::new(".");
        }
        match std::fs::metadata(probe) {
            Ok(m) if !m.is_dir() => return Err(format!("{} is not a directory", probe.display())),
            Ok(m) if m.permissions().readonly() => {
                return Err(format!("{} is not writable", probe.display()))
            }
            Ok(_) => return Ok(()),
            Err(_) => match probe.parent() {
                Some(parent) => probe = parent,
                None => return Err(format!("{} cannot be created", dir.display())),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        parse_config(text, &Overrides::default())
    }

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = parse(r#"{"experiment": "baseline"}"#).unwrap();
        assert_eq!(cfg.experiment, Experiment::Baseline);
        assert_eq!(cfg.system.r0, 1e3);
        assert_eq!(cfg.system.r1, 1e4);
        assert_eq!(cfg.system.noise.t_eff, 1e9);
        assert_eq!(cfg.system.noise.samples_per_bit, 1000);
        assert_eq!(cfg.system.distinguisher, Distinguisher::CrossCorrelation);
        assert!(!cfg.omega_given);
        assert_eq!(cfg.n_trials, 2000);
        assert_eq!(cfg.attacks.len(), 3);
        assert_eq!(cfg.output_dir, PathBuf::from("results"));
    }

    #[test]
    fn equal_resistors_rejected() {
        let err =
            parse(r#"{"experiment": "baseline", "system": {"r0": 500, "r1": 500}}"#).unwrap_err();
        assert!(err
            .issues
            .iter()
            .any(|i| i.path == "system.r1" && i.message.contains("R0 != R1")));
    }

    #[test]
    fn unknown_experiment_lists_valid_names() {
        let err = parse(r#"{"experiment": "warp-drive"}"#).unwrap_err();
        let msg = err.to_string();
        for e in Experiment::ALL {
            assert!(msg.contains(e.name()), "{msg}");
        }
    }

    #[test]
    fn type_errors_carry_field_paths() {
        let err = parse(r#"{"experiment": "baseline", "system": {"samples_per_bit": "many"}}"#)
            .unwrap_err();
        assert_eq!(err.issues[0].path, "system.samples_per_bit");
        let err = parse(r#"{"experiment": "baseline", "system": {"q": {"cable_lenght": 1}}}"#)
            .unwrap_err();
        assert!(err.issues[0].path.starts_with("system.q"), "{err}");
    }

    #[test]
    fn all_issues_are_collected() {
        let err = parse(
            r#"{"experiment": "q-sweep", "system": {"r0": -1, "samples_per_bit": 10}, "n_trials": 5}"#,
        )
        .unwrap_err();
        let paths: Vec<&str> = err.issues.iter().map(|i| i.path.as_str()).collect();
        for p in ["system.r0", "system.samples_per_bit", "n_trials", "sweep"] {
            assert!(paths.contains(&p), "{paths:?}");
        }
    }

    #[test]
    fn overrides_win() {
        let o = Overrides {
            experiment: Some(Experiment::TvdTable),
            seed: Some(99),
            trials: Some(300),
            output_dir: Some(PathBuf::from("elsewhere")),
        };
        let cfg = parse_config(r#"{"experiment": "baseline"}"#, &o).unwrap();
        assert_eq!(cfg.experiment, Experiment::TvdTable);
        assert_eq!(cfg.system.master_seed, 99);
        assert_eq!(cfg.n_trials, 300);
        assert_eq!(cfg.output_dir, PathBuf::from("elsewhere"));
    }

    #[test]
    fn sweep_and_grids_parse() {
        let cfg = parse(
            r#"{"experiment": "q-sweep",
                "sweep": {"target": "wire_resistance", "values": [0, 1, 5, 20]},
                "slopes": {"steps": [["temperature_mismatch", 0.1]]}}"#,
        )
        .unwrap();
        let sw = cfg.sweep.unwrap();
        assert_eq!(sw.target, SweepTarget::WireResistance);
        let p = sw.target.apply(&cfg.system, 5.0);
        assert_eq!(p.wire().series_resistance, 5.0);
        assert_eq!(
            cfg.slopes.steps,
            vec![(Component::TemperatureMismatch, 0.1)]
        );

        let err = parse(r#"{"experiment": "omega-sweep"}"#).unwrap_err();
        assert_eq!(err.issues[0].path, "omega_grid");
    }

    #[test]
    fn missing_file_is_reported() {
        let err = load_config(Path::new("/nonexistent/kljn.json")).unwrap_err();
        assert_eq!(err.issues[0].path, "<file>");
    }
}
