//! Security quantification.
//!
//! Eve's per-bit success probability is estimated by Monte-Carlo over
//! secure exchanges with a Wilson score interval. From it follow the
//! advantage `q = p - 1/2`, finite-difference sensitivities with respect to
//! the non-ideality vector, and the total variation distance between Eve's
//! key distribution and a uniform key under the i.i.d.-per-bit model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{Attack, EveObservation};
use crate::circuit::{Component, NonIdealityVector};
use crate::error::{ensure_domain, Error, Result};
use crate::noise::derive_labeled;
use crate::protocol::{
    median, run_bit_exchange_with, Decision, ExchangeOptions, StateClass, SystemParams,
};

/// Two-sided 95% standard normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

pub const MIN_TRIALS: usize = 100;

/// Largest key length [`tvd_bruteforce`] will enumerate.
pub const MAX_BRUTEFORCE_BITS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEstimate {
    pub p_hat: f64,
    pub successes: usize,
    pub n_trials: usize,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Set when no trials survived filtering; `p_hat` is then 0.5 and the
    /// interval is `[0, 1]`.
    pub degenerate: bool,
}

impl ProbabilityEstimate {
    pub fn from_counts(successes: usize, n_trials: usize) -> Self {
        if n_trials == 0 {
            return Self {
                p_hat: 0.5,
                successes: 0,
                n_trials: 0,
                ci_low: 0.0,
                ci_high: 1.0,
                degenerate: true,
            };
        }
        let (ci_low, ci_high) = wilson_interval(successes, n_trials, Z_95);
        Self {
            p_hat: successes as f64 / n_trials as f64,
            successes,
            n_trials,
            ci_low,
            ci_high,
            degenerate: false,
        }
    }

    /// Binomial standard error `sqrt(p (1 - p) / n)`.
    pub fn standard_error(&self) -> f64 {
        if self.n_trials == 0 {
            return f64::INFINITY;
        }
        (self.p_hat * (1.0 - self.p_hat) / self.n_trials as f64).sqrt()
    }

    pub fn contains(&self, p: f64) -> bool {
        self.ci_low <= p && p <= self.ci_high
    }

    /// Eve's advantage, clamped at zero.
    pub fn q_hat(&self) -> f64 {
        (self.p_hat - 0.5).max(0.0)
    }
}

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    let lo = if successes == 0 {
        0.0
    } else {
        (center - half).clamp(0.0, p)
    };
    let hi = if successes == n {
        1.0
    } else {
        (center + half).clamp(p, 1.0)
    };
    (lo, hi)
}

/// One graded secure exchange.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub truth: StateClass,
    pub guess: StateClass,
    pub kept: bool,
    /// Defenders' `delta` for this exchange.
    pub delta: f64,
}

impl TrialOutcome {
    pub fn correct(&self) -> bool {
        self.truth == self.guess
    }
}

/// All trials of one attack.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackTrials {
    pub attack: String,
    pub outcomes: Vec<TrialOutcome>,
}

impl AttackTrials {
    pub fn estimate(&self, filter_on: bool) -> ProbabilityEstimate {
        let mut n = 0;
        let mut wins = 0;
        for o in self.outcomes.iter().filter(|o| !filter_on || o.kept) {
            n += 1;
            wins += usize::from(o.correct());
        }
        ProbabilityEstimate::from_counts(wins, n)
    }

    pub fn kept_fraction(&self) -> f64 {
        let kept = self.outcomes.iter().filter(|o| o.kept).count();
        kept as f64 / self.outcomes.len() as f64
    }

    pub fn delta_median(&self) -> f64 {
        let mut d: Vec<f64> = self.outcomes.iter().map(|o| o.delta).collect();
        median(&mut d)
    }
}

/// Ground truth for secure trial `i`: a fair choice between `LH` and `HL`.
pub fn secure_truth(master_seed: u64, trial: u64) -> StateClass {
    if derive_labeled(master_seed, trial, b"truth").coin() {
        StateClass::HL
    } else {
        StateClass::LH
    }
}

/// Runs `n_trials` secure exchanges and applies every attack to each one.
///
/// Each attack draws its fallback coins from its own stream so adding or
/// removing attacks does not change the others' results.
pub fn run_attack_trials(
    attacks: &[&dyn Attack],
    params: &SystemParams,
    n_trials: usize,
    options: &ExchangeOptions,
) -> Result<Vec<AttackTrials>> {
    ensure_domain(n_trials >= MIN_TRIALS, || {
        format!("at least {MIN_TRIALS} trials are required, got {n_trials}")
    })?;
    params.validate()?;
    let per_trial: Vec<Vec<TrialOutcome>> = (0..n_trials as u64)
        .into_par_iter()
        .map(|i| {
            let truth = secure_truth(params.master_seed, i);
            let (a, b) = truth.bits();
            let run = run_bit_exchange_with(params, i, a, b, options)?;
            let obs = EveObservation::new(&run.trace, params);
            let kept = run.record.decision == Decision::Kept;
            Ok(attacks
                .iter()
                .map(|attack| {
                    let mut label = b"eve/".to_vec();
                    label.extend_from_slice(attack.name().as_bytes());
                    let mut rng = derive_labeled(params.master_seed, i, &label);
                    TrialOutcome {
                        truth,
                        guess: attack.attack(&obs, &mut rng).guess,
                        kept,
                        delta: run.record.delta,
                    }
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(attacks
        .iter()
        .enumerate()
        .map(|(k, attack)| AttackTrials {
            attack: attack.name().to_string(),
            outcomes: per_trial.iter().map(|row| row[k]).collect(),
        })
        .collect())
}

/// Eve's success probability for `attack` over `n_trials` secure exchanges,
/// optionally restricted to the bits the parties keep.
pub fn estimate_p(
    attack: &dyn Attack,
    params: &SystemParams,
    n_trials: usize,
    filter_on: bool,
) -> Result<ProbabilityEstimate> {
    let trials = run_attack_trials(&[attack], params, n_trials, &ExchangeOptions::default())?;
    Ok(trials[0].estimate(filter_on))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slope {
    pub component: Component,
    pub step: f64,
    pub slope: f64,
    pub std_error: f64,
    /// `2 D(h/2) - D(h)` when the Richardson check is requested.
    pub richardson: Option<f64>,
}

/// Forward-difference sensitivities `(p(base + h e_i) - p(base)) / h`.
///
/// `estimator` maps a non-ideality vector to a success estimate; it is
/// evaluated once at `base` and once (twice with `richardson`) per step.
pub fn sensitivity_slopes<F>(
    estimator: F,
    base: &NonIdealityVector,
    steps: &[(Component, f64)],
    richardson: bool,
) -> Result<Vec<Slope>>
where
    F: Fn(&NonIdealityVector) -> Result<ProbabilityEstimate>,
{
    let at_base = estimator(base)?;
    steps
        .iter()
        .map(|&(component, h)| {
            ensure_domain(h.is_finite() && h > 0.0, || {
                format!("step for {} must be positive, got {h}", component.name())
            })?;
            let x0 = base.get(component);
            let difference = |step: f64| -> Result<(f64, f64)> {
                let est = estimator(&base.with(component, x0 + step))?;
                let slope = (est.p_hat - at_base.p_hat) / step;
                let se = est.standard_error().hypot(at_base.standard_error()) / step;
                Ok((slope, se))
            };
            let (slope, std_error) = difference(h)?;
            let richardson = if richardson {
                let (half, _) = difference(h / 2.0)?;
                Some(2.0 * half - slope)
            } else {
                None
            };
            Ok(Slope {
                component,
                step: h,
                slope,
                std_error,
                richardson,
            })
        })
        .collect()
}

fn check_tvd_args(q: f64, n: usize) -> Result<()> {
    ensure_domain((0.0..=0.5).contains(&q), || {
        format!("advantage q must lie in [0, 0.5], got {q}")
    })?;
    ensure_domain(n >= 1, || "key length must be at least 1".into())
}

/// `(1/2 + q)^N - (1/2)^N`.
pub fn tvd_exact(q: f64, n: usize) -> Result<f64> {
    check_tvd_args(q, n)?;
    let n = n as i32;
    Ok((0.5 + q).powi(n) - 0.5f64.powi(n))
}

/// First-order form `2 N q (1/2)^N`, valid for `N q << 1/2`.
pub fn tvd_approx(q: f64, n: usize) -> Result<f64> {
    check_tvd_args(q, n)?;
    Ok(2.0 * n as f64 * q * 0.5f64.powi(n as i32))
}

/// Enumerates all `2^N` candidate keys and returns the largest gap between
/// Eve's guessing probability and the uniform `2^-N`.
///
/// Eve guesses each bit independently and correctly with probability
/// `1/2 + q`; the true key is fixed at all zeros without loss of generality.
pub fn tvd_bruteforce(q: f64, n: usize) -> Result<f64> {
    check_tvd_args(q, n)?;
    if n > MAX_BRUTEFORCE_BITS {
        return Err(Error::TooLarge(n));
    }
    let hit = 0.5 + q;
    let miss = 0.5 - q;
    let uniform = 0.5f64.powi(n as i32);
    let mut best = f64::NEG_INFINITY;
    for candidate in 0u32..(1u32 << n) {
        let matches = n as i32 - candidate.count_ones() as i32;
        let p = hit.powi(matches) * miss.powi(n as i32 - matches);
        best = best.max(p - uniform);
    }
    Ok(best)
}

/// One XOR stage: bit `i` of the output is `key[2i] ^ key[2i + 1]`, and
/// Eve's guesses are combined the same way.
pub fn xor_privacy_amplify(key: &[bool], eve_guesses: &[bool]) -> Result<(Vec<bool>, Vec<bool>)> {
    if !key.len().is_multiple_of(2) {
        return Err(Error::Contract(format!("key length {} is odd", key.len())));
    }
    if key.len() != eve_guesses.len() {
        return Err(Error::Contract(format!(
            "{} guesses for a {}-bit key",
            eve_guesses.len(),
            key.len()
        )));
    }
    let fold = |bits: &[bool]| bits.chunks_exact(2).map(|c| c[0] ^ c[1]).collect();
    Ok((fold(key), fold(eve_guesses)))
}

/// Eve's per-bit success after one XOR stage: `p^2 + (1 - p)^2`.
pub fn amplified_success(p: f64) -> f64 {
    p * p + (1.0 - p) * (1.0 - p)
}

/// Per-attack security summary with fixed serialized field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack: String,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_trials: usize,
    pub q_hat: f64,
    pub slopes: Vec<Slope>,
    pub tvd_exact: f64,
    pub tvd_approx: f64,
    #[serde(rename = "N")]
    pub key_length: usize,
}

impl AttackReport {
    pub fn new(
        attack: &str,
        estimate: &ProbabilityEstimate,
        slopes: Vec<Slope>,
        key_length: usize,
    ) -> Result<Self> {
        let q_hat = estimate.q_hat();
        Ok(Self {
            attack: attack.to_string(),
            p_hat: estimate.p_hat,
            ci_low: estimate.ci_low,
            ci_high: estimate.ci_high,
            n_trials: estimate.n_trials,
            q_hat,
            slopes,
            tvd_exact: tvd_exact(q_hat, key_length)?,
            tvd_approx: tvd_approx(q_hat, key_length)?,
            key_length,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SecurityReport {
    pub attacks: Vec<AttackReport>,
}

impl SecurityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
