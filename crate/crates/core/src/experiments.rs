//! Monte-Carlo scenarios: mismatch sweep, abrupt measurement-noise change
//! and model-free tracking.
//!
//! Trial `i` of a run always uses seed `seed_base + i`, so any single trial
//! can be reproduced in isolation. Trials run on a rayon pool and results
//! are collected in seed order, which keeps every artifact deterministic.

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::field::FieldModelSpec;
use crate::filter::{run_filter, FilterConfig, FilterMode, FilterOutput};
use crate::sim::{simulate_trace_with, NoiseJump, SimOptions, Trace};
use crate::sns::{fit_lorentzian, sensitivity_estimate, welch_psd, LorentzianFit, Spectrum, SENSITIVITY_FORMULA};

/// Index of the first sample with t = k·dt ≥ `burn_in`.
pub fn burn_in_index(dt: f64, burn_in: f64) -> usize {
    if burn_in <= 0.0 {
        return 0;
    }
    // Absorb roundoff so 0.1 / 5e-5 counts as 2000 samples, not 2001.
    (burn_in / dt - 1e-9).ceil().max(0.0) as usize
}

fn steady_range(len: usize, dt: f64, burn_in: f64) -> Result<std::ops::Range<usize>> {
    let start = burn_in_index(dt, burn_in);
    if start >= len {
        return Err(Error::invalid(format!(
            "burn-in of {burn_in} s leaves no samples out of {len}"
        )));
    }
    Ok(start..len)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("series lengths differ: {a} vs {b}")));
    }
    Ok(())
}

/// Mean squared ω error over samples with t ≥ `burn_in`.
pub fn compute_mse(omega_true: &[f64], omega_hat: &[f64], dt: f64, burn_in: f64) -> Result<f64> {
    check_lengths(omega_true.len(), omega_hat.len())?;
    let range = steady_range(omega_true.len(), dt, burn_in)?;
    let n = range.len() as f64;
    Ok(range.map(|k| (omega_true[k] - omega_hat[k]).powi(2)).sum::<f64>() / n)
}

/// Mean of (ω − ω̂)² / P₃₃ over samples with t ≥ `burn_in`.
pub fn mean_nees(omega_true: &[f64], out: &FilterOutput, dt: f64, burn_in: f64) -> Result<f64> {
    check_lengths(omega_true.len(), out.len())?;
    let range = steady_range(omega_true.len(), dt, burn_in)?;
    let n = range.len() as f64;
    let mut acc = 0.0;
    for k in range {
        let var = out.p_diag[k][2];
        if !(var > 0.0) {
            return Err(Error::NumericalFailure {
                step: k,
                reason: "non-positive ω variance".into(),
            });
        }
        acc += (omega_true[k] - out.x_hat[k].omega).powi(2) / var;
    }
    Ok(acc / n)
}

/// Mean and standard error of the mean (zero for a single value).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn truth(trace: &Trace) -> Result<&[f64]> {
    trace
        .omega_true
        .as_deref()
        .ok_or_else(|| Error::invalid("trace has no ground-truth ω"))
}

/// Runs `f(i)` for every trial index on the configured pool, in order.
fn run_trials<T, F>(trials: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    let go = || (0..trials).into_par_iter().map(&f).collect::<Result<Vec<T>>>();
    if workers == 0 {
        return go();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(go)
}

/// Runs a filter. Numerical breakdown becomes an inner `Err` holding the
/// reason; other errors propagate.
fn run_or_diverge(trace: &Trace, cfg: &FilterConfig) -> Result<std::result::Result<FilterOutput, String>> {
    match run_filter(trace, cfg) {
        Ok(out) => Ok(Ok(out)),
        Err(e @ Error::NumericalFailure { .. }) => Ok(Err(e.to_string())),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub base: Config,
    pub r_prime_grid: Vec<f64>,
    pub trials: usize,
    pub duration_s: f64,
    pub burn_in_s: f64,
    pub seed_base: u64,
    pub modes: Vec<FilterMode>,
}

impl SweepConfig {
    pub fn from_config(cfg: &Config) -> Self {
        SweepConfig {
            base: cfg.clone(),
            r_prime_grid: cfg.run.r_prime_grid.clone(),
            trials: cfg.run.trials,
            duration_s: cfg.run.duration_s,
            burn_in_s: cfg.run.burn_in_s,
            seed_base: cfg.run.seed,
            modes: vec![FilterMode::Ekf, FilterMode::Aekf],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.trials == 0 {
            return Err(Error::invalid("trials must be >= 1"));
        }
        if !(self.burn_in_s >= 0.0 && self.burn_in_s < self.duration_s) {
            return Err(Error::invalid("need 0 <= burn_in < duration"));
        }
        if self.r_prime_grid.is_empty() || self.r_prime_grid.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::invalid("R' grid must be non-empty and positive"));
        }
        if self.modes.is_empty() {
            return Err(Error::invalid("no filter modes selected"));
        }
        Ok(())
    }
}

/// One filter run within a sweep trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub r_prime: f64,
    pub mode: FilterMode,
    pub mse: Option<f64>,
    pub nees: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub r_prime: f64,
    pub mode: FilterMode,
    pub mse_mean: f64,
    pub mse_stderr: f64,
    pub nees_mean: f64,
    /// Trials that contributed to the mean.
    pub trials: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub trials: Vec<TrialResult>,
}

impl SweepSummary {
    pub fn row(&self, r_prime: f64, mode: FilterMode) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.r_prime == r_prime && r.mode == mode)
    }
}

pub fn run_mse_sweep(cfg: &SweepConfig) -> Result<SweepSummary> {
    cfg.validate()?;
    let base = &cfg.base;
    let steps = base.steps_for(cfg.duration_s);
    let truth_noise = base.noise_config(1.0);
    let per_trial = run_trials(cfg.trials, base.run.workers, |i| {
        let seed = cfg.seed_base + i as u64;
        let trace = simulate_trace_with(&base.physics, &truth_noise, &base.field, steps, seed, &base.sim)?;
        let truth = truth(&trace)?;
        let mut results = Vec::with_capacity(cfg.r_prime_grid.len() * cfg.modes.len());
        for &r_prime in &cfg.r_prime_grid {
            for &mode in &cfg.modes {
                let fc = base.filter_config(mode, r_prime);
                let res = match run_or_diverge(&trace, &fc)? {
                    Ok(out) => TrialResult {
                        seed,
                        r_prime,
                        mode,
                        mse: Some(compute_mse(truth, &out.omega_hat(), trace.dt, cfg.burn_in_s)?),
                        nees: Some(mean_nees(truth, &out, trace.dt, cfg.burn_in_s)?),
                        failure: None,
                    },
                    Err(reason) => TrialResult { seed, r_prime, mode, mse: None, nees: None, failure: Some(reason) },
                };
                results.push(res);
            }
        }
        Ok(results)
    })?;
    let trials: Vec<TrialResult> = per_trial.into_iter().flatten().collect();

    let mut rows = Vec::new();
    for &r_prime in &cfg.r_prime_grid {
        for &mode in &cfg.modes {
            let matching = trials.iter().filter(|t| t.r_prime == r_prime && t.mode == mode);
            let mse: Vec<f64> = matching.clone().filter_map(|t| t.mse).collect();
            let nees: Vec<f64> = matching.clone().filter_map(|t| t.nees).collect();
            let failures = matching.filter(|t| t.failure.is_some()).count();
            let (mse_mean, mse_stderr) = mean_stderr(&mse);
            rows.push(SweepRow {
                r_prime,
                mode,
                mse_mean,
                mse_stderr,
                nees_mean: mean_stderr(&nees).0,
                trials: mse.len(),
                failures,
            });
        }
    }
    Ok(SweepSummary { rows, trials })
}

/// Per-step record of the first trial of the abrupt-noise scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct AbruptTrace {
    pub trace: Trace,
    pub ekf: FilterOutput,
    pub aekf: FilterOutput,
    /// True measurement variance in effect at each step.
    pub r_true: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbruptTrial {
    pub seed: u64,
    pub ekf_mse_pre: Option<f64>,
    pub ekf_mse_post: Option<f64>,
    pub aekf_mse_pre: Option<f64>,
    pub aekf_mse_post: Option<f64>,
    /// AEKF R̂ a fixed number of samples after the jump.
    pub aekf_r_hat_settle: Option<f64>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbruptSummary {
    pub jump_at_s: f64,
    pub jump_factor: f64,
    pub r_true_pre: f64,
    pub r_true_post: f64,
    /// Samples after the jump at which R̂ is read (2·N).
    pub settle_samples: usize,
    pub ekf_mse_pre: f64,
    pub ekf_mse_post: f64,
    pub aekf_mse_pre: f64,
    pub aekf_mse_post: f64,
    /// Mean R̂ over trials at the settle point divided by the new r_true.
    pub r_hat_settle_ratio: f64,
    /// Fraction of trials whose settle-point R̂ is within 20% of the new r_true.
    pub r_hat_within_20pct: f64,
    pub ekf_failures: usize,
    pub aekf_failures: usize,
    pub trials: Vec<AbruptTrial>,
}

pub struct AbruptResult {
    pub summary: AbruptSummary,
    pub first: Option<AbruptTrace>,
}

/// Steps the true measurement variance by `run.jump_factor` at
/// `run.jump_at_s`; the EKF keeps the pre-jump R while the AEKF adapts.
pub fn run_abrupt_noise_scenario(cfg: &Config) -> Result<AbruptResult> {
    cfg.validate()?;
    let run = &cfg.run;
    if !(run.jump_at_s > run.burn_in_s && run.jump_at_s < run.duration_s) {
        return Err(Error::invalid("jump time must lie between burn-in and the end of the run"));
    }
    if !(run.jump_factor > 0.0) {
        return Err(Error::invalid("jump factor must be positive"));
    }
    let steps = cfg.steps();
    let dt = cfg.physics.dt;
    let jump_idx = burn_in_index(dt, run.jump_at_s);
    let window = cfg.noise.adapt_window;
    let settle_idx = jump_idx + 2 * window;
    let sim = SimOptions {
        noise_jump: Some(NoiseJump { at_s: run.jump_at_s, factor: run.jump_factor }),
        ..cfg.sim
    };
    let truth_noise = cfg.noise_config(1.0);
    let r_pre = cfg.noise.r_true;
    let r_post = r_pre * run.jump_factor;
    let ekf_cfg = cfg.filter_config(FilterMode::Ekf, 1.0);
    let aekf_cfg = cfg.filter_config(FilterMode::Aekf, cfg.noise.r_prime);
    let burn = burn_in_index(dt, run.burn_in_s);

    let outcomes = run_trials(run.trials, run.workers, |i| {
        let seed = run.seed + i as u64;
        let trace = simulate_trace_with(&cfg.physics, &truth_noise, &cfg.field, steps, seed, &sim)?;
        let truth = truth(&trace)?.to_vec();
        let mut failures = Vec::new();
        let segment_mse = |out: &FilterOutput| -> (f64, f64) {
            let w = out.omega_hat();
            let seg = |r: std::ops::Range<usize>| {
                let n = r.len() as f64;
                r.map(|k| (truth[k] - w[k]).powi(2)).sum::<f64>() / n
            };
            (seg(burn..jump_idx), seg(jump_idx..steps))
        };
        let ekf = run_or_diverge(&trace, &ekf_cfg)?;
        let aekf = run_or_diverge(&trace, &aekf_cfg)?;
        let mut trial = AbruptTrial {
            seed,
            ekf_mse_pre: None,
            ekf_mse_post: None,
            aekf_mse_pre: None,
            aekf_mse_post: None,
            aekf_r_hat_settle: None,
            failures: Vec::new(),
        };
        match &ekf {
            Ok(out) => {
                let (pre, post) = segment_mse(out);
                trial.ekf_mse_pre = Some(pre);
                trial.ekf_mse_post = Some(post);
            }
            Err(reason) => failures.push(format!("ekf: {reason}")),
        }
        match &aekf {
            Ok(out) => {
                let (pre, post) = segment_mse(out);
                trial.aekf_mse_pre = Some(pre);
                trial.aekf_mse_post = Some(post);
                trial.aekf_r_hat_settle = out.r_hat.get(settle_idx.min(steps - 1)).copied();
            }
            Err(reason) => failures.push(format!("aekf: {reason}")),
        }
        trial.failures = failures;
        let first = match (i, ekf, aekf) {
            (0, Ok(ekf), Ok(aekf)) => {
                let r_true = (0..steps).map(|k| if k >= jump_idx { r_post } else { r_pre }).collect();
                Some(AbruptTrace { trace, ekf, aekf, r_true })
            }
            _ => None,
        };
        Ok((trial, first))
    })?;

    let mut first = None;
    let mut trials = Vec::with_capacity(outcomes.len());
    for (trial, f) in outcomes {
        if f.is_some() {
            first = f;
        }
        trials.push(trial);
    }
    let mean_of = |get: fn(&AbruptTrial) -> Option<f64>| {
        mean_stderr(&trials.iter().filter_map(get).collect::<Vec<_>>()).0
    };
    let settles: Vec<f64> = trials.iter().filter_map(|t| t.aekf_r_hat_settle).collect();
    let within = settles.iter().filter(|r| ((*r / r_post) - 1.0).abs() <= 0.2).count();
    let summary = AbruptSummary {
        jump_at_s: run.jump_at_s,
        jump_factor: run.jump_factor,
        r_true_pre: r_pre,
        r_true_post: r_post,
        settle_samples: 2 * window,
        ekf_mse_pre: mean_of(|t| t.ekf_mse_pre),
        ekf_mse_post: mean_of(|t| t.ekf_mse_post),
        aekf_mse_pre: mean_of(|t| t.aekf_mse_pre),
        aekf_mse_post: mean_of(|t| t.aekf_mse_post),
        r_hat_settle_ratio: mean_stderr(&settles).0 / r_post,
        r_hat_within_20pct: if settles.is_empty() { 0.0 } else { within as f64 / settles.len() as f64 },
        ekf_failures: trials.iter().filter(|t| t.ekf_mse_post.is_none()).count(),
        aekf_failures: trials.iter().filter(|t| t.aekf_mse_post.is_none()).count(),
        trials,
    };
    Ok(AbruptResult { summary, first })
}

/// Which field the tracking scenario drives the simulator with.
#[derive(Debug, Clone, PartialEq)]
pub enum TrackField {
    Ou,
    Piecewise,
    /// An arbitrary field, typically a waveform loaded from a file.
    Custom(FieldModelSpec),
}

impl TrackField {
    pub fn resolve(&self, cfg: &Config) -> FieldModelSpec {
        match self {
            TrackField::Ou => cfg.ou_field(),
            TrackField::Piecewise => cfg.piecewise_field(),
            TrackField::Custom(spec) => spec.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingMetrics {
    pub seed: u64,
    pub mse: f64,
    pub rms_error: f64,
    /// RMS of ω_true about its own steady-state mean.
    pub rms_excursion: f64,
}

pub struct TrackingRun {
    pub field: FieldModelSpec,
    pub model_hash: String,
    pub trace: Trace,
    pub output: FilterOutput,
    pub metrics: TrackingMetrics,
}

/// Simulates one trace under `field` and tracks it with the shared
/// tracking filter model.
pub fn run_tracking_scenario(cfg: &Config, field: &FieldModelSpec, seed: u64) -> Result<TrackingRun> {
    cfg.validate()?;
    field.validate()?;
    let fc = cfg.tracking_filter_config();
    let trace = simulate_trace_with(&cfg.physics, &cfg.noise_config(1.0), field, cfg.steps(), seed, &cfg.sim)?;
    let output = run_filter(&trace, &fc)?;
    let truth = truth(&trace)?;
    let range = steady_range(trace.len(), trace.dt, cfg.run.burn_in_s)?;
    let n = range.len() as f64;
    let mean = truth[range.clone()].iter().sum::<f64>() / n;
    let excursion = (truth[range.clone()].iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mse = compute_mse(truth, &output.omega_hat(), trace.dt, cfg.run.burn_in_s)?;
    Ok(TrackingRun {
        field: field.clone(),
        model_hash: fc.model_hash(),
        metrics: TrackingMetrics { seed, mse, rms_error: mse.sqrt(), rms_excursion: excursion },
        trace,
        output,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub field_kind: String,
    pub model_hash: String,
    pub trials: Vec<TrackingMetrics>,
    /// sqrt(Σ MSE / Σ excursion²) over trials.
    pub pooled_error_ratio: f64,
}

impl TrackingSummary {
    pub fn from_runs(runs: &[TrackingRun]) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::invalid("no tracking runs"))?;
        if runs.iter().any(|r| r.model_hash != first.model_hash) {
            return Err(Error::invalid("tracking runs used different filter models"));
        }
        let err: f64 = runs.iter().map(|r| r.metrics.mse).sum();
        let exc: f64 = runs.iter().map(|r| r.metrics.rms_excursion.powi(2)).sum();
        Ok(TrackingSummary {
            field_kind: first.field.kind().to_string(),
            model_hash: first.model_hash.clone(),
            trials: runs.iter().map(|r| r.metrics.clone()).collect(),
            pooled_error_ratio: (err / exc).sqrt(),
        })
    }
}

/// Tracking over `cfg.run.trials` seeds.
pub fn run_tracking_trials(cfg: &Config, field: &FieldModelSpec) -> Result<Vec<TrackingRun>> {
    run_trials(cfg.run.trials, cfg.run.workers, |i| {
        run_tracking_scenario(cfg, field, cfg.run.seed + i as u64)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnsReport {
    /// Segment length actually used, samples.
    pub segment_len: usize,
    pub overlap: f64,
    pub resolution_hz: f64,
    pub segments_averaged: usize,
    pub fit: LorentzianFit,
    /// nT/√Hz; absent for a degenerate fit.
    pub sensitivity_nt_per_sqrt_hz: Option<f64>,
    pub sensitivity_formula: String,
}

/// Welch spectrum plus Lorentzian fit of a detector record. Segments longer
/// than the record are shortened to the largest power of two that fits.
pub fn analyze_spectrum(y: &[f64], fs: f64, segment_len: usize, overlap: f64, gyro: f64) -> Result<(Spectrum, SnsReport)> {
    let mut seg = segment_len;
    if seg > y.len() && y.len() >= 8 {
        seg = 1 << (usize::BITS - 1 - y.len().leading_zeros());
    }
    let spectrum = welch_psd(y, fs, seg, overlap)?;
    let fit = fit_lorentzian(&spectrum, None)?;
    let sensitivity = if fit.degenerate { None } else { Some(sensitivity_estimate(&fit, gyro)?) };
    let report = SnsReport {
        segment_len: seg,
        overlap,
        resolution_hz: spectrum.resolution,
        segments_averaged: spectrum.segments_averaged,
        fit,
        sensitivity_nt_per_sqrt_hz: sensitivity,
        sensitivity_formula: SENSITIVITY_FORMULA.to_string(),
    };
    Ok((spectrum, report))
}

/// Spin-noise spectrum of a simulated record at the constant nominal field.
pub fn run_sns_scenario(cfg: &Config, seed: u64) -> Result<(Trace, Spectrum, SnsReport)> {
    cfg.validate()?;
    let field = FieldModelSpec::Constant { omega0: cfg.omega_init() };
    let steps = cfg.steps_for(cfg.sns.duration_s);
    let trace = simulate_trace_with(&cfg.physics, &cfg.noise_config(1.0), &field, steps, seed, &cfg.sim)?;
    let (spectrum, report) = analyze_spectrum(
        &trace.y,
        cfg.physics.sample_rate(),
        cfg.sns.segment_len,
        cfg.sns.overlap,
        cfg.physics.gyro,
    )?;
    Ok((trace, spectrum, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Profile;

    #[test]
    fn mse_trivial_cases() {
        let a = vec![1.0, 2.0, 3.0];
        assert_eq!(compute_mse(&a, &a, 0.1, 0.0).unwrap(), 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + 3.0).collect();
        assert_eq!(compute_mse(&a, &b, 0.1, 0.0).unwrap(), 9.0);
        assert!(matches!(compute_mse(&a, &b[..2], 0.1, 0.0), Err(Error::InvalidParameter(_))));
        assert!(compute_mse(&a, &b, 0.1, 0.3).is_err());
    }

    #[test]
    fn burn_in_excludes_ceiling_of_samples() {
        let truth = vec![0.0; 10];
        let hat: Vec<f64> = (0..10).map(|k| k as f64).collect();
        // t = 0.0, 0.1, ...; burn-in 0.25 s drops k = 0, 1, 2.
        let by_hand = (3..10).map(|k| (k * k) as f64).sum::<f64>() / 7.0;
        assert_eq!(compute_mse(&truth, &hat, 0.1, 0.25).unwrap(), by_hand);
        // Exactly on a sample: t = 0.3 is kept.
        assert_eq!(compute_mse(&truth, &hat, 0.1, 0.3).unwrap(), by_hand);
        assert_eq!(burn_in_index(5e-5, 0.1), 2000);
        assert_eq!(burn_in_index(5e-6, 0.1), 20_000);
    }

    #[test]
    fn stderr_of_single_value_is_zero() {
        assert_eq!(mean_stderr(&[4.0]), (4.0, 0.0));
        let (m, s) = mean_stderr(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    fn small_config() -> Config {
        let mut cfg = Config::for_profile(Profile::Test);
        cfg.run.duration_s = 0.3;
        cfg.run.burn_in_s = 0.05;
        cfg.run.jump_at_s = 0.15;
        cfg
    }

    #[test]
    fn single_trial_sweep_has_two_rows() {
        let mut sweep = SweepConfig::from_config(&small_config());
        sweep.trials = 1;
        sweep.r_prime_grid = vec![1.0];
        let s = run_mse_sweep(&sweep).unwrap();
        assert_eq!(s.rows.len(), 2);
        assert!(s.rows.iter().all(|r| r.mse_stderr == 0.0 && r.trials == 1 && r.mse_mean >= 0.0));
    }

    #[test]
    fn sweep_is_deterministic() {
        let mut sweep = SweepConfig::from_config(&small_config());
        sweep.trials = 3;
        sweep.r_prime_grid = vec![0.1, 10.0];
        let a = run_mse_sweep(&sweep).unwrap();
        let b = run_mse_sweep(&sweep).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        sweep.base.run.workers = 1;
        let c = run_mse_sweep(&sweep).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn no_jump_is_a_null_experiment() {
        let mut cfg = small_config();
        cfg.run.duration_s = 1.0;
        cfg.run.jump_at_s = 0.5;
        cfg.run.jump_factor = 1.0;
        cfg.run.trials = 4;
        let s = run_abrupt_noise_scenario(&cfg).unwrap().summary;
        for (pre, post) in [(s.ekf_mse_pre, s.ekf_mse_post), (s.aekf_mse_pre, s.aekf_mse_post)] {
            let ratio = pre / post;
            assert!((0.5..=2.0).contains(&ratio), "pre/post {ratio}");
        }
    }

    #[test]
    fn tracking_model_hash_ignores_field() {
        let cfg = small_config();
        let ou = run_tracking_scenario(&cfg, &cfg.ou_field(), 1).unwrap();
        let pw = run_tracking_scenario(&cfg, &cfg.piecewise_field(), 1).unwrap();
        assert_eq!(ou.model_hash, pw.model_hash);
        let summary = TrackingSummary::from_runs(&[ou]).unwrap();
        assert_eq!(summary.field_kind, "ornstein_uhlenbeck");
    }
}
