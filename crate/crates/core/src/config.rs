//! Run configuration as a JSON document.
//!
//! Physical constants chosen here are implementation defaults: the
//! relaxation rate, coupling and noise levels are picked so that the
//! simulated spin-noise spectrum shows a clear Lorentzian over a white floor
//! and the field is trackable at desk-scale sampling rates. Override any of
//! them in the config file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{FieldModelSpec, OuParams, Segment};
use crate::filter::{AdaptSettings, FilterConfig, FilterMode};
use crate::sim::SimOptions;
use crate::types::{NoiseConfig, PhysicsParams, RB87_GYRO};

/// Sampling profile: sample rate and run length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// 2 s at 20 kSa/s.
    Test,
    /// 5 s at 200 kSa/s.
    Full,
}

impl Profile {
    pub fn sample_rate(&self) -> f64 {
        match self {
            Profile::Test => 20_000.0,
            Profile::Full => 200_000.0,
        }
    }

    pub fn duration(&self) -> f64 {
        match self {
            Profile::Test => 2.0,
            Profile::Full => 5.0,
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "test" => Ok(Profile::Test),
            "full" => Ok(Profile::Full),
            other => Err(Error::invalid(format!("unknown profile '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSettings {
    /// True measurement-noise variance, V².
    pub r_true: f64,
    /// Mismatch ratio R′ = R₁ / r_true of the filter's initial R.
    #[serde(default = "one")]
    pub r_prime: f64,
    /// Artificial process noise on ω, (rad/s)² per step.
    pub alpha: f64,
    #[serde(default = "default_window")]
    pub adapt_window: usize,
    /// Absolute R floor; defaults to 1e-9 · R₁.
    #[serde(default)]
    pub r_floor: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn default_window() -> usize {
    NoiseConfig::DEFAULT_WINDOW
}

impl NoiseSettings {
    pub fn noise_config(&self, r_prime: f64) -> NoiseConfig {
        let mut n = NoiseConfig::with_mismatch(self.r_true, r_prime, self.alpha, self.adapt_window);
        if let Some(floor) = self.r_floor {
            n.r_floor = floor;
        }
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSettings {
    pub mode: FilterMode,
    /// Nominal field used as the initial ω estimate, nT.
    pub b_nominal_nt: f64,
    /// Initial ω variance, (rad/s)².
    pub p_omega_init: f64,
    #[serde(default)]
    pub adapt: AdaptSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub duration_s: f64,
    pub burn_in_s: f64,
    pub trials: usize,
    pub seed: u64,
    pub r_prime_grid: Vec<f64>,
    /// Measurement-noise step for the robustness scenario.
    pub jump_at_s: f64,
    pub jump_factor: f64,
    /// Worker threads for trial pools; 0 uses all cores.
    #[serde(default)]
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnsSettings {
    pub duration_s: f64,
    pub segment_len: usize,
    pub overlap: f64,
}

/// Fields and filter tuning for the model-free tracking scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingSettings {
    /// Artificial ω process noise as a rate, (rad/s)² per second.
    pub alpha_per_s: f64,
    pub ou_theta: f64,
    /// Stationary standard deviation of the OU field, rad/s.
    pub ou_std: f64,
    /// Level change at each piecewise switch, rad/s.
    pub step_rad_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub physics: PhysicsParams,
    pub noise: NoiseSettings,
    pub field: FieldModelSpec,
    pub filter: FilterSettings,
    pub run: RunSettings,
    #[serde(default)]
    pub sim: SimOptions,
    pub sns: SnsSettings,
    pub tracking: TrackingSettings,
}

/// Defaults shared by both profiles.
pub mod defaults {
    use super::RB87_GYRO;

    /// Spin relaxation rate Γ = 2π·1 s⁻¹.
    pub const GAMMA_RELAX: f64 = 2.0 * std::f64::consts::PI;
    pub const G_D: f64 = 1e-3;
    pub const Q_SPIN: f64 = 1.0;
    /// Detector variance per sample at the desk-scale rate, V².
    /// Gives g_d²·q / r = 0.5 per sample.
    pub const R_TRUE: f64 = 2e-6;
    /// Nominal bias field, nT (ω/2π ≈ 2.1 kHz).
    pub const B_NOMINAL_NT: f64 = 300.0;
    pub const OMEGA0: f64 = B_NOMINAL_NT * RB87_GYRO;
    /// Random-walk increment variance per step, (rad/s)².
    pub const RW_SIGMA2: f64 = 0.1;
    pub const ALPHA: f64 = 0.1;
    pub const P_OMEGA_INIT: f64 = 1e3;
    pub const BURN_IN_S: f64 = 0.1;
    pub const TRIALS: usize = 20;
    pub const R_PRIME_GRID: [f64; 6] = [0.01, 0.1, 1.0, 10.0, 100.0, 1000.0];
    pub const JUMP_FACTOR: f64 = 100.0;
    pub const TRACK_ALPHA_PER_S: f64 = 4e5;
    pub const OU_THETA: f64 = 0.5;
    pub const OU_STD: f64 = 600.0;
    pub const STEP_RAD_S: f64 = 500.0;
}

/// About 3 s per segment, resolving sub-hertz linewidths.
fn sns_segment_len(profile: Profile) -> usize {
    match profile {
        Profile::Test => 1 << 16,
        Profile::Full => 1 << 19,
    }
}

/// Long enough that the fitted line center is stable to a small fraction
/// of the linewidth.
fn sns_duration(profile: Profile) -> f64 {
    match profile {
        Profile::Test => 1000.0,
        Profile::Full => 100.0,
    }
}

impl Config {
    pub fn for_profile(profile: Profile) -> Self {
        use defaults::*;
        let fs = profile.sample_rate();
        let duration = profile.duration();
        Config {
            physics: PhysicsParams {
                gamma_relax: GAMMA_RELAX,
                g_d: G_D,
                q_x: Q_SPIN,
                q_z: Q_SPIN,
                dt: 1.0 / fs,
                gyro: RB87_GYRO,
            },
            noise: NoiseSettings {
                r_true: R_TRUE,
                r_prime: 1.0,
                alpha: ALPHA,
                adapt_window: NoiseConfig::DEFAULT_WINDOW,
                r_floor: None,
            },
            field: FieldModelSpec::RandomWalk {
                omega0: OMEGA0,
                sigma2: RW_SIGMA2,
            },
            filter: FilterSettings {
                mode: FilterMode::Aekf,
                b_nominal_nt: B_NOMINAL_NT,
                p_omega_init: P_OMEGA_INIT,
                adapt: AdaptSettings::default(),
            },
            run: RunSettings {
                duration_s: duration,
                burn_in_s: BURN_IN_S,
                trials: TRIALS,
                seed: 1,
                r_prime_grid: R_PRIME_GRID.to_vec(),
                jump_at_s: duration / 2.0,
                jump_factor: JUMP_FACTOR,
                workers: 0,
            },
            sim: SimOptions::default(),
            sns: SnsSettings {
                duration_s: sns_duration(profile),
                segment_len: sns_segment_len(profile),
                overlap: 0.5,
            },
            tracking: TrackingSettings {
                alpha_per_s: TRACK_ALPHA_PER_S,
                ou_theta: OU_THETA,
                ou_std: OU_STD,
                step_rad_s: STEP_RAD_S,
            },
        }
        .with_rate_scaled_noise(profile)
    }

    /// Keeps the detector noise density fixed: per-sample variance scales
    /// with the sample rate relative to the desk-scale profile.
    fn with_rate_scaled_noise(mut self, profile: Profile) -> Self {
        self.noise.r_true = defaults::R_TRUE * profile.sample_rate() / Profile::Test.sample_rate();
        self
    }

    /// Switches sample rate and run length, keeping everything else.
    /// The per-sample detector variance follows the rate so the noise
    /// density is unchanged.
    pub fn apply_profile(&mut self, profile: Profile) {
        let old_fs = self.physics.sample_rate();
        self.noise.r_true *= profile.sample_rate() / old_fs;
        self.sns.segment_len = sns_segment_len(profile);
        self.sns.duration_s = sns_duration(profile);
        self.physics.dt = 1.0 / profile.sample_rate();
        self.run.duration_s = profile.duration();
        self.run.jump_at_s = profile.duration() / 2.0;
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Config = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }

    /// SHA-256 over the compact JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn validate(&self) -> Result<()> {
        self.physics.validate()?;
        self.noise_config(self.noise.r_prime).validate()?;
        self.field.validate()?;
        let r = &self.run;
        if r.trials == 0 {
            return Err(Error::invalid("trials must be >= 1"));
        }
        if !(r.duration_s > 0.0) || !(r.burn_in_s >= 0.0) || r.burn_in_s >= r.duration_s {
            return Err(Error::invalid("need 0 <= burn_in_s < duration_s"));
        }
        if r.r_prime_grid.is_empty() || r.r_prime_grid.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::invalid("r_prime_grid must be non-empty with positive entries"));
        }
        if !(self.filter.p_omega_init >= 0.0) {
            return Err(Error::invalid("p_omega_init must be >= 0"));
        }
        let t = &self.tracking;
        if !(t.alpha_per_s >= 0.0) || !(t.ou_theta >= 0.0) || !(t.ou_std >= 0.0) || !t.step_rad_s.is_finite() {
            return Err(Error::invalid("tracking settings must be finite and non-negative"));
        }
        Ok(())
    }

    /// Number of samples in a run of `duration_s`.
    pub fn steps(&self) -> usize {
        self.steps_for(self.run.duration_s)
    }

    pub fn steps_for(&self, duration_s: f64) -> usize {
        ((duration_s / self.physics.dt).round() as usize).max(1)
    }

    pub fn noise_config(&self, r_prime: f64) -> NoiseConfig {
        self.noise.noise_config(r_prime)
    }

    pub fn omega_init(&self) -> f64 {
        self.filter.b_nominal_nt * self.physics.gyro
    }

    /// Filter configuration with R₁ = `r_prime`·r_true.
    pub fn filter_config(&self, mode: FilterMode, r_prime: f64) -> FilterConfig {
        let mut cfg = FilterConfig::new(
            mode,
            self.physics,
            self.noise_config(r_prime),
            self.omega_init(),
            self.filter.p_omega_init,
        );
        cfg.adapt = self.filter.adapt;
        cfg
    }

    /// Tracking configuration: the shared filter model with the tracking
    /// process noise, independent of which field is being tracked.
    pub fn tracking_filter_config(&self) -> FilterConfig {
        let mut cfg = self.filter_config(self.filter.mode, self.noise.r_prime);
        cfg.noise.alpha = self.tracking.alpha_per_s * self.physics.dt;
        cfg
    }

    /// Ornstein–Uhlenbeck field used by the model-free tracking scenario.
    pub fn ou_field(&self) -> FieldModelSpec {
        FieldModelSpec::OrnsteinUhlenbeck(OuParams::with_stationary_std(
            self.omega_init(),
            self.tracking.ou_theta,
            self.tracking.ou_std,
        ))
    }

    /// Three-level staircase switching at thirds of the run.
    pub fn piecewise_field(&self) -> FieldModelSpec {
        let w0 = self.omega_init();
        let d = self.run.duration_s;
        let step = self.tracking.step_rad_s;
        FieldModelSpec::Piecewise {
            segments: vec![
                Segment { t_start: 0.0, omega: w0 },
                Segment { t_start: d / 3.0, omega: w0 + step },
                Segment { t_start: 2.0 * d / 3.0, omega: w0 + 2.0 * step },
            ],
        }
    }
}
