//! Ground-truth Larmor-frequency trajectories.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FieldModelSpec {
    Constant {
        omega0: f64,
    },
    RandomWalk {
        omega0: f64,
        /// Per-step increment variance, (rad/s)².
        sigma2: f64,
    },
    OrnsteinUhlenbeck(OuParams),
    Piecewise {
        segments: Vec<Segment>,
    },
    Waveform(Waveform),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuParams {
    pub omega0: f64,
    pub mean: f64,
    /// Mean-reversion rate, 1/s.
    pub theta: f64,
    /// Diffusion, rad/(s·√s).
    pub sigma_ou: f64,
}

impl OuParams {
    /// Parameters whose stationary standard deviation is `std` rad/s.
    pub fn with_stationary_std(omega0: f64, theta: f64, std: f64) -> Self {
        Self {
            omega0,
            mean: omega0,
            theta,
            sigma_ou: std * (2.0 * theta).sqrt(),
        }
    }

    pub fn stationary_variance(&self) -> f64 {
        self.sigma_ou * self.sigma_ou / (2.0 * self.theta)
    }
}

/// Piecewise-constant level, active on `[t_start, next t_start)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveformSample {
    pub t: f64,
    pub b_nt: f64,
}

/// Sampled magnetic field B(t) in nT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<WaveformSample>,
    #[serde(default)]
    pub interpolation: Interpolation,
}

impl FieldModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            FieldModelSpec::Constant { omega0 } => finite(*omega0, "omega0"),
            FieldModelSpec::RandomWalk { omega0, sigma2 } => {
                finite(*omega0, "omega0")?;
                if !(*sigma2 >= 0.0) {
                    return Err(Error::invalid("sigma2 must be >= 0"));
                }
                Ok(())
            }
            FieldModelSpec::OrnsteinUhlenbeck(ou) => {
                finite(ou.omega0, "omega0")?;
                finite(ou.mean, "mean")?;
                if !(ou.theta >= 0.0) || !(ou.sigma_ou >= 0.0) {
                    return Err(Error::invalid("theta and sigma_ou must be >= 0"));
                }
                Ok(())
            }
            FieldModelSpec::Piecewise { segments } => {
                if segments.is_empty() {
                    return Err(Error::invalid("piecewise field needs at least one segment"));
                }
                if segments.windows(2).any(|w| !(w[1].t_start > w[0].t_start)) {
                    return Err(Error::invalid("segment start times must be strictly increasing"));
                }
                Ok(())
            }
            FieldModelSpec::Waveform(w) => w.validate(),
        }
    }

    /// Short tag used in file names and summaries.
    pub fn kind(&self) -> &'static str {
        match self {
            FieldModelSpec::Constant { .. } => "constant",
            FieldModelSpec::RandomWalk { .. } => "random_walk",
            FieldModelSpec::OrnsteinUhlenbeck(_) => "ornstein_uhlenbeck",
            FieldModelSpec::Piecewise { .. } => "piecewise",
            FieldModelSpec::Waveform(_) => "waveform",
        }
    }
}

fn finite(v: f64, name: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite")))
    }
}

impl Waveform {
    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::invalid("waveform needs at least two samples"));
        }
        if self.samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::invalid("waveform sample times must be strictly increasing"));
        }
        Ok(())
    }

    pub fn t_first(&self) -> f64 {
        self.samples[0].t
    }

    pub fn t_last(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }
}

/// One random-walk step: `omega + √sigma2 · draw`.
pub fn step_random_walk(omega: f64, sigma2: f64, draw: f64) -> Result<f64> {
    if !(sigma2 >= 0.0) {
        return Err(Error::invalid(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    Ok(omega + sigma2.sqrt() * draw)
}

/// Exact Ornstein–Uhlenbeck transition over `dt`.
///
/// `theta == 0` reduces to a random walk with per-step variance `sigma_ou²·dt`.
pub fn step_ou(omega: f64, ou: &OuParams, dt: f64, draw: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("dt must be > 0, got {dt}")));
    }
    if ou.theta == 0.0 {
        return Ok(omega + ou.sigma_ou * dt.sqrt() * draw);
    }
    let decay = (-ou.theta * dt).exp();
    // 1 − e^(−2θΔ) without cancellation for small θΔ
    let var_factor = -(-2.0 * ou.theta * dt).exp_m1() / (2.0 * ou.theta);
    Ok(ou.mean + (omega - ou.mean) * decay + ou.sigma_ou * var_factor.sqrt() * draw)
}

/// Level of the last segment with `t_start ≤ t`.
pub fn eval_piecewise(segments: &[Segment], t: f64) -> Result<f64> {
    let idx = segments.partition_point(|s| s.t_start <= t);
    if idx == 0 {
        let lo = segments.first().map_or(f64::NAN, |s| s.t_start);
        return Err(Error::OutOfRange {
            value: t,
            lo,
            hi: f64::INFINITY,
        });
    }
    Ok(segments[idx - 1].omega)
}

/// Linearly interpolated B(t), converted to rad/s with `gyro`.
pub fn eval_waveform(w: &Waveform, t: f64, gyro: f64) -> Result<f64> {
    let s = &w.samples;
    if s.is_empty() || !(t >= w.t_first() && t <= w.t_last()) {
        return Err(Error::OutOfRange {
            value: t,
            lo: s.first().map_or(f64::NAN, |x| x.t),
            hi: s.last().map_or(f64::NAN, |x| x.t),
        });
    }
    let idx = s.partition_point(|x| x.t <= t);
    let left = s[idx - 1];
    if left.t == t || idx == s.len() {
        return Ok(left.b_nt * gyro);
    }
    let right = s[idx];
    let frac = (t - left.t) / (right.t - left.t);
    Ok((left.b_nt + (right.b_nt - left.b_nt) * frac) * gyro)
}

/// Trajectory `ω_k` at `t_k = k·dt` for `k = 0..steps`.
///
/// Stochastic models draw one standard normal per step from `rng`.
pub fn generate_field<R: Rng + ?Sized>(
    spec: &FieldModelSpec,
    steps: usize,
    dt: f64,
    gyro: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    spec.validate()?;
    if !(dt > 0.0) {
        return Err(Error::invalid("dt must be > 0"));
    }
    let mut out = Vec::with_capacity(steps);
    match spec {
        FieldModelSpec::Constant { omega0 } => out.resize(steps, *omega0),
        FieldModelSpec::RandomWalk { omega0, sigma2 } => {
            let mut omega = *omega0;
            for _ in 0..steps {
                out.push(omega);
                omega = step_random_walk(omega, *sigma2, rng.sample(StandardNormal))?;
            }
        }
        FieldModelSpec::OrnsteinUhlenbeck(ou) => {
            let mut omega = ou.omega0;
            for _ in 0..steps {
                out.push(omega);
                omega = step_ou(omega, ou, dt, rng.sample(StandardNormal))?;
            }
        }
        FieldModelSpec::Piecewise { segments } => {
            for k in 0..steps {
                out.push(eval_piecewise(segments, k as f64 * dt)?);
            }
        }
        FieldModelSpec::Waveform(w) => {
            for k in 0..steps {
                out.push(eval_waveform(w, k as f64 * dt, gyro)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_walk_examples() {
        assert_eq!(step_random_walk(100.0, 0.0, 0.7).unwrap(), 100.0);
        assert_relative_eq!(
            step_random_walk(0.0, 0.1, 1.0).unwrap(),
            0.316_227_766_016_837_94,
            epsilon = 1e-15
        );
        assert!(step_random_walk(0.0, -1.0, 0.0).is_err());
    }

    #[test]
    fn random_walk_increment_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = FieldModelSpec::RandomWalk {
            omega0: 0.0,
            sigma2: 0.1,
        };
        let path = generate_field(&spec, 100_001, 1e-4, 1.0, &mut rng).unwrap();
        let inc: Vec<f64> = path.windows(2).map(|w| w[1] - w[0]).collect();
        let n = inc.len() as f64;
        let mean = inc.iter().sum::<f64>() / n;
        let var = inc.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((0.097..=0.103).contains(&var), "var = {var}");
        // 5σ chi-square band: σ(var) = sigma2·√(2/(n−1))
        assert!((var - 0.1).abs() <= 5.0 * 0.1 * (2.0 / (n - 1.0)).sqrt());
    }

    #[test]
    fn ou_examples() {
        let still = OuParams {
            omega0: 3.0,
            mean: 0.0,
            theta: 0.0,
            sigma_ou: 0.0,
        };
        assert_eq!(step_ou(3.0, &still, 1e-3, 1.3).unwrap(), 3.0);

        let half = OuParams {
            omega0: 10.0,
            mean: 0.0,
            theta: std::f64::consts::LN_2,
            sigma_ou: 0.0,
        };
        assert_relative_eq!(step_ou(10.0, &half, 1.0, 0.4).unwrap(), 5.0, epsilon = 1e-14);
        assert!(step_ou(1.0, &half, 0.0, 0.0).is_err());
    }

    #[test]
    fn ou_theta_zero_is_random_walk() {
        let ou = OuParams {
            omega0: 0.0,
            mean: 0.0,
            theta: 0.0,
            sigma_ou: 2.0,
        };
        assert_relative_eq!(step_ou(1.0, &ou, 0.25, 1.0).unwrap(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn ou_stationary_statistics() {
        let ou = OuParams::with_stationary_std(5.0, 50.0, 10.0);
        let dt = 1e-3;
        let steps = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let path = generate_field(&FieldModelSpec::OrnsteinUhlenbeck(ou), steps, dt, 1.0, &mut rng)
            .unwrap();
        let tail = &path[10_000..];
        let n = tail.len() as f64;
        let mean = tail.iter().sum::<f64>() / n;
        let var = tail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let target = ou.stationary_variance();
        assert!((var / target - 1.0).abs() <= 0.03, "var {var} vs {target}");
        // effective sample count for AR(1) with ρ = e^(−θΔ)
        let rho = (-ou.theta * dt).exp();
        let n_eff = n * (1.0 - rho) / (1.0 + rho);
        assert!((mean - ou.mean).abs() <= 4.0 * (target / n_eff).sqrt());
    }

    #[test]
    fn piecewise_examples() {
        let segs = [
            Segment { t_start: 0.0, omega: 100.0 },
            Segment { t_start: 1.0, omega: 200.0 },
        ];
        assert_eq!(eval_piecewise(&segs, 0.5).unwrap(), 100.0);
        assert_eq!(eval_piecewise(&segs, 1.0).unwrap(), 200.0);
        assert!(matches!(eval_piecewise(&segs, -0.1), Err(Error::OutOfRange { .. })));
        let single = [Segment { t_start: 0.0, omega: 50.0 }];
        assert_eq!(eval_piecewise(&single, 1e6).unwrap(), 50.0);
    }

    #[test]
    fn waveform_examples() {
        let w = Waveform {
            samples: vec![
                WaveformSample { t: 0.0, b_nt: 0.0 },
                WaveformSample { t: 1.0, b_nt: 1.0 },
            ],
            interpolation: Interpolation::Linear,
        };
        assert_relative_eq!(eval_waveform(&w, 0.5, 43.9598).unwrap(), 21.9799, epsilon = 1e-12);
        assert_eq!(eval_waveform(&w, 1.0, 43.9598).unwrap(), 43.9598);
        assert_eq!(eval_waveform(&w, 0.0, 43.9598).unwrap(), 0.0);
        assert!(matches!(eval_waveform(&w, 1.01, 1.0), Err(Error::OutOfRange { .. })));
        assert!(matches!(eval_waveform(&w, -0.01, 1.0), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn waveform_interpolation_error_bound() {
        let f = 3.0;
        let amp = 2.0;
        let step = 1e-3;
        let samples = (0..=1000)
            .map(|i| {
                let t = i as f64 * step;
                WaveformSample {
                    t,
                    b_nt: amp * (2.0 * std::f64::consts::PI * f * t).sin(),
                }
            })
            .collect();
        let w = Waveform {
            samples,
            interpolation: Interpolation::Linear,
        };
        let bound = (2.0 * std::f64::consts::PI * f).powi(2) * amp * step * step / 8.0;
        let mut max_err: f64 = 0.0;
        for j in 0..99_991 {
            let t = j as f64 * 1e-5 + 3.7e-7;
            let exact = amp * (2.0 * std::f64::consts::PI * f * t).sin();
            max_err = max_err.max((eval_waveform(&w, t, 1.0).unwrap() - exact).abs());
        }
        assert!(max_err <= bound, "{max_err} > {bound}");
        assert!(max_err > 0.5 * bound, "bound should be nearly tight");
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let seg = FieldModelSpec::Piecewise {
            segments: vec![
                Segment { t_start: 1.0, omega: 0.0 },
                Segment { t_start: 1.0, omega: 1.0 },
            ],
        };
        assert!(seg.validate().is_err());
        let rw = FieldModelSpec::RandomWalk { omega0: 0.0, sigma2: -0.1 };
        assert!(rw.validate().is_err());
    }

    #[test]
    fn generation_is_reproducible() {
        let spec = FieldModelSpec::OrnsteinUhlenbeck(OuParams::with_stationary_std(1.0, 1.0, 1.0));
        let a = generate_field(&spec, 1000, 1e-3, 1.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = generate_field(&spec, 1000, 1e-3, 1.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn spec_json_shape() {
        let spec: FieldModelSpec =
            serde_json::from_str(r#"{"type":"random_walk","omega0":1.0,"sigma2":0.1}"#).unwrap();
        assert_eq!(spec, FieldModelSpec::RandomWalk { omega0: 1.0, sigma2: 0.1 });
        let ou: FieldModelSpec = serde_json::from_str(
            r#"{"type":"ornstein_uhlenbeck","omega0":1.0,"mean":1.0,"theta":1.0,"sigma_ou":2.0}"#,
        )
        .unwrap();
        assert_eq!(ou.kind(), "ornstein_uhlenbeck");
    }
}
