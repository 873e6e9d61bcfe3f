//! Extended Kalman filter over the augmented state `[J_x, J_z, ω]` and its
//! adaptive variant, which re-estimates the measurement-noise variance from
//! a sliding window of innovations.
//!
//! The Larmor frequency enters the state as a parameter with no dynamics of
//! its own: it is driven only by a small artificial process noise `alpha`,
//! so the same state equation serves every field evolution.

use std::collections::VecDeque;

use nalgebra::{Cholesky, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sim::{process_noise_cov, propagate_mean, Trace};
use crate::types::{validate_covariance, Covariance3, NoiseConfig, PhysicsParams, StateVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Fixed measurement-noise variance `r_init`.
    Ekf,
    /// Innovation-based adaptation of the measurement-noise variance.
    Aekf,
}

impl FilterMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FilterMode::Ekf => "ekf",
            FilterMode::Aekf => "aekf",
        }
    }
}

/// Order of the two terms in the windowed noise estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptSign {
    /// `mean(v²) − H P Hᵀ`.
    #[default]
    Standard,
    /// `H P Hᵀ − mean(v²)`; almost always negative for a consistent filter,
    /// so the clamp keeps the previous value. Kept for comparison runs.
    Reversed,
}

/// Which covariance supplies the `H P Hᵀ` term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptCovariance {
    /// Prior covariance of the current step, paired with its innovation.
    #[default]
    Prior,
    /// Posterior covariance; the estimate is formed after the update and
    /// applied from the next step on.
    Posterior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AdaptSettings {
    #[serde(default)]
    pub sign: AdaptSign,
    #[serde(default)]
    pub covariance: AdaptCovariance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub mode: FilterMode,
    pub physics: PhysicsParams,
    pub noise: NoiseConfig,
    pub init_state: StateVector,
    pub init_cov: Covariance3,
    pub adapt: AdaptSettings,
}

/// Everything that defines the filter's state-space model, as hashed by
/// [`FilterConfig::model_hash`]. Initial conditions are excluded.
#[derive(Serialize)]
struct FilterModel<'a> {
    physics: &'a PhysicsParams,
    alpha: f64,
    adapt_window: usize,
    adapt: &'a AdaptSettings,
}

impl FilterConfig {
    /// Stationary spin prior `diag(q_x, q_z)` around zero and a Gaussian
    /// prior on ω with variance `p_omega`.
    pub fn new(
        mode: FilterMode,
        physics: PhysicsParams,
        noise: NoiseConfig,
        omega_init: f64,
        p_omega: f64,
    ) -> Self {
        Self {
            mode,
            physics,
            noise,
            init_state: StateVector::new(0.0, 0.0, omega_init),
            init_cov: Covariance3::from_diagonal([physics.q_x, physics.q_z, p_omega]),
            adapt: AdaptSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.physics.validate()?;
        self.noise.validate()?;
        if !self.init_state.is_finite() {
            return Err(Error::invalid("initial state must be finite"));
        }
        let checked = validate_covariance(&self.init_cov)?;
        let tol = 1e-10 * self.init_cov.trace().abs().max(f64::MIN_POSITIVE);
        if (checked.0 - self.init_cov.0).abs().max() > tol {
            return Err(Error::InvalidCovariance(
                "initial covariance must be symmetric positive-semidefinite".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the state-space model (physics, `alpha`, adaptation
    /// settings). Equal hashes mean identical state equations.
    pub fn model_hash(&self) -> String {
        let model = FilterModel {
            physics: &self.physics,
            alpha: self.noise.alpha,
            adapt_window: self.noise.adapt_window,
            adapt: &self.adapt,
        };
        let json = serde_json::to_vec(&model).expect("model serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Per-step filter record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutput {
    pub x_hat: Vec<StateVector>,
    /// Posterior variances of `[J_x, J_z, ω]`.
    pub p_diag: Vec<[f64; 3]>,
    /// `y_k − g_d·Ĵ_x⁻`, V.
    pub innovation: Vec<f64>,
    /// Measurement-noise variance used in the update, V².
    pub r_hat: Vec<f64>,
}

impl FilterOutput {
    pub fn len(&self) -> usize {
        self.x_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_hat.is_empty()
    }

    pub fn omega_hat(&self) -> Vec<f64> {
        self.x_hat.iter().map(|x| x.omega).collect()
    }

    fn with_capacity(n: usize) -> Self {
        Self {
            x_hat: Vec::with_capacity(n),
            p_diag: Vec::with_capacity(n),
            innovation: Vec::with_capacity(n),
            r_hat: Vec::with_capacity(n),
        }
    }
}

/// Jacobian of the rotation–decay transition with respect to `[J_x, J_z, ω]`.
pub fn jacobian_f(x: &StateVector, p: &PhysicsParams) -> Matrix3<f64> {
    let decay = p.decay();
    let (s, c) = (x.omega * p.dt).sin_cos();
    let (ds, dc) = (decay * s, decay * c);
    Matrix3::new(
        dc,
        -ds,
        decay * p.dt * (-s * x.jx - c * x.jz),
        ds,
        dc,
        decay * p.dt * (c * x.jx - s * x.jz),
        0.0,
        0.0,
        1.0,
    )
}

/// Time update: `x⁻ = f(x)`, `P⁻ = F P Fᵀ + Q`.
pub fn ekf_predict(
    x: &StateVector,
    p: &Covariance3,
    cfg: &FilterConfig,
) -> (StateVector, Covariance3) {
    let f = jacobian_f(x, &cfg.physics);
    let q = process_noise_cov(&cfg.physics, cfg.noise.alpha);
    let prior = Covariance3(f * p.0 * f.transpose() + q.0).symmetrized();
    (propagate_mean(x, &cfg.physics), prior)
}

/// Scalar measurement update with `H = [g_d, 0, 0]` in Joseph form.
///
/// Returns the posterior state, posterior covariance and innovation.
pub fn ekf_update(
    x_prior: &StateVector,
    p_prior: &Covariance3,
    y: f64,
    g_d: f64,
    r: f64,
) -> Result<(StateVector, Covariance3, f64)> {
    let innovation = y - g_d * x_prior.jx;
    let s = g_d * g_d * p_prior.0[(0, 0)] + r;
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::NumericalFailure {
            step: 0,
            reason: format!("innovation variance {s} is not positive"),
        });
    }
    let h = Vector3::new(g_d, 0.0, 0.0);
    let gain = p_prior.0 * h / s;
    let x = x_prior.to_vector() + gain * innovation;
    let i_kh = Matrix3::identity() - gain * h.transpose();
    let post = i_kh * p_prior.0 * i_kh.transpose() + gain * gain.transpose() * r;
    Ok((
        StateVector::from_vector(&x),
        Covariance3(post).symmetrized(),
        innovation,
    ))
}

/// Windowed innovation-based noise estimate.
///
/// The candidate is `mean(v²) − mean(g_d²·P₁₁)` over the window (or the
/// reverse order for [`AdaptSign::Reversed`]). Candidates below `floor`
/// are rejected and `previous` is returned instead.
pub fn adapt_r(
    innovations: &[f64],
    hph: &[f64],
    previous: f64,
    floor: f64,
    sign: AdaptSign,
) -> Result<f64> {
    if innovations.is_empty() {
        return Err(Error::invalid("adaptation window is empty"));
    }
    if hph.len() != innovations.len() {
        return Err(Error::invalid("innovation and covariance windows differ in length"));
    }
    let n = innovations.len() as f64;
    let v2 = innovations.iter().map(|v| v * v).sum::<f64>() / n;
    let hph = hph.iter().sum::<f64>() / n;
    Ok(clamp_candidate(v2, hph, previous, floor, sign))
}

fn clamp_candidate(v2: f64, hph: f64, previous: f64, floor: f64, sign: AdaptSign) -> f64 {
    let candidate = match sign {
        AdaptSign::Standard => v2 - hph,
        AdaptSign::Reversed => hph - v2,
    };
    if candidate >= floor && candidate.is_finite() {
        candidate
    } else {
        previous
    }
}

/// Sliding window of `(v², g_d²·P₁₁)` pairs with running sums.
#[derive(Debug, Clone)]
struct InnovationWindow {
    entries: VecDeque<(f64, f64)>,
    capacity: usize,
    sum_v2: f64,
    sum_hph: f64,
    pushes: usize,
}

impl InnovationWindow {
    fn new(capacity: usize) -> Self {
        Self {
            entries: VecDeque::with_capacity(capacity + 1),
            capacity,
            sum_v2: 0.0,
            sum_hph: 0.0,
            pushes: 0,
        }
    }

    fn push(&mut self, v: f64, hph: f64) {
        let v2 = v * v;
        self.entries.push_back((v2, hph));
        self.sum_v2 += v2;
        self.sum_hph += hph;
        if self.entries.len() > self.capacity {
            let (old_v2, old_hph) = self.entries.pop_front().expect("non-empty");
            self.sum_v2 -= old_v2;
            self.sum_hph -= old_hph;
        }
        self.pushes += 1;
        // re-sum once per window turnover
        if self.pushes.is_multiple_of(self.capacity) {
            self.sum_v2 = self.entries.iter().map(|e| e.0).sum();
            self.sum_hph = self.entries.iter().map(|e| e.1).sum();
        }
    }

    fn len(&self) -> usize {
        self.entries.len()
    }

    fn means(&self) -> (f64, f64) {
        let n = self.entries.len() as f64;
        (self.sum_v2 / n, self.sum_hph / n)
    }
}

/// Result of one filter step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub x: StateVector,
    pub p: Covariance3,
    pub innovation: f64,
    pub r_used: f64,
}

/// Recursive EKF/AEKF. Strictly sequential; cloneable so a run can be
/// checkpointed or moved between workers.
#[derive(Debug, Clone)]
pub struct Filter {
    cfg: FilterConfig,
    x: StateVector,
    p: Covariance3,
    r_hat: f64,
    window: InnovationWindow,
    step: usize,
}

impl Filter {
    pub fn new(cfg: FilterConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            x: cfg.init_state,
            p: cfg.init_cov,
            r_hat: cfg.noise.r_init,
            window: InnovationWindow::new(cfg.noise.adapt_window),
            step: 0,
            cfg,
        })
    }

    pub fn state(&self) -> &StateVector {
        &self.x
    }

    pub fn covariance(&self) -> &Covariance3 {
        &self.p
    }

    pub fn r_hat(&self) -> f64 {
        self.r_hat
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    /// Predict, adapt (AEKF only) and update with one measurement.
    pub fn step(&mut self, y: f64) -> Result<StepRecord> {
        let k = self.step;
        let fail = |reason: String| Error::NumericalFailure { step: k, reason };
        let g_d = self.cfg.physics.g_d;
        let (x_prior, p_prior) = ekf_predict(&self.x, &self.p, &self.cfg);
        let adaptive = self.cfg.mode == FilterMode::Aekf;

        if adaptive && self.cfg.adapt.covariance == AdaptCovariance::Prior {
            let v = y - g_d * x_prior.jx;
            self.window.push(v, g_d * g_d * p_prior.0[(0, 0)]);
            if self.window.len() >= 2 {
                self.adapt();
            }
        }

        let r_used = self.r_hat;
        let (x, p, innovation) = ekf_update(&x_prior, &p_prior, y, g_d, r_used).map_err(|e| match e {
            Error::NumericalFailure { reason, .. } => fail(reason),
            other => other,
        })?;
        let p = repair(p).map_err(|e| fail(e.to_string()))?;
        if !x.is_finite() {
            return Err(fail("state estimate is not finite".into()));
        }

        if adaptive && self.cfg.adapt.covariance == AdaptCovariance::Posterior {
            self.window.push(innovation, g_d * g_d * p.0[(0, 0)]);
            if self.window.len() >= 2 {
                self.adapt();
            }
        }

        self.x = x;
        self.p = p;
        self.step += 1;
        Ok(StepRecord {
            x,
            p,
            innovation,
            r_used,
        })
    }

    fn adapt(&mut self) {
        let (v2, hph) = self.window.means();
        self.r_hat = clamp_candidate(
            v2,
            hph,
            self.r_hat,
            self.cfg.noise.r_floor,
            self.cfg.adapt.sign,
        );
    }
}

/// Cheap positive-definiteness check first; eigenvalue repair only when the
/// Cholesky factorization fails.
fn repair(p: Covariance3) -> Result<Covariance3> {
    if !p.is_finite() {
        return Err(Error::InvalidCovariance("covariance is not finite".into()));
    }
    if Cholesky::new(p.0).is_some() {
        Ok(p)
    } else {
        validate_covariance(&p)
    }
}

/// Runs the filter over every sample of `trace`.
pub fn run_filter(trace: &Trace, cfg: &FilterConfig) -> Result<FilterOutput> {
    trace.validate()?;
    let mut filter = Filter::new(*cfg)?;
    let mut out = FilterOutput::with_capacity(trace.len());
    for &y in &trace.y {
        let rec = filter.step(y)?;
        out.x_hat.push(rec.x);
        out.p_diag.push(rec.p.diagonal());
        out.innovation.push(rec.innovation);
        out.r_hat.push(rec.r_used);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn physics() -> PhysicsParams {
        PhysicsParams {
            gamma_relax: 2.0 * std::f64::consts::PI * 300.0,
            g_d: 0.8,
            q_x: 1.0,
            q_z: 1.0,
            dt: 5e-5,
            gyro: crate::types::RB87_GYRO,
        }
    }

    fn config(mode: FilterMode) -> FilterConfig {
        FilterConfig::new(
            mode,
            physics(),
            NoiseConfig::with_mismatch(1.0, 1.0, 0.1, 200),
            13_000.0,
            1e4,
        )
    }

    #[test]
    fn jacobian_examples() {
        let p = PhysicsParams { gamma_relax: 1e-300, ..physics() };
        let x = StateVector::new(0.7, -1.3, 0.0);
        let j = jacobian_f(&x, &p);
        let expect = Matrix3::new(1.0, 0.0, -p.dt * x.jz, 0.0, 1.0, p.dt * x.jx, 0.0, 0.0, 1.0);
        assert!((j - expect).abs().max() < 1e-15);

        let j = jacobian_f(&StateVector::new(0.0, 0.0, 1234.0), &physics());
        assert_eq!(j.column(2).into_owned(), Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn predict_examples() {
        let mut cfg = config(FilterMode::Ekf);
        cfg.physics = PhysicsParams { gamma_relax: 1e-300, q_x: 0.0, q_z: 0.0, ..cfg.physics };
        cfg.noise.alpha = 0.0;
        let p = Covariance3(Matrix3::new(2.0, 0.1, 0.2, 0.1, 3.0, 0.3, 0.2, 0.3, 4.0));
        let (_, prior) = ekf_predict(&StateVector::default(), &p, &cfg);
        assert!((prior.0 - p.0).abs().max() < 1e-15);

        let cfg = config(FilterMode::Ekf);
        let (_, prior) = ekf_predict(&StateVector::new(1.0, 2.0, 3000.0), &Covariance3::zeros(), &cfg);
        assert_eq!(prior, process_noise_cov(&cfg.physics, cfg.noise.alpha));
    }

    #[test]
    fn update_examples() {
        let (x, p, v) = ekf_update(&StateVector::default(), &Covariance3::identity(), 2.0, 1.0, 1.0)
            .unwrap();
        assert_eq!(v, 2.0);
        assert_relative_eq!(x.jx, 1.0, epsilon = 1e-15);
        assert_eq!((x.jz, x.omega), (0.0, 0.0));
        assert_relative_eq!(p.0[(0, 0)], 0.5, epsilon = 1e-15);

        let prior = StateVector::new(0.3, 0.4, 12.0);
        let (x, p, _) = ekf_update(&prior, &Covariance3::zeros(), 5.0, 1.0, 1.0).unwrap();
        assert_eq!(x, prior);
        assert_eq!(p, Covariance3::zeros());

        let pp = Covariance3(Matrix3::new(1.0, 0.2, 0.1, 0.2, 1.0, 0.0, 0.1, 0.0, 1.0));
        let r = 1e12 * 0.64 * pp.0[(0, 0)];
        let (x, _, _) = ekf_update(&prior, &pp, 9.0, 0.8, r).unwrap();
        let diff = (x.to_vector() - prior.to_vector()).norm();
        assert!(diff <= 1e-9 * prior.to_vector().norm());

        let err = ekf_update(&prior, &Covariance3::zeros(), 1.0, 1.0, 0.0).unwrap_err();
        assert!(matches!(err, Error::NumericalFailure { .. }));
    }

    #[test]
    fn adapt_r_examples() {
        assert_eq!(adapt_r(&[0.0; 5], &[1.0; 5], 0.7, 1e-9, AdaptSign::Standard).unwrap(), 0.7);
        assert_eq!(adapt_r(&[2.0; 5], &[1.0; 5], 0.7, 1e-9, AdaptSign::Standard).unwrap(), 3.0);
        assert!(adapt_r(&[], &[], 1.0, 1e-9, AdaptSign::Standard).is_err());
        // reversed order: 1 − 4 < 0 falls back
        assert_eq!(adapt_r(&[2.0; 5], &[1.0; 5], 0.7, 1e-9, AdaptSign::Reversed).unwrap(), 0.7);
    }

    #[test]
    fn adapt_r_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let v: Vec<f64> = (0..10_000)
            .map(|_| 5f64.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let r = adapt_r(&v, &vec![1.0; v.len()], 0.0, 1e-9, AdaptSign::Standard).unwrap();
        assert!((3.8..=4.2).contains(&r), "r = {r}");
    }

    #[test]
    fn window_running_sums_match_direct_sums() {
        let mut w = InnovationWindow::new(7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut all = Vec::new();
        for _ in 0..1000 {
            let v: f64 = rng.sample(StandardNormal);
            let h: f64 = rng.random();
            w.push(v, h);
            all.push((v, h));
            let tail = &all[all.len().saturating_sub(7)..];
            let direct = adapt_r(
                &tail.iter().map(|e| e.0).collect::<Vec<_>>(),
                &tail.iter().map(|e| e.1).collect::<Vec<_>>(),
                -1.0,
                -1e300,
                AdaptSign::Standard,
            )
            .unwrap();
            let (v2, hph) = w.means();
            assert_relative_eq!(v2 - hph, direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_sample_trace() {
        let cfg = config(FilterMode::Aekf);
        let trace = Trace { dt: cfg.physics.dt, y: vec![0.25], omega_true: None, meta: None };
        let out = run_filter(&trace, &cfg).unwrap();
        assert_eq!(out.len(), 1);
        let (xp, pp) = ekf_predict(&cfg.init_state, &cfg.init_cov, &cfg);
        let (x, _, _) = ekf_update(&xp, &pp, 0.25, cfg.physics.g_d, cfg.noise.r_init).unwrap();
        assert_eq!(out.x_hat[0], x);
        assert_eq!(out.r_hat[0], cfg.noise.r_init);
    }

    #[test]
    fn ekf_mode_keeps_r_constant() {
        let cfg = config(FilterMode::Ekf);
        let trace = Trace {
            dt: cfg.physics.dt,
            y: (0..500).map(|k| (k as f64 * 0.3).sin()).collect(),
            omega_true: None,
            meta: None,
        };
        let out = run_filter(&trace, &cfg).unwrap();
        assert!(out.r_hat.iter().all(|&r| r == cfg.noise.r_init));
    }

    #[test]
    fn model_hash_ignores_initial_conditions() {
        let a = config(FilterMode::Aekf);
        let mut b = a;
        b.init_state.omega += 10.0;
        b.noise = a.noise.rescaled(1000.0);
        assert_eq!(a.model_hash(), b.model_hash());
        b.noise.alpha = 0.2;
        assert_ne!(a.model_hash(), b.model_hash());
    }

    #[test]
    fn invalid_initial_covariance_rejected() {
        let mut cfg = config(FilterMode::Ekf);
        cfg.init_cov = Covariance3::from_diagonal([1.0, -1.0, 1.0]);
        assert!(matches!(Filter::new(cfg), Err(Error::InvalidCovariance(_))));
    }
}
