//! Monte-Carlo simulation of the precessing, relaxing spin ensemble and the
//! Faraday-rotation photocurrent it produces.
//!
//! The truth model advances with the exact rotation–decay transition used by
//! the filter. A fine-substep Euler–Maruyama integrator of the continuous
//! Bloch SDE is available for discretization-bias studies.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{generate_field, FieldModelSpec};
use crate::types::{Covariance3, NoiseConfig, PhysicsParams, StateVector};

const SPIN_STREAM: u64 = 0;
const FIELD_STREAM: u64 = 1;
const MEASUREMENT_STREAM: u64 = 2;

/// Uniformly sampled measurement record.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub dt: f64,
    /// Photodetector signal, V.
    pub y: Vec<f64>,
    /// Ground-truth Larmor frequency, rad/s.
    pub omega_true: Option<Vec<f64>>,
    pub meta: Option<TraceMeta>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub physics: PhysicsParams,
    pub seed: u64,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.is_empty() {
            return Err(Error::invalid("trace has no samples"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid("trace dt must be positive"));
        }
        if let Some(w) = &self.omega_true {
            if w.len() != self.y.len() {
                return Err(Error::invalid(format!(
                    "omega_true has {} samples, y has {}",
                    w.len(),
                    self.y.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Integrator {
    /// Exact rotation–decay transition with exact-variance noise.
    #[default]
    Exact,
    /// Euler–Maruyama on the continuous SDE with `substeps` per sample.
    EulerMaruyama { substeps: usize },
}

/// Step change of the measurement-noise variance at `at_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseJump {
    pub at_s: f64,
    pub factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimOptions {
    #[serde(default)]
    pub integrator: Integrator,
    #[serde(default)]
    pub noise_jump: Option<NoiseJump>,
}

/// Noise-free transition: rotate by ωΔ and decay by `e^(−ΓΔ)`.
pub fn propagate_mean(x: &StateVector, p: &PhysicsParams) -> StateVector {
    let decay = p.decay();
    let (s, c) = (x.omega * p.dt).sin_cos();
    StateVector {
        jx: decay * (c * x.jx - s * x.jz),
        jz: decay * (s * x.jx + c * x.jz),
        omega: x.omega,
    }
}

/// `diag((1−e^(−2ΓΔ))q_x, (1−e^(−2ΓΔ))q_z, alpha)`.
pub fn process_noise_cov(p: &PhysicsParams, alpha: f64) -> Covariance3 {
    let spin = -(-2.0 * p.gamma_relax * p.dt).exp_m1();
    Covariance3::from_diagonal([spin * p.q_x, spin * p.q_z, alpha])
}

/// `g_d·jx + √r·draw`.
pub fn synthesize_measurement(jx: f64, g_d: f64, r: f64, draw: f64) -> Result<f64> {
    if !(r >= 0.0) {
        return Err(Error::invalid(format!("measurement variance must be >= 0, got {r}")));
    }
    Ok(g_d * jx + r.sqrt() * draw)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn simulate_trace(
    p: &PhysicsParams,
    n: &NoiseConfig,
    field: &FieldModelSpec,
    steps: usize,
    seed: u64,
) -> Result<Trace> {
    simulate_trace_with(p, n, field, steps, seed, &SimOptions::default())
}

/// Simulates `steps` samples. Deterministic in `seed`; the field, the spin
/// noise and the detector noise use independent streams so that swapping
/// the field model leaves the other draws untouched.
pub fn simulate_trace_with(
    p: &PhysicsParams,
    n: &NoiseConfig,
    field: &FieldModelSpec,
    steps: usize,
    seed: u64,
    opts: &SimOptions,
) -> Result<Trace> {
    p.validate()?;
    if steps == 0 {
        return Err(Error::invalid("steps must be >= 1"));
    }
    if !(n.r_true >= 0.0) {
        return Err(Error::invalid("r_true must be >= 0"));
    }
    if let Some(jump) = opts.noise_jump {
        if !(jump.factor >= 0.0) {
            return Err(Error::invalid("noise jump factor must be >= 0"));
        }
    }
    if let Integrator::EulerMaruyama { substeps } = opts.integrator {
        if substeps == 0 {
            return Err(Error::invalid("substeps must be >= 1"));
        }
    }

    let omega = generate_field(field, steps, p.dt, p.gyro, &mut stream(seed, FIELD_STREAM))?;
    let mut spin_rng = stream(seed, SPIN_STREAM);
    let mut meas_rng = stream(seed, MEASUREMENT_STREAM);

    let q = process_noise_cov(p, 0.0).diagonal();
    let (sd_x, sd_z) = (q[0].sqrt(), q[1].sqrt());

    let mut x = StateVector {
        jx: p.q_x.sqrt() * spin_rng.sample::<f64, _>(StandardNormal),
        jz: p.q_z.sqrt() * spin_rng.sample::<f64, _>(StandardNormal),
        omega: omega[0],
    };

    let mut y = Vec::with_capacity(steps);
    for k in 0..steps {
        if k > 0 {
            x.omega = omega[k - 1];
            x = match opts.integrator {
                Integrator::Exact => {
                    let mut next = propagate_mean(&x, p);
                    next.jx += sd_x * spin_rng.sample::<f64, _>(StandardNormal);
                    next.jz += sd_z * spin_rng.sample::<f64, _>(StandardNormal);
                    next
                }
                Integrator::EulerMaruyama { substeps } => {
                    euler_maruyama(&x, p, substeps, &mut spin_rng)
                }
            };
        }
        let r = match opts.noise_jump {
            Some(jump) if k as f64 * p.dt >= jump.at_s => n.r_true * jump.factor,
            _ => n.r_true,
        };
        y.push(synthesize_measurement(
            x.jx,
            p.g_d,
            r,
            meas_rng.sample(StandardNormal),
        )?);
    }

    Ok(Trace {
        dt: p.dt,
        y,
        omega_true: Some(omega),
        meta: Some(TraceMeta { physics: *p, seed }),
    })
}

fn euler_maruyama(
    x: &StateVector,
    p: &PhysicsParams,
    substeps: usize,
    rng: &mut ChaCha8Rng,
) -> StateVector {
    let h = p.dt / substeps as f64;
    let amp_x = (2.0 * p.gamma_relax * p.q_x * h).sqrt();
    let amp_z = (2.0 * p.gamma_relax * p.q_z * h).sqrt();
    let (mut jx, mut jz) = (x.jx, x.jz);
    for _ in 0..substeps {
        let djx = (-p.gamma_relax * jx - x.omega * jz) * h;
        let djz = (x.omega * jx - p.gamma_relax * jz) * h;
        jx += djx + amp_x * rng.sample::<f64, _>(StandardNormal);
        jz += djz + amp_z * rng.sample::<f64, _>(StandardNormal);
    }
    StateVector { jx, jz, omega: x.omega }
}
