//! Domain types shared by the simulator, the filters and the experiment runner.
//!
//! Units are fixed crate-wide: ω in rad/s, B in nT, measurements in volts and
//! time in seconds. Conversions happen only at the I/O boundary.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gyromagnetic ratio of the ⁸⁷Rb F=2 ground state, 2π × 6.99583 Hz/nT.
pub const RB87_GYRO: f64 = 2.0 * std::f64::consts::PI * 6.99583;

/// Filter state `[J_x, J_z, ω]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateVector {
    pub jx: f64,
    pub jz: f64,
    /// Larmor frequency, rad/s.
    pub omega: f64,
}

impl StateVector {
    pub fn new(jx: f64, jz: f64, omega: f64) -> Self {
        Self { jx, jz, omega }
    }

    pub fn is_finite(&self) -> bool {
        self.jx.is_finite() && self.jz.is_finite() && self.omega.is_finite()
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.jx, self.jz, self.omega)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }
}

/// 3×3 estimation-error covariance over `[J_x, J_z, ω]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance3(pub Matrix3<f64>);

impl Covariance3 {
    pub fn zeros() -> Self {
        Covariance3(Matrix3::zeros())
    }

    pub fn identity() -> Self {
        Covariance3(Matrix3::identity())
    }

    pub fn from_diagonal(d: [f64; 3]) -> Self {
        Covariance3(Matrix3::from_diagonal(&Vector3::from(d)))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn diagonal(&self) -> [f64; 3] {
        [self.0[(0, 0)], self.0[(1, 1)], self.0[(2, 2)]]
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `(P + Pᵀ) / 2`.
    pub fn symmetrized(&self) -> Self {
        Covariance3((self.0 + self.0.transpose()) * 0.5)
    }
}

/// Symmetrizes `p` and clamps negative eigenvalues to zero.
///
/// Already symmetric positive-semidefinite input is returned unchanged up to
/// the symmetrization rounding.
pub fn validate_covariance(p: &Covariance3) -> Result<Covariance3> {
    if !p.is_finite() {
        return Err(Error::InvalidCovariance(
            "covariance has non-finite entries".into(),
        ));
    }
    let sym = p.symmetrized();
    let eig = SymmetricEigen::new(sym.0);
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return Ok(sym);
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let rebuilt = eig.eigenvectors * Matrix3::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    Ok(Covariance3(rebuilt).symmetrized())
}

/// Physical and discretization constants shared by simulator and filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsParams {
    /// Spin relaxation rate Γ, 1/s.
    pub gamma_relax: f64,
    /// Probe coupling g_D, V per spin unit.
    pub g_d: f64,
    /// Spin-noise fluctuation strengths, spin².
    pub q_x: f64,
    pub q_z: f64,
    /// Sampling interval Δ, s.
    pub dt: f64,
    /// Gyromagnetic ratio γ, rad/(s·nT).
    pub gyro: f64,
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.gamma_relax > 0.0, "gamma_relax must be > 0"),
            (self.dt > 0.0, "dt must be > 0"),
            (self.q_x >= 0.0, "q_x must be >= 0"),
            (self.q_z >= 0.0, "q_z must be >= 0"),
            (self.gyro > 0.0, "gyro must be > 0"),
            (self.g_d.is_finite(), "g_d must be finite"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::invalid(msg));
            }
        }
        Ok(())
    }

    /// Per-step amplitude decay `e^(−ΓΔ)`.
    pub fn decay(&self) -> f64 {
        (-self.gamma_relax * self.dt).exp()
    }

    /// Sampling rate 1/Δ, Hz.
    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }
}

/// Measurement-noise and adaptation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// True measurement-noise variance per sample, V².
    pub r_true: f64,
    /// Filter's assumed R at the first sample, V².
    pub r_init: f64,
    /// Artificial process noise on ω, (rad/s)² per step.
    pub alpha: f64,
    /// Sliding-window length for R adaptation.
    pub adapt_window: usize,
    /// Lower bound for adapted R, V².
    pub r_floor: f64,
}

impl NoiseConfig {
    pub const DEFAULT_WINDOW: usize = 200;
    pub const FLOOR_FRACTION: f64 = 1e-9;

    /// Noise settings with the filter's initial R set to `r_prime · r_true`.
    pub fn with_mismatch(r_true: f64, r_prime: f64, alpha: f64, adapt_window: usize) -> Self {
        let r_init = r_prime * r_true;
        Self {
            r_true,
            r_init,
            alpha,
            adapt_window,
            r_floor: Self::FLOOR_FRACTION * r_init,
        }
    }

    /// Same settings with a different initial R; the floor follows `r_init`.
    pub fn rescaled(&self, r_prime: f64) -> Self {
        Self::with_mismatch(self.r_true, r_prime, self.alpha, self.adapt_window)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.r_true > 0.0, "r_true must be > 0"),
            (self.r_init > 0.0, "r_init must be > 0"),
            (self.alpha >= 0.0, "alpha must be >= 0"),
            (self.adapt_window >= 2, "adapt_window must be >= 2"),
            (self.r_floor > 0.0, "r_floor must be > 0"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::invalid(msg));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identity_is_left_alone() {
        let p = validate_covariance(&Covariance3::identity()).unwrap();
        assert_eq!(p, Covariance3::identity());
    }

    #[test]
    fn asymmetric_block_is_symmetrized_then_clamped() {
        let mut m = Matrix3::identity();
        m[(0, 1)] = 2.0;
        let p = validate_covariance(&Covariance3(m)).unwrap();
        // [[1,1],[1,1]] has eigenvalues {0, 2}: already PSD after symmetrization
        assert_relative_eq!(p.0[(0, 1)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(p.0[(1, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(p.0[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(p.0[(2, 2)], 1.0, epsilon = 1e-15);
        let eig = SymmetricEigen::new(p.0);
        assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-15));

        // a block that is indefinite after symmetrization
        let mut m = Matrix3::identity();
        m[(0, 1)] = 4.0;
        let p = validate_covariance(&Covariance3(m)).unwrap();
        let eig = SymmetricEigen::new(p.0);
        assert!(eig.eigenvalues.iter().all(|&l| l >= -1e-14));
        // nearest PSD to [[1,2],[2,1]] is 1.5·[[1,1],[1,1]]
        assert_relative_eq!(p.0[(0, 0)], 1.5, epsilon = 1e-12);
        assert_relative_eq!(p.0[(0, 1)], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn non_finite_rejected() {
        let mut m = Matrix3::identity();
        m[(2, 1)] = f64::NAN;
        assert!(matches!(
            validate_covariance(&Covariance3(m)),
            Err(Error::InvalidCovariance(_))
        ));
    }

    #[test]
    fn noise_config_rules() {
        let n = NoiseConfig::with_mismatch(2.0, 10.0, 0.1, 200);
        assert_eq!(n.r_init, 20.0);
        assert!(n.validate().is_ok());
        let bad = NoiseConfig { adapt_window: 1, ..n };
        assert!(bad.validate().is_err());
    }
}
