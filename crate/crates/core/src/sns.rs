//! Spin-noise spectroscopy baseline: Welch-averaged power spectral density,
//! Lorentzian line fit and a sensitivity figure derived from the fit.

use nalgebra::{Matrix4, Vector4};
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Bin frequencies, Hz.
    pub freqs: Vec<f64>,
    /// V²/Hz.
    pub psd: Vec<f64>,
    /// Bin spacing, Hz.
    pub resolution: f64,
    pub segments_averaged: usize,
}

/// `floor + amplitude·hwhm²/((f − f0)² + hwhm²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianParams {
    pub f0: f64,
    pub hwhm: f64,
    pub amplitude: f64,
    pub floor: f64,
}

impl LorentzianParams {
    pub fn eval(&self, f: f64) -> f64 {
        let d = f - self.f0;
        let h2 = self.hwhm * self.hwhm;
        self.floor + self.amplitude * h2 / (d * d + h2)
    }

    fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.f0, self.hwhm, self.amplitude, self.floor)
    }

    fn from_vector(v: &Vector4<f64>) -> Self {
        Self {
            f0: v[0],
            hwhm: v[1],
            amplitude: v[2],
            floor: v[3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    /// Line center, Hz.
    pub f0: f64,
    /// Half width at half maximum, Hz. FWHM is twice this.
    pub hwhm: f64,
    /// Peak height above the floor, V²/Hz.
    pub amplitude: f64,
    /// White background, V²/Hz.
    pub floor: f64,
    /// RMS of model minus data, V²/Hz.
    pub residual_rms: f64,
    /// Set when the spectrum has no usable peak (peak/floor < 1.5).
    pub degenerate: bool,
    pub iterations: usize,
}

impl LorentzianFit {
    pub fn params(&self) -> LorentzianParams {
        LorentzianParams {
            f0: self.f0,
            hwhm: self.hwhm,
            amplitude: self.amplitude,
            floor: self.floor,
        }
    }
}

/// Human-readable form of [`sensitivity_estimate`], stored next to every
/// reported value.
pub const SENSITIVITY_FORMULA: &str =
    "delta_B = (2*pi/gyro) * hwhm * sqrt(floor/amplitude)  [linewidth over peak-to-floor amplitude SNR]";

const MAX_ITERATIONS: usize = 200;
const GRADIENT_TOL: f64 = 1e-10;
const PEAK_TO_FLOOR_MIN: f64 = 1.5;

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Pairwise summation; its result does not depend on how the terms were
/// produced, only on their order.
fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Welch estimate: Hann-windowed, mean-detrended, overlapped segments,
/// averaged and scaled to a one-sided density so that `Σ psd·df ≈ var(y)`.
pub fn welch_psd(y: &[f64], fs: f64, segment_len: usize, overlap_fraction: f64) -> Result<Spectrum> {
    if segment_len < 8 {
        return Err(Error::invalid(format!("segment_len must be >= 8, got {segment_len}")));
    }
    if segment_len > y.len() {
        return Err(Error::invalid(format!(
            "segment_len {segment_len} exceeds trace length {}",
            y.len()
        )));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::invalid("overlap_fraction must be in [0, 1)"));
    }
    if !(fs > 0.0) {
        return Err(Error::invalid("sample rate must be > 0"));
    }

    let n = segment_len;
    let hop = ((n as f64 * (1.0 - overlap_fraction)).round() as usize).max(1);
    let count = (y.len() - n) / hop + 1;
    let window = hann(n);
    let scale = 1.0 / (fs * window.iter().map(|w| w * w).sum::<f64>());
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let bins = n / 2 + 1;

    let periodograms: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|s| {
            let seg = &y[s * hop..s * hop + n];
            let mean = seg.iter().sum::<f64>() / n as f64;
            let mut buf: Vec<Complex<f64>> = seg
                .iter()
                .zip(&window)
                .map(|(v, w)| Complex::new((v - mean) * w, 0.0))
                .collect();
            fft.process(&mut buf);
            (0..bins)
                .map(|k| {
                    let one_sided = if k == 0 || (n.is_multiple_of(2) && k == n / 2) { 1.0 } else { 2.0 };
                    buf[k].norm_sqr() * scale * one_sided
                })
                .collect()
        })
        .collect();

    let mut column = vec![0.0; count];
    let psd = (0..bins)
        .map(|k| {
            for (c, p) in column.iter_mut().zip(&periodograms) {
                *c = p[k];
            }
            pairwise_sum(&column) / count as f64
        })
        .collect();

    let resolution = fs / n as f64;
    Ok(Spectrum {
        freqs: (0..bins).map(|k| k as f64 * resolution).collect(),
        psd,
        resolution,
        segments_averaged: count,
    })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let m = s.len() / 2;
    if s.len().is_multiple_of(2) {
        0.5 * (s[m - 1] + s[m])
    } else {
        s[m]
    }
}

/// Initial guess from the tallest bin and its half-maximum crossings.
fn peak_guess(freqs: &[f64], psd: &[f64], resolution: f64) -> LorentzianParams {
    let floor = median(psd);
    let (ip, &peak) = psd
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty spectrum");
    let half = floor + 0.5 * (peak - floor);
    let right = psd[ip..].iter().position(|&p| p < half).unwrap_or(psd.len() - ip);
    let left = psd[..=ip].iter().rev().position(|&p| p < half).unwrap_or(ip + 1);
    let hwhm = (0.5 * (left + right) as f64 * resolution).max(resolution);
    LorentzianParams {
        f0: freqs[ip],
        hwhm,
        amplitude: (peak - floor).max(0.0),
        floor: floor.max(0.0),
    }
}

fn residuals_and_jacobian(
    freqs: &[f64],
    data: &[f64],
    p: &LorentzianParams,
) -> (f64, Vector4<f64>, Matrix4<f64>) {
    let mut cost = 0.0;
    let mut grad = Vector4::zeros();
    let mut jtj = Matrix4::zeros();
    let h2 = p.hwhm * p.hwhm;
    for (&f, &y) in freqs.iter().zip(data) {
        let d = f - p.f0;
        let den = d * d + h2;
        let shape = h2 / den;
        let r = p.floor + p.amplitude * shape - y;
        let j = Vector4::new(
            p.amplitude * 2.0 * h2 * d / (den * den),
            p.amplitude * 2.0 * p.hwhm * d * d / (den * den),
            shape,
            1.0,
        );
        cost += r * r;
        grad += j * r;
        jtj += j * j.transpose();
    }
    (cost, grad, jtj)
}

fn cost(freqs: &[f64], data: &[f64], p: &LorentzianParams) -> f64 {
    freqs
        .iter()
        .zip(data)
        .map(|(&f, &y)| (p.eval(f) - y).powi(2))
        .sum()
}

/// Levenberg–Marquardt with Marquardt diagonal scaling. Returns the final
/// parameters, iteration count and whether the gradient test passed.
fn levenberg_marquardt(
    freqs: &[f64],
    data: &[f64],
    init: LorentzianParams,
) -> (LorentzianParams, usize, bool) {
    let mut p = init;
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let (mut c, mut grad, mut jtj) = residuals_and_jacobian(freqs, data, &p);
    while iterations < MAX_ITERATIONS {
        let jnorm = jtj.trace().sqrt();
        if grad.norm() <= GRADIENT_TOL * jnorm * c.sqrt() || c == 0.0 {
            return (p, iterations, true);
        }
        iterations += 1;
        let mut accepted = false;
        while lambda < 1e20 {
            let mut a = jtj;
            for i in 0..4 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&(-grad))) else {
                lambda *= 10.0;
                continue;
            };
            let cand = LorentzianParams::from_vector(&(p.to_vector() + step));
            if cand.hwhm > 0.0 && cand.amplitude >= 0.0 && cand.floor >= 0.0 {
                let cc = cost(freqs, data, &cand);
                if cc < c {
                    p = cand;
                    lambda = (lambda * 0.1).max(1e-12);
                    accepted = true;
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left at machine precision
            return (p, iterations, true);
        }
        (c, grad, jtj) = residuals_and_jacobian(freqs, data, &p);
    }
    let jnorm = jtj.trace().sqrt();
    (p, iterations, grad.norm() <= GRADIENT_TOL * jnorm * c.sqrt())
}

/// Least-squares Lorentzian fit to `s`, skipping the DC bin.
pub fn fit_lorentzian(s: &Spectrum, init_guess: Option<LorentzianParams>) -> Result<LorentzianFit> {
    if s.psd.len() < 16 || s.freqs.len() != s.psd.len() {
        return Err(Error::invalid("spectrum needs at least 16 bins"));
    }
    let freqs = &s.freqs[1..];
    let psd = &s.psd[1..];
    let guess = peak_guess(freqs, psd, s.resolution);
    let floor = median(psd);
    let peak = psd.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let degenerate = !(peak >= PEAK_TO_FLOOR_MIN * floor) || !(peak > 0.0);
    if degenerate {
        return Ok(LorentzianFit {
            f0: guess.f0,
            hwhm: guess.hwhm,
            amplitude: guess.amplitude,
            floor: guess.floor,
            residual_rms: (cost(freqs, psd, &guess) / psd.len() as f64).sqrt(),
            degenerate: true,
            iterations: 0,
        });
    }

    // work in units of the peak height for conditioning
    let unit = peak;
    let data: Vec<f64> = psd.iter().map(|p| p / unit).collect();
    let scale_in = |p: LorentzianParams| LorentzianParams {
        amplitude: p.amplitude / unit,
        floor: p.floor / unit,
        ..p
    };
    let start = scale_in(init_guess.unwrap_or(guess));

    let finish = |p: LorentzianParams, iterations: usize| {
        let rms = (cost(freqs, &data, &p) / data.len() as f64).sqrt() * unit;
        LorentzianFit {
            f0: p.f0,
            hwhm: p.hwhm,
            amplitude: p.amplitude * unit,
            floor: p.floor * unit,
            residual_rms: rms,
            degenerate: false,
            iterations,
        }
    };

    let (p, iters, converged) = levenberg_marquardt(freqs, &data, start);
    if converged {
        return Ok(finish(p, iters));
    }

    // grid scan over the tallest bins as alternative line centers
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data[b].total_cmp(&data[a]));
    let mut best: Option<(f64, LorentzianParams, usize)> = None;
    for &i in order.iter().take(20) {
        let seed = LorentzianParams { f0: freqs[i], ..scale_in(guess) };
        let (q, it, ok) = levenberg_marquardt(freqs, &data, seed);
        if ok {
            let c = cost(freqs, &data, &q);
            if best.as_ref().is_none_or(|b| c < b.0) {
                best = Some((c, q, it));
            }
        }
    }
    match best {
        Some((_, q, it)) => Ok(finish(q, it)),
        None => Err(Error::FitDiverged {
            iterations: iters,
            last: Box::new(finish(p, iters)),
        }),
    }
}

/// Field sensitivity in nT/√Hz from a fitted line; see [`SENSITIVITY_FORMULA`].
pub fn sensitivity_estimate(fit: &LorentzianFit, gyro: f64) -> Result<f64> {
    if fit.degenerate {
        return Err(Error::invalid("sensitivity undefined for a degenerate fit"));
    }
    if !(gyro > 0.0) || !(fit.amplitude > 0.0) {
        return Err(Error::invalid("gyro and amplitude must be > 0"));
    }
    Ok(2.0 * std::f64::consts::PI / gyro * fit.hwhm * (fit.floor / fit.amplitude).sqrt())
}
