//! CSV and JSON artifact writers.
//!
//! Floats are written with `Display`, which emits the shortest decimal
//! string that parses back to the same `f64`.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiments::{AbruptTrace, SweepSummary, TrackingRun};
use crate::field::Waveform;
use crate::filter::FilterOutput;
use crate::sim::Trace;
use crate::sns::Spectrum;

pub const TRACE_HEADER: [&str; 3] = ["t_s", "y_V", "omega_true_rad_s"];
pub const FILTER_HEADER: [&str; 6] =
    ["t_s", "omega_true_rad_s", "omega_hat_rad_s", "p_omega", "innovation_V", "r_hat_V2"];
pub const SPECTRUM_HEADER: [&str; 2] = ["f_Hz", "psd_V2_per_Hz"];
pub const WAVEFORM_HEADER: [&str; 2] = ["t_s", "b_nT"];

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn write_rows<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Writes `t_s,y_V,omega_true_rad_s`; the last column is empty when the
/// trace has no ground truth. Metadata goes to a JSON sidecar next to the
/// CSV when present.
pub fn write_trace_csv(path: &Path, trace: &Trace) -> Result<()> {
    let truth = trace.omega_true.as_deref();
    write_rows(
        path,
        &TRACE_HEADER,
        (0..trace.len()).map(|k| vec![num(trace.time(k)), num(trace.y[k]), opt(truth.map(|w| w[k]))]),
    )?;
    if let Some(meta) = &trace.meta {
        write_json(&sidecar_path(path), meta)?;
    }
    Ok(())
}

/// `trace.csv` → `trace.meta.json`.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("meta.json")
}

pub fn write_filter_output_csv(path: &Path, trace: &Trace, out: &FilterOutput) -> Result<()> {
    if out.len() != trace.len() {
        return Err(Error::invalid("filter output and trace lengths differ"));
    }
    let truth = trace.omega_true.as_deref();
    write_rows(
        path,
        &FILTER_HEADER,
        (0..trace.len()).map(|k| {
            vec![
                num(trace.time(k)),
                opt(truth.map(|w| w[k])),
                num(out.x_hat[k].omega),
                num(out.p_diag[k][2]),
                num(out.innovation[k]),
                num(out.r_hat[k]),
            ]
        }),
    )
}

pub fn write_spectrum_csv(path: &Path, s: &Spectrum) -> Result<()> {
    write_rows(
        path,
        &SPECTRUM_HEADER,
        s.freqs.iter().zip(&s.psd).map(|(f, p)| vec![num(*f), num(*p)]),
    )
}

pub fn write_waveform_csv(path: &Path, w: &Waveform) -> Result<()> {
    write_rows(path, &WAVEFORM_HEADER, w.samples.iter().map(|s| vec![num(s.t), num(s.b_nt)]))
}

/// Per-(R′, mode) aggregate rows.
pub fn write_sweep_summary_csv(path: &Path, s: &SweepSummary) -> Result<()> {
    write_rows(
        path,
        &["r_prime", "mode", "mse_mean_rad2_s2", "mse_stderr_rad2_s2", "nees_mean", "trials", "failures"],
        s.rows.iter().map(|r| {
            vec![
                num(r.r_prime),
                r.mode.as_str().to_string(),
                num(r.mse_mean),
                num(r.mse_stderr),
                num(r.nees_mean),
                r.trials.to_string(),
                r.failures.to_string(),
            ]
        }),
    )
}

/// One row per trial and filter run.
pub fn write_sweep_trials_csv(path: &Path, s: &SweepSummary) -> Result<()> {
    write_rows(
        path,
        &["seed", "r_prime", "mode", "mse_rad2_s2", "nees", "failure"],
        s.trials.iter().map(|t| {
            vec![
                t.seed.to_string(),
                num(t.r_prime),
                t.mode.as_str().to_string(),
                opt(t.mse),
                opt(t.nees),
                t.failure.clone().unwrap_or_default(),
            ]
        }),
    )
}

pub fn write_abrupt_csv(path: &Path, a: &AbruptTrace) -> Result<()> {
    let truth = a.trace.omega_true.as_deref();
    write_rows(
        path,
        &[
            "t_s",
            "omega_true_rad_s",
            "omega_hat_ekf_rad_s",
            "omega_hat_aekf_rad_s",
            "r_true_V2",
            "r_hat_aekf_V2",
        ],
        (0..a.trace.len()).map(|k| {
            vec![
                num(a.trace.time(k)),
                opt(truth.map(|w| w[k])),
                num(a.ekf.x_hat[k].omega),
                num(a.aekf.x_hat[k].omega),
                num(a.r_true[k]),
                num(a.aekf.r_hat[k]),
            ]
        }),
    )
}

pub fn write_tracking_csv(path: &Path, run: &TrackingRun) -> Result<()> {
    write_filter_output_csv(path, &run.trace, &run.output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Interpolation, WaveformSample};

    #[test]
    fn trace_without_truth_leaves_column_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let trace = Trace { dt: 0.5, y: vec![0.1, -2.0], omega_true: None, meta: None };
        write_trace_csv(&path, &trace).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "t_s,y_V,omega_true_rad_s\n0,0.1,\n0.5,-2,\n");
        assert!(!sidecar_path(&path).exists());
    }

    #[test]
    fn waveform_csv_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        let w = Waveform {
            samples: vec![WaveformSample { t: 0.0, b_nt: 1.5 }, WaveformSample { t: 1.0, b_nt: -0.25 }],
            interpolation: Interpolation::Linear,
        };
        write_waveform_csv(&path, &w).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "t_s,b_nT\n0,1.5\n1,-0.25\n");
    }
}
