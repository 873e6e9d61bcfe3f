//! Loading recorded traces and reference-field waveforms from CSV.
//!
//! Files are UTF-8 with a mandatory header row; lines starting with `#` are
//! ignored. Every error reports the 1-based line number in the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldModelSpec, Interpolation, Waveform, WaveformSample};
use crate::sim::Trace;

/// Allowed deviation of any time step from the median step.
pub const UNIFORMITY_TOLERANCE: f64 = 0.01;
/// Allowed mismatch between the inferred and the expected sample rate.
pub const RATE_TOLERANCE: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSpec {
    pub path: PathBuf,
    #[serde(default = "default_time_col")]
    pub time_col: String,
    #[serde(default = "default_voltage_col")]
    pub voltage_col: String,
    /// Optional ground-truth column, read as rad/s after `reference_scale`.
    #[serde(default)]
    pub reference_col: Option<String>,
    /// V per recorded unit.
    #[serde(default = "unit")]
    pub voltage_scale: f64,
    /// rad/s per recorded unit of the reference column.
    #[serde(default = "unit")]
    pub reference_scale: f64,
    #[serde(default)]
    pub expected_fs: Option<f64>,
}

fn default_time_col() -> String {
    "t_s".into()
}

fn default_voltage_col() -> String {
    "y_V".into()
}

fn unit() -> f64 {
    1.0
}

impl IngestSpec {
    /// Columns as written by [`crate::io::write_trace_csv`].
    pub fn new(path: impl Into<PathBuf>) -> Self {
        IngestSpec {
            path: path.into(),
            time_col: default_time_col(),
            voltage_col: default_voltage_col(),
            reference_col: None,
            voltage_scale: 1.0,
            reference_scale: 1.0,
            expected_fs: None,
        }
    }

    pub fn with_reference(mut self, col: impl Into<String>) -> Self {
        self.reference_col = Some(col.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voltage_scale > 0.0) || !self.voltage_scale.is_finite() {
            return Err(Error::invalid("voltage_scale must be positive"));
        }
        if !(self.reference_scale > 0.0) || !self.reference_scale.is_finite() {
            return Err(Error::invalid("reference_scale must be positive"));
        }
        if let Some(fs) = self.expected_fs {
            if !(fs > 0.0) {
                return Err(Error::invalid("expected_fs must be positive"));
            }
        }
        Ok(())
    }
}

/// Header-checked CSV table, each row tagged with its file line number.
struct Table {
    header_line: u64,
    columns: Vec<usize>,
    rows: Vec<(u64, csv::StringRecord)>,
}

fn read_table(path: &Path, required: &[&str]) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers().map_err(|e| csv_error(e, 1))?.clone();
    let header_line = header.position().map(|p| p.line()).unwrap_or(1);
    if header.iter().all(|h| h.is_empty()) {
        return Err(Error::Schema { line: header_line, reason: "missing header row".into() });
    }
    let mut columns = Vec::with_capacity(required.len());
    for name in required {
        let idx = header.iter().position(|h| h == *name).ok_or_else(|| Error::Schema {
            line: header_line,
            reason: format!("missing column '{name}'"),
        })?;
        columns.push(idx);
    }
    let mut rows = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let line = reader.position().line();
        match reader.read_record(&mut record) {
            Ok(true) => {
                let line = record.position().map(|p| p.line()).unwrap_or(line);
                rows.push((line, record.clone()));
            }
            Ok(false) => break,
            Err(e) => return Err(csv_error(e, line)),
        }
    }
    if rows.is_empty() {
        return Err(Error::Schema { line: header_line, reason: "no data rows".into() });
    }
    Ok(Table { header_line, columns, rows })
}

fn csv_error(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Csv(e),
        _ => Error::Parse { line, reason: e.to_string() },
    }
}

fn parse_cell(record: &csv::StringRecord, idx: usize, name: &str, line: u64) -> Result<f64> {
    let cell = record.get(idx).unwrap_or("");
    let v: f64 = cell.parse().map_err(|_| Error::Parse {
        line,
        reason: format!("column '{name}': cannot parse '{cell}' as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, reason: format!("column '{name}': non-finite value") });
    }
    Ok(v)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if v.len() % 2 == 1 {
        return upper;
    }
    let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    0.5 * (lower + upper)
}

/// Loads a uniformly sampled voltage trace.
///
/// The sampling step is checked against the median of successive
/// differences; the returned `dt` is the end-to-end average
/// (t_last − t_first)/(n − 1), which equals the median step on any file
/// that passes the uniformity gate and carries no accumulated rounding.
pub fn load_trace_csv(spec: &IngestSpec) -> Result<Trace> {
    spec.validate()?;
    let mut names = vec![spec.time_col.as_str(), spec.voltage_col.as_str()];
    if let Some(r) = &spec.reference_col {
        names.push(r.as_str());
    }
    let table = read_table(&spec.path, &names)?;
    let n = table.rows.len();
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut reference: Option<Vec<f64>> = spec.reference_col.as_ref().map(|_| Vec::with_capacity(n));
    for (line, rec) in &table.rows {
        t.push(parse_cell(rec, table.columns[0], &spec.time_col, *line)?);
        y.push(parse_cell(rec, table.columns[1], &spec.voltage_col, *line)? * spec.voltage_scale);
        if let (Some(out), Some(name)) = (reference.as_mut(), &spec.reference_col) {
            out.push(parse_cell(rec, table.columns[2], name, *line)? * spec.reference_scale);
        }
    }
    if n < 2 {
        return Err(Error::Schema {
            line: table.rows[0].0,
            reason: "need at least two samples to infer the sampling step".into(),
        });
    }
    let diffs: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let med = median(&diffs);
    if !(med > 0.0) {
        return Err(Error::NonUniformSampling { line: table.rows[1].0, step: diffs[0], median: med });
    }
    for (i, d) in diffs.iter().enumerate() {
        if !((d - med).abs() <= UNIFORMITY_TOLERANCE * med) {
            return Err(Error::NonUniformSampling { line: table.rows[i + 1].0, step: *d, median: med });
        }
    }
    let dt = (t[n - 1] - t[0]) / (n - 1) as f64;
    if let Some(fs) = spec.expected_fs {
        let got = 1.0 / dt;
        if (got / fs - 1.0).abs() > RATE_TOLERANCE {
            return Err(Error::Schema {
                line: table.header_line,
                reason: format!("sample rate {got} Hz does not match expected {fs} Hz"),
            });
        }
    }
    let trace = Trace { dt, y, omega_true: reference, meta: None };
    trace.validate()?;
    Ok(trace)
}

/// Loads a `t_s,b_nT` reference field as a linearly interpolated waveform.
pub fn load_reference_field_csv(path: &Path) -> Result<FieldModelSpec> {
    let table = read_table(path, &["t_s", "b_nT"])?;
    let mut samples: Vec<WaveformSample> = Vec::with_capacity(table.rows.len());
    for (line, rec) in &table.rows {
        let t = parse_cell(rec, table.columns[0], "t_s", *line)?;
        let b_nt = parse_cell(rec, table.columns[1], "b_nT", *line)?;
        if let Some(prev) = samples.last() {
            if !(t > prev.t) {
                return Err(Error::Parse { line: *line, reason: format!("t_s {t} not strictly increasing") });
            }
        }
        samples.push(WaveformSample { t, b_nt });
    }
    Ok(FieldModelSpec::Waveform(Waveform { samples, interpolation: Interpolation::Linear }))
}

/// Generators for the synthetic stand-in files shipped under `data/`.
pub mod synthetic {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    use super::*;
    use crate::config::{Config, Profile};
    use crate::sim::simulate_trace_with;

    pub const BIAS_NT: f64 = 300.0;
    const FIELD_RATE: f64 = 1000.0;
    const FIELD_DURATION: f64 = 2.0;

    fn field_times() -> impl Iterator<Item = f64> {
        let n = (FIELD_DURATION * FIELD_RATE).round() as usize;
        (0..=n).map(|k| k as f64 / FIELD_RATE)
    }

    /// A seismo-magnetic-like burst: a Gaussian-windowed few-hertz
    /// oscillation with a slow random-walk background, on the bias field.
    pub fn sm_like_field() -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(1998);
        let mut drift = 0.0;
        let samples = field_times()
            .map(|t| {
                let z: f64 = StandardNormal.sample(&mut rng);
                drift += 0.05 * z;
                let envelope = (-((t - 1.0) / 0.3).powi(2)).exp();
                let burst = 8.0 * envelope * (2.0 * std::f64::consts::PI * 2.5 * t).sin();
                WaveformSample { t, b_nt: BIAS_NT + burst + drift }
            })
            .collect();
        Waveform { samples, interpolation: Interpolation::Linear }
    }

    /// Random-walk reference with an RMS spread of roughly 0.2 nT over the
    /// record.
    pub fn rw_reference_field() -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut b = 0.0;
        let samples = field_times()
            .map(|t| {
                let sample = WaveformSample { t, b_nt: BIAS_NT + b };
                let z: f64 = StandardNormal.sample(&mut rng);
                b += 0.0085 * z;
                sample
            })
            .collect();
        Waveform { samples, interpolation: Interpolation::Linear }
    }

    /// One second of desk-scale detector signal driven by [`sm_like_field`].
    pub fn sm_like_trace() -> Result<Trace> {
        let cfg = Config::for_profile(Profile::Test);
        let field = FieldModelSpec::Waveform(sm_like_field());
        simulate_trace_with(&cfg.physics, &cfg.noise_config(1.0), &field, cfg.steps_for(1.0), 1998, &cfg.sim)
    }

    /// File names under `data/` and their contents.
    pub fn bundled_files() -> Result<Vec<(&'static str, Bundled)>> {
        Ok(vec![
            ("sm_like_field.csv", Bundled::Waveform(sm_like_field())),
            ("rw_reference_field.csv", Bundled::Waveform(rw_reference_field())),
            ("sm_like_trace.csv", Bundled::Trace(sm_like_trace()?)),
        ])
    }

    pub enum Bundled {
        Waveform(Waveform),
        Trace(Trace),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn three_row_file() {
        let f = file("t_s,y_V\n0,0.1\n5e-6,-0.2\n1e-5,0.3\n");
        let tr = load_trace_csv(&IngestSpec::new(f.path())).unwrap();
        assert_eq!(tr.dt, 5e-6);
        assert_eq!(tr.y, vec![0.1, -0.2, 0.3]);
        assert!(tr.omega_true.is_none());
    }

    #[test]
    fn gap_is_non_uniform_with_line() {
        let f = file("t_s,y_V\n0,0.1\n5e-6,-0.2\n1.5e-5,0.3\n2e-5,0.3\n");
        match load_trace_csv(&IngestSpec::new(f.path())) {
            Err(Error::NonUniformSampling { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn comments_skipped_and_counted_in_lines() {
        let f = file("# recorded on bench\nt_s,y_V\n# gain 1\n0,1\n1,oops\n");
        match load_trace_csv(&IngestSpec::new(f.path())) {
            Err(Error::Parse { line, reason }) => {
                assert_eq!(line, 5);
                assert!(reason.contains("oops"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_column_is_schema_error() {
        let f = file("time,y_V\n0,1\n1,2\n");
        let e = load_trace_csv(&IngestSpec::new(f.path())).unwrap_err();
        assert!(matches!(e, Error::Schema { line: 1, .. }), "{e:?}");
    }

    #[test]
    fn ragged_row_is_parse_error() {
        let f = file("t_s,y_V\n0,1\n1,2,3\n");
        let e = load_trace_csv(&IngestSpec::new(f.path())).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 3, .. }), "{e:?}");
    }

    #[test]
    fn voltage_scale_applied_only() {
        let f = file("t_s,y_V\n0,2\n1,-4\n");
        let mut spec = IngestSpec::new(f.path());
        spec.voltage_scale = 0.5;
        assert_eq!(load_trace_csv(&spec).unwrap().y, vec![1.0, -2.0]);
        spec.voltage_scale = 0.0;
        assert!(load_trace_csv(&spec).is_err());
    }

    #[test]
    fn expected_rate_checked() {
        let f = file("t_s,y_V\n0,1\n0.001,2\n0.002,3\n");
        let mut spec = IngestSpec::new(f.path());
        spec.expected_fs = Some(1000.5);
        assert!(load_trace_csv(&spec).is_ok());
        spec.expected_fs = Some(1010.0);
        assert!(matches!(load_trace_csv(&spec), Err(Error::Schema { .. })));
    }

    #[test]
    fn reference_field_ramp_and_empty() {
        let f = file("t_s,b_nT\n0,0\n1,10\n");
        let spec = load_reference_field_csv(f.path()).unwrap();
        let FieldModelSpec::Waveform(w) = &spec else { panic!() };
        let v = crate::field::eval_waveform(w, 0.25, 2.0).unwrap();
        assert!((v - 5.0).abs() < 1e-12);
        let empty = file("t_s,b_nT\n");
        assert!(matches!(load_reference_field_csv(empty.path()), Err(Error::Schema { .. })));
        let bad = file("t_s,b_nT\n0,1\n0,2\n");
        assert!(matches!(load_reference_field_csv(bad.path()), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
