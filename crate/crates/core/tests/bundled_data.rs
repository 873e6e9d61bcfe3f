//! The synthetic files under `data/` must match their generators exactly.
//!
//! Set `SPINTRACK_REGENERATE_DATA=1` to rewrite them.

use std::path::{Path, PathBuf};

use spintrack::ingest::synthetic::{bundled_files, Bundled};
use spintrack::ingest::{load_reference_field_csv, load_trace_csv, IngestSpec};
use spintrack::{io, FieldModelSpec};

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

#[test]
fn bundled_files_match_generators() {
    let dir = data_dir();
    if std::env::var("SPINTRACK_REGENERATE_DATA").as_deref() == Ok("1") {
        std::fs::create_dir_all(&dir).unwrap();
        for (name, content) in bundled_files().unwrap() {
            match content {
                Bundled::Waveform(w) => io::write_waveform_csv(&dir.join(name), &w).unwrap(),
                Bundled::Trace(t) => io::write_trace_csv(&dir.join(name), &t).unwrap(),
            }
        }
    }
    for (name, content) in bundled_files().unwrap() {
        let path = dir.join(name);
        match content {
            Bundled::Waveform(w) => {
                let FieldModelSpec::Waveform(loaded) = load_reference_field_csv(&path).unwrap() else {
                    panic!("{name}: not a waveform")
                };
                assert_eq!(loaded, w, "{name}");
            }
            Bundled::Trace(t) => {
                let loaded = load_trace_csv(&IngestSpec::new(&path).with_reference("omega_true_rad_s")).unwrap();
                assert_eq!(loaded.y, t.y, "{name}");
                assert_eq!(loaded.omega_true, t.omega_true, "{name}");
                assert_eq!(loaded.dt, t.dt, "{name}");
            }
        }
    }
}

#[test]
fn random_walk_reference_amplitude() {
    let FieldModelSpec::Waveform(w) = load_reference_field_csv(&data_dir().join("rw_reference_field.csv")).unwrap() else {
        panic!()
    };
    let b: Vec<f64> = w.samples.iter().map(|s| s.b_nt).collect();
    let mean = b.iter().sum::<f64>() / b.len() as f64;
    let rms = (b.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / b.len() as f64).sqrt();
    assert!(rms > 0.05 && rms < 1.0, "rms spread {rms} nT");
}
