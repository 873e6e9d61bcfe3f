use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use spintrack::config::{Config, Profile};
use spintrack::experiments::{
    self, analyze_spectrum, run_abrupt_noise_scenario, run_mse_sweep, run_sns_scenario, run_tracking_trials,
    SweepConfig, TrackingSummary,
};
use spintrack::field::FieldModelSpec;
use spintrack::filter::{run_filter, FilterMode};
use spintrack::ingest::{load_reference_field_csv, load_trace_csv, IngestSpec};
use spintrack::io;
use spintrack::sim::simulate_trace_with;

#[derive(Parser)]
#[command(name = "spintrack", version, about = "Adaptive EKF magnetometry from spin-noise signals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
}

#[derive(Copy, Clone, ValueEnum)]
enum ProfileArg {
    Test,
    Full,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Test => Profile::Test,
            ProfileArg::Full => Profile::Full,
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum ModeArg {
    Ekf,
    Aekf,
}

impl From<ModeArg> for FilterMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Ekf => FilterMode::Ekf,
            ModeArg::Aekf => FilterMode::Aekf,
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum FieldArg {
    /// The `field` entry of the config.
    Config,
    Ou,
    Piecewise,
    /// A `t_s,b_nT` file given with --waveform.
    Waveform,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one detector trace.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "config")]
        field: FieldArg,
        #[arg(long)]
        waveform: Option<PathBuf>,
    },
    /// Run the EKF or AEKF over a trace CSV.
    Filter {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Initial R as a multiple of the configured r_true.
        #[arg(long)]
        r_prime: Option<f64>,
        /// Column holding ground-truth ω in rad/s.
        #[arg(long)]
        reference_col: Option<String>,
    },
    /// Monte-Carlo MSE over the R′ mismatch grid for EKF and AEKF.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Step the measurement noise mid-run and compare EKF with AEKF.
    Abrupt {
        #[command(flatten)]
        common: Common,
    },
    /// Track a field the filter has no model for.
    Track {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "ou")]
        field: FieldArg,
        #[arg(long)]
        waveform: Option<PathBuf>,
    },
    /// Spin-noise spectrum and Lorentzian fit.
    Sns {
        #[command(flatten)]
        common: Common,
        /// Analyze this trace instead of simulating one.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Load and validate a recorded trace, writing it in the standard schema.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Reference field file (`t_s,b_nT`).
        #[arg(long)]
        waveform: Option<PathBuf>,
        #[arg(long, default_value = "t_s")]
        time_col: String,
        #[arg(long, default_value = "y_V")]
        voltage_col: String,
        #[arg(long)]
        reference_col: Option<String>,
        #[arg(long, default_value_t = 1.0)]
        voltage_scale: f64,
        #[arg(long)]
        expected_fs: Option<f64>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Simulate { common, .. }
            | Command::Filter { common, .. }
            | Command::Sweep { common }
            | Command::Abrupt { common }
            | Command::Track { common, .. }
            | Command::Sns { common, .. }
            | Command::Ingest { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Filter { .. } => "filter",
            Command::Sweep { .. } => "sweep",
            Command::Abrupt { .. } => "abrupt",
            Command::Track { .. } => "track",
            Command::Sns { .. } => "sns",
            Command::Ingest { .. } => "ingest",
        }
    }
}

fn load_config(common: &Common) -> anyhow::Result<Config> {
    let mut cfg = match &common.config {
        Some(path) => Config::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => Config::for_profile(common.profile.map(Into::into).unwrap_or(Profile::Test)),
    };
    if let (Some(_), Some(p)) = (&common.config, common.profile) {
        cfg.apply_profile(p.into());
    }
    if let Some(seed) = common.seed {
        cfg.run.seed = seed;
    }
    if let Some(trials) = common.trials {
        cfg.run.trials = trials;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_field(cfg: &Config, field: FieldArg, waveform: Option<&Path>) -> anyhow::Result<FieldModelSpec> {
    Ok(match field {
        FieldArg::Config => cfg.field.clone(),
        FieldArg::Ou => cfg.ou_field(),
        FieldArg::Piecewise => cfg.piecewise_field(),
        FieldArg::Waveform => match waveform {
            Some(path) => load_reference_field_csv(path)?,
            None => bail!(spintrack::Error::InvalidParameter("--field waveform needs --waveform <csv>".into())),
        },
    })
}

/// Writes the effective config and the run summary.
fn finish(out: &Path, command: &str, cfg: &Config, results: Value) -> anyhow::Result<Value> {
    cfg.save(&out.join("config.json"))?;
    let summary = json!({
        "command": command,
        "config_hash": cfg.hash(),
        "results": results,
    });
    io::write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn run(cli: Cli) -> anyhow::Result<Value> {
    let common = cli.command.common().clone();
    let cfg = load_config(&common)?;
    let out = common.out_dir.as_path();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let name = cli.command.name();

    let results = match cli.command {
        Command::Simulate { field, waveform, .. } => {
            let spec = resolve_field(&cfg, field, waveform.as_deref())?;
            let trace = simulate_trace_with(
                &cfg.physics,
                &cfg.noise_config(1.0),
                &spec,
                cfg.steps(),
                cfg.run.seed,
                &cfg.sim,
            )?;
            io::write_trace_csv(&out.join("trace.csv"), &trace)?;
            json!({ "samples": trace.len(), "dt": trace.dt, "seed": cfg.run.seed, "field": spec.kind(), "trace_csv": "trace.csv" })
        }
        Command::Filter { trace, mode, r_prime, reference_col, .. } => {
            let mut spec = IngestSpec::new(&trace);
            spec.reference_col = reference_col;
            let trace = load_trace_csv(&spec)?;
            let mode = mode.map(Into::into).unwrap_or(cfg.filter.mode);
            let r_prime = r_prime.unwrap_or(cfg.noise.r_prime);
            let mut fc = cfg.filter_config(mode, r_prime);
            fc.physics.dt = trace.dt;
            let output = run_filter(&trace, &fc)?;
            io::write_filter_output_csv(&out.join("filter.csv"), &trace, &output)?;
            let mse = match &trace.omega_true {
                Some(w) => Some(experiments::compute_mse(w, &output.omega_hat(), trace.dt, cfg.run.burn_in_s)?),
                None => None,
            };
            json!({
                "mode": mode.as_str(),
                "r_prime": r_prime,
                "samples": trace.len(),
                "model_hash": fc.model_hash(),
                "mse_rad2_s2": mse,
                "final_r_hat_V2": output.r_hat.last(),
                "filter_csv": "filter.csv",
            })
        }
        Command::Sweep { .. } => {
            let summary = run_mse_sweep(&SweepConfig::from_config(&cfg))?;
            io::write_sweep_summary_csv(&out.join("sweep_summary.csv"), &summary)?;
            io::write_sweep_trials_csv(&out.join("sweep_trials.csv"), &summary)?;
            json!({ "rows": summary.rows, "summary_csv": "sweep_summary.csv", "trials_csv": "sweep_trials.csv" })
        }
        Command::Abrupt { .. } => {
            let result = run_abrupt_noise_scenario(&cfg)?;
            if let Some(first) = &result.first {
                io::write_abrupt_csv(&out.join("abrupt_trace.csv"), first)?;
            }
            let mut v = serde_json::to_value(&result.summary)?;
            v["trace_csv"] = json!(result.first.as_ref().map(|_| "abrupt_trace.csv"));
            v
        }
        Command::Track { field, waveform, .. } => {
            let spec = resolve_field(&cfg, field, waveform.as_deref())?;
            let runs = run_tracking_trials(&cfg, &spec)?;
            let mut files = Vec::with_capacity(runs.len());
            for r in &runs {
                let file = format!("track_{}_seed{}.csv", spec.kind(), r.metrics.seed);
                io::write_tracking_csv(&out.join(&file), r)?;
                files.push(file);
            }
            let mut v = serde_json::to_value(TrackingSummary::from_runs(&runs)?)?;
            v["trial_csvs"] = json!(files);
            v
        }
        Command::Sns { trace, .. } => {
            let (spectrum, report) = match trace {
                Some(path) => {
                    let trace = load_trace_csv(&IngestSpec::new(path))?;
                    analyze_spectrum(&trace.y, 1.0 / trace.dt, cfg.sns.segment_len, cfg.sns.overlap, cfg.physics.gyro)?
                }
                None => {
                    let (_, spectrum, report) = run_sns_scenario(&cfg, cfg.run.seed)?;
                    (spectrum, report)
                }
            };
            io::write_spectrum_csv(&out.join("spectrum.csv"), &spectrum)?;
            let mut v = serde_json::to_value(&report)?;
            v["spectrum_csv"] = json!("spectrum.csv");
            v
        }
        Command::Ingest { trace, waveform, time_col, voltage_col, reference_col, voltage_scale, expected_fs, .. } => {
            if trace.is_none() && waveform.is_none() {
                bail!(spintrack::Error::InvalidParameter("ingest needs --trace and/or --waveform".into()));
            }
            let mut v = json!({});
            if let Some(path) = trace {
                let spec = IngestSpec {
                    path,
                    time_col,
                    voltage_col,
                    reference_col,
                    voltage_scale,
                    reference_scale: 1.0,
                    expected_fs,
                };
                let trace = load_trace_csv(&spec)?;
                io::write_trace_csv(&out.join("trace.csv"), &trace)?;
                v["trace"] = json!({
                    "samples": trace.len(),
                    "dt": trace.dt,
                    "sample_rate_hz": 1.0 / trace.dt,
                    "has_reference": trace.omega_true.is_some(),
                    "trace_csv": "trace.csv",
                });
            }
            if let Some(path) = waveform {
                let FieldModelSpec::Waveform(w) = load_reference_field_csv(&path)? else {
                    unreachable!("reference loader returns a waveform")
                };
                io::write_waveform_csv(&out.join("waveform.csv"), &w)?;
                v["waveform"] = json!({
                    "samples": w.samples.len(),
                    "t_first": w.t_first(),
                    "t_last": w.t_last(),
                    "waveform_csv": "waveform.csv",
                });
            }
            v
        }
    };
    finish(out, name, &cfg, results)
}

fn error_report(e: &anyhow::Error) -> Value {
    let lib = e.chain().find_map(|c| c.downcast_ref::<spintrack::Error>());
    json!({
        "error": {
            "kind": lib.map(|l| l.kind()).unwrap_or("Error"),
            "line": lib.and_then(|l| l.line()),
            "message": format!("{e:#}"),
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let report = json!({ "error": { "kind": "UsageError", "line": null, "message": e.to_string() } });
            eprintln!("{report}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            // A closed pipe on stdout is not a failure of the run.
            let _ = writeln!(std::io::stdout(), "{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_report(&e));
            ExitCode::FAILURE
        }
    }
}
