//! `pixsim`: batch experiments over the processing-in-pixel simulator.
//!
//! Every command writes its artifacts, a `config.json` snapshot and a
//! `manifest.json` of content hashes into `--out`. Failures print one JSON
//! object on stderr and exit nonzero.

mod commands;
mod output;
mod selftest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pixsim_core::io::config::load_config;
use pixsim_core::{Backend, Error, SimConfig};
use serde_json::json;

#[derive(Parser)]
#[command(name = "pixsim", version, about = "Processing-in-pixel VC-MTJ front-end simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads, 0 for one per core. Never affects results.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Ideal,
    HardwareCurve,
    HardwareStochastic,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Ideal => Backend::Ideal,
            BackendArg::HardwareCurve => Backend::HardwareCurve,
            BackendArg::HardwareStochastic => Backend::HardwareStochastic,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the first layer on one frame: binary feature map plus metrics.
    SimulateFrame {
        #[command(flatten)]
        common: Common,
        /// PGM/PPM or raw `.pipb` Bayer frame; a seeded random frame of the
        /// configured input geometry when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum)]
        backend: Option<BackendArg>,
    },
    /// Majority-vote error versus replica count, closed form and Monte Carlo.
    Redundancy {
        #[command(flatten)]
        common: Common,
    },
    /// Toy-classifier accuracy over a grid of injected activation errors.
    ErrorSweep {
        #[command(flatten)]
        common: Common,
    },
    /// Compression ratio and sparse-coded link size.
    Bandwidth {
        #[command(flatten)]
        common: Common,
    },
    /// Front-end and link energy of the three architectures.
    Energy {
        #[command(flatten)]
        common: Common,
    },
    /// Global-shutter frame time.
    Timing {
        #[command(flatten)]
        common: Common,
    },
    /// Fit a switching profile to measured probabilities.
    DeviceFit {
        #[command(flatten)]
        common: Common,
        /// CSV with header `initial_state,voltage_v,pulse_width_s,p_switch`;
        /// repeated rows are averaged.
        #[arg(long)]
        input: PathBuf,
    },
    /// Closed-form versus Monte Carlo and ideal versus circuit checks.
    Selftest {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::SimulateFrame { common, .. }
            | Command::Redundancy { common }
            | Command::ErrorSweep { common }
            | Command::Bandwidth { common }
            | Command::Energy { common }
            | Command::Timing { common }
            | Command::DeviceFit { common, .. }
            | Command::Selftest { common } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::SimulateFrame { .. } => "simulate-frame",
            Command::Redundancy { .. } => "redundancy",
            Command::ErrorSweep { .. } => "error-sweep",
            Command::Bandwidth { .. } => "bandwidth",
            Command::Energy { .. } => "energy",
            Command::Timing { .. } => "timing",
            Command::DeviceFit { .. } => "device-fit",
            Command::Selftest { .. } => "selftest",
        }
    }
}

fn resolve_config(common: &Common) -> Result<SimConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => load_config(p)?,
        None => SimConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool, Error> {
    let common = cli.command.common();
    rayon::ThreadPoolBuilder::new()
        .num_threads(common.threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let cfg = resolve_config(common)?;
    let format = common.format;
    let name = cli.command.name();
    let mut out = output::OutputDir::create(&cfg.output_dir)?;
    out.write("config.json", cfg.to_json()?.as_bytes())?;
    let passed = match &cli.command {
        Command::SimulateFrame { input, backend, .. } => {
            commands::simulate_frame(&cfg, &mut out, input.as_deref(), backend.map(Into::into))?
        }
        Command::Redundancy { .. } => commands::redundancy(&cfg, &mut out, format.unwrap_or(Format::Csv))?,
        Command::ErrorSweep { .. } => commands::error_sweep(&cfg, &mut out, format.unwrap_or(Format::Csv))?,
        Command::Bandwidth { .. } => commands::bandwidth(&cfg, &mut out)?,
        Command::Energy { .. } => commands::energy(&cfg, &mut out, format.unwrap_or(Format::Json))?,
        Command::Timing { .. } => commands::timing(&cfg, &mut out)?,
        Command::DeviceFit { input, .. } => commands::device_fit(&cfg, &mut out, input)?,
        Command::Selftest { .. } => selftest::run(&cfg, &mut out)?,
    };
    let manifest = out.finish(name)?;
    println!("{}", json!({ "command": name, "passed": passed, "manifest": manifest }));
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", error_report(&e));
            ExitCode::from(2)
        }
    }
}

fn error_report(e: &Error) -> serde_json::Value {
    let details = match e {
        Error::Validation(v) => v.clone(),
        _ => Vec::new(),
    };
    json!({ "error": { "kind": e.kind(), "message": e.to_string(), "details": details } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use pixsim_core::io::config::parse_config;

    #[test]
    fn validation_errors_list_every_violation() {
        let e = parse_config(r#"{ "bank": { "n": 0 }, "workload": { "sparsity": 2.0 } }"#).unwrap_err();
        let v = error_report(&e);
        assert_eq!(v["error"]["kind"], e.kind());
        assert!(v["error"]["details"].as_array().unwrap().len() >= 2, "{v}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = parse_config(r#"{ "bank": { "replicas": 8 } }"#).unwrap_err();
        assert!(error_report(&e)["error"]["message"]
            .as_str()
            .unwrap()
            .contains("replicas"));
    }

    #[test]
    fn cli_parses_every_subcommand() {
        for args in [
            &["pixsim", "simulate-frame", "--backend", "ideal"][..],
            &["pixsim", "redundancy", "--format", "json", "--threads", "2"],
            &["pixsim", "error-sweep", "--seed", "3"],
            &["pixsim", "bandwidth"],
            &["pixsim", "energy", "--format", "csv"],
            &["pixsim", "timing", "--out", "x"],
            &["pixsim", "device-fit", "--input", "m.csv"],
            &["pixsim", "selftest"],
        ] {
            Cli::try_parse_from(args).unwrap_or_else(|e| panic!("{args:?}: {e}"));
        }
        assert!(Cli::try_parse_from(["pixsim", "device-fit"]).is_err());
    }
}
