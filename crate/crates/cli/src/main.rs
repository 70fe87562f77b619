use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tetra_aoi_cli::{
    load_config, run_sweep, run_summary, run_validate, runs_csv, validate_csv, validate_passed, validate_report,
    write_output, CliError, SweepRow,
};
use tetra_aoi_netsim::{ConfigError, ValidateSpec};

#[derive(Parser)]
#[command(name = "tetra-aoi", version, about = "Age of information of TETRA status updates")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination. Only sweep falls back to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compare the abstract-queue simulation with the closed forms.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Deliveries per grid point.
        #[arg(long)]
        deliveries: Option<u64>,
    },
    /// Sweep one scenario parameter, one CSV row per point and replication.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        replications: Option<u32>,
    },
    /// Run a single scenario and print a summary.
    Run {
        #[command(flatten)]
        common: Common,
        /// Write an event trace (default trace.tsv).
        #[arg(long, num_args = 0..=1, default_missing_value = "trace.tsv")]
        trace: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<u8, CliError> {
    match cmd {
        Cmd::Validate { common, deliveries } => {
            let cfg = load_config(common.config.as_deref())?;
            let mut spec = cfg.validate.clone().unwrap_or_default();
            if let Some(n) = deliveries {
                spec.deliveries = n;
            }
            validate(&spec, common.seed.unwrap_or(cfg.seed), common.out.as_deref())
        }
        Cmd::Sweep { common, replications } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let mut spec = cfg
                .sweep
                .clone()
                .ok_or_else(|| ConfigError::invalid("sweep", "config has no [sweep] section"))?;
            if let Some(r) = replications {
                spec.replications = r;
            }
            let rows = run_sweep(&cfg, &spec)?;
            write_output(common.out.as_deref(), &runs_csv(&rows)?)?;
            Ok(0)
        }
        Cmd::Run { common, trace } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            cfg.sweep = None;
            let sink = match &trace {
                Some(p) => Some(Box::new(std::io::BufWriter::new(std::fs::File::create(p).map_err(|e| {
                    CliError::Io {
                        path: p.display().to_string(),
                        source: e,
                    }
                })?)) as Box<dyn std::io::Write + Send>),
                None => None,
            };
            let result = tetra_aoi_netsim::run_traced(&cfg, sink)?;
            print!("{}", run_summary(&result));
            if let Some(out) = &common.out {
                let row = SweepRow {
                    point: 0,
                    replication: 0,
                    parameter: String::new(),
                    value: None,
                    seed: cfg.seed,
                    config: cfg.clone(),
                    result,
                };
                write_output(Some(out), &runs_csv(&[row])?)?;
            }
            Ok(0)
        }
    }
}

fn validate(spec: &ValidateSpec, seed: u64, out: Option<&Path>) -> Result<u8, CliError> {
    let rows = run_validate(spec, seed)?;
    print!("{}", validate_report(&rows));
    if let Some(p) = out {
        write_output(Some(p), &validate_csv(&rows)?)?;
    }
    Ok(if validate_passed(&rows) { 0 } else { 1 })
}
