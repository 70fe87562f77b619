//! Runner behind the `tetra-aoi` binary: abstract-model validation against the
//! closed forms, parameter sweeps of the protocol simulator, and single runs.
//!
//! CSV output carries a `schema` column; floats use 9 significant digits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use tetra_aoi_core::analytic;
use tetra_aoi_core::metrics::Summary;
use tetra_aoi_core::queue::{simulate_abstract, AbstractRunConfig, QueueError};
use tetra_aoi_core::rng::derive_seed;
use tetra_aoi_core::{ModelParams, ParamError};
use tetra_aoi_netsim::{ConfigError, NetError, NetRunResult, ScenarioConfig, SeedPolicy, SweepSpec, ValidateSpec};
use thiserror::Error;

pub const SCHEMA: &str = "v1";

/// Deviations allowed between the closed form and the simulated mean.
pub const K_SIGMA: f64 = 3.0;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("invalid model parameters: {0}")]
    Param(#[from] ParamError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for bad input, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Param(_) => 2,
            CliError::Net(NetError::Config(_)) => 2,
            CliError::Queue(QueueError::Param(_)) => 2,
            _ => 1,
        }
    }
}

pub fn fmt_f(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn load_config(path: Option<&Path>) -> Result<ScenarioConfig, CliError> {
    let cfg = match path {
        Some(p) => ScenarioConfig::from_path(p)?,
        None => ScenarioConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    use std::io::Write;
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::Io {
            path: p.display().to_string(),
            source: e,
        }),
        None => std::io::stdout().write_all(bytes).map_err(|e| CliError::Io {
            path: "stdout".into(),
            source: e,
        }),
    }
}

// ---- validate ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    /// Too few samples for a meaningful interval.
    Warn,
    Fail,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Warn => "WARN",
            Verdict::Fail => "FAIL",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ValidateRow {
    pub params: ModelParams,
    pub seed: u64,
    pub analytic: f64,
    pub simulated: Summary,
    pub delivered: u64,
    pub mean_attempts: f64,
    pub verdict: Verdict,
}

impl ValidateRow {
    pub fn rel_error(&self) -> f64 {
        (self.simulated.mean - self.analytic).abs() / self.analytic
    }

    pub fn z(&self) -> f64 {
        self.simulated.z_score(self.analytic)
    }
}

/// Grid points in report order: discipline, then alpha, then lambda.
pub fn validate_grid(spec: &ValidateSpec) -> Result<Vec<ModelParams>, CliError> {
    spec.validate()?;
    let mut out = Vec::new();
    for &d in &spec.disciplines {
        for &a in &spec.alpha {
            for &l in &spec.lambda_f {
                out.push(ModelParams::new(l, spec.mu, a, d)?);
            }
        }
    }
    Ok(out)
}

pub fn run_validate(spec: &ValidateSpec, seed: u64) -> Result<Vec<ValidateRow>, CliError> {
    let grid = validate_grid(spec)?;
    grid.par_iter()
        .enumerate()
        .map(|(k, p)| {
            let point_seed = derive_seed(seed, k as u64, 0);
            let exact = analytic::paoi(p)
                .expect("grid holds only disciplines with a closed form")?
                .paoi;
            let cfg = AbstractRunConfig::new(spec.deliveries, point_seed);
            let run = simulate_abstract(p, &cfg)?;
            let s = run.result.mean_paoi;
            let verdict = if s.flagged {
                Verdict::Warn
            } else if s.covers(exact, K_SIGMA) {
                Verdict::Pass
            } else {
                Verdict::Fail
            };
            Ok(ValidateRow {
                params: *p,
                seed: point_seed,
                analytic: exact,
                simulated: s,
                delivered: run.result.delivered,
                mean_attempts: run.mean_attempts,
                verdict,
            })
        })
        .collect()
}

pub fn validate_passed(rows: &[ValidateRow]) -> bool {
    rows.iter().all(|r| r.verdict != Verdict::Fail)
}

pub fn validate_csv(rows: &[ValidateRow]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "schema",
        "discipline",
        "lambda_f",
        "mu",
        "alpha",
        "seed",
        "analytic_paoi",
        "sim_paoi",
        "sim_ci95",
        "sim_std_error",
        "z",
        "rel_error",
        "n_samples",
        "delivered",
        "mean_attempts",
        "verdict",
    ])?;
    for r in rows {
        let p = &r.params;
        w.write_record([
            SCHEMA.to_string(),
            p.discipline.to_string(),
            fmt_f(p.lambda_f),
            fmt_f(p.mu),
            fmt_f(p.alpha),
            r.seed.to_string(),
            fmt_f(r.analytic),
            fmt_f(r.simulated.mean),
            fmt_f(r.simulated.ci95),
            fmt_f(r.simulated.std_error),
            fmt_f(r.z()),
            fmt_f(r.rel_error()),
            r.simulated.n_samples.to_string(),
            r.delivered.to_string(),
            fmt_f(r.mean_attempts),
            r.verdict.as_str().to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| CliError::Io {
        path: "csv buffer".into(),
        source: e.into_error(),
    })
}

pub fn validate_report(rows: &[ValidateRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<8} {:>8} {:>6} {:>6} {:>12} {:>12} {:>10} {:>8} {:>9}  verdict",
        "disc", "lambda_f", "mu", "alpha", "analytic", "simulated", "ci95", "z", "rel_err"
    );
    for r in rows {
        let p = &r.params;
        let _ = writeln!(
            s,
            "{:<8} {:>8.4} {:>6.3} {:>6.3} {:>12.6} {:>12.6} {:>10.6} {:>8.3} {:>9.2e}  {}",
            p.discipline.as_str(),
            p.lambda_f,
            p.mu,
            p.alpha,
            r.analytic,
            r.simulated.mean,
            r.simulated.ci95,
            r.z(),
            r.rel_error(),
            r.verdict.as_str()
        );
    }
    let fails = rows.iter().filter(|r| r.verdict == Verdict::Fail).count();
    let warns = rows.iter().filter(|r| r.verdict == Verdict::Warn).count();
    if fails == 0 {
        let _ = writeln!(s, "PASS: {} points within {K_SIGMA} sigma ({warns} warnings)", rows.len());
    } else {
        let _ = writeln!(s, "FAIL: {fails} of {} points outside {K_SIGMA} sigma", rows.len());
    }
    s
}

// ---- sweep and run ----

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub point: usize,
    pub replication: u32,
    pub parameter: String,
    pub value: Option<f64>,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub result: NetRunResult,
}

pub fn sweep_seed(master: u64, policy: SeedPolicy, point: usize, replication: u32) -> u64 {
    let p = match policy {
        SeedPolicy::Common => 0,
        SeedPolicy::Independent => point as u64 + 1,
    };
    derive_seed(master, p, u64::from(replication))
}

/// Runs every (point, replication) pair; rows come back sorted by point, then replication.
pub fn run_sweep(base: &ScenarioConfig, spec: &SweepSpec) -> Result<Vec<SweepRow>, CliError> {
    let mut base = base.clone();
    base.sweep = None;
    spec.validate(&base)?;
    let points = spec.points()?;
    let mut jobs = Vec::new();
    for (k, &v) in points.iter().enumerate() {
        for r in 0..spec.replications {
            let mut cfg = base.with_param(&spec.parameter, v)?;
            cfg.seed = sweep_seed(base.seed, spec.seeds, k, r);
            jobs.push((k, r, v, cfg));
        }
    }
    let mut rows = jobs
        .into_par_iter()
        .map(|(k, r, v, cfg)| {
            let result = tetra_aoi_netsim::run(&cfg)?;
            Ok(SweepRow {
                point: k,
                replication: r,
                parameter: spec.parameter.clone(),
                value: Some(v),
                seed: cfg.seed,
                config: cfg,
                result,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    rows.sort_by_key(|r| (r.point, r.replication));
    Ok(rows)
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut BTreeMap<String, String>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

/// `key=value` pairs where `cfg` differs from the defaults, `;`-separated.
/// The seed is left out.
pub fn config_deltas(cfg: &ScenarioConfig) -> String {
    let table = |c: &ScenarioConfig| {
        let mut c = c.clone();
        c.sweep = None;
        c.validate = None;
        // Has its own column, and derived seeds overflow TOML integers.
        c.seed = ScenarioConfig::default().seed;
        let mut m = BTreeMap::new();
        flatten("", &toml::Value::try_from(&c).expect("config serializes"), &mut m);
        m
    };
    let ours = table(cfg);
    let defaults = table(&ScenarioConfig::default());
    ours.iter()
        .filter(|(k, v)| defaults.get(*k) != Some(v))
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(";")
}

const RUN_HEADER: [&str; 37] = [
    "schema",
    "point",
    "replication",
    "parameter",
    "value",
    "seed",
    "mode",
    "setting",
    "fr_discipline",
    "gw_discipline",
    "n_f",
    "n_c",
    "lambda_f",
    "alpha_ch",
    "horizon",
    "config_deltas",
    "mean_paoi",
    "ci95",
    "std_error",
    "n_samples",
    "wide_ci",
    "generated",
    "delivered",
    "in_flight",
    "plr",
    "plr_channel",
    "plr_preempt",
    "plr_replace",
    "plr_busy",
    "plr_access_fail",
    "collision_rate",
    "dmo_collision_rate",
    "alpha_emergent",
    "mean_latency",
    "feedback_mean_paoi",
    "feedback_delivered",
    "events",
];

pub fn runs_csv(rows: &[SweepRow]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RUN_HEADER)?;
    for row in rows {
        let r = &row.result;
        let c = &row.config;
        let u = &r.uplink;
        let b = u.plr_breakdown();
        let rec: Vec<String> = vec![
            SCHEMA.into(),
            row.point.to_string(),
            row.replication.to_string(),
            row.parameter.clone(),
            row.value.map(fmt_f).unwrap_or_default(),
            row.seed.to_string(),
            r.mode.to_string(),
            r.setting.map(|s| s.to_string()).unwrap_or_default(),
            r.fr_discipline.to_string(),
            r.gw_discipline.map(|d| d.to_string()).unwrap_or_default(),
            c.n_f.to_string(),
            c.n_c.to_string(),
            fmt_f(c.lambda_f),
            fmt_f(c.alpha_ch),
            fmt_f(c.horizon),
            config_deltas(c),
            fmt_f(u.mean_paoi.mean),
            fmt_f(u.mean_paoi.ci95),
            fmt_f(u.mean_paoi.std_error),
            u.mean_paoi.n_samples.to_string(),
            u.mean_paoi.flagged.to_string(),
            u.generated.to_string(),
            u.delivered.to_string(),
            u.in_flight.to_string(),
            fmt_f(u.plr()),
            fmt_f(b.channel),
            fmt_f(b.preempt),
            fmt_f(b.replace),
            fmt_f(b.busy),
            fmt_f(b.access_fail),
            fmt_f(r.mac.access_collision_rate()),
            fmt_f(r.mac.dmo_collision_rate()),
            fmt_f(r.mac.alpha_emergent()),
            fmt_f(r.mean_latency),
            fmt_f(r.feedback.mean_paoi.mean),
            r.feedback.delivered.to_string(),
            r.events.to_string(),
        ];
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| CliError::Io {
        path: "csv buffer".into(),
        source: e.into_error(),
    })
}

pub fn run_header(r: &NetRunResult) -> String {
    let mut s = format!("mode {}", r.mode.to_string().to_uppercase());
    if let Some(st) = r.setting {
        let _ = write!(s, "  setting {st}");
    }
    let _ = write!(s, "  fr_discipline {}", r.fr_discipline);
    if let Some(g) = r.gw_discipline {
        let _ = write!(s, "  gw_discipline {g}");
    }
    s
}

pub fn run_summary(r: &NetRunResult) -> String {
    let u = &r.uplink;
    let b = u.plr_breakdown();
    let m = &u.mean_paoi;
    let mut s = run_header(r);
    s.push('\n');
    let _ = writeln!(s, "entities {}  simulated {:.1} s  events {}", r.entities, r.end_time, r.events);
    if m.n_samples == 0 {
        let _ = writeln!(s, "uplink mean PAoI n/a (no samples left after warm-up)");
    } else {
        let _ = writeln!(
            s,
            "uplink mean PAoI {:.6} s +/- {:.6} (95%, {} samples, {} batches){}",
            m.mean,
            m.ci95,
            m.n_samples,
            m.n_batches,
            if m.flagged { "  [wide CI]" } else { "" }
        );
    }
    let _ = writeln!(
        s,
        "updates generated {}  delivered {}  in flight {}  mean latency {:.6} s",
        u.generated, u.delivered, u.in_flight, r.mean_latency
    );
    let _ = writeln!(
        s,
        "PLR {:.6}  channel {:.6}  preempt {:.6}  replace {:.6}  busy {:.6}  access_fail {:.6}",
        u.plr(),
        b.channel,
        b.preempt,
        b.replace,
        b.busy,
        b.access_fail
    );
    let _ = writeln!(
        s,
        "collision rate {:.6}  dmo collision rate {:.6}  emergent alpha {:.6}",
        r.mac.access_collision_rate(),
        r.mac.dmo_collision_rate(),
        r.mac.alpha_emergent()
    );
    let f = &r.feedback.mean_paoi;
    if f.n_samples == 0 {
        let _ = writeln!(s, "feedback mean PAoI n/a  delivered {}", r.feedback.delivered);
    } else {
        let _ = writeln!(s, "feedback mean PAoI {:.6} s  delivered {}", f.mean, r.feedback.delivered);
    }
    s
}
