use std::path::Path;
use std::process::{Command, Output};

use tetra_aoi_cli::{config_deltas, fmt_f, run_sweep, runs_csv, sweep_seed};
use tetra_aoi_netsim::{Mode, ScenarioConfig, SeedPolicy, SweepSpec};

fn bin(dir: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tetra-aoi"));
    c.current_dir(dir);
    c
}

fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_prints_summary_and_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s3.toml", "mode = \"dmo\"\nsetting = 3\nhorizon = 120.0\n");
    let o = bin(dir.path())
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--trace")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let header = out.lines().next().unwrap();
    assert_eq!(header, "mode DMO  setting 3  fr_discipline PRRT  gw_discipline REPLACE2");
    assert!(out.contains("uplink mean PAoI"));
    let trace = std::fs::read_to_string(dir.path().join("trace.tsv")).unwrap();
    assert!(trace.lines().count() > 100);
    assert!(trace.contains("\tRELAY"));
}

#[test]
fn run_with_defaults_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.csv");
    let cfg = write(dir.path(), "short.toml", "horizon = 60.0\n");
    let o = bin(dir.path())
        .args(["run", "--seed", "5", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("mode TMO  fr_discipline PRRT\n"));
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("schema,point,replication,parameter,value,seed,mode"));
    let row = lines.next().unwrap();
    assert!(row.starts_with("v1,0,0,,,5,tmo,"));
    assert!(row.contains("horizon=60.0"));
    assert!(!dir.path().join("trace.tsv").exists());
}

#[test]
fn config_errors_exit_with_two_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("unknown.toml", "lambda_z = 1.0\n", "lambda_z"),
        ("alpha.toml", "alpha_ch = 2.0\n", "alpha_ch"),
        ("nested.toml", "[tmo]\nwt = 40\n", "tmo.wt"),
        ("empty.toml", "[sweep]\nparameter = \"lambda_f\"\nvalues = []\n", "sweep.values"),
    ];
    for (name, body, key) in cases {
        let cfg = write(dir.path(), name, body);
        for cmd in ["run", "sweep"] {
            let o = bin(dir.path()).args([cmd, "--config"]).arg(&cfg).output().unwrap();
            assert_eq!(o.status.code(), Some(2), "{name} {cmd}: {}", stderr(&o));
            assert!(stderr(&o).contains(key), "{name}: {}", stderr(&o));
        }
    }
    let o = bin(dir.path()).args(["sweep"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("sweep"));
    let o = bin(dir.path()).args(["run", "--config", "missing.toml"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_with_few_deliveries_warns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "v.toml",
        "[validate]\nlambda_f = [0.5]\nalpha = [0.1]\n",
    );
    let o = bin(dir.path())
        .args(["validate", "--deliveries", "100", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.matches("WARN").count(), 3, "{out}");
    assert!(out.contains("PASS: 3 points"));
}

#[test]
fn alpha_zero_makes_pr_and_prrt_rows_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "v.toml",
        "[validate]\nlambda_f = [0.2, 0.7]\nalpha = [0.0]\ndisciplines = [\"PR\", \"PRRT\"]\ndeliveries = 20000\n",
    );
    let out = dir.path().join("v.csv");
    let o = bin(dir.path())
        .args(["validate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let mut r = csv::Reader::from_path(&out).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    // Columns: discipline, lambda_f, ..., analytic_paoi.
    assert_eq!(&rows[0][1], "PR");
    assert_eq!(&rows[2][1], "PRRT");
    assert_eq!(&rows[0][6], &rows[2][6]);
    assert_eq!(&rows[1][6], &rows[3][6]);
}

#[test]
fn sweep_rows_are_sorted_and_complete() {
    let base = ScenarioConfig {
        horizon: 120.0,
        ..ScenarioConfig::default()
    };
    let mut spec = SweepSpec::new("n_c", vec![0.0, 100.0, 300.0]);
    spec.replications = 3;
    let rows = run_sweep(&base, &spec).unwrap();
    let keys: Vec<(usize, u32)> = rows.iter().map(|r| (r.point, r.replication)).collect();
    let expected: Vec<(usize, u32)> = (0..3).flat_map(|p| (0..3).map(move |r| (p, r))).collect();
    assert_eq!(keys, expected);
    assert_eq!(rows[4].config.n_c, 100);
    // Common random numbers: replication r shares its seed across points.
    assert_eq!(rows[1].seed, rows[4].seed);
    assert_ne!(rows[0].seed, rows[1].seed);
    let csv = runs_csv(&rows).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 10);
}

#[test]
fn seed_policies() {
    assert_eq!(sweep_seed(1, SeedPolicy::Common, 0, 2), sweep_seed(1, SeedPolicy::Common, 5, 2));
    assert_ne!(
        sweep_seed(1, SeedPolicy::Independent, 0, 2),
        sweep_seed(1, SeedPolicy::Independent, 5, 2)
    );
}

#[test]
fn floats_have_nine_significant_digits() {
    assert_eq!(fmt_f(4.663826), "4.66382600e0");
    assert_eq!(fmt_f(1.0 / 3.0), "3.33333333e-1");
    assert_eq!(fmt_f(0.0), "0.00000000e0");
}

#[test]
fn deltas_list_only_changes() {
    assert_eq!(config_deltas(&ScenarioConfig::default()), "");
    let mut c = ScenarioConfig {
        n_f: 5,
        seed: u64::MAX,
        ..ScenarioConfig::default()
    };
    c.dmo.dt316 = 4;
    assert_eq!(config_deltas(&c), "dmo.dt316=4;n_f=5");
}

fn sweep_means(base: &ScenarioConfig, values: &[f64]) -> Vec<f64> {
    let mut spec = SweepSpec::new("lambda_f", values.to_vec());
    spec.replications = 3;
    let rows = run_sweep(base, &spec).unwrap();
    values
        .iter()
        .enumerate()
        .map(|(k, _)| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.point == k)
                .map(|r| r.result.uplink.mean_paoi.mean)
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        })
        .collect()
}

#[test]
fn trunked_fcfs_is_u_shaped() {
    let base = ScenarioConfig {
        fr_discipline: Some(tetra_aoi_core::Discipline::Fcfs),
        horizon: 1800.0,
        ..ScenarioConfig::default()
    };
    let grid: Vec<f64> = (1..=12).map(|k| 0.1 * k as f64).collect();
    let m = sweep_means(&base, &grid);
    let imin = (0..m.len()).min_by(|&a, &b| m[a].total_cmp(&m[b])).unwrap();
    assert!(imin > 0 && imin + 1 < m.len(), "{m:?}");
    assert!(m[0] > 2.0 * m[imin] && m[m.len() - 1] > 2.0 * m[imin], "{m:?}");
}

#[test]
fn setting_one_beats_setting_two_at_moderate_and_high_load() {
    // At the lowest rates setting 2 is marginally ahead; see the README.
    for (n_f, grid) in [(5, vec![0.5, 0.7, 1.0]), (10, vec![0.2, 0.3, 0.5, 0.7, 1.0])] {
        let cfg = |s| ScenarioConfig {
            mode: Mode::Dmo,
            setting: Some(s),
            n_f,
            horizon: 1800.0,
            ..ScenarioConfig::default()
        };
        let one = sweep_means(&cfg(1), &grid);
        let two = sweep_means(&cfg(2), &grid);
        for k in 0..grid.len() {
            assert!(one[k] < two[k], "n_f {n_f} lambda_f {}: {} vs {}", grid[k], one[k], two[k]);
        }
    }
}
