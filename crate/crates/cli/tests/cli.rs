use std::fs;
use std::path::Path;
use std::process::Command;

use qcluster::workload::read_schedule_csv;
use qcluster_cli::{replay, run_experiment, ExperimentConfig};

const BIN: &str = env!("CARGO_BIN_EXE_qcluster");

fn config(out: &Path, schedulers: &[&str], loads: &str, seeds: &str, flows: usize) -> String {
    let mut text = format!(
        "name = \"t\"\noutput_dir = \"{}\"\nparallelism = 2\nloads = {loads}\nseeds = {seeds}\n\n\
         [workload]\ncdf = \"hadoop\"\nflows = {flows}\n",
        out.display()
    );
    for s in schedulers {
        text += &format!("\n[[scheduler]]\nkind = \"{s}\"\n");
    }
    text
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn cross_product_runs_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("res");
    let cfg = ExperimentConfig::parse(&config(&out, &["fifo", "qc-las"], "[0.5, 0.7, 0.9]", "[1, 2, 3]", 150))
        .unwrap();
    let outcome = run_experiment(&cfg, None).unwrap();
    assert!(outcome.all_ok());
    assert_eq!(outcome.cells.len(), 18);

    let rows = csv_rows(&out.join("summary.csv"));
    assert_eq!(rows.len(), 18);
    assert!(rows.iter().all(|r| &r[4] == "ok"));
    for c in &outcome.cells {
        for f in ["manifest.toml", "flows.csv", "packets.csv", "stats.csv", "metrics.csv"] {
            assert!(c.dir.join(f).is_file(), "{} missing {f}", c.dir.display());
        }
    }
    assert!(out.join("config.toml").is_file());
}

#[test]
fn filter_selects_cells() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("res");
    let cfg = ExperimentConfig::parse(&config(&out, &["fifo", "qc-las"], "[0.5]", "[1, 2]", 100)).unwrap();
    let outcome = run_experiment(&cfg, Some("qc-las")).unwrap();
    assert_eq!(outcome.cells.len(), 2);
    assert!(outcome.cells.iter().all(|c| c.manifest.cell.starts_with("qc-las")));
}

#[test]
fn same_seed_gives_same_schedule_across_schedulers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("res");
    let cfg = ExperimentConfig::parse(&config(&out, &["fifo", "qc-srpt"], "[0.6]", "[4]", 200)).unwrap();
    let outcome = run_experiment(&cfg, None).unwrap();
    let read = |c: &qcluster_cli::runner::CellOutcome| {
        let text = fs::read_to_string(c.dir.join("flows.csv")).unwrap();
        text.lines()
            .skip(1)
            .map(|l| {
                let v: Vec<&str> = l.split(',').collect();
                (v[0].to_string(), v[1].to_string(), v[2].to_string())
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(read(&outcome.cells[0]), read(&outcome.cells[1]));
}

#[test]
fn replay_is_deterministic_and_pairs_flows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.toml");
    fs::write(&cfg_path, config(&dir.path().join("unused"), &["fifo", "qc-las"], "[0.7]", "[1]", 300)).unwrap();
    let sched = dir.path().join("sched.csv");
    let status = Command::new(BIN)
        .args(["export-schedule", cfg_path.to_str().unwrap(), "--load", "0.7", "--seed", "9", "-o"])
        .arg(&sched)
        .status()
        .unwrap();
    assert!(status.success());
    let flows = read_schedule_csv(fs::File::open(&sched).unwrap()).unwrap();
    assert_eq!(flows.len(), 300);

    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    replay(&flows, &cfg, Some("fifo"), &a).unwrap();
    replay(&flows, &cfg, Some("fifo"), &b).unwrap();
    for f in ["fifo/metrics.csv", "qc-las/metrics.csv", "qc-las/flows.csv", "paired_qc-las.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let paired = csv_rows(&a.join("paired_qc-las.csv"));
    assert_eq!(paired.len(), 300);
    let mut deltas = Vec::new();
    for r in &paired {
        // flows lost to drops have no fct on one side
        match (r[2].parse::<f64>(), r[3].parse::<f64>()) {
            (Ok(base), Ok(other)) => {
                let delta: f64 = r[4].parse().unwrap();
                assert_eq!(delta, other - base);
                deltas.push(delta);
            }
            _ => assert!(r[4].is_empty()),
        }
    }
    assert!(deltas.len() > 200);
    // strict priority by attained service helps the median flow
    deltas.sort_by(f64::total_cmp);
    assert!(deltas[deltas.len() / 2] <= 0.0);
}

#[test]
fn exported_schedule_round_trips_through_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.toml");
    fs::write(&cfg_path, config(&dir.path().join("unused"), &["fifo"], "[0.5]", "[1]", 120)).unwrap();
    let sched = dir.path().join("s.csv");
    let run = |args: &[&str]| Command::new(BIN).args(args).output().unwrap();
    let o = run(&["export-schedule", cfg_path.to_str().unwrap(), "--load", "0.5", "--seed", "2", "-o", sched.to_str().unwrap()]);
    assert!(o.status.success());
    let out = dir.path().join("replayed");
    let o = run(&["replay", cfg_path.to_str().unwrap(), "--schedule", sched.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut traced: Vec<(u64, String)> =
        csv_rows(&out.join("fifo/flows.csv")).iter().map(|r| (r[0].parse().unwrap(), r[1].to_string())).collect();
    let mut exported: Vec<(u64, String)> =
        csv_rows(&sched).iter().map(|r| (r[0].parse().unwrap(), r[2].to_string())).collect();
    traced.sort();
    exported.sort();
    assert_eq!(traced, exported);
}

#[test]
fn run_and_rerun_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.toml");
    let out = dir.path().join("res");
    fs::write(&cfg_path, config(&out, &["qc-fq"], "[0.6]", "[5]", 200)).unwrap();
    let o = Command::new(BIN).arg("run").arg(&cfg_path).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("qc-fq_load0.6_seed5"));

    let cell = out.join("cells/qc-fq_load0.6_seed5");
    let again = dir.path().join("again");
    let o = Command::new(BIN)
        .arg("rerun")
        .arg(cell.join("manifest.toml"))
        .arg("-o")
        .arg(&again)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(fs::read(cell.join("metrics.csv")).unwrap(), fs::read(again.join("metrics.csv")).unwrap());
}

#[test]
fn environment_overrides_config_and_flags_override_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.toml");
    fs::write(&cfg_path, config(&dir.path().join("from-config"), &["fifo"], "[0.5]", "[1]", 50)).unwrap();

    let env_out = dir.path().join("from-env");
    let o = Command::new(BIN)
        .arg("run")
        .arg(&cfg_path)
        .env("QCLUSTER_OUTPUT_DIR", &env_out)
        .env("QCLUSTER_PARALLELISM", "1")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(env_out.join("summary.csv").is_file());
    assert!(!dir.path().join("from-config").exists());

    let flag_out = dir.path().join("from-flag");
    let o = Command::new(BIN)
        .arg("run")
        .arg(&cfg_path)
        .arg("--output")
        .arg(&flag_out)
        .env("QCLUSTER_OUTPUT_DIR", &env_out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(flag_out.join("summary.csv").is_file());
}

#[test]
fn bad_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = Command::new(BIN).args(["run", "/nonexistent/exp.toml"]).output().unwrap();
    assert!(!missing.status.success());

    let cfg_path = dir.path().join("bad.toml");
    fs::write(&cfg_path, "loads = [1.5]\nseeds = [1]\n[[scheduler]]\nkind = \"fifo\"\n").unwrap();
    let o = Command::new(BIN).arg("run").arg(&cfg_path).output().unwrap();
    assert!(!o.status.success());
    assert!(!o.stderr.is_empty());

    fs::write(&cfg_path, "loads = [0.5]\nseeds = [1]\ntypo = 3\n[[scheduler]]\nkind = \"fifo\"\n").unwrap();
    let o = Command::new(BIN).arg("run").arg(&cfg_path).output().unwrap();
    assert!(!o.status.success());

    let o = Command::new(BIN).arg("frobnicate").output().unwrap();
    assert!(!o.status.success());
}

#[test]
fn cdfs_lists_builtins() {
    let o = Command::new(BIN).arg("cdfs").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for name in ["websearch", "hadoop", "datamining"] {
        assert!(text.contains(name));
    }
}
