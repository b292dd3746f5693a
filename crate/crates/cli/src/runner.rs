//! Cell execution and on-disk layout.
//!
//! ```text
//! <output_dir>/
//!   config.toml              resolved experiment config
//!   summary.csv              one row per cell
//!   cells/<cell>/
//!     manifest.toml          everything needed to rerun the cell
//!     flows.csv              per-flow trace
//!     packets.csv            per-packet trace (when sim.record_packets)
//!     stats.csv              port counters
//!     metrics.csv            computed from flows.csv as written
//! ```

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use qcluster::metrics::{MetricsReport, SizeBuckets};
use qcluster::sim::{self, trace, PortConfig, RunStats, SimOptions};
use qcluster::workload::{self, FlowSpec, SizeCdf};

use crate::config::{ExperimentConfig, SchedulerKind, SchedulerSpec, WorkloadConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Seeds the deadline stream apart from the size and arrival stream, so
/// turning deadlines on leaves the flows themselves unchanged.
const DEADLINE_STREAM: u64 = 0xd0_dead_11e5;

/// The fully resolved description of one (scheduler, load, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellManifest {
    pub version: String,
    pub cell: String,
    pub load: f64,
    pub seed: u64,
    pub workload: WorkloadConfig,
    pub port: PortConfig,
    pub sim: SimOptions,
    pub scheduler: SchedulerSpec,
}

impl CellManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid manifest {}", path.display()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, toml::to_string(self)?)?;
        Ok(())
    }
}

pub fn cell_id(label: &str, load: f64, seed: u64) -> String {
    format!("{label}_load{load}_seed{seed}")
}

/// Cross product scheduler x load x seed, in config order.
pub fn cells(cfg: &ExperimentConfig) -> Vec<CellManifest> {
    let mut out = Vec::new();
    for s in &cfg.schedulers {
        for &load in &cfg.loads {
            for &seed in &cfg.seeds {
                out.push(CellManifest {
                    version: VERSION.to_string(),
                    cell: cell_id(s.label(), load, seed),
                    load,
                    seed,
                    workload: cfg.workload.clone(),
                    port: cfg.port.clone(),
                    sim: cfg.sim.clone(),
                    scheduler: s.clone(),
                });
            }
        }
    }
    out
}

/// The flow schedule of a cell. Depends only on workload, port, load and
/// seed, so every scheduler in an experiment sees the same flows.
pub fn schedule(workload: &WorkloadConfig, port: &PortConfig, load: f64, seed: u64) -> Result<Vec<FlowSpec>> {
    let cdf = SizeCdf::load(&workload.cdf)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flows = workload::generate(&cdf, load, port.line_rate, workload.flows, &mut rng)?;
    if workload.deadlines {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DEADLINE_STREAM);
        workload::assign_deadlines(&mut flows, port, workload.deadline_slack_mean, &mut rng)?;
    }
    Ok(flows)
}

/// Runs `spec` over `flows` and persists traces and metrics into `dir`.
/// Returns the resolved scheduler spec and the metrics as read back.
fn run_and_persist(
    flows: &[FlowSpec],
    spec: &SchedulerSpec,
    port: &PortConfig,
    opts: &SimOptions,
    cdf: &SizeCdf,
    load: f64,
    buckets: SizeBuckets,
    dir: &Path,
) -> Result<(SchedulerSpec, MetricsReport)> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let (mut scheduler, thresholds) = spec.build(port, cdf, load)?;
    let mut resolved = spec.clone();
    if matches!(spec.kind, SchedulerKind::PiasWorst | SchedulerKind::PiasOpt) {
        resolved.thresholds = thresholds;
    }
    let log = sim::run(port, flows, scheduler.as_mut(), opts)?;

    let flows_path = dir.join("flows.csv");
    trace::write_flows_csv(&log.flows, BufWriter::new(File::create(&flows_path)?))?;
    if opts.record_packets {
        trace::write_packets_csv(&log.packets, BufWriter::new(File::create(dir.join("packets.csv"))?))?;
    }
    write_stats(&log.stats, &dir.join("stats.csv"))?;

    let persisted = trace::read_flows_csv(File::open(&flows_path)?)?;
    let report = MetricsReport::from_flows(&persisted, buckets);
    report.write_csv(BufWriter::new(File::create(dir.join("metrics.csv"))?))?;
    Ok((resolved, report))
}

fn write_stats(s: &RunStats, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(
        out,
        "injected,delivered,dropped,in_flight,ecn_marked,max_queueing_delay,unsound_flowlet_starts,end_time"
    )?;
    writeln!(
        out,
        "{},{},{},{},{},{},{},{}",
        s.injected,
        s.delivered,
        s.dropped,
        s.in_flight,
        s.ecn_marked,
        s.max_queueing_delay,
        s.unsound_flowlet_starts,
        s.end_time
    )?;
    out.flush()?;
    Ok(())
}

/// Runs one cell into `dir`, writing the resolved manifest alongside.
pub fn run_cell(manifest: &CellManifest, dir: &Path) -> Result<MetricsReport> {
    let cdf = SizeCdf::load(&manifest.workload.cdf)?;
    let flows = schedule(&manifest.workload, &manifest.port, manifest.load, manifest.seed)?;
    let (resolved, report) = run_and_persist(
        &flows,
        &manifest.scheduler,
        &manifest.port,
        &manifest.sim,
        &cdf,
        manifest.load,
        cdf.buckets(),
        dir,
    )?;
    let mut m = manifest.clone();
    m.scheduler = resolved;
    m.write(&dir.join("manifest.toml"))?;
    Ok(report)
}

#[derive(Debug)]
pub struct CellOutcome {
    pub manifest: CellManifest,
    pub dir: PathBuf,
    pub result: Result<MetricsReport, String>,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub cells: Vec<CellOutcome>,
    pub summary: PathBuf,
}

impl ExperimentOutcome {
    pub fn all_ok(&self) -> bool {
        self.cells.iter().all(|c| c.result.is_ok())
    }
}

fn catch_cell(manifest: &CellManifest, dir: &Path) -> Result<MetricsReport, String> {
    match panic::catch_unwind(AssertUnwindSafe(|| run_cell(manifest, dir))) {
        Ok(Ok(r)) => Ok(r),
        Ok(Err(e)) => Err(format!("{e:#}")),
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .map_or_else(|| "panicked".to_string(), |m| format!("panicked: {m}"))),
    }
}

/// Runs every cell whose id contains `filter` (all when `None`), in
/// parallel across cells, then writes the summary.
pub fn run_experiment(cfg: &ExperimentConfig, filter: Option<&str>) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let root = &cfg.output_dir;
    fs::create_dir_all(root.join("cells")).with_context(|| format!("creating {}", root.display()))?;
    fs::write(root.join("config.toml"), toml::to_string(cfg)?)?;

    let selected: Vec<CellManifest> = cells(cfg)
        .into_iter()
        .filter(|m| filter.is_none_or(|f| m.cell.contains(f)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| anyhow!("thread pool: {e}"))?;
    let outcomes: Vec<CellOutcome> = pool.install(|| {
        selected
            .into_par_iter()
            .map(|manifest| {
                let dir = root.join("cells").join(&manifest.cell);
                let result = catch_cell(&manifest, &dir);
                CellOutcome { manifest, dir, result }
            })
            .collect()
    });

    let summary = root.join("summary.csv");
    write_summary(&outcomes, &summary)?;
    Ok(ExperimentOutcome {
        cells: outcomes,
        summary,
    })
}

/// One row per cell; metric columns are copied from each cell's
/// metrics.csv.
fn write_summary(outcomes: &[CellOutcome], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["cell", "scheduler", "load", "seed", "status"];
    header.extend(MetricsReport::CSV_HEADER.split(','));
    w.write_record(&header)?;
    let width = MetricsReport::CSV_HEADER.split(',').count();
    for c in outcomes {
        let m = &c.manifest;
        let mut row = vec![
            m.cell.clone(),
            m.scheduler.label().to_string(),
            m.load.to_string(),
            m.seed.to_string(),
        ];
        match &c.result {
            Ok(_) => {
                let text = fs::read_to_string(c.dir.join("metrics.csv"))?;
                let values = text.lines().nth(1).ok_or_else(|| anyhow!("empty metrics.csv in {}", c.dir.display()))?;
                row.push("ok".into());
                row.extend(values.split(',').map(str::to_string));
            }
            Err(e) => {
                row.push(format!("error: {e}"));
                row.extend(std::iter::repeat_n(String::new(), width));
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Offered load of a schedule: bytes over the span of starts.
pub fn offered_load(flows: &[FlowSpec], port: &PortConfig) -> f64 {
    let bytes: f64 = flows.iter().map(|f| f.size as f64).sum();
    let (lo, hi) = flows
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), f| (lo.min(f.start), hi.max(f.start)));
    let span = hi - lo;
    if span > 0.0 {
        (bytes * 8.0 / span / port.line_rate).clamp(0.01, 0.99)
    } else {
        0.5
    }
}

/// Feeds one fixed schedule to several schedulers, each into
/// `out/<label>/`. With a baseline label, also writes
/// `out/paired_<label>.csv` per other scheduler with the per-flow FCT
/// difference against the baseline.
pub fn replay(
    flows: &[FlowSpec],
    cfg: &ExperimentConfig,
    baseline: Option<&str>,
    out: &Path,
) -> Result<Vec<(String, MetricsReport)>> {
    anyhow::ensure!(!flows.is_empty(), "empty schedule");
    cfg.port.validate()?;
    for s in &cfg.schedulers {
        s.validate(&cfg.port, &cfg.sim)?;
    }
    if let Some(b) = baseline {
        anyhow::ensure!(
            cfg.schedulers.iter().any(|s| s.label() == b),
            "baseline {b:?} is not among the schedulers"
        );
    }
    let cdf = cfg.cdf()?;
    let load = offered_load(flows, &cfg.port);
    let buckets = SizeBuckets::for_min_size(flows.iter().map(|f| f.size).min().unwrap_or(0));
    let mut reports = Vec::new();
    for s in &cfg.schedulers {
        let dir = out.join(s.label());
        let (_, report) = run_and_persist(flows, s, &cfg.port, &cfg.sim, &cdf, load, buckets, &dir)?;
        reports.push((s.label().to_string(), report));
    }
    if let Some(b) = baseline {
        let base = trace::read_flows_csv(File::open(out.join(b).join("flows.csv"))?)?;
        for s in cfg.schedulers.iter().filter(|s| s.label() != b) {
            let other = trace::read_flows_csv(File::open(out.join(s.label()).join("flows.csv"))?)?;
            write_paired(&base, &other, b, s.label(), &out.join(format!("paired_{}.csv", s.label())))?;
        }
    }
    Ok(reports)
}

fn write_paired(
    base: &[trace::FlowRecord],
    other: &[trace::FlowRecord],
    base_label: &str,
    label: &str,
    path: &Path,
) -> Result<()> {
    let by_id: std::collections::HashMap<u64, &trace::FlowRecord> = other.iter().map(|f| (f.flow_id, f)).collect();
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "flow_id,size,fct_{base_label},fct_{label},delta_fct")?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for b in base {
        let o = by_id.get(&b.flow_id).and_then(|f| f.fct);
        let delta = b.fct.zip(o).map(|(x, y)| y - x);
        writeln!(out, "{},{},{},{},{}", b.flow_id, b.size, opt(b.fct), opt(o), opt(delta))?;
    }
    out.flush()?;
    Ok(())
}
