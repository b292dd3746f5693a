//! Experiment configuration (TOML).
//!
//! ```toml
//! name = "fct-sweep"
//! output_dir = "results"      # QCLUSTER_OUTPUT_DIR overrides
//! parallelism = 0             # 0 = one worker per core; QCLUSTER_PARALLELISM overrides
//! loads = [0.5, 0.7, 0.9]
//! seeds = [1, 2, 3]
//!
//! [workload]
//! cdf = "websearch"           # builtin name or path to a CDF file
//! flows = 2000
//! deadlines = false
//! deadline_slack_mean = 2.0
//!
//! [port]                      # see qcluster::sim::PortConfig
//! queues = 8
//!
//! [sim]                       # see qcluster::sim::SimOptions
//! record_packets = true
//!
//! [[scheduler]]
//! kind = "fifo"
//!
//! [[scheduler]]
//! kind = "qc-las"
//! label = "qc-las-dataplane"
//! [scheduler.qc]              # see qcluster::policy::PolicyConfig
//! pda = "sketch"
//! [scheduler.qc.cluster]
//! dataplane_mode = true
//! ```
//!
//! Scheduler kinds: `fifo`, `pias` (with `thresholds`), `pias-worst`,
//! `pias-opt` (with optional `train_flows`), `ideal-fq`, `ideal-srpt`,
//! `qc-srpt`, `qc-las`, `qc-fq`, `qc-ddl`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use qcluster::baseline::{self, Fifo, IdealFq, IdealSrpt, StaticLas};
use qcluster::policy::{PolicyConfig, PolicyName, QClusterScheduler};
use qcluster::sim::{PortConfig, Scheduler, SimOptions};
use qcluster::workload::SizeCdf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    pub cdf: String,
    /// Flows per cell.
    pub flows: usize,
    pub deadlines: bool,
    pub deadline_slack_mean: f64,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            cdf: "websearch".into(),
            flows: 2000,
            deadlines: false,
            deadline_slack_mean: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerKind {
    Fifo,
    Pias,
    PiasWorst,
    PiasOpt,
    IdealFq,
    IdealSrpt,
    QcSrpt,
    QcLas,
    QcFq,
    QcDdl,
}

impl SchedulerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchedulerKind::Fifo => "fifo",
            SchedulerKind::Pias => "pias",
            SchedulerKind::PiasWorst => "pias-worst",
            SchedulerKind::PiasOpt => "pias-opt",
            SchedulerKind::IdealFq => "ideal-fq",
            SchedulerKind::IdealSrpt => "ideal-srpt",
            SchedulerKind::QcSrpt => "qc-srpt",
            SchedulerKind::QcLas => "qc-las",
            SchedulerKind::QcFq => "qc-fq",
            SchedulerKind::QcDdl => "qc-ddl",
        }
    }

    pub fn policy(self) -> Option<PolicyName> {
        match self {
            SchedulerKind::QcSrpt => Some(PolicyName::QcSrpt),
            SchedulerKind::QcLas => Some(PolicyName::QcLas),
            SchedulerKind::QcFq => Some(PolicyName::QcFq),
            SchedulerKind::QcDdl => Some(PolicyName::QcDdl),
            _ => None,
        }
    }

    fn needs_flow_size(self) -> bool {
        self == SchedulerKind::IdealSrpt || self.policy().is_some_and(PolicyName::needs_flow_size)
    }
}

fn default_train_flows() -> usize {
    2000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSpec {
    pub kind: SchedulerKind,
    /// Cell name prefix; defaults to the kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Byte thresholds for `pias`; filled in for the presets once resolved.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub thresholds: Vec<u64>,
    /// Training flows for the `pias-opt` sweep.
    #[serde(default = "default_train_flows")]
    pub train_flows: usize,
    #[serde(default)]
    pub qc: PolicyConfig,
}

impl SchedulerSpec {
    pub fn new(kind: SchedulerKind) -> Self {
        SchedulerSpec {
            kind,
            label: None,
            thresholds: Vec::new(),
            train_flows: default_train_flows(),
            qc: PolicyConfig::default(),
        }
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(self.kind.as_str())
    }

    pub fn validate(&self, port: &PortConfig, sim: &SimOptions) -> Result<()> {
        let label = self.label();
        ensure!(
            !label.is_empty() && label.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)),
            "scheduler label {label:?} must be nonempty and use only [A-Za-z0-9._-]"
        );
        if sim.hide_flow_sizes && self.kind.needs_flow_size() {
            bail!(
                "{label}: {} needs declared flow sizes but sim.hide_flow_sizes is set",
                self.kind.as_str()
            );
        }
        match self.kind {
            SchedulerKind::Pias => {
                ensure!(!self.thresholds.is_empty(), "{label}: pias needs thresholds");
                ensure!(
                    self.thresholds.len() < port.queues,
                    "{label}: {} thresholds need more than {} queues",
                    self.thresholds.len(),
                    port.queues
                );
                ensure!(
                    self.thresholds.windows(2).all(|w| w[0] <= w[1]),
                    "{label}: thresholds must be nondecreasing"
                );
            }
            SchedulerKind::PiasOpt => ensure!(self.train_flows > 0, "{label}: train_flows must be positive"),
            _ => {}
        }
        if let Some(name) = self.kind.policy() {
            self.qc.validate(name, port.queues).with_context(|| label.to_string())?;
            let mut cluster = self.qc.cluster.clone();
            cluster.k = port.queues;
            cluster.validate().with_context(|| label.to_string())?;
        }
        Ok(())
    }

    /// Builds the scheduler for one cell. Threshold presets are computed
    /// from `cdf` and `load` unless `thresholds` already holds them.
    pub fn build(&self, port: &PortConfig, cdf: &SizeCdf, load: f64) -> Result<(Box<dyn Scheduler>, Vec<u64>)> {
        let label = self.label().to_string();
        let static_las = |thres: Vec<u64>| -> Result<(Box<dyn Scheduler>, Vec<u64>)> {
            Ok((Box::new(StaticLas::labelled(&label, thres.clone())?), thres))
        };
        let resolved = |compute: &dyn Fn() -> Result<Vec<u64>>| -> Result<Vec<u64>> {
            if self.thresholds.is_empty() {
                compute()
            } else {
                Ok(self.thresholds.clone())
            }
        };
        Ok(match self.kind {
            SchedulerKind::Fifo => (Box::new(Fifo::new()), Vec::new()),
            SchedulerKind::Pias => static_las(self.thresholds.clone())?,
            SchedulerKind::PiasWorst => {
                static_las(resolved(&|| Ok(baseline::worst_thresholds(cdf, port.queues, port.mtu)))?)?
            }
            SchedulerKind::PiasOpt => static_las(resolved(&|| {
                let train = baseline::training_schedule(cdf, load, port, self.train_flows)?;
                Ok(baseline::sweep_thresholds(&train, port)?)
            })?)?,
            SchedulerKind::IdealFq => (Box::new(IdealFq::new(port.line_rate)), Vec::new()),
            SchedulerKind::IdealSrpt => (Box::new(IdealSrpt::new()), Vec::new()),
            kind => {
                let name = kind.policy().expect("remaining kinds are policies");
                let s = QClusterScheduler::new(name, port.queues, port.mtu, &self.qc)?;
                (Box::new(s), Vec::new())
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub parallelism: usize,
    pub loads: Vec<f64>,
    pub seeds: Vec<u64>,
    pub workload: WorkloadConfig,
    pub port: PortConfig,
    pub sim: SimOptions,
    #[serde(rename = "scheduler")]
    pub schedulers: Vec<SchedulerSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            output_dir: PathBuf::from("results"),
            parallelism: 0,
            loads: vec![0.7],
            seeds: vec![1],
            workload: WorkloadConfig::default(),
            port: PortConfig::default(),
            sim: SimOptions::default(),
            schedulers: Vec::new(),
        }
    }
}

pub const OUTPUT_DIR_ENV: &str = "QCLUSTER_OUTPUT_DIR";
pub const PARALLELISM_ENV: &str = "QCLUSTER_PARALLELISM";

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, then applies the environment
    /// overrides.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            self.output_dir = PathBuf::from(dir);
        }
        if let Ok(n) = std::env::var(PARALLELISM_ENV) {
            self.parallelism = n
                .parse()
                .with_context(|| format!("{PARALLELISM_ENV}={n:?} is not a count"))?;
        }
        Ok(())
    }

    pub fn cdf(&self) -> Result<SizeCdf> {
        Ok(SizeCdf::load(&self.workload.cdf)?)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.loads.is_empty(), "no loads");
        ensure!(!self.seeds.is_empty(), "no seeds");
        ensure!(!self.schedulers.is_empty(), "no [[scheduler]] entries");
        for &l in &self.loads {
            ensure!(l > 0.0 && l < 1.0, "load {l} outside (0, 1)");
        }
        ensure!(self.workload.flows > 0, "workload.flows must be positive");
        ensure!(
            self.workload.deadline_slack_mean > 0.0,
            "workload.deadline_slack_mean must be positive"
        );
        self.port.validate()?;
        self.cdf()?;
        let mut labels = HashSet::new();
        for s in &self.schedulers {
            s.validate(&self.port, &self.sim)?;
            ensure!(labels.insert(s.label()), "duplicate scheduler label {:?}", s.label());
        }
        Ok(())
    }
}
