//! QCluster instantiated for concrete scheduling goals.
//!
//! | policy  | packet weight                    | cluster size  | PDA      | dequeue            |
//! |---------|----------------------------------|---------------|----------|--------------------|
//! | qc-srpt | declared size minus bytes sent   | proportional  | priority | strict priority    |
//! | qc-las  | bytes sent                       | proportional  | priority | strict priority    |
//! | qc-fq   | packets sent, this one included  | same          | fair     | weighted round robin |
//! | qc-ddl  | time to deadline, else as srpt   | proportional  | priority | deadline class first |

mod dequeue;
mod scheduler;

use serde::{Deserialize, Serialize};

pub use dequeue::{strict_priority, Drr};
pub use scheduler::QClusterScheduler;

use crate::engine::{ClusterConfig, SizeStrategy};
use crate::error::{Error, Result};
use crate::pda::PdaKind;
use crate::sketch::{SketchConfig, SketchQueryResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    QcSrpt,
    QcLas,
    QcFq,
    QcDdl,
}

impl PolicyName {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyName::QcSrpt => "qc-srpt",
            PolicyName::QcLas => "qc-las",
            PolicyName::QcFq => "qc-fq",
            PolicyName::QcDdl => "qc-ddl",
        }
    }

    pub fn needs_flow_size(self) -> bool {
        matches!(self, PolicyName::QcSrpt | PolicyName::QcDdl)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DequeueKind {
    StrictPriority,
    WeightedRoundRobin,
    HybridDeadlineFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicySpec {
    pub name: PolicyName,
    pub size_strategy: SizeStrategy,
    pub pda_kind: PdaKind,
    pub dequeue: DequeueKind,
}

impl PolicySpec {
    pub fn of(name: PolicyName) -> Self {
        use DequeueKind::*;
        use SizeStrategy::*;
        let (size_strategy, pda_kind, dequeue) = match name {
            PolicyName::QcSrpt => (ProportionalClusterSize, PdaKind::PriorityOrdered, StrictPriority),
            PolicyName::QcLas => (ProportionalClusterSize, PdaKind::PriorityOrdered, StrictPriority),
            PolicyName::QcFq => (SameClusterSize, PdaKind::Fair, WeightedRoundRobin),
            PolicyName::QcDdl => (ProportionalClusterSize, PdaKind::PriorityOrdered, HybridDeadlineFirst),
        };
        PolicySpec {
            name,
            size_strategy,
            pda_kind,
            dequeue,
        }
    }
}

/// Bytes the flow has sent in its current message, per the sketch.
pub fn bytes_sent(query: &SketchQueryResult) -> u64 {
    if query.is_new_message {
        0
    } else {
        query.weight_estimate
    }
}

/// Packet weight for the non-deadline policies. `flow_size` is the declared
/// size, `size` this packet's length.
pub fn weight(
    name: PolicyName,
    query: &SketchQueryResult,
    flow_size: Option<u64>,
    size: u32,
    mtu: u32,
) -> f64 {
    let sent = bytes_sent(query);
    match name {
        PolicyName::QcLas => sent as f64,
        PolicyName::QcSrpt | PolicyName::QcDdl => {
            flow_size.unwrap_or(u64::MAX).saturating_sub(sent) as f64
        }
        PolicyName::QcFq => (sent + size as u64) as f64 / mtu as f64,
    }
}

/// Disorder avoidance source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PdaMode {
    Off,
    /// Flowlet and last-queue state from the sketch, as on a switch.
    Sketch,
    /// Exact per-flow state; a reference for measuring the sketch.
    Exact,
}

/// How deadline-class queues are ordered among themselves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeadlineOrder {
    /// Strict priority across queues clustered by time to deadline.
    Clustering,
    /// Earliest deadline among the queue heads.
    Edf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub pda: PdaMode,
    /// Overrides the policy's cluster-size strategy.
    pub size_strategy: Option<SizeStrategy>,
    pub sketch: SketchConfig,
    /// `k` is taken from the port.
    pub cluster: ClusterConfig,
    /// Deadline-class queues for qc-ddl; defaults to a quarter, rounded up.
    pub deadline_queues: Option<usize>,
    /// Bottom of the deadline-class centroid ladder, in seconds.
    pub deadline_base_weight: f64,
    pub deadline_order: DeadlineOrder,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            pda: PdaMode::Sketch,
            size_strategy: None,
            sketch: SketchConfig::default(),
            cluster: ClusterConfig::default(),
            deadline_queues: None,
            deadline_base_weight: 10e-6,
            deadline_order: DeadlineOrder::Clustering,
        }
    }
}

impl PolicyConfig {
    /// Deadline-class queue count for `k` queues.
    pub fn deadline_split(&self, k: usize) -> usize {
        self.deadline_queues.unwrap_or(k.div_ceil(4))
    }

    pub fn validate(&self, name: PolicyName, k: usize) -> Result<()> {
        self.sketch.validate()?;
        if name == PolicyName::QcDdl {
            let d = self.deadline_split(k);
            if d < 2 || k - d.min(k) < 2 {
                return Err(Error::config(format!(
                    "qc-ddl needs at least two deadline and two other queues, got {d} of {k}"
                )));
            }
            if !(self.deadline_base_weight > 0.0) {
                return Err(Error::config("deadline_base_weight must be positive"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(estimate: u64, new_message: bool) -> SketchQueryResult {
        SketchQueryResult {
            weight_estimate: estimate,
            last_seen: 0.0,
            is_new_message: new_message,
            is_new_flowlet: new_message,
            prev_queue: None,
        }
    }

    #[test]
    fn las_weight_is_bytes_sent() {
        assert_eq!(weight(PolicyName::QcLas, &q(4380, false), None, 1460, 1500), 4380.0);
        assert_eq!(weight(PolicyName::QcLas, &q(4380, true), None, 1460, 1500), 0.0);
    }

    #[test]
    fn srpt_weight_is_remaining() {
        let w = weight(PolicyName::QcSrpt, &q(40_000, false), Some(100_000), 1500, 1500);
        assert_eq!(w, 60_000.0);
        assert_eq!(weight(PolicyName::QcSrpt, &q(200, false), Some(100), 1500, 1500), 0.0);
    }

    #[test]
    fn fq_weight_counts_packets() {
        assert_eq!(weight(PolicyName::QcFq, &q(0, true), None, 1500, 1500), 1.0);
        assert_eq!(weight(PolicyName::QcFq, &q(3000, false), None, 750, 1500), 2.5);
    }

    #[test]
    fn table_rows() {
        assert_eq!(PolicySpec::of(PolicyName::QcFq).pda_kind, PdaKind::Fair);
        assert_eq!(PolicySpec::of(PolicyName::QcFq).size_strategy, SizeStrategy::SameClusterSize);
        assert_eq!(PolicySpec::of(PolicyName::QcDdl).dequeue, DequeueKind::HybridDeadlineFirst);
        assert_eq!(PolicySpec::of(PolicyName::QcLas).dequeue, DequeueKind::StrictPriority);
    }

    #[test]
    fn deadline_split_defaults_to_quarter() {
        let c = PolicyConfig::default();
        assert_eq!(c.deadline_split(8), 2);
        assert_eq!(c.deadline_split(9), 3);
        assert!(c.validate(PolicyName::QcDdl, 8).is_ok());
        assert!(c.validate(PolicyName::QcDdl, 3).is_err());
    }
}
