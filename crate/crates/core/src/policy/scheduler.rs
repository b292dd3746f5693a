use std::collections::VecDeque;

use super::dequeue::{strict_priority, Drr};
use super::{weight, DeadlineOrder, DequeueKind, PdaMode, PolicyConfig, PolicyName, PolicySpec};
use crate::engine::{ClusterConfig, QueueClusterer};
use crate::error::Result;
use crate::pda::{self, ExactTracker};
use crate::sim::{Packet, Scheduler};
use crate::sketch::ScmSketch;

/// A clusterer serving the contiguous queue range starting at `offset`.
#[derive(Debug)]
struct Class {
    offset: usize,
    clusterer: QueueClusterer,
}

impl Class {
    fn contains(&self, queue: usize) -> bool {
        queue >= self.offset && queue < self.offset + self.clusterer.config().k
    }
}

/// QCluster on one egress port: sketch lookup, weight, clustering, disorder
/// avoidance, then the policy's dequeue discipline.
#[derive(Debug)]
pub struct QClusterScheduler {
    spec: PolicySpec,
    mtu: u32,
    pda: PdaMode,
    deadline_order: DeadlineOrder,
    sketch: ScmSketch,
    exact: ExactTracker,
    /// Deadline class of qc-ddl, always the top queues.
    deadline: Option<Class>,
    main: Class,
    queues: Vec<VecDeque<Packet>>,
    drr: Option<Drr>,
    unsound: u64,
}

impl QClusterScheduler {
    pub fn new(name: PolicyName, queues: usize, mtu: u32, cfg: &PolicyConfig) -> Result<Self> {
        cfg.validate(name, queues)?;
        let mut spec = PolicySpec::of(name);
        if let Some(s) = cfg.size_strategy {
            spec.size_strategy = s;
        }
        let mut base = ClusterConfig {
            size_strategy: spec.size_strategy,
            ..cfg.cluster.clone()
        };
        if name == PolicyName::QcFq {
            // weights count packets; the configured base weight is in bytes
            base.base_weight /= mtu as f64;
        }
        let (deadline, main) = if name == PolicyName::QcDdl {
            let d = cfg.deadline_split(queues);
            let dl = ClusterConfig {
                k: d,
                base_weight: cfg.deadline_base_weight,
                initial_centroids: Vec::new(),
                ..base.clone()
            };
            let main = ClusterConfig {
                k: queues - d,
                initial_centroids: Vec::new(),
                ..base
            };
            (
                Some(Class {
                    offset: 0,
                    clusterer: QueueClusterer::new(dl)?,
                }),
                Class {
                    offset: d,
                    clusterer: QueueClusterer::new(main)?,
                },
            )
        } else {
            let main = ClusterConfig { k: queues, ..base };
            (
                None,
                Class {
                    offset: 0,
                    clusterer: QueueClusterer::new(main)?,
                },
            )
        };
        let drr = (spec.dequeue == DequeueKind::WeightedRoundRobin)
            .then(|| Drr::new(Drr::inverse_weight_quanta(&main.clusterer.centroids(), mtu)));
        Ok(QClusterScheduler {
            spec,
            mtu,
            pda: cfg.pda,
            deadline_order: cfg.deadline_order,
            sketch: ScmSketch::new(cfg.sketch.clone())?,
            exact: ExactTracker::new(),
            deadline,
            main,
            queues: vec![VecDeque::new(); queues],
            drr,
            unsound: 0,
        })
    }

    pub fn spec(&self) -> &PolicySpec {
        &self.spec
    }

    pub fn sketch(&self) -> &ScmSketch {
        &self.sketch
    }

    pub fn clusterer(&self) -> &QueueClusterer {
        &self.main.clusterer
    }

    pub fn deadline_clusterer(&self) -> Option<&QueueClusterer> {
        self.deadline.as_ref().map(|c| &c.clusterer)
    }

    fn class_of_mut(&mut self, queue: usize) -> &mut Class {
        match &mut self.deadline {
            Some(d) if d.contains(queue) => d,
            _ => &mut self.main,
        }
    }

    fn pick(&mut self) -> Option<usize> {
        match self.spec.dequeue {
            DequeueKind::StrictPriority => strict_priority(&self.queues),
            DequeueKind::WeightedRoundRobin => self.drr.as_mut().and_then(|d| d.next(&self.queues)),
            DequeueKind::HybridDeadlineFirst => {
                let d = self.deadline.as_ref().map_or(0, |c| c.clusterer.config().k);
                if self.deadline_order == DeadlineOrder::Edf {
                    let earliest = self.queues[..d]
                        .iter()
                        .enumerate()
                        .filter_map(|(i, q)| q.front().map(|p| (p.deadline.unwrap_or(f64::INFINITY), i)))
                        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                    if let Some((_, i)) = earliest {
                        return Some(i);
                    }
                }
                strict_priority(&self.queues)
            }
        }
    }
}

impl Scheduler for QClusterScheduler {
    fn name(&self) -> String {
        self.spec.name.as_str().to_string()
    }

    fn queue_count(&self) -> usize {
        self.queues.len()
    }

    fn enqueue(&mut self, pkt: Packet, now: f64) -> usize {
        let kind = self.spec.pda_kind;
        let query = self.sketch.query(pkt.flow_id, now, kind);
        let in_deadline_class = self.deadline.is_some() && pkt.deadline.is_some();
        let w = match pkt.deadline {
            Some(dl) if in_deadline_class => (dl - now).max(0.0),
            _ => weight(self.spec.name, &query, pkt.flow_size, pkt.size, self.mtu),
        };
        let class = if in_deadline_class {
            self.deadline.as_mut().expect("deadline class exists")
        } else {
            &mut self.main
        };
        let choice = class.offset + class.clusterer.classify(w, now);

        let queue = match self.pda {
            PdaMode::Off => choice,
            PdaMode::Sketch => {
                if query.is_new_flowlet && !self.exact.is_new_flowlet(pkt.flow_id) {
                    self.unsound += 1;
                }
                pda::constrain(choice, &query, kind)
            }
            PdaMode::Exact => pda::constrain(choice, &self.exact.query(pkt.flow_id), kind),
        };

        let class = self.class_of_mut(queue);
        let same_class = class.contains(choice);
        if same_class {
            let offset = class.offset;
            class.clusterer.assign(w, queue - offset);
        }
        let offset = class.offset;
        class.clusterer.on_enqueue(queue - offset, pkt.size as u64);

        self.sketch.record(pkt.flow_id, pkt.size as u64, queue, now, kind);
        self.exact.on_enqueue(pkt.flow_id, queue);
        self.queues[queue].push_back(pkt);
        queue
    }

    fn dequeue(&mut self, _now: f64) -> Option<Packet> {
        let i = self.pick()?;
        let pkt = self.queues[i].pop_front().expect("picked queue is nonempty");
        let class = self.class_of_mut(i);
        let offset = class.offset;
        class.clusterer.on_dequeue(i - offset, pkt.size as u64);
        self.exact.on_dequeue(pkt.flow_id);
        Some(pkt)
    }

    fn control_interval(&self) -> Option<f64> {
        Some(self.main.clusterer.config().control_interval)
    }

    fn control_tick(&mut self, now: f64) {
        self.main.clusterer.control_tick(now);
        if let Some(d) = &mut self.deadline {
            d.clusterer.control_tick(now);
        }
        if let Some(drr) = &mut self.drr {
            drr.set_quanta(Drr::inverse_weight_quanta(&self.main.clusterer.centroids(), self.mtu));
        }
    }

    fn unsound_flowlet_starts(&self) -> u64 {
        self.unsound
    }
}
