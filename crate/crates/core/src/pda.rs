//! Packet disorder avoidance.
//!
//! Within a flowlet a packet must not overtake the flow's earlier packets.
//! Priority-ordered policies enforce that by never letting priority ascend;
//! fair policies pin the flow to the queue its flowlet started in.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::sketch::SketchQueryResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PdaKind {
    /// Lower queue index is served first (SRPT, LAS, deadline-aware).
    PriorityOrdered,
    /// Queues share the link (fair queueing).
    Fair,
}

/// Adjusts the clustering choice for the flowlet rule.
pub fn constrain(choice: usize, query: &SketchQueryResult, kind: PdaKind) -> usize {
    if query.is_new_flowlet {
        return choice;
    }
    match (query.prev_queue, kind) {
        (None, _) => choice,
        (Some(prev), PdaKind::PriorityOrdered) => choice.max(prev),
        (Some(prev), PdaKind::Fair) => prev,
    }
}

/// Exact per-flow bookkeeping of which queue holds a flow's newest packet
/// and how many of its packets are still buffered. Used as ground truth
/// against the sketch.
#[derive(Debug, Default, Clone)]
pub struct ExactTracker {
    flows: HashMap<u64, TrackedFlow>,
}

#[derive(Debug, Default, Clone, Copy)]
struct TrackedFlow {
    last_queue: usize,
    buffered: u32,
}

impl ExactTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// A flowlet starts when none of the flow's packets are buffered.
    pub fn is_new_flowlet(&self, flow: u64) -> bool {
        self.flows.get(&flow).is_none_or(|f| f.buffered == 0)
    }

    pub fn last_queue(&self, flow: u64) -> Option<usize> {
        self.flows.get(&flow).map(|f| f.last_queue)
    }

    pub fn buffered(&self, flow: u64) -> u32 {
        self.flows.get(&flow).map_or(0, |f| f.buffered)
    }

    /// Query result built from exact state, in the sketch's shape.
    pub fn query(&self, flow: u64) -> SketchQueryResult {
        let new_flowlet = self.is_new_flowlet(flow);
        SketchQueryResult {
            weight_estimate: 0,
            last_seen: f64::NAN,
            is_new_message: new_flowlet,
            is_new_flowlet: new_flowlet,
            prev_queue: if new_flowlet { None } else { self.last_queue(flow) },
        }
    }

    pub fn on_enqueue(&mut self, flow: u64, queue: usize) {
        let f = self.flows.entry(flow).or_default();
        f.last_queue = queue;
        f.buffered += 1;
    }

    pub fn on_dequeue(&mut self, flow: u64) {
        if let Some(f) = self.flows.get_mut(&flow) {
            f.buffered = f.buffered.saturating_sub(1);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(new_flowlet: bool, prev: Option<usize>) -> SketchQueryResult {
        SketchQueryResult {
            weight_estimate: 0,
            last_seen: 0.0,
            is_new_message: false,
            is_new_flowlet: new_flowlet,
            prev_queue: prev,
        }
    }

    #[test]
    fn new_flowlet_is_unconstrained() {
        assert_eq!(constrain(1, &q(true, Some(5)), PdaKind::PriorityOrdered), 1);
        assert_eq!(constrain(1, &q(true, Some(5)), PdaKind::Fair), 1);
    }

    #[test]
    fn priority_cannot_ascend() {
        let query = q(false, Some(3));
        assert_eq!(constrain(1, &query, PdaKind::PriorityOrdered), 3);
        assert_eq!(constrain(5, &query, PdaKind::PriorityOrdered), 5);
    }

    #[test]
    fn fair_queue_cannot_change() {
        assert_eq!(constrain(0, &q(false, Some(2)), PdaKind::Fair), 2);
        assert_eq!(constrain(7, &q(false, Some(2)), PdaKind::Fair), 2);
    }

    #[test]
    fn unset_previous_queue_leaves_choice() {
        assert_eq!(constrain(4, &q(false, None), PdaKind::Fair), 4);
        assert_eq!(constrain(4, &q(false, None), PdaKind::PriorityOrdered), 4);
    }

    #[test]
    fn exact_tracker_flowlets() {
        let mut t = ExactTracker::new();
        assert!(t.is_new_flowlet(1));
        t.on_enqueue(1, 3);
        t.on_enqueue(1, 4);
        assert!(!t.is_new_flowlet(1));
        assert_eq!(t.query(1).prev_queue, Some(4));
        t.on_dequeue(1);
        t.on_dequeue(1);
        assert!(t.is_new_flowlet(1));
        assert_eq!(t.query(1).prev_queue, None);
    }
}
