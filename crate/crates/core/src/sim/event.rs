use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// Packet `seq` of flow index `flow` has fully arrived at the switch.
    Arrival { flow: usize, seq: u32 },
    /// The packet on the wire finished serializing.
    TxDone,
    ControlTick,
}

#[derive(Debug)]
struct Entry {
    time: f64,
    order: u64,
    event: Event,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.order.cmp(&self.order))
    }
}

/// Pending events in nondecreasing time; equal times pop in push order.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Entry>,
    pushed: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, event: Event) {
        debug_assert!(!time.is_nan());
        self.heap.push(Entry {
            time,
            order: self.pushed,
            event,
        });
        self.pushed += 1;
    }

    pub fn pop(&mut self) -> Option<(f64, Event)> {
        self.heap.pop().map(|e| (e.time, e.event))
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_order_then_insertion_order() {
        let mut q = EventQueue::new();
        q.push(2.0, Event::TxDone);
        q.push(1.0, Event::Arrival { flow: 0, seq: 0 });
        q.push(1.0, Event::ControlTick);
        q.push(1.0, Event::Arrival { flow: 1, seq: 0 });
        let got: Vec<_> = std::iter::from_fn(|| q.pop()).collect();
        assert_eq!(
            got,
            vec![
                (1.0, Event::Arrival { flow: 0, seq: 0 }),
                (1.0, Event::ControlTick),
                (1.0, Event::Arrival { flow: 1, seq: 0 }),
                (2.0, Event::TxDone),
            ]
        );
    }
}
