use std::collections::VecDeque;

use crate::sim::Packet;

/// Lowest-index nonempty queue.
pub fn strict_priority(queues: &[VecDeque<Packet>]) -> Option<usize> {
    queues.iter().position(|q| !q.is_empty())
}

/// Deficit round robin. Queue `i` earns `quanta[i]` bytes per visit.
#[derive(Debug, Clone)]
pub struct Drr {
    quanta: Vec<f64>,
    deficit: Vec<f64>,
    current: usize,
    fresh_visit: bool,
}

impl Drr {
    pub fn new(quanta: Vec<f64>) -> Self {
        assert!(quanta.iter().all(|&q| q > 0.0));
        Drr {
            deficit: vec![0.0; quanta.len()],
            quanta,
            current: 0,
            fresh_visit: true,
        }
    }

    /// Quanta proportional to `1 / m_i`, scaled so the heaviest queue gets
    /// one MTU.
    pub fn inverse_weight_quanta(centroids: &[f64], mtu: u32) -> Vec<f64> {
        let floor = f64::MIN_POSITIVE;
        let max_m = centroids.iter().copied().fold(floor, f64::max);
        centroids
            .iter()
            .map(|&m| mtu as f64 * max_m / m.max(floor))
            .collect()
    }

    pub fn set_quanta(&mut self, quanta: Vec<f64>) {
        assert_eq!(quanta.len(), self.quanta.len());
        self.quanta = quanta;
    }

    pub fn quanta(&self) -> &[f64] {
        &self.quanta
    }

    fn advance(&mut self) {
        self.current = (self.current + 1) % self.quanta.len();
        self.fresh_visit = true;
    }

    /// Queue to serve next; the caller pops its head.
    pub fn next(&mut self, queues: &[VecDeque<Packet>]) -> Option<usize> {
        if queues.iter().all(VecDeque::is_empty) {
            return None;
        }
        loop {
            let i = self.current;
            let Some(head) = queues[i].front() else {
                self.deficit[i] = 0.0;
                self.advance();
                continue;
            };
            if self.fresh_visit {
                self.deficit[i] += self.quanta[i];
                self.fresh_visit = false;
            }
            let size = head.size as f64;
            if size <= self.deficit[i] {
                self.deficit[i] -= size;
                return Some(i);
            }
            self.advance();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt(size: u32) -> Packet {
        Packet {
            flow_id: 0,
            seq: 0,
            size,
            arrival: 0.0,
            deadline: None,
            flow_size: None,
            ecn_marked: false,
            trace_id: 0,
        }
    }

    #[test]
    fn strict_priority_picks_first_nonempty() {
        let mut qs = vec![VecDeque::new(); 3];
        assert_eq!(strict_priority(&qs), None);
        qs[1].extend([pkt(1), pkt(1), pkt(1)]);
        qs[2].push_back(pkt(1));
        assert_eq!(strict_priority(&qs), Some(1));
    }

    #[test]
    fn wrr_shares_follow_inverse_weights() {
        let quanta = Drr::inverse_weight_quanta(&[1.0, 2.0, 4.0], 1500);
        assert_eq!(quanta, vec![6000.0, 3000.0, 1500.0]);
        let mut drr = Drr::new(quanta);
        let mut qs = vec![VecDeque::new(); 3];
        let mut served = [0u64; 3];
        let n = 100_000;
        for _ in 0..n {
            // keep every queue backlogged
            for q in qs.iter_mut() {
                if q.is_empty() {
                    q.push_back(pkt(1500));
                }
            }
            let i = drr.next(&qs).unwrap();
            qs[i].pop_front();
            served[i] += 1;
        }
        for (s, want) in served.iter().zip([4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]) {
            let share = *s as f64 / n as f64;
            assert!((share - want).abs() / want < 0.05, "share {share} want {want}");
        }
    }

    #[test]
    fn drr_skips_empty_queues_and_resets_deficit() {
        let mut drr = Drr::new(vec![1500.0, 1500.0]);
        let mut qs = vec![VecDeque::new(), VecDeque::new()];
        qs[1].push_back(pkt(100));
        assert_eq!(drr.next(&qs), Some(1));
        qs[1].pop_front();
        assert_eq!(drr.next(&qs), None);
        qs[0].push_back(pkt(1500));
        assert_eq!(drr.next(&qs), Some(0));
    }
}
