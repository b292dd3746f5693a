//! Reference disciplines: FIFO, static-threshold LAS, packetized fair
//! queueing and ideal SRPT.

use std::collections::{BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sim::{self, Packet, PortConfig, Scheduler, SimOptions};
use crate::workload::{FlowSpec, SizeCdf};

#[derive(Debug, Default)]
pub struct Fifo {
    queue: VecDeque<Packet>,
}

impl Fifo {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Scheduler for Fifo {
    fn name(&self) -> String {
        "fifo".into()
    }

    fn queue_count(&self) -> usize {
        1
    }

    fn enqueue(&mut self, pkt: Packet, _now: f64) -> usize {
        self.queue.push_back(pkt);
        0
    }

    fn dequeue(&mut self, _now: f64) -> Option<Packet> {
        self.queue.pop_front()
    }
}

/// Multi-level feedback queue keyed on exact bytes sent per flow: a packet
/// goes to queue `i` when the flow's bytes before it lie in
/// `[thres_{i-1}, thres_i)`. Strict priority between queues.
#[derive(Debug)]
pub struct StaticLas {
    label: String,
    thresholds: Vec<u64>,
    queues: Vec<VecDeque<Packet>>,
    sent: HashMap<u64, u64>,
}

impl StaticLas {
    pub fn new(thresholds: Vec<u64>) -> Result<Self> {
        Self::labelled("pias", thresholds)
    }

    pub fn labelled(label: impl Into<String>, thresholds: Vec<u64>) -> Result<Self> {
        if thresholds.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::config("static thresholds must be nondecreasing"));
        }
        Ok(StaticLas {
            label: label.into(),
            queues: vec![VecDeque::new(); thresholds.len() + 1],
            thresholds,
            sent: HashMap::new(),
        })
    }

    pub fn thresholds(&self) -> &[u64] {
        &self.thresholds
    }

    pub fn queue_for(&self, bytes_sent: u64) -> usize {
        self.thresholds.partition_point(|&t| t <= bytes_sent)
    }
}

impl Scheduler for StaticLas {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn queue_count(&self) -> usize {
        self.queues.len()
    }

    fn enqueue(&mut self, pkt: Packet, _now: f64) -> usize {
        let sent = self.sent.entry(pkt.flow_id).or_default();
        let q = self.thresholds.partition_point(|&t| t <= *sent);
        *sent += pkt.size as u64;
        self.queues[q].push_back(pkt);
        q
    }

    fn dequeue(&mut self, _now: f64) -> Option<Packet> {
        self.queues.iter_mut().find_map(|q| q.pop_front())
    }
}

/// Byte offsets of every packet of `samples` flows drawn from `cdf`,
/// sorted. Packet-weighted, so it describes where the traffic is.
fn packet_offsets(cdf: &SizeCdf, mtu: u32, samples: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut offsets = Vec::new();
    for _ in 0..samples {
        let size = cdf.sample(&mut rng);
        offsets.extend((0..size.div_ceil(mtu as u64)).map(|j| j * mtu as u64));
    }
    offsets.sort_unstable();
    offsets
}

const PRESET_SEED: u64 = 0x5eed_0f_1a5;
const PRESET_SAMPLES: usize = 20_000;

/// Deliberately poor thresholds: about 60% of packets land in the first
/// queue and 30% in the last, with the middle queues splitting the rest.
pub fn worst_thresholds(cdf: &SizeCdf, queues: usize, mtu: u32) -> Vec<u64> {
    assert!(queues >= 2);
    let offsets = packet_offsets(cdf, mtu, PRESET_SAMPLES, PRESET_SEED);
    let at = |q: f64| offsets[((q * offsets.len() as f64) as usize).min(offsets.len() - 1)];
    let k = queues - 1;
    if k == 1 {
        return vec![at(0.6)];
    }
    // thres_1 at the 60% point, thres_{k} at the 70% point, evenly between
    (0..k)
        .map(|i| at(0.6 + 0.1 * i as f64 / (k - 1) as f64))
        .collect()
}

/// Geometric ladder `t1, t1*r, t1*r^2, ...` with `queues - 1` entries.
pub fn geometric_thresholds(t1: u64, ratio: f64, queues: usize) -> Vec<u64> {
    (0..queues - 1)
        .map(|i| (t1 as f64 * ratio.powi(i as i32)).round() as u64)
        .collect()
}

/// Offline grid search over geometric ladders, keeping the one with the
/// lowest mean FCT on `train`.
pub fn sweep_thresholds(train: &[FlowSpec], port: &PortConfig) -> Result<Vec<u64>> {
    let opts = SimOptions {
        record_packets: false,
        ..SimOptions::default()
    };
    let mut best: Option<(f64, Vec<u64>)> = None;
    for j in 0..10 {
        let t1 = port.mtu as u64 * (1 << j);
        for ratio in [1.5, 2.0, 4.0, 8.0, 16.0] {
            let thres = geometric_thresholds(t1, ratio, port.queues);
            let mut s = StaticLas::new(thres.clone())?;
            let log = sim::run(port, train, &mut s, &opts)?;
            let fcts: Vec<f64> = log.flows.iter().filter_map(|f| f.fct).collect();
            // an incomplete flow is as bad as it gets
            let score = if fcts.len() < log.flows.len() {
                f64::INFINITY
            } else {
                fcts.iter().sum::<f64>() / fcts.len() as f64
            };
            if best.as_ref().is_none_or(|(b, _)| score < *b) {
                best = Some((score, thres));
            }
        }
    }
    Ok(best.expect("grid is nonempty").1)
}

/// Training schedule for [`sweep_thresholds`]: fixed seed, same CDF and load.
pub fn training_schedule(cdf: &SizeCdf, load: f64, port: &PortConfig, flows: usize) -> Result<Vec<FlowSpec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(PRESET_SEED);
    crate::workload::generate(cdf, load, port.line_rate, flows, &mut rng)
}

#[derive(Debug)]
struct Tagged {
    finish: f64,
    order: u64,
    pkt: Packet,
}

impl PartialEq for Tagged {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Tagged {}

impl PartialOrd for Tagged {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Tagged {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .finish
            .total_cmp(&self.finish)
            .then_with(|| other.order.cmp(&self.order))
    }
}

/// Weighted fair queueing with equal weights: every packet is stamped with
/// its finish time under bit-by-bit round robin, tracked with the exact
/// fluid virtual clock, and the smallest stamp is sent first.
#[derive(Debug)]
pub struct IdealFq {
    /// Bytes per second.
    rate: f64,
    virtual_time: f64,
    last_update: f64,
    /// Fluid-active flows keyed by (last finish tag bits, flow id). Tags are
    /// nonnegative so the bit pattern orders like the value.
    active: BTreeSet<(u64, u64)>,
    last_finish: HashMap<u64, f64>,
    heap: BinaryHeap<Tagged>,
    pushed: u64,
}

impl IdealFq {
    pub fn new(line_rate: f64) -> Self {
        IdealFq {
            rate: line_rate / 8.0,
            virtual_time: 0.0,
            last_update: 0.0,
            active: BTreeSet::new(),
            last_finish: HashMap::new(),
            heap: BinaryHeap::new(),
            pushed: 0,
        }
    }

    pub fn virtual_time(&self) -> f64 {
        self.virtual_time
    }

    /// Advances the fluid system to `now`, retiring flows whose last bit
    /// has been served.
    fn advance(&mut self, now: f64) {
        let mut t = self.last_update;
        while let Some(&(bits, flow)) = self.active.first() {
            let n = self.active.len() as f64;
            let finish = f64::from_bits(bits);
            let reach = t + (finish - self.virtual_time) * n / self.rate;
            if reach > now {
                self.virtual_time += (now - t) * self.rate / n;
                break;
            }
            self.virtual_time = finish;
            t = reach;
            self.active.pop_first();
            self.last_finish.remove(&flow);
        }
        self.last_update = now;
    }
}

impl Scheduler for IdealFq {
    fn name(&self) -> String {
        "ideal-fq".into()
    }

    fn queue_count(&self) -> usize {
        1
    }

    fn enqueue(&mut self, pkt: Packet, now: f64) -> usize {
        self.advance(now);
        let prev = self.last_finish.get(&pkt.flow_id).copied();
        if let Some(p) = prev {
            self.active.remove(&(p.to_bits(), pkt.flow_id));
        }
        let start = prev.map_or(self.virtual_time, |p| p.max(self.virtual_time));
        let finish = start + pkt.size as f64;
        self.last_finish.insert(pkt.flow_id, finish);
        self.active.insert((finish.to_bits(), pkt.flow_id));
        self.heap.push(Tagged {
            finish,
            order: self.pushed,
            pkt,
        });
        self.pushed += 1;
        0
    }

    fn dequeue(&mut self, now: f64) -> Option<Packet> {
        self.advance(now);
        self.heap.pop().map(|t| t.pkt)
    }
}

#[derive(Debug, Default)]
struct SrptFlow {
    remaining: u64,
    packets: VecDeque<Packet>,
}

/// One preemptive logical queue: always sends the next packet of the flow
/// with the fewest remaining bytes. Needs declared flow sizes; a flow
/// without one sorts last.
#[derive(Debug, Default)]
pub struct IdealSrpt {
    flows: HashMap<u64, SrptFlow>,
    /// Backlogged flows keyed by (remaining bytes, head packet trace row).
    ready: BTreeSet<(u64, usize, u64)>,
}

impl IdealSrpt {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Scheduler for IdealSrpt {
    fn name(&self) -> String {
        "ideal-srpt".into()
    }

    fn queue_count(&self) -> usize {
        1
    }

    fn enqueue(&mut self, pkt: Packet, _now: f64) -> usize {
        let id = pkt.flow_id;
        let declared = pkt.flow_size.unwrap_or(u64::MAX);
        let f = self.flows.entry(id).or_insert_with(|| SrptFlow {
            remaining: declared,
            packets: VecDeque::new(),
        });
        if f.packets.is_empty() {
            self.ready.insert((f.remaining, pkt.trace_id, id));
        }
        f.packets.push_back(pkt);
        0
    }

    fn dequeue(&mut self, _now: f64) -> Option<Packet> {
        let (_, _, id) = self.ready.pop_first()?;
        let f = self.flows.get_mut(&id).expect("ready flow is tracked");
        let pkt = f.packets.pop_front().expect("ready flow has a packet");
        f.remaining = f.remaining.saturating_sub(pkt.size as u64);
        match f.packets.front() {
            Some(head) => {
                self.ready.insert((f.remaining, head.trace_id, id));
            }
            None if f.remaining == 0 => {
                self.flows.remove(&id);
            }
            None => {}
        }
        Some(pkt)
    }
}
