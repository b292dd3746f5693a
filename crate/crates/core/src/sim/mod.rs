//! Discrete-event model of one bottleneck egress port.
//!
//! Sources are open loop: every flow pushes its packets back to back at the
//! access rate and a packet becomes visible to the switch once its last byte
//! has arrived. The port holds a shared tail-drop buffer in front of the
//! scheduler under test and serializes one packet at a time at the line
//! rate.

mod event;
pub mod trace;

use serde::{Deserialize, Serialize};

pub use event::{Event, EventQueue};
pub use trace::{FlowRecord, PacketRecord, RunStats, TraceLog};

use crate::error::{Error, Result};
use crate::workload::FlowSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub flow_id: u64,
    pub seq: u32,
    pub size: u32,
    pub arrival: f64,
    pub deadline: Option<f64>,
    /// Declared total size of the flow, when the source exposes it.
    pub flow_size: Option<u64>,
    pub ecn_marked: bool,
    /// Row of this packet in the trace.
    pub trace_id: usize,
}

/// A per-port queueing discipline.
pub trait Scheduler {
    fn name(&self) -> String;

    /// Number of physical queues the discipline uses.
    fn queue_count(&self) -> usize;

    /// Buffers `pkt` and returns the queue it went to.
    fn enqueue(&mut self, pkt: Packet, now: f64) -> usize;

    /// Next packet to put on the wire, or `None` when empty.
    fn dequeue(&mut self, now: f64) -> Option<Packet>;

    fn control_interval(&self) -> Option<f64> {
        None
    }

    fn control_tick(&mut self, _now: f64) {}

    fn unsound_flowlet_starts(&self) -> u64 {
        0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortConfig {
    pub queues: usize,
    /// Bits per second.
    pub line_rate: f64,
    /// Shared buffer in bytes.
    pub buffer: u64,
    /// Mark packets that find more than this many bytes buffered; a value
    /// at or above `buffer` never marks.
    pub ecn_threshold: u64,
    pub mtu: u32,
    /// Per-flow source rate in bits per second; may be infinite.
    pub access_rate: f64,
}

impl Default for PortConfig {
    fn default() -> Self {
        PortConfig {
            queues: 8,
            line_rate: 10e9,
            buffer: 1_000_000,
            ecn_threshold: 300_000,
            mtu: 1500,
            access_rate: 10e9,
        }
    }
}

impl PortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.queues < 2 {
            return Err(Error::config("port needs at least two queues"));
        }
        if !(self.line_rate > 0.0 && self.line_rate.is_finite()) {
            return Err(Error::config("line rate must be positive and finite"));
        }
        if !(self.access_rate > 0.0) {
            return Err(Error::config("access rate must be positive"));
        }
        if self.mtu == 0 || self.buffer <= self.mtu as u64 {
            return Err(Error::config("buffer must exceed one MTU"));
        }
        Ok(())
    }

    /// Seconds to serialize `bytes` at line rate.
    pub fn tx_time(&self, bytes: u64) -> f64 {
        bytes as f64 * 8.0 / self.line_rate
    }

    pub fn packets_in(&self, flow_size: u64) -> u32 {
        flow_size.div_ceil(self.mtu as u64).max(1) as u32
    }

    pub fn packet_size(&self, flow_size: u64, seq: u32) -> u32 {
        let offset = seq as u64 * self.mtu as u64;
        flow_size.saturating_sub(offset).clamp(1, self.mtu as u64) as u32
    }

    /// Time packet `seq` of a flow fully reaches the switch.
    pub fn arrival_time(&self, flow: &FlowSpec, seq: u32) -> f64 {
        if self.access_rate.is_infinite() {
            return flow.start;
        }
        let through = ((seq as u64 + 1) * self.mtu as u64).min(flow.size);
        flow.start + through as f64 * 8.0 / self.access_rate
    }

    /// Completion time of a flow alone on an idle port.
    pub fn unloaded_fct(&self, size: u64) -> f64 {
        let n = self.packets_in(size);
        let last_arrival = FlowSpec {
            id: 0,
            start: 0.0,
            size,
            deadline: None,
        };
        let mut t = 0.0f64;
        for seq in 0..n {
            let bytes = self.packet_size(size, seq) as u64;
            t = t.max(self.arrival_time(&last_arrival, seq)) + self.tx_time(bytes);
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    /// Stop at this simulated time even if flows are unfinished.
    pub horizon: Option<f64>,
    pub record_packets: bool,
    /// Hide flow sizes from the scheduler.
    pub hide_flow_sizes: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            horizon: None,
            record_packets: true,
            hide_flow_sizes: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct FlowProgress {
    packets: u32,
    delivered: u32,
    dropped: u32,
    max_seq: Option<u32>,
    disorder: u64,
    last_departure: f64,
}

/// Runs `flows` through `scheduler` on `port`.
pub fn run(
    port: &PortConfig,
    flows: &[FlowSpec],
    scheduler: &mut dyn Scheduler,
    opts: &SimOptions,
) -> Result<TraceLog> {
    port.validate()?;
    for f in flows {
        if f.size == 0 || !(f.start >= 0.0) {
            return Err(Error::config(format!(
                "flow {} needs a positive size and nonnegative start",
                f.id
            )));
        }
    }

    let mut events = EventQueue::new();
    let mut progress: Vec<FlowProgress> = flows
        .iter()
        .map(|f| FlowProgress {
            packets: port.packets_in(f.size),
            ..FlowProgress::default()
        })
        .collect();
    for (i, f) in flows.iter().enumerate() {
        events.push(port.arrival_time(f, 0), Event::Arrival { flow: i, seq: 0 });
    }
    let tick = scheduler.control_interval();
    if let Some(dt) = tick {
        events.push(dt, Event::ControlTick);
    }

    let mut log = TraceLog::default();
    let mut stats = RunStats::default();
    let mut occupancy: u64 = 0;
    let mut queued: u64 = 0;
    let mut injecting = flows.len();
    let mut on_wire: Option<Packet> = None;
    let mut next_trace_id = 0usize;
    let mut now = 0.0;

    while let Some((t, ev)) = events.pop() {
        if opts.horizon.is_some_and(|h| t > h) {
            break;
        }
        now = t;
        match ev {
            Event::Arrival { flow, seq } => {
                let spec = &flows[flow];
                let size = port.packet_size(spec.size, seq);
                stats.injected += 1;
                let trace_id = next_trace_id;
                next_trace_id += 1;
                let mut record = PacketRecord {
                    flow_id: spec.id,
                    seq,
                    size,
                    arrival: now,
                    queue: None,
                    departure: None,
                    ecn_marked: false,
                };
                if occupancy + size as u64 > port.buffer {
                    stats.dropped += 1;
                    progress[flow].dropped += 1;
                } else {
                    occupancy += size as u64;
                    queued += 1;
                    let marked = occupancy > port.ecn_threshold;
                    stats.ecn_marked += marked as u64;
                    record.ecn_marked = marked;
                    let pkt = Packet {
                        flow_id: spec.id,
                        seq,
                        size,
                        arrival: now,
                        deadline: spec.deadline,
                        flow_size: (!opts.hide_flow_sizes).then_some(spec.size),
                        ecn_marked: marked,
                        trace_id,
                    };
                    record.queue = Some(scheduler.enqueue(pkt, now));
                }
                if opts.record_packets {
                    log.packets.push(record);
                }
                if seq + 1 < progress[flow].packets {
                    events.push(
                        port.arrival_time(spec, seq + 1),
                        Event::Arrival { flow, seq: seq + 1 },
                    );
                } else {
                    injecting -= 1;
                }
            }
            Event::TxDone => {
                let pkt = on_wire.take().expect("TxDone without a packet on the wire");
                stats.delivered += 1;
                if opts.record_packets {
                    log.packets[pkt.trace_id].departure = Some(now);
                }
                // flow ids are dense indices into `flows`
                let p = &mut progress[flow_index(flows, pkt.flow_id)];
                p.delivered += 1;
                match p.max_seq {
                    Some(m) if pkt.seq < m => p.disorder += 1,
                    _ => p.max_seq = Some(pkt.seq),
                }
                p.last_departure = now;
            }
            Event::ControlTick => {
                scheduler.control_tick(now);
                if injecting > 0 || queued > 0 || on_wire.is_some() {
                    events.push(now + tick.expect("tick without interval"), Event::ControlTick);
                }
            }
        }
        // the port picks only once every event at this instant is in
        if on_wire.is_none() && events.peek_time() != Some(now) {
            if let Some(pkt) = scheduler.dequeue(now) {
                occupancy -= pkt.size as u64;
                queued -= 1;
                stats.max_queueing_delay = stats.max_queueing_delay.max(now - pkt.arrival);
                events.push(now + port.tx_time(pkt.size as u64), Event::TxDone);
                on_wire = Some(pkt);
            }
        }
    }

    stats.in_flight = stats.injected - stats.delivered - stats.dropped;
    stats.unsound_flowlet_starts = scheduler.unsound_flowlet_starts();
    stats.end_time = now;
    log.flows = flows
        .iter()
        .zip(&progress)
        .map(|(f, p)| {
            let done = p.delivered == p.packets;
            let fct = done.then(|| p.last_departure - f.start);
            FlowRecord {
                flow_id: f.id,
                size: f.size,
                start: f.start,
                fct,
                deadline: f.deadline,
                met: f.deadline.map(|d| done && p.last_departure <= d),
                disorder_count: p.disorder,
            }
        })
        .collect();
    log.stats = stats;
    Ok(log)
}

fn flow_index(flows: &[FlowSpec], id: u64) -> usize {
    let guess = id as usize;
    if flows.get(guess).is_some_and(|f| f.id == id) {
        guess
    } else {
        flows
            .iter()
            .position(|f| f.id == id)
            .expect("packet of unknown flow")
    }
}
