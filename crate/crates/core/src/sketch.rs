//! Scheduling Count-Min sketch.
//!
//! `d` rows of `l` buckets. Each bucket carries the last access time, a byte
//! (or packet) counter and the queue the last packet hashed into it was sent
//! to. Aging is lazy: a bucket whose timestamp is older than
//! `now - message_gap` is cleared by the next insert that touches it, which is
//! how the sketch tells messages on a persistent connection apart. The same
//! timestamps, compared against the shorter `flowlet_gap`, decide whether a
//! packet may be re-queued freely (see [`crate::pda`]).
//!
//! The caller supplies the simulated time on every call and must never move
//! it backwards.

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pda::PdaKind;

const UNSET: u32 = u32::MAX;

/// Per-row hash: murmur3's 64-bit finalizer over the key mixed with the row seed.
#[inline]
fn mix64(mut x: u64) -> u64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    x ^= x >> 33;
    x
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, PartialEq)]
pub struct SketchBucket {
    pub timestamp: f64,
    pub counter: u64,
    queue_id: u32,
}

impl SketchBucket {
    const EMPTY: SketchBucket = SketchBucket {
        timestamp: 0.0,
        counter: 0,
        queue_id: UNSET,
    };

    pub fn queue(&self) -> Option<usize> {
        (self.queue_id != UNSET).then_some(self.queue_id as usize)
    }

    pub fn set_queue(&mut self, queue: Option<usize>) {
        self.queue_id = match queue {
            Some(q) => u32::try_from(q).expect("queue index fits in u32"),
            None => UNSET,
        };
    }

    fn is_older_than(&self, now: f64, gap: f64) -> bool {
        self.timestamp < now - gap
    }
}

impl fmt::Debug for SketchBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {:?})", self.timestamp, self.counter, self.queue())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SketchConfig {
    pub rows: usize,
    pub width: usize,
    /// Seconds of silence after which the next packet starts a new message.
    pub message_gap: f64,
    /// Seconds of silence after which the next packet starts a new flowlet.
    pub flowlet_gap: f64,
    pub seed: u64,
}

impl Default for SketchConfig {
    /// Three rows and ~83 KB of 12-byte buckets.
    fn default() -> Self {
        SketchConfig {
            rows: 3,
            width: 2300,
            message_gap: 5e-3,
            flowlet_gap: 500e-6,
            seed: 0x5eed_0f5c,
        }
    }
}

impl SketchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.width == 0 {
            return Err(Error::config("sketch needs at least one row and one bucket"));
        }
        if !(self.message_gap >= 0.0 && self.flowlet_gap >= 0.0) {
            return Err(Error::config("sketch aging gaps must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SketchQueryResult {
    /// Minimum counter over the mapped buckets.
    pub weight_estimate: u64,
    /// Oldest timestamp over the mapped buckets.
    pub last_seen: f64,
    pub is_new_message: bool,
    pub is_new_flowlet: bool,
    pub prev_queue: Option<usize>,
}

#[derive(Clone)]
pub struct ScmSketch {
    cfg: SketchConfig,
    seeds: Vec<u64>,
    buckets: Vec<SketchBucket>,
    last_now: f64,
}

impl fmt::Debug for ScmSketch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScmSketch")
            .field("rows", &self.cfg.rows)
            .field("width", &self.cfg.width)
            .field("message_gap", &self.cfg.message_gap)
            .field("flowlet_gap", &self.cfg.flowlet_gap)
            .finish()
    }
}

impl ScmSketch {
    pub fn new(cfg: SketchConfig) -> Result<Self> {
        cfg.validate()?;
        let mut state = cfg.seed;
        let mut seeds: Vec<u64> = Vec::with_capacity(cfg.rows);
        while seeds.len() < cfg.rows {
            let s = splitmix64(&mut state);
            if !seeds.contains(&s) {
                seeds.push(s);
            }
        }
        Ok(ScmSketch {
            buckets: vec![SketchBucket::EMPTY; cfg.rows * cfg.width],
            seeds,
            cfg,
            last_now: f64::NEG_INFINITY,
        })
    }

    pub fn config(&self) -> &SketchConfig {
        &self.cfg
    }

    pub fn rows(&self) -> usize {
        self.cfg.rows
    }

    pub fn width(&self) -> usize {
        self.cfg.width
    }

    /// Column of `flow` in `row`.
    #[inline]
    pub fn column(&self, row: usize, flow: u64) -> usize {
        let h = mix64(flow ^ self.seeds[row]);
        ((h as u128 * self.cfg.width as u128) >> 64) as usize
    }

    #[inline]
    fn slot(&self, row: usize, flow: u64) -> usize {
        row * self.cfg.width + self.column(row, flow)
    }

    pub fn bucket(&self, row: usize, flow: u64) -> &SketchBucket {
        &self.buckets[self.slot(row, flow)]
    }

    /// Direct access to a mapped bucket, for seeding test states.
    pub fn bucket_mut(&mut self, row: usize, flow: u64) -> &mut SketchBucket {
        let i = self.slot(row, flow);
        &mut self.buckets[i]
    }

    pub fn mapped(&self, flow: u64) -> impl Iterator<Item = &SketchBucket> + '_ {
        (0..self.cfg.rows).map(move |r| self.bucket(r, flow))
    }

    #[inline]
    fn observe_clock(&mut self, now: f64) {
        debug_assert!(
            now >= self.last_now,
            "sketch clock moved backwards: {now} < {}",
            self.last_now
        );
        self.last_now = now;
    }

    /// Adds `amount` to every mapped counter, clearing buckets idle for
    /// longer than the message gap first. Queue IDs are left alone except
    /// by that clear.
    pub fn insert(&mut self, flow: u64, amount: u64, now: f64) {
        self.observe_clock(now);
        let gap = self.cfg.message_gap;
        for row in 0..self.cfg.rows {
            let i = self.slot(row, flow);
            let b = &mut self.buckets[i];
            if b.is_older_than(now, gap) {
                *b = SketchBucket {
                    timestamp: now,
                    counter: amount,
                    queue_id: UNSET,
                };
            } else {
                b.counter += amount;
                b.timestamp = now;
            }
        }
    }

    pub fn query(&self, flow: u64, now: f64, kind: PdaKind) -> SketchQueryResult {
        let mut weight = u64::MAX;
        let mut last_seen = f64::INFINITY;
        for b in self.mapped(flow) {
            weight = weight.min(b.counter);
            last_seen = last_seen.min(b.timestamp);
        }
        SketchQueryResult {
            weight_estimate: weight,
            last_seen,
            is_new_message: last_seen < now - self.cfg.message_gap,
            is_new_flowlet: last_seen < now - self.cfg.flowlet_gap,
            prev_queue: self.prev_queue(flow, kind),
        }
    }

    /// Records that the current packet of `flow` went to `queue`.
    ///
    /// Buckets idle for longer than the flowlet gap take the new queue. Live
    /// buckets may only move to a lower priority (higher index) under
    /// priority-ordered policies and are left unchanged under fair ones.
    pub fn update_queue_id(&mut self, flow: u64, queue: usize, now: f64, kind: PdaKind) {
        let gap = self.cfg.flowlet_gap;
        for row in 0..self.cfg.rows {
            let i = self.slot(row, flow);
            let b = &mut self.buckets[i];
            let stale = b.is_older_than(now, gap);
            b.set_queue(Some(merge_queue(b.queue(), queue, stale, kind)));
        }
    }

    /// The queue the previous packet of `flow` most likely sits in.
    ///
    /// Priority-ordered policies take the highest priority (lowest index)
    /// among the mapped buckets; collisions can then only report a lower
    /// priority than the truth. Fair policies take the bucket with the
    /// oldest timestamp, the one least disturbed by other flows. Every
    /// packet refreshes all of its buckets, so ties are the norm; they go to
    /// the smallest counter, since a bucket shared with another live flow
    /// carries that flow's bytes too and may still hold its queue.
    pub fn prev_queue(&self, flow: u64, kind: PdaKind) -> Option<usize> {
        match kind {
            PdaKind::PriorityOrdered => self.mapped(flow).filter_map(|b| b.queue()).min(),
            PdaKind::Fair => self
                .mapped(flow)
                .filter_map(|b| b.queue().map(|q| (b.timestamp, b.counter, q)))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, _, q)| q),
        }
    }

    /// Per-packet update used by the data path: one pass per bucket that
    /// applies message aging, accumulates `amount`, merges the chosen queue
    /// and refreshes the timestamp.
    ///
    /// Staleness for both the message and the flowlet test is judged on the
    /// timestamp as it was before this packet, so the queue chosen for the
    /// first packet of a new message survives the aging clear.
    pub fn record(&mut self, flow: u64, amount: u64, queue: usize, now: f64, kind: PdaKind) {
        self.observe_clock(now);
        let (mgap, fgap) = (self.cfg.message_gap, self.cfg.flowlet_gap);
        for row in 0..self.cfg.rows {
            let i = self.slot(row, flow);
            let b = &mut self.buckets[i];
            let flowlet_stale = b.is_older_than(now, fgap);
            if b.is_older_than(now, mgap) {
                b.counter = amount;
                b.queue_id = UNSET;
            } else {
                b.counter += amount;
            }
            b.set_queue(Some(merge_queue(b.queue(), queue, flowlet_stale, kind)));
            b.timestamp = now;
        }
    }

    /// Writes the bucket array row-major, one `timestamp counter queue_id`
    /// line per bucket after a `# scm rows=<d> width=<l>` header. An unset
    /// queue ID is written as `-`.
    pub fn dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# scm rows={} width={}", self.cfg.rows, self.cfg.width)?;
        for b in &self.buckets {
            match b.queue() {
                Some(q) => writeln!(out, "{} {} {}", b.timestamp, b.counter, q)?,
                None => writeln!(out, "{} {} -", b.timestamp, b.counter)?,
            }
        }
        Ok(())
    }
}

fn merge_queue(recorded: Option<usize>, chosen: usize, stale: bool, kind: PdaKind) -> usize {
    match recorded {
        None => chosen,
        Some(_) if stale => chosen,
        Some(r) => match kind {
            PdaKind::PriorityOrdered => r.max(chosen),
            PdaKind::Fair => r,
        },
    }
}
