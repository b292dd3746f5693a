//! Evaluation metrics computed from flow and packet records.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::sim::{FlowRecord, PacketRecord};

/// Flow size classes for FCT breakdowns: small is strictly below
/// `small_below`, large strictly above `large_above`, medium in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeBuckets {
    pub small_below: u64,
    pub large_above: u64,
}

impl SizeBuckets {
    pub const DEFAULT: SizeBuckets = SizeBuckets {
        small_below: 1_000,
        large_above: 10_000,
    };
    /// For distributions without any flow under 1 KB.
    pub const WEB_SEARCH: SizeBuckets = SizeBuckets {
        small_below: 10_000,
        large_above: 100_000,
    };

    /// Under 1 KB / up to 10 KB / above, shifted a decade up when no flow
    /// is smaller than 1 KB.
    pub fn for_min_size(min_size: u64) -> Self {
        if min_size >= 1_000 {
            SizeBuckets::WEB_SEARCH
        } else {
            SizeBuckets::DEFAULT
        }
    }

    pub fn classify(&self, size: u64) -> SizeClass {
        if size < self.small_below {
            SizeClass::Small
        } else if size > self.large_above {
            SizeClass::Large
        } else {
            SizeClass::Medium
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeClass {
    Small,
    Medium,
    Large,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FctSummary {
    pub count: usize,
    pub mean: Option<f64>,
    pub p99: Option<f64>,
}

impl FctSummary {
    pub fn of(fcts: &mut [f64]) -> Self {
        if fcts.is_empty() {
            return FctSummary::default();
        }
        fcts.sort_by(f64::total_cmp);
        FctSummary {
            count: fcts.len(),
            mean: Some(fcts.iter().sum::<f64>() / fcts.len() as f64),
            p99: Some(nearest_rank(fcts, 0.99)),
        }
    }
}

/// Nearest-rank percentile of sorted, nonempty data: the value at 1-based
/// rank `ceil(q * n)`.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FctStats {
    pub overall: FctSummary,
    pub small: FctSummary,
    pub medium: FctSummary,
    pub large: FctSummary,
}

/// FCT mean and p99 over completed flows, overall and per size class.
pub fn fct_stats(flows: &[FlowRecord], buckets: SizeBuckets) -> FctStats {
    let mut all = Vec::new();
    let (mut small, mut medium, mut large) = (Vec::new(), Vec::new(), Vec::new());
    for f in flows {
        let Some(fct) = f.fct else { continue };
        all.push(fct);
        match buckets.classify(f.size) {
            SizeClass::Small => small.push(fct),
            SizeClass::Medium => medium.push(fct),
            SizeClass::Large => large.push(fct),
        }
    }
    FctStats {
        overall: FctSummary::of(&mut all),
        small: FctSummary::of(&mut small),
        medium: FctSummary::of(&mut medium),
        large: FctSummary::of(&mut large),
    }
}

/// Jain's fairness index `(sum x)^2 / (n * sum x^2)`.
pub fn jain_index(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::JainUndefined("no groups"));
    }
    if xs.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::JainUndefined("negative or non-finite throughput"));
    }
    let sum: f64 = xs.iter().sum();
    if sum == 0.0 {
        return Err(Error::JainUndefined("all throughputs are zero"));
    }
    let sq: f64 = xs.iter().map(|x| x * x).sum();
    Ok(sum * sum / (xs.len() as f64 * sq))
}

/// Average throughput (bytes/s) of completed flows grouped by
/// `floor(log10(size))`, keyed by that exponent.
pub fn throughput_groups(flows: &[FlowRecord]) -> BTreeMap<u32, f64> {
    let mut acc: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for f in flows {
        if let Some(tp) = f.throughput() {
            let e = acc.entry(f.size.ilog10()).or_default();
            e.0 += tp;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Jain's index over the per-order-of-magnitude throughput groups.
pub fn fairness(flows: &[FlowRecord]) -> Result<f64> {
    let groups: Vec<f64> = throughput_groups(flows).into_values().collect();
    jain_index(&groups)
}

/// Fraction of deadline flows that met their deadline; `None` without any.
pub fn app_throughput(flows: &[FlowRecord]) -> Option<f64> {
    let (met, total) = flows
        .iter()
        .filter_map(|f| f.met)
        .fold((0usize, 0usize), |(m, t), ok| (m + ok as usize, t + 1));
    (total > 0).then(|| met as f64 / total as f64)
}

/// Disorder events per flow, recomputed from a packet trace. A delivered
/// packet is out of order when a higher sequence number of its flow left
/// before it. Drops leave gaps but never count.
pub fn disorder_count(packets: &[PacketRecord]) -> (BTreeMap<u64, u64>, u64) {
    let mut delivered: Vec<&PacketRecord> = packets.iter().filter(|p| p.departure.is_some()).collect();
    // departures are distinct on a single port
    delivered.sort_by(|a, b| a.departure.unwrap().total_cmp(&b.departure.unwrap()));
    let mut max_seq: BTreeMap<u64, u32> = BTreeMap::new();
    let mut per_flow: BTreeMap<u64, u64> = BTreeMap::new();
    let mut total = 0;
    for p in delivered {
        match max_seq.get_mut(&p.flow_id) {
            Some(m) if p.seq < *m => {
                *per_flow.entry(p.flow_id).or_default() += 1;
                total += 1;
            }
            Some(m) => *m = p.seq,
            None => {
                max_seq.insert(p.flow_id, p.seq);
            }
        }
    }
    (per_flow, total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub flows: usize,
    pub completed: usize,
    pub fct: FctStats,
    pub jain: Option<f64>,
    pub app_throughput: Option<f64>,
    pub disorder: u64,
}

impl MetricsReport {
    pub fn from_flows(flows: &[FlowRecord], buckets: SizeBuckets) -> Self {
        MetricsReport {
            flows: flows.len(),
            completed: flows.iter().filter(|f| f.completed()).count(),
            fct: fct_stats(flows, buckets),
            jain: fairness(flows).ok(),
            app_throughput: app_throughput(flows),
            disorder: flows.iter().map(|f| f.disorder_count).sum(),
        }
    }

    pub const CSV_HEADER: &'static str = "flows,completed,mean_fct,p99_fct,\
small_mean_fct,small_p99_fct,medium_mean_fct,medium_p99_fct,\
large_mean_fct,large_p99_fct,jain,app_throughput,disorder";

    /// Values in [`Self::CSV_HEADER`] order; absent values are empty.
    pub fn csv_fields(&self) -> Vec<String> {
        let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let f = &self.fct;
        vec![
            self.flows.to_string(),
            self.completed.to_string(),
            o(f.overall.mean),
            o(f.overall.p99),
            o(f.small.mean),
            o(f.small.p99),
            o(f.medium.mean),
            o(f.medium.p99),
            o(f.large.mean),
            o(f.large.p99),
            o(self.jain),
            o(self.app_throughput),
            self.disorder.to_string(),
        ]
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        writeln!(out, "{}", self.csv_fields().join(","))?;
        Ok(())
    }
}

/// Fixed-width text table, one row per labelled report, FCTs in
/// microseconds.
pub fn summary_table(rows: &[(String, MetricsReport)]) -> String {
    let us = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", x * 1e6));
    let plain = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(4);
    let mut s = format!(
        "{:<width$} {:>9} {:>10} {:>10} {:>10} {:>10} {:>10} {:>7} {:>7} {:>8}\n",
        "cell", "done", "mean_us", "p99_us", "small_us", "med_us", "large_us", "jain", "app_tp", "disorder"
    );
    for (label, r) in rows {
        s += &format!(
            "{:<width$} {:>9} {:>10} {:>10} {:>10} {:>10} {:>10} {:>7} {:>7} {:>8}\n",
            label,
            format!("{}/{}", r.completed, r.flows),
            us(r.fct.overall.mean),
            us(r.fct.overall.p99),
            us(r.fct.small.mean),
            us(r.fct.medium.mean),
            us(r.fct.large.mean),
            plain(r.jain),
            plain(r.app_throughput),
            r.disorder
        );
    }
    s
}
