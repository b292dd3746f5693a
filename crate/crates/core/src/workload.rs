//! Flow generation: empirical size distributions, Poisson arrivals and
//! deadlines.
//!
//! Size distributions are plain text, one `size_bytes<TAB>cum_prob` pair per
//! line (any whitespace works), `#` starts a comment. Sizes and
//! probabilities must both strictly increase and the last probability must
//! be 1. Mass below the first probability sits on the first size.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::SizeBuckets;
use crate::sim::PortConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub id: u64,
    pub start: f64,
    pub size: u64,
    pub deadline: Option<f64>,
}

const BUILTIN: &[(&str, &str)] = &[
    ("websearch", include_str!("../data/websearch.cdf")),
    ("datamining", include_str!("../data/datamining.cdf")),
    ("hadoop", include_str!("../data/hadoop.cdf")),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SizeCdf {
    name: String,
    points: Vec<(f64, f64)>,
}

impl SizeCdf {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidCdf("no breakpoints".into()));
        }
        for w in points.windows(2) {
            if !(w[0].0 < w[1].0) {
                return Err(Error::InvalidCdf(format!(
                    "sizes must strictly increase ({} then {})",
                    w[0].0, w[1].0
                )));
            }
            if !(w[0].1 < w[1].1) {
                return Err(Error::InvalidCdf(format!(
                    "probabilities must strictly increase ({} then {})",
                    w[0].1, w[1].1
                )));
            }
        }
        let (first_size, first_p) = points[0];
        if !(first_size >= 1.0) || !(first_p > 0.0) {
            return Err(Error::InvalidCdf(
                "sizes must be at least one byte and probabilities positive".into(),
            ));
        }
        if points.last().unwrap().1 != 1.0 {
            return Err(Error::InvalidCdf("last probability must be 1.0".into()));
        }
        Ok(SizeCdf {
            name: name.into(),
            points,
        })
    }

    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Parse {
                line: i as u64 + 1,
                message: format!("expected `size<TAB>cum_prob`, found {raw:?}"),
            };
            let mut it = line.split_whitespace();
            let size: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let prob: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            if it.next().is_some() {
                return Err(bad());
            }
            points.push((size, prob));
        }
        SizeCdf::new(name, points)
    }

    pub fn builtin(name: &str) -> Option<Self> {
        BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(n, text)| SizeCdf::parse(*n, text).expect("builtin CDF is valid"))
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    /// A builtin name or a path to a CDF file.
    pub fn load(spec: &str) -> Result<Self> {
        if let Some(cdf) = SizeCdf::builtin(spec) {
            return Ok(cdf);
        }
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidCdf(format!("{spec:?} is neither a builtin nor a readable file: {e}"))
        })?;
        let name = path
            .file_stem()
            .map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
        SizeCdf::parse(name, &text)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn min_size(&self) -> f64 {
        self.points[0].0
    }

    /// Mean under linear interpolation between breakpoints.
    pub fn mean(&self) -> f64 {
        let (s0, p0) = self.points[0];
        let mut m = s0 * p0;
        for w in self.points.windows(2) {
            let ((sa, pa), (sb, pb)) = (w[0], w[1]);
            m += (pb - pa) * (sa + sb) / 2.0;
        }
        m
    }

    /// Inverse CDF with linear interpolation; `u` below the first
    /// probability maps to the smallest size.
    pub fn quantile(&self, u: f64) -> f64 {
        let (s0, p0) = self.points[0];
        if u < p0 {
            return s0;
        }
        let i = self.points.partition_point(|&(_, p)| p <= u);
        if i >= self.points.len() {
            return self.points.last().unwrap().0;
        }
        let ((sa, pa), (sb, pb)) = (self.points[i - 1], self.points[i]);
        sa + (sb - sa) * (u - pa) / (pb - pa)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        (self.quantile(rng.random::<f64>()).round() as u64).max(1)
    }

    pub fn buckets(&self) -> SizeBuckets {
        SizeBuckets::for_min_size(self.min_size() as u64)
    }
}

/// Flows per second that offer `load` of `line_rate` with the given mean size.
pub fn arrival_rate(load: f64, mean_size: f64, line_rate: f64) -> f64 {
    load * line_rate / (8.0 * mean_size)
}

/// Poisson flow start times.
pub struct Arrivals<'a, R: Rng + ?Sized> {
    rng: &'a mut R,
    gap: Exp<f64>,
    now: f64,
}

impl<R: Rng + ?Sized> Iterator for Arrivals<'_, R> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        self.now += self.gap.sample(self.rng);
        Some(self.now)
    }
}

pub fn arrivals<R: Rng + ?Sized>(
    load: f64,
    mean_size: f64,
    line_rate: f64,
    rng: &mut R,
) -> Result<Arrivals<'_, R>> {
    if !(load > 0.0 && load < 1.0) {
        return Err(Error::config(format!("load must lie in (0, 1), got {load}")));
    }
    let rate = arrival_rate(load, mean_size, line_rate);
    let gap = Exp::new(rate).map_err(|e| Error::config(format!("arrival rate {rate}: {e}")))?;
    Ok(Arrivals {
        rng,
        gap,
        now: 0.0,
    })
}

/// `count` flows with Poisson starts and sizes drawn from `cdf`.
pub fn generate<R: Rng + ?Sized>(
    cdf: &SizeCdf,
    load: f64,
    line_rate: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<FlowSpec>> {
    let mut starts = Vec::with_capacity(count);
    starts.extend(arrivals(load, cdf.mean(), line_rate, rng)?.take(count));
    Ok(starts
        .into_iter()
        .enumerate()
        .map(|(i, start)| FlowSpec {
            id: i as u64,
            start,
            size: cdf.sample(rng),
            deadline: None,
        })
        .collect())
}

/// Flows at or above this size never get a deadline.
pub const DEADLINE_SIZE_LIMIT: u64 = 100_000;

/// Gives every flow below 100 KB a deadline of `start + base * (1 + X)`
/// where `base` is its unloaded FCT and `X ~ Exp(mean = slack_mean)`.
pub fn assign_deadlines<R: Rng + ?Sized>(
    flows: &mut [FlowSpec],
    port: &PortConfig,
    slack_mean: f64,
    rng: &mut R,
) -> Result<()> {
    let slack = Exp::new(1.0 / slack_mean)
        .map_err(|e| Error::config(format!("slack mean {slack_mean}: {e}")))?;
    for f in flows.iter_mut() {
        f.deadline = if f.size < DEADLINE_SIZE_LIMIT {
            let base = port.unloaded_fct(f.size);
            Some(f.start + base * (1.0 + slack.sample(rng)))
        } else {
            None
        };
    }
    Ok(())
}

pub fn write_schedule_csv<W: Write>(flows: &[FlowSpec], out: W) -> Result<()> {
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "flow_id,start,size,deadline")?;
    for f in flows {
        let dl = f.deadline.map(|d| d.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{}", f.id, f.start, f.size, dl)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_schedule_csv<R: Read>(input: R) -> Result<Vec<FlowSpec>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(input);
    let header = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != "flow_id,start,size,deadline" {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected schedule header {header:?}"),
        });
    }
    let mut flows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |i: usize, name: &str| -> Result<&str> {
            rec.get(i).map(str::trim).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing {name}"),
            })
        };
        let bad = |name: &str, v: &str| Error::Parse {
            line,
            message: format!("bad {name} {v:?}"),
        };
        let id = get(0, "flow_id")?;
        let start = get(1, "start")?;
        let size = get(2, "size")?;
        let deadline = rec.get(3).map(str::trim).unwrap_or("");
        flows.push(FlowSpec {
            id: id.parse().map_err(|_| bad("flow_id", id))?,
            start: start.parse().map_err(|_| bad("start", start))?,
            size: size.parse().map_err(|_| bad("size", size))?,
            deadline: if deadline.is_empty() {
                None
            } else {
                Some(deadline.parse().map_err(|_| bad("deadline", deadline))?)
            },
        });
    }
    Ok(flows)
}
