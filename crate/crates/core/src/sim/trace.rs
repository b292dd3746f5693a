//! Per-packet and per-flow simulation records and their CSV form.
//!
//! Packet rows: `flow_id,seq,size,arrival,queue,departure,ecn_marked` with
//! `DROP` in the departure column (and `-` as queue) for dropped packets.
//! Flow rows: `flow_id,size,start,fct,deadline,met,disorder_count`; `fct` is
//! empty for flows that did not complete, `deadline` and `met` are empty for
//! flows without a deadline.

use std::io::{Read, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PacketRecord {
    pub flow_id: u64,
    pub seq: u32,
    pub size: u32,
    pub arrival: f64,
    /// Queue the packet was enqueued in; `None` when dropped at admission.
    pub queue: Option<usize>,
    /// Time the last bit left the port; `None` when dropped or still queued.
    pub departure: Option<f64>,
    pub ecn_marked: bool,
}

impl PacketRecord {
    pub fn is_dropped(&self) -> bool {
        self.queue.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub flow_id: u64,
    pub size: u64,
    pub start: f64,
    pub fct: Option<f64>,
    pub deadline: Option<f64>,
    pub met: Option<bool>,
    pub disorder_count: u64,
}

impl FlowRecord {
    pub fn completed(&self) -> bool {
        self.fct.is_some()
    }

    /// Average throughput in bytes per second.
    pub fn throughput(&self) -> Option<f64> {
        self.fct.filter(|&f| f > 0.0).map(|f| self.size as f64 / f)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub injected: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub ecn_marked: u64,
    /// Longest time any packet waited between arrival and start of transmission.
    pub max_queueing_delay: f64,
    /// Flowlet starts the scheduler declared while packets of the flow were
    /// still buffered.
    pub unsound_flowlet_starts: u64,
    pub end_time: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TraceLog {
    /// Packet rows in arrival order; empty unless packet recording was on.
    pub packets: Vec<PacketRecord>,
    pub flows: Vec<FlowRecord>,
    pub stats: RunStats,
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_packets_csv<W: Write>(packets: &[PacketRecord], out: W) -> Result<()> {
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "flow_id,seq,size,arrival,queue,departure,ecn_marked")?;
    for p in packets {
        let queue = p.queue.map_or_else(|| "-".to_string(), |q| q.to_string());
        let dep = match (p.queue, p.departure) {
            (None, _) => "DROP".to_string(),
            (Some(_), d) => opt_f64(d),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.flow_id, p.seq, p.size, p.arrival, queue, dep, p.ecn_marked as u8
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_flows_csv<W: Write>(flows: &[FlowRecord], out: W) -> Result<()> {
    let mut out = std::io::BufWriter::new(out);
    writeln!(out, "flow_id,size,start,fct,deadline,met,disorder_count")?;
    for f in flows {
        let met = f.met.map(|m| (m as u8).to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            f.flow_id,
            f.size,
            f.start,
            opt_f64(f.fct),
            opt_f64(f.deadline),
            met,
            f.disorder_count
        )?;
    }
    out.flush()?;
    Ok(())
}

fn parse_err(rec: &csv::StringRecord, msg: impl Into<String>) -> Error {
    Error::Parse {
        line: rec.position().map_or(0, |p| p.line()),
        message: msg.into(),
    }
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = rec
        .get(i)
        .ok_or_else(|| parse_err(rec, format!("missing column {name}")))?;
    raw.trim()
        .parse()
        .map_err(|_| parse_err(rec, format!("bad {name} {raw:?}")))
}

fn opt_field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    i: usize,
    name: &str,
) -> Result<Option<T>> {
    match rec.get(i).map(str::trim) {
        None | Some("") => Ok(None),
        Some(_) => field(rec, i, name).map(Some),
    }
}

fn reader<R: Read>(input: R, header: &str) -> Result<csv::Reader<R>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let got = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
    if got != header {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {header:?}, found {got:?}"),
        });
    }
    Ok(rdr)
}

pub fn read_flows_csv<R: Read>(input: R) -> Result<Vec<FlowRecord>> {
    let mut rdr = reader(input, "flow_id,size,start,fct,deadline,met,disorder_count")?;
    let mut flows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let met = match rec.get(5).map(str::trim) {
            None | Some("") => None,
            Some("1") => Some(true),
            Some("0") => Some(false),
            Some(other) => return Err(parse_err(&rec, format!("bad met {other:?}"))),
        };
        flows.push(FlowRecord {
            flow_id: field(&rec, 0, "flow_id")?,
            size: field(&rec, 1, "size")?,
            start: field(&rec, 2, "start")?,
            fct: opt_field(&rec, 3, "fct")?,
            deadline: opt_field(&rec, 4, "deadline")?,
            met,
            disorder_count: field(&rec, 6, "disorder_count")?,
        });
    }
    Ok(flows)
}

pub fn read_packets_csv<R: Read>(input: R) -> Result<Vec<PacketRecord>> {
    let mut rdr = reader(input, "flow_id,seq,size,arrival,queue,departure,ecn_marked")?;
    let mut packets = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let dropped = rec.get(5).map(str::trim) == Some("DROP");
        let queue = if dropped {
            None
        } else {
            Some(field(&rec, 4, "queue")?)
        };
        let departure = if dropped {
            None
        } else {
            opt_field(&rec, 5, "departure")?
        };
        packets.push(PacketRecord {
            flow_id: field(&rec, 0, "flow_id")?,
            seq: field(&rec, 1, "seq")?,
            size: field(&rec, 2, "size")?,
            arrival: field(&rec, 3, "arrival")?,
            queue,
            departure,
            ecn_marked: field::<u8>(&rec, 6, "ecn_marked")? != 0,
        });
    }
    Ok(packets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_rows_round_trip() {
        let flows = vec![
            FlowRecord {
                flow_id: 0,
                size: 1460,
                start: 0.1,
                fct: Some(2.4e-6),
                deadline: Some(0.100_01),
                met: Some(true),
                disorder_count: 0,
            },
            FlowRecord {
                flow_id: 1,
                size: 99,
                start: 1.0 / 3.0,
                fct: None,
                deadline: None,
                met: None,
                disorder_count: 2,
            },
        ];
        let mut buf = Vec::new();
        write_flows_csv(&flows, &mut buf).unwrap();
        assert_eq!(read_flows_csv(buf.as_slice()).unwrap(), flows);
    }

    #[test]
    fn packet_rows_mark_drops() {
        let packets = vec![
            PacketRecord {
                flow_id: 3,
                seq: 0,
                size: 1500,
                arrival: 1e-6,
                queue: Some(2),
                departure: Some(2.2e-6),
                ecn_marked: true,
            },
            PacketRecord {
                flow_id: 3,
                seq: 1,
                size: 1500,
                arrival: 2e-6,
                queue: None,
                departure: None,
                ecn_marked: false,
            },
        ];
        let mut buf = Vec::new();
        write_packets_csv(&packets, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(2).unwrap().ends_with(",-,DROP,0"));
        assert_eq!(read_packets_csv(buf.as_slice()).unwrap(), packets);
    }

    #[test]
    fn parse_error_carries_line() {
        let text = "flow_id,size,start,fct,deadline,met,disorder_count\n0,10,0,,,,0\n1,x,0,,,,0\n";
        match read_flows_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
