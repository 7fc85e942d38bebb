//! Readers and writers for the newline-delimited input formats.
//!
//! Every record format is one JSON object per line:
//!
//! * RTT: `{"probe":"p1","target":"193.0.14.129","ts":1325376000,"rtts":[12.3,11.8,14.1],"ip":"193.0.14.129"}`
//! * BGP: `{"cp":"rrc00-3333","prefix":"193.0.14.0/24","ts":1325376000,"as_path":[3333,1103]}`
//! * Traceroute: `{"probe":"p1","target":"193.0.14.129","ts":1325376000,"hops":["10.0.0.1","*","193.0.14.129"]}`
//!
//! Blank lines are ignored. The prefix table is a CSV of
//! `prefix,asn,collector_count` rows (header optional) and the IXP list
//! holds one ASN per line, with `#` comments allowed.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use ipnet::Ipv4Net;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    Asn, BgpUpdate, Hop, RttMeasurement, Timestamp, Timestamped, TracerouteMeasurement,
};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RttRecord {
    probe: String,
    target: Ipv4Addr,
    ts: u64,
    rtts: Vec<f64>,
    #[serde(default)]
    ip: Option<Ipv4Addr>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BgpRecord {
    cp: String,
    prefix: Ipv4Net,
    ts: u64,
    as_path: Vec<Asn>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TracerouteRecord {
    probe: String,
    target: Ipv4Addr,
    ts: u64,
    hops: Vec<String>,
}

/// One row of the prefix-origin table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixOrigin {
    pub prefix: Ipv4Net,
    pub asn: Asn,
    pub collector_count: u32,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Parses each non-blank line as `R`, reporting the first bad line.
fn parse_lines<R, T>(reader: impl BufRead, origin: &Path, mut convert: impl FnMut(R) -> Result<T, String>) -> Result<Vec<T>>
where
    R: DeserializeOwned,
{
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fail = |message: String| Error::Format { path: origin.to_path_buf(), line: i + 1, message };
        let record: R = serde_json::from_str(trimmed).map_err(|e| fail(e.to_string()))?;
        out.push(convert(record).map_err(fail)?);
    }
    Ok(out)
}

pub fn parse_rtt(reader: impl BufRead, origin: &Path) -> Result<Vec<RttMeasurement>> {
    let mut out = parse_lines(reader, origin, |r: RttRecord| {
        let m = RttMeasurement {
            probe_id: r.probe,
            target: r.target,
            timestamp: Timestamp(r.ts),
            rtts: r.rtts,
            responded_ip: r.ip,
        };
        m.check().map_err(|e| e.to_string())?;
        Ok(m)
    })?;
    out.sort_by_key(|m| m.timestamp);
    Ok(out)
}

pub fn read_rtt(path: impl AsRef<Path>) -> Result<Vec<RttMeasurement>> {
    let path = path.as_ref();
    parse_rtt(open(path)?, path)
}

/// Parses BGP updates. Timestamps must be nondecreasing within each collector peer.
pub fn parse_bgp(reader: impl BufRead, origin: &Path) -> Result<Vec<BgpUpdate>> {
    let mut last_seen: HashMap<String, u64> = HashMap::new();
    let mut line_no = 0usize;
    let mut out = Vec::new();
    for line in reader.lines() {
        line_no += 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fail = |message: String| Error::Format { path: origin.to_path_buf(), line: line_no, message };
        let r: BgpRecord = serde_json::from_str(trimmed).map_err(|e| fail(e.to_string()))?;
        if let Some(&prev) = last_seen.get(&r.cp) {
            if r.ts < prev {
                return Err(fail(format!(
                    "timestamp {} for collector peer {} precedes earlier record at {prev}",
                    r.ts, r.cp
                )));
            }
        }
        last_seen.insert(r.cp.clone(), r.ts);
        let update = BgpUpdate {
            cp_id: r.cp,
            prefix: r.prefix,
            timestamp: Timestamp(r.ts),
            as_path: r.as_path,
        };
        update.check().map_err(|e| fail(e.to_string()))?;
        out.push(update);
    }
    Ok(out)
}

pub fn read_bgp(path: impl AsRef<Path>) -> Result<Vec<BgpUpdate>> {
    let path = path.as_ref();
    parse_bgp(open(path)?, path)
}

pub fn parse_traceroute(reader: impl BufRead, origin: &Path) -> Result<Vec<TracerouteMeasurement>> {
    let mut out = parse_lines(reader, origin, |r: TracerouteRecord| {
        let hops = r
            .hops
            .iter()
            .map(|h| match h.as_str() {
                "*" => Ok(None),
                s => s.parse::<Ipv4Addr>().map(Some).map_err(|_| format!("malformed hop address {s:?}")),
            })
            .collect::<Result<Vec<Hop>, String>>()?;
        Ok(TracerouteMeasurement { probe_id: r.probe, target: r.target, timestamp: Timestamp(r.ts), hops })
    })?;
    out.sort_by_key(|t| t.timestamp);
    Ok(out)
}

pub fn read_traceroute(path: impl AsRef<Path>) -> Result<Vec<TracerouteMeasurement>> {
    let path = path.as_ref();
    parse_traceroute(open(path)?, path)
}

pub fn parse_prefix_table(reader: impl Read, origin: &Path) -> Result<Vec<PrefixOrigin>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = row.position().map_or(i + 1, |p| p.line() as usize);
        let fail = |message: String| Error::Format { path: origin.to_path_buf(), line, message };
        if i == 0 && row.get(0) == Some("prefix") {
            continue;
        }
        if row.len() != 3 {
            return Err(fail(format!("expected 3 columns, found {}", row.len())));
        }
        let prefix = row[0].parse::<Ipv4Net>().map_err(|e| fail(format!("bad prefix {:?}: {e}", &row[0])))?;
        let asn = row[1].parse::<Asn>().map_err(|e| fail(format!("bad asn {:?}: {e}", &row[1])))?;
        let collector_count = row[2]
            .parse::<u32>()
            .map_err(|e| fail(format!("bad collector count {:?}: {e}", &row[2])))?;
        out.push(PrefixOrigin { prefix: prefix.trunc(), asn, collector_count });
    }
    Ok(out)
}

pub fn read_prefix_table(path: impl AsRef<Path>) -> Result<Vec<PrefixOrigin>> {
    let path = path.as_ref();
    parse_prefix_table(open(path)?, path)
}

pub fn parse_ixp_list(reader: impl BufRead, origin: &Path) -> Result<Vec<Asn>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let asn = body.trim_start_matches("AS").parse::<Asn>().map_err(|e| Error::Format {
            path: origin.to_path_buf(),
            line: i + 1,
            message: format!("bad asn {body:?}: {e}"),
        })?;
        out.push(asn);
    }
    Ok(out)
}

pub fn read_ixp_list(path: impl AsRef<Path>) -> Result<Vec<Asn>> {
    let path = path.as_ref();
    parse_ixp_list(open(path)?, path)
}

fn write_line<T: Serialize>(w: &mut impl Write, record: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, record)?;
    w.write_all(b"\n").map_err(|e| Error::io("<output>", e))
}

pub fn write_rtt(w: &mut impl Write, items: &[RttMeasurement]) -> Result<()> {
    for m in items {
        let r = RttRecord {
            probe: m.probe_id.clone(),
            target: m.target,
            ts: m.timestamp.0,
            rtts: m.rtts.clone(),
            ip: m.responded_ip,
        };
        write_line(w, &r)?;
    }
    Ok(())
}

pub fn write_bgp(w: &mut impl Write, items: &[BgpUpdate]) -> Result<()> {
    for u in items {
        let r = BgpRecord { cp: u.cp_id.clone(), prefix: u.prefix, ts: u.timestamp.0, as_path: u.as_path.clone() };
        write_line(w, &r)?;
    }
    Ok(())
}

pub fn write_traceroute(w: &mut impl Write, items: &[TracerouteMeasurement]) -> Result<()> {
    for t in items {
        let hops = t.hops.iter().map(|h| h.map_or_else(|| "*".to_string(), |ip| ip.to_string())).collect();
        let r = TracerouteRecord { probe: t.probe_id.clone(), target: t.target, ts: t.timestamp.0, hops };
        write_line(w, &r)?;
    }
    Ok(())
}

pub fn write_prefix_table(w: impl Write, rows: &[PrefixOrigin]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["prefix", "asn", "collector_count"])?;
    for r in rows {
        wtr.write_record([r.prefix.to_string(), r.asn.to_string(), r.collector_count.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io("<output>", e))
}

/// Items with `start <= t <= end`. The input must be sorted by timestamp,
/// so the result is a contiguous slice of it.
pub fn clip_window<T: Timestamped>(items: &[T], window: (Timestamp, Timestamp)) -> &[T] {
    let (start, end) = window;
    if start > end {
        return &items[..0];
    }
    let lo = items.partition_point(|x| x.timestamp() < start);
    let hi = items.partition_point(|x| x.timestamp() <= end);
    &items[lo..hi.max(lo)]
}
