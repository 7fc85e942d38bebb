//! Traceroute-based validation of BGP/RTT matches.
//!
//! Traceroutes are mapped to AS-level paths and compared across each valid
//! BGP update. An update counts as validated when both its AS path and the
//! surrounding traceroute AS paths changed.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::Ipv4Addr;

use ipnet::Ipv4Net;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::PrefixOrigin;
use crate::model::{
    as_path_equal, AsSequence, Asn, BgpUpdate, MatchReport, Quadruple, Timestamp, TracerouteMeasurement,
    UNKNOWN_AS,
};

/// Longest-prefix-match table of prefix origins, plus the context needed to
/// turn traceroute hops into AS numbers.
#[derive(Debug, Clone)]
pub struct PrefixTable {
    /// One map per prefix length, keyed by the masked network address.
    by_len: Vec<HashMap<u32, Asn>>,
    entries: Vec<(Ipv4Net, Asn)>,
    ixp_asns: BTreeSet<Asn>,
    probe_as: Asn,
}

impl PrefixTable {
    /// Builds the table, electing for each prefix the origin reported by the
    /// most collectors (lowest ASN on ties).
    pub fn new(rows: &[PrefixOrigin], ixp_asns: impl IntoIterator<Item = Asn>, probe_as: Asn) -> Self {
        let mut votes: BTreeMap<Ipv4Net, BTreeMap<Asn, u64>> = BTreeMap::new();
        for r in rows {
            *votes.entry(r.prefix.trunc()).or_default().entry(r.asn).or_default() += u64::from(r.collector_count);
        }
        let mut by_len = vec![HashMap::new(); 33];
        let mut entries = Vec::with_capacity(votes.len());
        for (prefix, counts) in votes {
            // BTreeMap iterates ASNs ascending, so max_by keeps the lowest on ties
            let (&asn, _) = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .expect("at least one vote");
            by_len[usize::from(prefix.prefix_len())].insert(u32::from(prefix.network()), asn);
            entries.push((prefix, asn));
        }
        Self { by_len, entries, ixp_asns: ixp_asns.into_iter().collect(), probe_as }
    }

    pub fn with_probe_as(mut self, probe_as: Asn) -> Self {
        self.probe_as = probe_as;
        self
    }

    pub fn probe_as(&self) -> Asn {
        self.probe_as
    }

    pub fn is_ixp(&self, asn: Asn) -> bool {
        self.ixp_asns.contains(&asn)
    }

    /// Elected `(prefix, origin)` pairs, ordered by prefix.
    pub fn entries(&self) -> &[(Ipv4Net, Asn)] {
        &self.entries
    }

    /// Most specific prefix containing `ip` and its elected origin.
    pub fn lookup(&self, ip: Ipv4Addr) -> Option<(Ipv4Net, Asn)> {
        let addr = u32::from(ip);
        (0..=32u8).rev().find_map(|len| {
            let mask = if len == 0 { 0 } else { u32::MAX << (32 - len) };
            let net = addr & mask;
            self.by_len[usize::from(len)]
                .get(&net)
                .map(|&asn| (Ipv4Net::new(Ipv4Addr::from(net), len).expect("len <= 32"), asn))
        })
    }

    pub fn origin_of(&self, ip: Ipv4Addr) -> Asn {
        self.lookup(ip).map_or(UNKNOWN_AS, |(_, asn)| asn)
    }
}

fn collapse(asns: &mut Vec<Asn>) {
    asns.dedup();
}

/// Maps a traceroute to its AS-level path.
///
/// Leading private hops belong to the probe's AS; other hops take the origin
/// of their most specific prefix, or [`UNKNOWN_AS`]. Unanswered hops are
/// unknown too. Consecutive repeats are then collapsed and IXP ASes removed.
pub fn map_ip_to_as(traceroute: &TracerouteMeasurement, table: &PrefixTable) -> AsSequence {
    let leading_private = traceroute.hops.iter().take_while(|h| h.is_some_and(|ip| ip.is_private())).count();
    let mut asns: Vec<Asn> = traceroute
        .hops
        .iter()
        .enumerate()
        .map(|(i, hop)| match hop {
            _ if i < leading_private => table.probe_as,
            Some(ip) => table.origin_of(*ip),
            None => UNKNOWN_AS,
        })
        .collect();
    collapse(&mut asns);
    asns.retain(|a| !table.is_ixp(*a));
    // stripping an IXP can leave its neighbours adjacent
    collapse(&mut asns);
    AsSequence(asns)
}

/// Shifts traceroute timestamps the same way RTT samples are aligned.
pub fn align_traceroutes(traceroutes: &[TracerouteMeasurement], shift: i64) -> Result<Vec<TracerouteMeasurement>> {
    let mut out = traceroutes
        .iter()
        .map(|t| {
            let timestamp = t
                .timestamp
                .checked_shift(shift)
                .ok_or(Error::NegativeTimestamp { timestamp: t.timestamp.0, shift })?;
            Ok(TracerouteMeasurement { timestamp, ..t.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|t| t.timestamp);
    Ok(out)
}

/// Builds `(m_prev, u_prev, m_cur, u_cur)` for every valid interior update
/// whose stability windows each hold at least one traceroute.
///
/// `updates` is the collector peer's full ordered sequence and `valid` its
/// preprocessing flags. Traceroutes are shifted by `shift` before windowing.
pub fn build_quadruples(
    updates: &[BgpUpdate],
    valid: &[bool],
    traceroutes: &[TracerouteMeasurement],
    table: &PrefixTable,
    shift: i64,
) -> Result<Vec<Quadruple>> {
    if updates.len() != valid.len() {
        return Err(Error::invalid(format!(
            "{} updates but {} validity flags",
            updates.len(),
            valid.len()
        )));
    }
    if updates.len() < 3 {
        return Ok(Vec::new());
    }
    let aligned = align_traceroutes(traceroutes, shift)?;
    let in_window = |lo: Timestamp, hi: Timestamp| {
        let a = aligned.partition_point(|t| t.timestamp < lo);
        let b = aligned.partition_point(|t| t.timestamp <= hi);
        &aligned[a..b.max(a)]
    };
    let mut out = Vec::new();
    for i in 1..updates.len() - 1 {
        if !valid[i] {
            continue;
        }
        let (prev, cur, next) = (&updates[i - 1], &updates[i], &updates[i + 1]);
        if prev.timestamp >= cur.timestamp {
            continue;
        }
        let before = in_window(prev.timestamp, cur.timestamp);
        let after = in_window(cur.timestamp, next.timestamp);
        let (Some(last_before), Some(first_after)) = (before.last(), after.first()) else {
            continue;
        };
        out.push(Quadruple {
            m_prev: map_ip_to_as(last_before, table),
            u_prev: prev.clone(),
            m_cur: map_ip_to_as(first_after, table),
            u_cur: cur.clone(),
            ordinal: i,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckedQuadruple {
    pub quadruple: Quadruple,
    /// `u_cur` was matched to an RTT changepoint.
    pub in_q_plus: bool,
    pub validated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub probe_id: String,
    pub cp_id: String,
    pub bgp_rtt_factor: f64,
    pub quadruples: Vec<CheckedQuadruple>,
    /// Validated share of Q+; `None` when Q+ is empty.
    pub bgp_traceroute_correlation: Option<f64>,
    /// Validated share of Q-; `None` when Q- is empty.
    pub bgp_traceroute_false_negative: Option<f64>,
    pub q_plus_size: usize,
    pub q_minus_size: usize,
}

/// True when both the AS path and the traceroute AS path changed across the quadruple.
pub fn is_validated(q: &Quadruple) -> bool {
    !as_path_equal(&q.u_prev.as_path, &q.u_cur.as_path) && q.m_prev != q.m_cur
}

/// Splits quadruples by whether the report matched their update and computes both factors.
pub fn validate_pair(quadruples: &[Quadruple], report: &MatchReport) -> ValidationReport {
    let matched: BTreeSet<usize> = report.entries.iter().filter(|e| e.matched).map(|e| e.ordinal).collect();
    let checked: Vec<CheckedQuadruple> = quadruples
        .iter()
        .map(|q| CheckedQuadruple {
            quadruple: q.clone(),
            in_q_plus: matched.contains(&q.ordinal),
            validated: is_validated(q),
        })
        .collect();
    let ratio = |plus: bool| {
        let (n, hits) = checked
            .iter()
            .filter(|c| c.in_q_plus == plus)
            .fold((0usize, 0usize), |(n, h), c| (n + 1, h + usize::from(c.validated)));
        (n, (n > 0).then(|| hits as f64 / n as f64))
    };
    let (q_plus_size, corr) = ratio(true);
    let (q_minus_size, fneg) = ratio(false);
    ValidationReport {
        probe_id: report.probe_id.clone(),
        cp_id: report.cp_id.clone(),
        bgp_rtt_factor: report.correlation_factor,
        quadruples: checked,
        bgp_traceroute_correlation: corr,
        bgp_traceroute_false_negative: fneg,
        q_plus_size,
        q_minus_size,
    }
}
