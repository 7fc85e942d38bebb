//! Domain types shared by every stage of the pipeline.

use std::fmt;
use std::net::Ipv4Addr;

use ipnet::Ipv4Net;
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Autonomous system number.
pub type Asn = u32;

/// Sentinel standing in for an IP address that maps to no known AS.
pub const UNKNOWN_AS: Asn = 0;

/// Unix epoch seconds, UTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const fn new(seconds: u64) -> Self {
        Self(seconds)
    }

    pub const fn seconds(self) -> u64 {
        self.0
    }

    /// Shift by a signed number of seconds, failing if the result falls before the epoch.
    pub fn checked_shift(self, shift: i64) -> Option<Self> {
        self.0.checked_add_signed(shift).map(Self)
    }

    /// Absolute distance in seconds.
    pub fn abs_diff(self, other: Self) -> u64 {
        self.0.abs_diff(other.0)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Anything carrying a timestamp, so window clipping works on every record kind.
pub trait Timestamped {
    fn timestamp(&self) -> Timestamp;
}

/// One periodic ping result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RttMeasurement {
    pub probe_id: String,
    pub target: Ipv4Addr,
    pub timestamp: Timestamp,
    /// Up to three RTT values in milliseconds.
    pub rtts: Vec<f64>,
    pub responded_ip: Option<Ipv4Addr>,
}

impl RttMeasurement {
    /// Checks the record-level invariants: at most 3 values, each finite and positive.
    pub fn check(&self) -> Result<(), Error> {
        if self.rtts.len() > 3 {
            return Err(Error::invalid(format!(
                "measurement at {} has {} rtt values (max 3)",
                self.timestamp,
                self.rtts.len()
            )));
        }
        if let Some(bad) = self.rtts.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(format!(
                "measurement at {} has invalid rtt value {bad}",
                self.timestamp
            )));
        }
        Ok(())
    }
}

impl Timestamped for RttMeasurement {
    fn timestamp(&self) -> Timestamp {
        self.timestamp
    }
}

/// Minimum RTT retained from one measurement, possibly time-shifted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RttSample {
    pub timestamp: Timestamp,
    pub value: f64,
}

impl Timestamped for RttSample {
    fn timestamp(&self) -> Timestamp {
        self.timestamp
    }
}

/// One routing change seen by a collector peer. An empty AS path is a withdrawal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BgpUpdate {
    pub cp_id: String,
    pub prefix: Ipv4Net,
    pub timestamp: Timestamp,
    pub as_path: Vec<Asn>,
}

impl BgpUpdate {
    pub fn is_withdrawal(&self) -> bool {
        self.as_path.is_empty()
    }

    pub fn check(&self) -> Result<(), Error> {
        if self.as_path.contains(&0) {
            return Err(Error::invalid(format!(
                "update at {} carries AS 0 in its path",
                self.timestamp
            )));
        }
        Ok(())
    }
}

impl Timestamped for BgpUpdate {
    fn timestamp(&self) -> Timestamp {
        self.timestamp
    }
}

/// Element-wise AS path comparison; two withdrawals compare equal.
pub fn as_path_equal(a: &[Asn], b: &[Asn]) -> bool {
    a == b
}

/// A persistent shift of the RTT mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Changepoint {
    /// Timestamp of the first sample of the new regime.
    pub timestamp: Timestamp,
    /// Position of that sample in the series; always at least 1.
    pub index: usize,
    pub mean_before: f64,
    pub mean_after: f64,
}

impl Timestamped for Changepoint {
    fn timestamp(&self) -> Timestamp {
        self.timestamp
    }
}

/// A single traceroute hop: an address, or `None` for a hop that did not answer.
pub type Hop = Option<Ipv4Addr>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracerouteMeasurement {
    pub probe_id: String,
    pub target: Ipv4Addr,
    pub timestamp: Timestamp,
    pub hops: Vec<Hop>,
}

impl Timestamped for TracerouteMeasurement {
    fn timestamp(&self) -> Timestamp {
        self.timestamp
    }
}

/// AS-level path derived from a traceroute.
///
/// Built by [`crate::validate::map_ip_to_as`], which guarantees no two
/// consecutive entries are equal and no IXP AS survives.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AsSequence(pub Vec<Asn>);

impl AsSequence {
    pub fn as_slice(&self) -> &[Asn] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn has_consecutive_duplicates(&self) -> bool {
        self.0.windows(2).any(|w| w[0] == w[1])
    }
}

/// One valid update and whether an RTT changepoint fell in its matching window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchEntry {
    /// Position of the update in the collector peer's (windowed) update sequence.
    pub ordinal: usize,
    pub update: BgpUpdate,
    pub matched: bool,
    pub matched_changepoints: Vec<Changepoint>,
}

/// Outcome of matching one probe/collector-peer pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub probe_id: String,
    pub cp_id: String,
    pub target: Ipv4Addr,
    pub prefix: Ipv4Net,
    pub entries: Vec<MatchEntry>,
    pub correlation_factor: f64,
    /// Set when there were no valid updates; the factor is then 0.
    pub insufficient_data: bool,
}

impl MatchReport {
    /// Builds a report and derives the factor from the entries.
    pub fn new(
        probe_id: impl Into<String>,
        cp_id: impl Into<String>,
        target: Ipv4Addr,
        prefix: Ipv4Net,
        entries: Vec<MatchEntry>,
    ) -> Self {
        let matched = entries.iter().filter(|e| e.matched).count();
        let insufficient_data = entries.is_empty();
        let correlation_factor = if insufficient_data {
            0.0
        } else {
            matched as f64 / entries.len() as f64
        };
        Self {
            probe_id: probe_id.into(),
            cp_id: cp_id.into(),
            target,
            prefix,
            entries,
            correlation_factor,
            insufficient_data,
        }
    }

    pub fn matched_count(&self) -> usize {
        self.entries.iter().filter(|e| e.matched).count()
    }
}

/// Tunable parameters of the correlation workflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Inclusive analysis window; `None` means unbounded.
    pub window_start: Option<Timestamp>,
    pub window_end: Option<Timestamp>,
    /// Seconds added to RTT and traceroute timestamps.
    pub time_shift: i64,
    pub elbow_slope_threshold: f64,
    /// Tolerance window width in seconds.
    pub tolerance_window: u64,
    /// `c1` in the penalty schedule `c1^i + c2`.
    pub penalty_base: f64,
    /// `c2` in the penalty schedule `c1^i + c2`.
    pub penalty_offset: f64,
    /// Penalty used at iteration 0.
    pub initial_penalty: f64,
    /// Nominal spacing of RTT measurements in seconds.
    pub rtt_period: u64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            window_start: None,
            window_end: None,
            time_shift: 0,
            elbow_slope_threshold: 10_000.0,
            tolerance_window: 960,
            penalty_base: 2.0,
            penalty_offset: 0.0,
            initial_penalty: 0.5,
            rtt_period: 240,
        }
    }
}

impl Params {
    pub fn window(&self) -> (Timestamp, Timestamp) {
        (
            self.window_start.unwrap_or(Timestamp(0)),
            self.window_end.unwrap_or(Timestamp(u64::MAX)),
        )
    }

    pub fn validate(&self) -> Result<(), Error> {
        let (start, end) = self.window();
        if start > end {
            return Err(Error::params(format!("time window start {start} is after end {end}")));
        }
        if !(self.elbow_slope_threshold.is_finite() && self.elbow_slope_threshold > 0.0) {
            return Err(Error::params("elbow slope threshold must be a positive number"));
        }
        if !(self.penalty_base.is_finite() && self.penalty_base > 1.0) {
            return Err(Error::params("penalty base c1 must be greater than 1"));
        }
        if !self.penalty_offset.is_finite() {
            return Err(Error::params("penalty offset c2 must be finite"));
        }
        if !(self.initial_penalty.is_finite() && self.initial_penalty > 0.0) {
            return Err(Error::params("initial penalty must be positive"));
        }
        if self.penalty_base + self.penalty_offset <= self.initial_penalty {
            return Err(Error::params(format!(
                "first scheduled penalty c1 + c2 = {} must exceed the initial penalty {}",
                self.penalty_base + self.penalty_offset,
                self.initial_penalty
            )));
        }
        if self.rtt_period == 0 {
            return Err(Error::params("rtt period must be positive"));
        }
        if self.tolerance_window <= self.rtt_period {
            return Err(Error::params(format!(
                "tolerance window ({} s) must exceed the rtt period ({} s)",
                self.tolerance_window, self.rtt_period
            )));
        }
        Ok(())
    }
}

/// `(m_prev, u_prev, m_cur, u_cur)` around one valid update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadruple {
    pub m_prev: AsSequence,
    pub u_prev: BgpUpdate,
    pub m_cur: AsSequence,
    pub u_cur: BgpUpdate,
    /// Ordinal of `u_cur` in the collector peer's update sequence.
    pub ordinal: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn as_path_comparison() {
        assert!(as_path_equal(&[3333, 1103], &[3333, 1103]));
        assert!(!as_path_equal(&[3333, 1103], &[3333, 286, 1103]));
        assert!(as_path_equal(&[], &[]));
        assert!(!as_path_equal(&[], &[3333]));
    }

    #[test]
    fn shift_below_epoch_fails() {
        assert_eq!(Timestamp(1000).checked_shift(-300), Some(Timestamp(700)));
        assert_eq!(Timestamp(10).checked_shift(-11), None);
    }

    #[test]
    fn factor_counts_matched_entries() {
        let prefix: Ipv4Net = "193.0.14.0/24".parse().unwrap();
        let entries = (0..10)
            .map(|i| MatchEntry {
                ordinal: i,
                update: BgpUpdate {
                    cp_id: "cp".into(),
                    prefix,
                    timestamp: Timestamp(i as u64),
                    as_path: vec![1],
                },
                matched: i < 3,
                matched_changepoints: vec![],
            })
            .collect();
        let r = MatchReport::new("p", "cp", Ipv4Addr::new(193, 0, 14, 129), prefix, entries);
        assert!((r.correlation_factor - 0.3).abs() < 1e-15);
        assert!(!r.insufficient_data);

        let empty = MatchReport::new("p", "cp", Ipv4Addr::LOCALHOST, prefix, vec![]);
        assert_eq!(empty.correlation_factor, 0.0);
        assert!(empty.insufficient_data);
    }

    #[test]
    fn params_reject_small_tolerance() {
        let p = Params { tolerance_window: 240, ..Params::default() };
        assert!(p.validate().is_err());
        assert!(Params::default().validate().is_ok());
        let p = Params { penalty_base: 1.0, ..Params::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn rtt_invariants() {
        let mut m = RttMeasurement {
            probe_id: "p".into(),
            target: Ipv4Addr::LOCALHOST,
            timestamp: Timestamp(0),
            rtts: vec![1.0, 2.0, 3.0],
            responded_ip: None,
        };
        assert!(m.check().is_ok());
        m.rtts.push(4.0);
        assert!(m.check().is_err());
        m.rtts = vec![-1.0];
        assert!(m.check().is_err());
    }
}
