//! Per-pair correlation: RTT cleaning and alignment, BGP filtering, and matching.

use std::collections::{BTreeSet, HashMap};
use std::net::Ipv4Addr;
use std::path::Path;

use ipnet::Ipv4Net;
use serde::{Deserialize, Serialize};

use crate::changepoint::{to_changepoints, ElbowTrace, PenaltySchedule, Segmentation, Segmenter};
use crate::error::{Error, Result};
use crate::ingest::{self, clip_window};
use crate::model::{
    BgpUpdate, Changepoint, MatchEntry, MatchReport, Params, RttMeasurement, RttSample, Timestamp,
};

/// Identifies one probe / collector-peer / target / prefix combination.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKey {
    pub probe_id: String,
    pub cp_id: String,
    pub target: Ipv4Addr,
    pub prefix: Ipv4Net,
}

/// Keeps measurements with exactly three values that reached `expected_ip`,
/// reducing each to its minimum RTT.
pub fn preprocess_rtt(measurements: &[RttMeasurement], expected_ip: Ipv4Addr) -> Vec<RttSample> {
    measurements
        .iter()
        .filter(|m| m.rtts.len() == 3 && m.responded_ip == Some(expected_ip))
        .map(|m| RttSample {
            timestamp: m.timestamp,
            value: m.rtts.iter().copied().fold(f64::INFINITY, f64::min),
        })
        .collect()
}

/// Adds `shift` seconds to every sample timestamp.
pub fn time_align(samples: &[RttSample], shift: i64) -> Result<Vec<RttSample>> {
    samples
        .iter()
        .map(|s| {
            let timestamp = s
                .timestamp
                .checked_shift(shift)
                .ok_or(Error::NegativeTimestamp { timestamp: s.timestamp.0, shift })?;
            Ok(RttSample { timestamp, ..*s })
        })
        .collect()
}

/// Indices of the updates kept and dropped by [`preprocess_bgp`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BgpPartition {
    pub valid: Vec<usize>,
    pub invalid: Vec<usize>,
}

impl BgpPartition {
    pub fn flags(&self, len: usize) -> Vec<bool> {
        let mut flags = vec![false; len];
        for &i in &self.valid {
            flags[i] = true;
        }
        flags
    }
}

/// Keeps, for every gap `(s_k, s_{k+1}]` between consecutive samples no
/// longer than `tolerance`, only the last update inside it. Updates outside
/// the sampled span, or inside wider gaps, are dropped.
pub fn preprocess_bgp(updates: &[BgpUpdate], samples: &[RttSample], tolerance: u64) -> BgpPartition {
    let mut last_in_gap: HashMap<usize, usize> = HashMap::new();
    for (i, u) in updates.iter().enumerate() {
        let next = samples.partition_point(|s| s.timestamp < u.timestamp);
        if next == 0 || next == samples.len() {
            continue;
        }
        let gap = samples[next].timestamp.0 - samples[next - 1].timestamp.0;
        if gap > tolerance {
            continue;
        }
        last_in_gap
            .entry(next)
            .and_modify(|j| {
                if updates[*j].timestamp <= u.timestamp {
                    *j = i;
                }
            })
            .or_insert(i);
    }
    let mut valid: Vec<usize> = last_in_gap.into_values().collect();
    valid.sort_unstable();
    let keep: BTreeSet<usize> = valid.iter().copied().collect();
    let invalid = (0..updates.len()).filter(|i| !keep.contains(i)).collect();
    BgpPartition { valid, invalid }
}

/// Changepoints within `tolerance / 2` seconds of `t`. `changepoints` must be time-sorted.
pub fn changepoints_near(changepoints: &[Changepoint], t: Timestamp, tolerance: u64) -> &[Changepoint] {
    let half = tolerance / 2;
    let lo = t.0.saturating_sub(half);
    let hi = t.0.saturating_add(half);
    let a = changepoints.partition_point(|c| c.timestamp.0 < lo);
    let b = changepoints.partition_point(|c| c.timestamp.0 <= hi);
    &changepoints[a..b.max(a)]
}

/// Marks each valid update as matched when a changepoint falls in the
/// tolerance window centered on it.
///
/// `valid` yields `(ordinal, update)` pairs; the ordinal is carried into the report.
pub fn match_updates<'a>(
    key: &PairKey,
    valid: impl IntoIterator<Item = (usize, &'a BgpUpdate)>,
    changepoints: &[Changepoint],
    tolerance: u64,
) -> MatchReport {
    let entries = valid
        .into_iter()
        .map(|(ordinal, u)| {
            let near = changepoints_near(changepoints, u.timestamp, tolerance);
            MatchEntry { ordinal, update: u.clone(), matched: !near.is_empty(), matched_changepoints: near.to_vec() }
        })
        .collect();
    MatchReport::new(key.probe_id.clone(), key.cp_id.clone(), key.target, key.prefix, entries)
}

/// Preprocessed RTT samples of one probe toward one target, with cached segmentations.
#[derive(Debug, Clone)]
pub struct RttSeries {
    pub probe_id: String,
    pub target: Ipv4Addr,
    /// Unshifted samples within the time window.
    pub samples: Vec<RttSample>,
    segmenter: Option<Segmenter>,
}

/// Segmentation chosen for a series under one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub segmentation: Segmentation,
    pub trace: ElbowTrace,
}

impl RttSeries {
    /// `measurements` may hold other probes and targets; they are filtered out.
    pub fn prepare(measurements: &[RttMeasurement], probe_id: &str, target: Ipv4Addr, params: &Params) -> Result<Self> {
        let mine: Vec<RttMeasurement> = measurements
            .iter()
            .filter(|m| m.probe_id == probe_id && m.target == target)
            .cloned()
            .collect();
        let clipped = clip_window(&mine, params.window());
        let samples = preprocess_rtt(clipped, target);
        let values: Vec<f64> = samples.iter().map(|s| s.value).collect();
        let segmenter = if values.is_empty() { None } else { Some(Segmenter::new(&values)?) };
        Ok(Self { probe_id: probe_id.to_string(), target, samples, segmenter })
    }

    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.value).collect()
    }

    /// Elbow-selected segmentation; `None` for an empty series.
    pub fn select(&mut self, params: &Params) -> Result<Option<Selection>> {
        let Some(seg) = self.segmenter.as_mut() else {
            return Ok(None);
        };
        let (segmentation, trace) =
            seg.elbow(&PenaltySchedule::from_params(params), params.elbow_slope_threshold)?;
        Ok(Some(Selection { segmentation, trace }))
    }

    pub fn segment(&mut self, penalty: f64) -> Result<Option<Segmentation>> {
        match self.segmenter.as_mut() {
            Some(s) => Ok(Some(s.segment(penalty)?.clone())),
            None => Ok(None),
        }
    }
}

/// BGP updates of one collector peer for one prefix, within the time window.
pub fn select_updates(updates: &[BgpUpdate], cp_id: &str, prefix: Ipv4Net, params: &Params) -> Vec<BgpUpdate> {
    let mut mine: Vec<BgpUpdate> =
        updates.iter().filter(|u| u.cp_id == cp_id && u.prefix == prefix).cloned().collect();
    mine.sort_by_key(|u| u.timestamp);
    clip_window(&mine, params.window()).to_vec()
}

/// Everything computed for one pair, beyond the match report itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAnalysis {
    pub report: MatchReport,
    /// All windowed updates of the collector peer, in order; report ordinals index this.
    pub updates: Vec<BgpUpdate>,
    pub valid: Vec<bool>,
    /// Changepoints on the time-aligned samples.
    pub changepoints: Vec<Changepoint>,
    pub selection: Option<Selection>,
}

/// Runs alignment, preprocessing and matching for a series already segmented.
pub fn correlate(
    key: &PairKey,
    samples: &[RttSample],
    segmentation: Option<&Segmentation>,
    updates: &[BgpUpdate],
    params: &Params,
) -> Result<(MatchReport, Vec<bool>, Vec<Changepoint>)> {
    let aligned = time_align(samples, params.time_shift)?;
    let changepoints = match segmentation {
        Some(seg) => to_changepoints(&aligned, seg)?,
        None => Vec::new(),
    };
    let partition = preprocess_bgp(updates, &aligned, params.tolerance_window);
    let report = match_updates(
        key,
        partition.valid.iter().map(|&i| (i, &updates[i])),
        &changepoints,
        params.tolerance_window,
    );
    Ok((report, partition.flags(updates.len()), changepoints))
}

/// Full workflow for one pair over in-memory records.
pub fn analyze_pair(
    measurements: &[RttMeasurement],
    updates: &[BgpUpdate],
    key: &PairKey,
    params: &Params,
) -> Result<PairAnalysis> {
    params.validate()?;
    let mut series = RttSeries::prepare(measurements, &key.probe_id, key.target, params)?;
    analyze_series(&mut series, updates, key, params)
}

/// As [`analyze_pair`], reusing a prepared series and its segmentation cache.
pub fn analyze_series(
    series: &mut RttSeries,
    updates: &[BgpUpdate],
    key: &PairKey,
    params: &Params,
) -> Result<PairAnalysis> {
    let selection = series.select(params)?;
    let mine = select_updates(updates, &key.cp_id, key.prefix, params);
    let (report, valid, changepoints) =
        correlate(key, &series.samples, selection.as_ref().map(|s| &s.segmentation), &mine, params)?;
    Ok(PairAnalysis { report, updates: mine, valid, changepoints, selection })
}

/// Reads both files and correlates the requested pair.
pub fn run_pair(rtt_file: impl AsRef<Path>, bgp_file: impl AsRef<Path>, key: &PairKey, params: &Params) -> Result<MatchReport> {
    let rtt = ingest::read_rtt(rtt_file)?;
    let bgp = ingest::read_bgp(bgp_file)?;
    Ok(analyze_pair(&rtt, &bgp, key, params)?.report)
}

/// Probe ids with measurements toward `target`, sorted.
pub fn probes_for(measurements: &[RttMeasurement], target: Ipv4Addr) -> Vec<String> {
    let set: BTreeSet<&str> =
        measurements.iter().filter(|m| m.target == target).map(|m| m.probe_id.as_str()).collect();
    set.into_iter().map(str::to_string).collect()
}

/// Collector peers with updates for `prefix`, sorted.
pub fn cps_for(updates: &[BgpUpdate], prefix: Ipv4Net) -> Vec<String> {
    let set: BTreeSet<&str> = updates.iter().filter(|u| u.prefix == prefix).map(|u| u.cp_id.as_str()).collect();
    set.into_iter().map(str::to_string).collect()
}
