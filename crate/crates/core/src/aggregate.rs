//! Aggregation across probe/collector-peer pairs.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::net::Ipv4Addr;

use ipnet::Ipv4Net;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::changepoint::Segmentation;
use crate::error::{Error, Result};
use crate::model::{BgpUpdate, MatchReport, Params, RttMeasurement, Timestamp};
use crate::pipeline::{correlate, cps_for, probes_for, select_updates, PairKey, RttSeries};

/// Elbow slope thresholds swept by default.
pub const DEFAULT_EST_VALUES: [f64; 12] = [0.001, 0.01, 0.1, 1.0, 5.0, 10.0, 50.0, 100.0, 200.0, 300.0, 1000.0, 10000.0];

/// Time shifts (seconds) swept by default.
pub const DEFAULT_SHIFT_VALUES: [i64; 7] = [-600, -300, -120, 0, 120, 300, 600];

/// Default Jaccard threshold for merging probes into one class.
pub const DEFAULT_JACCARD_THRESHOLD: f64 = 0.7;

fn check_factors(factors: &[f64]) -> Result<()> {
    if factors.is_empty() {
        return Err(Error::Empty("correlation factors"));
    }
    if let Some(f) = factors.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(Error::invalid(format!("correlation factor {f} outside [0, 1]")));
    }
    Ok(())
}

/// Right-continuous empirical CDF of correlation factors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(factors: &[f64]) -> Result<Self> {
        check_factors(factors)?;
        let mut sorted = factors.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of factors `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&f| f <= x) as f64 / self.sorted.len() as f64
    }

    /// `(x, F(x))` at every distinct factor value.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &x) in self.sorted.iter().enumerate() {
            let f = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == x => last.1 = f,
                _ => out.push((x, f)),
            }
        }
        out
    }
}

/// Area under the CDF of `factors` over `[0, 1]`, i.e. `1 - mean`. Lower is better.
pub fn correlation_score(factors: &[f64]) -> Result<f64> {
    check_factors(factors)?;
    // summing in sorted order makes the result independent of input order
    let mut sorted = factors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok((1.0 - mean).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCell {
    pub elbow_slope_threshold: f64,
    pub time_shift: i64,
    /// `None` when no pair had any valid update.
    pub score: Option<f64>,
    /// Pairs contributing to the score.
    pub pairs: usize,
}

/// Correlation scores over the elbow-threshold x time-shift grid for one target/prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSurface {
    pub target: Ipv4Addr,
    pub prefix: Ipv4Net,
    pub cells: Vec<SurfaceCell>,
}

impl ScoreSurface {
    pub fn get(&self, est: f64, shift: i64) -> Option<&SurfaceCell> {
        self.cells.iter().find(|c| c.elbow_slope_threshold == est && c.time_shift == shift)
    }

    pub fn score(&self, est: f64, shift: i64) -> Option<f64> {
        self.get(est, shift).and_then(|c| c.score)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub est_values: Vec<f64>,
    pub shift_values: Vec<i64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self { est_values: DEFAULT_EST_VALUES.to_vec(), shift_values: DEFAULT_SHIFT_VALUES.to_vec() }
    }
}

/// Which pairs take part in a sweep.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSelection {
    /// Restrict to these probes; all probes measuring the target otherwise.
    pub probes: Option<Vec<String>>,
    /// Restrict to these collector peers; all peers with updates otherwise.
    pub cps: Option<Vec<String>>,
    /// Keep only collector peers that recorded updates for every prefix.
    pub common_cps: bool,
}

/// Collector peers that saw updates for every prefix in `prefixes`.
pub fn common_cps(updates: &[BgpUpdate], prefixes: &[Ipv4Net]) -> Vec<String> {
    let mut iter = prefixes.iter().map(|p| cps_for(updates, *p).into_iter().collect::<BTreeSet<_>>());
    let Some(first) = iter.next() else {
        return Vec::new();
    };
    iter.fold(first, |acc, s| acc.intersection(&s).cloned().collect()).into_iter().collect()
}

/// Scores every `(est, shift)` cell for each prefix against one target.
///
/// Each probe's series is segmented once per threshold (shifting does not
/// change the values), then every cell re-runs alignment and matching for
/// all pairs. Pairs without valid updates are left out of the cell's score.
pub fn sweep(
    measurements: &[RttMeasurement],
    updates: &[BgpUpdate],
    target: Ipv4Addr,
    prefixes: &[Ipv4Net],
    grid: &SweepGrid,
    params: &Params,
    selection: &PairSelection,
) -> Result<Vec<ScoreSurface>> {
    if grid.est_values.is_empty() || grid.shift_values.is_empty() {
        return Err(Error::params("sweep grid needs at least one threshold and one shift"));
    }
    for &est in &grid.est_values {
        Params { elbow_slope_threshold: est, ..params.clone() }.validate()?;
    }
    let probes = selection.probes.clone().unwrap_or_else(|| probes_for(measurements, target));
    let common = selection.common_cps.then(|| common_cps(updates, prefixes));

    // (samples, one segmentation per threshold) for each probe
    let segmented: Vec<(PairSeries, Vec<Option<Segmentation>>)> = probes
        .par_iter()
        .map(|probe| {
            let mut series = RttSeries::prepare(measurements, probe, target, params)?;
            let segs = grid
                .est_values
                .iter()
                .map(|&est| {
                    let p = Params { elbow_slope_threshold: est, ..params.clone() };
                    Ok(series.select(&p)?.map(|s| s.segmentation))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((PairSeries { probe_id: probe.clone(), samples: series.samples }, segs))
        })
        .collect::<Result<_>>()?;

    let mut surfaces = Vec::with_capacity(prefixes.len());
    for &prefix in prefixes {
        let mut cps = selection.cps.clone().unwrap_or_else(|| cps_for(updates, prefix));
        if let Some(common) = &common {
            cps.retain(|c| common.contains(c));
        }
        let per_cp: Vec<(String, Vec<BgpUpdate>)> =
            cps.iter().map(|cp| (cp.clone(), select_updates(updates, cp, prefix, params))).collect();

        let cells: Vec<(usize, i64)> = (0..grid.est_values.len())
            .flat_map(|e| grid.shift_values.iter().map(move |&s| (e, s)))
            .collect();
        let scored = cells
            .par_iter()
            .map(|&(e, shift)| {
                let p = Params { elbow_slope_threshold: grid.est_values[e], time_shift: shift, ..params.clone() };
                let mut factors = Vec::new();
                for (series, segs) in &segmented {
                    for (cp, cp_updates) in &per_cp {
                        let key = PairKey { probe_id: series.probe_id.clone(), cp_id: cp.clone(), target, prefix };
                        let (report, _, _) = correlate(&key, &series.samples, segs[e].as_ref(), cp_updates, &p)?;
                        if !report.insufficient_data {
                            factors.push(report.correlation_factor);
                        }
                    }
                }
                let score = if factors.is_empty() { None } else { Some(correlation_score(&factors)?) };
                Ok(SurfaceCell { elbow_slope_threshold: grid.est_values[e], time_shift: shift, score, pairs: factors.len() })
            })
            .collect::<Result<Vec<_>>>()?;
        surfaces.push(ScoreSurface { target, prefix, cells: scored });
    }
    Ok(surfaces)
}

struct PairSeries {
    probe_id: String,
    samples: Vec<crate::model::RttSample>,
}

/// Probes grouped by the similarity of the updates they matched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceClassing {
    /// Probe ids in sorted order; indexes `similarity`.
    pub members: Vec<String>,
    pub classes: Vec<Vec<String>>,
    /// Pairwise Jaccard index of matched-update sets.
    pub similarity: Vec<Vec<f64>>,
    pub threshold: f64,
}

/// Jaccard index; two empty sets count as identical.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Connected components of probes whose matched-update sets have Jaccard
/// index at least `threshold`. Reports are expected to share one collector peer.
pub fn equivalence_classes(reports: &[MatchReport], threshold: f64) -> Result<EquivalenceClassing> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::params(format!("jaccard threshold {threshold} outside [0, 1]")));
    }
    let mut sets: BTreeMap<&str, BTreeSet<(Timestamp, usize)>> = BTreeMap::new();
    for r in reports {
        let set = sets.entry(r.probe_id.as_str()).or_default();
        set.extend(r.entries.iter().filter(|e| e.matched).map(|e| (e.update.timestamp, e.ordinal)));
    }
    let members: Vec<String> = sets.keys().map(|s| s.to_string()).collect();
    let sets: Vec<_> = sets.into_values().collect();
    let n = sets.len();
    let mut similarity = vec![vec![1.0; n]; n];
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            let s = jaccard(&sets[i], &sets[j]);
            similarity[i][j] = s;
            similarity[j][i] = s;
            if s >= threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(members[i].clone());
    }
    Ok(EquivalenceClassing { members, classes: groups.into_values().collect(), similarity, threshold })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineRow {
    pub timestamp: Timestamp,
    pub ordinal: usize,
    pub probe: String,
    pub cp: String,
    pub matched: bool,
}

/// One row per report entry, ordered by timestamp then probe.
pub fn emit_match_timeline(reports: &[MatchReport]) -> Vec<TimelineRow> {
    let mut rows: Vec<TimelineRow> = reports
        .iter()
        .flat_map(|r| {
            r.entries.iter().map(move |e| TimelineRow {
                timestamp: e.update.timestamp,
                ordinal: e.ordinal,
                probe: r.probe_id.clone(),
                cp: r.cp_id.clone(),
                matched: e.matched,
            })
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.timestamp, &a.probe, &a.cp, a.ordinal).cmp(&(b.timestamp, &b.probe, &b.cp, b.ordinal))
    });
    rows
}

fn flush(wtr: &mut csv::Writer<impl Write>) -> Result<()> {
    wtr.flush().map_err(|e| Error::io("<csv>", e))
}

/// `x,F(x)` rows, one per distinct factor.
pub fn write_cdf_csv(w: impl Write, label: &str, cdf: &EmpiricalCdf) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["series", "x", "F"])?;
    for (x, f) in cdf.steps() {
        wtr.write_record([label.to_string(), x.to_string(), f.to_string()])?;
    }
    flush(&mut wtr)
}

pub fn write_surface_csv(w: impl Write, surfaces: &[ScoreSurface]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["est", "shift", "target", "prefix", "score", "pairs"])?;
    for s in surfaces {
        for c in &s.cells {
            wtr.write_record([
                c.elbow_slope_threshold.to_string(),
                c.time_shift.to_string(),
                s.target.to_string(),
                s.prefix.to_string(),
                c.score.map(|v| v.to_string()).unwrap_or_default(),
                c.pairs.to_string(),
            ])?;
        }
    }
    flush(&mut wtr)
}

pub fn write_timeline_csv(w: impl Write, rows: &[TimelineRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["timestamp", "ordinal", "probe", "cp", "matched"])?;
    for r in rows {
        wtr.write_record([
            r.timestamp.to_string(),
            r.ordinal.to_string(),
            r.probe.clone(),
            r.cp.clone(),
            if r.matched { "Y" } else { "N" }.to_string(),
        ])?;
    }
    flush(&mut wtr)
}
