//! Penalized mean-shift segmentation of RTT series.
//!
//! Segments are scored by their within-segment sum of squared errors and
//! every changepoint costs a fixed penalty. [`pelt`] finds the exact optimum
//! with candidate pruning; [`optimal_partitioning`] is the unpruned dynamic
//! program and serves as its reference. Both share the cost evaluator and
//! tie-breaking rules so their optima agree bit for bit.
//!
//! [`elbow_select`] picks a penalty from the schedule `p_0, c1^1 + c2,
//! c1^2 + c2, ...` by watching where the changepoint count stops dropping
//! quickly.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Changepoint, Params, RttSample};

/// Upper bound on elbow iterations; the schedule is exponential, so real
/// series run out of changepoints long before this.
pub const MAX_ELBOW_ITERATIONS: usize = 2048;

/// Prefix sums answering segment SSE queries in O(1).
///
/// Values are centered on their mean and accumulated with Neumaier
/// compensation to limit cancellation in `sum(x^2) - sum(x)^2 / n`.
#[derive(Debug, Clone)]
pub struct SegmentCost {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    fn new() -> Self {
        Self { sum: 0.0, comp: 0.0 }
    }

    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl SegmentCost {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("value series"));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value {bad} in series")));
        }
        let center = values.iter().sum::<f64>() / values.len() as f64;
        let mut sum = Vec::with_capacity(values.len() + 1);
        let mut sum_sq = Vec::with_capacity(values.len() + 1);
        let (mut s1, mut s2) = (Compensated::new(), Compensated::new());
        sum.push(0.0);
        sum_sq.push(0.0);
        for v in values {
            let d = v - center;
            s1.add(d);
            s2.add(d * d);
            sum.push(s1.value());
            sum_sq.push(s2.value());
        }
        Ok(Self { sum, sum_sq })
    }

    /// Number of values in the series.
    pub fn len(&self) -> usize {
        self.sum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// SSE of `values[lo..hi]`; the caller guarantees `lo < hi <= len`.
    #[inline]
    pub fn cost(&self, lo: usize, hi: usize) -> f64 {
        debug_assert!(lo < hi && hi <= self.len());
        let n = (hi - lo) as f64;
        let s = self.sum[hi] - self.sum[lo];
        let sq = self.sum_sq[hi] - self.sum_sq[lo];
        (sq - s * s / n).max(0.0)
    }

    pub fn checked_cost(&self, lo: usize, hi: usize) -> Result<f64> {
        if lo >= hi {
            return Err(Error::invalid(format!("empty segment [{lo}, {hi})")));
        }
        if hi > self.len() {
            return Err(Error::IndexOutOfRange { index: hi, len: self.len() });
        }
        Ok(self.cost(lo, hi))
    }
}

/// Sum of squared deviations from the mean over `values[lo..hi]`.
pub fn segment_cost(values: &[f64], lo: usize, hi: usize) -> Result<f64> {
    SegmentCost::new(values)?.checked_cost(lo, hi)
}

/// A set of changepoints and the penalized cost it achieves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    /// Start index of every segment after the first, strictly increasing in `[1, n-1]`.
    pub changepoint_indices: Vec<usize>,
    pub total_cost: f64,
    pub penalty: f64,
}

impl Segmentation {
    pub fn len(&self) -> usize {
        self.changepoint_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.changepoint_indices.is_empty()
    }
}

/// State of the forward dynamic program, shared by both solvers.
struct Recursion<'a> {
    cost: &'a SegmentCost,
    penalty: f64,
    /// Optimal penalized cost of `values[..t]`.
    best: Vec<f64>,
    /// Number of changepoints in that optimum.
    count: Vec<usize>,
    /// Start of the last segment in that optimum; 0 means a single segment.
    last: Vec<usize>,
}

impl<'a> Recursion<'a> {
    fn new(cost: &'a SegmentCost, penalty: f64) -> Self {
        let n = cost.len();
        let mut best = vec![f64::INFINITY; n + 1];
        best[0] = 0.0;
        Self { cost, penalty, best, count: vec![0; n + 1], last: vec![0; n + 1] }
    }

    /// Penalized cost of ending the last segment `[s, t)` after the optimum for `[..s]`.
    #[inline]
    fn candidate(&self, s: usize, t: usize) -> (f64, usize) {
        if s == 0 {
            (self.cost.cost(0, t), 0)
        } else {
            (self.best[s] + self.cost.cost(s, t) + self.penalty, self.count[s] + 1)
        }
    }

    fn path(&self, mut s: usize) -> Vec<usize> {
        let mut out = Vec::new();
        while s > 0 {
            out.push(s);
            s = self.last[s];
        }
        out.reverse();
        out
    }

    /// Lower cost wins, then fewer changepoints, then the lexicographically smaller index list.
    fn better(&self, a: (usize, f64, usize), b: (usize, f64, usize)) -> bool {
        match a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal) {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
        match a.2.cmp(&b.2) {
            Ordering::Less => return true,
            Ordering::Greater => return false,
            Ordering::Equal => {}
        }
        self.path(a.0) < self.path(b.0)
    }

    fn settle(&mut self, t: usize, candidates: impl Iterator<Item = usize>) {
        let mut winner: Option<(usize, f64, usize)> = None;
        for s in candidates {
            let (v, k) = self.candidate(s, t);
            let cand = (s, v, k);
            if winner.is_none_or(|w| self.better(cand, w)) {
                winner = Some(cand);
            }
        }
        let (s, v, k) = winner.expect("at least one candidate");
        self.best[t] = v;
        self.count[t] = k;
        self.last[t] = s;
    }

    fn finish(self) -> Segmentation {
        let n = self.cost.len();
        Segmentation {
            changepoint_indices: self.path(self.last[n]),
            total_cost: self.best[n],
            penalty: self.penalty,
        }
    }
}

fn check_penalty(penalty: f64) -> Result<()> {
    if penalty.is_nan() || penalty < 0.0 {
        return Err(Error::params(format!("penalty must be non-negative, got {penalty}")));
    }
    Ok(())
}

/// Unpruned O(n^2) optimal partitioning.
pub fn optimal_partitioning(values: &[f64], penalty: f64) -> Result<Segmentation> {
    check_penalty(penalty)?;
    let cost = SegmentCost::new(values)?;
    Ok(optimal_partitioning_with(&cost, penalty))
}

pub fn optimal_partitioning_with(cost: &SegmentCost, penalty: f64) -> Segmentation {
    let mut dp = Recursion::new(cost, penalty);
    for t in 1..=cost.len() {
        dp.settle(t, 0..t);
    }
    dp.finish()
}

/// Exact penalized segmentation with PELT pruning.
pub fn pelt(values: &[f64], penalty: f64) -> Result<Segmentation> {
    check_penalty(penalty)?;
    let cost = SegmentCost::new(values)?;
    Ok(pelt_with(&cost, penalty))
}

pub fn pelt_with(cost: &SegmentCost, penalty: f64) -> Segmentation {
    let n = cost.len();
    let mut dp = Recursion::new(cost, penalty);
    // Pruning is only sound up to rounding, so keep anything within a small
    // margin of the optimum; extra candidates never change the result.
    let slack = 1e-9 * (1.0 + cost.cost(0, n));
    let mut alive: Vec<usize> = vec![0];
    for t in 1..=n {
        dp.settle(t, alive.iter().copied());
        let bound = dp.best[t] + slack;
        // Drop s once F(s) + C(s, t) exceeds F(t); with F(0) taken as -penalty.
        alive.retain(|&s| {
            if s == 0 {
                cost.cost(0, t) - penalty <= bound
            } else {
                dp.best[s] + cost.cost(s, t) <= bound
            }
        });
        alive.push(t);
    }
    dp.finish()
}

/// Penalty schedule `p_0` followed by `c1^i + c2` for `i >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySchedule {
    pub initial: f64,
    pub base: f64,
    pub offset: f64,
}

impl PenaltySchedule {
    pub fn from_params(params: &Params) -> Self {
        Self { initial: params.initial_penalty, base: params.penalty_base, offset: params.penalty_offset }
    }

    pub fn penalty(&self, i: usize) -> f64 {
        if i == 0 {
            self.initial
        } else {
            let exp = i32::try_from(i).unwrap_or(i32::MAX);
            self.base.powi(exp) + self.offset
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base.is_finite() && self.base > 1.0) {
            return Err(Error::params("penalty base c1 must be greater than 1"));
        }
        if !(self.initial.is_finite() && self.initial > 0.0) {
            return Err(Error::params("initial penalty must be positive"));
        }
        if !self.offset.is_finite() || self.penalty(1) <= self.initial {
            return Err(Error::params(format!(
                "first scheduled penalty {} must exceed the initial penalty {}",
                self.penalty(1),
                self.initial
            )));
        }
        Ok(())
    }
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self::from_params(&Params::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowRow {
    pub iteration: usize,
    pub penalty: f64,
    pub changepoints: usize,
    /// Penalty increase per changepoint lost; `None` when the count did not drop.
    pub difference_quotient: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowTrace {
    pub rows: Vec<ElbowRow>,
    pub selected_penalty: f64,
    /// The slope criterion was never met. The selected penalty is then the
    /// largest one tried that still left changepoints.
    pub exhausted: bool,
}

/// Memoizes segmentations of one series by penalty.
#[derive(Debug, Clone)]
pub struct Segmenter {
    cost: SegmentCost,
    cache: HashMap<u64, Segmentation>,
}

impl Segmenter {
    pub fn new(values: &[f64]) -> Result<Self> {
        Ok(Self { cost: SegmentCost::new(values)?, cache: HashMap::new() })
    }

    pub fn cost(&self) -> &SegmentCost {
        &self.cost
    }

    pub fn segment(&mut self, penalty: f64) -> Result<&Segmentation> {
        check_penalty(penalty)?;
        let cost = &self.cost;
        Ok(self.cache.entry(penalty.to_bits()).or_insert_with(|| pelt_with(cost, penalty)))
    }

    /// Runs the elbow iteration and returns the selected segmentation with its trace.
    pub fn elbow(&mut self, schedule: &PenaltySchedule, slope_threshold: f64) -> Result<(Segmentation, ElbowTrace)> {
        schedule.validate()?;
        if !(slope_threshold > 0.0) {
            return Err(Error::params("elbow slope threshold must be positive"));
        }
        let p0 = schedule.penalty(0);
        let mut rows = vec![ElbowRow {
            iteration: 0,
            penalty: p0,
            changepoints: self.segment(p0)?.len(),
            difference_quotient: None,
        }];
        let mut exhausted = true;
        for i in 1..=MAX_ELBOW_ITERATIONS {
            let prev = rows.last().expect("seeded with iteration 0");
            let p = schedule.penalty(i);
            if prev.changepoints == 0 || !p.is_finite() {
                break;
            }
            let (prev_p, prev_cpt) = (prev.penalty, prev.changepoints);
            let cpt = self.segment(p)?.len();
            let delta = (prev_cpt > cpt).then(|| (p - prev_p) / (prev_cpt - cpt) as f64);
            rows.push(ElbowRow { iteration: i, penalty: p, changepoints: cpt, difference_quotient: delta });
            if delta.is_some_and(|d| d < slope_threshold) {
                exhausted = false;
                break;
            }
        }
        let selected_penalty = if exhausted {
            rows.iter().rev().find(|r| r.changepoints > 0).unwrap_or(&rows[0]).penalty
        } else {
            rows.last().expect("non-empty").penalty
        };
        let seg = self.segment(selected_penalty)?.clone();
        Ok((seg, ElbowTrace { rows, selected_penalty, exhausted }))
    }
}

/// Picks a penalty with the elbow rule; see [`Segmenter::elbow`].
pub fn elbow_select(values: &[f64], params: &Params) -> Result<(f64, ElbowTrace)> {
    let mut seg = Segmenter::new(values)?;
    let (_, trace) = seg.elbow(&PenaltySchedule::from_params(params), params.elbow_slope_threshold)?;
    Ok((trace.selected_penalty, trace))
}

/// Attaches timestamps and regime means to a segmentation of `samples`.
pub fn to_changepoints(samples: &[RttSample], seg: &Segmentation) -> Result<Vec<Changepoint>> {
    let n = samples.len();
    let mut bounds = Vec::with_capacity(seg.len() + 2);
    bounds.push(0);
    for &k in &seg.changepoint_indices {
        if k == 0 || k >= n {
            return Err(Error::IndexOutOfRange { index: k, len: n });
        }
        if k <= *bounds.last().expect("non-empty") {
            return Err(Error::invalid("changepoint indices must be strictly increasing"));
        }
        bounds.push(k);
    }
    bounds.push(n);
    let means: Vec<f64> = bounds
        .windows(2)
        .map(|w| samples[w[0]..w[1]].iter().map(|s| s.value).sum::<f64>() / (w[1] - w[0]) as f64)
        .collect();
    Ok(seg
        .changepoint_indices
        .iter()
        .enumerate()
        .map(|(j, &k)| Changepoint {
            timestamp: samples[k].timestamp,
            index: k,
            mean_before: means[j],
            mean_after: means[j + 1],
        })
        .collect())
}
