//! Synthetic measurement scenarios with known ground truth.
//!
//! A scenario describes one target prefix whose AS path changes at a list of
//! events. Every event emits a BGP update at each collector peer, shifts the
//! RTT mean seen by every probe after a propagation lag, and switches the
//! traceroute path at the event instant. Decoy prefixes receive independent
//! Poisson-timed updates that should not correlate with anything.
//!
//! Randomness comes from ChaCha8 seeded with `seed` through
//! `SeedableRng::seed_from_u64`. Draws happen in a fixed order: random
//! events, then RTT measurements (probe by probe, in time order), then decoy
//! updates (prefix by prefix). Gaussian noise uses `rand_distr::Normal` and
//! the extra per-measurement RTT values use `rand_distr::Exp`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use ipnet::Ipv4Net;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{self, PrefixOrigin};
use crate::model::{Asn, BgpUpdate, Hop, RttMeasurement, Timestamp, TracerouteMeasurement};

/// One routing change of the target prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    /// Seconds after the scenario start.
    pub offset: u64,
    pub as_path: Vec<Asn>,
    /// Change of the RTT mean in milliseconds.
    pub rtt_mean_delta: f64,
    /// Seconds between the BGP update and the RTT shift; may be negative.
    #[serde(default)]
    pub propagation_lag: i64,
}

/// Evenly spread events generated from the scenario seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomEvents {
    pub count: usize,
    /// Range of `|rtt_mean_delta|` in milliseconds.
    pub min_delta: f64,
    pub max_delta: f64,
    pub propagation_lag: i64,
    /// Alternative AS paths; consecutive events never reuse the current path.
    pub paths: Vec<Vec<Asn>>,
}

impl Default for RandomEvents {
    fn default() -> Self {
        Self {
            count: 20,
            min_delta: 5.0,
            max_delta: 40.0,
            propagation_lag: 0,
            paths: vec![vec![1103, 25152], vec![286, 25152], vec![3356, 1299, 25152]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    /// Epoch seconds of the first measurement.
    pub start: u64,
    pub duration: u64,
    pub rtt_period: u64,
    pub traceroute_period: u64,
    pub events: Vec<Event>,
    /// Appended to `events` when present.
    pub random_events: Option<RandomEvents>,
    pub noise_sigma: f64,
    pub base_rtt: f64,
    pub decoy_prefixes: usize,
    /// Mean decoy updates per prefix per day.
    pub decoy_rate_per_day: f64,
    pub probes: usize,
    pub cps: usize,
    pub target: Ipv4Addr,
    pub prefix: Ipv4Net,
    pub probe_as: Asn,
    /// Path before the first event.
    pub initial_as_path: Vec<Asn>,
    /// IXP inserted after the probe's own AS on every traceroute.
    pub ixp_asn: Option<Asn>,
    /// Probability that a measurement records fewer than 3 values.
    pub loss_rate: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 1,
            start: 1_325_376_000,
            duration: 20 * 86_400,
            rtt_period: 240,
            traceroute_period: 1200,
            events: Vec::new(),
            random_events: None,
            noise_sigma: 0.3,
            base_rtt: 20.0,
            decoy_prefixes: 3,
            decoy_rate_per_day: 12.0,
            probes: 1,
            cps: 1,
            target: Ipv4Addr::new(193, 0, 14, 129),
            prefix: "193.0.14.0/24".parse().expect("static prefix"),
            probe_as: 3333,
            initial_as_path: vec![1103, 25152],
            ixp_asn: None,
            loss_rate: 0.0,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::params(format!("scenario: {m}")));
        if self.rtt_period == 0 || self.traceroute_period == 0 {
            return bad("rtt_period and traceroute_period must be positive".into());
        }
        if self.duration == 0 {
            return bad("duration must be positive".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be non-negative".into());
        }
        if !(self.base_rtt.is_finite() && self.base_rtt > 0.0) {
            return bad("base_rtt must be positive".into());
        }
        if !(self.decoy_rate_per_day.is_finite() && self.decoy_rate_per_day >= 0.0) {
            return bad("decoy_rate_per_day must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.loss_rate) {
            return bad("loss_rate must lie in [0, 1]".into());
        }
        if self.probes == 0 || self.cps == 0 {
            return bad("need at least one probe and one collector peer".into());
        }
        if !self.prefix.contains(&self.target) {
            return bad(format!("target {} lies outside prefix {}", self.target, self.prefix));
        }
        if self.decoy_prefixes > 256 {
            return bad("at most 256 decoy prefixes".into());
        }
        if self.events.windows(2).any(|w| w[0].offset >= w[1].offset) {
            return bad("event offsets must be strictly increasing".into());
        }
        if let Some(e) = self.events.iter().find(|e| e.offset >= self.duration) {
            return bad(format!("event at offset {} beyond duration", e.offset));
        }
        if self.events.iter().any(|e| !e.rtt_mean_delta.is_finite() || e.as_path.contains(&0)) {
            return bad("events need finite deltas and non-zero ASNs".into());
        }
        if let Some(r) = &self.random_events {
            if !(r.min_delta >= 0.0 && r.max_delta >= r.min_delta && r.max_delta.is_finite()) {
                return bad("random_events delta range is invalid".into());
            }
            if r.count > 0 && r.paths.len() < 2 {
                return bad("random_events needs at least two alternative paths".into());
            }
            if r.count as u64 >= self.duration / 4 {
                return bad("too many random events for the duration".into());
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::params(format!("{}: {e}", path.display())))
    }

    /// Decoy prefix `i`, carved from 198.18.0.0/15.
    pub fn decoy_prefix(i: usize) -> Ipv4Net {
        Ipv4Net::new(Ipv4Addr::new(198, 18, i as u8, 0), 24).expect("valid length")
    }

    pub fn probe_id(i: usize) -> String {
        format!("probe-{}", i + 1)
    }

    pub fn cp_id(i: usize) -> String {
        format!("cp-{}", i + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub cp: String,
    pub prefix: Ipv4Net,
    pub ts: Timestamp,
    /// The update comes with an RTT shift and should be matched.
    pub correlated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub target: Ipv4Addr,
    pub prefix: Ipv4Net,
    pub decoy_prefixes: Vec<Ipv4Net>,
    pub probe_as: Asn,
    pub probes: Vec<String>,
    pub cps: Vec<String>,
    /// Timestamps at which the RTT mean actually shifts.
    pub rtt_shifts: Vec<Timestamp>,
    pub updates: Vec<TruthEntry>,
}

/// Everything a scenario produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub rtt: Vec<RttMeasurement>,
    pub bgp: Vec<BgpUpdate>,
    pub traceroutes: Vec<TracerouteMeasurement>,
    pub truth: GroundTruth,
    pub prefix_table: Vec<PrefixOrigin>,
    pub ixps: Vec<Asn>,
}

/// Paths of the files written by [`SynthOutput::write_to`].
#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub rtt: PathBuf,
    pub bgp: PathBuf,
    pub traceroute: PathBuf,
    pub truth: PathBuf,
    pub prefix_table: PathBuf,
    pub ixps: PathBuf,
}

impl SynthFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            rtt: dir.join("rtt.ndjson"),
            bgp: dir.join("bgp.ndjson"),
            traceroute: dir.join("traceroute.ndjson"),
            truth: dir.join("truth.json"),
            prefix_table: dir.join("prefixes.csv"),
            ixps: dir.join("ixps.txt"),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

impl SynthOutput {
    pub fn write_to(&self, dir: &Path) -> Result<SynthFiles> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = SynthFiles::in_dir(dir);
        let done = |mut w: BufWriter<File>, p: &Path| w.flush().map_err(|e| Error::io(p, e));

        let mut w = create(&files.rtt)?;
        ingest::write_rtt(&mut w, &self.rtt)?;
        done(w, &files.rtt)?;
        let mut w = create(&files.bgp)?;
        ingest::write_bgp(&mut w, &self.bgp)?;
        done(w, &files.bgp)?;
        let mut w = create(&files.traceroute)?;
        ingest::write_traceroute(&mut w, &self.traceroutes)?;
        done(w, &files.traceroute)?;
        let mut w = create(&files.truth)?;
        serde_json::to_writer_pretty(&mut w, &self.truth)?;
        w.write_all(b"\n").map_err(|e| Error::io(&files.truth, e))?;
        done(w, &files.truth)?;
        let w = create(&files.prefix_table)?;
        ingest::write_prefix_table(w, &self.prefix_table)?;
        let mut w = create(&files.ixps)?;
        for a in &self.ixps {
            writeln!(w, "{a}").map_err(|e| Error::io(&files.ixps, e))?;
        }
        done(w, &files.ixps)?;
        Ok(files)
    }
}

fn random_events(cfg: &RandomEvents, scenario: &Scenario, rng: &mut ChaCha8Rng) -> Vec<Event> {
    let slot = scenario.duration / (cfg.count as u64 + 1);
    let jitter = slot / 4;
    let mut current = scenario.initial_as_path.clone();
    let mut level = 0.0f64;
    let mut out = Vec::with_capacity(cfg.count);
    for k in 0..cfg.count {
        let centre = slot * (k as u64 + 1);
        let mut offset = centre - jitter + rng.random_range(0..=2 * jitter);
        // keep events off the traceroute grid so stability windows are unambiguous
        if offset % scenario.traceroute_period == 0 {
            offset += 1;
        }
        let choices: Vec<&Vec<Asn>> = cfg.paths.iter().filter(|p| **p != current).collect();
        let path = choices[rng.random_range(0..choices.len())].clone();
        let magnitude = if cfg.max_delta > cfg.min_delta {
            rng.random_range(cfg.min_delta..cfg.max_delta)
        } else {
            cfg.min_delta
        };
        let mut delta = if rng.random_bool(0.5) { magnitude } else { -magnitude };
        if scenario.base_rtt + level + delta < scenario.base_rtt / 2.0 {
            delta = magnitude;
        }
        level += delta;
        current = path.clone();
        out.push(Event { offset, as_path: path, rtt_mean_delta: delta, propagation_lag: cfg.propagation_lag });
    }
    out
}

fn asn_prefix(i: usize) -> Ipv4Net {
    Ipv4Net::new(Ipv4Addr::new(20 + (i / 256) as u8, (i % 256) as u8, 0, 0), 16).expect("valid length")
}

/// Generates all measurement files for `scenario`.
pub fn generate(scenario: &Scenario) -> Result<SynthOutput> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);

    let mut events = scenario.events.clone();
    if let Some(cfg) = &scenario.random_events {
        events.extend(random_events(cfg, scenario, &mut rng));
        events.sort_by_key(|e| e.offset);
        if events.windows(2).any(|w| w[0].offset == w[1].offset) {
            return Err(Error::params("scenario: random events collide with explicit events"));
        }
    }
    let start = scenario.start;
    let end = start + scenario.duration;

    // RTT mean shifts, as absolute (time, delta)
    let mut shifts: Vec<(u64, f64)> = events
        .iter()
        .filter(|e| e.rtt_mean_delta != 0.0)
        .map(|e| ((start + e.offset).saturating_add_signed(e.propagation_lag), e.rtt_mean_delta))
        .collect();
    shifts.sort_by_key(|s| s.0);

    let probes: Vec<String> = (0..scenario.probes).map(Scenario::probe_id).collect();
    let cps: Vec<String> = (0..scenario.cps).map(Scenario::cp_id).collect();

    let noise = Normal::new(0.0, scenario.noise_sigma).map_err(|e| Error::params(e.to_string()))?;
    let spread = Exp::new(1.0).map_err(|e| Error::params(e.to_string()))?;
    let mut rtt = Vec::new();
    for probe in &probes {
        let mut t = start;
        let mut applied = 0usize;
        let mut mean = scenario.base_rtt;
        while t < end {
            while applied < shifts.len() && shifts[applied].0 <= t {
                mean += shifts[applied].1;
                applied += 1;
            }
            let min = (mean + noise.sample(&mut rng)).max(0.1);
            let mut values = vec![min, min + 0.01 + spread.sample(&mut rng), min + 0.01 + spread.sample(&mut rng)];
            values.rotate_left(rng.random_range(0..3));
            if scenario.loss_rate > 0.0 && rng.random_bool(scenario.loss_rate) {
                values.truncate(rng.random_range(0..3));
            }
            rtt.push(RttMeasurement {
                probe_id: probe.clone(),
                target: scenario.target,
                timestamp: Timestamp(t),
                rtts: values,
                responded_ip: Some(scenario.target),
            });
            t += scenario.rtt_period;
        }
    }
    rtt.sort_by(|a, b| (a.timestamp, &a.probe_id).cmp(&(b.timestamp, &b.probe_id)));

    let mut bgp = Vec::new();
    let mut truth_updates = Vec::new();
    for cp in &cps {
        for e in &events {
            let ts = Timestamp(start + e.offset);
            bgp.push(BgpUpdate { cp_id: cp.clone(), prefix: scenario.prefix, timestamp: ts, as_path: e.as_path.clone() });
            truth_updates.push(TruthEntry {
                cp: cp.clone(),
                prefix: scenario.prefix,
                ts,
                correlated: e.rtt_mean_delta != 0.0,
            });
        }
    }

    let decoy_prefixes: Vec<Ipv4Net> = (0..scenario.decoy_prefixes).map(Scenario::decoy_prefix).collect();
    let decoy_paths: [Vec<Asn>; 3] = [vec![1103, 64500], vec![286, 64500], vec![6939, 64501]];
    if scenario.decoy_rate_per_day > 0.0 {
        let gap = Exp::new(scenario.decoy_rate_per_day / 86_400.0).map_err(|e| Error::params(e.to_string()))?;
        for prefix in &decoy_prefixes {
            let mut t = start as f64;
            loop {
                t += gap.sample(&mut rng);
                if t >= end as f64 {
                    break;
                }
                let path = decoy_paths[rng.random_range(0..decoy_paths.len())].clone();
                let ts = Timestamp(t as u64);
                for cp in &cps {
                    bgp.push(BgpUpdate { cp_id: cp.clone(), prefix: *prefix, timestamp: ts, as_path: path.clone() });
                    truth_updates.push(TruthEntry { cp: cp.clone(), prefix: *prefix, ts, correlated: false });
                }
            }
        }
    }
    bgp.sort_by(|a, b| (a.timestamp, &a.cp_id, a.prefix).cmp(&(b.timestamp, &b.cp_id, b.prefix)));
    truth_updates.sort_by(|a, b| (a.ts, &a.cp, a.prefix).cmp(&(b.ts, &b.cp, b.prefix)));

    // one /16 per AS, allocated in ASN order
    let mut asns: BTreeSet<Asn> = BTreeSet::new();
    asns.insert(scenario.probe_as);
    asns.extend(scenario.initial_as_path.iter().copied());
    asns.extend(events.iter().flat_map(|e| e.as_path.iter().copied()));
    asns.extend(decoy_paths.iter().flatten().copied());
    asns.extend(scenario.ixp_asn);
    let asns: Vec<Asn> = asns.into_iter().collect();
    let block = |asn: Asn| asn_prefix(asns.binary_search(&asn).expect("allocated"));
    let host = |asn: Asn, n: u8| {
        let o = block(asn).network().octets();
        Ipv4Addr::new(o[0], o[1], 0, n)
    };

    let mut prefix_table: Vec<PrefixOrigin> =
        asns.iter().map(|&a| PrefixOrigin { prefix: block(a), asn: a, collector_count: 10 }).collect();
    if let Some(&origin) = scenario.initial_as_path.last() {
        prefix_table.push(PrefixOrigin { prefix: scenario.prefix, asn: origin, collector_count: 12 });
        // a minority origin to exercise the election
        prefix_table.push(PrefixOrigin { prefix: scenario.prefix, asn: 64512, collector_count: 1 });
    }
    for p in &decoy_prefixes {
        prefix_table.push(PrefixOrigin { prefix: *p, asn: 64500, collector_count: 8 });
    }

    let mut traceroutes = Vec::new();
    for probe in &probes {
        let mut t = start;
        let mut applied = 0usize;
        let mut path = scenario.initial_as_path.clone();
        while t < end {
            while applied < events.len() && start + events[applied].offset <= t {
                path = events[applied].as_path.clone();
                applied += 1;
            }
            let mut hops: Vec<Hop> = vec![Some(Ipv4Addr::new(192, 168, 1, 1)), Some(host(scenario.probe_as, 1))];
            if let Some(ixp) = scenario.ixp_asn {
                hops.push(Some(host(ixp, 7)));
            }
            if path.is_empty() {
                hops.extend([None, None]);
            } else {
                let last = path.len() - 1;
                for (i, &asn) in path.iter().enumerate() {
                    if asn == scenario.probe_as {
                        continue;
                    }
                    hops.push(Some(host(asn, 1)));
                    if i == last {
                        hops.push(Some(scenario.target));
                    }
                }
            }
            traceroutes.push(TracerouteMeasurement {
                probe_id: probe.clone(),
                target: scenario.target,
                timestamp: Timestamp(t),
                hops,
            });
            t += scenario.traceroute_period;
        }
    }
    traceroutes.sort_by(|a, b| (a.timestamp, &a.probe_id).cmp(&(b.timestamp, &b.probe_id)));

    let truth = GroundTruth {
        seed: scenario.seed,
        target: scenario.target,
        prefix: scenario.prefix,
        decoy_prefixes,
        probe_as: scenario.probe_as,
        probes,
        cps,
        rtt_shifts: shifts.iter().map(|s| Timestamp(s.0)).collect(),
        updates: truth_updates,
    };
    Ok(SynthOutput {
        rtt,
        bgp,
        traceroutes,
        truth,
        prefix_table,
        ixps: scenario.ixp_asn.into_iter().collect(),
    })
}
