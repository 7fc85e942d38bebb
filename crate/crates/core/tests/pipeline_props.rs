use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use bgprtt::changepoint::{pelt, Segmentation};
use bgprtt::pipeline::{
    analyze_pair, correlate, match_updates, preprocess_bgp, preprocess_rtt, run_pair, time_align, PairKey,
};
use bgprtt::{ingest, BgpUpdate, Changepoint, Params, RttMeasurement, RttSample, Timestamp};
use proptest::prelude::*;

const T0: u64 = 1_000_000;

fn key() -> PairKey {
    PairKey {
        probe_id: "p1".into(),
        cp_id: "cp1".into(),
        target: Ipv4Addr::new(193, 0, 14, 129),
        prefix: "193.0.14.0/24".parse().unwrap(),
    }
}

fn update(ts: u64, path: &[u32]) -> BgpUpdate {
    BgpUpdate { cp_id: "cp1".into(), prefix: key().prefix, timestamp: Timestamp(ts), as_path: path.to_vec() }
}

fn cp(ts: u64) -> Changepoint {
    Changepoint { timestamp: Timestamp(ts), index: 0, mean_before: 0.0, mean_after: 1.0 }
}

/// Samples from increasing positive gaps.
fn samples_strategy() -> impl Strategy<Value = Vec<RttSample>> {
    prop::collection::vec((1u64..2000, 1.0..100.0f64), 0..40).prop_map(|steps| {
        let mut t = T0;
        steps
            .into_iter()
            .map(|(gap, value)| {
                t += gap;
                RttSample { timestamp: Timestamp(t), value }
            })
            .collect()
    })
}

/// Updates sorted by time, spread over roughly the sample span.
fn updates_strategy() -> impl Strategy<Value = Vec<BgpUpdate>> {
    prop::collection::vec((0u64..60_000, 0usize..3), 0..40).prop_map(|mut raw| {
        raw.sort();
        raw.into_iter().map(|(off, p)| update(T0 + off, &[[1103, 25152], [286, 25152], [6939, 25152]][p])).collect()
    })
}

/// Straightforward restatement of the gap rule, scanning every gap.
fn naive_valid(updates: &[BgpUpdate], samples: &[RttSample], tolerance: u64) -> Vec<usize> {
    let mut valid = Vec::new();
    for w in samples.windows(2) {
        let (a, b) = (w[0].timestamp.0, w[1].timestamp.0);
        if b - a > tolerance {
            continue;
        }
        let inside: Vec<usize> =
            (0..updates.len()).filter(|&i| updates[i].timestamp.0 > a && updates[i].timestamp.0 <= b).collect();
        if let Some(&last) = inside.last() {
            valid.push(last);
        }
    }
    valid.sort_unstable();
    valid
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn bgp_partition_covers_input(samples in samples_strategy(), updates in updates_strategy(), tol in 1u64..3000) {
        let part = preprocess_bgp(&updates, &samples, tol);
        let mut all: Vec<usize> = part.valid.iter().chain(&part.invalid).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..updates.len()).collect::<Vec<_>>());
        prop_assert!(part.valid.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn one_valid_update_per_gap(samples in samples_strategy(), updates in updates_strategy(), tol in 1u64..3000) {
        let part = preprocess_bgp(&updates, &samples, tol);
        prop_assert_eq!(&part.valid, &naive_valid(&updates, &samples, tol));
        let mut per_gap = BTreeMap::new();
        for &i in &part.valid {
            let k = samples.partition_point(|s| s.timestamp < updates[i].timestamp);
            *per_gap.entry(k).or_insert(0) += 1;
        }
        prop_assert!(per_gap.values().all(|&n| n == 1));
    }

    #[test]
    fn factor_is_a_fraction(
        ts in prop::collection::vec(T0..T0 + 50_000, 0..30),
        cps in prop::collection::btree_set(T0..T0 + 50_000, 0..20),
        tol in 0u64..4000,
    ) {
        let ups: Vec<BgpUpdate> = ts.iter().map(|&t| update(t, &[1])).collect();
        let cps: Vec<Changepoint> = cps.into_iter().map(cp).collect();
        let r = match_updates(&key(), ups.iter().enumerate(), &cps, tol);
        prop_assert!((0.0..=1.0).contains(&r.correlation_factor));
        prop_assert_eq!(r.insufficient_data, ups.is_empty());
        if !ups.is_empty() {
            prop_assert_eq!(r.correlation_factor, r.matched_count() as f64 / ups.len() as f64);
        }
        let empty = match_updates(&key(), ups.iter().enumerate(), &[], tol);
        prop_assert_eq!(empty.correlation_factor, 0.0);
        // changepoints placed on every update match everything
        let on_top: Vec<Changepoint> = {
            let mut s = ts.clone();
            s.sort_unstable();
            s.into_iter().map(cp).collect()
        };
        let full = match_updates(&key(), ups.iter().enumerate(), &on_top, tol);
        if !ups.is_empty() {
            prop_assert_eq!(full.correlation_factor, 1.0);
        }
        for e in &r.entries {
            let half = tol / 2;
            let expect = cps.iter().any(|c| c.timestamp.abs_diff(e.update.timestamp) <= half);
            prop_assert_eq!(e.matched, expect);
        }
    }

    #[test]
    fn shifting_samples_equals_unshifting_updates(
        levels in prop::collection::vec(prop_oneof![Just(20.0), Just(45.0), Just(70.0)], 2..8),
        run in 5usize..30,
        raw in prop::collection::vec(0u64..200_000, 1..30),
        shift in -900i64..900,
    ) {
        let mut samples = Vec::new();
        let mut t = T0;
        for (k, &lvl) in levels.iter().enumerate() {
            for j in 0..run {
                samples.push(RttSample { timestamp: Timestamp(t), value: lvl + ((k * 7 + j) % 3) as f64 * 0.05 });
                t += 240;
            }
        }
        let values: Vec<f64> = samples.iter().map(|s| s.value).collect();
        let seg: Segmentation = pelt(&values, 2.0).unwrap();
        let mut raw = raw;
        raw.sort_unstable();
        let ups: Vec<BgpUpdate> = raw.iter().map(|&o| update(T0 + 5_000 + o, &[7])).collect();
        let moved: Vec<BgpUpdate> = ups
            .iter()
            .map(|u| BgpUpdate { timestamp: u.timestamp.checked_shift(-shift).unwrap(), ..u.clone() })
            .collect();

        let shifted = Params { time_shift: shift, ..Params::default() };
        let (a, va, _) = correlate(&key(), &samples, Some(&seg), &ups, &shifted).unwrap();
        let (b, vb, _) = correlate(&key(), &samples, Some(&seg), &moved, &Params::default()).unwrap();
        prop_assert_eq!(va, vb);
        prop_assert_eq!(a.correlation_factor, b.correlation_factor);
        let flags = |r: &bgprtt::MatchReport| r.entries.iter().map(|e| (e.ordinal, e.matched)).collect::<Vec<_>>();
        prop_assert_eq!(flags(&a), flags(&b));
    }
}

#[test]
fn coincidence_rate_equals_window_coverage() {
    // every second of a span is an update; the matched fraction is the covered fraction
    let cps: Vec<Changepoint> = [T0 + 1_000, T0 + 1_300, T0 + 7_777, T0 + 20_000].into_iter().map(cp).collect();
    let (lo, hi) = (T0, T0 + 25_000);
    let ups: Vec<BgpUpdate> = (lo..hi).map(|t| update(t, &[1])).collect();
    for tol in [0u64, 1, 2, 3, 240, 961, 960, 5_000] {
        let r = match_updates(&key(), ups.iter().enumerate(), &cps, tol);
        let half = tol / 2;
        let covered = (lo..hi)
            .filter(|&t| cps.iter().any(|c| c.timestamp.0.abs_diff(t) <= half))
            .count();
        assert_eq!(r.matched_count(), covered, "tolerance {tol}");
    }
    // disjoint windows: 4 windows of 961 seconds, two of them overlapping by 661
    let r = match_updates(&key(), ups.iter().enumerate(), &cps, 960);
    assert_eq!(r.matched_count(), 4 * 961 - 661);
}

#[test]
fn rtt_cleaning_keeps_complete_measurements_only() {
    let target = key().target;
    let m = |ts: u64, rtts: &[f64], ip: Option<Ipv4Addr>| RttMeasurement {
        probe_id: "p1".into(),
        target,
        timestamp: Timestamp(ts),
        rtts: rtts.to_vec(),
        responded_ip: ip,
    };
    let ms = vec![
        m(1, &[3.0, 2.0, 4.0], Some(target)),
        m(2, &[3.0, 2.0], Some(target)),
        m(3, &[5.0, 6.0, 7.0], Some(Ipv4Addr::new(10, 0, 0, 1))),
        m(4, &[9.0, 8.5, 8.7], Some(target)),
        m(5, &[], None),
    ];
    let s = preprocess_rtt(&ms, target);
    assert_eq!(s, vec![
        RttSample { timestamp: Timestamp(1), value: 2.0 },
        RttSample { timestamp: Timestamp(4), value: 8.5 },
    ]);
    assert!(time_align(&s, -2).is_err());
    assert_eq!(time_align(&s, 10).unwrap()[1].timestamp, Timestamp(14));
}

fn step_measurements() -> Vec<RttMeasurement> {
    let mut state = 99u64;
    (0..200u64)
        .map(|k| {
            let base = if k < 80 { 20.0 } else if k < 150 { 55.0 } else { 30.0 };
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let v = base + (state >> 11) as f64 / (1u64 << 53) as f64 * 1.2;
            RttMeasurement {
                probe_id: "p1".into(),
                target: key().target,
                timestamp: Timestamp(T0 + 240 * k),
                rtts: vec![v + 1.0, v, v + 2.0],
                responded_ip: Some(key().target),
            }
        })
        .collect()
}

#[test]
fn run_pair_reads_files_and_matches_in_memory_result() {
    let dir = tempfile::tempdir().unwrap();
    let rtt = step_measurements();
    let bgp = vec![
        update(T0 + 240 * 80 - 100, &[1103, 25152]),
        update(T0 + 240 * 120 + 7, &[286, 25152]),
        update(T0 + 240 * 150 - 10, &[1103, 25152]),
    ];
    let rtt_path = dir.path().join("rtt.ndjson");
    let bgp_path = dir.path().join("bgp.ndjson");
    ingest::write_rtt(&mut std::fs::File::create(&rtt_path).unwrap(), &rtt).unwrap();
    ingest::write_bgp(&mut std::fs::File::create(&bgp_path).unwrap(), &bgp).unwrap();

    let params = Params::default();
    let from_files = run_pair(&rtt_path, &bgp_path, &key(), &params).unwrap();
    let in_memory = analyze_pair(&rtt, &bgp, &key(), &params).unwrap();
    assert_eq!(from_files, in_memory.report);
    assert_eq!(from_files.entries.len(), 3);
    let matched: Vec<bool> = from_files.entries.iter().map(|e| e.matched).collect();
    assert_eq!(matched, vec![true, false, true]);
    assert!((from_files.correlation_factor - 2.0 / 3.0).abs() < 1e-15);

    std::fs::write(&bgp_path, "").unwrap();
    let empty = run_pair(&rtt_path, &bgp_path, &key(), &params).unwrap();
    assert!(empty.insufficient_data);
    assert_eq!(empty.correlation_factor, 0.0);

    assert!(run_pair(dir.path().join("missing"), &bgp_path, &key(), &params).is_err());
}
