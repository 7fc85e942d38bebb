use std::collections::BTreeSet;
use std::net::Ipv4Addr;

use bgprtt::aggregate::{
    correlation_score, equivalence_classes, jaccard, sweep, EmpiricalCdf, PairSelection, SweepGrid,
};
use bgprtt::pipeline::{match_updates, PairKey};
use bgprtt::synth::{generate, RandomEvents, Scenario};
use bgprtt::{BgpUpdate, Changepoint, MatchReport, Params, Timestamp};
use proptest::prelude::*;

/// Area under the right-continuous step CDF on [0, 1], from its jump points.
fn integrate_cdf(factors: &[f64]) -> f64 {
    let mut xs = factors.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut area = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let next = xs.get(i + 1).copied().unwrap_or(1.0);
        area += (i + 1) as f64 / n * (next - x);
    }
    area
}

fn report(probe: &str, matched: &[u64], unmatched: &[u64]) -> MatchReport {
    let key = PairKey {
        probe_id: probe.into(),
        cp_id: "cp1".into(),
        target: Ipv4Addr::new(193, 0, 14, 129),
        prefix: "193.0.14.0/24".parse().unwrap(),
    };
    let mut ts: Vec<u64> = matched.iter().chain(unmatched).copied().collect();
    ts.sort_unstable();
    let ups: Vec<BgpUpdate> = ts
        .iter()
        .map(|&t| BgpUpdate { cp_id: "cp1".into(), prefix: key.prefix, timestamp: Timestamp(t * 10_000), as_path: vec![1] })
        .collect();
    let cps: Vec<Changepoint> = {
        let mut m = matched.to_vec();
        m.sort_unstable();
        m.into_iter().map(|t| Changepoint { timestamp: Timestamp(t * 10_000), index: 0, mean_before: 0.0, mean_after: 0.0 }).collect()
    };
    match_updates(&key, ts.iter().map(|&t| t as usize).zip(&ups), &cps, 960)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn score_is_cdf_area(factors in prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0..=1.0f64], 1..200)) {
        let s = correlation_score(&factors).unwrap();
        prop_assert!((s - integrate_cdf(&factors)).abs() <= 1e-12);
        let mean = factors.iter().sum::<f64>() / factors.len() as f64;
        prop_assert!((s - (1.0 - mean)).abs() <= 1e-12);
        let cdf = EmpiricalCdf::new(&factors).unwrap();
        prop_assert_eq!(cdf.eval(1.0), 1.0);
        prop_assert!(cdf.steps().windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
    }

    #[test]
    fn raising_a_factor_never_raises_the_score(
        factors in prop::collection::vec(0.0..=1.0f64, 1..100),
        pick in any::<prop::sample::Index>(),
        bump in 0.0..=1.0f64,
    ) {
        let mut raised = factors.clone();
        let i = pick.index(raised.len());
        raised[i] = (raised[i] + bump).min(1.0);
        prop_assert!(correlation_score(&raised).unwrap() <= correlation_score(&factors).unwrap());
    }

    #[test]
    fn score_ignores_factor_order(mut factors in prop::collection::vec(0.0..=1.0f64, 1..100)) {
        let a = correlation_score(&factors).unwrap();
        factors.reverse();
        prop_assert_eq!(a, correlation_score(&factors).unwrap());
    }

    #[test]
    fn classes_partition_and_refine(
        sets in prop::collection::vec(prop::collection::btree_set(0u64..12, 0..8), 1..9),
        lo in 0.0..=1.0f64,
        hi in 0.0..=1.0f64,
    ) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let reports: Vec<MatchReport> = sets
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let matched: Vec<u64> = s.iter().copied().collect();
                let unmatched: Vec<u64> = (100..103).collect();
                report(&format!("p{i}"), &matched, &unmatched)
            })
            .collect();
        let coarse = equivalence_classes(&reports, lo).unwrap();
        let fine = equivalence_classes(&reports, hi).unwrap();
        for c in [&coarse, &fine] {
            let flat: Vec<&String> = c.classes.iter().flatten().collect();
            let unique: BTreeSet<&String> = flat.iter().copied().collect();
            prop_assert_eq!(flat.len(), unique.len());
            prop_assert_eq!(unique.len(), reports.len());
            prop_assert!(c.classes.iter().all(|k| !k.is_empty()));
            for i in 0..c.similarity.len() {
                for j in 0..c.similarity.len() {
                    prop_assert_eq!(c.similarity[i][j], c.similarity[j][i]);
                }
            }
        }
        // each fine class sits inside one coarse class
        for f in &fine.classes {
            prop_assert!(coarse.classes.iter().any(|c| f.iter().all(|m| c.contains(m))));
        }
        let mut rev = reports.clone();
        rev.reverse();
        prop_assert_eq!(equivalence_classes(&rev, lo).unwrap(), coarse);
    }

    #[test]
    fn jaccard_bounds(a in prop::collection::btree_set(0u8..20, 0..10), b in prop::collection::btree_set(0u8..20, 0..10)) {
        let j = jaccard(&a, &b);
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert_eq!(j, jaccard(&b, &a));
        prop_assert_eq!(jaccard(&a, &a), 1.0);
    }
}

#[test]
fn score_rejects_bad_input() {
    assert!(correlation_score(&[]).is_err());
    assert!(correlation_score(&[0.5, 1.5]).is_err());
    assert!(correlation_score(&[f64::NAN]).is_err());
    assert_eq!(correlation_score(&[1.0, 1.0]).unwrap(), 0.0);
    assert_eq!(correlation_score(&[0.0]).unwrap(), 1.0);
}

fn small_scenario() -> Scenario {
    Scenario {
        seed: 5,
        duration: 6 * 86_400,
        probes: 3,
        cps: 2,
        decoy_prefixes: 1,
        random_events: Some(RandomEvents { count: 8, ..RandomEvents::default() }),
        ..Scenario::default()
    }
}

#[test]
fn sweep_is_invariant_to_pair_order() {
    let out = generate(&small_scenario()).unwrap();
    let prefixes = vec![out.truth.prefix, out.truth.decoy_prefixes[0]];
    let grid = SweepGrid { est_values: vec![1.0, 10000.0], shift_values: vec![-240, 0, 240] };
    let params = Params::default();
    let a = sweep(&out.rtt, &out.bgp, out.truth.target, &prefixes, &grid, &params, &PairSelection::default()).unwrap();

    let mut probes = out.truth.probes.clone();
    probes.reverse();
    let mut cps = out.truth.cps.clone();
    cps.reverse();
    let mut rtt = out.rtt.clone();
    rtt.reverse();
    rtt.sort_by_key(|m| m.timestamp);
    let sel = PairSelection { probes: Some(probes), cps: Some(cps), common_cps: false };
    let b = sweep(&rtt, &out.bgp, out.truth.target, &prefixes, &grid, &params, &sel).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[0].cells.len(), 6);
    assert!(a.iter().flat_map(|s| &s.cells).all(|c| c.pairs == 6));
}

#[test]
fn single_pair_single_cell_score_is_one_minus_factor() {
    let sc = Scenario { probes: 1, cps: 1, ..small_scenario() };
    let out = generate(&sc).unwrap();
    let params = Params::default();
    let key = PairKey {
        probe_id: out.truth.probes[0].clone(),
        cp_id: out.truth.cps[0].clone(),
        target: out.truth.target,
        prefix: out.truth.prefix,
    };
    let r = bgprtt::pipeline::analyze_pair(&out.rtt, &out.bgp, &key, &params).unwrap().report;
    let grid = SweepGrid { est_values: vec![params.elbow_slope_threshold], shift_values: vec![0] };
    let s = sweep(&out.rtt, &out.bgp, out.truth.target, &[out.truth.prefix], &grid, &params, &PairSelection::default())
        .unwrap();
    assert_eq!(s[0].cells.len(), 1);
    assert_eq!(s[0].cells[0].score, Some(1.0 - r.correlation_factor));
}

#[test]
fn higher_threshold_never_lowers_changepoint_counts() {
    let out = generate(&small_scenario()).unwrap();
    let params = Params::default();
    for probe in &out.truth.probes {
        let mut series =
            bgprtt::pipeline::RttSeries::prepare(&out.rtt, probe, out.truth.target, &params).unwrap();
        let counts: Vec<usize> = bgprtt::aggregate::DEFAULT_EST_VALUES
            .iter()
            .map(|&est| {
                let p = Params { elbow_slope_threshold: est, ..params.clone() };
                series.select(&p).unwrap().unwrap().segmentation.len()
            })
            .collect();
        assert!(counts.windows(2).all(|w| w[0] <= w[1]), "{probe}: {counts:?}");
    }
}

#[test]
fn empty_grid_and_bad_threshold_are_rejected() {
    let out = generate(&small_scenario()).unwrap();
    let grid = SweepGrid { est_values: vec![], shift_values: vec![0] };
    let sel = PairSelection::default();
    assert!(sweep(&out.rtt, &out.bgp, out.truth.target, &[out.truth.prefix], &grid, &Params::default(), &sel).is_err());
    assert!(equivalence_classes(&[], 1.5).is_err());
    assert!(equivalence_classes(&[], 0.7).unwrap().classes.is_empty());
}
