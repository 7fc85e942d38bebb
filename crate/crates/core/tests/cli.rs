use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bgprtt"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SCENARIO: &str = r#"{
  "seed": 9,
  "duration": 518400,
  "probes": 2,
  "cps": 2,
  "decoy_prefixes": 2,
  "ixp_asn": 6695,
  "loss_rate": 0.02,
  "random_events": { "count": 8 }
}"#;

/// Writes the scenario and generates its files into `dir`.
fn synth_into(dir: &Path) -> PathBuf {
    let scenario = dir.join("scenario.json");
    std::fs::write(&scenario, SCENARIO).unwrap();
    let data = dir.join("data");
    let out = run(&["synth", "--scenario", s(&scenario), "--out", s(&data)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    data
}

/// Relative path to bytes for every file under `dir`.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn common<'a>(data: &'a Path, extra: &[&'a str]) -> Vec<String> {
    let mut v: Vec<String> = vec![
        "--rtt".into(),
        s(&data.join("rtt.ndjson")).into(),
        "--target".into(),
        "193.0.14.129".into(),
    ];
    v.extend(extra.iter().map(|x| x.to_string()));
    v
}

fn commands(data: &Path) -> Vec<(&'static str, Vec<String>)> {
    let bgp = data.join("bgp.ndjson");
    let with_bgp = |extra: &[&str]| {
        let mut v = common(data, &["--bgp", s(&bgp)]);
        v.extend(extra.iter().map(|x| x.to_string()));
        v
    };
    vec![
        ("correlate", with_bgp(&["--prefix", "193.0.14.0/24", "--est", "10000", "--shift", "0", "--tolerance", "960"])),
        (
            "sweep",
            with_bgp(&["--prefix", "193.0.14.0/24", "--prefix", "198.18.0.0/24", "--est-values", "1,10000", "--shift-values", "-120,0,120"]),
        ),
        (
            "validate",
            with_bgp(&[
                "--prefix",
                "193.0.14.0/24",
                "--traceroute",
                s(&data.join("traceroute.ndjson")),
                "--prefix-table",
                s(&data.join("prefixes.csv")),
                "--ixps",
                s(&data.join("ixps.txt")),
                "--probe-as",
                "3333",
            ]),
        ),
        ("changepoints", common(data, &["--emit-elbow"])),
    ]
}

fn run_cmd(name: &str, args: &[String], out: &Path) -> Output {
    let mut c = bin();
    c.arg(name).args(args).arg("--out").arg(out);
    c.output().unwrap()
}

#[test]
fn every_command_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_into(dir.path());
    let again = dir.path().join("data2");
    let scenario = dir.path().join("scenario.json");
    assert_eq!(code(&run(&["synth", "--scenario", s(&scenario), "--out", s(&again)])), 0);
    assert_eq!(snapshot(&data), snapshot(&again));

    for (name, args) in commands(&data) {
        let (a, b) = (dir.path().join(format!("{name}-a")), dir.path().join(format!("{name}-b")));
        let ra = run_cmd(name, &args, &a);
        assert_eq!(code(&ra), 0, "{name}: {}", String::from_utf8_lossy(&ra.stderr));
        let rb = bin().args(["--jobs", "3", name]).args(&args).arg("--out").arg(&b).output().unwrap();
        assert_eq!(code(&rb), 0);
        let norm = |o: &Output, d: &Path| String::from_utf8_lossy(&o.stdout).replace(s(d), "OUT");
        assert_eq!(norm(&ra, &a), norm(&rb, &b), "{name} stdout");
        let (sa, sb) = (snapshot(&a), snapshot(&b));
        assert!(!sa.is_empty(), "{name} wrote nothing");
        assert_eq!(sa, sb, "{name} outputs differ");
    }
}

#[test]
fn correlate_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_into(dir.path());
    let (_, args) = commands(&data).remove(0);
    let out = dir.path().join("c");
    assert_eq!(code(&run_cmd("correlate", &args, &out)), 0);
    for f in ["summary.csv", "cdf.csv", "score.json", "timeline.csv", "classes.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert_eq!(std::fs::read_dir(out.join("reports")).unwrap().count(), 4);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);
}

#[test]
fn sweep_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_into(dir.path());
    let bgp = data.join("bgp.ndjson");
    let base = common(&data, &["--bgp", s(&bgp), "--prefix", "193.0.14.0/24", "--prefix", "198.18.1.0/24"]);
    let out = dir.path().join("full");
    assert_eq!(code(&run_cmd("sweep", &base, &out)), 0);
    let rows = std::fs::read_to_string(out.join("surface.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, 2 * 84);

    let mut single = base.clone();
    single.extend(["--est-values", "10000", "--shift-values", "0", "--prefix", "198.18.0.0/24"].map(String::from));
    let out = dir.path().join("one");
    assert_eq!(code(&run_cmd("sweep", &single, &out)), 0);
    let rows = std::fs::read_to_string(out.join("surface.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_into(dir.path());
    let rtt = data.join("rtt.ndjson");
    let bgp = data.join("bgp.ndjson");
    let out = dir.path().join("o");

    // usage errors
    let missing_prefix = run(&["correlate", "--rtt", s(&rtt), "--bgp", s(&bgp), "--target", "193.0.14.129"]);
    assert_eq!(code(&missing_prefix), 1);
    assert!(!missing_prefix.stderr.is_empty());
    assert_eq!(code(&run(&["frobnicate"])), 1);
    let bad_params = run(&[
        "correlate", "--rtt", s(&rtt), "--bgp", s(&bgp), "--target", "193.0.14.129", "--prefix", "193.0.14.0/24",
        "--tolerance", "100", "--out", s(&out),
    ]);
    assert_eq!(code(&bad_params), 1);
    let bad_scenario = dir.path().join("bad.json");
    std::fs::write(&bad_scenario, r#"{"rtt_period": 0}"#).unwrap();
    assert_eq!(code(&run(&["synth", "--scenario", s(&bad_scenario), "--out", s(&out)])), 1);
    let params_file = dir.path().join("params.json");
    std::fs::write(&params_file, r#"{"no_such_field": 1}"#).unwrap();
    assert_eq!(
        code(&run(&["changepoints", "--rtt", s(&rtt), "--target", "193.0.14.129", "--params", s(&params_file), "--out", s(&out)])),
        1
    );
    assert_eq!(code(&run(&["--help"])), 0);

    // data errors
    let garbage = dir.path().join("garbage.ndjson");
    std::fs::write(&garbage, "not json\n").unwrap();
    let bad_data = run(&[
        "correlate", "--rtt", s(&garbage), "--bgp", s(&bgp), "--target", "193.0.14.129", "--prefix", "193.0.14.0/24",
        "--out", s(&out),
    ]);
    assert_eq!(code(&bad_data), 2);
    assert!(String::from_utf8_lossy(&bad_data.stderr).contains("line 1"));
    let no_table = run(&[
        "validate", "--rtt", s(&rtt), "--bgp", s(&bgp), "--traceroute", s(&data.join("traceroute.ndjson")),
        "--prefix-table", s(&dir.path().join("absent.csv")), "--probe-as", "3333", "--target", "193.0.14.129",
        "--prefix", "193.0.14.0/24", "--out", s(&out),
    ]);
    assert_eq!(code(&no_table), 2);
}

#[test]
fn params_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_into(dir.path());
    let params_file = dir.path().join("params.json");
    std::fs::write(&params_file, r#"{"elbow_slope_threshold": 0.001, "time_shift": 600}"#).unwrap();
    let bgp = data.join("bgp.ndjson");
    let mut args = common(&data, &["--bgp", s(&bgp), "--prefix", "193.0.14.0/24", "--probe", "probe-1", "--cp", "cp-1"]);
    args.extend(["--params".to_string(), s(&params_file).to_string(), "--est".into(), "10000".into(), "--shift".into(), "0".into()]);
    let out = dir.path().join("o");
    assert_eq!(code(&run_cmd("correlate", &args, &out)), 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("reports/probe-1__cp-1.json")).unwrap()).unwrap();
    assert_eq!(report["params"]["elbow_slope_threshold"], 10000.0);
    assert_eq!(report["params"]["time_shift"], 0);
}

#[test]
fn empty_bgp_gives_insufficient_data_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_into(dir.path());
    let empty = dir.path().join("empty.ndjson");
    std::fs::write(&empty, "").unwrap();
    let args = common(&data, &["--bgp", s(&empty), "--prefix", "193.0.14.0/24", "--cp", "cp-1"]);
    let out = dir.path().join("o");
    let r = run_cmd("correlate", &args, &out);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.contains("true")), "{summary}");
    assert!(String::from_utf8_lossy(&r.stdout).contains("insufficient-data"));
}

#[test]
fn changepoints_on_constant_and_step_series() {
    let dir = tempfile::tempdir().unwrap();
    let rtt = dir.path().join("rtt.ndjson");
    let mut text = String::new();
    for k in 0..100u64 {
        let v = 20.0;
        let w = if k < 50 { 20.0 } else { 60.0 };
        for (probe, x) in [("flat", v), ("step", w)] {
            text.push_str(&format!(
                "{{\"probe\":\"{probe}\",\"target\":\"193.0.14.129\",\"ts\":{},\"rtts\":[{x},{},{}],\"ip\":\"193.0.14.129\"}}\n",
                1_000_000 + 240 * k,
                x + 1.0,
                x + 2.0
            ));
        }
    }
    std::fs::write(&rtt, text).unwrap();
    let out = dir.path().join("o");
    let r = run(&["changepoints", "--rtt", s(&rtt), "--target", "193.0.14.129", "--emit-elbow", "--p0", "0.5", "--out", s(&out)]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let csv = std::fs::read_to_string(out.join("changepoints.csv")).unwrap();
    let flat = csv.lines().filter(|l| l.starts_with("flat,")).count();
    assert_eq!(flat, 0);
    assert_eq!(csv.lines().filter(|l| l.starts_with("step,")).count(), 1);
    let elbow = std::fs::read_to_string(out.join("elbow.csv")).unwrap();
    assert!(elbow.lines().next().unwrap().starts_with("probe,i,p_i,cpt_i,delta"));
    assert!(elbow.lines().any(|l| l.starts_with("step,")));
}
