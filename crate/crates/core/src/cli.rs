//! Command-line frontend.
//!
//! Exit codes: 0 on success, 1 for usage or parameter errors, 2 for data errors.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ipnet::Ipv4Net;
use rayon::prelude::*;
use serde::Serialize;

use crate::aggregate::{
    self, emit_match_timeline, equivalence_classes, write_cdf_csv, write_surface_csv, write_timeline_csv,
    EmpiricalCdf, PairSelection, SweepGrid, DEFAULT_EST_VALUES, DEFAULT_JACCARD_THRESHOLD, DEFAULT_SHIFT_VALUES,
};
use crate::changepoint::to_changepoints;
use crate::error::{Error, Result};
use crate::ingest;
use crate::model::{Asn, MatchReport, Params, Timestamp};
use crate::pipeline::{analyze_series, cps_for, probes_for, time_align, PairAnalysis, PairKey, RttSeries};
use crate::synth::{generate, Scenario};
use crate::validate::{build_quadruples, validate_pair, PrefixTable, ValidationReport};

#[derive(Debug, Parser)]
#[command(name = "bgprtt", version, about = "Correlate BGP routing changes with RTT changepoints")]
pub struct Cli {
    /// Worker threads for pair-level parallelism (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Correlate every probe/collector-peer pair for one target and prefix.
    Correlate(CorrelateArgs),
    /// Score a grid of elbow slope thresholds and time shifts.
    Sweep(SweepArgs),
    /// Check matches against traceroute AS paths.
    Validate(ValidateArgs),
    /// Detect RTT changepoints and optionally dump the elbow trace.
    Changepoints(ChangepointArgs),
    /// Generate a synthetic scenario.
    Synth(SynthArgs),
}

/// Workflow parameters; flags override values loaded with `--params`.
#[derive(Debug, Clone, Default, Args)]
pub struct ParamArgs {
    /// JSON file with any subset of the parameters.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub window_start: Option<u64>,
    #[arg(long)]
    pub window_end: Option<u64>,
    /// Elbow slope threshold.
    #[arg(long)]
    pub est: Option<f64>,
    /// Time shift in seconds added to RTT and traceroute timestamps.
    #[arg(long, allow_hyphen_values = true)]
    pub shift: Option<i64>,
    /// Tolerance window in seconds.
    #[arg(long)]
    pub tolerance: Option<u64>,
    /// Penalty schedule base c1.
    #[arg(long)]
    pub c1: Option<f64>,
    /// Penalty schedule offset c2.
    #[arg(long, allow_hyphen_values = true)]
    pub c2: Option<f64>,
    /// Initial penalty p0.
    #[arg(long)]
    pub p0: Option<f64>,
    /// Nominal seconds between RTT measurements.
    #[arg(long)]
    pub rtt_period: Option<u64>,
}

impl ParamArgs {
    pub fn resolve(&self) -> Result<Params> {
        let mut p = match &self.params {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str::<Params>(&text)
                    .map_err(|e| Error::Params(format!("{}: {e}", path.display())))?
            }
            None => Params::default(),
        };
        if let Some(v) = self.window_start {
            p.window_start = Some(Timestamp(v));
        }
        if let Some(v) = self.window_end {
            p.window_end = Some(Timestamp(v));
        }
        if let Some(v) = self.est {
            p.elbow_slope_threshold = v;
        }
        if let Some(v) = self.shift {
            p.time_shift = v;
        }
        if let Some(v) = self.tolerance {
            p.tolerance_window = v;
        }
        if let Some(v) = self.c1 {
            p.penalty_base = v;
        }
        if let Some(v) = self.c2 {
            p.penalty_offset = v;
        }
        if let Some(v) = self.p0 {
            p.initial_penalty = v;
        }
        if let Some(v) = self.rtt_period {
            p.rtt_period = v;
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    #[arg(long)]
    pub rtt: PathBuf,
    #[arg(long)]
    pub bgp: PathBuf,
    #[arg(long)]
    pub target: Ipv4Addr,
    #[arg(long)]
    pub prefix: Ipv4Net,
    /// Restrict to these probes (repeatable).
    #[arg(long = "probe")]
    pub probes: Vec<String>,
    /// Restrict to these collector peers (repeatable).
    #[arg(long = "cp")]
    pub cps: Vec<String>,
    /// Jaccard threshold for probe equivalence classes.
    #[arg(long, default_value_t = DEFAULT_JACCARD_THRESHOLD)]
    pub jaccard: f64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub rtt: PathBuf,
    #[arg(long)]
    pub bgp: PathBuf,
    #[arg(long)]
    pub target: Ipv4Addr,
    /// Prefixes to score (repeatable).
    #[arg(long = "prefix", required = true)]
    pub prefixes: Vec<Ipv4Net>,
    /// Comma-separated elbow slope thresholds.
    #[arg(long, value_delimiter = ',')]
    pub est_values: Vec<f64>,
    /// Comma-separated time shifts in seconds.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub shift_values: Vec<i64>,
    #[arg(long = "probe")]
    pub probes: Vec<String>,
    #[arg(long = "cp")]
    pub cps: Vec<String>,
    /// Only use collector peers with updates for every prefix.
    #[arg(long)]
    pub common_cps: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub rtt: PathBuf,
    #[arg(long)]
    pub bgp: PathBuf,
    #[arg(long)]
    pub traceroute: PathBuf,
    #[arg(long)]
    pub prefix_table: PathBuf,
    /// File listing IXP ASNs, one per line.
    #[arg(long)]
    pub ixps: Option<PathBuf>,
    /// AS of the probes, assigned to leading private hops.
    #[arg(long)]
    pub probe_as: Asn,
    #[arg(long)]
    pub target: Ipv4Addr,
    #[arg(long)]
    pub prefix: Ipv4Net,
    #[arg(long = "probe")]
    pub probes: Vec<String>,
    #[arg(long = "cp")]
    pub cps: Vec<String>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct ChangepointArgs {
    #[arg(long)]
    pub rtt: PathBuf,
    #[arg(long)]
    pub target: Ipv4Addr,
    #[arg(long = "probe")]
    pub probes: Vec<String>,
    /// Also write elbow.csv with (i, p_i, cpt_i, delta) rows.
    #[arg(long)]
    pub emit_elbow: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[command(flatten)]
    pub params: ParamArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                1
            } else {
                2
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Error::params("--jobs must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::params(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Correlate(a) => cmd_correlate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Validate(a) => cmd_validate(&a),
        Command::Changepoints(a) => cmd_changepoints(&a),
        Command::Synth(a) => cmd_synth(&a),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn file_safe(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

fn or_all(given: &[String], all: Vec<String>) -> Vec<String> {
    if given.is_empty() {
        all
    } else {
        given.to_vec()
    }
}

/// Analyzes every requested pair, one prepared series per probe, in sorted order.
fn analyze_all(
    rtt: &[crate::model::RttMeasurement],
    bgp: &[crate::model::BgpUpdate],
    probes: &[String],
    cps: &[String],
    target: Ipv4Addr,
    prefix: Ipv4Net,
    params: &Params,
) -> Result<Vec<PairAnalysis>> {
    let per_probe: Vec<Vec<PairAnalysis>> = probes
        .par_iter()
        .map(|probe| {
            let mut series = RttSeries::prepare(rtt, probe, target, params)?;
            cps.iter()
                .map(|cp| {
                    let key = PairKey { probe_id: probe.clone(), cp_id: cp.clone(), target, prefix };
                    analyze_series(&mut series, bgp, &key, params)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_probe.into_iter().flatten().collect())
}

#[derive(Serialize)]
struct ReportFile<'a> {
    params: &'a Params,
    selected_penalty: Option<f64>,
    #[serde(flatten)]
    report: &'a MatchReport,
}

pub fn cmd_correlate(a: &CorrelateArgs) -> Result<()> {
    let params = a.params.resolve()?;
    let rtt = ingest::read_rtt(&a.rtt)?;
    let bgp = ingest::read_bgp(&a.bgp)?;
    let probes = or_all(&a.probes, probes_for(&rtt, a.target));
    let cps = or_all(&a.cps, cps_for(&bgp, a.prefix));
    let analyses = analyze_all(&rtt, &bgp, &probes, &cps, a.target, a.prefix, &params)?;

    let summary_path = a.out.join("summary.csv");
    let mut summary = csv::Writer::from_writer(create(&summary_path)?);
    summary.write_record(["probe", "cp", "target", "prefix", "valid_updates", "matched", "factor", "insufficient_data"])?;
    for an in &analyses {
        let r = &an.report;
        summary.write_record([
            r.probe_id.clone(),
            r.cp_id.clone(),
            r.target.to_string(),
            r.prefix.to_string(),
            r.entries.len().to_string(),
            r.matched_count().to_string(),
            r.correlation_factor.to_string(),
            r.insufficient_data.to_string(),
        ])?;
        let file = ReportFile {
            params: &params,
            selected_penalty: an.selection.as_ref().map(|s| s.trace.selected_penalty),
            report: r,
        };
        let name = format!("{}__{}.json", file_safe(&r.probe_id), file_safe(&r.cp_id));
        write_json(&a.out.join("reports").join(name), &file)?;
    }
    summary.flush().map_err(|e| Error::io(&summary_path, e))?;

    let reports: Vec<MatchReport> = analyses.into_iter().map(|a| a.report).collect();
    let factors: Vec<f64> = reports.iter().filter(|r| !r.insufficient_data).map(|r| r.correlation_factor).collect();
    let cdf_path = a.out.join("cdf.csv");
    if factors.is_empty() {
        let mut w = create(&cdf_path)?;
        writeln!(w, "series,x,F").map_err(|e| Error::io(&cdf_path, e))?;
        finish(w, &cdf_path)?;
    } else {
        let w = create(&cdf_path)?;
        write_cdf_csv(w, &a.prefix.to_string(), &EmpiricalCdf::new(&factors)?)?;
        write_json(
            &a.out.join("score.json"),
            &serde_json::json!({
                "target": a.target,
                "prefix": a.prefix,
                "pairs": factors.len(),
                "score": aggregate::correlation_score(&factors)?,
            }),
        )?;
    }

    let timeline_path = a.out.join("timeline.csv");
    write_timeline_csv(create(&timeline_path)?, &emit_match_timeline(&reports))?;

    let classes: Vec<_> = cps
        .iter()
        .map(|cp| {
            let mine: Vec<MatchReport> = reports.iter().filter(|r| &r.cp_id == cp).cloned().collect();
            equivalence_classes(&mine, a.jaccard).map(|c| serde_json::json!({ "cp": cp, "classing": c }))
        })
        .collect::<Result<_>>()?;
    write_json(&a.out.join("classes.json"), &classes)?;

    print_summary(&reports);
    Ok(())
}

fn print_summary(reports: &[MatchReport]) {
    println!("probe\tcp\tvalid\tmatched\tfactor");
    for r in reports {
        let factor = if r.insufficient_data { "insufficient-data".to_string() } else { format!("{:.4}", r.correlation_factor) };
        println!("{}\t{}\t{}\t{}\t{}", r.probe_id, r.cp_id, r.entries.len(), r.matched_count(), factor);
    }
}

pub fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let params = a.params.resolve()?;
    let rtt = ingest::read_rtt(&a.rtt)?;
    let bgp = ingest::read_bgp(&a.bgp)?;
    let grid = SweepGrid {
        est_values: if a.est_values.is_empty() { DEFAULT_EST_VALUES.to_vec() } else { a.est_values.clone() },
        shift_values: if a.shift_values.is_empty() { DEFAULT_SHIFT_VALUES.to_vec() } else { a.shift_values.clone() },
    };
    let selection = PairSelection {
        probes: (!a.probes.is_empty()).then(|| a.probes.clone()),
        cps: (!a.cps.is_empty()).then(|| a.cps.clone()),
        common_cps: a.common_cps,
    };
    let surfaces = aggregate::sweep(&rtt, &bgp, a.target, &a.prefixes, &grid, &params, &selection)?;
    let path = a.out.join("surface.csv");
    write_surface_csv(create(&path)?, &surfaces)?;
    println!("wrote {} cells to {}", surfaces.iter().map(|s| s.cells.len()).sum::<usize>(), path.display());
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn cmd_validate(a: &ValidateArgs) -> Result<()> {
    let params = a.params.resolve()?;
    let rows = ingest::read_prefix_table(&a.prefix_table)?;
    let ixps = match &a.ixps {
        Some(p) => ingest::read_ixp_list(p)?,
        None => Vec::new(),
    };
    let table = PrefixTable::new(&rows, ixps, a.probe_as);
    let rtt = ingest::read_rtt(&a.rtt)?;
    let bgp = ingest::read_bgp(&a.bgp)?;
    let traceroutes = ingest::read_traceroute(&a.traceroute)?;
    let probes = or_all(&a.probes, probes_for(&rtt, a.target));
    let cps = or_all(&a.cps, cps_for(&bgp, a.prefix));
    let analyses = analyze_all(&rtt, &bgp, &probes, &cps, a.target, a.prefix, &params)?;

    let reports: Vec<ValidationReport> = analyses
        .par_iter()
        .map(|an| {
            let mine: Vec<_> = traceroutes
                .iter()
                .filter(|t| t.probe_id == an.report.probe_id && t.target == a.target)
                .cloned()
                .collect();
            let quads = build_quadruples(&an.updates, &an.valid, &mine, &table, params.time_shift)?;
            Ok(validate_pair(&quads, &an.report))
        })
        .collect::<Result<_>>()?;

    let header = ["probe", "cp", "bgp_rtt_factor", "bgp_tr_corr", "bgp_tr_fn", "q_plus", "q_minus"];
    let row = |v: &ValidationReport| {
        [
            v.probe_id.clone(),
            v.cp_id.clone(),
            v.bgp_rtt_factor.to_string(),
            opt(v.bgp_traceroute_correlation),
            opt(v.bgp_traceroute_false_negative),
            v.q_plus_size.to_string(),
            v.q_minus_size.to_string(),
        ]
    };
    let outputs: [(&str, fn(&ValidationReport) -> bool); 3] = [
        ("validation.csv", |_| true),
        ("validation_corr.csv", |v| v.q_plus_size > 0),
        ("validation_fn.csv", |v| v.q_minus_size > 0),
    ];
    for (name, keep) in outputs {
        let path = a.out.join(name);
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(header)?;
        for v in reports.iter().filter(|v| keep(v)) {
            w.write_record(row(v))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    write_json(&a.out.join("validation.json"), &reports)?;
    println!("validated {} pairs", reports.len());
    Ok(())
}

pub fn cmd_changepoints(a: &ChangepointArgs) -> Result<()> {
    let params = a.params.resolve()?;
    let rtt = ingest::read_rtt(&a.rtt)?;
    let probes = or_all(&a.probes, probes_for(&rtt, a.target));
    let results: Vec<_> = probes
        .par_iter()
        .map(|probe| {
            let mut series = RttSeries::prepare(&rtt, probe, a.target, &params)?;
            let selection = series.select(&params)?;
            let cps = match &selection {
                Some(s) => to_changepoints(&time_align(&series.samples, params.time_shift)?, &s.segmentation)?,
                None => Vec::new(),
            };
            Ok((probe.clone(), selection, cps))
        })
        .collect::<Result<_>>()?;

    let path = a.out.join("changepoints.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["probe", "target", "timestamp", "index", "mean_before", "mean_after", "penalty"])?;
    for (probe, selection, cps) in &results {
        let penalty = selection.as_ref().map(|s| s.trace.selected_penalty);
        for c in cps {
            w.write_record([
                probe.clone(),
                a.target.to_string(),
                c.timestamp.to_string(),
                c.index.to_string(),
                c.mean_before.to_string(),
                c.mean_after.to_string(),
                opt(penalty),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    if a.emit_elbow {
        let path = a.out.join("elbow.csv");
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(["probe", "i", "p_i", "cpt_i", "delta", "selected", "exhausted"])?;
        for (probe, selection, _) in &results {
            let Some(s) = selection else { continue };
            for r in &s.trace.rows {
                w.write_record([
                    probe.clone(),
                    r.iteration.to_string(),
                    r.penalty.to_string(),
                    r.changepoints.to_string(),
                    opt(r.difference_quotient),
                    (r.penalty == s.trace.selected_penalty).to_string(),
                    s.trace.exhausted.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    for (probe, selection, cps) in &results {
        let p = opt(selection.as_ref().map(|s| s.trace.selected_penalty));
        println!("{probe}\tpenalty={p}\tchangepoints={}", cps.len());
    }
    Ok(())
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut scenario = Scenario::from_json_file(&a.scenario)?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    let out = generate(&scenario)?;
    let files = out.write_to(&a.out)?;
    for p in [&files.rtt, &files.bgp, &files.traceroute, &files.truth, &files.prefix_table, &files.ixps] {
        println!("{}", p.display());
    }
    Ok(())
}
