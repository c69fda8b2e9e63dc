//! Command-line surface. The pipeline is file-based: `synth` emits a
//! world, `ingest` caches user profiles, `infer` and `radiation` emit OD
//! matrices, `evaluate` scores an estimate against a truth matrix, and
//! `cluster` runs the hourly-activity analysis. Every output directory
//! gets a `manifest.json` recording the invocation and input digests.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::assign::{
    assign_hard, assign_soft, assign_temporal_hard, write_hard_assignments,
    write_soft_assignments, AssignmentMode, AssignmentPolicy, WindowPreset,
};
use crate::cluster::{hourly_distributions, k_medoids};
use crate::flow::{
    flows_from_hard, flows_from_soft, read_od_csv, write_od_csv, CommuterMarginals,
    CommutingMode, FlowMatrix, Provenance,
};
use crate::geo::{load_regions, RegionSet};
use crate::ingest::{build_profiles, filter_users, parse_events, read_profiles, write_profiles};
use crate::metrics::{
    correlation_with_permutation, cpc, daytime_evening_ratio, distance_histogram,
    inout_ratio_stats, DistanceHistogram,
};
use crate::radiation::{
    alpha_estimate, radiation_one_param, radiation_standard, Alpha, RadiationInputs,
};
use crate::synth::{generate_events, generate_world, write_regions_geojson, SynthConfig};

#[derive(Parser)]
#[command(
    name = "commute",
    version,
    about = "Infer commuting flows from geotagged event streams and benchmark them"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world: regions, events, and the true OD matrix.
    Synth(SynthArgs),
    /// Parse events, resolve regions, and cache filtered user profiles.
    Ingest(IngestArgs),
    /// Infer an OD matrix from cached profiles.
    Infer(InferArgs),
    /// Compute a radiation-model OD matrix from regions and marginals.
    Radiation(RadiationArgs),
    /// Score an estimated OD matrix against a truth matrix.
    Evaluate(EvaluateArgs),
    /// Cluster regions by hourly activity and relate clusters to flows.
    Cluster(ClusterArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Hard,
    TemporalHard,
    TemporalSoft,
}

#[derive(Clone, Copy, ValueEnum)]
enum WindowArg {
    Workday,
    Restricted,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Standard,
    OneParam,
}

#[derive(Clone, Copy, ValueEnum)]
enum CommutingArg {
    All,
    External,
}

impl From<CommutingArg> for CommutingMode {
    fn from(c: CommutingArg) -> Self {
        match c {
            CommutingArg::All => CommutingMode::All,
            CommutingArg::External => CommutingMode::External,
        }
    }
}

/// `per-region` (Eq.-style area estimate per origin) or `global:<l>` with a
/// characteristic length l in km.
#[derive(Clone, Debug)]
enum AlphaFrom {
    PerRegion,
    Global(f64),
}

fn parse_alpha_from(s: &str) -> Result<AlphaFrom, String> {
    if s == "per-region" {
        return Ok(AlphaFrom::PerRegion);
    }
    if let Some(l) = s.strip_prefix("global:") {
        let l: f64 = l.parse().map_err(|_| format!("bad length in {s:?}"))?;
        return Ok(AlphaFrom::Global(l));
    }
    Err("expected per-region or global:<l>".into())
}

/// `start:end:step`, e.g. `0.70:0.95:0.05`.
#[derive(Clone, Debug)]
struct LambdaSweep {
    start: f64,
    end: f64,
    step: f64,
}

impl LambdaSweep {
    fn values(&self) -> Vec<f64> {
        let n = ((self.end - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| ((self.start + i as f64 * self.step) * 1e9).round() / 1e9)
            .collect()
    }
}

fn parse_lambda_sweep(s: &str) -> Result<LambdaSweep, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err("expected start:end:step".into());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.parse().map_err(|_| format!("bad number {p:?}")))
        .collect::<Result<_, String>>()?;
    let (start, end, step) = (nums[0], nums[1], nums[2]);
    if step <= 0.0 || end < start || !(0.0..=1.0).contains(&start) || end > 1.0 {
        return Err("need 0 <= start <= end <= 1 and step > 0".into());
    }
    Ok(LambdaSweep { start, end, step })
}

#[derive(Args)]
struct SynthArgs {
    /// Generator config, JSON.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    regions: PathBuf,
    /// Minimum assigned tweets per kept user.
    #[arg(long, default_value_t = 12)]
    min_tweets: u64,
    /// Minimum first-to-last span, in days, for each of a user's top two regions.
    #[arg(long, default_value_t = 30)]
    min_span_days: i64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    /// Profile cache from `ingest`.
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long)]
    regions: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Hard)]
    mode: ModeArg,
    /// Dominant-region threshold for hard mode.
    #[arg(long, default_value_t = 0.9)]
    lambda: f64,
    /// Emit one matrix per lambda in `start:end:step` (hard mode only).
    #[arg(long, value_parser = parse_lambda_sweep)]
    lambda_sweep: Option<LambdaSweep>,
    /// Hour-window preset for the temporal modes.
    #[arg(long, value_enum, default_value_t = WindowArg::Workday)]
    window: WindowArg,
    /// Restrict the work window to weekdays.
    #[arg(long)]
    weekdays_only_work: bool,
    /// Minimum in-window span, in days, for a region to qualify.
    #[arg(long, default_value_t = 30)]
    min_span_days: i64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RadiationArgs {
    #[arg(long)]
    regions: PathBuf,
    /// OD matrix whose row sums provide the commuter marginals c_i.
    /// Without it every inhabitant commutes (c_i = population).
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CommutingArg::External)]
    commuting: CommutingArg,
    #[arg(long, value_enum, default_value_t = ModelArg::Standard)]
    model: ModelArg,
    /// Global model parameter for the one-param model.
    #[arg(long)]
    alpha: Option<f64>,
    /// Derive alpha from region areas: per-region or global:<l>.
    #[arg(long, value_parser = parse_alpha_from)]
    alpha_from_area: Option<AlphaFrom>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Estimated OD matrix (CSV).
    #[arg(long)]
    estimate: PathBuf,
    /// Reference OD matrix (CSV).
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    regions: PathBuf,
    #[arg(long, value_enum, default_value_t = CommutingArg::External)]
    commuting: CommutingArg,
    /// Distance-histogram bin count.
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Profile cache; when given, a population-vs-tweets scatter is emitted.
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    profiles: PathBuf,
    #[arg(long)]
    regions: PathBuf,
    /// Number of clusters.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// OD matrix for the in/out-ratio analysis.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Permutation-test replicates.
    #[arg(long, default_value_t = 999)]
    replicates: usize,
    /// Permutation-test seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

// --- Manifest ------------------------------------------------------------

#[derive(Serialize)]
struct RunManifest {
    command: String,
    args: Vec<String>,
    /// sha256 digest per input file.
    inputs: BTreeMap<String, String>,
    seed: Option<u64>,
    version: String,
    duration_ms: u128,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn digest_inputs(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
        .collect()
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = out.join(name);
    Ok(BufWriter::new(File::create(&path).with_context(|| {
        format!("creating {}", path.display())
    })?))
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(out, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

// --- Entry point ---------------------------------------------------------

pub fn run() -> Result<()> {
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let started = Instant::now();
    let (name, out_dir, inputs, seed, print_manifest) = match &cli.command {
        Command::Synth(a) => {
            let seed = cmd_synth(a)?;
            ("synth", a.out.clone(), vec![a.config.clone()], Some(seed), true)
        }
        Command::Ingest(a) => {
            cmd_ingest(a)?;
            let inputs = vec![a.events.clone(), a.regions.clone()];
            ("ingest", a.out.clone(), inputs, None, false)
        }
        Command::Infer(a) => {
            cmd_infer(a)?;
            let inputs = vec![a.profiles.clone(), a.regions.clone()];
            ("infer", a.out.clone(), inputs, None, false)
        }
        Command::Radiation(a) => {
            cmd_radiation(a)?;
            let mut inputs = vec![a.regions.clone()];
            inputs.extend(a.truth.clone());
            ("radiation", a.out.clone(), inputs, None, false)
        }
        Command::Evaluate(a) => {
            cmd_evaluate(a)?;
            let mut inputs = vec![a.estimate.clone(), a.truth.clone(), a.regions.clone()];
            inputs.extend(a.profiles.clone());
            ("evaluate", a.out.clone(), inputs, None, false)
        }
        Command::Cluster(a) => {
            cmd_cluster(a)?;
            let mut inputs = vec![a.profiles.clone(), a.regions.clone()];
            inputs.extend(a.truth.clone());
            ("cluster", a.out.clone(), inputs, Some(a.seed), false)
        }
    };
    let paths: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let manifest = RunManifest {
        command: name.to_string(),
        args: argv,
        inputs: digest_inputs(&paths)?,
        seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        duration_ms: started.elapsed().as_millis(),
    };
    write_json(&out_dir, "manifest.json", &manifest)?;
    if print_manifest {
        println!("{}", serde_json::to_string_pretty(&manifest)?);
    }
    Ok(())
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

// --- synth ---------------------------------------------------------------

fn cmd_synth(args: &SynthArgs) -> Result<u64> {
    prepare_out(&args.out)?;
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut config: SynthConfig = serde_json::from_str(&text).context("parsing synth config")?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let world = generate_world(&config)?;
    let mut w = create(&args.out, "regions.geojson")?;
    write_regions_geojson(&world.regions, &mut w)?;
    let mut w = create(&args.out, "events.jsonl")?;
    let lines = generate_events(&world, &config, &mut w)?;
    let mut w = create(&args.out, "truth.csv")?;
    write_od_csv(&mut w, &world.truth)?;
    eprintln!(
        "synth: {} regions, {} users, {} events",
        world.regions.len(),
        config.commuters.num_users,
        lines
    );
    Ok(config.seed)
}

// --- ingest --------------------------------------------------------------

#[derive(Serialize)]
struct IngestReport {
    lines: u64,
    parsed: u64,
    parse_errors: u64,
    events_assigned: u64,
    events_dropped: u64,
    /// Share of parsed events resolved to a region; null with no events.
    assigned_fraction: Option<f64>,
    users_before_filter: usize,
    users_after_filter: usize,
}

fn cmd_ingest(args: &IngestArgs) -> Result<()> {
    prepare_out(&args.out)?;
    let rs = load_regions(&args.regions)?;
    let events_file = File::open(&args.events)
        .with_context(|| format!("opening {}", args.events.display()))?;
    let (events, parse_tally) = parse_events(BufReader::new(events_file))?;
    let (profiles, build_tally) = build_profiles(events, &rs);
    let users_before = profiles.len();
    let profiles = filter_users(profiles, args.min_tweets, args.min_span_days);
    let mut w = create(&args.out, "profiles.jsonl")?;
    write_profiles(&mut w, &profiles)?;
    let resolved_of = build_tally.assigned + build_tally.dropped;
    let report = IngestReport {
        lines: parse_tally.lines,
        parsed: parse_tally.parsed,
        parse_errors: parse_tally.parse_errors,
        events_assigned: build_tally.assigned,
        events_dropped: build_tally.dropped,
        assigned_fraction: (resolved_of > 0)
            .then(|| build_tally.assigned as f64 / resolved_of as f64),
        users_before_filter: users_before,
        users_after_filter: profiles.len(),
    };
    write_json(&args.out, "ingest_report.json", &report)?;
    eprintln!(
        "ingest: {} events parsed ({} errors), {} users kept of {}",
        report.parsed, report.parse_errors, report.users_after_filter, report.users_before_filter
    );
    Ok(())
}

// --- infer ---------------------------------------------------------------

fn hard_pass(
    profiles: &BTreeMap<String, crate::ingest::UserProfile>,
    rs: &RegionSet,
    lambda: f64,
) -> Result<(FlowMatrix<f64>, Vec<crate::assign::HardAssignment>)> {
    let mut assignments = Vec::new();
    for profile in profiles.values() {
        match assign_hard(profile, lambda) {
            Ok(a) => assignments.push(a),
            Err(e) => eprintln!("warning: skipping user: {e}"),
        }
    }
    let m = flows_from_hard(&assignments, rs)?;
    Ok((m, assignments))
}

fn cmd_infer(args: &InferArgs) -> Result<()> {
    prepare_out(&args.out)?;
    let rs = load_regions(&args.regions)?;
    let file = File::open(&args.profiles)
        .with_context(|| format!("opening {}", args.profiles.display()))?;
    let profiles = read_profiles(BufReader::new(file))?;
    let preset = match args.window {
        WindowArg::Workday => WindowPreset::Workday,
        WindowArg::Restricted => WindowPreset::Restricted,
    };
    match args.mode {
        ModeArg::Hard => {
            if let Some(sweep) = &args.lambda_sweep {
                for lambda in sweep.values() {
                    let (m, _) = hard_pass(&profiles, &rs, lambda)?;
                    let name = format!("od_twitter_lambda_{lambda:.2}.csv");
                    let mut w = create(&args.out, &name)?;
                    write_od_csv(&mut w, &m)?;
                }
                return Ok(());
            }
            let (m, assignments) = hard_pass(&profiles, &rs, args.lambda)?;
            let mut w = create(&args.out, "assignments.csv")?;
            write_hard_assignments(&mut w, &assignments)?;
            let mut w = create(&args.out, "od_twitter.csv")?;
            write_od_csv(&mut w, &m)?;
        }
        ModeArg::TemporalHard => {
            if args.lambda_sweep.is_some() {
                bail!("--lambda-sweep applies to hard mode only");
            }
            let mut policy = AssignmentPolicy::temporal(
                AssignmentMode::TemporalHard,
                preset,
                args.weekdays_only_work,
            );
            policy.min_span_days = args.min_span_days;
            let assignments: Vec<_> = profiles
                .values()
                .filter_map(|p| assign_temporal_hard(p, &policy))
                .collect();
            let m: FlowMatrix<f64> = if assignments.is_empty() {
                eprintln!("warning: no user qualified in both windows; matrix is empty");
                FlowMatrix::from_region_set(&rs, Provenance::TwitterHard)
            } else {
                flows_from_hard(&assignments, &rs)?
            };
            let mut w = create(&args.out, "assignments.csv")?;
            write_hard_assignments(&mut w, &assignments)?;
            let mut w = create(&args.out, "od_twitter.csv")?;
            write_od_csv(&mut w, &m)?;
        }
        ModeArg::TemporalSoft => {
            if args.lambda_sweep.is_some() {
                bail!("--lambda-sweep applies to hard mode only");
            }
            let mut policy = AssignmentPolicy::temporal(
                AssignmentMode::TemporalSoft,
                preset,
                args.weekdays_only_work,
            );
            policy.min_span_days = args.min_span_days;
            let assignments: Vec<_> = profiles
                .values()
                .filter_map(|p| assign_soft(p, &policy))
                .collect();
            let m: FlowMatrix<f64> = if assignments.is_empty() {
                eprintln!("warning: no user qualified in both windows; matrix is empty");
                FlowMatrix::from_region_set(&rs, Provenance::TwitterSoft)
            } else {
                flows_from_soft(&assignments, &rs)?
            };
            let mut w = create(&args.out, "assignments.csv")?;
            write_soft_assignments(&mut w, &assignments)?;
            let mut w = create(&args.out, "od_twitter.csv")?;
            write_od_csv(&mut w, &m)?;
        }
    }
    eprintln!("infer: wrote {}", args.out.join("od_twitter.csv").display());
    Ok(())
}

// --- radiation -----------------------------------------------------------

fn cmd_radiation(args: &RadiationArgs) -> Result<()> {
    prepare_out(&args.out)?;
    let rs = load_regions(&args.regions)?;
    let populations = rs.populations();
    let marginals = match &args.truth {
        Some(path) => {
            let file =
                File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let truth: FlowMatrix<f64> = read_od_csv(BufReader::new(file), &rs)?;
            CommuterMarginals::from_matrix(&truth, args.commuting.into(), populations)
        }
        None => CommuterMarginals {
            c: populations.clone(),
            n: populations,
        },
    };
    let inputs = RadiationInputs::from_region_set(&rs, marginals);
    let (m, zero_rows) = match args.model {
        ModelArg::Standard => {
            if args.alpha.is_some() || args.alpha_from_area.is_some() {
                bail!("--alpha/--alpha-from-area apply to --model one-param only");
            }
            radiation_standard(&inputs)?
        }
        ModelArg::OneParam => {
            let alpha = match (&args.alpha, &args.alpha_from_area) {
                (Some(_), Some(_)) => bail!("--alpha conflicts with --alpha-from-area"),
                (Some(a), None) => Alpha::Global(*a),
                (None, Some(AlphaFrom::Global(l))) => {
                    let (a, clamped) = alpha_estimate(l * l)?;
                    if clamped {
                        eprintln!("warning: length {l} km outside [1, 65], clamped");
                    }
                    Alpha::Global(a)
                }
                (None, Some(AlphaFrom::PerRegion)) => {
                    let mut clamped_count = 0usize;
                    let mut alphas = Vec::with_capacity(rs.len());
                    for region in rs.regions() {
                        let (a, clamped) = alpha_estimate(region.area_km2())?;
                        clamped_count += clamped as usize;
                        alphas.push(a);
                    }
                    if clamped_count > 0 {
                        eprintln!("warning: {clamped_count} region lengths clamped to [1, 65] km");
                    }
                    Alpha::PerOrigin(alphas)
                }
                (None, None) => bail!("--model one-param needs --alpha or --alpha-from-area"),
            };
            radiation_one_param(&inputs, &alpha)?
        }
    };
    if !zero_rows.is_empty() {
        eprintln!("warning: {} all-zero rows in the prediction", zero_rows.len());
    }
    let mut w = create(&args.out, "od_radiation.csv")?;
    write_od_csv(&mut w, &m)?;
    eprintln!("radiation: wrote {}", args.out.join("od_radiation.csv").display());
    Ok(())
}

// --- evaluate ------------------------------------------------------------

#[derive(Serialize)]
struct EvaluateReport {
    cpc: f64,
    numerator: f64,
    denominator: f64,
    commuting: String,
    outward_error_mean: f64,
    outward_error_max: f64,
    /// Region ids whose row is all-zero in either matrix.
    zero_rows: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scatter_pearson: Option<f64>,
}

fn histogram_edges(rs: &RegionSet, bins: usize) -> Vec<f64> {
    let d = rs.centroid_distances_km();
    let max = d
        .iter()
        .flatten()
        .copied()
        .fold(0.0f64, f64::max)
        .max(1.0);
    // Slight headroom keeps the farthest pair out of the overflow bin.
    let width = max * 1.000001 / bins as f64;
    (0..=bins).map(|i| i as f64 * width).collect()
}

fn write_histogram_csv(
    out: &Path,
    name: &str,
    est: &DistanceHistogram<f64>,
    truth: &DistanceHistogram<f64>,
) -> Result<()> {
    let mut w = create(out, name)?;
    writeln!(w, "bin_low_km,bin_high_km,estimate_mass,truth_mass")?;
    let n = est.edges.len() - 1;
    for b in 0..n {
        writeln!(
            w,
            "{},{},{},{}",
            est.edges[b],
            est.edges[b + 1],
            est.mass[b],
            truth.mass[b]
        )?;
    }
    writeln!(w, "{},inf,{},{}", est.edges[n], est.mass[n], truth.mass[n])?;
    Ok(())
}

/// Minimal SVG: the two histograms as step polylines.
fn write_histogram_svg(
    out: &Path,
    name: &str,
    est: &DistanceHistogram<f64>,
    truth: &DistanceHistogram<f64>,
) -> Result<()> {
    let (width, height, pad) = (640.0, 360.0, 40.0);
    let n = est.edges.len() - 1;
    let max_mass = est
        .mass
        .iter()
        .chain(truth.mass.iter())
        .copied()
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let polyline = |mass: &[f64]| -> String {
        let mut pts = Vec::new();
        for b in 0..n {
            let y = height - pad - (mass[b] / max_mass) * (height - 2.0 * pad);
            let x0 = pad + b as f64 / n as f64 * (width - 2.0 * pad);
            let x1 = pad + (b + 1) as f64 / n as f64 * (width - 2.0 * pad);
            pts.push(format!("{x0:.1},{y:.1} {x1:.1},{y:.1}"));
        }
        pts.join(" ")
    };
    let mut w = create(out, name)?;
    writeln!(
        w,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    )?;
    writeln!(
        w,
        "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>"
    )?;
    writeln!(
        w,
        "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"{}\"/>",
        polyline(&est.mass)
    )?;
    writeln!(
        w,
        "<polyline fill=\"none\" stroke=\"indianred\" stroke-width=\"2\" points=\"{}\"/>",
        polyline(&truth.mass)
    )?;
    writeln!(
        w,
        "<text x=\"{pad}\" y=\"20\" font-family=\"sans-serif\" font-size=\"12\">commuter mass by trip distance (blue: estimate, red: truth)</text>"
    )?;
    writeln!(w, "</svg>")?;
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    prepare_out(&args.out)?;
    if args.bins == 0 {
        bail!("--bins must be positive");
    }
    let rs = load_regions(&args.regions)?;
    let read = |path: &Path| -> Result<FlowMatrix<f64>> {
        let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        Ok(read_od_csv(BufReader::new(file), &rs)?)
    };
    let estimate = read(&args.estimate)?;
    let truth = read(&args.truth)?;
    let mode: CommutingMode = args.commuting.into();
    let (estimate, truth) = match mode {
        CommutingMode::All => (estimate, truth),
        CommutingMode::External => (estimate.zero_diagonal(), truth.zero_diagonal()),
    };
    // Rescale the estimate's rows to the truth's outward totals so sources
    // with different overall mass (user counts, probability mass) compare
    // on distribution shape. Radiation matrices built from the same truth
    // marginals are unchanged.
    let marginals = CommuterMarginals {
        c: (0..truth.k()).map(|i| truth.row_sum(i)).collect(),
        n: rs.populations(),
    };
    let (estimate, _) = crate::flow::normalize_rows(&estimate, &marginals, CommutingMode::All)?;
    let report = cpc(&estimate, &truth)?;

    let mut w = create(&args.out, "per_region_error.csv")?;
    writeln!(w, "region_id,outward_error,zero_row")?;
    for i in 0..rs.len() {
        writeln!(
            w,
            "{},{},{}",
            rs.id_of(i),
            report.outward_error[i],
            report.zero_rows.contains(&i)
        )?;
    }
    drop(w);

    let edges = histogram_edges(&rs, args.bins);
    let est_hist = distance_histogram(&estimate, &rs, &edges)?;
    let truth_hist = distance_histogram(&truth, &rs, &edges)?;
    write_histogram_csv(&args.out, "distance_histogram.csv", &est_hist, &truth_hist)?;
    write_histogram_svg(&args.out, "distance_histogram.svg", &est_hist, &truth_hist)?;

    let scatter_pearson = match &args.profiles {
        None => None,
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let profiles = read_profiles(BufReader::new(file))?;
            let mut tweets = vec![0u64; rs.len()];
            for p in profiles.values() {
                for (region, visit) in &p.visits {
                    if let Some(i) = rs.index_of(region) {
                        tweets[i] += visit.tweet_count;
                    }
                }
            }
            let mut w = create(&args.out, "scatter.csv")?;
            writeln!(w, "region_id,population,tweets")?;
            for i in 0..rs.len() {
                writeln!(w, "{},{},{}", rs.id_of(i), rs.region(i).population, tweets[i])?;
            }
            let pops = rs.populations();
            let tweets: Vec<f64> = tweets.iter().map(|&t| t as f64).collect();
            match correlation_with_permutation(&pops, &tweets, 0, 0) {
                Ok(r) => Some(r.pearson),
                Err(e) => {
                    eprintln!("warning: scatter correlation unavailable: {e}");
                    None
                }
            }
        }
    };

    let k = report.outward_error.len() as f64;
    let out_report = EvaluateReport {
        cpc: report.cpc,
        numerator: report.numerator,
        denominator: report.denominator,
        commuting: match mode {
            CommutingMode::All => "all".into(),
            CommutingMode::External => "external".into(),
        },
        outward_error_mean: report.outward_error.iter().sum::<f64>() / k,
        outward_error_max: report
            .outward_error
            .iter()
            .copied()
            .fold(0.0, f64::max),
        zero_rows: report
            .zero_rows
            .iter()
            .map(|&i| rs.id_of(i).to_string())
            .collect(),
        scatter_pearson,
    };
    write_json(&args.out, "report.json", &out_report)?;
    eprintln!("evaluate: cpc = {}", out_report.cpc);
    Ok(())
}

// --- cluster -------------------------------------------------------------

#[derive(Serialize)]
struct RatioReport {
    cluster_geomean: Vec<f64>,
    pearson: f64,
    spearman: f64,
    p_value: f64,
    replicates: usize,
    regions_used: usize,
}

#[derive(Serialize)]
struct ClusterReport {
    k: usize,
    cost: f64,
    medoids: Vec<String>,
    excluded_regions: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ratios: Option<RatioReport>,
}

fn cmd_cluster(args: &ClusterArgs) -> Result<()> {
    prepare_out(&args.out)?;
    let rs = load_regions(&args.regions)?;
    let file = File::open(&args.profiles)
        .with_context(|| format!("opening {}", args.profiles.display()))?;
    let profiles = read_profiles(BufReader::new(file))?;
    let (dists, excluded, mean) = hourly_distributions(&profiles, &rs);
    let clustering = k_medoids(&dists, args.k, 100)?;

    let mut w = create(&args.out, "clusters.csv")?;
    writeln!(w, "region_id,cluster,is_medoid")?;
    for (i, d) in dists.iter().enumerate() {
        writeln!(
            w,
            "{},{},{}",
            d.region_id,
            clustering.labels[i],
            clustering.medoids.contains(&i)
        )?;
    }
    drop(w);

    let mut w = create(&args.out, "hourly.csv")?;
    writeln!(w, "region_id,day_class,hour,count,mass")?;
    for d in &dists {
        for h in 0..24 {
            writeln!(
                w,
                "{},weekday,{},{},{}",
                d.region_id, h, d.weekday_counts[h], d.weekday_mass[h]
            )?;
        }
        for h in 0..24 {
            writeln!(
                w,
                "{},weekend,{},{},{}",
                d.region_id, h, d.weekend_counts[h], d.weekend_mass[h]
            )?;
        }
    }
    drop(w);

    let mut w = create(&args.out, "mean_curves.csv")?;
    writeln!(w, "hour,weekday_mass,weekend_mass")?;
    for h in 0..24 {
        writeln!(w, "{},{},{}", h, mean.weekday[h], mean.weekend[h])?;
    }
    drop(w);

    let ratios = match &args.truth {
        None => None,
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let flows: FlowMatrix<f64> = read_od_csv(BufReader::new(file), &rs)?;
            // Restrict the flow matrix to the clustered regions so labels
            // and rows line up; flows touching excluded regions are dropped.
            let ids: Vec<String> = dists.iter().map(|d| d.region_id.clone()).collect();
            let full_idx: Vec<usize> = ids
                .iter()
                .map(|id| rs.index_of(id).expect("clustered region exists"))
                .collect();
            let mut sub = FlowMatrix::zeros(ids.clone(), flows.provenance);
            for (a, &fa) in full_idx.iter().enumerate() {
                for (b, &fb) in full_idx.iter().enumerate() {
                    sub.set(a, b, flows.get(fa, fb));
                }
            }
            let stats = inout_ratio_stats(&sub, &clustering.labels)?;

            let mut w = create(&args.out, "ratios.csv")?;
            writeln!(w, "region_id,cluster,inout_ratio,daytime_evening_ratio")?;
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (i, d) in dists.iter().enumerate() {
                let de = daytime_evening_ratio(d).ok();
                writeln!(
                    w,
                    "{},{},{},{}",
                    d.region_id,
                    clustering.labels[i],
                    stats.ratios[i].map_or(String::new(), |r| r.to_string()),
                    de.map_or(String::new(), |r| r.to_string()),
                )?;
                if let (Some(io), Some(de)) = (stats.ratios[i], de) {
                    xs.push(de);
                    ys.push(io);
                }
            }
            drop(w);
            let corr = correlation_with_permutation(&xs, &ys, args.replicates, args.seed)?;
            Some(RatioReport {
                cluster_geomean: stats.cluster_geomean,
                pearson: corr.pearson,
                spearman: corr.spearman,
                p_value: corr.p_value,
                replicates: corr.replicates,
                regions_used: xs.len(),
            })
        }
    };

    let report = ClusterReport {
        k: args.k,
        cost: clustering.cost,
        medoids: clustering
            .medoids
            .iter()
            .map(|&i| dists[i].region_id.clone())
            .collect(),
        excluded_regions: excluded,
        ratios,
    };
    write_json(&args.out, "cluster_report.json", &report)?;
    eprintln!("cluster: {} regions in {} clusters", dists.len(), args.k);
    Ok(())
}
