//! `tla` — run, compare, replot and validate traffic-light-assistant
//! scenarios from the command line.
//!
//! Every artifact the tool writes (CSV log, summary JSON, SVG plots,
//! comparison report) is deterministic for a fixed scenario and seed, so
//! outputs can be diffed byte-for-byte across runs and platforms.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use tla_core::plot::{emit_plots, parse_csv_log};
use tla_core::run::{compare, simulate, to_csv, SummaryDocument};
use tla_core::scenario::load_scenario;

/// Environment variable consulted for the output directory when `--out` is
/// not given; the flag wins over the variable, the variable over `.`.
const OUT_DIR_ENV: &str = "TLA_OUT_DIR";

#[derive(Parser)]
#[command(name = "tla", version, about = "Traffic light assistant scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its CSV log, summary JSON and SVG plots.
    Run {
        /// Scenario definition (JSON).
        scenario: PathBuf,
        /// Output directory (default: $TLA_OUT_DIR, then the current directory).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print per-step progress in addition to the summary.
        #[arg(long)]
        verbose: bool,
        /// Override the scenario's random seed (affects the packet-loss draw).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare two run summaries; the first is the baseline.
    Compare {
        /// Baseline summary JSON (e.g. the non-cooperative run).
        baseline: PathBuf,
        /// Candidate summary JSON.
        candidate: PathBuf,
        /// Output directory for the comparison report (same default as `run`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Regenerate the SVG plots from an existing CSV log.
    Plot {
        /// CSV log produced by `run`.
        log: PathBuf,
        /// Output directory (same default as `run`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a scenario file (schema, cross-references, contracts) without running it.
    Validate {
        /// Scenario definition (JSON).
        scenario: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli.command) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { scenario, out, verbose, seed } => run(&scenario, out, verbose, seed),
        Command::Compare { baseline, candidate, out } => compare_summaries(&baseline, &candidate, out),
        Command::Plot { log, out } => plot(&log, out),
        Command::Validate { scenario } => validate(&scenario),
    }
}

/// Resolve the output directory: `--out` beats `$TLA_OUT_DIR` beats `.`.
fn out_dir(flag: Option<PathBuf>) -> Result<PathBuf> {
    let dir = flag
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn run(scenario_path: &Path, out: Option<PathBuf>, verbose: bool, seed: Option<u64>) -> Result<()> {
    let dir = out_dir(out)?;
    let loaded = load_scenario(scenario_path)
        .with_context(|| format!("loading {}", scenario_path.display()))?;
    let name = loaded.scenario.name.clone();
    let route_length = loaded.scenario.route.length;
    let effective_seed = seed.unwrap_or(loaded.scenario.seed);

    let result = simulate(&loaded, seed).with_context(|| format!("running {name}"))?;
    if verbose {
        for row in &result.rows {
            println!(
                "t={:6.2}  pos={:8.2}  v={:6.2}  a={:6.2}  bound={:8.2}  msgs +{}/-{}{}",
                row.time,
                row.position,
                row.velocity,
                row.acceleration,
                row.position_bound,
                row.accepted_messages,
                row.dropped_messages,
                if row.feasible { "" } else { "  [emergency]" }
            );
        }
    }

    let csv_path = dir.join(format!("{name}.csv"));
    fs::write(&csv_path, to_csv(&result.rows))
        .with_context(|| format!("writing {}", csv_path.display()))?;

    let document = SummaryDocument {
        scenario: name.clone(),
        route_length,
        seed: effective_seed,
        summary: result.summary.clone(),
    };
    let summary_path = dir.join(format!("{name}_summary.json"));
    write_json(&summary_path, &document)?;

    let (distance_svg, speed_svg) = emit_plots(&result.rows, &dir, &name)
        .with_context(|| format!("plotting {name}"))?;

    let s = &result.summary;
    println!("scenario:        {name}");
    println!("completed:       {}", s.completed);
    println!("travel time:     {:.1} s", s.travel_time);
    println!("total energy:    {:.1} J", s.total_energy);
    println!("min velocity:    {:.2} m/s", s.min_velocity);
    println!("stops:           {}", s.stop_count);
    println!("emergency plans: {}", s.infeasible_replans);
    println!("sensor conflicts:{}", s.sensor_conflicts);
    println!(
        "wrote {}, {}, {}, {}",
        csv_path.display(),
        summary_path.display(),
        distance_svg.display(),
        speed_svg.display()
    );

    if !s.completed {
        bail!("run hit max_time before the end of the route");
    }
    Ok(())
}

fn compare_summaries(baseline_path: &Path, candidate_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let dir = out_dir(out)?;
    let baseline: SummaryDocument = read_json(baseline_path)?;
    let candidate: SummaryDocument = read_json(candidate_path)?;
    let report = compare(&baseline, &candidate)
        .context("comparing runs (summaries must cover the same route)")?;

    println!("baseline:  {}", report.baseline);
    println!("candidate: {}", report.candidate);
    println!("energy saving: {:.1} %", report.energy_delta_percent);
    println!("stops removed: {}", report.stops_removed);
    println!("time saved:    {:.1} s", report.time_saved);

    let report_path = dir.join("comparison.json");
    write_json(&report_path, &report)?;
    println!("wrote {}", report_path.display());
    Ok(())
}

fn plot(log_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let dir = out_dir(out)?;
    let text = fs::read_to_string(log_path)
        .with_context(|| format!("reading {}", log_path.display()))?;
    let rows = parse_csv_log(&text).with_context(|| format!("parsing {}", log_path.display()))?;
    let stem = log_path
        .file_stem()
        .and_then(|s| s.to_str())
        .context("log path has no usable file name")?;
    let (distance_svg, speed_svg) = emit_plots(&rows, &dir, stem)?;
    println!("wrote {}, {}", distance_svg.display(), speed_svg.display());
    Ok(())
}

fn validate(scenario_path: &Path) -> Result<()> {
    let loaded = load_scenario(scenario_path)
        .with_context(|| format!("loading {}", scenario_path.display()))?;
    let s = &loaded.scenario;
    println!("{}: valid", scenario_path.display());
    println!(
        "  route {} m, {} signal(s), {} crossing(s), leader: {}, advice: {}, cooperation: {}",
        s.route.length,
        s.signals.len(),
        s.crossings.len(),
        if s.leader.is_some() { "yes" } else { "no" },
        if s.advice.is_some() { "yes" } else { "no" },
        s.cooperation
    );
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("serializing JSON")?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
