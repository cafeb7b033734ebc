//! `run`, `analyze` and `verify` commands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::analysis::{
    endpoint_distribution, energy_audit, mean, median, moving_average, EndpointDistribution,
    DEFAULT_WINDOW,
};
use crate::engine::{run_ensemble, Trace};
use crate::error::{Error, Result};
use crate::graph::build_graph;
use crate::plot::{line_chart, scatter_chart, Series};
use crate::scenario::{OutputFormat, Scenario};
use crate::trace_io::{read_trace_file, write_messages, write_trace, write_transmissions};

#[derive(Debug, Parser)]
#[command(name = "ppn", version, about = "Power packet network simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Plot,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write traces plus a summary.
    Run(RunArgs),
    /// Moving averages and end-point distributions of stored traces.
    Analyze(AnalyzeArgs),
    /// Run the acceptance checks.
    Verify,
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    /// Builtin scenario name or path to a scenario file.
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Simulated time in seconds.
    #[arg(long)]
    pub end_time: Option<f64>,
    /// Output directory (defaults to the scenario's).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub message_latency_ticks: Option<u64>,
    /// Hold every automaton mode for the dwell time, not only Initialize.
    #[arg(long)]
    pub gate_all_modes: Option<bool>,
}

#[derive(Debug, Clone, clap::Args)]
pub struct AnalyzeArgs {
    /// Directory written by `run`.
    #[arg(long)]
    pub out: PathBuf,
    /// End-point time in seconds (defaults to the end of the traces).
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Moving-average window in seconds.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: f64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

/// Runs a parsed command line and returns the process exit status.
pub fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run(args) => cmd_run(&args).map(|_| 0),
        Command::Analyze(args) => cmd_analyze(&args).map(|_| 0),
        Command::Verify => {
            let results = crate::verify::run_all()?;
            for r in &results {
                println!("{r}");
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} passed, {failed} failed", results.len() - failed);
            Ok(i32::from(failed > 0))
        }
    }
}

fn apply_overrides(scenario: &mut Scenario, args: &RunArgs) -> Result<()> {
    let c = &mut scenario.config;
    if let Some(seed) = args.seed {
        c.seed = seed;
    }
    if let Some(runs) = args.runs {
        c.n_runs = runs;
    }
    if let Some(t) = args.end_time {
        c.end_time = t;
    }
    if let Some(l) = args.message_latency_ticks {
        c.message_latency_ticks = l;
    }
    if let Some(g) = args.gate_all_modes {
        c.gate_all_modes = g;
    }
    if let Some(dir) = &args.out {
        scenario.output.directory = dir.clone();
    }
    if let Some(f) = args.format {
        scenario.output.formats = match f {
            Format::Csv => vec![OutputFormat::Csv],
            Format::Plot => vec![OutputFormat::Csv, OutputFormat::Plot],
        };
    }
    c.validate()
}

fn run_file(dir: &Path, stem: &str, run: usize) -> PathBuf {
    dir.join(format!("{stem}_{run:03}.csv"))
}

/// Returns the directory the results were written to.
pub fn cmd_run(args: &RunArgs) -> Result<PathBuf> {
    let mut scenario = Scenario::load(&args.scenario)?;
    apply_overrides(&mut scenario, args)?;
    let config = &scenario.config;
    let dir = scenario.output.directory.clone();
    fs::create_dir_all(&dir)?;
    log::info!(
        "running {} ({} runs, {} s, config {})",
        scenario.name,
        config.n_runs,
        config.end_time,
        config.config_hash()
    );
    let traces = run_ensemble(config)?;
    // written in scenario format so it can be passed back to --scenario
    fs::write(dir.join("config.toml"), scenario.to_toml())?;
    for trace in &traces {
        for w in &trace.warnings {
            log::warn!("run {}: {w}", trace.run_index);
        }
        write_trace(trace, fs::File::create(run_file(&dir, "run", trace.run_index))?)?;
        write_messages(trace, fs::File::create(run_file(&dir, "messages", trace.run_index))?)?;
        write_transmissions(
            &trace.transmissions,
            fs::File::create(run_file(&dir, "transmissions", trace.run_index))?,
        )?;
    }

    let graph = build_graph(&config.topology, &config.electrical())?;
    let dist = endpoint_distribution(&traces, config.end_time, DEFAULT_WINDOW)?;
    let mut summary = String::new();
    let _ = writeln!(summary, "scenario {}", scenario.name);
    let _ = writeln!(summary, "config_hash {}", config.config_hash());
    let _ = writeln!(summary, "runs {} end_time {} s seed {}", config.n_runs, config.end_time, config.seed);
    summary.push_str(&endpoint_table(&dist));
    let _ = writeln!(summary, "\nrun supplied_J stored_delta_J dissipated_J delivered_J residual_rel violations drops transmissions");
    for trace in &traces {
        let a = energy_audit(trace, &graph, config);
        let _ = writeln!(
            summary,
            "{} {:.6e} {:.6e} {:.6e} {:.6e} {:.3e} {} {} {}",
            trace.run_index,
            a.supplied,
            a.stored_delta,
            a.dissipated,
            a.delivered,
            a.relative_residual(),
            trace.protocol_violations,
            trace.dropped.len(),
            trace.transmissions.len()
        );
    }
    fs::write(dir.join("summary.txt"), &summary)?;
    if scenario.output.formats.contains(&OutputFormat::Plot) {
        write_plots(&dir, &traces, &dist, DEFAULT_WINDOW)?;
    }
    println!("{}", dir.display());
    Ok(dir)
}

fn endpoint_table(dist: &EndpointDistribution) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "\nend point t = {} s, window {} s", dist.t_end, dist.window);
    let _ = writeln!(s, "node mean_V median_V");
    for i in 0..dist.node_kinds.len() {
        let v = dist.node_values(i);
        let _ = writeln!(s, "u{i} {:.6} {:.6}", mean(&v), median(&v));
    }
    let _ = writeln!(s, "edge mean_W median_W");
    for (e, (a, b)) in dist.edge_ends.iter().enumerate() {
        let p = dist.edge_values(e);
        let _ = writeln!(s, "{a}-{b} {:.6} {:.6}", mean(&p), median(&p));
    }
    s
}

fn endpoint_csv(dist: &EndpointDistribution) -> String {
    let mut s = String::from("run");
    for i in 0..dist.node_kinds.len() {
        let _ = write!(s, ",v_u{i}");
    }
    for (a, b) in &dist.edge_ends {
        let _ = write!(s, ",p_{a}-{b}");
    }
    s.push('\n');
    for (run, (v, p)) in dist.voltages.iter().zip(&dist.powers).enumerate() {
        let _ = write!(s, "{run}");
        for x in v.iter().chain(p) {
            let _ = write!(s, ",{x}");
        }
        s.push('\n');
    }
    s
}

fn moving_average_csv(trace: &Trace, window: f64) -> Result<String> {
    let mut cols: Vec<(String, Vec<f64>)> = Vec::new();
    for (i, series) in trace.voltages.iter().enumerate() {
        cols.push((format!("v_u{i}"), moving_average(series, trace.dt, window)?.values));
    }
    for ((a, b), series) in trace.edge_ends.iter().zip(&trace.edge_powers) {
        cols.push((format!("p_{a}-{b}"), moving_average(series, trace.dt, window)?.values));
    }
    let mut s = String::from("time");
    for (name, _) in &cols {
        let _ = write!(s, ",{name}");
    }
    s.push('\n');
    for (k, t) in trace.times.iter().enumerate() {
        let _ = write!(s, "{t}");
        for (_, values) in &cols {
            let _ = write!(s, ",{}", values[k]);
        }
        s.push('\n');
    }
    Ok(s)
}

/// Everything `analyze` derives from a set of traces, as file name and
/// contents.
pub fn analysis_outputs(traces: &[Trace], t_end: f64, window: f64) -> Result<Vec<(String, String)>> {
    if !(window > 0.0) {
        return Err(Error::Config(format!("window must be positive, got {window}")));
    }
    let dist = endpoint_distribution(traces, t_end, window)?;
    let mut files = vec![
        ("endpoint.csv".to_string(), endpoint_csv(&dist)),
        ("endpoint_summary.txt".to_string(), endpoint_table(&dist)),
    ];
    for trace in traces {
        files.push((
            format!("moving_average_{:03}.csv", trace.run_index),
            moving_average_csv(trace, window)?,
        ));
    }
    Ok(files)
}

fn write_plots(dir: &Path, traces: &[Trace], dist: &EndpointDistribution, window: f64) -> Result<()> {
    for trace in traces {
        let ma = |s: &[f64]| moving_average(s, trace.dt, window).map(|m| m.values);
        let volts: Vec<Vec<f64>> = trace.voltages.iter().map(|s| ma(s)).collect::<Result<_>>()?;
        let powers: Vec<Vec<f64>> = trace.edge_powers.iter().map(|s| ma(s)).collect::<Result<_>>()?;
        let vs: Vec<Series> = volts
            .iter()
            .enumerate()
            .map(|(i, y)| Series { label: format!("v{i}"), x: &trace.times, y })
            .collect();
        let ps: Vec<Series> = powers
            .iter()
            .zip(&trace.edge_ends)
            .map(|(y, (a, b))| Series { label: format!("p{}{}", a.0, b.0), x: &trace.times, y })
            .collect();
        let run = trace.run_index;
        fs::write(
            dir.join(format!("voltage_{run:03}.svg")),
            line_chart(&format!("node voltages, run {run}"), "time [s]", "voltage [V]", &vs),
        )?;
        fs::write(
            dir.join(format!("power_{run:03}.svg")),
            line_chart(&format!("path powers, run {run}"), "time [s]", "power [W]", &ps),
        )?;
    }
    let nodes: Vec<String> = (0..dist.node_kinds.len()).map(|i| format!("v{i}")).collect();
    let node_values: Vec<Vec<f64>> = (0..nodes.len()).map(|i| dist.node_values(i)).collect();
    let edges: Vec<String> = dist.edge_ends.iter().map(|(a, b)| format!("p{}{}", a.0, b.0)).collect();
    let edge_values: Vec<Vec<f64>> = (0..edges.len()).map(|e| dist.edge_values(e)).collect();
    let title = format!("end point t = {} s", dist.t_end);
    fs::write(dir.join("endpoint_voltage.svg"), scatter_chart(&title, "voltage [V]", &nodes, &node_values))?;
    fs::write(dir.join("endpoint_power.svg"), scatter_chart(&title, "power [W]", &edges, &edge_values))?;
    Ok(())
}

/// Trace files `run_NNN.csv` in `dir`, in run order.
pub fn trace_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("run_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Trace {
            path: dir.to_path_buf(),
            reason: "no run_*.csv trace files".into(),
        });
    }
    Ok(files)
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<PathBuf> {
    let traces: Vec<Trace> = trace_files(&args.out)?
        .iter()
        .map(|p| read_trace_file(p))
        .collect::<Result<_>>()?;
    let t_end = args.t_end.unwrap_or_else(|| {
        traces
            .iter()
            .map(Trace::end_time)
            .fold(f64::INFINITY, f64::min)
    });
    let files = analysis_outputs(&traces, t_end, args.window)?;
    let dir = args.out.join("analysis");
    fs::create_dir_all(&dir)?;
    for (name, contents) in &files {
        fs::write(dir.join(name), contents)?;
    }
    if args.format == Format::Plot {
        let dist = endpoint_distribution(&traces, t_end, args.window)?;
        write_plots(&dir, &traces, &dist, args.window)?;
    }
    println!("{}", dir.display());
    Ok(dir)
}
