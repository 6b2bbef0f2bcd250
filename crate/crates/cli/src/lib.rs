//! Command-line front end: parses arguments, runs one analysis and writes
//! its artifacts into the output directory.
//!
//! Exit codes: 0 on success, 2 for bad arguments or configuration, 3 when
//! the numerics fail.

pub mod config;
pub mod render;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use slowfast::continuation::{BifurcationEvent, Branch};
use slowfast::criterion::{check_criterion, trace_equilibrium_set, CriterionOptions};
use slowfast::equilibrium::{find_equilibria_scan, seed_grid, Stability};
use slowfast::integrate::{fmt_g17, integrate, Method};
use slowfast::oscillation::{extract_limit_cycle, manifold_proximity, scan_parameter, CycleOptions, Proximity, ScanOptions};
use slowfast::{list_models, Error, ModelId};

use config::{Observable, Resolved, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "slowfast", version, about = "Bifurcation analysis of slow-fast ODE models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate one trajectory (trajectory.csv).
    Simulate(RunArgs),
    /// Find equilibria from a seed grid (equilibria.json).
    Equilibria(RunArgs),
    /// Trace equilibrium branches and their bifurcations (branch.csv, events.json).
    Branch(RunArgs),
    /// Classify the long-run behavior over a parameter grid (scan.csv).
    Scan(RunArgs),
    /// Run the recurrence criterion (criterion.json).
    Criterion(RunArgs),
    /// Extract one period of the attracting cycle (cycle.csv, cycle.json).
    Cycle(RunArgs),
    /// Write a plot without the other artifacts.
    Plot {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value_t = PlotKind::Bifurcation)]
        kind: PlotKind,
    },
    /// Print the registered models.
    ListModels {
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlotKind {
    Bifurcation,
    Timeseries,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Model id, see `list-models`.
    #[arg(long)]
    model: Option<String>,
    /// Parameter override, repeatable.
    #[arg(long = "set", value_name = "NAME=VALUE", allow_hyphen_values = true)]
    set: Vec<String>,
    /// JSON run configuration; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bifurcation parameter.
    #[arg(long)]
    param: Option<String>,
    #[arg(long, value_name = "LO:HI", allow_hyphen_values = true)]
    range: Option<String>,
    /// Explicit scan grid.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    grid: Option<Vec<f64>>,
    /// Number of grid points spread over the range.
    #[arg(long)]
    points: Option<usize>,
    /// Initial state.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long, value_name = "T0:T1", allow_hyphen_values = true)]
    tspan: Option<String>,
    /// Output directory [default: $SLOWFAST_OUT or ./slowfast-out].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
    /// explicit-rk or implicit-stiff.
    #[arg(long)]
    method: Option<String>,
    /// State coordinate for metrics and plots, by index or label.
    #[arg(long)]
    observable: Option<String>,
    /// Also write an SVG plot.
    #[arg(long)]
    plot: bool,
}

impl RunArgs {
    fn to_config(&self, command: &str) -> slowfast::Result<RunConfig> {
        let file = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                RunConfig::from_json(&text)?
            }
            None => RunConfig::default(),
        };
        let mut params = BTreeMap::new();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects NAME=VALUE, got `{kv}`")))?;
            params.insert(k.trim().to_string(), parse_f64(v, "--set")?);
        }
        let flags = RunConfig {
            command: Some(command.to_string()),
            model: self.model.as_deref().map(str::parse::<ModelId>).transpose()?,
            params,
            bif_param: self.param.clone(),
            range: self.range.as_deref().map(|s| parse_pair(s, "--range")).transpose()?,
            grid: self.grid.clone(),
            points: self.points,
            x0: self.x0.clone(),
            tspan: self.tspan.as_deref().map(|s| parse_pair(s, "--tspan")).transpose()?,
            observable: self.observable.as_deref().map(Observable::parse),
            out_dir: self.out.clone(),
            integrator: config::IntegratorOverrides {
                rtol: self.rtol,
                atol: self.atol,
                method: self.method.as_deref().map(parse_method).transpose()?,
            },
            plot: self.plot,
        };
        Ok(file.overlay(flags))
    }
}

fn parse_f64(s: &str, flag: &str) -> slowfast::Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{flag}: `{s}` is not a number")))
}

fn parse_pair(s: &str, flag: &str) -> slowfast::Result<(f64, f64)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("{flag} expects LO:HI, got `{s}`")))?;
    Ok((parse_f64(a, flag)?, parse_f64(b, flag)?))
}

fn parse_method(s: &str) -> slowfast::Result<Method> {
    serde_json::from_value(json!(s)).map_err(|_| Error::Config(format!("unknown method `{s}`")))
}

/// Runs the program on `argv` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(err) if err.is_config() => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    let (name, args) = match &cmd {
        Command::ListModels { json } => return print_models(*json),
        Command::Simulate(a) => ("simulate", a),
        Command::Equilibria(a) => ("equilibria", a),
        Command::Branch(a) => ("branch", a),
        Command::Scan(a) => ("scan", a),
        Command::Criterion(a) => ("criterion", a),
        Command::Cycle(a) => ("cycle", a),
        Command::Plot { run, .. } => ("plot", run),
    };
    let r = args.to_config(name)?.resolve()?;
    fs::create_dir_all(&r.out_dir).with_context(|| format!("creating {}", r.out_dir.display()))?;
    match cmd {
        Command::Simulate(_) => simulate(&r, r.plot),
        Command::Equilibria(_) => equilibria(&r),
        Command::Branch(_) => branch(&r),
        Command::Scan(_) => scan(&r),
        Command::Criterion(_) => criterion(&r),
        Command::Cycle(_) => cycle(&r),
        Command::Plot { kind: PlotKind::Timeseries, .. } => simulate_plot_only(&r),
        Command::Plot { kind: PlotKind::Bifurcation, .. } => bifurcation_plot(&r),
        Command::ListModels { .. } => unreachable!(),
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> anyhow::Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<()> {
    write(dir, name, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn print_models(as_json: bool) -> anyhow::Result<()> {
    let models = list_models();
    if as_json {
        println!("{}", serde_json::to_string_pretty(&models)?);
        return Ok(());
    }
    println!("{:<14} {:>3}  {:<24} parameters", "id", "dim", "state");
    for m in models {
        let params: Vec<String> = m.params.iter().map(|p| format!("{}={}", p.name, p.default)).collect();
        println!("{:<14} {:>3}  {:<24} {}", m.id.to_string(), m.dim, m.state_labels.join(","), params.join(" "));
    }
    Ok(())
}

fn seeds(r: &Resolved) -> Vec<Vec<f64>> {
    let mut s = seed_grid(r.preset.seed_bounds, r.preset.seed_counts);
    s.push(r.x0.clone());
    s
}

fn run_trajectory(r: &Resolved) -> anyhow::Result<slowfast::integrate::Trajectory> {
    let traj = integrate(&r.params, &r.x0, r.tspan, &r.integrator)?;
    if let Some(f) = &traj.flags.failure {
        return Err(anyhow!("integration failed: {f:?}"));
    }
    Ok(traj)
}

fn simulate(r: &Resolved, plot: bool) -> anyhow::Result<()> {
    let traj = run_trajectory(r)?;
    write(&r.out_dir, "trajectory.csv", &traj.to_csv(r.labels()))?;
    if plot {
        let svg = render::render_timeseries_svg(&traj, r.observable, r.labels()[r.observable]);
        write(&r.out_dir, "timeseries.svg", &svg)?;
    }
    if let Some(t) = traj.flags.domain_exit {
        eprintln!("warning: state left the model domain at t = {t}");
    }
    Ok(())
}

fn simulate_plot_only(r: &Resolved) -> anyhow::Result<()> {
    let traj = run_trajectory(r)?;
    let svg = render::render_timeseries_svg(&traj, r.observable, r.labels()[r.observable]);
    write(&r.out_dir, "timeseries.svg", &svg)
}

fn param_map(r: &Resolved) -> BTreeMap<&'static str, f64> {
    r.model
        .def()
        .params
        .iter()
        .zip(r.params.values())
        .map(|(s, &v)| (s.name, v))
        .collect()
}

fn equilibria(r: &Resolved) -> anyhow::Result<()> {
    let found = find_equilibria_scan(&r.params, &seeds(r))?;
    for e in &found.equilibria {
        let state: Vec<String> = e.state.iter().map(|v| format!("{v:.6}")).collect();
        println!("{:<8} ({})", format!("{:?}", e.stability).to_lowercase(), state.join(", "));
    }
    let doc = json!({
        "model": r.model,
        "params": param_map(r),
        "state_labels": r.labels(),
        "equilibria": found.equilibria,
        "failed_seeds": found.failed_seeds,
        "out_of_domain": found.out_of_domain,
    });
    write_json(&r.out_dir, "equilibria.json", &doc)
}

fn traced(r: &Resolved) -> anyhow::Result<(Vec<Branch>, Vec<(usize, BifurcationEvent)>)> {
    let set = trace_equilibrium_set(&r.params, r.bif_param, r.range()?, &seeds(r))?;
    let mut branches = Vec::new();
    let mut events = Vec::new();
    for (i, (b, ev)) in set.into_iter().enumerate() {
        branches.push(b);
        events.extend(ev.into_iter().map(|e| (i, e)));
    }
    Ok((branches, events))
}

fn branch_csv(branches: &[Branch], labels: &[&str]) -> String {
    let mut s = format!("branch,param,{},stability,max_real\n", labels.join(","));
    for (i, b) in branches.iter().enumerate() {
        for p in &b.points {
            let state: Vec<String> = p.state.iter().map(|v| fmt_g17(*v)).collect();
            let stab = match p.stability {
                Stability::Stable => "stable",
                Stability::Unstable => "unstable",
                Stability::Saddle => "saddle",
            };
            s.push_str(&format!(
                "{i},{},{},{stab},{}\n",
                fmt_g17(p.param),
                state.join(","),
                fmt_g17(p.spectrum.max_real)
            ));
        }
    }
    s
}

fn branch(r: &Resolved) -> anyhow::Result<()> {
    let (branches, events) = traced(r)?;
    write(&r.out_dir, "branch.csv", &branch_csv(&branches, r.labels()))?;
    let ev: Vec<_> = events.iter().map(|(i, e)| json!({"branch": i, "event": e})).collect();
    for (i, e) in &events {
        println!("branch {i}: {:?} at {} = {:.6}", e.kind, r.bif_param, e.param_at);
    }
    write_json(&r.out_dir, "events.json", &json!({"bif_param": r.bif_param, "events": ev}))?;
    if r.plot {
        let plain: Vec<_> = events.into_iter().map(|(_, e)| e).collect();
        write_bifurcation_svg(r, &branches, &plain, None)?;
    }
    Ok(())
}

fn write_bifurcation_svg(
    r: &Resolved,
    branches: &[Branch],
    events: &[BifurcationEvent],
    stop: Option<f64>,
) -> anyhow::Result<()> {
    let stop = stop.map(|p| (p, value_at(branches, p, r.observable)));
    let svg = render::render_bifurcation_svg(
        branches,
        events,
        stop,
        r.observable,
        (r.bif_param, r.labels()[r.observable]),
    );
    write(&r.out_dir, "bifurcation.svg", &svg)
}

/// Observable on the branches at parameter `p`, interpolated on a stable
/// stretch if one covers `p`; otherwise the nearest point of any branch.
fn value_at(branches: &[Branch], p: f64, obs: usize) -> f64 {
    let mut fallback = (f64::INFINITY, 0.0);
    let mut unstable = None;
    for b in branches {
        for w in b.points.windows(2) {
            let (a, c) = (&w[0], &w[1]);
            for q in [a, c] {
                let d = (q.param - p).abs();
                if d < fallback.0 {
                    fallback = (d, q.state[obs]);
                }
            }
            let (lo, hi) = (a.param.min(c.param), a.param.max(c.param));
            if p < lo || p > hi || hi == lo {
                continue;
            }
            let s = (p - a.param) / (c.param - a.param);
            let v = a.state[obs] + s * (c.state[obs] - a.state[obs]);
            if a.stability == Stability::Stable && c.stability == Stability::Stable {
                return v;
            }
            unstable.get_or_insert(v);
        }
    }
    unstable.unwrap_or(fallback.1)
}

fn scan(r: &Resolved) -> anyhow::Result<()> {
    let grid = r.grid()?;
    let opts = ScanOptions {
        integrator: r.integrator.clone(),
        ..ScanOptions::with_observable(r.observable)
    };
    let res = scan_parameter(&r.params, r.bif_param, &grid, &r.x0, &opts)?;
    write(&r.out_dir, "scan.csv", &res.to_csv())?;
    match res.stop_bracket {
        Some((a, b)) => println!("oscillation stops between {} = {a} and {b}", r.bif_param),
        None => println!("no oscillation stop on the grid"),
    }
    Ok(())
}

fn criterion_options(r: &Resolved) -> CriterionOptions {
    CriterionOptions {
        observable: r.observable,
        integrator: r.integrator.clone(),
        ..CriterionOptions::for_study(&r.preset)
    }
}

fn criterion(r: &Resolved) -> anyhow::Result<()> {
    let report = check_criterion(&r.params, r.bif_param, r.range()?, &r.x0, &criterion_options(r))?;
    print!("{}", report.summary_table());
    write_json(&r.out_dir, "criterion.json", &report)?;
    if r.plot {
        let (branches, events) = traced(r)?;
        let plain: Vec<_> = events.into_iter().map(|(_, e)| e).collect();
        write_bifurcation_svg(r, &branches, &plain, report.c2.stop.as_ref().map(|s| s.param))?;
    }
    Ok(())
}

fn bifurcation_plot(r: &Resolved) -> anyhow::Result<()> {
    let report = check_criterion(&r.params, r.bif_param, r.range()?, &r.x0, &criterion_options(r))?;
    let (branches, events) = traced(r)?;
    let plain: Vec<_> = events.into_iter().map(|(_, e)| e).collect();
    write_bifurcation_svg(r, &branches, &plain, report.c2.stop.as_ref().map(|s| s.param))
}

fn cycle(r: &Resolved) -> anyhow::Result<()> {
    let opts = CycleOptions {
        rtol: r.integrator.rtol.min(CycleOptions::default().rtol),
        atol: r.integrator.atol.min(CycleOptions::default().atol),
        ..CycleOptions::default()
    };
    let c = extract_limit_cycle(&r.params, &r.x0, r.observable, &opts)?;
    write(&r.out_dir, "cycle.csv", &c.to_csv(r.labels()))?;
    let (mode, proximity) = if r.model.def().dim == 2 {
        ("axes", Some(manifold_proximity(&c, &Proximity::Axes)?))
    } else {
        // nearest equilibrium, if there is one
        let found = find_equilibria_scan(&r.params, &seeds(r))?;
        let best = found
            .equilibria
            .iter()
            .filter_map(|e| manifold_proximity(&c, &Proximity::Point(e.state.clone())).ok())
            .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d))));
        ("nearest-equilibrium", best)
    };
    println!("period {:.6}", c.period);
    let doc = json!({
        "model": r.model,
        "params": param_map(r),
        "observable": r.labels()[r.observable],
        "period": c.period,
        "section_level": c.section_level,
        "observable_min": c.observable_min,
        "observable_max": c.observable_max,
        "proximity": proximity,
        "proximity_mode": mode,
    });
    write_json(&r.out_dir, "cycle.json", &doc)
}
