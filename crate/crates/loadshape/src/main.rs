//! Command-line front end: generate communities, solve them by either
//! route, sweep experiment matrices, and export results. Exits nonzero
//! whenever a solve's audit fails.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use loadshape::bench::{
    export_load_profile, run_experiment, write_outputs, ExperimentSpec, Method,
};
use loadshape::blocks::{
    build_basic_block, check_membership, convex_blend_exists, enumerate_feasible_points, vn,
    wm_hull_demo, Point, Symbol, Violation,
};
use loadshape::community::{generate_community, ingest_weather_csv, synth_weather, GenConfig};
use loadshape::dw::{
    baseline_objective, solve_centralized, solve_dantzig_wolfe, write_trace_csv, CentralParams,
    DwParams,
};
use loadshape::model::{CommunityInstance, Schedule, TimeGrid};

#[derive(Parser)]
#[command(name = "loadshape", version, about = "Neighborhood load shaping tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random community instance and write it as JSON.
    Gen(GenArgs),
    /// Solve an instance as one community-wide integer program.
    SolveCentral(SolveCentralArgs),
    /// Solve an instance with the decomposed column-generation heuristic.
    SolveDw(SolveDwArgs),
    /// Run a matrix of methods over seeded instances and write CSV reports.
    Bench(BenchArgs),
    /// Enumerate the washer demo block and show why blending its two runs
    /// breaks feasibility.
    EnumerateWm,
    /// Write the target/desirable/optimized load comparison for a solved
    /// schedule.
    ExportProfile(ExportProfileArgs),
}

#[derive(Args)]
struct InstanceSource {
    /// Read the instance from this JSON file instead of generating one.
    #[arg(long, conflicts_with_all = ["homes", "seed", "weather"])]
    instance: Option<PathBuf>,
    /// Number of homes to generate.
    #[arg(long, default_value_t = 10)]
    homes: usize,
    /// Intervals in the horizon (15-minute steps).
    #[arg(long, default_value_t = 96)]
    k: usize,
    /// Generation seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Weather CSV (`hour,temp_c`); synthetic weather when omitted.
    #[arg(long)]
    weather: Option<PathBuf>,
    /// Synthetic weather daily minimum, Celsius.
    #[arg(long, default_value_t = -2.0)]
    weather_low: f64,
    /// Synthetic weather daily maximum, Celsius.
    #[arg(long, default_value_t = 12.0)]
    weather_high: f64,
}

impl InstanceSource {
    fn load(&self) -> Result<CommunityInstance> {
        if let Some(path) = &self.instance {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            return Ok(CommunityInstance::from_json_str(&text)?);
        }
        let grid = TimeGrid::new(self.k, 0.25)?;
        let weather_c = match &self.weather {
            Some(path) => {
                let file =
                    fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                ingest_weather_csv(file, &grid)?
            }
            None => synth_weather(&grid, self.weather_low, self.weather_high),
        };
        let cfg = GenConfig { homes: self.homes, grid, weather_c };
        let generated = generate_community(&cfg, self.seed)?;
        if generated.resamples > 0 {
            eprintln!("note: {} home redraws during generation", generated.resamples);
        }
        Ok(generated.instance)
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    source: InstanceSource,
    /// Output path for the instance JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SolveCentralArgs {
    #[command(flatten)]
    source: InstanceSource,
    /// Relative optimality gap to prove.
    #[arg(long, default_value_t = 1e-4)]
    gap: f64,
    /// Wall budget in seconds; unlimited when omitted.
    #[arg(long)]
    budget_s: Option<f64>,
    /// Write the solved schedule JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveDwArgs {
    #[command(flatten)]
    source: InstanceSource,
    /// Column-generation convergence tolerance on the master/bound gap.
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    /// Prune columns unused for this many consecutive iterations; no
    /// pruning when omitted.
    #[arg(long)]
    kappa: Option<usize>,
    /// Relative gap for the final one-plan-per-home commit solve.
    #[arg(long, default_value_t = 1e-4)]
    gap: f64,
    /// Wall budget in seconds; unlimited when omitted.
    #[arg(long)]
    budget_s: Option<f64>,
    /// Write the solved schedule JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the per-iteration generation trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated community sizes, e.g. `20,50`.
    #[arg(long, value_delimiter = ',', default_value = "20")]
    homes: Vec<usize>,
    /// Intervals in the horizon.
    #[arg(long, default_value_t = 96)]
    k: usize,
    /// Comma-separated seeds, e.g. `1,2,3,4,5`.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,
    /// Comma-separated method labels: `central@<gap>`, `dw@k<n>`, `dw@kinf`.
    #[arg(long, value_delimiter = ',', default_value = "central@1e-4,dw@k5,dw@k10")]
    methods: Vec<String>,
    /// Wall budget per run, seconds.
    #[arg(long, default_value_t = 900.0)]
    budget_s: f64,
    /// Synthetic weather daily minimum, Celsius.
    #[arg(long, default_value_t = -2.0)]
    weather_low: f64,
    /// Synthetic weather daily maximum, Celsius.
    #[arg(long, default_value_t = 12.0)]
    weather_high: f64,
    /// Directory for runs.csv, summary.csv, and manifest.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportProfileArgs {
    /// Instance JSON the schedule belongs to.
    #[arg(long)]
    instance: PathBuf,
    /// Solved schedule JSON.
    #[arg(long)]
    schedule: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn parse_method(label: &str) -> Result<Method> {
    if let Some(gap) = label.strip_prefix("central@") {
        let rel_gap: f64 = gap.parse().with_context(|| format!("gap in {label}"))?;
        if !(rel_gap.is_finite() && rel_gap > 0.0) {
            bail!("method {label}: gap must be positive");
        }
        return Ok(Method::Central { rel_gap });
    }
    if label == "dw@kinf" {
        return Ok(Method::Dw { kappa: None });
    }
    if let Some(k) = label.strip_prefix("dw@k") {
        let kappa: usize = k.parse().with_context(|| format!("kappa in {label}"))?;
        return Ok(Method::Dw { kappa: Some(kappa) });
    }
    bail!("unknown method {label}; expected central@<gap>, dw@k<n>, or dw@kinf")
}

fn write_schedule(path: &PathBuf, schedule: &Schedule) -> Result<()> {
    fs::write(path, schedule.to_json_string()?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_gen(args: &GenArgs) -> Result<()> {
    let inst = args.source.load()?;
    fs::write(&args.out, inst.to_json_string()?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {}: {} homes, {} intervals, seed {}",
        args.out.display(),
        inst.homes.len(),
        inst.grid.k,
        inst.seed
    );
    Ok(())
}

fn cmd_solve_central(args: &SolveCentralArgs) -> Result<bool> {
    let inst = args.source.load()?;
    let params = CentralParams {
        rel_gap: args.gap,
        time_limit_s: args.budget_s,
        ..CentralParams::default()
    };
    let out = solve_centralized(&inst, &params)?;
    println!(
        "centralized: objective {:.6} bound {:.6} gap {:.3e} status {:?} nodes {} wall {:.2}s",
        out.objective, out.bound, out.rel_gap, out.status, out.nodes, out.wall_s
    );
    println!("baseline objective {:.6}", baseline_objective(&inst));
    println!("audited: {}", if out.audited { "pass" } else { "FAIL" });
    if let Some(path) = &args.out {
        write_schedule(path, &out.schedule)?;
        println!("schedule written to {}", path.display());
    }
    Ok(out.audited)
}

fn cmd_solve_dw(args: &SolveDwArgs) -> Result<bool> {
    let inst = args.source.load()?;
    let params = DwParams {
        eps: args.eps,
        kappa: args.kappa,
        final_gap: args.gap,
        time_limit_s: args.budget_s,
        ..DwParams::default()
    };
    let out = solve_dantzig_wolfe(&inst, &params)?;
    println!(
        "decomposed: objective {:.6} relaxed {:.6} bound {:.6} gap {:.3e} stop {:?}",
        out.objective, out.relaxed_objective, out.xi, out.rel_gap, out.stop
    );
    println!(
        "iterations {} pool {} pruned {} wall {:.2}s (commit {:.2}s)",
        out.iterations, out.pool_final, out.pruned_total, out.wall_s, out.final_solve_s
    );
    println!("baseline objective {:.6}", baseline_objective(&inst));
    println!("audited: {}", if out.audited { "pass" } else { "FAIL" });
    if let Some(path) = &args.trace {
        let file =
            fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_trace_csv(&out.trace, file)?;
        println!("trace written to {}", path.display());
    }
    if let Some(path) = &args.out {
        write_schedule(path, &out.schedule)?;
        println!("schedule written to {}", path.display());
    }
    Ok(out.audited)
}

fn cmd_bench(args: &BenchArgs) -> Result<bool> {
    let methods =
        args.methods.iter().map(|m| parse_method(m)).collect::<Result<Vec<Method>>>()?;
    let spec = ExperimentSpec {
        homes: args.homes.clone(),
        k: args.k,
        seeds: args.seeds.clone(),
        methods,
        budget_s: args.budget_s,
        weather_low_c: args.weather_low,
        weather_high_c: args.weather_high,
    };
    let out = run_experiment(&spec, |r| {
        println!(
            "homes {:>4} seed {:>3} {:>14}: {} obj {} wall {:.2}s",
            r.homes,
            r.seed,
            r.method,
            r.outcome,
            r.objective.map(|z| format!("{z:.4}")).unwrap_or_else(|| "-".into()),
            r.wall_s
        );
    })?;
    write_outputs(&out, &args.out)?;
    println!("reports written under {}", args.out.display());
    for s in &out.summary {
        println!(
            "summary homes {:>4} {:>14} {:>9}: {}/{} ok ({} dnf), mean {} ci95 {}",
            s.homes,
            s.method,
            s.metric,
            s.ok,
            s.runs,
            s.dnf,
            s.mean.map(|m| format!("{m:.4}")).unwrap_or_else(|| "-".into()),
            s.ci95.map(|c| format!("{c:.4}")).unwrap_or_else(|| "-".into()),
        );
    }
    Ok(out.runs.iter().all(|r| r.outcome == "ok"))
}

fn cmd_enumerate_wm() -> Result<bool> {
    let (grid, spec) = wm_hull_demo();
    let id = loadshape::model::ApplianceId::Basic(0);
    let block = build_basic_block(0, 0, &spec, &grid)?;
    let points = enumerate_feasible_points(&block, 20)?;
    println!(
        "washer demo: {} intervals, window [{}..={}], run {} intervals",
        grid.k, spec.params.window_start, spec.params.window_end, spec.params.run_intervals
    );
    println!("feasible integral points: {}", points.len());
    for (i, p) in points.iter().enumerate() {
        let draw: Vec<f64> = (0..grid.k).map(|t| p[&vn(0, id, Symbol::P, t)]).collect();
        println!("  run {i}: draws {draw:?}");
    }

    // The fractional schedule that spreads the run's energy over the whole
    // window: every linear row holds, only integrality breaks, and no
    // convex mix of the true runs reproduces it.
    let mut frac = Point::new();
    let f = 1.0 / 1.5;
    for t in 0..grid.k {
        let p = if (1..=3).contains(&t) { 1.0 } else { 0.0 };
        frac.insert(vn(0, id, Symbol::P, t), p);
        frac.insert(vn(0, id, Symbol::On, t), p / 1.5);
    }
    for t in 1..grid.k {
        frac.insert(vn(0, id, Symbol::Start, t), if t == 1 { f } else { 0.0 });
        frac.insert(vn(0, id, Symbol::Stop, t), if t == 4 { f } else { 0.0 });
    }
    let violations = check_membership(&block, &frac, 1e-9);
    let rows_broken =
        violations.iter().filter(|v| !matches!(v, Violation::Integrality { .. })).count();
    let integrality_broken =
        violations.iter().filter(|v| matches!(v, Violation::Integrality { .. })).count();
    println!(
        "fractional spread [0,1,1,1,0]: {rows_broken} row violations, {integrality_broken} integrality violations"
    );
    let blend = convex_blend_exists(&points, &frac)?;
    println!("fractional spread expressible as a convex blend of the runs: {blend}");

    // Contrast: the runs' midpoint is a legitimate blend by construction.
    let mut mid = Point::new();
    for (name, &v) in &points[0] {
        mid.insert(*name, 0.5 * (v + points[1][name]));
    }
    let mid_blend = convex_blend_exists(&points, &mid)?;
    println!("midpoint of the runs expressible as a convex blend: {mid_blend}");

    let ok = points.len() == 2
        && rows_broken == 0
        && integrality_broken > 0
        && !blend
        && mid_blend;
    println!("demo checks: {}", if ok { "pass" } else { "FAIL" });
    Ok(ok)
}

fn cmd_export_profile(args: &ExportProfileArgs) -> Result<()> {
    let inst = CommunityInstance::from_json_str(
        &fs::read_to_string(&args.instance)
            .with_context(|| format!("reading {}", args.instance.display()))?,
    )?;
    let schedule = Schedule::from_json_str(
        &fs::read_to_string(&args.schedule)
            .with_context(|| format!("reading {}", args.schedule.display()))?,
    )?;
    schedule.validate(&inst)?;
    let file =
        fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let tracked = export_load_profile(&inst, &schedule, file)?;
    println!(
        "wrote {}: {:.1}% of intervals tracked exactly",
        args.out.display(),
        100.0 * tracked
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(args) => cmd_gen(args).map(|()| true),
        Command::SolveCentral(args) => cmd_solve_central(args),
        Command::SolveDw(args) => cmd_solve_dw(args),
        Command::Bench(args) => cmd_bench(args),
        Command::EnumerateWm => cmd_enumerate_wm(),
        Command::ExportProfile(args) => cmd_export_profile(args).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("completed with failed checks");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
