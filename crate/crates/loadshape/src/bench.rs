//! Experiment harness: runs a method matrix over seeded communities,
//! re-audits every reported number, scores runs against the tightest
//! centralized run on the same instance, and writes the results as CSV
//! plus a JSON manifest.

use std::fs;
use std::io::Write as IoWrite;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::community::{generate_community, synth_weather, GenConfig, GenError};
use crate::dw::{
    schedule_objective, solve_centralized, solve_dantzig_wolfe, CentralParams, DwParams,
};
use crate::model::{CommunityInstance, Schedule, TimeGrid};

/// Reported objectives must agree with a recomputation from the schedule
/// entries to this tolerance or the run is scored as failed.
pub const RECOMPUTE_TOL: f64 = 1e-6;
/// Intervals whose realized load sits within this of the target count as
/// exactly tracked in the sparsity statistic.
pub const TRACK_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("bad experiment: {0}")]
    BadSpec(String),
}

/// One solver configuration in the matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Method {
    Central { rel_gap: f64 },
    Dw { kappa: Option<usize> },
}

impl Method {
    /// Stable label used in CSV rows and summaries, e.g. `central@1e-4`,
    /// `dw@k5`, `dw@kinf`.
    pub fn label(&self) -> String {
        match self {
            Method::Central { rel_gap } => format!("central@{rel_gap:.0e}"),
            Method::Dw { kappa: Some(k) } => format!("dw@k{k}"),
            Method::Dw { kappa: None } => "dw@kinf".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Community sizes to sweep.
    pub homes: Vec<usize>,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Wall budget per individual run, seconds. Runs that come back
    /// slower are marked DNF and excluded from the means.
    pub budget_s: f64,
    /// Synthetic weather range for generated instances, Celsius.
    pub weather_low_c: f64,
    pub weather_high_c: f64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            homes: vec![20],
            k: 96,
            seeds: (1..=5).collect(),
            methods: vec![
                Method::Central { rel_gap: 1e-4 },
                Method::Dw { kappa: Some(5) },
                Method::Dw { kappa: Some(10) },
            ],
            budget_s: 900.0,
            weather_low_c: -2.0,
            weather_high_c: 12.0,
        }
    }
}

/// One solver invocation's scored result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub homes: usize,
    pub k: usize,
    pub seed: u64,
    pub method: String,
    /// `ok`, `dnf` (answered but over budget), `audit-failed`, or an
    /// error description.
    pub outcome: String,
    pub objective: Option<f64>,
    /// Proven lower bound: branch and bound's for centralized runs, the
    /// best pricing-derived bound for decomposed ones.
    pub bound: Option<f64>,
    /// The solver's own relative gap claim at exit.
    pub achieved_gap: Option<f64>,
    pub wall_s: f64,
    /// Seconds of `wall_s` spent in the final commit solve; zero for
    /// centralized runs.
    pub final_solve_s: f64,
    pub audited: bool,
    pub cg_iterations: Option<usize>,
    pub pool_final: Option<usize>,
    /// Relative excess over the tightest successful centralized run on
    /// the same instance; exactly zero for that oracle run itself.
    pub pseudogap: Option<f64>,
}

/// Per `(homes, k, method)` aggregate of one metric over seeds. Only
/// `ok` runs enter the mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub homes: usize,
    pub k: usize,
    pub method: String,
    /// `wall_s` or `pseudogap`.
    pub metric: String,
    pub runs: usize,
    pub ok: usize,
    pub dnf: usize,
    pub failed: usize,
    pub mean: Option<f64>,
    /// Half-width of the normal-approximation 95% interval around the
    /// mean; zero with a single sample.
    pub ci95: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchOutput {
    pub spec: ExperimentSpec,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRecord>,
}

/// Relative excess of a method's objective over the oracle's. Both
/// vanishing counts as a zero gap; only the oracle vanishing admits no
/// meaningful ratio and yields `None`.
pub fn pseudogap(obj_method: f64, obj_oracle: f64) -> Option<f64> {
    if obj_oracle.abs() <= 1e-12 {
        if obj_method.abs() <= 1e-12 {
            Some(0.0)
        } else {
            None
        }
    } else {
        Some((obj_method - obj_oracle) / obj_oracle)
    }
}

fn build_instance(
    spec: &ExperimentSpec,
    homes: usize,
    seed: u64,
) -> Result<CommunityInstance, BenchError> {
    let grid = TimeGrid::new(spec.k, 0.25).map_err(GenError::from)?;
    let weather_c = synth_weather(&grid, spec.weather_low_c, spec.weather_high_c);
    let cfg = GenConfig { homes, grid, weather_c };
    Ok(generate_community(&cfg, seed)?.instance)
}

struct RawRun {
    outcome: String,
    objective: Option<f64>,
    bound: Option<f64>,
    achieved_gap: Option<f64>,
    wall_s: f64,
    final_solve_s: f64,
    audited: bool,
    cg_iterations: Option<usize>,
    pool_final: Option<usize>,
}

fn run_one(inst: &CommunityInstance, method: Method, budget_s: f64) -> RawRun {
    let t0 = Instant::now();
    let errored = |e: String, wall_s: f64| RawRun {
        outcome: format!("error: {e}"),
        objective: None,
        bound: None,
        achieved_gap: None,
        wall_s,
        final_solve_s: 0.0,
        audited: false,
        cg_iterations: None,
        pool_final: None,
    };
    match method {
        Method::Central { rel_gap } => {
            let params = CentralParams {
                rel_gap,
                time_limit_s: Some(budget_s),
                ..CentralParams::default()
            };
            match solve_centralized(inst, &params) {
                Ok(out) => {
                    let recomputed = schedule_objective(inst, &out.schedule);
                    let audited =
                        out.audited && (recomputed - out.objective).abs() <= RECOMPUTE_TOL;
                    RawRun {
                        outcome: if audited { "ok".into() } else { "audit-failed".into() },
                        objective: Some(out.objective),
                        bound: Some(out.bound),
                        achieved_gap: Some(out.rel_gap),
                        wall_s: out.wall_s,
                        final_solve_s: 0.0,
                        audited,
                        cg_iterations: None,
                        pool_final: None,
                    }
                }
                Err(e) => errored(e.to_string(), t0.elapsed().as_secs_f64()),
            }
        }
        Method::Dw { kappa } => {
            let params =
                DwParams { kappa, time_limit_s: Some(budget_s), ..DwParams::default() };
            match solve_dantzig_wolfe(inst, &params) {
                Ok(out) => {
                    let recomputed = schedule_objective(inst, &out.schedule);
                    let audited =
                        out.audited && (recomputed - out.objective).abs() <= RECOMPUTE_TOL;
                    RawRun {
                        outcome: if audited { "ok".into() } else { "audit-failed".into() },
                        objective: Some(out.objective),
                        bound: Some(out.xi),
                        achieved_gap: Some(out.rel_gap),
                        wall_s: out.wall_s,
                        final_solve_s: out.final_solve_s,
                        audited,
                        cg_iterations: Some(out.iterations),
                        pool_final: Some(out.pool_final),
                    }
                }
                Err(e) => errored(e.to_string(), t0.elapsed().as_secs_f64()),
            }
        }
    }
}

/// Runs the full matrix sequentially. `progress` fires after each run
/// with the scored record, before pseudogaps are filled in.
pub fn run_experiment(
    spec: &ExperimentSpec,
    mut progress: impl FnMut(&RunRecord),
) -> Result<BenchOutput, BenchError> {
    if spec.homes.is_empty() || spec.seeds.is_empty() || spec.methods.is_empty() {
        return Err(BenchError::BadSpec("homes, seeds, and methods must be non-empty".into()));
    }
    if !(spec.budget_s.is_finite() && spec.budget_s > 0.0) {
        return Err(BenchError::BadSpec("budget_s must be positive".into()));
    }

    let mut runs = Vec::new();
    for &homes in &spec.homes {
        for &seed in &spec.seeds {
            let inst = build_instance(spec, homes, seed)?;
            for &method in &spec.methods {
                let raw = run_one(&inst, method, spec.budget_s);
                let outcome = if raw.outcome == "ok" && raw.wall_s > spec.budget_s {
                    "dnf".to_string()
                } else {
                    raw.outcome
                };
                let rec = RunRecord {
                    homes,
                    k: spec.k,
                    seed,
                    method: method.label(),
                    outcome,
                    objective: raw.objective,
                    bound: raw.bound,
                    achieved_gap: raw.achieved_gap,
                    wall_s: raw.wall_s,
                    final_solve_s: raw.final_solve_s,
                    audited: raw.audited,
                    cg_iterations: raw.cg_iterations,
                    pool_final: raw.pool_final,
                    pseudogap: None,
                };
                progress(&rec);
                runs.push(rec);
            }
        }
    }

    // Oracle per instance: the successful centralized run with the
    // smallest requested gap. It scores zero against itself; every other
    // successful run is scored relative to it.
    let oracle_label = spec
        .methods
        .iter()
        .filter_map(|m| match m {
            Method::Central { rel_gap } => Some((*rel_gap, m.label())),
            Method::Dw { .. } => None,
        })
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, label)| label);
    if let Some(oracle_label) = &oracle_label {
        for &homes in &spec.homes {
            for &seed in &spec.seeds {
                let oracle = runs
                    .iter()
                    .find(|r| {
                        r.homes == homes
                            && r.seed == seed
                            && &r.method == oracle_label
                            && r.outcome == "ok"
                    })
                    .and_then(|r| r.objective);
                let Some(oracle) = oracle else { continue };
                for r in &mut runs {
                    if r.homes == homes && r.seed == seed && r.outcome == "ok" {
                        r.pseudogap = if &r.method == oracle_label {
                            Some(0.0)
                        } else {
                            r.objective.and_then(|z| pseudogap(z, oracle))
                        };
                    }
                }
            }
        }
    }

    let summary = summarize(spec, &runs);
    Ok(BenchOutput { spec: spec.clone(), runs, summary })
}

fn summarize(spec: &ExperimentSpec, runs: &[RunRecord]) -> Vec<SummaryRecord> {
    let mut out = Vec::new();
    for &homes in &spec.homes {
        for method in &spec.methods {
            let label = method.label();
            let group: Vec<&RunRecord> =
                runs.iter().filter(|r| r.homes == homes && r.method == label).collect();
            if group.is_empty() {
                continue;
            }
            let ok: Vec<&&RunRecord> = group.iter().filter(|r| r.outcome == "ok").collect();
            let dnf = group.iter().filter(|r| r.outcome == "dnf").count();
            let failed = group.len() - ok.len() - dnf;
            let walls: Vec<f64> = ok.iter().map(|r| r.wall_s).collect();
            let gaps: Vec<f64> = ok.iter().filter_map(|r| r.pseudogap).collect();
            for (metric, values) in [("wall_s", walls), ("pseudogap", gaps)] {
                let (mean, ci95) = mean_ci95(&values);
                out.push(SummaryRecord {
                    homes,
                    k: spec.k,
                    method: label.clone(),
                    metric: metric.to_string(),
                    runs: group.len(),
                    ok: ok.len(),
                    dnf,
                    failed,
                    mean,
                    ci95,
                });
            }
        }
    }
    out
}

fn mean_ci95(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() < 2 {
        return (Some(m), Some(0.0));
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (Some(m), Some(1.96 * var.sqrt() / (xs.len() as f64).sqrt()))
}

fn opt_str<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `runs.csv`, `summary.csv`, and `manifest.json` under `dir`,
/// creating it if needed.
pub fn write_outputs(out: &BenchOutput, dir: &Path) -> Result<(), BenchError> {
    fs::create_dir_all(dir)?;

    let mut w = fs::File::create(dir.join("runs.csv"))?;
    writeln!(
        w,
        "homes,k,seed,method,outcome,objective,bound,achieved_gap,wall_s,final_solve_s,audited,cg_iterations,pool_final,pseudogap"
    )?;
    for r in &out.runs {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.homes,
            r.k,
            r.seed,
            r.method,
            r.outcome.replace(',', ";"),
            opt_str(&r.objective),
            opt_str(&r.bound),
            opt_str(&r.achieved_gap),
            r.wall_s,
            r.final_solve_s,
            r.audited,
            opt_str(&r.cg_iterations),
            opt_str(&r.pool_final),
            opt_str(&r.pseudogap),
        )?;
    }

    let mut w = fs::File::create(dir.join("summary.csv"))?;
    writeln!(w, "homes,k,method,metric,runs,ok,dnf,failed,mean,ci95")?;
    for s in &out.summary {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            s.homes,
            s.k,
            s.method,
            s.metric,
            s.runs,
            s.ok,
            s.dnf,
            s.failed,
            opt_str(&s.mean),
            opt_str(&s.ci95),
        )?;
    }

    let manifest = serde_json::to_string_pretty(out)?;
    fs::write(dir.join("manifest.json"), manifest)?;
    Ok(())
}

/// Writes the interval-by-interval load comparison and returns the
/// fraction of intervals the optimized load tracks exactly (within
/// `TRACK_TOL`). Columns: `t,q_target,load_desirable,load_optimal`.
pub fn export_load_profile<W: IoWrite>(
    inst: &CommunityInstance,
    schedule: &Schedule,
    mut w: W,
) -> std::io::Result<f64> {
    let k = inst.grid.k;
    let mut desirable = vec![0.0; k];
    for h in &inst.homes {
        for a in h.appliances() {
            for (t, p) in h.baseline(a).iter().enumerate() {
                desirable[t] += p;
            }
        }
    }
    let optimal = schedule.aggregate_load(k);
    writeln!(w, "t,q_target,load_desirable,load_optimal")?;
    for t in 0..k {
        writeln!(w, "{},{},{},{}", t, inst.target_kwh[t], desirable[t], optimal[t])?;
    }
    let tracked =
        (0..k).filter(|&t| (inst.target_kwh[t] - optimal[t]).abs() <= TRACK_TOL).count();
    Ok(tracked as f64 / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ExperimentSpec {
        ExperimentSpec {
            homes: vec![2],
            k: 8,
            seeds: vec![3, 4, 5],
            methods: vec![Method::Central { rel_gap: 1e-4 }, Method::Dw { kappa: Some(5) }],
            budget_s: 120.0,
            weather_low_c: -2.0,
            weather_high_c: 10.0,
        }
    }

    #[test]
    fn labels_are_stable() {
        assert_eq!(Method::Central { rel_gap: 1e-4 }.label(), "central@1e-4");
        assert_eq!(Method::Central { rel_gap: 1e-2 }.label(), "central@1e-2");
        assert_eq!(Method::Dw { kappa: Some(5) }.label(), "dw@k5");
        assert_eq!(Method::Dw { kappa: None }.label(), "dw@kinf");
    }

    #[test]
    fn pseudogap_follows_the_matched_zero_convention() {
        assert_eq!(pseudogap(100.0, 100.0), Some(0.0));
        assert_eq!(pseudogap(101.0, 100.0), Some(0.01));
        assert_eq!(pseudogap(0.0, 0.0), Some(0.0));
        assert_eq!(pseudogap(100.0, 0.0), None);
    }

    #[test]
    fn matrix_counts_rows_and_scores_against_the_tightest_central() {
        let spec = tiny_spec();
        let out = run_experiment(&spec, |_| {}).unwrap();
        // Three seeds and two methods: six runs, and a wall plus a
        // pseudogap summary row per method.
        assert_eq!(out.runs.len(), 6);
        assert_eq!(out.summary.len(), 4);
        for r in &out.runs {
            assert_eq!(r.outcome, "ok", "{}: {}", r.method, r.outcome);
            assert!(r.audited);
            let g = r.pseudogap.expect("scored");
            if r.method == "central@1e-4" {
                assert_eq!(g, 0.0);
            } else {
                assert!(g >= -1e-3, "{}: gap {}", r.method, g);
            }
        }
        let dw_gap = out
            .summary
            .iter()
            .find(|s| s.method == "dw@k5" && s.metric == "pseudogap")
            .unwrap();
        assert_eq!(dw_gap.runs, 3);
        assert_eq!(dw_gap.failed, 0);
        assert!(dw_gap.ci95.unwrap() >= 0.0);
    }

    #[test]
    fn over_budget_runs_are_marked_dnf() {
        let spec = ExperimentSpec {
            seeds: vec![3],
            budget_s: 1e-3,
            methods: vec![Method::Central { rel_gap: 1e-4 }],
            ..tiny_spec()
        };
        let out = run_experiment(&spec, |_| {}).unwrap();
        assert_eq!(out.runs[0].outcome, "dnf");
        let wall = out.summary.iter().find(|s| s.metric == "wall_s").unwrap();
        assert_eq!(wall.dnf, 1);
        assert_eq!(wall.ok, 0);
        assert!(wall.mean.is_none());
    }

    #[test]
    fn rerunning_the_matrix_reproduces_objectives_exactly() {
        let spec = ExperimentSpec {
            seeds: vec![3],
            methods: vec![Method::Central { rel_gap: 1e-2 }, Method::Dw { kappa: Some(5) }],
            ..tiny_spec()
        };
        let a = run_experiment(&spec, |_| {}).unwrap();
        let b = run_experiment(&spec, |_| {}).unwrap();
        for (ra, rb) in a.runs.iter().zip(&b.runs) {
            assert_eq!(ra.objective.map(f64::to_bits), rb.objective.map(f64::to_bits));
            assert_eq!(ra.cg_iterations, rb.cg_iterations);
        }
    }

    #[test]
    fn outputs_land_on_disk_and_parse_back() {
        let spec = ExperimentSpec {
            homes: vec![2],
            seeds: vec![3],
            methods: vec![Method::Central { rel_gap: 1e-2 }],
            k: 8,
            ..tiny_spec()
        };
        let out = run_experiment(&spec, |_| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_outputs(&out, dir.path()).unwrap();
        let manifest = fs::read_to_string(dir.path().join("manifest.json")).unwrap();
        let parsed: BenchOutput = serde_json::from_str(&manifest).unwrap();
        assert_eq!(parsed.runs.len(), out.runs.len());
        let runs_csv = fs::read_to_string(dir.path().join("runs.csv")).unwrap();
        assert_eq!(runs_csv.lines().count(), 1 + out.runs.len());
        let summary_csv = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert!(summary_csv.lines().nth(1).unwrap().starts_with("2,8,central@1e-2,wall_s"));
    }

    #[test]
    fn load_profile_export_reports_tracked_fraction() {
        let spec = tiny_spec();
        let inst = build_instance(&spec, 2, 3).unwrap();
        let central = solve_centralized(&inst, &CentralParams::default()).unwrap();
        let mut buf = Vec::new();
        let frac = export_load_profile(&inst, &central.schedule, &mut buf).unwrap();
        assert!((0.0..=1.0).contains(&frac));
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + spec.k);
        assert!(text.starts_with("t,q_target,load_desirable,load_optimal"));
        let first: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(first.len(), 4);
        assert_eq!(first[0], "0");
    }

    #[test]
    fn degenerate_specs_are_rejected() {
        let mut spec = tiny_spec();
        spec.methods.clear();
        assert!(matches!(run_experiment(&spec, |_| {}), Err(BenchError::BadSpec(_))));
        let mut spec = tiny_spec();
        spec.budget_s = 0.0;
        assert!(matches!(run_experiment(&spec, |_| {}), Err(BenchError::BadSpec(_))));
    }
}
