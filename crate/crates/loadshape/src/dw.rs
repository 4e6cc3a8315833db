//! Community-level solvers. Two routes to a schedule: a single
//! centralized integer program over every home's constraint block, and a
//! column-generation heuristic that alternates a small shared master
//! problem with independent per-home pricing solves, then picks one
//! generated plan per home with a final integer master. Both routes audit
//! their answers against the per-home polyhedra before reporting them.

use std::io::Write as IoWrite;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::blocks::{
    assemble_home_polyhedron, baseline_point, check_membership, complete_partial, vn,
    BlockError, LinearConstraintBlock, Point, Symbol, MEMBERSHIP_TOL,
};
use crate::milp::{
    KernelError, LpModel, LpStatus, MipParams, MipStatus, RowId, Sense, VarId, VarKind,
};
use crate::model::{
    ApplianceId, ApplianceSchedule, CommunityInstance, HomeSchedule, ModelError, Schedule,
};

/// Columns whose master weight stays this close to zero count as unused
/// for pruning purposes.
pub const PRUNE_EPS: f64 = 1e-9;
/// Band for pinning solver-produced draws during completion audits: wide
/// enough for solver dust, narrow enough that derived integers stay
/// within integrality tolerance.
const COMPLETION_BAND: f64 = 1e-9;
/// A pricing win must clear the convexity dual by this much to admit a
/// new column.
pub const ADMIT_TOL: f64 = 1e-7;
/// Relative master/bound agreement at which column generation stops.
pub const CG_EPS_DEFAULT: f64 = 1e-3;
/// Relative gap for the final one-plan-per-home master solve.
pub const FINAL_GAP_DEFAULT: f64 = 1e-4;
/// Share of the wall budget the generation loop may spend before yielding
/// to the commit step; checked between rounds, so one round can overshoot.
const LOOP_BUDGET_SHARE: f64 = 0.7;
/// During the dive, any open home whose heaviest weight reaches this is
/// pinned in the same round, keeping the number of re-solves small.
const DIVE_PIN_THRESHOLD: f64 = 0.9;

#[derive(Debug, Error)]
pub enum DwError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Block(#[from] BlockError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("home {home}: pricing ended {status:?}")]
    Pricing { home: u32, status: MipStatus },
    #[error("master problem: {0}")]
    Master(String),
}

/// A home's constraint block plus the flattened bookkeeping the solvers
/// share: appliance order, discomfort weights, and desirable draws laid
/// out appliance-major (`[a * k + t]`).
pub struct CompiledHome {
    pub idx: usize,
    pub id: u32,
    pub appliances: Vec<ApplianceId>,
    pub weights: Vec<f64>,
    pub baseline_flat: Vec<f64>,
    pub block: LinearConstraintBlock,
}

/// Builds every home's polyhedron up front. Parallel per home; output
/// order follows the instance.
pub fn compile_homes(inst: &CommunityInstance) -> Result<Vec<CompiledHome>, DwError> {
    inst.validate()?;
    let k = inst.grid.k;
    inst.homes
        .par_iter()
        .enumerate()
        .map(|(idx, spec)| {
            let block = assemble_home_polyhedron(spec, &inst.grid, &inst.weather_c)?;
            let appliances = spec.appliances();
            let weights: Vec<f64> = appliances.iter().map(|&a| spec.weight(a)).collect();
            let mut baseline_flat = Vec::with_capacity(appliances.len() * k);
            for &a in &appliances {
                baseline_flat.extend_from_slice(spec.baseline(a));
            }
            Ok(CompiledHome { idx, id: spec.id, appliances, weights, baseline_flat, block })
        })
        .collect()
}

/// Discomfort cost of a flattened draw vector against the home's
/// desirable schedule.
fn draw_cost(ch: &CompiledHome, p_flat: &[f64], k: usize) -> f64 {
    let mut cost = 0.0;
    for (ai, w) in ch.weights.iter().enumerate() {
        for t in 0..k {
            cost += w * (p_flat[ai * k + t] - ch.baseline_flat[ai * k + t]).abs();
        }
    }
    cost
}

/// Total community discomfort-free objective of the desirable schedules:
/// the tracking cost alone, since deviations are zero by definition.
pub fn baseline_objective(inst: &CommunityInstance) -> f64 {
    let k = inst.grid.k;
    let mut load = vec![0.0; k];
    for h in &inst.homes {
        for a in h.appliances() {
            for (t, p) in h.baseline(a).iter().enumerate() {
                load[t] += p;
            }
        }
    }
    (0..k).map(|t| (inst.target_kwh[t] - load[t]).abs()).sum()
}

/// Recomputes a schedule's objective from its own entries: tracking
/// error plus weighted deviation magnitudes.
pub fn schedule_objective(inst: &CommunityInstance, s: &Schedule) -> f64 {
    let mut obj: f64 = s.deviation_kwh.iter().map(|d| d.abs()).sum();
    for (hs, spec) in s.homes.iter().zip(&inst.homes) {
        for aps in &hs.appliances {
            let w = spec.weight(aps.appliance);
            obj += w * aps.u_plus_kwh.iter().sum::<f64>();
        }
    }
    obj
}

fn schedule_from_draws(
    inst: &CommunityInstance,
    compiled: &[CompiledHome],
    draws: &[Vec<f64>],
) -> Schedule {
    let k = inst.grid.k;
    let mut load = vec![0.0; k];
    let mut homes = Vec::with_capacity(compiled.len());
    for (ch, p_flat) in compiled.iter().zip(draws) {
        let mut appliances = Vec::with_capacity(ch.appliances.len());
        for (ai, &a) in ch.appliances.iter().enumerate() {
            let p: Vec<f64> = p_flat[ai * k..(ai + 1) * k].to_vec();
            let u: Vec<f64> =
                (0..k).map(|t| (p[t] - ch.baseline_flat[ai * k + t]).abs()).collect();
            for t in 0..k {
                load[t] += p[t];
            }
            appliances.push(ApplianceSchedule { appliance: a, p_kwh: p, u_plus_kwh: u });
        }
        homes.push(HomeSchedule { home: ch.id, appliances });
    }
    let deviation_kwh = (0..k).map(|t| inst.target_kwh[t] - load[t]).collect();
    Schedule { homes, deviation_kwh }
}

/// Checks one home's flattened draw against its full polyhedron by
/// completing the internal variables and re-checking every row, bound,
/// and integrality requirement on the completed point.
fn audit_draw(ch: &CompiledHome, p_flat: &[f64], k: usize) -> Result<bool, DwError> {
    let mut partial = Point::new();
    let home = ch.id as usize;
    for (ai, &a) in ch.appliances.iter().enumerate() {
        for t in 0..k {
            let p = p_flat[ai * k + t];
            let u = (p - ch.baseline_flat[ai * k + t]).abs();
            partial.insert(vn(home, a, Symbol::P, t), p);
            partial.insert(vn(home, a, Symbol::UPlus, t), u);
        }
    }
    let Some(full) = complete_partial(&ch.block, &partial, COMPLETION_BAND)? else {
        return Ok(false);
    };
    Ok(check_membership(&ch.block, &full, MEMBERSHIP_TOL).is_empty())
}

fn audit_draws(compiled: &[CompiledHome], draws: &[Vec<f64>], k: usize) -> Result<bool, DwError> {
    let flags: Vec<bool> = compiled
        .par_iter()
        .zip(draws.par_iter())
        .map(|(ch, d)| audit_draw(ch, d, k))
        .collect::<Result<_, _>>()?;
    Ok(flags.into_iter().all(|ok| ok))
}

/// Shared master skeleton: tracking magnitude `s(t) >= |a(t)|` via two
/// one-sided rows, and a load-balance row per interval that the per-home
/// draw terms attach to. Row layout: `[0,k)` s-a, `[k,2k)` s+a,
/// `[2k,3k)` balance.
struct MasterSkeleton {
    s_vars: Vec<VarId>,
    a_vars: Vec<VarId>,
    balance_rows: Vec<RowId>,
}

fn build_master_skeleton(model: &mut LpModel, target: &[f64]) -> Result<MasterSkeleton, DwError> {
    let k = target.len();
    let mut s_vars = Vec::with_capacity(k);
    let mut a_vars = Vec::with_capacity(k);
    for _ in 0..k {
        s_vars.push(model.add_var(0.0, f64::INFINITY, 1.0, VarKind::Continuous)?);
        a_vars.push(model.add_var(f64::NEG_INFINITY, f64::INFINITY, 0.0, VarKind::Continuous)?);
    }
    for t in 0..k {
        let r = model.add_row(Sense::Ge, 0.0);
        model.add_entry(s_vars[t], r, 1.0)?;
        model.add_entry(a_vars[t], r, -1.0)?;
    }
    for t in 0..k {
        let r = model.add_row(Sense::Ge, 0.0);
        model.add_entry(s_vars[t], r, 1.0)?;
        model.add_entry(a_vars[t], r, 1.0)?;
    }
    let mut balance_rows = Vec::with_capacity(k);
    for t in 0..k {
        let r = model.add_row(Sense::Eq, target[t]);
        model.add_entry(a_vars[t], r, 1.0)?;
        balance_rows.push(r);
    }
    Ok(MasterSkeleton { s_vars, a_vars, balance_rows })
}

#[derive(Debug, Clone)]
pub struct CentralParams {
    pub rel_gap: f64,
    pub node_limit: u64,
    pub time_limit_s: Option<f64>,
}

impl Default for CentralParams {
    fn default() -> Self {
        CentralParams { rel_gap: FINAL_GAP_DEFAULT, node_limit: 10_000_000, time_limit_s: None }
    }
}

#[derive(Debug, Clone)]
pub struct CentralOutcome {
    pub objective: f64,
    /// Proven lower bound at exit.
    pub bound: f64,
    pub rel_gap: f64,
    pub status: MipStatus,
    pub nodes: u64,
    pub wall_s: f64,
    pub schedule: Schedule,
    /// Every home's draw re-verified against its own polyhedron and the
    /// solver's point re-checked row by row.
    pub audited: bool,
}

/// Solves the whole community as one integer program: minimize tracking
/// magnitude plus weighted deviations subject to every home's block and
/// the shared balance rows. Starts from the desirable schedules, which
/// are feasible by construction.
pub fn solve_centralized(
    inst: &CommunityInstance,
    params: &CentralParams,
) -> Result<CentralOutcome, DwError> {
    let t0 = Instant::now();
    let compiled = compile_homes(inst)?;
    let k = inst.grid.k;

    let mut model = LpModel::new();
    let skel = build_master_skeleton(&mut model, &inst.target_kwh)?;
    let mut maps = Vec::with_capacity(compiled.len());
    for ch in &compiled {
        let map = embed_block(&mut model, &ch.block)?;
        for (ai, &a) in ch.appliances.iter().enumerate() {
            for t in 0..k {
                let u = map[&vn(ch.id as usize, a, Symbol::UPlus, t)];
                model.set_objective_coef(u, ch.weights[ai])?;
                let p = map[&vn(ch.id as usize, a, Symbol::P, t)];
                model.add_entry(p, skel.balance_rows[t], 1.0)?;
            }
        }
        maps.push(map);
    }

    // Desirable schedules as the starting incumbent.
    let mut x0 = vec![0.0; model.n_cols()];
    let mut load = vec![0.0; k];
    for (ch, map) in compiled.iter().zip(&maps) {
        let point = baseline_point(&inst.homes[ch.idx], &inst.grid, &inst.weather_c)?;
        for (name, v) in &point {
            x0[map[name]] = *v;
        }
        for ai in 0..ch.appliances.len() {
            for t in 0..k {
                load[t] += ch.baseline_flat[ai * k + t];
            }
        }
    }
    for t in 0..k {
        let a = inst.target_kwh[t] - load[t];
        x0[skel.a_vars[t]] = a;
        x0[skel.s_vars[t]] = a.abs();
    }

    let sol = model.solve_mip(&MipParams {
        rel_gap: params.rel_gap,
        node_limit: params.node_limit,
        time_limit_s: params.time_limit_s,
        initial_incumbent: Some(x0),
    })?;
    if !matches!(sol.status, MipStatus::Optimal | MipStatus::Feasible) {
        return Err(DwError::Master(format!("centralized solve ended {:?}", sol.status)));
    }

    let draws: Vec<Vec<f64>> = compiled
        .iter()
        .zip(&maps)
        .map(|(ch, map)| {
            let mut p_flat = Vec::with_capacity(ch.appliances.len() * k);
            for &a in &ch.appliances {
                for t in 0..k {
                    p_flat.push(sol.x[map[&vn(ch.id as usize, a, Symbol::P, t)]]);
                }
            }
            p_flat
        })
        .collect();
    let schedule = schedule_from_draws(inst, &compiled, &draws);

    let mut audited = model.verify_solution(&sol.x).passes_audit();
    audited = audited && schedule.validate(inst).is_ok();
    // Per-home re-check on the solver's own point, internals included.
    for (ch, map) in compiled.iter().zip(&maps) {
        let mut point = Point::new();
        for (name, &id) in map {
            point.insert(*name, sol.x[id]);
        }
        audited = audited && check_membership(&ch.block, &point, MEMBERSHIP_TOL).is_empty();
    }

    Ok(CentralOutcome {
        objective: sol.obj,
        bound: sol.bound,
        rel_gap: sol.rel_gap,
        status: sol.status,
        nodes: sol.nodes,
        wall_s: t0.elapsed().as_secs_f64(),
        schedule,
        audited,
    })
}

/// Adds every variable and row of a block to `model`, returning the name
/// map. Costs start at zero.
fn embed_block(
    model: &mut LpModel,
    block: &LinearConstraintBlock,
) -> Result<std::collections::BTreeMap<crate::blocks::VarName, VarId>, DwError> {
    let mut map = std::collections::BTreeMap::new();
    for meta in block.vars() {
        let id = model.add_var(meta.lower, meta.upper, 0.0, meta.kind)?;
        map.insert(meta.name, id);
    }
    for row in block.rows() {
        let r = model.add_row(row.sense, row.rhs);
        for (name, coef) in &row.terms {
            model.add_entry(map[name], r, *coef)?;
        }
    }
    Ok(map)
}

/// One admitted per-home plan: its flattened draw and its master cost
/// (weighted deviation from the home's desirable schedule).
#[derive(Debug, Clone)]
pub struct Column {
    pub home: usize,
    pub p_flat: Vec<f64>,
    pub master_cost: f64,
}

struct PoolEntry {
    col: Column,
    var: VarId,
    zero_age: usize,
    live: bool,
    /// Initial columns are never pruned so the final master always has a
    /// known-feasible selection.
    protected: bool,
}

/// Per-home pricing state: the home's own block as a model whose draw
/// costs are re-pointed at the current balance duals each round.
struct PricingWorker {
    id: u32,
    model: LpModel,
    /// Draw variables, appliance-major.
    p_ids: Vec<VarId>,
    /// Feasible point reused as the starting incumbent each round.
    warm: Vec<f64>,
    node_limit: u64,
}

struct PricingOutcome {
    /// Incumbent objective: weighted deviation minus balance-dual credit.
    obj: f64,
    /// Proven lower bound on the pricing optimum; safe in the community
    /// bound even when a limit stops the proof.
    bound: f64,
    p_flat: Vec<f64>,
}

impl PricingWorker {
    fn new(
        ch: &CompiledHome,
        inst: &CommunityInstance,
        node_limit: u64,
    ) -> Result<Self, DwError> {
        let k = inst.grid.k;
        let (mut model, map) = ch.block.to_model()?;
        let mut p_ids = Vec::with_capacity(ch.appliances.len() * k);
        for (ai, &a) in ch.appliances.iter().enumerate() {
            for t in 0..k {
                let u = map[&vn(ch.id as usize, a, Symbol::UPlus, t)];
                model.set_objective_coef(u, ch.weights[ai])?;
                p_ids.push(map[&vn(ch.id as usize, a, Symbol::P, t)]);
            }
        }
        let point = baseline_point(&inst.homes[ch.idx], &inst.grid, &inst.weather_c)?;
        let mut warm = vec![0.0; model.n_cols()];
        for (name, v) in &point {
            warm[map[name]] = *v;
        }
        Ok(PricingWorker { id: ch.id, model, p_ids, warm, node_limit })
    }

    fn solve(&mut self, sigma3: &[f64], k: usize) -> Result<PricingOutcome, DwError> {
        for (j, &pid) in self.p_ids.iter().enumerate() {
            self.model.set_objective_coef(pid, -sigma3[j % k])?;
        }
        let sol = self.model.solve_mip(&MipParams {
            rel_gap: 0.0,
            node_limit: self.node_limit,
            time_limit_s: None,
            initial_incumbent: Some(self.warm.clone()),
        })?;
        if !matches!(sol.status, MipStatus::Optimal | MipStatus::Feasible) {
            return Err(DwError::Pricing { home: self.id, status: sol.status });
        }
        let p_flat = self.p_ids.iter().map(|&id| sol.x[id]).collect();
        self.warm = sol.x;
        Ok(PricingOutcome { obj: sol.obj, bound: sol.bound, p_flat })
    }
}

#[derive(Debug, Clone)]
pub struct DwParams {
    /// Stop once |master - bound| / |bound| falls to this.
    pub eps: f64,
    /// Prune a column after this many consecutive rounds unused;
    /// `None` disables pruning.
    pub kappa: Option<usize>,
    pub max_iters: usize,
    /// Relative gap for the final one-plan-per-home solve.
    pub final_gap: f64,
    pub time_limit_s: Option<f64>,
    pub pricing_node_limit: u64,
    /// Node budget for the final one-plan-per-home solve. Unlike the wall
    /// budget this truncates deterministically, so two runs of the same
    /// configuration stop at the same tree node and report identical
    /// objectives whenever the wall backstop stays quiet.
    pub commit_node_limit: u64,
}

impl Default for DwParams {
    fn default() -> Self {
        DwParams {
            eps: CG_EPS_DEFAULT,
            kappa: None,
            max_iters: 500,
            final_gap: FINAL_GAP_DEFAULT,
            time_limit_s: None,
            pricing_node_limit: 2_000_000,
            commit_node_limit: 10_000,
        }
    }
}

/// One generation round as recorded in the trace.
#[derive(Debug, Clone)]
pub struct IterRecord {
    pub iter: usize,
    pub z_rrmp: f64,
    pub xi: f64,
    pub rel_gap: f64,
    pub cols_total: usize,
    pub cols_pruned: usize,
    pub wall_ms: f64,
}

/// Why the generation loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    NoColumnsAdmitted,
    IterationCap,
    TimeBudget,
}

#[derive(Debug, Clone)]
pub struct DwOutcome {
    /// Final one-plan-per-home objective.
    pub objective: f64,
    /// Master value at the last generation round.
    pub relaxed_objective: f64,
    /// Best community lower bound seen across rounds.
    pub xi: f64,
    /// Final |master - bound| / |bound|.
    pub rel_gap: f64,
    pub iterations: usize,
    pub stop: StopReason,
    pub pruned_total: usize,
    pub wall_s: f64,
    /// Share of the wall spent committing (final integer master).
    pub final_solve_s: f64,
    /// Objective of the starting selection handed to the commit solve;
    /// the reported objective can only match or beat it.
    pub commit_start_objective: f64,
    /// Proven lower bound on the pool-restricted commit at exit. Only a
    /// statement about the surviving pool — the community bound is `xi`.
    pub commit_bound: f64,
    /// Live columns entering the final master.
    pub pool_final: usize,
    pub schedule: Schedule,
    /// Every home's selected plan re-verified against its own polyhedron.
    pub audited: bool,
    pub trace: Vec<IterRecord>,
}

/// Deterministic descent over one-home plan swaps: for each home in index
/// order, try every alternative plan and keep the one that most lowers
/// comfort cost plus tracking error; sweeps repeat until a full pass
/// changes nothing. A pass costs O(pool * k) arithmetic, dust next to any
/// master solve, and strict improvement makes termination certain.
fn swap_descent(
    target: &[f64],
    col_cost: &[f64],
    col_load: &[Vec<f64>],
    home_cols: &[Vec<usize>],
    pick: &mut [usize],
) {
    let k = target.len();
    let mut load = vec![0.0; k];
    for &j in pick.iter() {
        for t in 0..k {
            load[t] += col_load[j][t];
        }
    }
    loop {
        let mut changed = false;
        for h in 0..pick.len() {
            let cur = pick[h];
            let mut best: Option<(usize, f64)> = None;
            for &j in &home_cols[h] {
                if j == cur {
                    continue;
                }
                let mut delta = col_cost[j] - col_cost[cur];
                for t in 0..k {
                    let r = target[t] - load[t];
                    delta += (r + col_load[cur][t] - col_load[j][t]).abs() - r.abs();
                }
                if delta < -1e-9 && best.map_or(true, |(_, d)| delta < d) {
                    best = Some((j, delta));
                }
            }
            if let Some((j, _)) = best {
                for t in 0..k {
                    load[t] += col_load[j][t] - col_load[cur][t];
                }
                pick[h] = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

/// Decomposition heuristic: generate per-home plans against the master's
/// balance duals, keep the master's convex weighting honest, stop when
/// the master value meets the community bound, then commit to one plan
/// per home with an integer master solve.
pub fn solve_dantzig_wolfe(
    inst: &CommunityInstance,
    params: &DwParams,
) -> Result<DwOutcome, DwError> {
    let t0 = Instant::now();
    let compiled = compile_homes(inst)?;
    let k = inst.grid.k;
    let n = compiled.len();

    let mut rmp = LpModel::new();
    let skel = build_master_skeleton(&mut rmp, &inst.target_kwh)?;
    let mut convexity_rows = Vec::with_capacity(n);
    for _ in 0..n {
        convexity_rows.push(rmp.add_row(Sense::Eq, 1.0));
    }

    let mut workers: Vec<PricingWorker> = compiled
        .par_iter()
        .map(|ch| PricingWorker::new(ch, inst, params.pricing_node_limit))
        .collect::<Result<_, _>>()?;

    let mut pool: Vec<PoolEntry> = Vec::new();
    let add_column = |rmp: &mut LpModel, pool: &mut Vec<PoolEntry>, col: Column, protected: bool| -> Result<(), DwError> {
        let mut entries: Vec<(RowId, f64)> = Vec::with_capacity(k + 1);
        for t in 0..k {
            let total: f64 =
                (0..col.p_flat.len() / k).map(|ai| col.p_flat[ai * k + t]).sum();
            if total != 0.0 {
                entries.push((skel.balance_rows[t], total));
            }
        }
        entries.push((convexity_rows[col.home], 1.0));
        let var = rmp.add_var_with_entries(
            0.0,
            f64::INFINITY,
            col.master_cost,
            VarKind::Continuous,
            &entries,
        )?;
        pool.push(PoolEntry { col, var, zero_age: 0, live: true, protected });
        Ok(())
    };

    for ch in &compiled {
        let col = Column { home: ch.idx, p_flat: ch.baseline_flat.clone(), master_cost: 0.0 };
        add_column(&mut rmp, &mut pool, col, true)?;
    }

    let mut trace: Vec<IterRecord> = Vec::new();
    let mut best_xi = f64::NEG_INFINITY;
    let mut pruned_total = 0usize;
    let mut last_x: Option<Vec<f64>> = None;
    let mut stop = StopReason::IterationCap;
    let mut final_z = f64::INFINITY;
    let mut final_gap_seen = f64::INFINITY;

    for iter in 1..=params.max_iters {
        let sol = rmp.solve_lp(last_x.as_deref())?;
        if sol.status != LpStatus::Optimal {
            return Err(DwError::Master(format!("restricted master ended {:?}", sol.status)));
        }
        let z = sol.obj;
        final_z = z;
        let sigma3 = &sol.duals[2 * k..3 * k];
        let sigma4 = &sol.duals[3 * k..3 * k + n];

        let outs: Vec<PricingOutcome> = workers
            .par_iter_mut()
            .map(|w| w.solve(sigma3, k))
            .collect::<Result<_, _>>()?;

        let xi: f64 = (0..k).map(|t| inst.target_kwh[t] * sigma3[t]).sum::<f64>()
            + outs.iter().map(|o| o.bound).sum::<f64>();
        best_xi = best_xi.max(xi);
        let rel_gap = (z - xi).abs() / xi.abs().max(1e-10);
        final_gap_seen = rel_gap;

        // Age columns on this round's weights before any pool edits.
        for e in pool.iter_mut().filter(|e| e.live) {
            if sol.x[e.var].abs() <= PRUNE_EPS {
                e.zero_age += 1;
            } else {
                e.zero_age = 0;
            }
        }

        let cols_live = pool.iter().filter(|e| e.live).count();
        trace.push(IterRecord {
            iter,
            z_rrmp: z,
            xi,
            rel_gap,
            cols_total: cols_live,
            cols_pruned: pruned_total,
            wall_ms: t0.elapsed().as_secs_f64() * 1e3,
        });

        if rel_gap <= params.eps {
            stop = StopReason::Converged;
            break;
        }
        if params
            .time_limit_s
            .is_some_and(|b| t0.elapsed().as_secs_f64() > b * LOOP_BUDGET_SHARE)
        {
            stop = StopReason::TimeBudget;
            break;
        }

        let mut admitted = 0usize;
        for (i, out) in outs.iter().enumerate() {
            if out.obj < sigma4[i] - ADMIT_TOL {
                let col = Column {
                    home: i,
                    master_cost: draw_cost(&compiled[i], &out.p_flat, k),
                    p_flat: out.p_flat.clone(),
                };
                add_column(&mut rmp, &mut pool, col, false)?;
                admitted += 1;
            }
        }

        if let Some(kappa) = params.kappa {
            let mut live_per_home = vec![0usize; n];
            for e in pool.iter().filter(|e| e.live) {
                live_per_home[e.col.home] += 1;
            }
            let mut victims = Vec::new();
            for e in pool.iter_mut() {
                if e.live
                    && !e.protected
                    && e.zero_age >= kappa
                    && live_per_home[e.col.home] > 1
                {
                    live_per_home[e.col.home] -= 1;
                    e.live = false;
                    victims.push(e.var);
                }
            }
            if !victims.is_empty() {
                rmp.remove_columns(&victims)?;
                pruned_total += victims.len();
            }
        }

        last_x = Some(sol.x.clone());
        if admitted == 0 {
            stop = StopReason::NoColumnsAdmitted;
            break;
        }
        if iter == params.max_iters {
            stop = StopReason::IterationCap;
        }
    }

    // Commit: same master rows, binary weights over the surviving pool.
    let t_final = Instant::now();
    let live: Vec<&PoolEntry> = pool.iter().filter(|e| e.live).collect();
    // Total load per live column and the columns each home owns; all the
    // commit-phase machinery below works off these tables.
    let col_load: Vec<Vec<f64>> = live
        .iter()
        .map(|e| {
            (0..k)
                .map(|t| (0..e.col.p_flat.len() / k).map(|ai| e.col.p_flat[ai * k + t]).sum())
                .collect()
        })
        .collect();
    let col_cost: Vec<f64> = live.iter().map(|e| e.col.master_cost).collect();
    let mut home_cols: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (j, e) in live.iter().enumerate() {
        home_cols[e.col.home].push(j);
    }

    let mut fin = LpModel::new();
    let fskel = build_master_skeleton(&mut fin, &inst.target_kwh)?;
    let mut fconv = Vec::with_capacity(n);
    for _ in 0..n {
        fconv.push(fin.add_row(Sense::Eq, 1.0));
    }
    let mut fvars = Vec::with_capacity(live.len());
    for (j, e) in live.iter().enumerate() {
        let mut entries: Vec<(RowId, f64)> = Vec::with_capacity(k + 1);
        for t in 0..k {
            if col_load[j][t] != 0.0 {
                entries.push((fskel.balance_rows[t], col_load[j][t]));
            }
        }
        entries.push((fconv[e.col.home], 1.0));
        fvars.push(fin.add_var_with_entries(0.0, 1.0, col_cost[j], VarKind::Integer, &entries)?);
    }

    let selection_objective = |pick: &[usize]| -> f64 {
        let mut load = vec![0.0; k];
        let mut cost = 0.0;
        for &j in pick {
            cost += col_cost[j];
            for t in 0..k {
                load[t] += col_load[j][t];
            }
        }
        cost + (0..k).map(|t| (inst.target_kwh[t] - load[t]).abs()).sum::<f64>()
    };

    // Starting incumbent, first candidate: an LP dive. Relax integrality,
    // then each round pin every decided open home — heaviest weight above
    // the threshold, or the single most decided one when none qualifies —
    // and re-solve so the remaining homes adapt. Feasibility is never at
    // risk: open homes keep their whole pools and the deviation variables
    // are free, so every round's LP stays solvable. Skipped when the wall
    // budget is nearly gone; the baseline candidate needs no solves.
    let mut pick_dive = vec![usize::MAX; n];
    if params.time_limit_s.map_or(true, |b| b - t0.elapsed().as_secs_f64() >= 5.0) {
        let mut dive = LpModel::new();
        let dskel = build_master_skeleton(&mut dive, &inst.target_kwh)?;
        let mut dconv = Vec::with_capacity(n);
        for _ in 0..n {
            dconv.push(dive.add_row(Sense::Eq, 1.0));
        }
        let mut dvars = Vec::with_capacity(live.len());
        for (j, e) in live.iter().enumerate() {
            let mut entries: Vec<(RowId, f64)> = Vec::with_capacity(k + 1);
            for t in 0..k {
                if col_load[j][t] != 0.0 {
                    entries.push((dskel.balance_rows[t], col_load[j][t]));
                }
            }
            entries.push((dconv[e.col.home], 1.0));
            dvars.push(dive.add_var_with_entries(
                0.0,
                1.0,
                col_cost[j],
                VarKind::Continuous,
                &entries,
            )?);
        }
        let mut open = n;
        'dive: while open > 0 {
            let sol = match dive.solve_lp(None) {
                Ok(s) if s.status == LpStatus::Optimal => s,
                _ => break 'dive,
            };
            let mut pinned_this_round = 0usize;
            let mut runner_up: Option<(usize, f64)> = None;
            for (h, cols) in home_cols.iter().enumerate() {
                if pick_dive[h] != usize::MAX {
                    continue;
                }
                let mut best = (usize::MAX, -1.0);
                for &j in cols {
                    let v = sol.x[dvars[j]];
                    if v > best.1 {
                        best = (j, v);
                    }
                }
                if best.0 == usize::MAX {
                    break 'dive;
                }
                if best.1 >= DIVE_PIN_THRESHOLD {
                    pick_dive[h] = best.0;
                    dive.set_var_bounds(dvars[best.0], 1.0, 1.0)?;
                    open -= 1;
                    pinned_this_round += 1;
                } else if runner_up.map_or(true, |(_, w)| best.1 > w) {
                    runner_up = Some((best.0, best.1));
                }
            }
            if pinned_this_round == 0 {
                let Some((j, _)) = runner_up else { break 'dive };
                pick_dive[live[j].col.home] = j;
                dive.set_var_bounds(dvars[j], 1.0, 1.0)?;
                open -= 1;
            }
        }
    }

    // Second candidate: the protected initials outright. Passing the
    // cheaper complete candidate guarantees the commit never ends above
    // the desirable schedules' objective, even when its budget expires
    // immediately.
    let mut pick_base = vec![usize::MAX; n];
    for (j, e) in live.iter().enumerate() {
        if pick_base[e.col.home] == usize::MAX && e.protected {
            pick_base[e.col.home] = j;
        }
    }
    let dive_complete = pick_dive.iter().all(|&j| j != usize::MAX);
    let mut pick =
        if dive_complete && selection_objective(&pick_dive) <= selection_objective(&pick_base) {
            pick_dive
        } else {
            pick_base
        };
    swap_descent(&inst.target_kwh, &col_cost, &col_load, &home_cols, &mut pick);
    let commit_start_objective = selection_objective(&pick);

    let fin_cols = fin.n_cols();
    let point_of = |pick: &[usize]| -> Vec<f64> {
        let mut x = vec![0.0; fin_cols];
        let mut load = vec![0.0; k];
        for &j in pick {
            x[fvars[j]] = 1.0;
            for t in 0..k {
                load[t] += col_load[j][t];
            }
        }
        for t in 0..k {
            let a = inst.target_kwh[t] - load[t];
            x[fskel.a_vars[t]] = a;
            x[fskel.s_vars[t]] = a.abs();
        }
        x
    };

    // The commit step spends whatever wall budget is left, with a floor so
    // it is not strangled when the loop ran long. The node cap is the
    // deterministic limit meant to bind first; with an incumbent always
    // supplied, hitting either limit degrades to Feasible, never worse.
    let remaining = params
        .time_limit_s
        .map(|b| (b - t0.elapsed().as_secs_f64()).max(1.0));
    let fsol = fin.solve_mip(&MipParams {
        rel_gap: params.final_gap,
        node_limit: params.commit_node_limit,
        time_limit_s: remaining,
        initial_incumbent: Some(point_of(&pick)),
    })?;
    if !matches!(fsol.status, MipStatus::Optimal | MipStatus::Feasible) {
        return Err(DwError::Master(format!("final master ended {:?}", fsol.status)));
    }

    let mut selection = vec![usize::MAX; n];
    for (j, e) in live.iter().enumerate() {
        if fsol.x[fvars[j]] > 0.5 {
            selection[e.col.home] = j;
        }
    }
    if selection.iter().any(|&j| j == usize::MAX) {
        return Err(DwError::Master("final master left a home unassigned".into()));
    }
    // The tree may stop on its node cap; polishing its answer the same way
    // cannot hurt and recovers much of what a truncated search misses.
    swap_descent(&inst.target_kwh, &col_cost, &col_load, &home_cols, &mut selection);
    let objective = selection_objective(&selection);
    let x_final = point_of(&selection);
    let draws: Vec<Vec<f64>> =
        selection.iter().map(|&j| live[j].col.p_flat.clone()).collect();
    let schedule = schedule_from_draws(inst, &compiled, &draws);
    let mut audited = fin.verify_solution(&x_final).passes_audit();
    audited = audited && schedule.validate(inst).is_ok();
    audited = audited && audit_draws(&compiled, &draws, k)?;

    Ok(DwOutcome {
        objective,
        relaxed_objective: final_z,
        xi: best_xi,
        rel_gap: final_gap_seen,
        iterations: trace.len(),
        stop,
        pruned_total,
        wall_s: t0.elapsed().as_secs_f64(),
        final_solve_s: t_final.elapsed().as_secs_f64(),
        commit_start_objective,
        commit_bound: fsol.bound,
        pool_final: live.len(),
        schedule,
        audited,
        trace,
    })
}

/// Writes the generation trace in `iter,z_rrmp,xi,rel_gap,cols_total,cols_pruned,wall_ms` form.
pub fn write_trace_csv<W: IoWrite>(trace: &[IterRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "iter,z_rrmp,xi,rel_gap,cols_total,cols_pruned,wall_ms")?;
    for r in trace {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.iter, r.z_rrmp, r.xi, r.rel_gap, r.cols_total, r.cols_pruned, r.wall_ms
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::community::{generate_community, synth_weather, GenConfig};
    use crate::model::TimeGrid;

    fn tiny_instance(homes: usize, k: usize, seed: u64) -> CommunityInstance {
        let grid = TimeGrid::new(k, 0.25).unwrap();
        let weather_c = synth_weather(&grid, -2.0, 10.0);
        let cfg = GenConfig { homes, grid, weather_c };
        generate_community(&cfg, seed).unwrap().instance
    }

    #[test]
    fn centralized_beats_baseline_and_passes_audits() {
        let inst = tiny_instance(2, 8, 5);
        let out = solve_centralized(&inst, &CentralParams::default()).unwrap();
        assert!(out.audited, "centralized audits failed");
        assert!(out.objective <= baseline_objective(&inst) + 1e-6);
        assert!(out.bound <= out.objective + 1e-9);
        let recomputed = schedule_objective(&inst, &out.schedule);
        assert!(
            (recomputed - out.objective).abs() <= 1e-6,
            "solver {} vs recomputed {}",
            out.objective,
            recomputed
        );
    }

    #[test]
    fn generation_starts_from_the_baselines() {
        let inst = tiny_instance(2, 8, 9);
        let out = solve_dantzig_wolfe(&inst, &DwParams::default()).unwrap();
        assert!((out.trace[0].z_rrmp - baseline_objective(&inst)).abs() <= 1e-9);
    }

    #[test]
    fn master_value_never_increases_and_gap_closes() {
        let inst = tiny_instance(3, 8, 12);
        let out = solve_dantzig_wolfe(&inst, &DwParams::default()).unwrap();
        for pair in out.trace.windows(2) {
            assert!(
                pair[1].z_rrmp <= pair[0].z_rrmp + 1e-7,
                "master rose from {} to {}",
                pair[0].z_rrmp,
                pair[1].z_rrmp
            );
        }
        assert!(out.rel_gap <= CG_EPS_DEFAULT, "gap {}", out.rel_gap);
        assert!(out.audited);
    }

    #[test]
    fn bound_and_objectives_sandwich() {
        let inst = tiny_instance(2, 8, 21);
        let dw = solve_dantzig_wolfe(&inst, &DwParams::default()).unwrap();
        let central = solve_centralized(&inst, &CentralParams::default()).unwrap();
        assert!(dw.xi <= central.objective + 1e-6, "xi {} central {}", dw.xi, central.objective);
        assert!(
            central.objective <= dw.objective + 1e-6,
            "central {} dw {}",
            central.objective,
            dw.objective
        );
        let recomputed = schedule_objective(&inst, &dw.schedule);
        assert!((recomputed - dw.objective).abs() <= 1e-6);
    }

    #[test]
    fn aggressive_pruning_keeps_runs_sound() {
        let inst = tiny_instance(3, 8, 33);
        let params = DwParams { kappa: Some(1), ..DwParams::default() };
        let out = solve_dantzig_wolfe(&inst, &params).unwrap();
        for pair in out.trace.windows(2) {
            assert!(pair[1].z_rrmp <= pair[0].z_rrmp + 1e-7);
        }
        assert!(out.audited);
        assert!(out.rel_gap <= CG_EPS_DEFAULT);
        // Committing is at least as costly as the community bound, and the
        // no-pruning run lands in the same neighborhood.
        assert!(out.objective >= out.xi - 1e-7);
        let loose = solve_dantzig_wolfe(&inst, &DwParams::default()).unwrap();
        let rel = (out.objective - loose.objective).abs() / loose.objective.abs().max(1e-10);
        assert!(rel <= 5e-2, "pruned {} vs loose {}", out.objective, loose.objective);
    }

    #[test]
    fn runs_are_bit_for_bit_repeatable() {
        let inst = tiny_instance(2, 8, 44);
        let a = solve_dantzig_wolfe(&inst, &DwParams::default()).unwrap();
        let b = solve_dantzig_wolfe(&inst, &DwParams::default()).unwrap();
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
        assert_eq!(a.iterations, b.iterations);
        for (ra, rb) in a.trace.iter().zip(&b.trace) {
            assert_eq!(ra.z_rrmp.to_bits(), rb.z_rrmp.to_bits());
            assert_eq!(ra.xi.to_bits(), rb.xi.to_bits());
        }
        let ca = solve_centralized(&inst, &CentralParams::default()).unwrap();
        let cb = solve_centralized(&inst, &CentralParams::default()).unwrap();
        assert_eq!(ca.objective.to_bits(), cb.objective.to_bits());
    }

    #[test]
    fn swap_descent_reaches_the_better_assignment() {
        // target [2,2]; home 0 owns plans [2,0] and [1,1], home 1 owns
        // [1,1]. Starting from ([2,0],[1,1]) the swap to [1,1] tracks the
        // target exactly.
        let target = [2.0, 2.0];
        let col_cost = [0.0, 0.0, 0.0];
        let col_load = vec![vec![2.0, 0.0], vec![1.0, 1.0], vec![1.0, 1.0]];
        let home_cols = vec![vec![0, 1], vec![2]];
        let mut pick = vec![0, 2];
        swap_descent(&target, &col_cost, &col_load, &home_cols, &mut pick);
        assert_eq!(pick, vec![1, 2]);
    }

    #[test]
    fn swap_descent_leaves_a_local_optimum_alone() {
        let target = [2.0, 2.0];
        let col_cost = [0.0, 5.0];
        let col_load = vec![vec![2.0, 2.0], vec![2.0, 2.0]];
        let home_cols = vec![vec![0, 1]];
        let mut pick = vec![0];
        swap_descent(&target, &col_cost, &col_load, &home_cols, &mut pick);
        assert_eq!(pick, vec![0]);
    }

    #[test]
    fn zero_node_commit_still_returns_an_audited_schedule() {
        // With no tree nodes at all, the commit must fall back to the
        // supplied incumbent, which can never cost more than the
        // desirable baselines.
        let inst = tiny_instance(3, 8, 17);
        let params = DwParams { commit_node_limit: 0, ..DwParams::default() };
        let out = solve_dantzig_wolfe(&inst, &params).unwrap();
        assert!(out.audited);
        assert!(out.objective <= baseline_objective(&inst) + 1e-6);
        assert!(
            out.objective <= out.commit_start_objective + 1e-9,
            "commit went backwards: {} vs start {}",
            out.objective,
            out.commit_start_objective
        );
    }

    #[test]
    fn trace_csv_has_header_and_one_row_per_round() {
        let inst = tiny_instance(2, 8, 50);
        let out = solve_dantzig_wolfe(&inst, &DwParams::default()).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&out.trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "iter,z_rrmp,xi,rel_gap,cols_total,cols_pruned,wall_ms");
        assert_eq!(lines.len(), out.trace.len() + 1);
    }
}
