//! Mixed-integer linear programming kernel.
//!
//! `LpModel` holds rows and columns with stable ids: retiring a column
//! tombstones it instead of shifting indices, which lets column-generation
//! callers keep handles across edits. Relaxations are solved by a
//! bounded-variable revised simplex over sparse LU factors; integrality is
//! handled by best-bound branch and bound with interval propagation.

mod branch;
mod lu;
mod simplex;
mod tighten;

use thiserror::Error;

use branch::branch_and_bound;
use simplex::{SolveOutcome, Work};

pub use branch::INT_TOL;

/// Row/bound residual tolerance for external audits of reported points.
pub const AUDIT_FEAS_TOL: f64 = 1e-7;
/// Integrality tolerance for external audits.
pub const AUDIT_INT_TOL: f64 = 1e-6;

pub type VarId = usize;
pub type RowId = usize;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum VarKind {
    Continuous,
    Integer,
}

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("column {0} does not exist or was removed")]
    BadColumn(usize),
    #[error("row {0} does not exist")]
    BadRow(usize),
    #[error("column {col}: lower bound {lower} exceeds upper bound {upper}")]
    BadBounds { col: usize, lower: f64, upper: f64 },
    #[error("column {0} carries a nonzero value in the last solution")]
    RemoveNonzero(usize),
    #[error("removing column {col} would empty unsatisfiable row {row}")]
    RemoveWouldEmptyRow { col: usize, row: usize },
    #[error("supplied incumbent rejected: {0}")]
    BadIncumbent(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MipStatus {
    /// Incumbent proven within the requested gap.
    Optimal,
    /// Incumbent found but a limit stopped the proof.
    Feasible,
    Infeasible,
    Unbounded,
    /// A limit stopped the search before any incumbent appeared.
    NoIncumbent,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Values per column id; tombstoned columns report zero.
    pub x: Vec<f64>,
    /// Dual value per row (basis duals under the real objective).
    pub duals: Vec<f64>,
    /// Reduced cost per column id, computed as c_j - y.a_j.
    pub reduced_costs: Vec<f64>,
    pub obj: f64,
    pub iterations: u64,
}

#[derive(Clone, Debug)]
pub struct MipSolution {
    pub status: MipStatus,
    pub x: Vec<f64>,
    pub obj: f64,
    /// Proven lower bound on the optimum at exit.
    pub bound: f64,
    pub rel_gap: f64,
    pub nodes: u64,
    pub lp_iterations: u64,
}

#[derive(Clone, Debug)]
pub struct MipParams {
    /// Stop once |obj - bound| / max(|bound|, 1e-10) falls to this.
    pub rel_gap: f64,
    pub node_limit: u64,
    pub time_limit_s: Option<f64>,
    /// Feasible point to start from; rejected if it fails an audit.
    pub initial_incumbent: Option<Vec<f64>>,
}

impl Default for MipParams {
    fn default() -> Self {
        MipParams {
            rel_gap: 1e-6,
            node_limit: 2_000_000,
            time_limit_s: None,
            initial_incumbent: None,
        }
    }
}

/// Worst residual per constraint family for an audited point.
#[derive(Clone, Copy, Debug, Default)]
pub struct ResidualReport {
    pub max_le: f64,
    pub max_eq: f64,
    pub max_ge: f64,
    pub max_bound: f64,
    pub max_integrality: f64,
}

impl ResidualReport {
    pub fn max_row(&self) -> f64 {
        self.max_le.max(self.max_eq).max(self.max_ge)
    }

    pub fn within(&self, row_tol: f64, int_tol: f64) -> bool {
        self.max_row() <= row_tol && self.max_bound <= row_tol && self.max_integrality <= int_tol
    }

    pub fn passes_audit(&self) -> bool {
        self.within(AUDIT_FEAS_TOL, AUDIT_INT_TOL)
    }
}

struct Col {
    lower: f64,
    upper: f64,
    cost: f64,
    kind: VarKind,
    /// Merged (row, coef) pairs, one entry per row.
    entries: Vec<(usize, f64)>,
    live: bool,
}

struct RowRec {
    sense: Sense,
    rhs: f64,
    /// Count of live columns holding an entry on this row.
    live_entries: usize,
}

struct SavedBasis {
    rows_len: usize,
    /// Basis member per slot: Ok(col id) or Err(row id) for a logical.
    members: Vec<Result<usize, usize>>,
    /// Nonbasic values: per column id, then per row logical.
    nb_cols: Vec<f64>,
    nb_logicals: Vec<f64>,
}

#[derive(Default)]
pub struct LpModel {
    rows: Vec<RowRec>,
    cols: Vec<Col>,
    saved: Option<SavedBasis>,
    /// Column values at the most recent solve, indexed by column id.
    last_x: Vec<f64>,
}

impl LpModel {
    pub fn new() -> Self {
        LpModel::default()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn n_live_cols(&self) -> usize {
        self.cols.iter().filter(|c| c.live).count()
    }

    pub fn add_row(&mut self, sense: Sense, rhs: f64) -> RowId {
        self.saved = None;
        self.rows.push(RowRec { sense, rhs, live_entries: 0 });
        self.rows.len() - 1
    }

    pub fn add_var(
        &mut self,
        lower: f64,
        upper: f64,
        cost: f64,
        kind: VarKind,
    ) -> Result<VarId, KernelError> {
        let col = self.cols.len();
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(KernelError::BadBounds { col, lower, upper });
        }
        self.cols.push(Col { lower, upper, cost, kind, entries: Vec::new(), live: true });
        self.last_x.push(0.0);
        Ok(col)
    }

    pub fn add_var_with_entries(
        &mut self,
        lower: f64,
        upper: f64,
        cost: f64,
        kind: VarKind,
        entries: &[(RowId, f64)],
    ) -> Result<VarId, KernelError> {
        let v = self.add_var(lower, upper, cost, kind)?;
        for &(r, a) in entries {
            self.add_entry(v, r, a)?;
        }
        Ok(v)
    }

    /// Accumulates `coef` onto the (var, row) cell.
    pub fn add_entry(&mut self, var: VarId, row: RowId, coef: f64) -> Result<(), KernelError> {
        if row >= self.rows.len() {
            return Err(KernelError::BadRow(row));
        }
        let col = self.cols.get_mut(var).filter(|c| c.live).ok_or(KernelError::BadColumn(var))?;
        if let Some(e) = col.entries.iter_mut().find(|e| e.0 == row) {
            e.1 += coef;
        } else {
            col.entries.push((row, coef));
            self.rows[row].live_entries += 1;
        }
        Ok(())
    }

    pub fn set_objective_coef(&mut self, var: VarId, cost: f64) -> Result<(), KernelError> {
        let col = self.cols.get_mut(var).filter(|c| c.live).ok_or(KernelError::BadColumn(var))?;
        col.cost = cost;
        Ok(())
    }

    pub fn set_var_bounds(
        &mut self,
        var: VarId,
        lower: f64,
        upper: f64,
    ) -> Result<(), KernelError> {
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(KernelError::BadBounds { col: var, lower, upper });
        }
        let col = self.cols.get_mut(var).filter(|c| c.live).ok_or(KernelError::BadColumn(var))?;
        col.lower = lower;
        col.upper = upper;
        Ok(())
    }

    pub fn var_bounds(&self, var: VarId) -> Result<(f64, f64), KernelError> {
        let col = self.cols.get(var).filter(|c| c.live).ok_or(KernelError::BadColumn(var))?;
        Ok((col.lower, col.upper))
    }

    pub fn objective_coef(&self, var: VarId) -> Result<f64, KernelError> {
        let col = self.cols.get(var).filter(|c| c.live).ok_or(KernelError::BadColumn(var))?;
        Ok(col.cost)
    }

    pub fn is_live(&self, var: VarId) -> bool {
        self.cols.get(var).is_some_and(|c| c.live)
    }

    /// Tombstones the given columns. Refused if a column still carried a
    /// nonzero value at the last solve, or if removal would leave an
    /// unsatisfiable row without any live entry.
    pub fn remove_columns(&mut self, vars: &[VarId]) -> Result<(), KernelError> {
        let mut flag = vec![false; self.cols.len()];
        for &v in vars {
            if !self.is_live(v) {
                return Err(KernelError::BadColumn(v));
            }
            if self.last_x.get(v).copied().unwrap_or(0.0).abs() > 1e-7 {
                return Err(KernelError::RemoveNonzero(v));
            }
            flag[v] = true;
        }
        // Per-row count of entries lost to this removal.
        let mut lost = vec![0usize; self.rows.len()];
        for (v, f) in flag.iter().enumerate() {
            if *f {
                for &(r, _) in &self.cols[v].entries {
                    lost[r] += 1;
                }
            }
        }
        for (r, rec) in self.rows.iter().enumerate() {
            if rec.live_entries > lost[r] || lost[r] == 0 {
                continue;
            }
            let impossible = match rec.sense {
                Sense::Eq => rec.rhs.abs() > 1e-12,
                Sense::Ge => rec.rhs > 1e-12,
                Sense::Le => rec.rhs < -1e-12,
            };
            if impossible {
                let col = vars
                    .iter()
                    .copied()
                    .find(|&v| self.cols[v].entries.iter().any(|e| e.0 == r))
                    .unwrap_or(vars[0]);
                return Err(KernelError::RemoveWouldEmptyRow { col, row: r });
            }
        }
        for (v, f) in flag.iter().enumerate() {
            if !*f {
                continue;
            }
            for &(r, _) in &self.cols[v].entries {
                self.rows[r].live_entries -= 1;
            }
            let col = &mut self.cols[v];
            col.live = false;
            col.lower = 0.0;
            col.upper = 0.0;
            col.cost = 0.0;
            self.last_x[v] = 0.0;
        }
        // Drop the saved basis if it referenced a removed column.
        if let Some(saved) = &self.saved {
            let hit = saved.members.iter().any(|m| matches!(m, Ok(v) if flag[*v]));
            if hit {
                self.saved = None;
            }
        }
        Ok(())
    }

    fn live_ids(&self) -> Vec<usize> {
        (0..self.cols.len()).filter(|&v| self.cols[v].live).collect()
    }

    fn logical_bounds(sense: Sense) -> (f64, f64) {
        match sense {
            Sense::Le => (0.0, f64::INFINITY),
            Sense::Ge => (f64::NEG_INFINITY, 0.0),
            Sense::Eq => (0.0, 0.0),
        }
    }

    fn build_work(&self) -> (Work, Vec<usize>) {
        let live = self.live_ids();
        let mut entries = Vec::with_capacity(live.len());
        let mut lower = Vec::with_capacity(live.len());
        let mut upper = Vec::with_capacity(live.len());
        let mut cost = Vec::with_capacity(live.len());
        let mut integer = Vec::with_capacity(live.len());
        for &v in &live {
            let c = &self.cols[v];
            entries.push(c.entries.clone());
            lower.push(c.lower);
            upper.push(c.upper);
            cost.push(c.cost);
            integer.push(c.kind == VarKind::Integer);
        }
        let rhs: Vec<f64> = self.rows.iter().map(|r| r.rhs).collect();
        let logical: Vec<(f64, f64)> =
            self.rows.iter().map(|r| Self::logical_bounds(r.sense)).collect();
        let work = Work::new(
            self.rows.len(),
            rhs,
            &entries,
            &lower,
            &upper,
            &cost,
            &integer,
            &logical,
        );
        (work, live)
    }

    /// Seats the saved basis onto a freshly built work, if still valid.
    fn try_restore(&self, work: &mut Work, live: &[usize]) -> bool {
        let Some(saved) = &self.saved else { return false };
        if saved.rows_len != self.rows.len() || saved.members.len() != self.rows.len() {
            return false;
        }
        let mut work_index = vec![usize::MAX; self.cols.len()];
        for (j, &v) in live.iter().enumerate() {
            work_index[v] = j;
        }
        let mut slots = Vec::with_capacity(self.rows.len());
        for m in &saved.members {
            match *m {
                Ok(v) => {
                    let Some(&j) = work_index.get(v) else { return false };
                    if j == usize::MAX {
                        return false;
                    }
                    slots.push(j);
                }
                Err(r) => slots.push(live.len() + r),
            }
        }
        work.adopt_basis(slots);
        for (j, &v) in live.iter().enumerate() {
            if let Some(&val) = saved.nb_cols.get(v) {
                work.nb_value[j] = val;
            }
        }
        for r in 0..self.rows.len() {
            work.nb_value[live.len() + r] = saved.nb_logicals[r];
        }
        work.clamp_nonbasics();
        true
    }

    fn snapshot(&mut self, work: &Work, live: &[usize]) {
        let n = live.len();
        let mut members = Vec::with_capacity(work.m);
        for &j in &work.basis {
            members.push(if j < n { Ok(live[j]) } else { Err(j - n) });
        }
        let mut nb_cols = vec![0.0; self.cols.len()];
        for (j, &v) in live.iter().enumerate() {
            nb_cols[v] = work.nb_value[j];
        }
        let nb_logicals = (0..work.m).map(|r| work.nb_value[n + r]).collect();
        self.saved = Some(SavedBasis { rows_len: self.rows.len(), members, nb_cols, nb_logicals });
    }

    fn record_last_x(&mut self, live: &[usize], x_work: &[f64]) {
        for v in self.last_x.iter_mut() {
            *v = 0.0;
        }
        for (j, &v) in live.iter().enumerate() {
            self.last_x[v] = x_work[j];
        }
    }

    /// Solves the continuous relaxation. `reference` optionally seeds
    /// nonbasic values (by column id) when no saved basis applies: bounded
    /// columns start at the bound nearest the reference, free columns start
    /// exactly on it.
    pub fn solve_lp(&mut self, reference: Option<&[f64]>) -> Result<LpSolution, KernelError> {
        let (mut work, live) = self.build_work();
        if !self.try_restore(&mut work, &live) {
            if let Some(xs) = reference {
                let mapped: Vec<f64> =
                    live.iter().map(|&v| xs.get(v).copied().unwrap_or(0.0)).collect();
                work.set_reference(Some(&mapped));
            }
            work.crash_basis();
        }
        match work.optimize() {
            SolveOutcome::Optimal => {}
            SolveOutcome::Infeasible => {
                return Ok(LpSolution {
                    status: LpStatus::Infeasible,
                    x: Vec::new(),
                    duals: Vec::new(),
                    reduced_costs: Vec::new(),
                    obj: f64::INFINITY,
                    iterations: work.stats.iterations,
                })
            }
            SolveOutcome::Unbounded => {
                return Ok(LpSolution {
                    status: LpStatus::Unbounded,
                    x: Vec::new(),
                    duals: Vec::new(),
                    reduced_costs: Vec::new(),
                    obj: f64::NEG_INFINITY,
                    iterations: work.stats.iterations,
                })
            }
            SolveOutcome::Stalled => {
                return Err(KernelError::Numerical("simplex stalled on the relaxation".into()))
            }
            // Plain relaxation solves never arm a deadline.
            SolveOutcome::Deadline => {
                return Err(KernelError::Numerical(
                    "relaxation interrupted by a deadline none requested".into(),
                ))
            }
        }
        let x_work = work.extract_x();
        let duals = work.duals();
        let mut x = vec![0.0; self.cols.len()];
        let mut reduced = vec![0.0; self.cols.len()];
        for (j, &v) in live.iter().enumerate() {
            x[v] = x_work[j];
            let col = &self.cols[v];
            let mut d = col.cost;
            for &(r, a) in &col.entries {
                d -= duals[r] * a;
            }
            reduced[v] = d;
        }
        let obj = work.objective();
        self.snapshot(&work, &live);
        self.record_last_x(&live, &x_work);
        Ok(LpSolution {
            status: LpStatus::Optimal,
            x,
            duals,
            reduced_costs: reduced,
            obj,
            iterations: work.stats.iterations,
        })
    }

    /// Solves the model with integrality enforced on integer columns.
    pub fn solve_mip(&mut self, params: &MipParams) -> Result<MipSolution, KernelError> {
        let (mut work, live) = self.build_work();
        if !self.try_restore(&mut work, &live) {
            work.crash_basis();
        }
        let mut mapped_params = params.clone();
        if let Some(x0) = &params.initial_incumbent {
            if x0.len() != self.cols.len() {
                return Err(KernelError::BadIncumbent(format!(
                    "incumbent has {} entries, model has {} columns",
                    x0.len(),
                    self.cols.len()
                )));
            }
            mapped_params.initial_incumbent =
                Some(live.iter().map(|&v| x0[v]).collect::<Vec<f64>>());
        }
        let raw = branch_and_bound(&mut work, &mapped_params)?;
        let mut x = vec![0.0; self.cols.len()];
        if raw.x.len() == live.len() {
            for (j, &v) in live.iter().enumerate() {
                x[v] = raw.x[j];
            }
        }
        let rel_gap = match raw.status {
            MipStatus::Optimal | MipStatus::Feasible if raw.bound.is_finite() => {
                (raw.obj - raw.bound).abs() / raw.bound.abs().max(1e-10)
            }
            _ => f64::INFINITY,
        };
        if matches!(raw.status, MipStatus::Optimal | MipStatus::Feasible) {
            self.snapshot(&work, &live);
            self.record_last_x(&live, &raw.x);
        }
        Ok(MipSolution {
            status: raw.status,
            x,
            obj: raw.obj,
            bound: raw.bound,
            rel_gap,
            nodes: raw.nodes,
            lp_iterations: raw.lp_iterations,
        })
    }

    /// Objective value of an arbitrary point (by column id).
    pub fn objective_of(&self, x: &[f64]) -> f64 {
        let mut z = 0.0;
        for (v, col) in self.cols.iter().enumerate() {
            if col.live && col.cost != 0.0 {
                z += col.cost * x.get(v).copied().unwrap_or(0.0);
            }
        }
        z
    }

    /// Audits a point against rows, bounds and integrality; never solves.
    pub fn verify_solution(&self, x: &[f64]) -> ResidualReport {
        let mut rep = ResidualReport::default();
        let mut activity = vec![0.0; self.rows.len()];
        for (v, col) in self.cols.iter().enumerate() {
            if !col.live {
                continue;
            }
            let xv = x.get(v).copied().unwrap_or(0.0);
            if !xv.is_finite() {
                rep.max_bound = f64::INFINITY;
                continue;
            }
            rep.max_bound = rep.max_bound.max(col.lower - xv).max(xv - col.upper);
            if col.kind == VarKind::Integer {
                rep.max_integrality = rep.max_integrality.max((xv - xv.round()).abs());
            }
            if xv != 0.0 {
                for &(r, a) in &col.entries {
                    activity[r] += a * xv;
                }
            }
        }
        for (r, rec) in self.rows.iter().enumerate() {
            let resid = activity[r] - rec.rhs;
            match rec.sense {
                Sense::Le => rep.max_le = rep.max_le.max(resid),
                Sense::Ge => rep.max_ge = rep.max_ge.max(-resid),
                Sense::Eq => rep.max_eq = rep.max_eq.max(resid.abs()),
            }
        }
        rep.max_bound = rep.max_bound.max(0.0);
        rep
    }

    /// Renders the live model in LP text format. `names[v]` labels column v
    /// when provided; anonymous columns print as x{v}.
    pub fn to_lp_text(&self, names: Option<&[String]>) -> String {
        use std::fmt::Write;
        let name = |v: usize| -> String {
            match names.and_then(|ns| ns.get(v)) {
                Some(s) if !s.is_empty() => s.clone(),
                _ => format!("x{v}"),
            }
        };
        let mut out = String::new();
        out.push_str("Minimize\n obj:");
        let mut first = true;
        for (v, col) in self.cols.iter().enumerate() {
            if !col.live || col.cost == 0.0 {
                continue;
            }
            push_term(&mut out, &mut first, col.cost, &name(v));
        }
        if first {
            out.push_str(" 0 x0");
        }
        out.push_str("\nSubject To\n");
        let mut row_terms: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.rows.len()];
        for (v, col) in self.cols.iter().enumerate() {
            if !col.live {
                continue;
            }
            for &(r, a) in &col.entries {
                if a != 0.0 {
                    row_terms[r].push((v, a));
                }
            }
        }
        for (r, rec) in self.rows.iter().enumerate() {
            let _ = write!(out, " r{r}:");
            let mut first = true;
            for &(v, a) in &row_terms[r] {
                push_term(&mut out, &mut first, a, &name(v));
            }
            if first {
                out.push_str(" 0 x0");
            }
            let op = match rec.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, " {op} {}", fmt_num(rec.rhs));
        }
        out.push_str("Bounds\n");
        for (v, col) in self.cols.iter().enumerate() {
            if !col.live {
                continue;
            }
            let n = name(v);
            let _ = match (col.lower.is_finite(), col.upper.is_finite()) {
                (true, true) => {
                    writeln!(out, " {} <= {n} <= {}", fmt_num(col.lower), fmt_num(col.upper))
                }
                (true, false) => writeln!(out, " {} <= {n}", fmt_num(col.lower)),
                (false, true) => writeln!(out, " -inf <= {n} <= {}", fmt_num(col.upper)),
                (false, false) => writeln!(out, " {n} free"),
            };
        }
        let generals: Vec<String> = self
            .cols
            .iter()
            .enumerate()
            .filter(|(_, c)| c.live && c.kind == VarKind::Integer)
            .map(|(v, _)| name(v))
            .collect();
        if !generals.is_empty() {
            out.push_str("General\n");
            for g in generals {
                let _ = writeln!(out, " {g}");
            }
        }
        out.push_str("End\n");
        out
    }
}

fn fmt_num(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn push_term(out: &mut String, first: &mut bool, coef: f64, name: &str) {
    use std::fmt::Write;
    if coef < 0.0 {
        out.push_str(" -");
    } else if !*first {
        out.push_str(" +");
    }
    let mag = coef.abs();
    let _ = if (mag - 1.0).abs() < 1e-15 {
        write!(out, " {name}")
    } else {
        write!(out, " {} {name}", fmt_num(mag))
    };
    *first = false;
}
