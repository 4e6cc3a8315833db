//! Bounded-variable revised primal simplex with a product-form basis
//! update, Devex pricing, and a composite phase 1 that drives bound
//! violations of the starting basis to zero.
//!
//! Columns `0..n` are structural, `n..n+m` are the logicals of the rows
//! (one per row, coefficient +1). Nonbasic variables carry an explicit
//! value: a bound for bounded variables, any finite value for free ones,
//! which is what makes warm starts from a known good point cheap.

use super::lu::{self, Lu, LuScratch};

pub const FEAS_TOL: f64 = 1e-9;
pub const DUAL_TOL: f64 = 1e-9;
pub const LU_PIVOT_TOL: f64 = 1e-10;
pub const ZERO_TOL: f64 = 1e-11;
const REFACTOR_ETAS: usize = 64;
const STALL_LIMIT: u64 = 2000;
const VERIFY_ROUNDS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CState {
    Basic(u32),
    Nonbasic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveOutcome {
    Optimal,
    Infeasible,
    Unbounded,
    /// No progress within numerical safeguards; never reported as optimal.
    Stalled,
    /// The wall deadline fired mid-solve; basis and values stay consistent
    /// but no verdict on the relaxation is implied.
    Deadline,
}

#[derive(Debug, Default, Clone)]
pub struct Stats {
    pub iterations: u64,
    pub factorizations: u64,
    pub repairs: u64,
}

enum PhaseExit {
    Done,
    Unbounded,
    Stalled,
    Deadline,
}

enum Step {
    Pivot { theta: f64, slot: usize, at_upper: bool },
    Flip { theta: f64 },
    Unbounded,
}

pub struct Work {
    pub m: usize,
    pub n: usize,
    // Structural columns and their row-major transpose.
    pub col_ptr: Vec<usize>,
    pub col_rows: Vec<usize>,
    pub col_vals: Vec<f64>,
    pub row_ptr: Vec<usize>,
    pub row_cols: Vec<usize>,
    pub row_vals: Vec<f64>,
    pub rhs: Vec<f64>,
    // Bounds, costs, kinds over structural plus logical columns.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cost: Vec<f64>,
    pub integer: Vec<bool>,
    pub state: Vec<CState>,
    /// Value of each nonbasic column; untouched while basic.
    pub nb_value: Vec<f64>,
    pub basis: Vec<usize>,
    pub xb: Vec<f64>,
    lu: Lu,
    etas: Vec<Eta>,
    lu_scratch: LuScratch,
    factorized: bool,
    y: Vec<f64>,
    d: Vec<f64>,
    devex: Vec<f64>,
    wa: Vec<f64>,
    wb: Vec<f64>,
    alpha: Vec<f64>,
    rho_touch: Vec<(usize, f64)>,
    pub stats: Stats,
    pub iteration_cap: u64,
    /// Iteration count at the start of the current optimize call; the cap
    /// bounds the per-call delta while `stats` stays cumulative.
    iter_floor: u64,
    /// Wall clock past which pivoting stops; polled every few dozen
    /// iterations so long relaxations cannot overrun an enclosing budget.
    pub deadline: Option<std::time::Instant>,
}

#[derive(Debug)]
struct Eta {
    r: u32,
    pivot: f64,
    idx: Vec<u32>,
    val: Vec<f64>,
}

impl Work {
    /// `entries[j]` lists (row, value) pairs of structural column `j`;
    /// duplicate rows are merged. `logical_bounds[r]` gives the logical's
    /// range encoding row r's sense.
    pub fn new(
        m: usize,
        rhs: Vec<f64>,
        entries: &[Vec<(usize, f64)>],
        lower_s: &[f64],
        upper_s: &[f64],
        cost_s: &[f64],
        integer_s: &[bool],
        logical_bounds: &[(f64, f64)],
    ) -> Self {
        let n = entries.len();
        debug_assert_eq!(rhs.len(), m);
        debug_assert_eq!(logical_bounds.len(), m);
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut col_rows = Vec::new();
        let mut col_vals = Vec::new();
        col_ptr.push(0);
        let mut merge: Vec<(usize, f64)> = Vec::new();
        for col in entries {
            merge.clear();
            merge.extend_from_slice(col);
            merge.sort_unstable_by_key(|e| e.0);
            let mut i = 0;
            while i < merge.len() {
                let row = merge[i].0;
                debug_assert!(row < m);
                let mut v = merge[i].1;
                let mut j = i + 1;
                while j < merge.len() && merge[j].0 == row {
                    v += merge[j].1;
                    j += 1;
                }
                if v != 0.0 {
                    col_rows.push(row);
                    col_vals.push(v);
                }
                i = j;
            }
            col_ptr.push(col_rows.len());
        }
        let mut row_ptr = vec![0usize; m + 1];
        for &r in &col_rows {
            row_ptr[r + 1] += 1;
        }
        for r in 0..m {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut row_cols = vec![0usize; col_rows.len()];
        let mut row_vals = vec![0.0; col_rows.len()];
        let mut cursor = row_ptr.clone();
        for j in 0..n {
            for e in col_ptr[j]..col_ptr[j + 1] {
                let r = col_rows[e];
                row_cols[cursor[r]] = j;
                row_vals[cursor[r]] = col_vals[e];
                cursor[r] += 1;
            }
        }

        let total = n + m;
        let mut lower = Vec::with_capacity(total);
        let mut upper = Vec::with_capacity(total);
        let mut cost = Vec::with_capacity(total);
        let mut integer = Vec::with_capacity(total);
        lower.extend_from_slice(lower_s);
        upper.extend_from_slice(upper_s);
        cost.extend_from_slice(cost_s);
        integer.extend_from_slice(integer_s);
        for &(l, u) in logical_bounds {
            lower.push(l);
            upper.push(u);
            cost.push(0.0);
            integer.push(false);
        }

        let iteration_cap = 50_000 + 200 * (m as u64) + 20 * (n as u64);
        Work {
            m,
            n,
            col_ptr,
            col_rows,
            col_vals,
            row_ptr,
            row_cols,
            row_vals,
            rhs,
            lower,
            upper,
            cost,
            integer,
            state: vec![CState::Nonbasic; total],
            nb_value: vec![0.0; total],
            basis: Vec::new(),
            xb: vec![0.0; m],
            lu: Lu::default(),
            etas: Vec::new(),
            lu_scratch: LuScratch::default(),
            factorized: false,
            y: vec![0.0; m],
            d: vec![0.0; total],
            devex: vec![1.0; total],
            wa: vec![0.0; m],
            wb: vec![0.0; m],
            alpha: vec![0.0; m],
            rho_touch: Vec::new(),
            stats: Stats::default(),
            iteration_cap,
            iter_floor: 0,
            deadline: None,
        }
    }

    #[inline]
    pub fn total_cols(&self) -> usize {
        self.n + self.m
    }

    /// Current value of any column.
    #[inline]
    pub fn value_of(&self, j: usize) -> f64 {
        match self.state[j] {
            CState::Basic(p) => self.xb[p as usize],
            CState::Nonbasic => self.nb_value[j],
        }
    }

    pub fn objective(&self) -> f64 {
        let mut z = 0.0;
        for j in 0..self.n {
            if self.cost[j] != 0.0 {
                z += self.cost[j] * self.value_of(j);
            }
        }
        z
    }

    /// Snaps every nonbasic value back inside its (possibly narrowed)
    /// bounds. Free-variable reference values are preserved.
    pub fn clamp_nonbasics(&mut self) {
        for j in 0..self.total_cols() {
            if let CState::Nonbasic = self.state[j] {
                let v = self.nb_value[j].clamp(self.lower[j], self.upper[j]);
                self.nb_value[j] = if v.is_finite() { v } else { 0.0 };
            }
        }
    }

    /// Sets all nonbasic values: bounded columns to the bound nearest the
    /// reference, free columns to the reference itself. `reference` covers
    /// structural columns; logicals default to their tightest finite bound.
    pub fn set_reference(&mut self, reference: Option<&[f64]>) {
        for j in 0..self.total_cols() {
            let r = match reference {
                Some(xs) if j < xs.len() => xs[j],
                _ => 0.0,
            };
            let (l, u) = (self.lower[j], self.upper[j]);
            let v = if l.is_finite() && u.is_finite() {
                if (r - l).abs() <= (u - r).abs() {
                    l
                } else {
                    u
                }
            } else if l.is_finite() {
                l
            } else if u.is_finite() {
                u
            } else {
                r
            };
            self.nb_value[j] = if v.is_finite() { v } else { 0.0 };
        }
    }

    /// Triangular crash: repeatedly seats a column that is the last
    /// unassigned candidate of some equality row, which unwinds recursion
    /// chains; all remaining rows get their logicals.
    pub fn crash_basis(&mut self) {
        let total = self.total_cols();
        for j in 0..total {
            self.state[j] = CState::Nonbasic;
        }
        self.basis = (0..self.m).map(|r| self.n + r).collect();

        let eq_row: Vec<bool> = (0..self.m)
            .map(|r| self.lower[self.n + r] == self.upper[self.n + r])
            .collect();
        let mut row_assigned = vec![false; self.m];
        let mut col_assigned = vec![false; self.n];

        let mut cnt = vec![0usize; self.n];
        for j in 0..self.n {
            if self.lower[j] >= self.upper[j] {
                continue;
            }
            let mut c = 0;
            for e in self.col_ptr[j]..self.col_ptr[j + 1] {
                if eq_row[self.col_rows[e]] && self.col_vals[e].abs() > 1e-7 {
                    c += 1;
                }
            }
            cnt[j] = c;
        }
        let mut queue: std::collections::VecDeque<usize> =
            (0..self.n).filter(|&j| cnt[j] == 1).collect();
        while let Some(j) = queue.pop_front() {
            if col_assigned[j] || cnt[j] != 1 {
                continue;
            }
            let mut target = None;
            for e in self.col_ptr[j]..self.col_ptr[j + 1] {
                let r = self.col_rows[e];
                if eq_row[r] && !row_assigned[r] && self.col_vals[e].abs() > 1e-7 {
                    target = Some(r);
                    break;
                }
            }
            let Some(r) = target else { continue };
            row_assigned[r] = true;
            col_assigned[j] = true;
            self.basis[r] = j;
            self.state[j] = CState::Basic(r as u32);
            for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                let jj = self.row_cols[e];
                if !col_assigned[jj] && self.row_vals[e].abs() > 1e-7 && cnt[jj] > 0 {
                    cnt[jj] -= 1;
                    if cnt[jj] == 1 {
                        queue.push_back(jj);
                    }
                }
            }
        }
        for r in 0..self.m {
            if self.basis[r] == self.n + r {
                self.state[self.n + r] = CState::Basic(r as u32);
            }
        }
        self.factorized = false;
        self.etas.clear();
    }

    /// Seats a caller-provided basis; `slots[r]` is the column basic at
    /// row r. Every other column keeps its nonbasic value.
    pub fn adopt_basis(&mut self, slots: Vec<usize>) {
        debug_assert_eq!(slots.len(), self.m);
        for j in 0..self.total_cols() {
            self.state[j] = CState::Nonbasic;
        }
        self.basis = slots;
        for (r, &j) in self.basis.iter().enumerate() {
            self.state[j] = CState::Basic(r as u32);
        }
        self.factorized = false;
        self.etas.clear();
    }

    pub fn refactorize(&mut self) {
        let Work { m, n, basis, col_ptr, col_rows, col_vals, lu_scratch, .. } = self;
        let (m, n) = (*m, *n);
        let fact = lu::factorize(
            m,
            |slot, out| {
                let j = basis[slot];
                if j < n {
                    for e in col_ptr[j]..col_ptr[j + 1] {
                        out.push((col_rows[e], col_vals[e]));
                    }
                } else {
                    out.push((j - n, 1.0));
                }
            },
            LU_PIVOT_TOL,
            lu_scratch,
        );
        self.stats.factorizations += 1;
        for &(slot, row) in &fact.repaired {
            self.stats.repairs += 1;
            let displaced = self.basis[slot];
            let v = self.xb[slot].clamp(self.lower[displaced], self.upper[displaced]);
            self.nb_value[displaced] = if v.is_finite() { v } else { 0.0 };
            self.state[displaced] = CState::Nonbasic;
            let logical = self.n + row;
            self.basis[slot] = logical;
            self.state[logical] = CState::Basic(slot as u32);
        }
        self.lu = fact.lu;
        self.etas.clear();
        self.factorized = true;
    }

    /// Recomputes basic values from scratch: xb = B^-1 (b - N x_N).
    pub fn compute_xb(&mut self) {
        if !self.factorized {
            self.refactorize();
        }
        self.wa.copy_from_slice(&self.rhs);
        for j in 0..self.total_cols() {
            if let CState::Nonbasic = self.state[j] {
                let v = self.nb_value[j];
                if v != 0.0 {
                    if j < self.n {
                        for e in self.col_ptr[j]..self.col_ptr[j + 1] {
                            self.wa[self.col_rows[e]] -= self.col_vals[e] * v;
                        }
                    } else {
                        self.wa[j - self.n] -= v;
                    }
                }
            }
        }
        let Work { lu, etas, wa, xb, .. } = self;
        lu.ftran(wa, xb);
        for eta in etas.iter() {
            apply_eta(eta, xb);
        }
    }

    /// alpha = B^-1 A_j, fully overwritten.
    fn ftran_col(&mut self, j: usize) {
        for v in self.wa.iter_mut() {
            *v = 0.0;
        }
        if j < self.n {
            for e in self.col_ptr[j]..self.col_ptr[j + 1] {
                self.wa[self.col_rows[e]] += self.col_vals[e];
            }
        } else {
            self.wa[j - self.n] = 1.0;
        }
        let Work { lu, etas, wa, alpha, .. } = self;
        lu.ftran(wa, alpha);
        for eta in etas.iter() {
            apply_eta(eta, alpha);
        }
    }

    /// Full dual refresh for the given phase: recomputes y and every
    /// nonbasic reduced cost.
    fn refresh_duals(&mut self, phase1: bool) {
        for r in 0..self.m {
            let j = self.basis[r];
            self.wb[r] = if phase1 {
                let x = self.xb[r];
                if x > self.upper[j] + FEAS_TOL {
                    1.0
                } else if x < self.lower[j] - FEAS_TOL {
                    -1.0
                } else {
                    0.0
                }
            } else {
                self.cost[j]
            };
        }
        {
            let Work { lu, etas, y, wb, .. } = self;
            for eta in etas.iter().rev() {
                apply_eta_transposed(eta, wb);
            }
            lu.btran(wb, y);
        }
        for j in 0..self.total_cols() {
            if let CState::Basic(_) = self.state[j] {
                self.d[j] = 0.0;
            } else {
                self.d[j] = self.direct_reduced_cost(j, phase1);
            }
        }
    }

    fn direct_reduced_cost(&self, j: usize, phase1: bool) -> f64 {
        let mut acc = if phase1 || j >= self.n { 0.0 } else { self.cost[j] };
        if j < self.n {
            for e in self.col_ptr[j]..self.col_ptr[j + 1] {
                acc -= self.y[self.col_rows[e]] * self.col_vals[e];
            }
        } else {
            acc -= self.y[j - self.n];
        }
        acc
    }

    fn max_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.m {
            let j = self.basis[r];
            let x = self.xb[r];
            worst = worst.max(self.lower[j] - x).max(x - self.upper[j]);
        }
        worst
    }

    fn price(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.total_cols() {
            if let CState::Basic(_) = self.state[j] {
                continue;
            }
            let (l, u) = (self.lower[j], self.upper[j]);
            if l == u {
                continue;
            }
            let v = self.nb_value[j];
            let dj = self.d[j];
            let dir = if dj < -DUAL_TOL && v < u - 1e-12 {
                1.0
            } else if dj > DUAL_TOL && v > l + 1e-12 {
                -1.0
            } else {
                continue;
            };
            if bland {
                return Some((j, dir));
            }
            let score = dj * dj / self.devex[j];
            if best.map_or(true, |(_, _, s)| score > s) {
                best = Some((j, dir, score));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    /// Two-pass ratio test over alpha: find the tightest limit, then pick
    /// the stablest blocker within a relative tie window.
    fn ratio_test(&self, q: usize, dir: f64, phase1: bool, bland: bool) -> Step {
        let vq = self.nb_value[q];
        let own_limit = if dir > 0.0 { self.upper[q] - vq } else { vq - self.lower[q] };

        let limit_of = |r: usize| -> Option<(f64, bool)> {
            let a = self.alpha[r];
            if a.abs() <= ZERO_TOL {
                return None;
            }
            let rate = -dir * a;
            let j = self.basis[r];
            let (l, u) = (self.lower[j], self.upper[j]);
            let x = self.xb[r];
            if phase1 && x < l - FEAS_TOL {
                if rate > 0.0 {
                    Some((((l - x) / rate).max(0.0), false))
                } else {
                    None
                }
            } else if phase1 && x > u + FEAS_TOL {
                if rate < 0.0 {
                    Some((((u - x) / rate).max(0.0), true))
                } else {
                    None
                }
            } else if rate > 0.0 {
                u.is_finite().then(|| (((u - x) / rate).max(0.0), true))
            } else {
                l.is_finite().then(|| (((l - x) / rate).max(0.0), false))
            }
        };

        let mut min_limit = f64::INFINITY;
        for r in 0..self.m {
            if let Some((lim, _)) = limit_of(r) {
                if lim < min_limit {
                    min_limit = lim;
                }
            }
        }
        if own_limit <= min_limit {
            return if own_limit.is_finite() {
                Step::Flip { theta: own_limit }
            } else {
                Step::Unbounded
            };
        }
        let window = min_limit * (1.0 + 1e-9) + 1e-12;
        let mut chosen: Option<(usize, f64, bool)> = None;
        for r in 0..self.m {
            if let Some((lim, at_upper)) = limit_of(r) {
                if lim <= window {
                    let a = self.alpha[r].abs();
                    let better = match chosen {
                        None => true,
                        Some((cr, ca, _)) => {
                            if bland {
                                self.basis[r] < self.basis[cr]
                            } else {
                                a > ca || (a == ca && r < cr)
                            }
                        }
                    };
                    if better {
                        chosen = Some((r, a, at_upper));
                    }
                }
            }
        }
        match chosen {
            Some((slot, _, at_upper)) => Step::Pivot { theta: min_limit, slot, at_upper },
            None => Step::Unbounded,
        }
    }

    fn apply_flip(&mut self, q: usize, dir: f64, theta: f64) {
        for r in 0..self.m {
            let a = self.alpha[r];
            if a != 0.0 {
                self.xb[r] -= dir * theta * a;
            }
        }
        self.nb_value[q] = if dir > 0.0 { self.upper[q] } else { self.lower[q] };
    }

    fn apply_pivot(
        &mut self,
        q: usize,
        dir: f64,
        theta: f64,
        slot: usize,
        at_upper: bool,
        phase1: bool,
    ) {
        let enter_val = self.nb_value[q] + dir * theta;
        let leave = self.basis[slot];
        let pivot_alpha = self.alpha[slot];

        if !phase1 {
            // Maintained duals: y += theta_d * v with v = B^-T e_slot;
            // d_j -= theta_d * rho_j with rho_j = v . A_j. The same rho
            // feeds the Devex reference weights.
            let theta_d = self.d[q] / pivot_alpha;
            for v in self.wb.iter_mut() {
                *v = 0.0;
            }
            self.wb[slot] = 1.0;
            {
                let Work { lu, etas, wa, wb, .. } = self;
                for eta in etas.iter().rev() {
                    apply_eta_transposed(eta, wb);
                }
                lu.btran(wb, wa);
            }
            let devex_q = self.devex[q];
            self.rho_touch.clear();
            for r in 0..self.m {
                let vr = self.wa[r];
                if vr == 0.0 {
                    continue;
                }
                for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                    self.rho_touch.push((self.row_cols[e], vr * self.row_vals[e]));
                }
                self.rho_touch.push((self.n + r, vr));
            }
            self.rho_touch.sort_unstable_by_key(|e| e.0);
            let mut i = 0;
            while i < self.rho_touch.len() {
                let j = self.rho_touch[i].0;
                let mut rho = self.rho_touch[i].1;
                let mut k = i + 1;
                while k < self.rho_touch.len() && self.rho_touch[k].0 == j {
                    rho += self.rho_touch[k].1;
                    k += 1;
                }
                i = k;
                if j == q || rho == 0.0 {
                    continue;
                }
                if let CState::Nonbasic = self.state[j] {
                    self.d[j] -= theta_d * rho;
                    let ratio = rho / pivot_alpha;
                    let cand = ratio * ratio * devex_q;
                    if cand > self.devex[j] {
                        self.devex[j] = cand;
                    }
                }
            }
            for (yv, &vv) in self.y.iter_mut().zip(self.wa.iter()) {
                *yv += theta_d * vv;
            }
            self.d[leave] = -theta_d;
            self.d[q] = 0.0;
            self.devex[leave] = (devex_q / (pivot_alpha * pivot_alpha)).max(1.0);
        }

        for r in 0..self.m {
            let a = self.alpha[r];
            if a != 0.0 && r != slot {
                self.xb[r] -= dir * theta * a;
            }
        }
        let leave_bound = if at_upper { self.upper[leave] } else { self.lower[leave] };
        self.nb_value[leave] =
            if leave_bound.is_finite() { leave_bound } else { self.xb[slot] - dir * theta * pivot_alpha };
        self.state[leave] = CState::Nonbasic;
        self.xb[slot] = enter_val;
        self.basis[slot] = q;
        self.state[q] = CState::Basic(slot as u32);

        let mut idx = Vec::new();
        let mut val = Vec::new();
        for r in 0..self.m {
            let a = self.alpha[r];
            if r != slot && a.abs() > ZERO_TOL {
                idx.push(r as u32);
                val.push(a);
            }
        }
        self.etas.push(Eta { r: slot as u32, pivot: pivot_alpha, idx, val });
    }

    fn run_phase(&mut self, phase1: bool) -> PhaseExit {
        for w in self.devex.iter_mut() {
            *w = 1.0;
        }
        if !phase1 {
            self.refresh_duals(false);
        }
        let mut bland = false;
        let mut degenerate_run: u64 = 0;
        loop {
            if self.stats.iterations - self.iter_floor > self.iteration_cap {
                return PhaseExit::Stalled;
            }
            if self.stats.iterations & 63 == 0 {
                if let Some(t) = self.deadline {
                    if std::time::Instant::now() >= t {
                        return PhaseExit::Deadline;
                    }
                }
            }
            if phase1 && self.max_violation() <= FEAS_TOL {
                return PhaseExit::Done;
            }
            if self.etas.len() >= REFACTOR_ETAS {
                self.refactorize();
                self.compute_xb();
                if !phase1 {
                    self.refresh_duals(false);
                }
            }
            if phase1 {
                // Phase-1 costs flip as basics cross bounds, so the duals
                // are recomputed every iteration.
                self.refresh_duals(true);
            }
            let Some((q, dir)) = self.price(bland) else {
                return PhaseExit::Done;
            };
            if !phase1 {
                let fresh = self.direct_reduced_cost(q, false);
                self.d[q] = fresh;
                let still = (dir > 0.0 && fresh < -DUAL_TOL) || (dir < 0.0 && fresh > DUAL_TOL);
                if !still {
                    continue;
                }
            }
            self.ftran_col(q);
            self.stats.iterations += 1;
            match self.ratio_test(q, dir, phase1, bland) {
                Step::Unbounded => {
                    return if phase1 { PhaseExit::Stalled } else { PhaseExit::Unbounded };
                }
                Step::Flip { theta } => {
                    self.apply_flip(q, dir, theta);
                    if theta <= 1e-12 {
                        degenerate_run += 1;
                    } else {
                        degenerate_run = 0;
                        bland = false;
                    }
                }
                Step::Pivot { theta, slot, at_upper } => {
                    if self.alpha[slot].abs() < 1e-9 {
                        self.refactorize();
                        self.compute_xb();
                        if !phase1 {
                            self.refresh_duals(false);
                        }
                        continue;
                    }
                    self.apply_pivot(q, dir, theta, slot, at_upper, phase1);
                    if theta <= 1e-12 {
                        degenerate_run += 1;
                    } else {
                        degenerate_run = 0;
                        bland = false;
                    }
                }
            }
            if degenerate_run > STALL_LIMIT {
                bland = true;
            }
        }
    }

    /// Runs the full primal algorithm from the current basis and states.
    pub fn optimize(&mut self) -> SolveOutcome {
        self.iter_floor = self.stats.iterations;
        if self.basis.len() != self.m {
            self.crash_basis();
        }
        if !self.factorized {
            self.refactorize();
        }
        self.clamp_nonbasics();
        self.compute_xb();
        let mut unbounded_strikes = 0;
        for _round in 0..VERIFY_ROUNDS {
            if self.max_violation() > FEAS_TOL {
                match self.run_phase(true) {
                    PhaseExit::Done => {}
                    PhaseExit::Deadline => return SolveOutcome::Deadline,
                    PhaseExit::Unbounded | PhaseExit::Stalled => return SolveOutcome::Stalled,
                }
                if self.max_violation() > FEAS_TOL {
                    // Verify the infeasibility verdict on fresh numbers.
                    self.refactorize();
                    self.compute_xb();
                    if self.max_violation() > FEAS_TOL {
                        self.refresh_duals(true);
                        if self.price(false).is_none() {
                            return SolveOutcome::Infeasible;
                        }
                        continue;
                    }
                }
            }
            match self.run_phase(false) {
                PhaseExit::Done => {
                    self.refactorize();
                    self.compute_xb();
                    if self.max_violation() > FEAS_TOL {
                        continue;
                    }
                    self.refresh_duals(false);
                    if self.price(false).is_none() {
                        return SolveOutcome::Optimal;
                    }
                }
                PhaseExit::Unbounded => {
                    unbounded_strikes += 1;
                    self.refactorize();
                    self.compute_xb();
                    if unbounded_strikes >= 2 {
                        return SolveOutcome::Unbounded;
                    }
                }
                PhaseExit::Deadline => return SolveOutcome::Deadline,
                PhaseExit::Stalled => return SolveOutcome::Stalled,
            }
        }
        SolveOutcome::Stalled
    }

    /// Dual values per row for the current basis under the real objective.
    pub fn duals(&mut self) -> Vec<f64> {
        for r in 0..self.m {
            self.wb[r] = self.cost[self.basis[r]];
        }
        let Work { lu, etas, wb, wa, .. } = self;
        for eta in etas.iter().rev() {
            apply_eta_transposed(eta, wb);
        }
        lu.btran(wb, wa);
        self.wa.clone()
    }

    pub fn extract_x(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.value_of(j)).collect()
    }
}

#[inline]
fn apply_eta(eta: &Eta, v: &mut [f64]) {
    let r = eta.r as usize;
    let t = v[r] / eta.pivot;
    if t != 0.0 {
        for (i, &a) in eta.idx.iter().zip(eta.val.iter()) {
            v[*i as usize] -= a * t;
        }
    }
    v[r] = t;
}

#[inline]
fn apply_eta_transposed(eta: &Eta, w: &mut [f64]) {
    let r = eta.r as usize;
    let mut acc = w[r];
    for (i, &a) in eta.idx.iter().zip(eta.val.iter()) {
        acc -= a * w[*i as usize];
    }
    w[r] = acc / eta.pivot;
}
