//! Compiles each appliance's comfort model into a tagged block of linear
//! rows and variable bounds over named variables, and provides the
//! operations the solvers need on top of those blocks: merging the blocks
//! of one home into its feasible polyhedron, membership checks, exhaustive
//! enumeration of small mixed-integer blocks, and construction of the
//! occupant's baseline point.
//!
//! Every row and every tagged bound carries a short stable tag (for
//! example `hvac_b` or `wm_d`) so tests can audit that each family of
//! constraints is emitted exactly once and with the expected cardinality.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::milp::{KernelError, LpModel, LpStatus, Sense, VarId, VarKind};
use crate::model::{
    ApplianceId, ApplianceSpec, BasicApplianceParams, EvParams, EwhParams, HomeSpec, HvacMode,
    HvacParams, ModelError, TimeGrid,
};

/// Joules per kilowatt-hour; converts electrical energy bookkeeping (kWh)
/// into the thermal units the temperature dynamics are written in.
pub const JOULES_PER_KWH: f64 = 3.6e6;

/// Big-M for the switching rows linking thermostat activity to the
/// setpoint, in degrees Celsius. Indoor temperatures stay far inside
/// (-100, 100) for any sane instance.
pub const BIG_M_TEMP_C: f64 = 100.0;

/// Default tolerance for membership checks.
pub const MEMBERSHIP_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum BlockError {
    #[error("duplicate variable {0}")]
    DuplicateVar(String),
    #[error("row {tag} references undeclared variable {name}")]
    Undeclared { tag: &'static str, name: String },
    #[error("row {tag} has a non-finite or zero coefficient on {name}")]
    BadCoefficient { tag: &'static str, name: String },
    #[error("row {tag} has a non-finite right-hand side")]
    BadRhs { tag: &'static str },
    #[error("bad parameter: {0}")]
    BadParams(String),
    #[error("enumeration supports at most {cap} free binaries, block has {count}")]
    TooManyBinaries { count: usize, cap: usize },
    #[error("point is missing variable {0}")]
    MissingVar(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Role of a variable inside an appliance block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    /// Electrical energy drawn in an interval, kWh.
    P,
    /// Magnitude of the deviation from the baseline draw, kWh.
    UPlus,
    /// Indoor temperature, Celsius. Indexed 0..=k.
    TIn,
    /// Thermostat setpoint, Celsius.
    TSet,
    /// Fraction of the interval the HVAC runs, in [0, 1].
    Duty,
    /// Shortfall below the comfort band, Celsius.
    SMinus,
    /// Excursion above the comfort band, Celsius.
    SPlus,
    /// Stored quantity (hot water kg, or battery kWh). Indexed 0..=k.
    Store,
    /// Water heated from tap to delivery temperature in an interval, kg.
    HeatKg,
    /// Charging current, amps.
    Amps,
    /// Appliance is running this interval.
    On,
    /// Run starts this interval.
    Start,
    /// Run stopped at the start of this interval.
    Stop,
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Symbol::P => "p",
            Symbol::UPlus => "u_plus",
            Symbol::TIn => "t_in",
            Symbol::TSet => "t_set",
            Symbol::Duty => "duty",
            Symbol::SMinus => "s_minus",
            Symbol::SPlus => "s_plus",
            Symbol::Store => "store",
            Symbol::HeatKg => "heat_kg",
            Symbol::Amps => "amps",
            Symbol::On => "on",
            Symbol::Start => "start",
            Symbol::Stop => "stop",
        };
        f.write_str(s)
    }
}

/// Globally unique variable name: home, appliance slot, role, interval.
/// The ordering is the canonical variable order everywhere (model columns,
/// point serialization, enumeration output).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarName {
    pub home: usize,
    pub appliance: ApplianceId,
    pub symbol: Symbol,
    pub t: usize,
}

impl fmt::Display for VarName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}.{}.{}[{}]", self.home, self.appliance, self.symbol, self.t)
    }
}

pub fn vn(home: usize, appliance: ApplianceId, symbol: Symbol, t: usize) -> VarName {
    VarName { home, appliance, symbol, t }
}

/// Declared variable: kind, box bounds, and the tag of the bound family
/// it implements (if the bound is part of the appliance model rather than
/// bookkeeping).
#[derive(Debug, Clone)]
pub struct VarMeta {
    pub name: VarName,
    pub kind: VarKind,
    pub lower: f64,
    pub upper: f64,
    pub bound_tag: Option<&'static str>,
}

/// One linear row: sum of terms compared to `rhs` under `sense`.
#[derive(Debug, Clone)]
pub struct Row {
    pub tag: &'static str,
    pub terms: Vec<(VarName, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// A full point: a value for every declared variable.
pub type Point = BTreeMap<VarName, f64>;

/// A set of tagged rows over declared variables. Appliance builders return
/// self-contained blocks; deviation blocks reference the appliance's draw
/// variables and only validate once merged.
#[derive(Debug, Clone, Default)]
pub struct LinearConstraintBlock {
    vars: BTreeMap<VarName, VarMeta>,
    rows: Vec<Row>,
}

impl LinearConstraintBlock {
    pub fn var_count(&self) -> usize {
        self.vars.len()
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn vars(&self) -> impl Iterator<Item = &VarMeta> {
        self.vars.values()
    }

    pub fn var(&self, name: &VarName) -> Option<&VarMeta> {
        self.vars.get(name)
    }

    /// All tags present, whether carried by rows or by bounds.
    pub fn tags(&self) -> BTreeSet<&'static str> {
        let mut out: BTreeSet<&'static str> = self.rows.iter().map(|r| r.tag).collect();
        out.extend(self.vars.values().filter_map(|v| v.bound_tag));
        out
    }

    pub fn rows_tagged<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = &'a Row> + 'a {
        self.rows.iter().filter(move |r| r.tag == tag)
    }

    pub fn tag_row_count(&self, tag: &str) -> usize {
        self.rows_tagged(tag).count()
    }

    pub fn bound_tag_count(&self, tag: &str) -> usize {
        self.vars.values().filter(|v| v.bound_tag == Some(tag)).count()
    }

    /// Checks that every row references declared variables with finite
    /// nonzero coefficients and finite right-hand sides.
    pub fn validate(&self) -> Result<(), BlockError> {
        for row in &self.rows {
            if !row.rhs.is_finite() {
                return Err(BlockError::BadRhs { tag: row.tag });
            }
            for (name, coef) in &row.terms {
                if !self.vars.contains_key(name) {
                    return Err(BlockError::Undeclared { tag: row.tag, name: name.to_string() });
                }
                if !coef.is_finite() || *coef == 0.0 {
                    return Err(BlockError::BadCoefficient {
                        tag: row.tag,
                        name: name.to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Merges blocks into one and validates the result. Two blocks
    /// declaring the same variable is a builder bug.
    pub fn merge(blocks: impl IntoIterator<Item = Self>) -> Result<Self, BlockError> {
        let mut out = LinearConstraintBlock::default();
        for b in blocks {
            for (name, meta) in b.vars {
                if out.vars.insert(name, meta).is_some() {
                    return Err(BlockError::DuplicateVar(name.to_string()));
                }
            }
            out.rows.extend(b.rows);
        }
        out.validate()?;
        Ok(out)
    }

    /// Lowers the block into a fresh model with zero objective. Columns
    /// are created in canonical name order; callers set costs afterwards
    /// through the returned name map.
    pub fn to_model(&self) -> Result<(LpModel, BTreeMap<VarName, VarId>), BlockError> {
        self.validate()?;
        let mut model = LpModel::new();
        let mut map = BTreeMap::new();
        for (name, meta) in &self.vars {
            let id = model.add_var(meta.lower, meta.upper, 0.0, meta.kind)?;
            map.insert(*name, id);
        }
        for row in &self.rows {
            let rid = model.add_row(row.sense, row.rhs);
            for (name, coef) in &row.terms {
                model.add_entry(map[name], rid, *coef)?;
            }
        }
        Ok((model, map))
    }

    /// Column names aligned with `to_model`'s variable order, for LP text
    /// export and debugging.
    pub fn lp_var_names(&self) -> Vec<String> {
        self.vars.keys().map(|n| n.to_string()).collect()
    }
}

/// Internal builder with declaration checks.
#[derive(Default)]
struct BlockBuilder {
    vars: BTreeMap<VarName, VarMeta>,
    rows: Vec<Row>,
}

impl BlockBuilder {
    fn var(
        &mut self,
        name: VarName,
        kind: VarKind,
        lower: f64,
        upper: f64,
        bound_tag: Option<&'static str>,
    ) -> Result<(), BlockError> {
        let meta = VarMeta { name, kind, lower, upper, bound_tag };
        if self.vars.insert(name, meta).is_some() {
            return Err(BlockError::DuplicateVar(name.to_string()));
        }
        Ok(())
    }

    fn row(&mut self, tag: &'static str, terms: Vec<(VarName, f64)>, sense: Sense, rhs: f64) {
        self.rows.push(Row { tag, terms, sense, rhs });
    }

    fn finish(self) -> LinearConstraintBlock {
        LinearConstraintBlock { vars: self.vars, rows: self.rows }
    }
}

/// Trace of the uncoordinated thermostat: the temperature path, activity,
/// draw, and the comfort-band excursions that path incurs. The excursion
/// caps in the HVAC block come from this trace, so the coordinated
/// schedule can never be less comfortable than the thermostat (beyond the
/// configured slack).
#[derive(Debug, Clone, PartialEq)]
pub struct ThermostatTrace {
    /// Indoor temperature, length k+1.
    pub t_e: Vec<f64>,
    /// Activity per interval, 0 or 1.
    pub duty: Vec<f64>,
    /// Electrical draw per interval, kWh.
    pub p_kwh: Vec<f64>,
    /// max(t_e - t_upper, 0) per interval.
    pub s_plus_star: Vec<f64>,
    /// max(t_low - t_e, 0) per interval.
    pub s_minus_star: Vec<f64>,
}

fn check_hvac_params(p: &HvacParams) -> Result<(), BlockError> {
    if !(p.gamma1.is_finite() && p.gamma1 > 0.0 && p.gamma1 < 1.0) {
        return Err(BlockError::BadParams(format!("hvac gamma1 {} outside (0, 1)", p.gamma1)));
    }
    if !(p.gamma2_c_per_j.is_finite() && p.gamma2_c_per_j > 0.0) {
        return Err(BlockError::BadParams("hvac gamma2 must be positive".into()));
    }
    if !(p.alpha.is_finite() && p.alpha > 0.0 && p.alpha <= 1.0) {
        return Err(BlockError::BadParams(format!("hvac alpha {} outside (0, 1]", p.alpha)));
    }
    if !(p.rated_kw.is_finite() && p.rated_kw > 0.0) {
        return Err(BlockError::BadParams("hvac rated power must be positive".into()));
    }
    if !(p.t_low_c < p.t_upper_c) {
        return Err(BlockError::BadParams(format!(
            "hvac comfort band [{}, {}] is empty",
            p.t_low_c, p.t_upper_c
        )));
    }
    if !(p.epsilon_c.is_finite() && p.epsilon_c >= 0.0) {
        return Err(BlockError::BadParams("hvac slack must be nonnegative".into()));
    }
    if !p.t_in0_c.is_finite() {
        return Err(BlockError::BadParams("hvac initial temperature must be finite".into()));
    }
    Ok(())
}

/// Simulates the plain thermostat over the horizon: run whenever the
/// temperature is at or past the near comfort bound (below `t_low` when
/// heating, above `t_upper` when cooling), idle otherwise.
pub fn simulate_thermostat_baseline(
    params: &HvacParams,
    grid: &TimeGrid,
    weather_c: &[f64],
) -> Result<ThermostatTrace, BlockError> {
    grid.validate()?;
    check_hvac_params(params)?;
    if weather_c.len() < grid.k {
        return Err(BlockError::BadParams(format!(
            "weather has {} intervals, horizon needs {}",
            weather_c.len(),
            grid.k
        )));
    }
    let k = grid.k;
    let sign = params.mode.sign();
    // Temperature change per active interval, Celsius (signed).
    let gain_c = params.gamma2_c_per_j
        * params.alpha
        * sign
        * params.rated_kw
        * grid.dt_hours
        * JOULES_PER_KWH;
    let mut t_e = Vec::with_capacity(k + 1);
    t_e.push(params.t_in0_c);
    let mut duty = Vec::with_capacity(k);
    let mut p_kwh = Vec::with_capacity(k);
    let mut s_plus_star = Vec::with_capacity(k);
    let mut s_minus_star = Vec::with_capacity(k);
    for t in 0..k {
        let cur = t_e[t];
        let on = match params.mode {
            HvacMode::Heating => cur <= params.t_low_c,
            HvacMode::Cooling => cur >= params.t_upper_c,
        };
        let d = if on { 1.0 } else { 0.0 };
        duty.push(d);
        p_kwh.push(d * params.rated_kw * grid.dt_hours);
        s_plus_star.push((cur - params.t_upper_c).max(0.0));
        s_minus_star.push((params.t_low_c - cur).max(0.0));
        let next = cur + params.gamma1 * (weather_c[t] - cur) + d * gain_c;
        t_e.push(next);
    }
    Ok(ThermostatTrace { t_e, duty, p_kwh, s_plus_star, s_minus_star })
}

/// HVAC block. Variables per home: indoor temperature (0..=k), setpoint,
/// activity fraction, draw, and the two comfort excursions. The switching
/// rows tie activity to the setpoint with a big-M; activity itself is kept
/// continuous in [0, 1], which leaves the feasible draws unchanged while
/// removing k binaries per home.
pub fn build_hvac_block(
    home: usize,
    spec: &ApplianceSpec<HvacParams>,
    grid: &TimeGrid,
    weather_c: &[f64],
) -> Result<LinearConstraintBlock, BlockError> {
    let p = &spec.params;
    let trace = simulate_thermostat_baseline(p, grid, weather_c)?;
    let k = grid.k;
    let id = ApplianceId::Hvac;
    let sign = p.mode.sign();
    // Celsius per kWh of electrical draw.
    let c_per_kwh = p.alpha * sign * p.gamma2_c_per_j * JOULES_PER_KWH;
    let p_cap = p.rated_kw * grid.dt_hours;
    let m = BIG_M_TEMP_C;

    let mut b = BlockBuilder::default();
    for t in 0..=k {
        let (lo, hi) =
            if t == 0 { (p.t_in0_c, p.t_in0_c) } else { (f64::NEG_INFINITY, f64::INFINITY) };
        b.var(vn(home, id, Symbol::TIn, t), VarKind::Continuous, lo, hi, None)?;
    }
    for t in 0..k {
        b.var(
            vn(home, id, Symbol::TSet, t),
            VarKind::Continuous,
            f64::NEG_INFINITY,
            f64::INFINITY,
            None,
        )?;
        b.var(vn(home, id, Symbol::Duty, t), VarKind::Continuous, 0.0, 1.0, Some("hvac_k"))?;
        b.var(vn(home, id, Symbol::P, t), VarKind::Continuous, 0.0, p_cap, None)?;
        b.var(
            vn(home, id, Symbol::SMinus, t),
            VarKind::Continuous,
            0.0,
            f64::INFINITY,
            Some("hvac_j"),
        )?;
        b.var(
            vn(home, id, Symbol::SPlus, t),
            VarKind::Continuous,
            0.0,
            f64::INFINITY,
            Some("hvac_j"),
        )?;
    }

    for t in 0..k {
        let tin = vn(home, id, Symbol::TIn, t);
        let tin_next = vn(home, id, Symbol::TIn, t + 1);
        let tset = vn(home, id, Symbol::TSet, t);
        let duty = vn(home, id, Symbol::Duty, t);
        let pw = vn(home, id, Symbol::P, t);
        let sm = vn(home, id, Symbol::SMinus, t);
        let sp = vn(home, id, Symbol::SPlus, t);

        // Temperature dynamics: leakage toward outdoors plus delivered
        // thermal energy.
        b.row(
            "hvac_b",
            vec![(tin_next, 1.0), (tin, -(1.0 - p.gamma1)), (pw, -c_per_kwh)],
            Sense::Eq,
            p.gamma1 * weather_c[t],
        );
        // Draw is proportional to activity.
        b.row("hvac_c", vec![(pw, 1.0), (duty, -p_cap)], Sense::Eq, 0.0);
        // Comfort band with slack variables.
        b.row("hvac_d", vec![(tin, 1.0), (sm, 1.0)], Sense::Ge, p.t_low_c);
        b.row("hvac_e", vec![(tin, 1.0), (sp, -1.0)], Sense::Le, p.t_upper_c);
        // Excursions may not exceed what the plain thermostat incurs,
        // plus the configured slack.
        b.row("hvac_f", vec![(sm, 1.0)], Sense::Le, trace.s_minus_star[t] + p.epsilon_c);
        b.row("hvac_g", vec![(sp, 1.0)], Sense::Le, trace.s_plus_star[t] + p.epsilon_c);
        // Switching rows linking activity to the setpoint.
        match p.mode {
            HvacMode::Heating => {
                // active => setpoint at or above the room temperature
                b.row(
                    "hvac_h",
                    vec![(tset, 1.0), (tin, -1.0), (duty, -m)],
                    Sense::Ge,
                    -m,
                );
                // idle => room temperature at or above the setpoint
                b.row("hvac_i", vec![(tin, 1.0), (tset, -1.0), (duty, m)], Sense::Ge, 0.0);
            }
            HvacMode::Cooling => {
                // active => room temperature at or above the setpoint
                b.row(
                    "hvac_h",
                    vec![(tin, 1.0), (tset, -1.0), (duty, -m)],
                    Sense::Ge,
                    -m,
                );
                // idle => room temperature at or below the setpoint
                b.row("hvac_i", vec![(tin, 1.0), (tset, -1.0), (duty, -m)], Sense::Le, 0.0);
            }
        }
    }
    let block = b.finish();
    block.validate()?;
    Ok(block)
}

fn check_ewh_params(p: &EwhParams, k: usize) -> Result<(), BlockError> {
    if !(p.capacity_kg.is_finite() && p.capacity_kg > 0.0) {
        return Err(BlockError::BadParams("water heater capacity must be positive".into()));
    }
    if !(p.p_max_kw.is_finite() && p.p_max_kw > 0.0) {
        return Err(BlockError::BadParams("water heater power cap must be positive".into()));
    }
    if !(p.t_demand_c > p.t_tap_c) {
        return Err(BlockError::BadParams(format!(
            "delivery temperature {} must exceed tap temperature {}",
            p.t_demand_c, p.t_tap_c
        )));
    }
    if !(p.efficiency > 0.0 && p.efficiency <= 1.0) {
        return Err(BlockError::BadParams("water heater efficiency outside (0, 1]".into()));
    }
    if !(p.rho_j_per_kg_c.is_finite() && p.rho_j_per_kg_c > 0.0) {
        return Err(BlockError::BadParams("specific heat must be positive".into()));
    }
    if p.demand_kg.len() != k {
        return Err(BlockError::BadParams(format!(
            "water draw profile has {} intervals, horizon needs {}",
            p.demand_kg.len(),
            k
        )));
    }
    for (t, &d) in p.demand_kg.iter().enumerate() {
        if !(d.is_finite() && d >= 0.0) {
            return Err(BlockError::BadParams(format!("water draw at {t} must be nonnegative")));
        }
        if d > p.capacity_kg {
            return Err(BlockError::BadParams(format!(
                "water draw {d} kg at {t} exceeds tank capacity {}",
                p.capacity_kg
            )));
        }
    }
    Ok(())
}

/// Water heater block: tank level dynamics with per-interval draws, a
/// heating-rate cap, and the electrical-to-heated-water conversion.
pub fn build_ewh_block(
    home: usize,
    spec: &ApplianceSpec<EwhParams>,
    grid: &TimeGrid,
) -> Result<LinearConstraintBlock, BlockError> {
    grid.validate()?;
    let p = &spec.params;
    let k = grid.k;
    check_ewh_params(p, k)?;
    let id = ApplianceId::Ewh;
    let kg_per_kwh = p.kg_per_kwh();
    let p_cap = p.p_max_kw * grid.dt_hours;

    let mut b = BlockBuilder::default();
    for t in 0..=k {
        // The tank starts empty; the final level is determined by the
        // dynamics row and left unbounded.
        let (lo, hi) = if t == 0 {
            (0.0, 0.0)
        } else if t < k {
            (0.0, f64::INFINITY)
        } else {
            (f64::NEG_INFINITY, f64::INFINITY)
        };
        let tag = if t < k { Some("ewh_f") } else { None };
        b.var(vn(home, id, Symbol::Store, t), VarKind::Continuous, lo, hi, tag)?;
    }
    for t in 0..k {
        b.var(vn(home, id, Symbol::HeatKg, t), VarKind::Continuous, 0.0, f64::INFINITY, None)?;
        b.var(
            vn(home, id, Symbol::P, t),
            VarKind::Continuous,
            0.0,
            f64::INFINITY,
            Some("ewh_d"),
        )?;
    }
    for t in 0..k {
        let x = vn(home, id, Symbol::Store, t);
        let x_next = vn(home, id, Symbol::Store, t + 1);
        let z = vn(home, id, Symbol::HeatKg, t);
        let pw = vn(home, id, Symbol::P, t);
        b.row("ewh_a", vec![(x, 1.0)], Sense::Le, p.capacity_kg);
        b.row("ewh_b", vec![(x, 1.0)], Sense::Ge, p.demand_kg[t]);
        b.row("ewh_c", vec![(pw, 1.0)], Sense::Le, p_cap);
        b.row("ewh_e", vec![(z, 1.0), (pw, -kg_per_kwh)], Sense::Eq, 0.0);
        b.row(
            "ewh_g",
            vec![(x_next, 1.0), (x, -1.0), (z, -1.0)],
            Sense::Eq,
            -p.demand_kg[t],
        );
    }
    let block = b.finish();
    block.validate()?;
    Ok(block)
}

fn check_ev_params(p: &EvParams, k: usize) -> Result<(), BlockError> {
    if !(p.capacity_kwh.is_finite() && p.capacity_kwh > 0.0) {
        return Err(BlockError::BadParams("battery capacity must be positive".into()));
    }
    if !(p.i_max_a.is_finite() && p.i_max_a > 0.0) {
        return Err(BlockError::BadParams("charger current limit must be positive".into()));
    }
    if !(p.x0_kwh.is_finite() && p.x0_kwh >= 0.0 && p.x0_kwh <= p.capacity_kwh) {
        return Err(BlockError::BadParams(format!(
            "initial battery state {} outside [0, {}]",
            p.x0_kwh, p.capacity_kwh
        )));
    }
    if p.trip_kwh.len() != k {
        return Err(BlockError::BadParams(format!(
            "trip profile has {} intervals, horizon needs {}",
            p.trip_kwh.len(),
            k
        )));
    }
    for (t, &e) in p.trip_kwh.iter().enumerate() {
        if !(e.is_finite() && e >= 0.0) {
            return Err(BlockError::BadParams(format!("trip energy at {t} must be nonnegative")));
        }
        if e > p.capacity_kwh {
            return Err(BlockError::BadParams(format!(
                "trip energy {e} kWh at {t} exceeds battery capacity {}",
                p.capacity_kwh
            )));
        }
    }
    Ok(())
}

/// Electric vehicle block: battery dynamics with trip draws, a current
/// limit, and no charging while the vehicle is away.
pub fn build_ev_block(
    home: usize,
    spec: &ApplianceSpec<EvParams>,
    grid: &TimeGrid,
) -> Result<LinearConstraintBlock, BlockError> {
    grid.validate()?;
    let p = &spec.params;
    let k = grid.k;
    check_ev_params(p, k)?;
    let id = ApplianceId::Ev;
    let kwh_per_amp = p.kwh_per_amp(grid);

    let mut b = BlockBuilder::default();
    for t in 0..=k {
        let (lo, hi) =
            if t == 0 { (p.x0_kwh, p.x0_kwh) } else { (f64::NEG_INFINITY, f64::INFINITY) };
        b.var(vn(home, id, Symbol::Store, t), VarKind::Continuous, lo, hi, None)?;
    }
    for t in 0..k {
        b.var(vn(home, id, Symbol::Amps, t), VarKind::Continuous, 0.0, f64::INFINITY, None)?;
        b.var(
            vn(home, id, Symbol::P, t),
            VarKind::Continuous,
            0.0,
            f64::INFINITY,
            Some("ev_d"),
        )?;
    }
    for t in 0..k {
        let x = vn(home, id, Symbol::Store, t);
        let x_next = vn(home, id, Symbol::Store, t + 1);
        let amps = vn(home, id, Symbol::Amps, t);
        let pw = vn(home, id, Symbol::P, t);
        b.row("ev_a", vec![(x, 1.0)], Sense::Le, p.capacity_kwh);
        b.row("ev_b", vec![(x, 1.0)], Sense::Ge, p.trip_kwh[t]);
        b.row("ev_c", vec![(pw, 1.0), (amps, -kwh_per_amp)], Sense::Eq, 0.0);
        b.row("ev_e", vec![(amps, 1.0)], Sense::Le, p.i_max_a);
        if p.trip_kwh[t] > 0.0 {
            b.row("ev_f", vec![(amps, 1.0)], Sense::Eq, 0.0);
        }
        b.row(
            "ev_g",
            vec![(x_next, 1.0), (x, -1.0), (pw, -1.0)],
            Sense::Eq,
            -p.trip_kwh[t],
        );
    }
    let block = b.finish();
    block.validate()?;
    Ok(block)
}

fn check_basic_params(p: &BasicApplianceParams, k: usize) -> Result<(), BlockError> {
    if !(p.energy_per_interval_kwh.is_finite() && p.energy_per_interval_kwh > 0.0) {
        return Err(BlockError::BadParams(format!(
            "{}: per-interval energy must be positive",
            p.name
        )));
    }
    if p.run_intervals == 0 {
        return Err(BlockError::BadParams(format!("{}: run length must be positive", p.name)));
    }
    if p.window_start > p.window_end || p.window_end >= k {
        return Err(BlockError::BadParams(format!(
            "{}: window [{}, {}] does not fit a horizon of {}",
            p.name, p.window_start, p.window_end, k
        )));
    }
    if p.window_len() < p.run_intervals {
        return Err(BlockError::BadParams(format!(
            "{}: window of {} intervals cannot hold a run of {}",
            p.name,
            p.window_len(),
            p.run_intervals
        )));
    }
    Ok(())
}

/// Fixed-cycle appliance block (washer, oven, dryer): a single contiguous
/// run of fixed length inside an allowed window, encoded with on/start/stop
/// indicators. The start/stop bookkeeping extends one interval past the
/// window (when the horizon allows) so a run that finishes at the window
/// edge still registers its stop; without that interval the relaxation
/// admits spurious integral points.
pub fn build_basic_block(
    home: usize,
    idx: usize,
    spec: &ApplianceSpec<BasicApplianceParams>,
    grid: &TimeGrid,
) -> Result<LinearConstraintBlock, BlockError> {
    grid.validate()?;
    let p = &spec.params;
    let k = grid.k;
    check_basic_params(p, k)?;
    let id = ApplianceId::Basic(idx);
    let n = p.energy_per_interval_kwh;
    let window = p.window_start..=p.window_end;
    // Indicator domain: the window plus the first interval after it.
    let dom_end = (p.window_end + 1).min(k - 1);
    let dom = p.window_start..=dom_end;

    let mut b = BlockBuilder::default();
    for t in 0..k {
        let kind = if window.contains(&t) { VarKind::Integer } else { VarKind::Continuous };
        let tag = if window.contains(&t) { Some("wm_i") } else { None };
        b.var(vn(home, id, Symbol::On, t), kind, 0.0, 1.0, tag)?;
        b.var(vn(home, id, Symbol::P, t), VarKind::Continuous, 0.0, n, None)?;
    }
    for t in dom.clone() {
        b.var(vn(home, id, Symbol::Start, t), VarKind::Integer, 0.0, 1.0, Some("wm_i"))?;
        b.var(vn(home, id, Symbol::Stop, t), VarKind::Integer, 0.0, 1.0, Some("wm_i"))?;
    }

    // Total energy over the window equals one full run.
    let total: Vec<(VarName, f64)> =
        window.clone().map(|t| (vn(home, id, Symbol::P, t), 1.0)).collect();
    b.row("wm_a", total, Sense::Eq, n * p.run_intervals as f64);
    // Draw is locked to the on indicator everywhere, so the draw is zero
    // outside the window as well.
    for t in 0..k {
        b.row(
            "wm_b",
            vec![(vn(home, id, Symbol::P, t), 1.0), (vn(home, id, Symbol::On, t), -n)],
            Sense::Eq,
            0.0,
        );
    }
    for t in (0..k).filter(|t| !window.contains(t)) {
        b.row("wm_c", vec![(vn(home, id, Symbol::On, t), 1.0)], Sense::Eq, 0.0);
    }
    for t in dom.clone() {
        let mut terms = vec![
            (vn(home, id, Symbol::On, t), 1.0),
            (vn(home, id, Symbol::Start, t), -1.0),
            (vn(home, id, Symbol::Stop, t), 1.0),
        ];
        if t > 0 {
            terms.push((vn(home, id, Symbol::On, t - 1), -1.0));
        }
        b.row("wm_d", terms, Sense::Eq, 0.0);
        b.row(
            "wm_e",
            vec![(vn(home, id, Symbol::Start, t), 1.0), (vn(home, id, Symbol::On, t), -1.0)],
            Sense::Le,
            0.0,
        );
        b.row(
            "wm_f",
            vec![(vn(home, id, Symbol::Stop, t), 1.0), (vn(home, id, Symbol::On, t), 1.0)],
            Sense::Le,
            1.0,
        );
    }
    let starts: Vec<(VarName, f64)> =
        window.clone().map(|t| (vn(home, id, Symbol::Start, t), 1.0)).collect();
    b.row("wm_g", starts, Sense::Le, 1.0);
    let stops: Vec<(VarName, f64)> =
        window.clone().map(|t| (vn(home, id, Symbol::Stop, t), 1.0)).collect();
    b.row("wm_h", stops, Sense::Le, 1.0);

    let block = b.finish();
    block.validate()?;
    Ok(block)
}

/// Deviation block for one appliance: per interval, the deviation
/// magnitude dominates the draw's distance from the baseline. References
/// the appliance's draw variables, so it only validates once merged with
/// the appliance block.
pub fn build_deviation_block(
    home: usize,
    appliance: ApplianceId,
    baseline_kwh: &[f64],
    grid: &TimeGrid,
) -> Result<LinearConstraintBlock, BlockError> {
    grid.validate()?;
    if baseline_kwh.len() != grid.k {
        return Err(BlockError::BadParams(format!(
            "baseline has {} intervals, horizon needs {}",
            baseline_kwh.len(),
            grid.k
        )));
    }
    let mut b = BlockBuilder::default();
    for t in 0..grid.k {
        let base = baseline_kwh[t];
        if !base.is_finite() {
            return Err(BlockError::BadParams(format!("baseline at {t} must be finite")));
        }
        let u = vn(home, appliance, Symbol::UPlus, t);
        let pw = vn(home, appliance, Symbol::P, t);
        b.var(u, VarKind::Continuous, 0.0, f64::INFINITY, None)?;
        b.row("dev_pos", vec![(u, 1.0), (pw, -1.0)], Sense::Ge, -base);
        b.row("dev_neg", vec![(u, 1.0), (pw, 1.0)], Sense::Ge, base);
    }
    Ok(b.finish())
}

/// Merges the blocks of every appliance a home owns, plus their deviation
/// blocks, into the home's feasible polyhedron.
pub fn assemble_home_polyhedron(
    spec: &HomeSpec,
    grid: &TimeGrid,
    weather_c: &[f64],
) -> Result<LinearConstraintBlock, BlockError> {
    spec.validate(grid)?;
    let home = spec.id as usize;
    let mut blocks = Vec::new();
    if let Some(h) = &spec.hvac {
        blocks.push(build_hvac_block(home, h, grid, weather_c)?);
        blocks.push(build_deviation_block(home, ApplianceId::Hvac, &h.baseline_kwh, grid)?);
    }
    if let Some(w) = &spec.ewh {
        blocks.push(build_ewh_block(home, w, grid)?);
        blocks.push(build_deviation_block(home, ApplianceId::Ewh, &w.baseline_kwh, grid)?);
    }
    if let Some(e) = &spec.ev {
        blocks.push(build_ev_block(home, e, grid)?);
        blocks.push(build_deviation_block(home, ApplianceId::Ev, &e.baseline_kwh, grid)?);
    }
    for (i, a) in spec.basics.iter().enumerate() {
        blocks.push(build_basic_block(home, i, a, grid)?);
        blocks.push(build_deviation_block(
            home,
            ApplianceId::Basic(i),
            &a.baseline_kwh,
            grid,
        )?);
    }
    if blocks.is_empty() {
        return Err(BlockError::BadParams(format!("home {} has no appliances", spec.id)));
    }
    LinearConstraintBlock::merge(blocks)
}

/// One membership failure.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// A row is violated by `amount` (positive).
    Row { tag: &'static str, index: usize, amount: f64 },
    /// A variable sits outside its box bounds.
    Bound { name: VarName, value: f64, lower: f64, upper: f64 },
    /// An integer variable is fractional.
    Integrality { name: VarName, value: f64 },
    /// The point does not assign the variable at all.
    Missing { name: VarName },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Row { tag, index, amount } => {
                write!(f, "row {tag}[{index}] violated by {amount:.3e}")
            }
            Violation::Bound { name, value, lower, upper } => {
                write!(f, "{name} = {value} outside [{lower}, {upper}]")
            }
            Violation::Integrality { name, value } => {
                write!(f, "{name} = {value} is fractional")
            }
            Violation::Missing { name } => write!(f, "{name} is not assigned"),
        }
    }
}

impl Violation {
    /// True for violations of the relaxed (continuous) description:
    /// rows and bounds. Integrality failures are reported separately.
    pub fn breaks_relaxation(&self) -> bool {
        !matches!(self, Violation::Integrality { .. })
    }
}

/// Checks a full point against every row, bound, and integrality
/// requirement of the block. Returns all violations beyond `tol`.
pub fn check_membership(
    block: &LinearConstraintBlock,
    point: &Point,
    tol: f64,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for meta in block.vars() {
        let Some(&v) = point.get(&meta.name) else {
            out.push(Violation::Missing { name: meta.name });
            continue;
        };
        if v < meta.lower - tol || v > meta.upper + tol {
            out.push(Violation::Bound {
                name: meta.name,
                value: v,
                lower: meta.lower,
                upper: meta.upper,
            });
        }
        if meta.kind == VarKind::Integer && (v - v.round()).abs() > tol {
            out.push(Violation::Integrality { name: meta.name, value: v });
        }
    }
    for (index, row) in block.rows().iter().enumerate() {
        let mut activity = 0.0;
        let mut complete = true;
        for (name, coef) in &row.terms {
            match point.get(name) {
                Some(&v) => activity += coef * v,
                // Already reported as Missing above.
                None => complete = false,
            }
        }
        if !complete {
            continue;
        }
        let amount = match row.sense {
            Sense::Le => activity - row.rhs,
            Sense::Ge => row.rhs - activity,
            Sense::Eq => (activity - row.rhs).abs(),
        };
        if amount > tol {
            out.push(Violation::Row { tag: row.tag, index, amount });
        }
    }
    out
}

/// Builds the occupant's baseline point for a home: every appliance
/// follows its desired schedule and the internal states are reconstructed
/// from the same dynamics the rows encode. HVAC follows the plain
/// thermostat trace; for it the deviation entries absorb any difference
/// between the trace and the stored baseline.
pub fn baseline_point(
    spec: &HomeSpec,
    grid: &TimeGrid,
    weather_c: &[f64],
) -> Result<Point, BlockError> {
    spec.validate(grid)?;
    let home = spec.id as usize;
    let k = grid.k;
    let mut point = Point::new();

    if let Some(h) = &spec.hvac {
        let id = ApplianceId::Hvac;
        let trace = simulate_thermostat_baseline(&h.params, grid, weather_c)?;
        for t in 0..=k {
            point.insert(vn(home, id, Symbol::TIn, t), trace.t_e[t]);
        }
        for t in 0..k {
            point.insert(vn(home, id, Symbol::TSet, t), trace.t_e[t]);
            point.insert(vn(home, id, Symbol::Duty, t), trace.duty[t]);
            point.insert(vn(home, id, Symbol::P, t), trace.p_kwh[t]);
            point.insert(vn(home, id, Symbol::SMinus, t), trace.s_minus_star[t]);
            point.insert(vn(home, id, Symbol::SPlus, t), trace.s_plus_star[t]);
            point.insert(
                vn(home, id, Symbol::UPlus, t),
                (trace.p_kwh[t] - h.baseline_kwh[t]).abs(),
            );
        }
    }
    if let Some(w) = &spec.ewh {
        let id = ApplianceId::Ewh;
        let kg_per_kwh = w.params.kg_per_kwh();
        let mut store = 0.0;
        point.insert(vn(home, id, Symbol::Store, 0), store);
        for t in 0..k {
            let p = w.baseline_kwh[t];
            let z = p * kg_per_kwh;
            point.insert(vn(home, id, Symbol::P, t), p);
            point.insert(vn(home, id, Symbol::HeatKg, t), z);
            point.insert(vn(home, id, Symbol::UPlus, t), 0.0);
            store += z - w.params.demand_kg[t];
            point.insert(vn(home, id, Symbol::Store, t + 1), store);
        }
    }
    if let Some(e) = &spec.ev {
        let id = ApplianceId::Ev;
        let kwh_per_amp = e.params.kwh_per_amp(grid);
        let mut store = e.params.x0_kwh;
        point.insert(vn(home, id, Symbol::Store, 0), store);
        for t in 0..k {
            let p = e.baseline_kwh[t];
            point.insert(vn(home, id, Symbol::P, t), p);
            point.insert(vn(home, id, Symbol::Amps, t), p / kwh_per_amp);
            point.insert(vn(home, id, Symbol::UPlus, t), 0.0);
            store += p - e.params.trip_kwh[t];
            point.insert(vn(home, id, Symbol::Store, t + 1), store);
        }
    }
    for (i, a) in spec.basics.iter().enumerate() {
        let id = ApplianceId::Basic(i);
        let n = a.params.energy_per_interval_kwh;
        let dom_end = (a.params.window_end + 1).min(k - 1);
        let mut prev_on = 0.0;
        for t in 0..k {
            let p = a.baseline_kwh[t];
            let on = p / n;
            point.insert(vn(home, id, Symbol::P, t), p);
            point.insert(vn(home, id, Symbol::On, t), on);
            point.insert(vn(home, id, Symbol::UPlus, t), 0.0);
            if t >= a.params.window_start && t <= dom_end {
                let delta = on - prev_on;
                point.insert(vn(home, id, Symbol::Start, t), delta.max(0.0));
                point.insert(vn(home, id, Symbol::Stop, t), (-delta).max(0.0));
            }
            prev_on = on;
        }
    }
    Ok(point)
}

/// Exhaustively enumerates the feasible mixed-integer points of a small
/// block: every 0/1 assignment of the free binaries that admits a feasible
/// continuous completion, paired with one such completion. Assignments are
/// screened against the rows that involve only binaries before the
/// continuous feasibility solve.
pub fn enumerate_feasible_points(
    block: &LinearConstraintBlock,
    max_binaries: usize,
) -> Result<Vec<Point>, BlockError> {
    let (mut model, map) = block.to_model()?;

    // Free binaries, in canonical order.
    let mut binaries = Vec::new();
    for meta in block.vars() {
        if meta.kind != VarKind::Integer || meta.lower == meta.upper {
            continue;
        }
        if meta.lower != 0.0 || meta.upper != 1.0 {
            return Err(BlockError::BadParams(format!(
                "enumeration requires binary bounds, {} has [{}, {}]",
                meta.name, meta.lower, meta.upper
            )));
        }
        binaries.push(meta.name);
    }
    if binaries.len() > max_binaries {
        return Err(BlockError::TooManyBinaries { count: binaries.len(), cap: max_binaries });
    }
    let bin_index: BTreeMap<VarName, usize> =
        binaries.iter().enumerate().map(|(i, n)| (*n, i)).collect();

    // Rows whose terms are all enumerated binaries or fixed variables can
    // be checked directly against an assignment.
    struct PureRow {
        sense: Sense,
        rhs: f64,
        terms: Vec<(usize, f64)>,
    }
    let mut pure = Vec::new();
    'rows: for row in block.rows() {
        let mut rhs = row.rhs;
        let mut terms = Vec::new();
        for (name, coef) in &row.terms {
            if let Some(&b) = bin_index.get(name) {
                terms.push((b, *coef));
            } else {
                let meta = block.var(name).expect("validated");
                if meta.lower == meta.upper {
                    rhs -= coef * meta.lower;
                } else {
                    continue 'rows;
                }
            }
        }
        pure.push(PureRow { sense: row.sense, rhs, terms });
    }

    let nb = binaries.len();
    let mut out = Vec::new();
    for mask in 0u64..(1u64 << nb) {
        let value = |b: usize| -> f64 {
            if mask >> b & 1 == 1 {
                1.0
            } else {
                0.0
            }
        };
        let screened = pure.iter().all(|row| {
            let activity: f64 = row.terms.iter().map(|&(b, c)| c * value(b)).sum();
            match row.sense {
                Sense::Le => activity <= row.rhs + 1e-9,
                Sense::Ge => activity >= row.rhs - 1e-9,
                Sense::Eq => (activity - row.rhs).abs() <= 1e-9,
            }
        });
        if !screened {
            continue;
        }
        for (b, name) in binaries.iter().enumerate() {
            model.set_var_bounds(map[name], value(b), value(b))?;
        }
        let sol = model.solve_lp(None)?;
        if sol.status != LpStatus::Optimal {
            continue;
        }
        let mut point = Point::new();
        for (name, &id) in &map {
            point.insert(*name, sol.x[id]);
        }
        for (b, name) in binaries.iter().enumerate() {
            point.insert(*name, value(b));
        }
        out.push(point);
    }
    for name in &binaries {
        let meta = block.var(name).expect("validated");
        model.set_var_bounds(map[name], meta.lower, meta.upper)?;
    }
    Ok(out)
}

/// Completes a partial assignment (typically the draws and deviations of a
/// schedule) to a full point of the block, if one exists within `tol` of
/// the given values. Returns `None` when no completion exists.
pub fn complete_partial(
    block: &LinearConstraintBlock,
    partial: &Point,
    tol: f64,
) -> Result<Option<Point>, BlockError> {
    let (mut model, map) = block.to_model()?;
    for (name, &value) in partial {
        let Some(&id) = map.get(name) else {
            return Err(BlockError::MissingVar(name.to_string()));
        };
        let meta = block.var(name).expect("mapped");
        let lo = meta.lower.max(value - tol);
        let hi = meta.upper.min(value + tol);
        if lo > hi {
            return Ok(None);
        }
        model.set_var_bounds(id, lo, hi)?;
    }
    let sol = model.solve_lp(None)?;
    if sol.status != LpStatus::Optimal {
        return Ok(None);
    }
    let mut point = Point::new();
    for (name, &id) in &map {
        point.insert(*name, sol.x[id]);
    }
    // Keep the caller's values exactly where they were given.
    for (name, &value) in partial {
        point.insert(*name, value);
    }
    Ok(Some(point))
}

/// Does some convex combination of `points` reproduce `target`
/// coordinate-by-coordinate? Decided exactly with a feasibility solve over
/// the combination weights.
pub fn convex_blend_exists(points: &[Point], target: &Point) -> Result<bool, BlockError> {
    if points.is_empty() {
        return Ok(false);
    }
    let mut model = LpModel::new();
    let mut weights = Vec::new();
    for _ in points {
        weights.push(model.add_var(0.0, 1.0, 0.0, VarKind::Continuous)?);
    }
    let convex = model.add_row(Sense::Eq, 1.0);
    for &w in &weights {
        model.add_entry(w, convex, 1.0)?;
    }
    for (name, &tv) in target {
        let row = model.add_row(Sense::Eq, tv);
        for (g, point) in points.iter().enumerate() {
            let Some(&v) = point.get(name) else {
                return Err(BlockError::MissingVar(name.to_string()));
            };
            if v != 0.0 {
                model.add_entry(weights[g], row, v)?;
            }
        }
    }
    let sol = model.solve_lp(None)?;
    Ok(sol.status == LpStatus::Optimal)
}

/// The small washer instance whose relaxed feasible set has exactly two
/// integral points: five intervals, a three-interval window, and a
/// two-interval run. Useful for demonstrating why schedules blended from
/// distinct integral points can be infeasible.
pub fn wm_hull_demo() -> (TimeGrid, ApplianceSpec<BasicApplianceParams>) {
    let grid = TimeGrid::new(5, 0.25).expect("static grid");
    let spec = ApplianceSpec {
        params: BasicApplianceParams {
            name: "wm".into(),
            energy_per_interval_kwh: 1.5,
            run_intervals: 2,
            window_start: 1,
            window_end: 3,
        },
        weight: 1.0,
        baseline_kwh: vec![0.0, 1.5, 1.5, 0.0, 0.0],
    };
    (grid, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::MipParams;
    use proptest::prelude::*;

    fn hvac_spec(mode: HvacMode) -> ApplianceSpec<HvacParams> {
        ApplianceSpec {
            params: HvacParams {
                gamma1: 0.10,
                gamma2_c_per_j: 3.0e-6,
                alpha: 0.9,
                mode,
                rated_kw: 3.0,
                t_low_c: 20.0,
                t_upper_c: 22.0,
                epsilon_c: 0.5,
                t_in0_c: 21.0,
            },
            weight: 0.6,
            baseline_kwh: vec![0.0; 4],
        }
    }

    #[test]
    fn hvac_row_counts_and_variable_census() {
        let grid = TimeGrid::new(4, 0.25).unwrap();
        let weather = vec![0.0; 4];
        let block = build_hvac_block(7, &hvac_spec(HvacMode::Heating), &grid, &weather).unwrap();
        for tag in ["hvac_b", "hvac_c", "hvac_d", "hvac_e", "hvac_f", "hvac_g", "hvac_h", "hvac_i"]
        {
            assert_eq!(block.tag_row_count(tag), 4, "{tag}");
        }
        // t_in over 0..=4 plus four per-interval variables of five kinds.
        assert_eq!(block.var_count(), 5 + 4 * 5);
        assert_eq!(block.bound_tag_count("hvac_j"), 8);
        assert_eq!(block.bound_tag_count("hvac_k"), 4);
        let t0 = block.var(&vn(7, ApplianceId::Hvac, Symbol::TIn, 0)).unwrap();
        assert_eq!((t0.lower, t0.upper), (21.0, 21.0));
    }

    #[test]
    fn cooling_flips_the_switching_rows() {
        let grid = TimeGrid::new(4, 0.25).unwrap();
        let weather = vec![30.0; 4];
        let heat = build_hvac_block(0, &hvac_spec(HvacMode::Heating), &grid, &weather).unwrap();
        let cool = build_hvac_block(0, &hvac_spec(HvacMode::Cooling), &grid, &weather).unwrap();
        assert!(heat.rows_tagged("hvac_i").all(|r| r.sense == Sense::Ge));
        assert!(cool.rows_tagged("hvac_i").all(|r| r.sense == Sense::Le));
        assert_eq!(cool.tag_row_count("hvac_h"), 4);
        // Delivered thermal energy cools the home in cooling mode.
        let row = cool.rows_tagged("hvac_b").next().unwrap();
        let p_coef = row
            .terms
            .iter()
            .find(|(n, _)| n.symbol == Symbol::P)
            .map(|(_, c)| *c)
            .unwrap();
        assert!(-p_coef < 0.0, "cooling draw must reduce temperature");
    }

    #[test]
    fn thermostat_gain_per_active_interval_is_frozen() {
        // 0.9 * 3 kW * 0.25 h * 3.6e6 J/kWh * 3e-6 C/J of thermal gain per
        // active interval, computed independently of the simulation.
        let expected: f64 = 0.9 * 3.0 * 0.25 * 3.6e6 * 3.0e-6;
        assert!((expected - 7.29).abs() < 1e-12);
        let mut spec = hvac_spec(HvacMode::Heating);
        spec.params.t_in0_c = 20.0; // at the low edge: thermostat turns on
        let grid = TimeGrid::new(1, 0.25).unwrap();
        let trace =
            simulate_thermostat_baseline(&spec.params, &grid, &[20.0]).unwrap();
        assert_eq!(trace.duty[0], 1.0);
        // Outdoor equals indoor, so leakage is zero and the step is the
        // pure thermal gain.
        assert!((trace.t_e[1] - trace.t_e[0] - expected).abs() < 1e-12);
        assert!((trace.p_kwh[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn leakage_drift_matches_hand_computation() {
        let mut spec = hvac_spec(HvacMode::Heating);
        spec.params.t_low_c = 10.0; // far below: thermostat stays off
        spec.params.t_upper_c = 30.0;
        spec.params.t_in0_c = 20.0;
        let grid = TimeGrid::new(1, 0.25).unwrap();
        let trace = simulate_thermostat_baseline(&spec.params, &grid, &[0.0]).unwrap();
        assert_eq!(trace.duty[0], 0.0);
        assert!((trace.t_e[1] - 18.0).abs() < 1e-12);
    }

    fn ewh_spec(k: usize) -> ApplianceSpec<EwhParams> {
        ApplianceSpec {
            params: EwhParams {
                capacity_kg: 270.0,
                p_max_kw: 4.0,
                t_demand_c: 40.0,
                t_tap_c: 4.0,
                efficiency: 0.95,
                rho_j_per_kg_c: 4186.0,
                demand_kg: vec![0.0; k],
            },
            weight: 0.5,
            baseline_kwh: vec![0.0; k],
        }
    }

    #[test]
    fn water_heated_per_kwh_is_frozen() {
        let spec = ewh_spec(6);
        // 3.6e6 J/kWh * 0.95 / (4186 J/(kg C) * 36 C), computed by hand.
        let expected = 3.42e6 / 150_696.0;
        assert!((spec.params.kg_per_kwh() - expected).abs() < 1e-12);
        assert!((expected - 22.6947).abs() < 1e-4);
        let grid = TimeGrid::new(6, 0.25).unwrap();
        let block = build_ewh_block(1, &spec, &grid).unwrap();
        let row = block.rows_tagged("ewh_e").next().unwrap();
        let p_coef = row
            .terms
            .iter()
            .find(|(n, _)| n.symbol == Symbol::P)
            .map(|(_, c)| *c)
            .unwrap();
        assert!((p_coef + expected).abs() < 1e-12);
        for tag in ["ewh_a", "ewh_b", "ewh_c", "ewh_e", "ewh_g"] {
            assert_eq!(block.tag_row_count(tag), 6, "{tag}");
        }
        assert_eq!(block.bound_tag_count("ewh_d"), 6);
        assert_eq!(block.bound_tag_count("ewh_f"), 6);
    }

    fn ev_spec(k: usize, trips: &[(usize, f64)]) -> ApplianceSpec<EvParams> {
        let mut trip_kwh = vec![0.0; k];
        for &(t, e) in trips {
            trip_kwh[t] = e;
        }
        ApplianceSpec {
            params: EvParams { capacity_kwh: 60.0, i_max_a: 24.0, x0_kwh: 4.0, trip_kwh },
            weight: 0.4,
            baseline_kwh: vec![0.0; k],
        }
    }

    #[test]
    fn charge_added_per_interval_at_full_current_is_frozen() {
        let grid = TimeGrid::new(6, 0.25).unwrap();
        let spec = ev_spec(6, &[(2, 2.0), (3, 2.0)]);
        // 240 V * 24 A * 0.25 h / 1000 = 1.44 kWh per interval.
        assert!((spec.params.kwh_per_amp(&grid) * 24.0 - 1.44).abs() < 1e-12);
        let block = build_ev_block(2, &spec, &grid).unwrap();
        for tag in ["ev_a", "ev_b", "ev_c", "ev_e", "ev_g"] {
            assert_eq!(block.tag_row_count(tag), 6, "{tag}");
        }
        assert_eq!(block.tag_row_count("ev_f"), 2);
        assert_eq!(block.bound_tag_count("ev_d"), 6);
        let row = block.rows_tagged("ev_c").next().unwrap();
        let amp_coef = row
            .terms
            .iter()
            .find(|(n, _)| n.symbol == Symbol::Amps)
            .map(|(_, c)| *c)
            .unwrap();
        assert!((amp_coef + 0.06).abs() < 1e-12);
    }

    #[test]
    fn washer_run_energy_row_is_frozen() {
        let grid = TimeGrid::new(20, 0.25).unwrap();
        let spec = ApplianceSpec {
            params: BasicApplianceParams {
                name: "wm".into(),
                energy_per_interval_kwh: 0.5,
                run_intervals: 4,
                window_start: 3,
                window_end: 12,
            },
            weight: 1.0,
            baseline_kwh: vec![0.0; 20],
        };
        let block = build_basic_block(0, 0, &spec, &grid).unwrap();
        let total = block.rows_tagged("wm_a").next().unwrap();
        assert!((total.rhs - 2.0).abs() < 1e-12);
        assert_eq!(total.terms.len(), 10);
    }

    #[test]
    fn basic_block_row_counts_match_hand_tally() {
        let (grid, spec) = wm_hull_demo();
        let block = build_basic_block(0, 0, &spec, &grid).unwrap();
        // window {1,2,3}, indicator domain {1,2,3,4}, horizon 5.
        assert_eq!(block.tag_row_count("wm_a"), 1);
        assert_eq!(block.tag_row_count("wm_b"), 5);
        assert_eq!(block.tag_row_count("wm_c"), 2);
        assert_eq!(block.tag_row_count("wm_d"), 4);
        assert_eq!(block.tag_row_count("wm_e"), 4);
        assert_eq!(block.tag_row_count("wm_f"), 4);
        assert_eq!(block.tag_row_count("wm_g"), 1);
        assert_eq!(block.tag_row_count("wm_h"), 1);
        // on over the window, start/stop over the domain.
        assert_eq!(block.bound_tag_count("wm_i"), 3 + 4 + 4);
        assert_eq!(block.var_count(), 5 + 5 + 4 + 4);
    }

    /// The two runs the demo window admits, as full points.
    fn demo_expected_points() -> Vec<Point> {
        let id = ApplianceId::Basic(0);
        let mut a = Point::new();
        let mut b = Point::new();
        for t in 0..5 {
            let (pa, pb) = match t {
                1 => (1.5, 0.0),
                2 => (1.5, 1.5),
                3 => (0.0, 1.5),
                _ => (0.0, 0.0),
            };
            a.insert(vn(0, id, Symbol::P, t), pa);
            b.insert(vn(0, id, Symbol::P, t), pb);
            a.insert(vn(0, id, Symbol::On, t), pa / 1.5);
            b.insert(vn(0, id, Symbol::On, t), pb / 1.5);
        }
        for t in 1..5 {
            a.insert(vn(0, id, Symbol::Start, t), if t == 1 { 1.0 } else { 0.0 });
            a.insert(vn(0, id, Symbol::Stop, t), if t == 3 { 1.0 } else { 0.0 });
            b.insert(vn(0, id, Symbol::Start, t), if t == 2 { 1.0 } else { 0.0 });
            b.insert(vn(0, id, Symbol::Stop, t), if t == 4 { 1.0 } else { 0.0 });
        }
        vec![a, b]
    }

    /// The fractional point that satisfies every row of the relaxation:
    /// one unit of draw spread over three intervals.
    fn demo_relaxed_point() -> Point {
        let id = ApplianceId::Basic(0);
        let f = 1.0 / 1.5;
        let mut c = Point::new();
        for t in 0..5 {
            let p = if (1..=3).contains(&t) { 1.0 } else { 0.0 };
            c.insert(vn(0, id, Symbol::P, t), p);
            c.insert(vn(0, id, Symbol::On, t), p / 1.5);
        }
        for t in 1..5 {
            c.insert(vn(0, id, Symbol::Start, t), if t == 1 { f } else { 0.0 });
            c.insert(vn(0, id, Symbol::Stop, t), if t == 4 { f } else { 0.0 });
        }
        c
    }

    #[test]
    fn hull_demo_has_exactly_two_integral_points() {
        let (grid, spec) = wm_hull_demo();
        let block = build_basic_block(0, 0, &spec, &grid).unwrap();
        let points = enumerate_feasible_points(&block, 20).unwrap();
        let expected = demo_expected_points();
        assert_eq!(points.len(), 2);
        for want in &expected {
            let hit = points.iter().any(|got| {
                want.iter().all(|(name, v)| (got[name] - v).abs() < 1e-9)
                    && got.len() == want.len()
            });
            assert!(hit, "expected run missing from enumeration");
        }
    }

    #[test]
    fn relaxed_point_passes_rows_but_not_integrality() {
        let (grid, spec) = wm_hull_demo();
        let block = build_basic_block(0, 0, &spec, &grid).unwrap();
        let c = demo_relaxed_point();
        let violations = check_membership(&block, &c, 1e-9);
        assert!(!violations.is_empty());
        for v in &violations {
            assert!(
                matches!(v, Violation::Integrality { .. }),
                "relaxation must hold, got {v}"
            );
        }
    }

    #[test]
    fn no_convex_blend_of_the_runs_reaches_the_relaxed_point() {
        let points = demo_expected_points();
        let c = demo_relaxed_point();
        assert!(!convex_blend_exists(&points, &c).unwrap());
        // Sanity: the midpoint of the two runs is reachable.
        let mut mid = Point::new();
        for (name, &va) in &points[0] {
            mid.insert(*name, 0.5 * (va + points[1][name]));
        }
        assert!(convex_blend_exists(&points, &mid).unwrap());
    }

    #[test]
    fn mip_over_the_demo_block_picks_an_integral_run() {
        // Minimizing total deviation from a baseline that matches one of
        // the two runs must return that run exactly.
        let (grid, spec) = wm_hull_demo();
        let home = 0;
        let block = LinearConstraintBlock::merge([
            build_basic_block(home, 0, &spec, &grid).unwrap(),
            build_deviation_block(home, ApplianceId::Basic(0), &spec.baseline_kwh, &grid)
                .unwrap(),
        ])
        .unwrap();
        let (mut model, map) = block.to_model().unwrap();
        for t in 0..grid.k {
            let u = map[&vn(home, ApplianceId::Basic(0), Symbol::UPlus, t)];
            model.set_objective_coef(u, 1.0).unwrap();
        }
        let sol = model.solve_mip(&MipParams::default()).unwrap();
        assert!(sol.obj.abs() < 1e-9, "baseline run should be reachable, got {}", sol.obj);
        let p1 = map[&vn(home, ApplianceId::Basic(0), Symbol::P, 1)];
        let p2 = map[&vn(home, ApplianceId::Basic(0), Symbol::P, 2)];
        assert!((sol.x[p1] - 1.5).abs() < 1e-6);
        assert!((sol.x[p2] - 1.5).abs() < 1e-6);
    }

    #[test]
    fn tag_families_are_complete_and_disjoint_across_builders() {
        let grid = TimeGrid::new(8, 0.25).unwrap();
        let weather = vec![10.0; 8];
        let hvac = build_hvac_block(0, &hvac_spec(HvacMode::Heating), &grid, &weather)
            .unwrap()
            .tags();
        let ewh = build_ewh_block(0, &ewh_spec(8), &grid).unwrap().tags();
        let ev = build_ev_block(0, &ev_spec(8, &[(3, 2.0)]), &grid).unwrap().tags();
        let wm = ApplianceSpec {
            params: BasicApplianceParams {
                name: "wm".into(),
                energy_per_interval_kwh: 0.5,
                run_intervals: 2,
                window_start: 2,
                window_end: 5,
            },
            weight: 1.0,
            baseline_kwh: vec![0.0; 8],
        };
        let basic = build_basic_block(0, 0, &wm, &grid).unwrap().tags();
        let dev = build_deviation_block(0, ApplianceId::Hvac, &[0.0; 8], &grid).unwrap().tags();

        let want_hvac: BTreeSet<_> = ["hvac_b", "hvac_c", "hvac_d", "hvac_e", "hvac_f",
            "hvac_g", "hvac_h", "hvac_i", "hvac_j", "hvac_k"]
        .into_iter()
        .collect();
        let want_ewh: BTreeSet<_> =
            ["ewh_a", "ewh_b", "ewh_c", "ewh_d", "ewh_e", "ewh_f", "ewh_g"].into_iter().collect();
        let want_ev: BTreeSet<_> =
            ["ev_a", "ev_b", "ev_c", "ev_d", "ev_e", "ev_f", "ev_g"].into_iter().collect();
        let want_wm: BTreeSet<_> =
            ["wm_a", "wm_b", "wm_c", "wm_d", "wm_e", "wm_f", "wm_g", "wm_h", "wm_i"]
                .into_iter()
                .collect();
        let want_dev: BTreeSet<_> = ["dev_pos", "dev_neg"].into_iter().collect();
        assert_eq!(hvac, want_hvac);
        assert_eq!(ewh, want_ewh);
        assert_eq!(ev, want_ev);
        assert_eq!(basic, want_wm);
        assert_eq!(dev, want_dev);
        let families = [&hvac, &ewh, &ev, &basic, &dev];
        for (i, a) in families.iter().enumerate() {
            for b in families.iter().skip(i + 1) {
                assert!(a.is_disjoint(b));
            }
        }
    }

    /// A small fully equipped home with a hand-checked feasible baseline.
    fn desk_home(grid: &TimeGrid, weather: &[f64]) -> HomeSpec {
        let k = grid.k;
        let mut hvac = hvac_spec(HvacMode::Heating);
        let trace = simulate_thermostat_baseline(&hvac.params, grid, weather).unwrap();
        hvac.baseline_kwh = trace.p_kwh.clone();

        let mut ewh = ewh_spec(k);
        ewh.params.demand_kg[5] = 20.0;
        // Latest single heating interval that covers the draw.
        let kwh = 20.0 / ewh.params.kg_per_kwh();
        ewh.baseline_kwh = vec![0.0; k];
        ewh.baseline_kwh[4] = kwh;

        let mut ev = ev_spec(k, &[(3, 2.0)]);
        ev.params.x0_kwh = 2.0;
        ev.baseline_kwh = vec![0.0; k];
        ev.baseline_kwh[4] = 1.44;
        ev.baseline_kwh[5] = 0.56;

        let wm = ApplianceSpec {
            params: BasicApplianceParams {
                name: "wm".into(),
                energy_per_interval_kwh: 0.6,
                run_intervals: 2,
                window_start: 2,
                window_end: 5,
            },
            weight: 0.8,
            baseline_kwh: {
                let mut b = vec![0.0; k];
                b[2] = 0.6;
                b[3] = 0.6;
                b
            },
        };
        HomeSpec { id: 3, hvac: Some(hvac), ewh: Some(ewh), ev: Some(ev), basics: vec![wm] }
    }

    #[test]
    fn assembled_baseline_is_a_member_with_zero_deviation() {
        let grid = TimeGrid::new(8, 0.25).unwrap();
        let weather = vec![0.0; 8];
        let home = desk_home(&grid, &weather);
        let block = assemble_home_polyhedron(&home, &grid, &weather).unwrap();
        let point = baseline_point(&home, &grid, &weather).unwrap();
        assert_eq!(point.len(), block.var_count());
        let violations = check_membership(&block, &point, 1e-9);
        assert!(violations.is_empty(), "baseline must be feasible: {:?}", violations[0]);
        let dev: f64 = point
            .iter()
            .filter(|(n, _)| n.symbol == Symbol::UPlus)
            .map(|(_, v)| *v)
            .sum();
        assert!(dev.abs() < 1e-12);
    }

    #[test]
    fn partial_completion_recovers_internals_and_rejects_bad_draws() {
        let grid = TimeGrid::new(8, 0.25).unwrap();
        let weather = vec![0.0; 8];
        let home = desk_home(&grid, &weather);
        let block = assemble_home_polyhedron(&home, &grid, &weather).unwrap();
        let full = baseline_point(&home, &grid, &weather).unwrap();
        let partial: Point = full
            .iter()
            .filter(|(n, _)| matches!(n.symbol, Symbol::P | Symbol::UPlus))
            .map(|(n, v)| (*n, *v))
            .collect();
        let completed = complete_partial(&block, &partial, 1e-7).unwrap();
        let completed = completed.expect("draws of a feasible point must complete");
        let violations = check_membership(&block, &completed, 1e-6);
        assert!(violations.is_empty(), "completion must be feasible: {:?}", violations[0]);

        // Moving the washer's energy out of its run breaks the cycle rows.
        let mut broken = partial.clone();
        broken.insert(vn(3, ApplianceId::Basic(0), Symbol::P, 2), 0.0);
        assert!(complete_partial(&block, &broken, 1e-7).unwrap().is_none());
    }

    #[test]
    fn builders_reject_contradictory_parameters() {
        let grid = TimeGrid::new(6, 0.25).unwrap();
        let mut bad_ewh = ewh_spec(6);
        bad_ewh.params.t_demand_c = 4.0; // not above tap temperature
        assert!(build_ewh_block(0, &bad_ewh, &grid).is_err());

        let bad_wm = ApplianceSpec {
            params: BasicApplianceParams {
                name: "wm".into(),
                energy_per_interval_kwh: 0.5,
                run_intervals: 4,
                window_start: 2,
                window_end: 3,
            },
            weight: 1.0,
            baseline_kwh: vec![0.0; 6],
        };
        assert!(build_basic_block(0, 0, &bad_wm, &grid).is_err());

        let spec = hvac_spec(HvacMode::Heating);
        assert!(build_hvac_block(0, &spec, &grid, &[0.0; 3]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn hvac_baseline_is_always_a_member(
            gamma1 in 0.02f64..0.3,
            gamma2 in 1.0e-6f64..1.0e-5,
            alpha in 0.8f64..1.0,
            rated in 1.0f64..5.0,
            t_low in 18.0f64..24.0,
            band in 1.0f64..3.0,
            eps in 0.25f64..1.0,
            t0 in 10.0f64..32.0,
            outdoor in -5.0f64..35.0,
            heating in proptest::bool::ANY,
        ) {
            let grid = TimeGrid::new(8, 0.25).unwrap();
            let weather = vec![outdoor; 8];
            let mode = if heating { HvacMode::Heating } else { HvacMode::Cooling };
            let params = HvacParams {
                gamma1,
                gamma2_c_per_j: gamma2,
                alpha,
                mode,
                rated_kw: rated,
                t_low_c: t_low,
                t_upper_c: t_low + band,
                epsilon_c: eps,
                t_in0_c: t0,
            };
            let trace = simulate_thermostat_baseline(&params, &grid, &weather).unwrap();
            let spec = ApplianceSpec {
                params,
                weight: 1.0,
                baseline_kwh: trace.p_kwh.clone(),
            };
            let home = HomeSpec { id: 0, hvac: Some(spec), ewh: None, ev: None, basics: vec![] };
            let block = assemble_home_polyhedron(&home, &grid, &weather).unwrap();
            let point = baseline_point(&home, &grid, &weather).unwrap();
            let violations = check_membership(&block, &point, 1e-7);
            prop_assert!(violations.is_empty(), "{:?}", violations.first());
        }

        #[test]
        fn storage_paths_telescope(
            demand in proptest::collection::vec(0.0f64..30.0, 8),
            draws in proptest::collection::vec(0.0f64..1.0, 8),
            x0 in 0.0f64..60.0,
        ) {
            let grid = TimeGrid::new(8, 0.25).unwrap();
            let mut ewh = ewh_spec(8);
            ewh.params.demand_kg = demand.clone();
            ewh.baseline_kwh = draws.clone();
            let mut ev = ev_spec(8, &[]);
            ev.params.x0_kwh = x0;
            ev.baseline_kwh = draws.clone();
            let home = HomeSpec { id: 1, hvac: None, ewh: Some(ewh.clone()), ev: Some(ev), basics: vec![] };
            let point = baseline_point(&home, &grid, &[0.0; 8]).unwrap();

            let kg = ewh.params.kg_per_kwh();
            let want_tank: f64 =
                draws.iter().map(|p| p * kg).sum::<f64>() - demand.iter().sum::<f64>();
            let tank_end = point[&vn(1, ApplianceId::Ewh, Symbol::Store, 8)];
            prop_assert!((tank_end - want_tank).abs() < 1e-9);

            let want_batt: f64 = x0 + draws.iter().sum::<f64>();
            let batt_end = point[&vn(1, ApplianceId::Ev, Symbol::Store, 8)];
            prop_assert!((batt_end - want_batt).abs() < 1e-9);
        }

        #[test]
        fn membership_flags_perturbed_draws(
            bump in 0.01f64..0.5,
            t in 0usize..8,
        ) {
            let grid = TimeGrid::new(8, 0.25).unwrap();
            let weather = vec![0.0; 8];
            let home = desk_home(&grid, &weather);
            let block = assemble_home_polyhedron(&home, &grid, &weather).unwrap();
            let mut point = baseline_point(&home, &grid, &weather).unwrap();
            // Push the water heater's draw without touching its tank path.
            let key = vn(3, ApplianceId::Ewh, Symbol::P, t);
            point.insert(key, point[&key] + bump);
            let violations = check_membership(&block, &point, 1e-9);
            prop_assert!(violations.iter().any(|v| v.breaks_relaxation()));
        }
    }
}
