//! Randomized community generation: samples each home's appliance
//! parameters and preferences from fixed distributions, builds the
//! occupant's desirable schedule per appliance with simple greedy
//! policies, and audits every baseline against the home's own polyhedron
//! before accepting it. Generation is a pure function of (config, seed):
//! the same inputs yield byte-identical instances, and each home's draw
//! depends only on the community seed and its own index.

use std::io::{BufRead, BufReader, Read};

use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::blocks::{assemble_home_polyhedron, baseline_point, check_membership};
use crate::model::{
    ApplianceSpec, BasicApplianceParams, CommunityInstance, EvParams, EwhParams, HomeSpec,
    HvacMode, HvacParams, ModelError, TimeGrid, target_profile,
};

/// Outdoor mean above which homes are generated in cooling mode.
const MODE_SPLIT_C: f64 = 18.0;
/// Driving energy per mile, kWh.
const KWH_PER_MILE: f64 = 0.346;
/// Attempts to draw a feasible home before giving up.
const MAX_ATTEMPTS: usize = 50;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("bad generation config: {0}")]
    BadConfig(String),
    #[error("home {home}: no feasible baseline after {attempts} attempts")]
    Unsatisfiable { home: u32, attempts: usize },
    #[error("weather samples more than an hour from intervals at hours {spans}")]
    WeatherGaps { spans: String },
    #[error("weather csv: {0}")]
    WeatherFormat(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Block(#[from] crate::blocks::BlockError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Inputs to community generation besides the seed.
#[derive(Debug, Clone)]
pub struct GenConfig {
    pub homes: usize,
    pub grid: TimeGrid,
    /// Outdoor temperature per interval, Celsius. Length `grid.k`.
    pub weather_c: Vec<f64>,
}

/// A generated instance plus bookkeeping about the generation run.
#[derive(Debug, Clone)]
pub struct Generated {
    pub instance: CommunityInstance,
    /// Homes redrawn because a greedy baseline failed its feasibility
    /// audit, summed over the community.
    pub resamples: usize,
}

/// Seed for home `i` within community seed `seed`. Mixing by index keeps
/// each home's draw independent of the community size, so growing the
/// community leaves existing homes unchanged.
pub fn home_seed(seed: u64, i: u64) -> u64 {
    seed ^ i.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn positive_normal(rng: &mut impl Rng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let dist = Normal::new(mean, sd).expect("static parameters");
    for _ in 0..1000 {
        let v = dist.sample(rng);
        if v > lo && v < hi {
            return v;
        }
    }
    mean
}

fn sample_hvac(rng: &mut impl Rng, weather_mean: f64) -> HvacParams {
    let gamma1 = positive_normal(rng, 0.10, 0.001, 0.01, 0.5);
    let gamma2 = positive_normal(rng, 3.0e-6, 1.0e-7, 1.0e-8, 1.0e-4);
    let mode = if weather_mean < MODE_SPLIT_C { HvacMode::Heating } else { HvacMode::Cooling };
    let rated_kw = match mode {
        HvacMode::Heating => 3.0,
        HvacMode::Cooling => 2.0,
    };
    let t_low_c = rng.gen_range(19..=24) as f64;
    let t_upper_c = t_low_c + 2.0;
    let t_in0_c = rng.gen_range(t_low_c..t_upper_c);
    HvacParams {
        gamma1,
        gamma2_c_per_j: gamma2,
        alpha: 0.9,
        mode,
        rated_kw,
        t_low_c,
        t_upper_c,
        epsilon_c: 0.5,
        t_in0_c,
    }
}

fn sample_ewh(rng: &mut impl Rng, k: usize) -> EwhParams {
    let capacity_kg = 270.0;
    // Hot-water events start once the initially empty tank has had a few
    // intervals to heat.
    let slots: Vec<usize> = (4..k).collect();
    let wanted = rng.gen_range(2usize..=5).min(slots.len());
    let mut events: Vec<usize> =
        index_sample(rng, slots.len(), wanted).into_iter().map(|j| slots[j]).collect();
    events.sort_unstable();
    let mut demand_kg = vec![0.0; k];
    let draw = Normal::new(30.0_f64, 10.0).expect("static parameters");
    for t in events {
        demand_kg[t] = draw.sample(rng).abs().min(capacity_kg);
    }
    EwhParams {
        capacity_kg,
        p_max_kw: 4.0,
        t_demand_c: rng.gen_range(40..=42) as f64,
        t_tap_c: 4.0,
        efficiency: 0.95,
        rho_j_per_kg_c: 4186.0,
        demand_kg,
    }
}

fn sample_ev(rng: &mut impl Rng, k: usize) -> EvParams {
    let capacity_kwh = 60.0;
    let wanted = rng.gen_range(4usize..=12).min(k);
    let mut trips: Vec<usize> = index_sample(rng, k, wanted).into_iter().collect();
    trips.sort_unstable();
    let mut trip_kwh = vec![0.0; k];
    for t in trips {
        trip_kwh[t] = KWH_PER_MILE * rng.gen_range(5..=9) as f64;
    }
    EvParams { capacity_kwh, i_max_a: 24.0, x0_kwh: capacity_kwh, trip_kwh }
}

fn sample_basic(rng: &mut impl Rng, k: usize, name: &str, power_kw: f64, dt: f64) -> BasicApplianceParams {
    let s = rng.gen_range(0..k);
    BasicApplianceParams {
        name: name.into(),
        energy_per_interval_kwh: power_kw * dt,
        run_intervals: 4,
        window_start: s.saturating_sub(4),
        window_end: (s + 8).min(k - 1),
    }
}

/// Just-in-time water heating: for each hot-water event, heat exactly the
/// shortfall in the latest intervals before the event that still have
/// spare heating capacity. Returns the electrical plan, or `None` when an
/// event cannot be covered in time.
fn plan_latest_start_heating(params: &EwhParams, grid: &TimeGrid) -> Option<Vec<f64>> {
    let k = grid.k;
    let kg_per_kwh = params.kg_per_kwh();
    let kg_rate = params.p_max_kw * grid.dt_hours * kg_per_kwh;
    let mut heat_kg = vec![0.0; k];
    for event in 0..k {
        let need = params.demand_kg[event];
        if need == 0.0 {
            continue;
        }
        // Tank level entering `event` under the current plan.
        let mut level = 0.0;
        for t in 0..event {
            level += heat_kg[t] - params.demand_kg[t];
        }
        let mut deficit = need - level;
        let mut t = event;
        while deficit > 1e-9 {
            if t == 0 {
                return None;
            }
            t -= 1;
            let spare = kg_rate - heat_kg[t];
            let add = spare.min(deficit);
            heat_kg[t] += add;
            deficit -= add;
        }
    }
    Some(heat_kg.iter().map(|kg| kg / kg_per_kwh).collect())
}

/// Plug-in-when-home charging: refill at the full current whenever the
/// vehicle is present and below capacity.
fn plan_greedy_charging(params: &EvParams, grid: &TimeGrid) -> Vec<f64> {
    let k = grid.k;
    let per_interval = params.i_max_a * params.kwh_per_amp(grid);
    let mut plan = vec![0.0; k];
    let mut level = params.x0_kwh;
    for t in 0..k {
        if params.trip_kwh[t] > 0.0 {
            level -= params.trip_kwh[t];
        } else {
            let charge = per_interval.min(params.capacity_kwh - level).max(0.0);
            plan[t] = charge;
            level += charge;
        }
    }
    plan
}

fn basic_baseline(rng: &mut impl Rng, params: &BasicApplianceParams, k: usize) -> Vec<f64> {
    let latest = params.window_end + 1 - params.run_intervals;
    let start = rng.gen_range(params.window_start..=latest);
    let mut plan = vec![0.0; k];
    for t in start..start + params.run_intervals {
        plan[t] = params.energy_per_interval_kwh;
    }
    plan
}

/// Draws one home: appliance parameters, discomfort weights, and a
/// desirable schedule per appliance, redrawing the whole home if its
/// baseline fails the feasibility audit. Returns the home and the number
/// of redraws that were needed.
pub fn sample_home(
    id: u32,
    grid: &TimeGrid,
    weather_c: &[f64],
    rng: &mut impl Rng,
) -> Result<(HomeSpec, usize), GenError> {
    let k = grid.k;
    let weather_mean = weather_c.iter().sum::<f64>() / weather_c.len() as f64;
    for attempt in 0..MAX_ATTEMPTS {
        let hvac_params = sample_hvac(rng, weather_mean);
        let hvac_weight = rng.gen_range(0.1..1.0);
        let ewh_params = sample_ewh(rng, k);
        let ewh_weight = rng.gen_range(0.1..1.0);
        let ev_params = sample_ev(rng, k);
        let ev_weight = rng.gen_range(0.1..1.0);
        let mut basics = Vec::new();
        for (name, power_kw) in [("wm", 2.0), ("oven", 2.4), ("dryer", 3.0)] {
            let params = sample_basic(rng, k, name, power_kw, grid.dt_hours);
            let weight = rng.gen_range(0.1..1.0);
            let baseline_kwh = basic_baseline(rng, &params, k);
            basics.push(ApplianceSpec { params, weight, baseline_kwh });
        }

        let hvac_baseline =
            crate::blocks::simulate_thermostat_baseline(&hvac_params, grid, weather_c)?.p_kwh;
        let Some(ewh_baseline) = plan_latest_start_heating(&ewh_params, grid) else {
            continue;
        };
        let ev_baseline = plan_greedy_charging(&ev_params, grid);

        let home = HomeSpec {
            id,
            hvac: Some(ApplianceSpec {
                params: hvac_params,
                weight: hvac_weight,
                baseline_kwh: hvac_baseline,
            }),
            ewh: Some(ApplianceSpec {
                params: ewh_params,
                weight: ewh_weight,
                baseline_kwh: ewh_baseline,
            }),
            ev: Some(ApplianceSpec {
                params: ev_params,
                weight: ev_weight,
                baseline_kwh: ev_baseline,
            }),
            basics,
        };

        let block = assemble_home_polyhedron(&home, grid, weather_c)?;
        let point = baseline_point(&home, grid, weather_c)?;
        if check_membership(&block, &point, 1e-7).is_empty() {
            return Ok((home, attempt));
        }
    }
    Err(GenError::Unsatisfiable { home: id, attempts: MAX_ATTEMPTS })
}

/// Generates a community. Pure in (config, seed): repeated calls return
/// byte-identical instances, and each home depends only on its index.
pub fn generate_community(cfg: &GenConfig, seed: u64) -> Result<Generated, GenError> {
    cfg.grid.validate()?;
    if cfg.homes == 0 {
        return Err(GenError::BadConfig("a community needs at least one home".into()));
    }
    if cfg.grid.k < 5 {
        return Err(GenError::BadConfig(format!(
            "horizon of {} intervals is too short for appliance windows",
            cfg.grid.k
        )));
    }
    if cfg.weather_c.len() != cfg.grid.k {
        return Err(GenError::BadConfig(format!(
            "weather has {} intervals, horizon needs {}",
            cfg.weather_c.len(),
            cfg.grid.k
        )));
    }
    if cfg.weather_c.iter().any(|w| !w.is_finite()) {
        return Err(GenError::BadConfig("weather contains non-finite temperatures".into()));
    }

    let mut homes = Vec::with_capacity(cfg.homes);
    let mut resamples = 0;
    for i in 0..cfg.homes {
        let mut rng = ChaCha8Rng::seed_from_u64(home_seed(seed, i as u64));
        let (home, redraws) = sample_home(i as u32, &cfg.grid, &cfg.weather_c, &mut rng)?;
        resamples += redraws;
        homes.push(home);
    }
    let target_kwh = target_profile(&cfg.grid, &homes)?;
    let instance = CommunityInstance {
        grid: cfg.grid,
        homes,
        weather_c: cfg.weather_c.clone(),
        target_kwh,
        seed,
    };
    instance.validate()?;
    Ok(Generated { instance, resamples })
}

/// Synthetic daily outdoor profile: coolest at 06:00, warmest at 15:00,
/// joined by half-cosine ramps. Hours wrap modulo 24 for horizons other
/// than a day.
pub fn synth_weather(grid: &TimeGrid, low_c: f64, high_c: f64) -> Vec<f64> {
    let amp = high_c - low_c;
    (0..grid.k)
        .map(|t| {
            let h = (grid.hour_of(t) + 0.5 * grid.dt_hours) % 24.0;
            let frac = if (6.0..=15.0).contains(&h) {
                // warming ramp over 9 hours
                (1.0 - (std::f64::consts::PI * (h - 6.0) / 9.0).cos()) / 2.0
            } else {
                // cooling ramp over the remaining 15 hours
                let d = if h > 15.0 { h - 15.0 } else { h + 9.0 };
                1.0 - (1.0 - (std::f64::consts::PI * d / 15.0).cos()) / 2.0
            };
            low_c + amp * frac
        })
        .collect()
}

/// Reads outdoor temperatures from `hour,temp_c` rows (header optional)
/// and resamples them onto the grid by nearest neighbor. Intervals whose
/// nearest sample is more than an hour away are reported as gaps.
pub fn ingest_weather_csv(reader: impl Read, grid: &TimeGrid) -> Result<Vec<f64>, GenError> {
    let mut samples: Vec<(f64, f64)> = Vec::new();
    for (lineno, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(GenError::WeatherFormat(format!(
                "line {}: expected `hour,temp_c`, got {line:?}",
                lineno + 1
            )));
        };
        match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
            (Ok(h), Ok(temp)) => {
                if !h.is_finite() || !temp.is_finite() {
                    return Err(GenError::WeatherFormat(format!(
                        "line {}: non-finite value",
                        lineno + 1
                    )));
                }
                samples.push((h, temp));
            }
            _ if lineno == 0 => continue, // header
            _ => {
                return Err(GenError::WeatherFormat(format!(
                    "line {}: expected numbers, got {line:?}",
                    lineno + 1
                )))
            }
        }
    }
    if samples.is_empty() {
        return Err(GenError::WeatherFormat("no samples".into()));
    }
    samples.sort_by(|x, y| x.0.total_cmp(&y.0));

    let mut out = Vec::with_capacity(grid.k);
    let mut gap_intervals: Vec<usize> = Vec::new();
    for t in 0..grid.k {
        let mid = grid.hour_of(t) + 0.5 * grid.dt_hours;
        let i = samples.partition_point(|s| s.0 < mid);
        let mut best: Option<(f64, f64)> = None;
        for j in [i.checked_sub(1), Some(i)].into_iter().flatten() {
            if let Some(&(h, temp)) = samples.get(j) {
                let d = (h - mid).abs();
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, temp));
                }
            }
        }
        let (d, temp) = best.expect("samples nonempty");
        if d > 1.0 {
            gap_intervals.push(t);
        }
        out.push(temp);
    }
    if !gap_intervals.is_empty() {
        let mut spans: Vec<String> = Vec::new();
        let mut run_start = gap_intervals[0];
        let mut prev = gap_intervals[0];
        for &t in &gap_intervals[1..] {
            if t != prev + 1 {
                spans.push(format!("{:.2}-{:.2}", grid.hour_of(run_start), grid.hour_of(prev + 1)));
                run_start = t;
            }
            prev = t;
        }
        spans.push(format!("{:.2}-{:.2}", grid.hour_of(run_start), grid.hour_of(prev + 1)));
        return Err(GenError::WeatherGaps { spans: spans.join(", ") });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::{
        assemble_home_polyhedron, baseline_point, check_membership, Symbol,
    };

    fn desk_config(homes: usize, k: usize) -> GenConfig {
        let grid = TimeGrid::new(k, 0.25).unwrap();
        let weather_c = synth_weather(&grid, -2.0, 12.0);
        GenConfig { homes, grid, weather_c }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = desk_config(4, 24);
        let a = generate_community(&cfg, 99).unwrap();
        let b = generate_community(&cfg, 99).unwrap();
        assert_eq!(
            a.instance.to_json_string().unwrap(),
            b.instance.to_json_string().unwrap()
        );
        let c = generate_community(&cfg, 100).unwrap();
        assert_ne!(
            a.instance.to_json_string().unwrap(),
            c.instance.to_json_string().unwrap()
        );
    }

    #[test]
    fn homes_do_not_depend_on_community_size() {
        let small = generate_community(&desk_config(3, 24), 7).unwrap();
        let large = generate_community(&desk_config(6, 24), 7).unwrap();
        for i in 0..3 {
            assert_eq!(small.instance.homes[i], large.instance.homes[i]);
        }
    }

    #[test]
    fn every_generated_baseline_is_a_member() {
        let cfg = desk_config(6, 24);
        let out = generate_community(&cfg, 3).unwrap();
        for home in &out.instance.homes {
            let block =
                assemble_home_polyhedron(home, &cfg.grid, &cfg.weather_c).unwrap();
            let point = baseline_point(home, &cfg.grid, &cfg.weather_c).unwrap();
            let violations = check_membership(&block, &point, 1e-7);
            assert!(violations.is_empty(), "home {}: {}", home.id, violations[0]);
            let dev: f64 = point
                .iter()
                .filter(|(n, _)| n.symbol == Symbol::UPlus)
                .map(|(_, v)| *v)
                .sum();
            assert!(dev.abs() < 1e-9, "baseline deviates from itself");
        }
    }

    #[test]
    fn target_is_the_flat_average_of_baselines() {
        let cfg = desk_config(5, 24);
        let out = generate_community(&cfg, 11).unwrap();
        let total: f64 = out
            .instance
            .homes
            .iter()
            .map(|h| h.baseline_total_kwh())
            .sum();
        for q in &out.instance.target_kwh {
            assert!((q - total / 24.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mode_follows_the_weather() {
        let grid = TimeGrid::new(24, 0.25).unwrap();
        let cold = GenConfig { homes: 1, grid, weather_c: vec![0.0; 24] };
        let hot = GenConfig { homes: 1, grid, weather_c: vec![30.0; 24] };
        let c = generate_community(&cold, 1).unwrap();
        let h = generate_community(&hot, 1).unwrap();
        let cp = &c.instance.homes[0].hvac.as_ref().unwrap().params;
        let hp = &h.instance.homes[0].hvac.as_ref().unwrap().params;
        assert_eq!(cp.mode, HvacMode::Heating);
        assert_eq!(cp.rated_kw, 3.0);
        assert_eq!(hp.mode, HvacMode::Cooling);
        assert_eq!(hp.rated_kw, 2.0);
    }

    #[test]
    fn water_heating_plan_is_latest_start_at_full_power() {
        let grid = TimeGrid::new(8, 0.25).unwrap();
        let mut params = EwhParams {
            capacity_kg: 270.0,
            p_max_kw: 4.0,
            t_demand_c: 40.0,
            t_tap_c: 4.0,
            efficiency: 0.95,
            rho_j_per_kg_c: 4186.0,
            demand_kg: vec![0.0; 8],
        };
        params.demand_kg[5] = 40.0;
        let plan = plan_latest_start_heating(&params, &grid).unwrap();
        let kg_per_kwh = params.kg_per_kwh();
        let full = 1.0; // 4 kW for a quarter hour
        // Latest interval runs at the cap, the one before tops up the rest.
        assert!((plan[4] - full).abs() < 1e-9);
        let expect_3 = (40.0 - full * kg_per_kwh) / kg_per_kwh;
        assert!((plan[3] - expect_3).abs() < 1e-9);
        assert!(plan[..3].iter().all(|&p| p == 0.0));
        assert!(plan[5..].iter().all(|&p| p == 0.0));

        // An impossible draw is reported rather than silently clipped.
        params.demand_kg[5] = 200.0;
        assert!(plan_latest_start_heating(&params, &grid).is_none());
    }

    #[test]
    fn charging_plan_refills_after_trips_within_caps() {
        let grid = TimeGrid::new(8, 0.25).unwrap();
        let mut trip_kwh = vec![0.0; 8];
        trip_kwh[2] = 3.0;
        let params = EvParams { capacity_kwh: 60.0, i_max_a: 24.0, x0_kwh: 60.0, trip_kwh };
        let plan = plan_greedy_charging(&params, &grid);
        assert!(plan[..3].iter().all(|&p| p == 0.0), "full battery stays idle");
        assert!((plan[3] - 1.44).abs() < 1e-9);
        assert!((plan[4] - 1.44).abs() < 1e-9);
        assert!((plan[5] - (3.0 - 2.0 * 1.44)).abs() < 1e-9);
        assert!(plan[6..].iter().all(|&p| p == 0.0));
    }

    #[test]
    fn gamma1_sample_mean_is_close() {
        let grid = TimeGrid::new(8, 0.25).unwrap();
        let weather = vec![0.0; 8];
        let mut sum = 0.0;
        let n = 10_000;
        for i in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(home_seed(424242, i));
            let (home, _) = sample_home(i as u32, &grid, &weather, &mut rng).unwrap();
            sum += home.hvac.unwrap().params.gamma1;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.10).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn comfort_band_low_edge_is_uniform_over_its_range() {
        let grid = TimeGrid::new(8, 0.25).unwrap();
        let weather = vec![0.0; 8];
        let mut counts = [0usize; 6];
        let n = 10_000;
        for i in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(home_seed(31337, i));
            let (home, _) = sample_home(i as u32, &grid, &weather, &mut rng).unwrap();
            let t_low = home.hvac.unwrap().params.t_low_c;
            counts[(t_low as usize) - 19] += 1;
        }
        let expected = n as f64 / 6.0;
        let chi2: f64 =
            counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99th percentile of chi-squared with 5 degrees of freedom.
        assert!(chi2 < 15.086, "chi2 {chi2}, counts {counts:?}");
    }

    #[test]
    fn synthetic_weather_hits_extremes_at_the_right_hours() {
        let grid = TimeGrid::quarter_hour_day();
        let w = synth_weather(&grid, -3.0, 9.0);
        let (t_min, _) = w
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let (t_max, _) = w
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        // 06:00 and 15:00 in quarter-hour intervals.
        assert!((grid.hour_of(t_min) - 6.0).abs() <= 0.25, "min at {}", grid.hour_of(t_min));
        assert!((grid.hour_of(t_max) - 15.0).abs() <= 0.25, "max at {}", grid.hour_of(t_max));
        assert!(w.iter().all(|&v| (-3.0..=9.0).contains(&v)));
    }

    #[test]
    fn weather_csv_nearest_neighbor_and_gap_reporting() {
        let grid = TimeGrid::new(8, 0.25).unwrap();
        let csv = "hour,temp_c\n0.0,5.0\n1.0,7.0\n2.0,9.0\n";
        let w = ingest_weather_csv(csv.as_bytes(), &grid).unwrap();
        assert_eq!(w.len(), 8);
        // Midpoint 0.125 h is nearest the 0-hour sample; 0.625 the 1-hour.
        assert_eq!(w[0], 5.0);
        assert_eq!(w[2], 7.0);
        assert_eq!(w[7], 9.0);

        let grid_day = TimeGrid::new(24, 0.25).unwrap();
        let err = ingest_weather_csv(csv.as_bytes(), &grid_day).unwrap_err();
        match err {
            GenError::WeatherGaps { spans } => {
                assert!(spans.contains('-'), "spans: {spans}");
            }
            other => panic!("expected gap error, got {other}"),
        }
    }

    #[test]
    fn config_validation_rejects_degenerate_inputs() {
        let grid = TimeGrid::new(24, 0.25).unwrap();
        let empty = GenConfig { homes: 0, grid, weather_c: vec![0.0; 24] };
        assert!(generate_community(&empty, 1).is_err());
        let short = GenConfig { homes: 1, grid, weather_c: vec![0.0; 5] };
        assert!(generate_community(&short, 1).is_err());
        let tiny_grid = TimeGrid::new(4, 0.25).unwrap();
        let tiny = GenConfig { homes: 1, grid: tiny_grid, weather_c: vec![0.0; 4] };
        assert!(generate_community(&tiny, 1).is_err());
    }
}
