use std::time::Instant;

use loadshape::community::{generate_community, synth_weather, GenConfig};
use loadshape::dw::{
    solve_centralized, solve_dantzig_wolfe, CentralParams, DwParams,
};
use loadshape::model::TimeGrid;

fn instance(n: usize, k: usize, seed: u64) -> loadshape::model::CommunityInstance {
    let grid = TimeGrid::new(k, 0.25).unwrap();
    let weather_c = synth_weather(&grid, -2.0, 12.0);
    let cfg = GenConfig { homes: n, grid, weather_c };
    generate_community(&cfg, seed).unwrap().instance
}

fn main() {
    let (n, k) = (20, 96);
    let inst = instance(n, k, 1);

    for kappa in [Some(5), Some(10), None] {
        let p = DwParams { kappa, time_limit_s: Some(900.0), ..DwParams::default() };
        let t0 = Instant::now();
        let dw = solve_dantzig_wolfe(&inst, &p).unwrap();
        println!(
            "dw k{:?}: total {:.1}s loop {:.1}s final {:.1}s start {:.4} cbound {:.4} pool {} iters {} obj {:.4} relaxed {:.4} xi {:.4} gap {:.2e} stop {:?} audited {}",
            kappa,
            t0.elapsed().as_secs_f64(),
            dw.wall_s - dw.final_solve_s,
            dw.final_solve_s,
            dw.commit_start_objective,
            dw.commit_bound,
            dw.pool_final,
            dw.iterations,
            dw.objective,
            dw.relaxed_objective,
            dw.xi,
            dw.rel_gap,
            dw.stop,
            dw.audited
        );
    }

    let _ = (solve_centralized, CentralParams::default());
}
