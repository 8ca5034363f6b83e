//! Scratch harness: production-grade inexact Picard candidates — one-step
//! accuracy against a tight reference, per-step cost, and short-run
//! stability from the cold initial state.

use floe_core::benchmark::{self, BenchmarkConfig};
use floe_core::fem::Operators;
use floe_core::momentum::{rel_l2, Forcing, SolverConfig, SolverScheme, Stepper};
use floe_core::Staggering;

fn main() {
    let cfg = BenchmarkConfig::square(Staggering::B, 8.0);
    let grid = cfg.build_grid().unwrap();
    let ops = Operators::build(&grid, cfg.staggering).unwrap();

    // Spin up half a simulated day with the production mEVP controls.
    let spin_steps = 360usize;
    let mut state = benchmark::initial_state(&grid, &ops);
    let mut forcing = Forcing::zero(ops.n_points());
    {
        let mut stepper =
            Stepper::new(&ops, cfg.rheology, cfg.momentum, cfg.solver.clone()).unwrap();
        for step in 0..spin_steps {
            benchmark::sample_forcing(&ops, &cfg, step as f64 * cfg.dt_s, &mut forcing);
            stepper
                .step(
                    cfg.dt_s,
                    &forcing,
                    &state.h,
                    &state.a,
                    &mut state.u,
                    &mut state.v,
                    &mut state.sigma,
                    step,
                )
                .unwrap();
        }
    }
    benchmark::sample_forcing(&ops, &cfg, spin_steps as f64 * cfg.dt_s, &mut forcing);

    let solve = |sc: SolverConfig| {
        let mut stepper = Stepper::new(&ops, cfg.rheology, cfg.momentum, sc).unwrap();
        let (mut u, mut v, mut sigma) = (state.u.clone(), state.v.clone(), state.sigma.clone());
        let t0 = std::time::Instant::now();
        let stats = stepper
            .step(cfg.dt_s, &forcing, &state.h, &state.a, &mut u, &mut v, &mut sigma, 0)
            .unwrap();
        (u, v, stats, t0.elapsed().as_secs_f64())
    };

    let mut pic = SolverConfig::for_scheme(SolverScheme::Picard);
    pic.picard_tol = 1e-10;
    pic.picard_max = 3000;
    pic.linear_tol = 1e-11;
    pic.linear_max = 20_000;
    let (ur, vr, stats, wall) = solve(pic);
    println!(
        "picard ref: {} iters, residual {:.2e}, converged {}, {:.1}s",
        stats.iterations, stats.residual, stats.converged, wall
    );

    let candidates = [
        (10usize, 1e-4, 60usize),
        (10, 1e-4, 150),
        (5, 1e-4, 100),
        (10, 1e-5, 100),
        (20, 1e-4, 60),
    ];
    for (max, lin_tol, lin_max) in candidates {
        let mut sc = SolverConfig::for_scheme(SolverScheme::Picard);
        sc.picard_max = max;
        sc.linear_tol = lin_tol;
        sc.linear_max = lin_max;
        let (u, v, stats, wall) = solve(sc);
        println!(
            "picard max={max:3} lin_tol={lin_tol:7.0e} lin_max={lin_max:4}: rel_l2 {:.3e}, {} linear iters, residual {:.1e}, {wall:.3}s/step",
            rel_l2(&u, &v, &ur, &vr),
            stats.linear_iterations,
            stats.residual,
        );
    }

    // Cold-start 120-step mini-runs: mean cost and stability.
    for (max, lin_tol, lin_max) in candidates {
        let mut sc = SolverConfig::for_scheme(SolverScheme::Picard);
        sc.picard_max = max;
        sc.linear_tol = lin_tol;
        sc.linear_max = lin_max;
        let mut run_state = benchmark::initial_state(&grid, &ops);
        let mut stepper = Stepper::new(&ops, cfg.rheology, cfg.momentum, sc).unwrap();
        let mut f = Forcing::zero(ops.n_points());
        let t0 = std::time::Instant::now();
        let mut ok = true;
        for step in 0..120usize {
            benchmark::sample_forcing(&ops, &cfg, step as f64 * cfg.dt_s, &mut f);
            if let Err(e) = stepper.step(
                cfg.dt_s,
                &f,
                &run_state.h,
                &run_state.a,
                &mut run_state.u,
                &mut run_state.v,
                &mut run_state.sigma,
                step,
            ) {
                println!("  blow-up at step {step}: {e}");
                ok = false;
                break;
            }
        }
        let wall = t0.elapsed().as_secs_f64();
        let vmax = run_state
            .u
            .iter()
            .zip(&run_state.v)
            .map(|(u, v)| u.hypot(*v))
            .fold(0.0f64, f64::max);
        println!(
            "mini-run max={max:3} lin_tol={lin_tol:7.0e} lin_max={lin_max:4}: {:.3}s/step, max|v| {vmax:.3} m/s, ok={ok}",
            wall / 120.0
        );
    }
}
