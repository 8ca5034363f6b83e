//! Micro-benchmarks of the hot kernels: constitutive evaluation, the
//! strain/stress-divergence element pass, one mEVP iteration, a full
//! momentum step per scheme, the upwind transport update, and the
//! band-pass filter of the feature detector.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use floe_core::benchmark::{self, BenchmarkConfig};
use floe_core::fem::Operators;
use floe_core::lkf::{self, DeformationImage, DetectorParams};
use floe_core::momentum::{Forcing, SolverConfig, SolverScheme, Stepper};
use floe_core::rheology::{self, RheologyParams, StrainRate};
use floe_core::transport;
use floe_core::Staggering;

/// Deterministic pseudo-random stream in [-1, 1) (no RNG dependency).
fn hash_stream(n: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) | 1;
    (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 52) as f64 - 1.0
        })
        .collect()
}

fn bench_rheology(c: &mut Criterion) {
    let params = RheologyParams::default();
    let noise = hash_stream(3 * 4096, 7);
    let strains: Vec<StrainRate> = (0..4096)
        .map(|i| {
            StrainRate::new(
                1e-6 * noise[3 * i],
                1e-6 * noise[3 * i + 1],
                1e-6 * noise[3 * i + 2],
            )
        })
        .collect();
    c.bench_function("rheology_evaluate_4096", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for eps in &strains {
                let eval = rheology::evaluate(&params, black_box(eps), 0.3, 1.0);
                acc += eval.zeta + eval.p;
            }
            black_box(acc)
        })
    });
}

fn grid_setup(staggering: Staggering) -> (BenchmarkConfig, Operators, benchmark::State, Forcing) {
    let cfg = BenchmarkConfig::square(staggering, 8.0);
    let grid = cfg.build_grid().unwrap();
    let ops = Operators::build(&grid, staggering).unwrap();
    let mut state = benchmark::initial_state(&grid, &ops);
    let noise = hash_stream(2 * ops.n_points(), 11);
    for p in 0..ops.n_points() {
        state.u[p] = 0.05 * noise[2 * p];
        state.v[p] = 0.05 * noise[2 * p + 1];
    }
    let mut forcing = Forcing::zero(ops.n_points());
    benchmark::sample_forcing(&ops, &cfg, 43_200.0, &mut forcing);
    (cfg, ops, state, forcing)
}

fn bench_element_pass(c: &mut Criterion) {
    let (_, ops, state, _) = grid_setup(Staggering::B);
    let n = ops.n_points();
    c.bench_function("strain_divergence_pass_64x64_b", |b| {
        let mut fu = vec![0.0; n];
        let mut fv = vec![0.0; n];
        b.iter(|| {
            let strains = ops.compute_strain(&state.u, &state.v).unwrap();
            let params = RheologyParams::default();
            let sigma: Vec<_> = strains
                .iter()
                .map(|eps| {
                    let eval = rheology::evaluate(&params, eps, 0.3, 1.0);
                    rheology::vp_stress(&eval, eps)
                })
                .collect();
            fu.iter_mut().for_each(|x| *x = 0.0);
            fv.iter_mut().for_each(|x| *x = 0.0);
            ops.add_stress_divergence(&sigma, &mut fu, &mut fv);
            black_box(fu[n / 2] + fv[n / 2])
        })
    });
}

fn bench_momentum_steps(c: &mut Criterion) {
    let mut group = c.benchmark_group("momentum_step_64x64_b");
    group.sample_size(10);
    for scheme in [SolverScheme::Picard, SolverScheme::Evp, SolverScheme::Mevp] {
        let (cfg, ops, state, forcing) = grid_setup(Staggering::B);
        let solver = SolverConfig::for_scheme(scheme);
        group.bench_function(BenchmarkId::from_parameter(scheme), |b| {
            let mut stepper =
                Stepper::new(&ops, cfg.rheology, cfg.momentum, solver.clone()).unwrap();
            b.iter(|| {
                let (mut u, mut v, mut sigma) =
                    (state.u.clone(), state.v.clone(), state.sigma.clone());
                stepper
                    .step(
                        cfg.dt_s, &forcing, &state.h, &state.a, &mut u, &mut v, &mut sigma, 0,
                    )
                    .unwrap();
                black_box(u[ops.n_points() / 2])
            })
        });
    }
    group.finish();
}

fn bench_mevp_iteration(c: &mut Criterion) {
    let (cfg, ops, state, forcing) = grid_setup(Staggering::B);
    let mut solver = SolverConfig::for_scheme(SolverScheme::Mevp);
    solver.n_sub = 1;
    c.bench_function("mevp_single_iteration_64x64_b", |b| {
        let mut stepper = Stepper::new(&ops, cfg.rheology, cfg.momentum, solver.clone()).unwrap();
        let (mut u, mut v, mut sigma) = (state.u.clone(), state.v.clone(), state.sigma.clone());
        b.iter(|| {
            stepper
                .step(
                    cfg.dt_s, &forcing, &state.h, &state.a, &mut u, &mut v, &mut sigma, 0,
                )
                .unwrap();
            black_box(u[ops.n_points() / 2])
        })
    });
}

fn bench_transport(c: &mut Criterion) {
    let (cfg, _, state, _) = grid_setup(Staggering::B);
    let grid = cfg.build_grid().unwrap();
    let mut speeds = Vec::new();
    transport::face_normal_speeds(&grid, cfg.staggering, &state.u, &state.v, &mut speeds);
    c.bench_function("upwind_step_64x64", |b| {
        b.iter(|| {
            let mut h = state.h.clone();
            let mut a = state.a.clone();
            transport::upwind_step(&grid, &speeds, cfg.dt_s, &mut h, &mut a).unwrap();
            black_box(h[100])
        })
    });
}

fn bench_detector(c: &mut Criterion) {
    let n = 256;
    let noise = hash_stream(n * n, 3);
    let mut data: Vec<f64> = noise.iter().map(|r| 1e-3 * (1.0 + 0.08 * r)).collect();
    for k in 0..n {
        data[k * n + n / 3] = 1e-1;
        data[(n / 2) * n + k] = 5e-2;
    }
    let image = DeformationImage::new(n, n, 2.0, data).unwrap();
    let params = DetectorParams::default();
    c.bench_function("dog_response_256x256", |b| {
        b.iter(|| black_box(lkf::dog_response(&image, &params)))
    });
    c.bench_function("detect_256x256", |b| {
        b.iter(|| black_box(lkf::detect(&image, &params).unwrap().len()))
    });
}

criterion_group!(
    benches,
    bench_rheology,
    bench_element_pass,
    bench_momentum_steps,
    bench_mevp_iteration,
    bench_transport,
    bench_detector
);
criterion_main!(benches);
