//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::time::{Duration, Instant};

use irls_cli::experiments::build_instance;
use irls_cli::{degrees_of_freedom, run_phase_grid, Algorithm, ExperimentKind, ExperimentManifest, GridOutput, ModelOrder};
use irls_core::measurement::{fourier_rank_one, gaussian_dense, gaussian_rank_one};
use irls_core::objective::{grad_f_lr, grad_f_sp};
use irls_core::rng::{derive_seed, normal_matrix, rng_from_seed, Rng};
use irls_core::{
    check_mm_step, fit_quadratic_rate, generate_ground_truth, rip_probe, run_irls, solve_wls, IrlsConfig,
    MeasurementKind, MeasurementOperator, SmoothingParams, SvdFactors, WeightState, WlsConfig,
};
use irls_oracles::{dense_kkt_solve, finite_diff_grad, hadamard_weight_oracle, kernel_basis, OracleBudget};
use nalgebra::DMatrix;
use rand::Rng as _;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// `10^U(lo, hi)`.
fn log_uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    10f64.powf(rng.random_range(lo..hi))
}

fn sigma1(x: &DMatrix<f64>) -> f64 {
    SvdFactors::compute(x).sigma[0]
}

fn max_row_norm(x: &DMatrix<f64>) -> f64 {
    x.row_iter().map(|r| r.norm()).fold(0.0, f64::max)
}

fn majorization() -> Outcome {
    let mut rng = rng_from_seed(101);
    let mut worst = f64::INFINITY;
    for _ in 0..200 {
        let n1 = rng.random_range(1..=32);
        let n2 = rng.random_range(1..=32);
        let x = normal_matrix(&mut rng, n1, n2);
        let z = &x + log_uniform(&mut rng, -3.0, 1.0) * normal_matrix(&mut rng, n1, n2);
        let eps = sigma1(&x) * log_uniform(&mut rng, -4.0, 0.3);
        let delta = max_row_norm(&x) * log_uniform(&mut rng, -4.0, 0.3);
        let report = check_mm_step(&x, &z, SmoothingParams::new(eps, delta).unwrap()).unwrap();
        worst = worst.min(report.majorization_slack() / (1.0 + report.q_next.abs()));
    }
    outcome(worst >= -1e-9, format!("min normalized slack {worst:.3e} over 200 tuples"))
}

fn monotonicity() -> Outcome {
    let (n1, n2, r, s) = (48, 12, 2, 6);
    let dof = degrees_of_freedom(r, s, n2);
    let factors = [1.0, 1.5, 2.0, 3.0];
    let mut worst = f64::NEG_INFINITY;
    let mut runs = 0;
    for seed in 0..20u64 {
        let kind = [MeasurementKind::DenseGaussian, MeasurementKind::RankOneGaussian, MeasurementKind::FourierRankOne]
            [seed as usize % 3];
        let m = (factors[seed as usize % 4] * dof as f64) as usize;
        let gt = generate_ground_truth(n1, n2, r, s, derive_seed(202, &[seed, 0])).unwrap();
        let op_seed = derive_seed(202, &[seed, 1]);
        let op = match kind {
            MeasurementKind::DenseGaussian => gaussian_dense(n1, n2, m, op_seed),
            MeasurementKind::RankOneGaussian => gaussian_rank_one(n1, n2, m, op_seed),
            MeasurementKind::FourierRankOne => fourier_rank_one(n1, n2, m, op_seed),
        }
        .unwrap();
        let y = op.apply(&gt.x).unwrap();
        let res = run_irls(&op, &y, &IrlsConfig::new(r, s), Some(&gt.x)).unwrap();
        worst = worst.max(res.trace.max_objective_increase());
        runs += 1;
    }
    outcome(worst <= 1e-9, format!("largest increase of F over {runs} runs: {worst:.3e}"))
}

fn gradient_identities() -> Outcome {
    let mut rng = rng_from_seed(303);
    let mut identity_err: f64 = 0.0;
    let mut fd_err: f64 = 0.0;
    for _ in 0..50 {
        let n1 = rng.random_range(2..=8);
        let n2 = rng.random_range(2..=8);
        let x = normal_matrix(&mut rng, n1, n2);
        let svd = SvdFactors::compute(&x);
        let k = svd.len();
        // thresholds between singular values and between row norms, away from both
        let eps = svd.sigma[rng.random_range(0..k)] * rng.random_range(0.3..0.9);
        let delta = max_row_norm(&x) * rng.random_range(0.2..0.9);
        let ws = WeightState::build(&x, eps, delta).unwrap();
        let g_lr = grad_f_lr(&x, eps).unwrap();
        let g_sp = grad_f_sp(&x, delta).unwrap();
        identity_err = identity_err.max((&g_lr - ws.apply_lr(&x)).amax()).max((&g_sp - ws.apply_sp(&x)).amax());

        let fd_lr = finite_diff_grad(|z| irls_core::objective::f_lr(z, eps).unwrap(), &x, 1e-6);
        let fd_sp = finite_diff_grad(|z| irls_core::objective::f_sp(z, delta).unwrap(), &x, 1e-6);
        fd_err = fd_err.max((&fd_lr - &g_lr).norm() / g_lr.norm()).max((&fd_sp - &g_sp).norm() / g_sp.norm());
    }
    outcome(
        identity_err <= 1e-10 && fd_err <= 1e-5,
        format!("grad = W(X) max entry error {identity_err:.3e}; finite differences rel. error {fd_err:.3e}"),
    )
}

fn wls_optimality() -> Outcome {
    let (n1, n2, m) = (8, 6, 20);
    let budget = OracleBudget::default();
    let (mut kkt_err, mut feas, mut orth): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for seed in 0..20u64 {
        let op = gaussian_dense(n1, n2, m, derive_seed(404, &[seed, 0])).unwrap();
        let mut rng = rng_from_seed(derive_seed(404, &[seed, 1]));
        let y = op.apply(&normal_matrix(&mut rng, n1, n2)).unwrap();
        let x_w = normal_matrix(&mut rng, n1, n2);
        let eps = sigma1(&x_w) * log_uniform(&mut rng, -2.0, 0.0);
        let delta = max_row_norm(&x_w) * log_uniform(&mut rng, -2.0, 0.0);
        let ws = WeightState::build(&x_w, eps, delta).unwrap();

        let mut sol = solve_wls(&op, &y, &ws, &WlsConfig::default()).unwrap();
        let oracle = dense_kkt_solve(&op, &y, &ws, &budget).unwrap();
        kkt_err = kkt_err.max((&sol.x - &oracle).norm() / oracle.norm());
        feas = feas.max(sol.constraint_residual);
        let kernel = kernel_basis(&op, &budget).unwrap();
        orth = orth.max(sol.check_kernel(&ws, &kernel));
    }
    outcome(
        kkt_err <= 1e-8 && feas <= 1e-10 && orth <= 1e-8,
        format!("vs KKT {kkt_err:.3e}, feasibility {feas:.3e}, kernel orthogonality {orth:.3e}"),
    )
}

fn weight_forms() -> Outcome {
    let mut rng = rng_from_seed(505);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n1 = rng.random_range(2..=12);
        let n2 = rng.random_range(2..=12);
        let x = normal_matrix(&mut rng, n1, n2);
        let eps = sigma1(&x) * log_uniform(&mut rng, -3.0, 0.3);
        let z = normal_matrix(&mut rng, n1, n2);
        let ws = WeightState::build(&x, eps, f64::INFINITY).unwrap();
        let oracle = hadamard_weight_oracle(&x, eps, &z);
        worst = worst.max((ws.apply_lr(&z) - oracle).norm() / z.norm());
    }
    outcome(worst <= 1e-10, format!("max relative difference {worst:.3e} over 50 tuples"))
}

fn quadratic_rate() -> Outcome {
    let (n1, n2, r, s) = (64, 16, 2, 8);
    let m = 3 * degrees_of_freedom(r, s, n2);
    let start = Instant::now();
    let mut good = 0;
    let mut mus = Vec::new();
    for seed in 0..10u64 {
        let gt = generate_ground_truth(n1, n2, r, s, derive_seed(606, &[seed, 0])).unwrap();
        let op = gaussian_dense(n1, n2, m, derive_seed(606, &[seed, 1])).unwrap();
        let y = op.apply(&gt.x).unwrap();
        let res = run_irls(&op, &y, &IrlsConfig::new(r, s), Some(&gt.x)).unwrap();
        let errors = res.trace.errors();
        let fit = fit_quadratic_rate(&errors, 3);
        let final_err = res.final_error().unwrap();
        if let (Some(f), true) = (fit, final_err < 1e-10) {
            good += 1;
            mus.push(f.mu_hat);
        }
    }
    let desk_time = start.elapsed();

    let start = Instant::now();
    let (n1, n2, r, s, m) = (256, 40, 5, 40, 1125);
    let gt = generate_ground_truth(n1, n2, r, s, derive_seed(607, &[0])).unwrap();
    let op = gaussian_dense(n1, n2, m, derive_seed(607, &[1])).unwrap();
    let y = op.apply(&gt.x).unwrap();
    let cfg = IrlsConfig { max_iter: 20, ..IrlsConfig::new(r, s) };
    let res = run_irls(&op, &y, &cfg, Some(&gt.x)).unwrap();
    let errors = res.trace.errors();
    let reached = errors.iter().position(|&e| e < 1e-11).map(|k| k + 1);
    let large_time = start.elapsed();

    let pass = good >= 8 && desk_time < Duration::from_secs(60) && reached.is_some() && large_time < Duration::from_secs(1800);
    let mu_range = mus.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &m| (lo.min(m), hi.max(m)));
    outcome(
        pass,
        format!(
            "desk: {good}/10 quadratic (mu in [{:.2}, {:.2}]) in {:.1}s; 256x40: error {:.2e} at iteration {} in {:.1}s",
            mu_range.0,
            mu_range.1,
            desk_time.as_secs_f64(),
            errors.iter().copied().fold(f64::INFINITY, f64::min),
            reached.map_or("none".into(), |k| k.to_string()),
            large_time.as_secs_f64()
        ),
    )
}

fn grid_manifest(r: usize, model_order: ModelOrder) -> ExperimentManifest {
    ExperimentManifest {
        experiment: ExperimentKind::PhaseGrid,
        n1: 64,
        n2: 16,
        r,
        algorithms: vec![Algorithm::Irls, Algorithm::Iht],
        measurement: MeasurementKind::DenseGaussian,
        s_values: vec![4, 8, 12],
        m_values: None,
        oversampling: Some(vec![1.0, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5, 3.0, 3.5, 4.0]),
        model_order,
        trials: 16,
        base_seed: 7,
        success_threshold: 1e-4,
        output_dir: None,
        record_timing: false,
        irls_max_iter: None,
        iht_max_iter: None,
    }
}

fn minimal_m(grid: &GridOutput, s: usize) -> Option<usize> {
    grid.cells.iter().filter(|c| c.s == s && c.success_rate() >= 0.9).map(|c| c.m).min()
}

fn mean_rate(grid: &GridOutput) -> f64 {
    grid.cells.iter().map(|c| c.success_rate()).sum::<f64>() / grid.cells.len() as f64
}

fn phase_transitions() -> (Outcome, Outcome) {
    let mut dominance = true;
    let mut within_limit = true;
    let mut lines = Vec::new();
    let mut drops = Vec::new();
    for r in [1, 2] {
        let exact = run_phase_grid(&grid_manifest(r, ModelOrder::Exact), &[Algorithm::Irls, Algorithm::Iht]);
        let over = run_phase_grid(&grid_manifest(r, ModelOrder::Overestimate), &[Algorithm::Irls, Algorithm::Iht]);
        for s in [4, 8, 12] {
            let limit = 2.5 * degrees_of_freedom(r, s, 16) as f64;
            let irls = minimal_m(&exact[0], s);
            let iht = minimal_m(&exact[1], s);
            dominance &= match (irls, iht) {
                (Some(a), Some(b)) => a <= b,
                (Some(_), None) => true,
                (None, _) => false,
            };
            within_limit &= irls.is_some_and(|m| m as f64 <= limit);
            lines.push(format!(
                "r={r} s={s}: irls {} iht {}",
                irls.map_or("-".into(), |m| m.to_string()),
                iht.map_or("-".into(), |m| m.to_string())
            ));
        }
        let irls_drop = mean_rate(&exact[0]) - mean_rate(&over[0]);
        let iht_drop = mean_rate(&exact[1]) - mean_rate(&over[1]);
        drops.push((r, irls_drop, iht_drop));
    }
    let c7 = outcome(
        dominance && within_limit,
        format!("minimal m with >= 90% success: {}", lines.join("; ")),
    );
    let c8 = outcome(
        drops.iter().all(|&(_, a, b)| a < b),
        drops
            .iter()
            .map(|(r, a, b)| format!("r={r}: irls drop {a:.3}, iht drop {b:.3}"))
            .collect::<Vec<_>>()
            .join("; "),
    );
    (c7, c8)
}

fn undersampled_parsimony() -> Outcome {
    let (n2, r, s) = (16, 2, 8);
    let m = degrees_of_freedom(r, s, n2);
    let manifest = ExperimentManifest {
        experiment: ExperimentKind::ObjectiveEvolution,
        m_values: Some(vec![m]),
        oversampling: None,
        s_values: vec![s],
        base_seed: 909,
        ..grid_manifest(r, ModelOrder::Exact)
    };
    let mut good = 0;
    let mut details = Vec::new();
    for trial in 0..10 {
        let inst = build_instance(&manifest, s, m, trial).unwrap();
        let res = run_irls(&inst.op, &inst.y, &IrlsConfig::new(r, s), Some(&inst.x_star)).unwrap();
        let x = &res.x_final;
        let feas = (inst.op.apply(x).unwrap() - &inst.y).norm() / inst.y.norm();
        let rank = SvdFactors::compute(x).numeric_rank(1e-6);
        let rows = irls_core::matrix::row_support(x, 1e-6).len();
        if feas <= 1e-8 && rank <= r + 2 && rows <= s + 2 {
            good += 1;
        }
        details.push(format!("({rank},{rows})"));
    }
    outcome(good >= 5, format!("{good}/10 parsimonious and feasible; (rank, rows): {}", details.join(" ")))
}

fn rip_sanity() -> Outcome {
    let (n1, n2) = (6, 5);
    let identity = MeasurementOperator::from_dense(DMatrix::identity(n1 * n2, n1 * n2), n1, n2).unwrap();
    let ident_est = rip_probe(&identity, 2, 4, 50, 1010).unwrap();
    let (n1, n2, r, s) = (32, 8, 1, 4);
    let m = 6 * r * (s + n2);
    let mut worst: f64 = 0.0;
    for draw in 0..20u64 {
        let op = gaussian_dense(n1, n2, m, derive_seed(1011, &[draw])).unwrap();
        worst = worst.max(rip_probe(&op, r, s, 50, derive_seed(1012, &[draw])).unwrap());
    }
    outcome(ident_est < 1e-10 && worst < 1.0, format!("identity {ident_est:.3e}; Gaussian m={m} worst {worst:.3}"))
}

fn print(n: usize, name: &str, mut o: Outcome, elapsed: Duration, limit: Option<Duration>) -> bool {
    if let Some(limit) = limit {
        if elapsed >= limit {
            o.pass = false;
            o.detail += &format!("; exceeded {}s budget", limit.as_secs());
        }
    }
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    println!("criterion {n:>2} {name:<28} {verdict} [{:.1}s] {}", elapsed.as_secs_f64(), o.detail);
    o.pass
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn main() {
    let secs = Duration::from_secs;
    let mut passed = Vec::new();
    let (o, t) = timed(majorization);
    passed.push(print(1, "majorization", o, t, Some(secs(10))));
    let (o, t) = timed(monotonicity);
    passed.push(print(2, "monotonicity", o, t, Some(secs(120))));
    let (o, t) = timed(gradient_identities);
    passed.push(print(3, "gradient identities", o, t, None));
    let (o, t) = timed(wls_optimality);
    passed.push(print(4, "wls optimality", o, t, Some(secs(30))));
    let (o, t) = timed(weight_forms);
    passed.push(print(5, "weight-form equivalence", o, t, None));
    let (o, t) = timed(quadratic_rate);
    passed.push(print(6, "quadratic rate", o, t, None));
    // both criteria come from the same grids
    let ((c7, c8), t) = timed(phase_transitions);
    passed.push(print(7, "phase-transition dominance", c7, t, Some(secs(3600))));
    passed.push(print(8, "robust misparameterization", c8, t, None));
    let (o, t) = timed(undersampled_parsimony);
    passed.push(print(9, "under-sampled parsimony", o, t, None));
    let (o, t) = timed(rip_sanity);
    passed.push(print(10, "rip probe sanity", o, t, None));

    let failed = passed.iter().filter(|p| !**p).count();
    if failed > 0 {
        println!("{failed} of {} criteria failed", passed.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", passed.len());
}
