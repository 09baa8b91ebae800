//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line.
//!
//! `ACCEPTANCE_ONLY=3,5` runs a subset.

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use lcm_ito::experiment::{run_cell, ExperimentConfig};
use lcm_ito::filter::riccati::{RiccatiMethod, RiccatiSystem};
use lcm_ito::filter::{OptimalFilter, QuerySpec};
use lcm_ito::lcmtest::{run_test_with_model, sup_brownian_cdf, sup_brownian_quantile};
use lcm_ito::ligraph::{edge_scores, stability_report, DiscoveryConfig, LIGraph};
use lcm_ito::matcore::{spectral_norm, Matrix};
use lcm_ito::ouest::{fit, EstimationConfig};
use lcm_ito::rng::derive_seed;
use lcm_ito::sdesim::{gen_random_phi, simulate_ou, OUModel, TimeGrid, TrajectorySet};
use lcm_ito::{io, lcmtest, par};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn selected(id: u32) -> bool {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(list) => list.split(',').any(|s| s.trim() == id.to_string()),
        Err(_) => true,
    }
}

fn protocol(seed: u64) -> ExperimentConfig {
    ExperimentConfig { seed, ..Default::default() }
}

fn type_one_error() -> Outcome {
    let cfg = ExperimentConfig { n_traj: vec![250], effects: vec![0.0], n_phi: 5, reps_per_phi: 40, ..protocol(1) };
    let row = run_cell(&cfg, 250, 0.0).expect("experiment runs");
    let pass = (0.01..=0.12).contains(&row.pooled_rate) && row.failures == 0;
    outcome(
        pass,
        format!(
            "rate {:.3} over {} runs (per-drift {:?}, degenerate {}, failures {}); need [0.01, 0.12]",
            row.pooled_rate, row.runs, row.per_phi_rates, row.degenerate, row.failures
        ),
    )
}

fn power_curve() -> Outcome {
    let effects = [0.1, 0.2, 0.3];
    let cfg = ExperimentConfig { n_traj: vec![150], effects: effects.to_vec(), n_phi: 5, reps_per_phi: 40, ..protocol(1) };
    let rates: Vec<f64> = effects
        .iter()
        .map(|&e| run_cell(&cfg, 150, e).expect("experiment runs").pooled_rate)
        .collect();
    let monotone = rates.windows(2).all(|w| w[1] >= w[0]);
    outcome(
        monotone && rates[2] >= 0.9,
        format!("recall at 0.1/0.2/0.3 = {:.3}/{:.3}/{:.3}; need nondecreasing and >= 0.9 at 0.3", rates[0], rates[1], rates[2]),
    )
}

fn null_cdf() -> Outcome {
    let paths = 100_000usize;
    let steps = 10_000usize;
    let dt = 1.0 / steps as f64;
    let sd = dt.sqrt();
    let mut sups: Vec<f64> = par::map_range(paths, |j| {
        let mut r = ChaCha8Rng::seed_from_u64(derive_seed(0xB0B, j as u64));
        let (mut w, mut m) = (0.0f64, 0.0f64);
        for _ in 0..steps {
            let z: f64 = r.sample(StandardNormal);
            w += sd * z;
            m = m.max(w.abs());
        }
        m
    });
    sups.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let x = 0.5 + 3.5 * i as f64 / 49.0;
        let empirical = sups.partition_point(|&s| s <= x) as f64 / paths as f64;
        worst = worst.max((sup_brownian_cdf(x, 1.0) - empirical).abs());
    }
    let q = sup_brownian_quantile(0.95, 1.0).unwrap();
    outcome(
        worst <= 0.01 && (q - 2.2414).abs() <= 0.01,
        format!("max |F - MC| = {worst:.4} (need <= 0.01); q(0.95) = {q:.5} (need within 0.01 of 2.2414)"),
    )
}

fn riccati() -> Outcome {
    let grid = TimeGrid::new(1e-3, 1000).unwrap();
    let scalar = |a: f64, s: f64| RiccatiSystem::new(Matrix::from_element(1, 1, a), Matrix::from_element(1, 1, s)).unwrap();
    let lin = scalar(0.0, 0.0).solve(&Matrix::from_element(1, 1, 0.5), &grid, RiccatiMethod::RungeKutta4).unwrap();
    let th = scalar(0.0, 1.0).solve(&Matrix::zeros(1, 1), &grid, RiccatiMethod::RungeKutta4).unwrap();
    let mut err_a: f64 = 0.0;
    for k in 0..grid.n_points() {
        let t = grid.time(k);
        err_a = err_a.max((lin.y[k][(0, 0)] - (0.5 + t)).abs());
        err_a = err_a.max((th.y[k][(0, 0)] - t.tanh()).abs());
    }

    let mut r = ChaCha8Rng::seed_from_u64(44);
    let mut unif = |lo: f64, hi: f64| lo + (hi - lo) * r.random::<f64>();
    let mut worst_resid: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    let mut compared = 0;
    for _ in 0..20 {
        let a = Matrix::from_fn(2, 2, |_, _| unif(-1.5, 1.0));
        let b = Matrix::from_fn(2, 2, |_, _| unif(-1.0, 1.0));
        let l = Matrix::from_fn(2, 2, |i, j| if j <= i { unif(-0.7, 0.7) } else { 0.0 });
        let sys = RiccatiSystem::new(a, b.transpose() * &b).unwrap();
        let y0 = &l * l.transpose();
        let path = sys.solve(&y0, &grid, RiccatiMethod::RungeKutta4).unwrap();
        let h = grid.delta();
        for k in 1..grid.n_steps() {
            let fd = (&path.y[k + 1] - &path.y[k - 1]) / (2.0 * h);
            let rhs = sys.rhs(&path.y[k]);
            let rel = (&fd - &rhs).norm() / rhs.norm().max(1.0);
            worst_resid = worst_resid.max(rel);
        }
        if let Ok(closed) = sys.solve(&y0, &grid, RiccatiMethod::NegativeExponential) {
            compared += 1;
            for k in 0..grid.n_points() {
                worst_gap = worst_gap.max((&closed.y[k] - &path.y[k]).amax());
            }
        }
    }
    outcome(
        err_a <= 1e-6 && worst_resid <= 1e-4 && worst_gap <= 1e-6 && compared > 0,
        format!(
            "analytic err {err_a:.1e} (<= 1e-6); FD residual {worst_resid:.1e} (<= 1e-4); closed form vs RK4 {worst_gap:.1e} (<= 1e-6) on {compared}/20"
        ),
    )
}

/// `E[X_1(t_k) | X_2(t_0), ..., X_2(t_k)]` from the joint Gaussian law of the
/// Euler chain `X_{k+1} = (I + δΦ)X_k + σ√δ Z_k`, `X_0 ~ N(0, σ²Υ)`.
struct GaussianOracle {
    /// `weights[k]` maps `(X_2(t_0), ..., X_2(t_k))` to the conditional mean.
    weights: Vec<Vec<f64>>,
}

impl GaussianOracle {
    fn new(phi: &Matrix, sigma: f64, delta: f64, n: usize) -> Self {
        let d = 2;
        let ipm = Matrix::identity(d, d) - phi;
        let inv = ipm.clone().try_inverse().unwrap();
        let p0 = &inv * inv.transpose() * (sigma * sigma);
        let f = Matrix::identity(d, d) + phi * delta;
        let q = Matrix::identity(d, d) * (sigma * sigma * delta);
        // Marginal covariances P_k and lagged covariances Cov(X_k, X_j) = F^{k-j} P_j.
        let mut p = vec![p0];
        for k in 0..n {
            let next = &f * &p[k] * f.transpose() + &q;
            p.push(next);
        }
        let mut fpow = vec![Matrix::identity(d, d)];
        for k in 0..n {
            let next = &f * &fpow[k];
            fpow.push(next);
        }
        let cov = |k: usize, j: usize| -> Matrix {
            if k >= j {
                &fpow[k - j] * &p[j]
            } else {
                (&fpow[j - k] * &p[k]).transpose()
            }
        };
        let mut weights = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let obs = DMatrix::from_fn(k + 1, k + 1, |i, j| cov(i, j)[(1, 1)]);
            let cross = DMatrix::from_fn(1, k + 1, |_, j| cov(k, j)[(0, 1)]);
            let w = obs.cholesky().unwrap().solve(&cross.transpose());
            weights.push(w.iter().copied().collect());
        }
        Self { weights }
    }

    fn mean(&self, data: &TrajectorySet, j: usize, k: usize) -> f64 {
        self.weights[k].iter().enumerate().map(|(i, w)| w * data.value(j, i, 1)).sum()
    }
}

fn filter_error(phi: &Matrix, n: usize, horizon: f64, n_traj: usize) -> f64 {
    let grid = TimeGrid::new(horizon / n as f64, n).unwrap();
    let model = OUModel::new(phi.clone(), 1.0).unwrap();
    let data = simulate_ou(&model, grid, n_traj, 5).unwrap();
    let query = QuerySpec::pairwise(0, 1, 2);
    let filter = OptimalFilter::new(phi, &query, &grid).unwrap();
    let oracle = GaussianOracle::new(phi, 1.0, grid.delta(), n);
    let mut sq = 0.0;
    for j in 0..n_traj {
        let m = filter.run(&data, j).unwrap().m_hat;
        let worst = (0..=n).map(|k| (m[(k, 0)] - oracle.mean(&data, j, k)).abs()).fold(0.0, f64::max);
        sq += worst * worst;
    }
    (sq / n_traj as f64).sqrt()
}

fn filter_oracle() -> Outcome {
    let phi = Matrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.5, -0.5]);
    let coarse = filter_error(&phi, 25, 1.0, 400);
    let fine = filter_error(&phi, 50, 1.0, 400);
    let ratio = coarse / fine;
    outcome(
        (1.6..=2.5).contains(&ratio),
        format!("RMS max error {coarse:.2e} at n = 25, {fine:.2e} at n = 50; ratio {ratio:.2} (need [1.6, 2.5])"),
    )
}

fn estimator_consistency() -> Outcome {
    let cfg = ExperimentConfig { d: 5, ..protocol(3) };
    let sizes = [500usize, 5_000, 50_000];
    let strides = [36usize, 24, 16];
    let mut medians = Vec::new();
    for (&n_c, &stride) in sizes.iter().zip(&strides) {
        let mut errs: Vec<f64> = (0..20)
            .map(|r| {
                let phi = cfg.drift(r, 0.0).unwrap();
                let model = OUModel::new(phi.clone(), 1.0).unwrap();
                let grid = TimeGrid::new(0.01, stride).unwrap();
                let data = simulate_ou(&model, grid, n_c, derive_seed(9, r as u64)).unwrap();
                let est = EstimationConfig { stride, pool_lags: false, ..Default::default() };
                spectral_norm(&(fit(&data, &est).unwrap().phi_tilde - &phi))
            })
            .collect();
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        medians.push(0.5 * (errs[9] + errs[10]));
    }
    outcome(
        medians.windows(2).all(|w| w[1] < w[0]),
        format!(
            "median error {:.3}/{:.3}/{:.3} at N_c = 500/5000/50000 (delta_c = 0.36/0.24/0.16); need strictly decreasing",
            medians[0], medians[1], medians[2]
        ),
    )
}

fn grid_refinement() -> Outcome {
    let rate = |n0: usize, n_steps: usize| {
        let c = ExperimentConfig {
            n_traj: vec![n0],
            n_phi: 5,
            reps_per_phi: 20,
            grid: TimeGrid::new(1.0 / n_steps as f64, n_steps).unwrap(),
            ..protocol(12345)
        };
        run_cell(&c, n0, 0.0).unwrap().pooled_rate
    };
    let fixed: Vec<f64> = [100, 1_000, 10_000].iter().map(|&n0| rate(n0, 100)).collect();
    let refined = rate(10_000, 167);
    let drifts_up = fixed[2] > 0.05 && fixed[2] >= fixed[0];
    let recovers = (0.01..=0.12).contains(&refined);
    outcome(
        drifts_up && recovers,
        format!(
            "delta = 0.01: rate {:.3}/{:.3}/{:.3} at N0 = 1e2/1e3/1e4 (need drift above 0.05); delta = 1/167: rate {refined:.3} at N0 = 1e4 (need [0.01, 0.12])",
            fixed[0], fixed[1], fixed[2]
        ),
    )
}

fn martingale_null() -> Outcome {
    let cfg = protocol(21);
    let phi = cfg.drift(0, 0.0).unwrap();
    let model = OUModel::new(phi.clone(), 1.0).unwrap();
    let sigma_cov = Matrix::identity(10, 10);
    let query = cfg.query();
    let n0 = 50;
    let eval: Vec<usize> = (0..n0).collect();
    let gammas: Vec<f64> = par::map_range(500, |rep| {
        let data = simulate_ou(&model, cfg.grid, n0, derive_seed(31, rep as u64)).unwrap();
        let t = run_test_with_model(&data, &query, &eval, &phi, &sigma_cov, 0.05).unwrap();
        *t.gamma_path.last().unwrap()
    });
    let n = gammas.len() as f64;
    let mean = gammas.iter().sum::<f64>() / n;
    let var = gammas.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    outcome(
        mean.abs() <= 4.0 * se,
        format!("mean gamma_T = {mean:.2e}, SE = {se:.2e}, |mean|/SE = {:.2} (need <= 4)", mean.abs() / se),
    )
}

fn graph_discovery() -> Outcome {
    let cfg = protocol(2024);
    // Box-constrained drift with the tested entry left at its random draw.
    let mut phi = cfg.drift(0, 0.0).unwrap();
    phi[(cfg.beta, cfg.alpha)] = gen_random_phi(10, 0.3, 2.0, derive_seed(cfg.seed, 0)).unwrap()[(cfg.beta, cfg.alpha)];
    let model = OUModel::new(phi.clone(), 1.0).unwrap();
    let data = simulate_ou(&model, cfg.grid, 500, 77).unwrap();
    let truth = LIGraph::from_drift(&phi);
    let rep = stability_report(&data, 2, &DiscoveryConfig::default(), 1).unwrap();
    let s = edge_scores(&rep.graphs[0], &truth).unwrap();
    let shd = rep.max_shd();
    outcome(
        s.precision >= 0.8 && s.recall >= 0.8 && shd <= 3,
        format!(
            "{} true edges: precision {:.3}, recall {:.3} (need >= 0.8); SHD between fold seeds {shd} (need <= 3)",
            truth.n_edges(),
            s.precision,
            s.recall
        ),
    )
}

/// A sample of the operation examples, each checked exactly as stated.
fn pure_functions() -> Vec<(&'static str, bool)> {
    use lcm_ito::matcore::{kron, mat_exp, singular_values, solve, svd_clip};
    use lcm_ito::ouest::estimate_phi;
    let close = |a: &Matrix, b: &Matrix, tol: f64| (a - b).amax() <= tol;
    let mut checks = Vec::new();
    checks.push(("mat_exp(0) = I", close(&mat_exp(&Matrix::zeros(3, 3), 1.0).unwrap(), &Matrix::identity(3, 3), 0.0)));
    checks.push((
        "mat_exp scalar",
        (mat_exp(&Matrix::from_element(1, 1, -1.0), 0.1).unwrap()[(0, 0)] - (-0.1f64).exp()).abs() < 1e-14,
    ));
    checks.push((
        "mat_exp nilpotent",
        close(
            &mat_exp(&Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]), 1.0).unwrap(),
            &Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            1e-14,
        ),
    ));
    checks.push((
        "svd_clip diagonal",
        close(
            &svd_clip(&Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![5.0, 0.5])), 1.0, 3.0).unwrap(),
            &Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0])),
            1e-12,
        ),
    ));
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let a = Matrix::from_fn(4, 4, |_, _| r.sample::<f64, _>(StandardNormal));
    let s = singular_values(&svd_clip(&a, 0.5, 2.0).unwrap());
    checks.push(("svd_clip random 4x4", s.iter().all(|v| (0.5 - 1e-12..=2.0 + 1e-12).contains(v))));
    checks.push((
        "kron row by column",
        close(
            &kron(&Matrix::from_row_slice(1, 2, &[1.0, 2.0]), &Matrix::from_row_slice(2, 1, &[3.0, 4.0])).unwrap(),
            &Matrix::from_row_slice(2, 2, &[3.0, 6.0, 4.0, 8.0]),
            0.0,
        ),
    ));
    checks.push((
        "solve diagonal",
        close(
            &solve(&Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 4.0])), &Matrix::identity(2, 2)).unwrap(),
            &Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 0.25])),
            1e-15,
        ),
    ));
    checks.push(("gen_random_phi edge_prob 0", gen_random_phi(4, 0.0, 2.0, 3).unwrap() == Matrix::identity(4, 4) * 2.0));
    let still = simulate_ou(&OUModel::new(Matrix::zeros(2, 2), 0.0).unwrap(), TimeGrid::new(0.1, 5).unwrap(), 3, 1).unwrap();
    checks.push(("zero noise paths are zero", still.values().iter().all(|&v| v == 0.0)));
    let (tilde, bar) = estimate_phi(&Matrix::from_element(1, 1, (-0.1f64).exp()), 0.1, 10.0).unwrap();
    checks.push(("Cayley scalar", (bar[(0, 0)] + 0.999167).abs() < 1e-6 && close(&bar, &tilde, 1e-14)));
    let (clipped, _) = estimate_phi(&Matrix::zeros(1, 1), 0.1, 10.0).unwrap();
    checks.push(("clip to u", (clipped[(0, 0)] + 9.0).abs() < 1e-9));
    checks.push(("cdf at 0", sup_brownian_cdf(0.0, 1.0) == 0.0));
    checks.push(("cdf at infinity", (sup_brownian_cdf(1e6, 1.0) - 1.0).abs() < 1e-12));
    let flat = TrajectorySet::new(TimeGrid::new(0.1, 4).unwrap(), 2, 6, vec![0.0; 60]).unwrap();
    let deg = lcmtest::run_test_with_model(&flat, &QuerySpec::pairwise(0, 1, 2), &[0, 1, 2], &Matrix::zeros(2, 2), &Matrix::identity(2, 2), 0.05);
    checks.push(("constant paths are degenerate", deg.is_ok_and(|t| t.degenerate_variance && t.p_value == 1.0)));
    checks.push(("K = 1 rejected", lcmtest::FoldPartition::new(10, 1, 0).is_err()));
    checks.push(("d = 1 graph empty", LIGraph::empty(1).n_edges() == 0));
    let csv = "traj_id,t,x_1,x_2\n0,0,1,2\n0,0.5,1,2\n0,1,1,2\n1,0,1,2\n1,0.5,1,2\n1,1,1,2\n";
    checks.push((
        "csv shape echo",
        io::read_trajectories(csv.as_bytes()).is_ok_and(|d| d.n_traj() == 2 && d.grid().n_steps() == 2),
    ));
    checks
}

#[test]
fn acceptance() {
    let start = Instant::now();
    let mut failed = Vec::new();
    let mut timed_excluding_harness = Duration::ZERO;
    let mut report = |id: &str, name: &str, o: Outcome, took: Duration| {
        println!("criterion {id} [{}] {name}: {} ({:.1}s)", if o.pass { "PASS" } else { "FAIL" }, o.detail, took.as_secs_f64());
        if !o.pass {
            failed.push(id.to_string());
        }
    };

    let run = |f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        (o, t.elapsed())
    };

    if selected(1) {
        let (o, t) = run(&type_one_error);
        report("1", "type-I error at N0 = 250", o, t);
    }
    if selected(2) {
        let (o, t) = run(&power_curve);
        report("2", "recall versus effect size", o, t);
    }
    if selected(3) {
        let (o, t) = run(&null_cdf);
        timed_excluding_harness += t;
        report("3", "null CDF against Monte Carlo", o, t);
    }
    if selected(4) {
        let (o, t) = run(&riccati);
        timed_excluding_harness += t;
        report("4", "Riccati solvers", o, t);
    }
    if selected(5) {
        let (o, t) = run(&filter_oracle);
        timed_excluding_harness += t;
        report("5", "filter against Gaussian conditioning", o, t);
    }
    if selected(6) {
        let (o, t) = run(&estimator_consistency);
        timed_excluding_harness += t;
        report("6a", "estimator consistency trend", o, t);
        let (o, t) = run(&grid_refinement);
        timed_excluding_harness += t;
        report("6b", "grid refinement of type-I error", o, t);
    }
    if selected(7) {
        let (o, t) = run(&martingale_null);
        timed_excluding_harness += t;
        report("7", "martingale null property", o, t);
    }
    if selected(8) {
        let (o, t) = run(&graph_discovery);
        timed_excluding_harness += t;
        report("8", "graph discovery at d = 10, N0 = 500", o, t);
    }
    if selected(9) {
        let t0 = Instant::now();
        let checks = pure_functions();
        timed_excluding_harness += t0.elapsed();
        let bad: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
        let budget = Duration::from_secs(300);
        let o = outcome(
            bad.is_empty() && timed_excluding_harness < budget,
            format!(
                "{}/{} examples exact{}; criteria 3-9 took {:.0}s (need < 300s)",
                checks.len() - bad.len(),
                checks.len(),
                if bad.is_empty() { String::new() } else { format!(", failing: {bad:?}") },
                timed_excluding_harness.as_secs_f64()
            ),
        );
        report("9", "pure-function examples and runtime", o, t0.elapsed());
    }
    println!("acceptance finished in {:.0}s", start.elapsed().as_secs_f64());
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

