//! The local covariance measure test.
//!
//! For held-out trajectories with filter outputs Π̂ and μ̂:
//!
//! ```text
//! Ĝ_k  = X_α(kδ) − Π̂_k
//! γ̂_k  = (1/N) Σ_j Σ_{l≤k} Ĝ_{j,l−1} {ΔX_{β,j,l} − δ μ̂_{j,l−1}}
//! V̂_k  = ‖Σ̂_β‖² (1/N) Σ_j Σ_{l≤k} Ĝ²_{j,l−1} δ
//! T̂    = √N max_k |γ̂_k| / √V̂_T
//! ```
//!
//! Under the null `√N γ̂/√V̂_T` behaves like a Brownian motion on `[0, T]`
//! and the p-value is `1 − F_S(T̂)` with `F_S` the law of `sup_{t≤T} |W_t|`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};
use crate::filter::{OptimalFilter, QuerySpec};
use crate::matcore::{self, Matrix};
use crate::ouest::{self, EstimatedOUModel, EstimationConfig};
use crate::par;
use crate::rng;
use crate::sdesim::{TimeGrid, TrajectorySet};

/// `V̂_T` at or below this is treated as degenerate (p = 1, flagged).
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

const SERIES_TOL: f64 = 1e-16;
const QUANTILE_TOL: f64 = 1e-10;

fn check_paths(paths: &[Vec<f64>], n: usize, name: &str, grid: &TimeGrid) -> Result<()> {
    if paths.len() != n {
        return Err(Error::Shape(format!("{name}: expected {n} paths, got {}", paths.len())));
    }
    if let Some(p) = paths.iter().find(|p| p.len() != grid.n_points()) {
        return Err(Error::Shape(format!(
            "{name}: path of length {} on a grid of {} points",
            p.len(),
            grid.n_points()
        )));
    }
    Ok(())
}

fn check_eval(data: &TrajectorySet, eval: &[usize]) -> Result<()> {
    if eval.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    if let Some(&j) = eval.iter().find(|&&j| j >= data.n_traj()) {
        return Err(Error::InvalidArgument(format!(
            "trajectory {j} out of range for {} trajectories",
            data.n_traj()
        )));
    }
    Ok(())
}

/// Additive residuals `Ĝ_j = X_{α,j} − Π̂_j` for the trajectories in `eval`.
pub fn residuals(data: &TrajectorySet, eval: &[usize], pi_hat: &[Vec<f64>], alpha: usize) -> Result<Vec<Vec<f64>>> {
    check_eval(data, eval)?;
    check_paths(pi_hat, eval.len(), "pi_hat", data.grid())?;
    if alpha >= data.dim() {
        return Err(Error::InvalidArgument(format!("alpha {alpha} out of range")));
    }
    Ok(eval
        .iter()
        .zip(pi_hat)
        .map(|(&j, pi)| pi.iter().enumerate().map(|(k, p)| data.value(j, k, alpha) - p).collect())
        .collect())
}

/// Averages per-trajectory cumulative paths in trajectory order.
fn average_cumulative<F>(n_paths: usize, n_points: usize, increment: F) -> Vec<f64>
where
    F: Fn(usize, usize) -> f64 + Sync + Send,
{
    let per_traj = par::map_range(n_paths, |j| {
        let mut acc = 0.0;
        let mut out = vec![0.0; n_points];
        for l in 1..n_points {
            acc += increment(j, l);
            out[l] = acc;
        }
        out
    });
    let mut total = vec![0.0; n_points];
    for path in &per_traj {
        for (t, v) in total.iter_mut().zip(path) {
            *t += v;
        }
    }
    let scale = 1.0 / n_paths as f64;
    total.iter_mut().for_each(|v| *v *= scale);
    total
}

/// The LCM path `γ̂` on every grid point (`γ̂_0 = 0`).
///
/// The martingale increments come from `X_β`:
/// `ΔM̂_l = X_β(lδ) − X_β((l−1)δ) − δ μ̂_{l−1}`.
pub fn compute_lcm(
    data: &TrajectorySet,
    eval: &[usize],
    pi_hat: &[Vec<f64>],
    mu_hat: &[Vec<f64>],
    query: &QuerySpec,
) -> Result<Vec<f64>> {
    query.validate(data.dim())?;
    let g = residuals(data, eval, pi_hat, query.alpha)?;
    check_paths(mu_hat, eval.len(), "mu_hat", data.grid())?;
    Ok(lcm_from_residuals(data, eval, &g, mu_hat, query.beta))
}

fn lcm_from_residuals(
    data: &TrajectorySet,
    eval: &[usize],
    g: &[Vec<f64>],
    mu_hat: &[Vec<f64>],
    beta: usize,
) -> Vec<f64> {
    let delta = data.grid().delta();
    average_cumulative(eval.len(), data.grid().n_points(), |i, l| {
        let j = eval[i];
        let dm = data.value(j, l, beta) - data.value(j, l - 1, beta) - delta * mu_hat[i][l - 1];
        g[i][l - 1] * dm
    })
}

/// Plug-in variance path `V̂` given the row `Σ̂_β` of a diffusion factor.
pub fn compute_variance(diffusion_row: &[f64], g_hat: &[Vec<f64>], grid: &TimeGrid) -> Result<Vec<f64>> {
    if g_hat.is_empty() {
        return Err(Error::InvalidArgument("no residual paths".into()));
    }
    check_paths(g_hat, g_hat.len(), "g_hat", grid)?;
    let norm_sq: f64 = diffusion_row.iter().map(|v| v * v).sum();
    let delta = grid.delta();
    let mut v = average_cumulative(g_hat.len(), grid.n_points(), |j, l| g_hat[j][l - 1].powi(2) * delta);
    v.iter_mut().for_each(|x| *x *= norm_sq);
    Ok(v)
}

/// Row `β` of the symmetric PSD square root of a diffusion covariance.
pub fn diffusion_row(sigma_cov: &Matrix, beta: usize) -> Result<Vec<f64>> {
    let root = matcore::sym_sqrt_psd(sigma_cov)?;
    if beta >= root.nrows() {
        return Err(Error::InvalidArgument(format!("beta {beta} out of range")));
    }
    Ok(root.row(beta).iter().cloned().collect())
}

/// `F_S(x) = P(sup_{t≤T} |W_t| ≤ x)`.
pub fn sup_brownian_cdf(x: f64, horizon: f64) -> f64 {
    assert!(horizon > 0.0, "horizon must be positive");
    if x <= 0.0 || x.is_nan() {
        return 0.0;
    }
    let a = x / horizon.sqrt();
    if a >= 1.5 {
        return (1.0 - reflection_tail(a)).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    let c = std::f64::consts::PI.powi(2) * horizon / (8.0 * x * x);
    let mut i = 0u32;
    loop {
        let m = (2 * i + 1) as f64;
        let term = (-c * m * m).exp() / m;
        if term < SERIES_TOL {
            break;
        }
        sum += if i % 2 == 0 { term } else { -term };
        i += 1;
    }
    (4.0 / std::f64::consts::PI * sum).clamp(0.0, 1.0)
}

/// `1 − F_S(x)`, accurate in the upper tail.
pub fn sup_brownian_sf(x: f64, horizon: f64) -> f64 {
    assert!(horizon > 0.0, "horizon must be positive");
    if x <= 0.0 || x.is_nan() {
        return 1.0;
    }
    let a = x / horizon.sqrt();
    if a >= 1.5 {
        reflection_tail(a).clamp(0.0, 1.0)
    } else {
        1.0 - sup_brownian_cdf(x, horizon)
    }
}

/// `2 Σ_j (−1)^j erfc((2j+1) a / √2)`, the reflection-principle form of the
/// tail; converges quickly when `a` is not small.
fn reflection_tail(a: f64) -> f64 {
    let mut sum = 0.0;
    let mut j = 0u32;
    loop {
        let term = erfc((2 * j + 1) as f64 * a / std::f64::consts::SQRT_2);
        if term < SERIES_TOL {
            break;
        }
        sum += if j % 2 == 0 { term } else { -term };
        j += 1;
    }
    2.0 * sum
}

/// `z` with `F_S(z) = level`, by bisection.
pub fn sup_brownian_quantile(level: f64, horizon: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level must be in (0, 1), got {level}")));
    }
    if !(horizon > 0.0) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let mut lo = 0.0;
    let mut hi = horizon.sqrt();
    while sup_brownian_cdf(hi, horizon) < level {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-14 * hi {
        let mid = 0.5 * (lo + hi);
        if sup_brownian_cdf(mid, horizon) < level {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let z = 0.5 * (lo + hi);
    debug_assert!((sup_brownian_cdf(z, horizon) - level).abs() <= QUANTILE_TOL);
    Ok(z)
}

/// Disjoint folds built by a seeded shuffle followed by round-robin
/// assignment. Fold indices are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPartition {
    assignments: Vec<usize>,
    k: usize,
}

impl FoldPartition {
    pub fn new(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidArgument(format!("cross-fitting needs K >= 2, got {k}")));
        }
        if n < 2 * k {
            return Err(Error::InvalidArgument(format!("K = {k} needs at least {} trajectories, got {n}", 2 * k)));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(seed, 0));
        let mut assignments = vec![0; n];
        for (pos, &j) in order.iter().enumerate() {
            assignments[j] = pos % k;
        }
        Ok(Self { assignments, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    pub fn fold_of(&self, j: usize) -> usize {
        self.assignments[j]
    }

    /// Members of fold `f`, ascending.
    pub fn fold(&self, f: usize) -> Vec<usize> {
        (0..self.n()).filter(|&j| self.assignments[j] == f).collect()
    }

    /// Everything outside fold `f`, ascending.
    pub fn complement(&self, f: usize) -> Vec<usize> {
        (0..self.n()).filter(|&j| self.assignments[j] != f).collect()
    }
}

/// Per-fold (or single-split) diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldDiagnostics {
    pub n_train: usize,
    pub n_eval: usize,
    pub variance_t: f64,
    pub sup_gamma: f64,
    pub phi_beta_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub query: QuerySpec,
    pub gamma_path: Vec<f64>,
    pub variance_t: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub degenerate_variance: bool,
    pub level: f64,
    pub rejected: bool,
    /// Number of trajectories the statistic is normalized by.
    pub n_eval: usize,
    /// `Φ̃_{βα}` averaged over folds; reported, never used for decisions.
    pub phi_beta_alpha: f64,
    pub per_fold: Vec<FoldDiagnostics>,
}

/// γ̂ and V̂ paths from one evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitStatistics {
    pub gamma: Vec<f64>,
    pub variance: Vec<f64>,
    pub n_eval: usize,
}

impl SplitStatistics {
    pub fn variance_t(&self) -> f64 {
        *self.variance.last().expect("grid has at least two points")
    }

    pub fn sup_gamma(&self) -> f64 {
        self.gamma.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Runs the filter under drift `phi` on the `eval` trajectories and computes
/// γ̂ and V̂ with diffusion covariance `sigma_cov`.
pub fn evaluate_split(
    data: &TrajectorySet,
    eval: &[usize],
    query: &QuerySpec,
    phi: &Matrix,
    sigma_cov: &Matrix,
) -> Result<SplitStatistics> {
    check_eval(data, eval)?;
    query.validate(data.dim())?;
    let filter = OptimalFilter::new(phi, query, data.grid())?;
    let out = filter.run_all(data, eval)?;
    let (pi, mu): (Vec<_>, Vec<_>) = out.paths.into_iter().map(|p| (p.pi_hat, p.mu_hat)).unzip();
    let g = residuals(data, eval, &pi, query.alpha)?;
    let gamma = lcm_from_residuals(data, eval, &g, &mu, query.beta);
    let variance = compute_variance(&diffusion_row(sigma_cov, query.beta)?, &g, data.grid())?;
    Ok(SplitStatistics {
        gamma,
        variance,
        n_eval: eval.len(),
    })
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("level must be in (0, 1), got {level}")))
    }
}

/// Turns `(γ̂, V̂_T, N)` into a statistic and p-value.
fn finish(
    query: &QuerySpec,
    gamma_path: Vec<f64>,
    variance_t: f64,
    n_eval: usize,
    horizon: f64,
    level: f64,
    per_fold: Vec<FoldDiagnostics>,
) -> TestResult {
    let sup = gamma_path.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let degenerate = !(variance_t > DEGENERATE_VARIANCE);
    let (statistic, p_value) = if degenerate {
        (0.0, 1.0)
    } else {
        let s = (n_eval as f64).sqrt() * sup / variance_t.sqrt();
        (s, sup_brownian_sf(s, horizon))
    };
    let phi_beta_alpha = if per_fold.is_empty() {
        0.0
    } else {
        per_fold.iter().map(|f| f.phi_beta_alpha).sum::<f64>() / per_fold.len() as f64
    };
    TestResult {
        query: query.clone(),
        gamma_path,
        variance_t,
        statistic,
        p_value,
        degenerate_variance: degenerate,
        level,
        rejected: p_value < level,
        n_eval,
        phi_beta_alpha,
        per_fold,
    }
}

/// Single-split test with a given drift and diffusion covariance (no fitting).
pub fn run_test_with_model(
    data: &TrajectorySet,
    query: &QuerySpec,
    eval: &[usize],
    phi: &Matrix,
    sigma_cov: &Matrix,
    level: f64,
) -> Result<TestResult> {
    check_level(level)?;
    let stats = evaluate_split(data, eval, query, phi, sigma_cov)?;
    let diag = FoldDiagnostics {
        n_train: 0,
        n_eval: eval.len(),
        variance_t: stats.variance_t(),
        sup_gamma: stats.sup_gamma(),
        phi_beta_alpha: phi[(query.beta, query.alpha)],
    };
    let v = stats.variance_t();
    Ok(finish(query, stats.gamma, v, eval.len(), data.grid().horizon(), level, vec![diag]))
}

/// Single-split test: fit on `train`, evaluate on `eval`.
pub fn run_test(
    data: &TrajectorySet,
    query: &QuerySpec,
    train: &[usize],
    eval: &[usize],
    config: &EstimationConfig,
    level: f64,
) -> Result<TestResult> {
    check_level(level)?;
    check_eval(data, train)?;
    check_eval(data, eval)?;
    let mut seen = vec![false; data.n_traj()];
    train.iter().for_each(|&j| seen[j] = true);
    if eval.iter().any(|&j| seen[j]) {
        return Err(Error::InvalidArgument("train and eval sets overlap".into()));
    }
    let model = ouest::fit(&data.select(train), config)?;
    let mut result = run_test_with_model(data, query, eval, &model.phi_tilde, &model.sigma_hat, level)?;
    result.per_fold[0].n_train = train.len();
    Ok(result)
}

/// K fold-wise models, fitted once and reusable across queries.
#[derive(Debug, Clone)]
pub struct CrossFit {
    partition: FoldPartition,
    models: Vec<EstimatedOUModel>,
}

impl CrossFit {
    /// Fits one model per fold on the fold's complement.
    pub fn fit(data: &TrajectorySet, k: usize, config: &EstimationConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let partition = FoldPartition::new(data.n_traj(), k, seed)?;
        let models = par::try_map_range(k, |f| ouest::fit(&data.select(&partition.complement(f)), config))?;
        Ok(Self { partition, models })
    }

    pub fn partition(&self) -> &FoldPartition {
        &self.partition
    }

    pub fn models(&self) -> &[EstimatedOUModel] {
        &self.models
    }

    /// Cross-fitted test: `γ̂_K` and `V̂_K(T)` are fold averages and
    /// `T̂_K = √(N₀/V̂_K(T)) max |γ̂_K|`.
    pub fn test(&self, data: &TrajectorySet, query: &QuerySpec, level: f64) -> Result<TestResult> {
        check_level(level)?;
        if data.n_traj() != self.partition.n() {
            return Err(Error::Shape("data does not match the fold partition".into()));
        }
        let k = self.partition.k();
        let folds = par::try_map_range(k, |f| {
            let eval = self.partition.fold(f);
            let m = &self.models[f];
            evaluate_split(data, &eval, query, &m.phi_tilde, &m.sigma_hat)
        })?;
        let n_points = data.grid().n_points();
        let mut gamma = vec![0.0; n_points];
        let mut variance_t = 0.0;
        let mut per_fold = Vec::with_capacity(k);
        for (f, s) in folds.iter().enumerate() {
            for (acc, v) in gamma.iter_mut().zip(&s.gamma) {
                *acc += v / k as f64;
            }
            variance_t += s.variance_t() / k as f64;
            per_fold.push(FoldDiagnostics {
                n_train: data.n_traj() - s.n_eval,
                n_eval: s.n_eval,
                variance_t: s.variance_t(),
                sup_gamma: s.sup_gamma(),
                phi_beta_alpha: self.models[f].phi_tilde[(query.beta, query.alpha)],
            });
        }
        Ok(finish(query, gamma, variance_t, data.n_traj(), data.grid().horizon(), level, per_fold))
    }
}

/// K-fold cross-fitted test.
pub fn run_crossfit_test(
    data: &TrajectorySet,
    query: &QuerySpec,
    k: usize,
    config: &EstimationConfig,
    level: f64,
    seed: u64,
) -> Result<TestResult> {
    check_level(level)?;
    query.validate(data.dim())?;
    CrossFit::fit(data, k, config, seed)?.test(data, query, level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdesim::{simulate_ou, OUModel};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(0.01, n).unwrap()
    }

    fn set_from(paths: &[Vec<[f64; 2]>], g: TimeGrid) -> TrajectorySet {
        let values = paths.iter().flat_map(|p| p.iter().flat_map(|s| s.iter().cloned())).collect();
        TrajectorySet::new(g, 2, paths.len(), values).unwrap()
    }

    #[test]
    fn zero_residual_gives_zero_path() {
        let g = grid(20);
        let m = OUModel::new(Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.5, 0.0]), 1.0).unwrap();
        let data = simulate_ou(&m, g, 4, 3).unwrap();
        let eval = [0, 1, 2, 3];
        let pi: Vec<Vec<f64>> = eval.iter().map(|&j| (0..21).map(|k| data.value(j, k, 0)).collect()).collect();
        let mu = vec![vec![0.7; 21]; 4];
        let q = QuerySpec::new(0, 1, vec![1]);
        let gamma = compute_lcm(&data, &eval, &pi, &mu, &q).unwrap();
        assert!(gamma.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_two_step_path() {
        // X_α = 0 so Ĝ = −Π̂; choose Π̂ = (−2, 3, ·) giving Ĝ_0 = 2, Ĝ_1 = −3.
        let g = grid(2);
        let data = set_from(&[vec![[0.0, 1.0], [0.0, 1.3], [0.0, 1.2]]], g);
        let q = QuerySpec::new(0, 1, vec![1]);
        let pi = vec![vec![-2.0, 3.0, 0.0]];
        let mu = vec![vec![0.0; 3]];
        let gamma = compute_lcm(&data, &[0], &pi, &mu, &q).unwrap();
        let want = [0.0, 0.6, 0.6 + (-3.0) * (-0.1)];
        for (a, b) in gamma.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{gamma:?}");
        }
    }

    #[test]
    fn lcm_uses_beta_increments() {
        // X_α ≡ 1 and Π̂ ≡ 0 so Ĝ ≡ 1: γ̂ accumulates ΔX_β − δμ̂.
        let g = grid(2);
        let q = QuerySpec::new(0, 1, vec![1]);
        let pi = vec![vec![0.0; 3]];
        let mu = vec![vec![1.0; 3]];
        let a = set_from(&[vec![[1.0, 0.0], [1.0, 0.5], [1.0, 0.5]]], g);
        let gamma = compute_lcm(&a, &[0], &pi, &mu, &q).unwrap();
        assert!((gamma[1] - (0.5 - 0.01)).abs() < 1e-12);
        assert!((gamma[2] - (0.5 - 0.01 - 0.01)).abs() < 1e-12);
    }

    #[test]
    fn lcm_brute_force_and_telescoping() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = grid(30);
        let n = 7;
        let paths: Vec<Vec<[f64; 2]>> = (0..n)
            .map(|_| (0..31).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect())
            .collect();
        let data = set_from(&paths, g);
        let eval: Vec<usize> = (0..n).collect();
        let pi: Vec<Vec<f64>> = (0..n).map(|_| (0..31).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mu: Vec<Vec<f64>> = (0..n).map(|_| (0..31).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let q = QuerySpec::new(0, 1, vec![1]);
        let gamma = compute_lcm(&data, &eval, &pi, &mu, &q).unwrap();
        for k in 0..31 {
            let mut want = 0.0;
            for j in 0..n {
                for l in 1..=k {
                    let gres = paths[j][l - 1][0] - pi[j][l - 1];
                    want += gres * (paths[j][l][1] - paths[j][l - 1][1] - 0.01 * mu[j][l - 1]);
                }
            }
            assert!((gamma[k] - want / n as f64).abs() < 1e-12);
        }
        for k in 1..31 {
            let inc: f64 = (0..n)
                .map(|j| (paths[j][k - 1][0] - pi[j][k - 1]) * (paths[j][k][1] - paths[j][k - 1][1] - 0.01 * mu[j][k - 1]))
                .sum::<f64>()
                / n as f64;
            assert!((gamma[k] - gamma[k - 1] - inc).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_cases() {
        let g = grid(100);
        let zero = compute_variance(&[1.0], &[vec![0.0; 101]], &g).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let ones = compute_variance(&[1.0], &[vec![1.0; 101], vec![1.0; 101]], &g).unwrap();
        for (k, v) in ones.iter().enumerate() {
            assert!((v - g.time(k)).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let paths: Vec<Vec<f64>> = (0..9).map(|_| (0..101).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let row = [0.3, -1.2, 0.5];
        let v = compute_variance(&row, &paths, &g).unwrap();
        let mut want = 0.0;
        for p in &paths {
            for l in 0..100 {
                want += p[l] * p[l] * 0.01;
            }
        }
        want *= (0.09 + 1.44 + 0.25) / 9.0;
        assert!((v[100] - want).abs() < 1e-12);
        assert!(v.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn cdf_limits() {
        assert_eq!(sup_brownian_cdf(0.0, 1.0), 0.0);
        assert_eq!(sup_brownian_cdf(-1.0, 1.0), 0.0);
        assert!((sup_brownian_cdf(1e6, 1.0) - 1.0).abs() < 1e-12);
        assert!(sup_brownian_cdf(1e-3, 1.0) < 1e-300);
    }

    #[test]
    fn cdf_branches_agree() {
        // Theta series and reflection series are two expansions of one law.
        for i in 1..60 {
            let x = 0.8 + i as f64 * 0.05;
            let c = std::f64::consts::PI.powi(2) / (8.0 * x * x);
            let theta: f64 = (0..200)
                .map(|i| {
                    let m = (2 * i + 1) as f64;
                    (if i % 2 == 0 { 1.0 } else { -1.0 }) * (-c * m * m).exp() / m
                })
                .sum::<f64>()
                * 4.0
                / std::f64::consts::PI;
            assert!((theta - (1.0 - reflection_tail(x))).abs() < 1e-14, "x={x}");
        }
    }

    #[test]
    fn quantile_round_trip_and_scaling() {
        let z = sup_brownian_quantile(0.95, 1.0).unwrap();
        assert!((sup_brownian_cdf(z, 1.0) - 0.95).abs() < 1e-9);
        assert!((z - 2.2414).abs() < 1e-3, "{z}");
        for &t in &[0.25, 2.0, 7.5] {
            for &q in &[0.1, 0.5, 0.95, 0.999] {
                let zt = sup_brownian_quantile(q, t).unwrap();
                let z1 = sup_brownian_quantile(q, 1.0).unwrap();
                assert!((zt - t.sqrt() * z1).abs() < 1e-8);
            }
        }
        assert!(sup_brownian_quantile(0.0, 1.0).is_err());
        assert!(sup_brownian_quantile(1.0, 1.0).is_err());
    }

    #[test]
    fn cdf_matches_small_monte_carlo() {
        // Coarse unit-level check; the acceptance suite runs the full oracle.
        let n = 4000;
        let steps = 2000;
        let dt = 1.0 / steps as f64;
        let sups: Vec<f64> = par::map_range(n, |j| {
            let mut r = rng::stream(77, j as u64);
            let mut w: f64 = 0.0;
            let mut m: f64 = 0.0;
            for _ in 0..steps {
                w += dt.sqrt() * r.sample::<f64, _>(rand_distr::StandardNormal);
                m = m.max(w.abs());
            }
            m
        });
        for &x in &[0.8, 1.2, 1.6, 2.2414, 3.0] {
            let emp = sups.iter().filter(|&&s| s <= x).count() as f64 / n as f64;
            assert!((emp - sup_brownian_cdf(x, 1.0)).abs() < 0.035, "x={x} emp={emp}");
        }
    }

    #[test]
    fn folds_partition() {
        let p = FoldPartition::new(23, 4, 9).unwrap();
        let mut all: Vec<usize> = (0..4).flat_map(|f| p.fold(f)).collect();
        all.sort();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
        let sizes: Vec<usize> = (0..4).map(|f| p.fold(f).len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert_eq!(p, FoldPartition::new(23, 4, 9).unwrap());
        assert_ne!(p, FoldPartition::new(23, 4, 10).unwrap());
        assert!(FoldPartition::new(10, 1, 0).is_err());
        assert!(FoldPartition::new(7, 4, 0).is_err());
    }

    #[test]
    fn crossfit_rejects_k_one() {
        let m = OUModel::new(Matrix::zeros(2, 2), 1.0).unwrap();
        let data = simulate_ou(&m, grid(10), 20, 1).unwrap();
        let q = QuerySpec::new(0, 1, vec![1]);
        let r = run_crossfit_test(&data, &q, 1, &EstimationConfig::default(), 0.05, 0);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
        let r = run_crossfit_test(&data, &q, 11, &EstimationConfig::default(), 0.05, 0);
        assert!(r.is_err());
    }

    #[test]
    fn constant_paths_are_degenerate() {
        let g = grid(10);
        let data = TrajectorySet::new(g, 2, 6, vec![0.0; 6 * 11 * 2]).unwrap();
        let q = QuerySpec::new(0, 1, vec![1]);
        let r = run_test_with_model(&data, &q, &[0, 1, 2], &Matrix::zeros(2, 2), &Matrix::identity(2, 2), 0.05).unwrap();
        assert!(r.degenerate_variance);
        assert_eq!(r.p_value, 1.0);
        assert!(!r.rejected);
    }

    #[test]
    fn run_test_checks_split() {
        let m = OUModel::new(Matrix::zeros(2, 2), 1.0).unwrap();
        let data = simulate_ou(&m, grid(10), 12, 1).unwrap();
        let q = QuerySpec::new(0, 1, vec![1]);
        let cfg = EstimationConfig::default();
        assert!(run_test(&data, &q, &[0, 1, 2, 3, 4], &[4, 5], &cfg, 0.05).is_err());
        assert!(run_test(&data, &q, &[0, 1, 2, 3, 4], &[], &cfg, 0.05).is_err());
        assert!(run_test(&data, &q, &[0, 1, 2, 3, 4], &[5, 6], &cfg, 1.5).is_err());
        let r = run_test(&data, &q, &[0, 1, 2, 3, 4, 5], &[6, 7, 8, 9, 10, 11], &cfg, 0.05).unwrap();
        assert!((0.0..=1.0).contains(&r.p_value));
        assert_eq!(r.gamma_path.len(), 11);
    }

    #[test]
    fn scaling_invariance_idealized() {
        // Scale X, Ĝ, μ̂ by c and the diffusion row by c: γ̂ ∝ c², V̂ ∝ c⁴.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = grid(40);
        let n = 5;
        let paths: Vec<Vec<[f64; 2]>> = (0..n)
            .map(|_| (0..41).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect())
            .collect();
        let pi: Vec<Vec<f64>> = (0..n).map(|_| (0..41).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mu: Vec<Vec<f64>> = (0..n).map(|_| (0..41).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let eval: Vec<usize> = (0..n).collect();
        let q = QuerySpec::new(0, 1, vec![1]);
        let row = [0.8, 0.1];
        let stat = |c: f64| {
            let data = set_from(&paths, g).scaled(c);
            let pi: Vec<Vec<f64>> = pi.iter().map(|p| p.iter().map(|v| v * c).collect()).collect();
            let mu: Vec<Vec<f64>> = mu.iter().map(|p| p.iter().map(|v| v * c).collect()).collect();
            let gamma = compute_lcm(&data, &eval, &pi, &mu, &q).unwrap();
            let gres = residuals(&data, &eval, &pi, 0).unwrap();
            let rowc: Vec<f64> = row.iter().map(|v| v * c).collect();
            let v = compute_variance(&rowc, &gres, &g).unwrap();
            let sup = gamma.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            (gamma[40], v[40], (n as f64).sqrt() * sup / v[40].sqrt())
        };
        let (g1, v1, t1) = stat(1.0);
        let (g3, v3, t3) = stat(3.0);
        assert!((g3 - 9.0 * g1).abs() < 1e-12 * g3.abs().max(1.0));
        assert!((v3 - 81.0 * v1).abs() < 1e-10 * v3);
        assert!((t3 - t1).abs() < 1e-10 * t1);
    }

    #[test]
    fn diffusion_row_norm_is_diagonal_entry() {
        let s = Matrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 0.9]);
        for b in 0..3 {
            let r = diffusion_row(&s, b).unwrap();
            let n: f64 = r.iter().map(|v| v * v).sum();
            assert!((n - s[(b, b)]).abs() < 1e-12);
        }
    }

    #[test]
    fn crossfit_is_deterministic() {
        let phi = crate::sdesim::gen_random_phi(4, 0.3, 2.0, 2).unwrap();
        let m = OUModel::new(phi, 1.0).unwrap();
        let data = simulate_ou(&m, TimeGrid::with_horizon(0.01, 1.0).unwrap(), 60, 4).unwrap();
        let q = QuerySpec::pairwise(0, 1, 4);
        let cfg = EstimationConfig::default();
        let a = run_crossfit_test(&data, &q, 3, &cfg, 0.05, 8).unwrap();
        let b = run_crossfit_test(&data, &q, 3, &cfg, 0.05, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.per_fold.len(), 3);
        assert_eq!(a.per_fold.iter().map(|f| f.n_eval).sum::<usize>(), 60);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn p_value_monotone(a in 0.0f64..6.0, b in 0.0f64..6.0, t in 0.1f64..4.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(sup_brownian_sf(hi, t) <= sup_brownian_sf(lo, t) + 1e-15);
            let f = sup_brownian_cdf(a, t);
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert!((f + sup_brownian_sf(a, t) - 1.0).abs() < 1e-12);
        }
    }
}
