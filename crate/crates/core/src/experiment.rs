//! Type-I error and power over grids of sample size and effect size.
//!
//! Each cell `(N₀, Φ_{βα})` draws `n_phi` random drifts (sparse off-diagonal
//! entries, constant diagonal) with the tested entry overwritten, simulates
//! `reps_per_phi` data sets per drift and runs the test for `α ↛ β | V∖{α}`.
//! The drift replicate `r` uses the same random draw in every cell so only
//! the tested entry changes across the effect grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::QuerySpec;
use crate::lcmtest::{self, TestResult};
use crate::matcore::{singular_values, Matrix};
use crate::ouest::EstimationConfig;
use crate::par;
use crate::rng::derive_seed;
use crate::sdesim::{gen_random_phi, simulate_ou, OUModel, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub d: usize,
    pub n_traj: Vec<usize>,
    pub effects: Vec<f64>,
    pub n_phi: usize,
    pub reps_per_phi: usize,
    /// Folds for cross-fitting; `None` runs a single half/half split.
    pub folds: Option<usize>,
    pub level: f64,
    pub grid: TimeGrid,
    pub estimation: EstimationConfig,
    pub edge_prob: f64,
    pub diag: f64,
    pub sigma: f64,
    pub alpha: usize,
    pub beta: usize,
    /// Redraw drifts whose `I − Φ` has singular values outside `[1/u, u]`,
    /// the region the estimator clips into.
    pub identifiable_only: bool,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            d: 10,
            n_traj: vec![250],
            effects: vec![0.0],
            n_phi: 5,
            reps_per_phi: 40,
            folds: Some(3),
            level: 0.05,
            grid: TimeGrid::new(0.01, 100).expect("valid grid"),
            estimation: EstimationConfig::default(),
            edge_prob: 0.3,
            diag: 2.0,
            sigma: 1.0,
            alpha: 0,
            beta: 1,
            identifiable_only: true,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.d < 2 {
            return bad("experiment needs d >= 2");
        }
        if self.alpha >= self.d || self.beta >= self.d || self.alpha == self.beta {
            return bad("alpha and beta must be distinct coordinates");
        }
        if self.n_traj.is_empty() || self.effects.is_empty() {
            return bad("sample-size and effect grids must be nonempty");
        }
        if self.n_phi == 0 || self.reps_per_phi == 0 {
            return bad("n_phi and reps_per_phi must be positive");
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad("level must be in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.edge_prob) {
            return bad("edge_prob must be in [0, 1]");
        }
        self.estimation.validate()
    }

    pub fn query(&self) -> QuerySpec {
        QuerySpec::pairwise(self.alpha, self.beta, self.d)
    }

    /// Drift replicate `r` with `Φ_{βα} = effect`.
    ///
    /// With `identifiable_only`, draws are repeated (up to 100 times) until
    /// `I − Φ` stays inside the estimator's singular-value box for every
    /// effect in the grid, so replicate `r` is the same drift in all cells.
    pub fn drift(&self, r: usize, effect: f64) -> Result<Matrix> {
        let base_seed = derive_seed(self.seed, r as u64);
        for attempt in 0..100u64 {
            let seed = if attempt == 0 { base_seed } else { derive_seed(base_seed, attempt) };
            let mut phi = gen_random_phi(self.d, self.edge_prob, self.diag, seed)?;
            if self.identifiable_only && !self.effects.iter().chain([&0.0, &effect]).all(|&e| {
                phi[(self.beta, self.alpha)] = e;
                self.in_box(&phi)
            }) {
                continue;
            }
            phi[(self.beta, self.alpha)] = effect;
            return Ok(phi);
        }
        Err(Error::SingularDraws { attempts: 100 })
    }

    fn in_box(&self, phi: &Matrix) -> bool {
        let u = self.estimation.u;
        let s = singular_values(&(Matrix::identity(self.d, self.d) - phi));
        s.min() >= 1.0 / u && s.max() <= u
    }

    /// One repetition: simulate, then test.
    pub fn run_one(&self, n: usize, effect: f64, r: usize, rep: usize) -> Result<TestResult> {
        let model = OUModel::new(self.drift(r, effect)?, self.sigma)?;
        let data_seed = derive_seed(derive_seed(self.seed ^ 0x5EED, r as u64), rep as u64);
        let data = simulate_ou(&model, self.grid, n, data_seed)?;
        let query = self.query();
        match self.folds {
            Some(k) => lcmtest::run_crossfit_test(&data, &query, k, &self.estimation, self.level, derive_seed(data_seed, 1)),
            None => {
                let half = n / 2;
                let train: Vec<usize> = (0..half).collect();
                let eval: Vec<usize> = (half..n).collect();
                lcmtest::run_test(&data, &query, &train, &eval, &self.estimation, self.level)
            }
        }
    }
}

/// One `(N₀, Φ_{βα})` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub n_traj: usize,
    pub effect: f64,
    pub runs: usize,
    pub rejections: usize,
    pub degenerate: usize,
    /// Runs that ended in a numerical error; excluded from the rates.
    pub failures: usize,
    /// Rejections over all completed runs.
    pub pooled_rate: f64,
    /// Mean of the per-drift rejection rates.
    pub mean_phi_rate: f64,
    pub per_phi_rates: Vec<f64>,
}

pub fn run_cell(config: &ExperimentConfig, n: usize, effect: f64) -> Result<ExperimentRow> {
    config.validate()?;
    let reps = config.reps_per_phi;
    let outcomes = par::map_range(config.n_phi * reps, |i| config.run_one(n, effect, i / reps, i % reps));
    let mut row = ExperimentRow {
        n_traj: n,
        effect,
        runs: config.n_phi * reps,
        rejections: 0,
        degenerate: 0,
        failures: 0,
        pooled_rate: 0.0,
        mean_phi_rate: 0.0,
        per_phi_rates: Vec::with_capacity(config.n_phi),
    };
    let mut outcomes = outcomes.into_iter();
    for _ in 0..config.n_phi {
        let mut done = 0usize;
        let mut rej = 0usize;
        for o in outcomes.by_ref().take(reps) {
            match o {
                Ok(t) => {
                    done += 1;
                    rej += t.rejected as usize;
                    row.degenerate += t.degenerate_variance as usize;
                }
                Err(e) if e.is_numerical() => row.failures += 1,
                Err(e) => return Err(e),
            }
        }
        row.rejections += rej;
        row.per_phi_rates.push(if done > 0 { rej as f64 / done as f64 } else { f64::NAN });
    }
    let completed = row.runs - row.failures;
    row.pooled_rate = if completed > 0 { row.rejections as f64 / completed as f64 } else { f64::NAN };
    let finite: Vec<f64> = row.per_phi_rates.iter().cloned().filter(|r| r.is_finite()).collect();
    row.mean_phi_rate = finite.iter().sum::<f64>() / finite.len().max(1) as f64;
    Ok(row)
}

/// Every cell of the grid, sample sizes outermost.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    config.validate()?;
    let mut rows = Vec::new();
    for &n in &config.n_traj {
        for &effect in &config.effects {
            rows.push(run_cell(config, n, effect)?);
        }
    }
    Ok(rows)
}
