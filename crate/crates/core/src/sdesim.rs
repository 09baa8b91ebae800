//! Synthetic data: random drift matrices, stationary-SEM initial values and
//! Euler–Maruyama trajectories of linear (OU), nonlinear and anisotropic
//! diffusions.
//!
//! Trajectory `j` draws all of its randomness from [`crate::rng::stream`]
//! `(seed, j)`: first the `d` initial-value innovations, then `d` Gaussian
//! increments per step. Output is therefore identical whether trajectories
//! are generated in parallel or not.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{self, Matrix, Vector};
use crate::{par, rng};

/// Uniform observation grid `{0, δ, …, nδ}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    delta: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(delta: f64, n_steps: usize) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid step must be positive, got {delta}")));
        }
        if n_steps == 0 {
            return Err(Error::InvalidArgument("grid needs at least one step".into()));
        }
        Ok(Self { delta, n_steps })
    }

    /// Grid with step `delta` reaching `horizon`; `horizon/delta` is rounded
    /// to the nearest integer.
    pub fn with_horizon(delta: f64, horizon: f64) -> Result<Self> {
        let n = (horizon / delta).round();
        if !(n >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon {horizon} shorter than one step of {delta}"
            )));
        }
        Self::new(delta, n as usize)
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_points(&self) -> usize {
        self.n_steps + 1
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.delta
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.delta
    }
}

/// `dX = ΦX dt + σ dW` with `X₀` from the SEM `X₀ = ΦX₀ + e`, `e ~ N(0, σ²I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OUModel {
    pub phi: Matrix,
    pub sigma: f64,
}

impl OUModel {
    /// Validates that `phi` is square and `(I − Φ)` is nonsingular.
    ///
    /// Only nonsingularity is required: the usual positive-definiteness
    /// assumption on `(I − Φ)` is not met by drift matrices with diagonal 2,
    /// which is the standard synthetic setting.
    pub fn new(phi: Matrix, sigma: f64) -> Result<Self> {
        matcore::ensure_square(&phi, "OUModel")?;
        matcore::ensure_finite(&phi, "OUModel")?;
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
        }
        sem_inverse(&phi)?;
        Ok(Self { phi, sigma })
    }

    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }
}

/// `(I − Φ)⁻¹`, the map from SEM innovations to initial values.
pub(crate) fn sem_inverse(phi: &Matrix) -> Result<Matrix> {
    let d = phi.nrows();
    matcore::inverse(&(Matrix::identity(d, d) - phi), "I - phi")
}

/// `N₀` discretely observed `d`-dimensional paths on a shared grid.
///
/// Values are stored trajectory-major, then time, then coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    grid: TimeGrid,
    dim: usize,
    n_traj: usize,
    values: Vec<f64>,
}

impl TrajectorySet {
    pub fn new(grid: TimeGrid, dim: usize, n_traj: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || n_traj == 0 {
            return Err(Error::InvalidArgument("empty trajectory set".into()));
        }
        let want = n_traj * grid.n_points() * dim;
        if values.len() != want {
            return Err(Error::Shape(format!(
                "expected {want} values for {n_traj} trajectories x {} points x {dim} coords, got {}",
                grid.n_points(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let per = grid.n_points() * dim;
            return Err(Error::Overflow {
                traj: pos / per,
                step: (pos % per) / dim,
            });
        }
        Ok(Self {
            grid,
            dim,
            n_traj,
            values,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_traj(&self) -> usize {
        self.n_traj
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row-major `(n + 1) × d` block of trajectory `j`.
    pub fn path(&self, j: usize) -> &[f64] {
        let per = self.grid.n_points() * self.dim;
        &self.values[j * per..(j + 1) * per]
    }

    /// State of trajectory `j` at step `k`.
    pub fn state(&self, j: usize, k: usize) -> &[f64] {
        let start = k * self.dim;
        &self.path(j)[start..start + self.dim]
    }

    pub fn value(&self, j: usize, k: usize, i: usize) -> f64 {
        self.state(j, k)[i]
    }

    /// Subset of trajectories, in the order given.
    pub fn select(&self, indices: &[usize]) -> TrajectorySet {
        let mut values = Vec::with_capacity(indices.len() * self.grid.n_points() * self.dim);
        for &j in indices {
            values.extend_from_slice(self.path(j));
        }
        TrajectorySet {
            grid: self.grid,
            dim: self.dim,
            n_traj: indices.len(),
            values,
        }
    }

    /// Scales every value by `c`.
    pub fn scaled(&self, c: f64) -> TrajectorySet {
        TrajectorySet {
            values: self.values.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }

    /// The `n_traj × d` matrix of states at step `k`.
    pub fn states_at(&self, k: usize) -> Matrix {
        Matrix::from_fn(self.n_traj, self.dim, |j, i| self.value(j, k, i))
    }
}

/// Random drift matrix: each off-diagonal entry is nonzero with probability
/// `edge_prob`, with magnitude `Uniform(0, 1)`; the diagonal is `diag_value`.
/// Draws with singular `(I − Φ)` are redrawn, up to 100 attempts.
pub fn gen_random_phi(d: usize, edge_prob: f64, diag_value: f64, rng_seed: u64) -> Result<Matrix> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::InvalidArgument(format!("edge probability {edge_prob} outside [0, 1]")));
    }
    const ATTEMPTS: usize = 100;
    let mut r = rng::stream(rng_seed, 0);
    for _ in 0..ATTEMPTS {
        let mut phi = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                if i == j {
                    phi[(i, j)] = diag_value;
                } else if r.random::<f64>() < edge_prob {
                    phi[(i, j)] = r.random::<f64>();
                }
            }
        }
        if sem_inverse(&phi).is_ok() {
            return Ok(phi);
        }
    }
    Err(Error::SingularDraws { attempts: ATTEMPTS })
}

fn normal<R: Rng>(r: &mut R) -> f64 {
    StandardNormal.sample(r)
}

fn initial_state<R: Rng>(sem_inv: &Matrix, scales: &[f64], r: &mut R) -> Vector {
    let e = Vector::from_iterator(scales.len(), scales.iter().map(|s| s * normal(r)));
    sem_inv * e
}

/// Stationary-SEM initial values: row `j` is `(I − Φ)⁻¹e`, `e ~ N(0, σ²I)`,
/// drawn from the same stream the simulators use for trajectory `j`.
pub fn sample_initial(model: &OUModel, n_traj: usize, rng_seed: u64) -> Result<Matrix> {
    let d = model.dim();
    let inv = sem_inverse(&model.phi)?;
    let scales = vec![model.sigma; d];
    let rows = par::map_range(n_traj, |j| {
        let mut r = rng::stream(rng_seed, j as u64);
        initial_state(&inv, &scales, &mut r)
    });
    Ok(Matrix::from_fn(n_traj, d, |j, i| rows[j][i]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Drift {
    Linear,
    /// `Φ(X + sin(2πX))`, sine applied elementwise.
    Sinusoidal,
}

/// Shared Euler–Maruyama driver:
/// `X_{k+1} = X_k + δ·b(X_k) + √δ·diag(s)·Z_k`.
fn euler(
    phi: &Matrix,
    drift: Drift,
    scales: &[f64],
    start: Option<&Matrix>,
    grid: TimeGrid,
    n_traj: usize,
    rng_seed: u64,
) -> Result<TrajectorySet> {
    let d = phi.nrows();
    if let Some(x0) = start {
        if x0.shape() != (n_traj, d) {
            return Err(Error::Shape(format!(
                "initial states are {}x{}, expected {n_traj}x{d}",
                x0.nrows(),
                x0.ncols()
            )));
        }
    }
    let inv = sem_inverse(phi)?;
    let delta = grid.delta();
    let sqrt_delta = delta.sqrt();
    let n = grid.n_steps();
    let paths = par::try_map_range(n_traj, |j| -> Result<Vec<f64>> {
        let mut r = rng::stream(rng_seed, j as u64);
        let mut out = Vec::with_capacity(grid.n_points() * d);
        let x0 = initial_state(&inv, scales, &mut r);
        let mut x = match start {
            Some(given) => given.row(j).transpose(),
            None => x0,
        };
        out.extend(x.iter());
        let mut arg = Vector::zeros(d);
        for k in 0..n {
            match drift {
                Drift::Linear => arg.copy_from(&x),
                Drift::Sinusoidal => {
                    for i in 0..d {
                        arg[i] = x[i] + (2.0 * std::f64::consts::PI * x[i]).sin();
                    }
                }
            }
            let b = phi * &arg;
            for i in 0..d {
                x[i] += delta * b[i] + scales[i] * sqrt_delta * normal(&mut r);
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Overflow { traj: j, step: k + 1 });
            }
            out.extend(x.iter());
        }
        Ok(out)
    })?;
    TrajectorySet::new(grid, d, n_traj, paths.concat())
}

/// Euler–Maruyama paths of the isotropic OU model.
pub fn simulate_ou(model: &OUModel, grid: TimeGrid, n_traj: usize, rng_seed: u64) -> Result<TrajectorySet> {
    let scales = vec![model.sigma; model.dim()];
    euler(&model.phi, Drift::Linear, &scales, None, grid, n_traj, rng_seed)
}

/// [`simulate_ou`] started from the given `n_traj × d` initial states instead
/// of SEM draws. The stream layout is unchanged, so increments match
/// [`simulate_ou`] under the same seed.
pub fn simulate_ou_from(model: &OUModel, x0: &Matrix, grid: TimeGrid, rng_seed: u64) -> Result<TrajectorySet> {
    let scales = vec![model.sigma; model.dim()];
    euler(&model.phi, Drift::Linear, &scales, Some(x0), grid, x0.nrows(), rng_seed)
}

/// Euler–Maruyama paths of `dX = Φ{X + sin(2πX)}dt + σ dW`.
pub fn simulate_nonlinear(
    model: &OUModel,
    grid: TimeGrid,
    n_traj: usize,
    rng_seed: u64,
) -> Result<TrajectorySet> {
    let scales = vec![model.sigma; model.dim()];
    euler(&model.phi, Drift::Sinusoidal, &scales, None, grid, n_traj, rng_seed)
}

/// [`simulate_nonlinear`] from given initial states.
pub fn simulate_nonlinear_from(
    model: &OUModel,
    x0: &Matrix,
    grid: TimeGrid,
    rng_seed: u64,
) -> Result<TrajectorySet> {
    let scales = vec![model.sigma; model.dim()];
    euler(&model.phi, Drift::Sinusoidal, &scales, Some(x0), grid, x0.nrows(), rng_seed)
}

/// Euler–Maruyama paths of `dX = ΦX dt + diag(s) dW`. Initial SEM innovations
/// use the same per-coordinate scales, so equal scales reproduce
/// [`simulate_ou`] exactly.
pub fn simulate_aniso(
    phi: &Matrix,
    diffusion_diag: &[f64],
    grid: TimeGrid,
    n_traj: usize,
    rng_seed: u64,
) -> Result<TrajectorySet> {
    matcore::ensure_square(phi, "simulate_aniso")?;
    if diffusion_diag.len() != phi.nrows() {
        return Err(Error::Shape(format!(
            "diffusion diagonal has {} entries for dimension {}",
            diffusion_diag.len(),
            phi.nrows()
        )));
    }
    if diffusion_diag.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidArgument("diffusion scales must be positive".into()));
    }
    euler(phi, Drift::Linear, diffusion_diag, None, grid, n_traj, rng_seed)
}

/// OU paths from the exact Gaussian transition
/// `X_{k+1} = e^{Φδ}X_k + η`, `η ~ N(0, Ω)`, `Ω = σ²∫₀^δ e^{Φs}e^{Φᵀs}ds`.
///
/// Free of discretization bias; used as an oracle for the Euler generator.
pub fn simulate_ou_exact(
    model: &OUModel,
    grid: TimeGrid,
    n_traj: usize,
    rng_seed: u64,
) -> Result<TrajectorySet> {
    let d = model.dim();
    let delta = grid.delta();
    let f = matcore::mat_exp(&model.phi, delta)?;
    let omega = transition_covariance(&model.phi, model.sigma, delta)?;
    let chol = if model.sigma == 0.0 {
        Matrix::zeros(d, d)
    } else {
        let sym = (&omega + omega.transpose()) * 0.5;
        sym.cholesky()
            .ok_or_else(|| Error::NonFinite("transition covariance not positive definite"))?
            .l()
    };
    let inv = sem_inverse(&model.phi)?;
    let scales = vec![model.sigma; d];
    let n = grid.n_steps();
    let paths = par::try_map_range(n_traj, |j| -> Result<Vec<f64>> {
        let mut r = rng::stream(rng_seed, j as u64);
        let mut out = Vec::with_capacity(grid.n_points() * d);
        let mut x = initial_state(&inv, &scales, &mut r);
        out.extend(x.iter());
        for k in 0..n {
            let z = Vector::from_iterator(d, (0..d).map(|_| normal(&mut r)));
            x = &f * &x + &chol * z;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Overflow { traj: j, step: k + 1 });
            }
            out.extend(x.iter());
        }
        Ok(out)
    })?;
    TrajectorySet::new(grid, d, n_traj, paths.concat())
}

/// `σ²∫₀^δ e^{Φs}e^{Φᵀs}ds` via Van Loan's block exponential.
pub fn transition_covariance(phi: &Matrix, sigma: f64, delta: f64) -> Result<Matrix> {
    let d = phi.nrows();
    let mut block = Matrix::zeros(2 * d, 2 * d);
    block.view_mut((0, 0), (d, d)).copy_from(&(-phi));
    block
        .view_mut((0, d), (d, d))
        .copy_from(&(Matrix::identity(d, d) * sigma * sigma));
    block.view_mut((d, d), (d, d)).copy_from(&phi.transpose());
    let e = matcore::mat_exp(&block, delta)?;
    let g12 = e.view((0, d), (d, d)).into_owned();
    let g22 = e.view((d, d), (d, d)).into_owned();
    Ok(g22.transpose() * g12)
}
