//! OU parameter estimation from discretely observed trajectories.
//!
//! Observations subsampled at `δ_c` follow a VAR(1), `X_t = F X_{t−δ_c} + ε`
//! with `F = e^{Φδ_c}`. The estimator:
//!
//! 1. `F̂ = C(−1) C(0)⁻¹` from lagged sample second moments,
//! 2. clip the singular values of `I + F̂` into `[1, 3]` giving `F̄`,
//! 3. Cayley inverse `Φ̄ = (2/δ_c)(F̄ − I)(F̄ + I)⁻¹`,
//! 4. clip the singular values of `I − Φ̄` into `[1/u, u]` giving `Φ̃`,
//! 5. `Ω̂` from VAR residuals and
//!    `vec Σ̂ = (F̂⊗F̂ − I⊗I)⁻¹(Φ̃⊗I + I⊗Φ̃) vec Ω̂`.
//!
//! `Σ̂` estimates the diffusion covariance `ΣΣᵀ` (it equals `σ²I` under
//! isotropic noise).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{self, Matrix};
use crate::par;
use crate::sdesim::TrajectorySet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    /// Training sample interval as a multiple of the observation step.
    pub stride: usize,
    /// Singular-value bound for `I − Φ̃`; must exceed 1.
    pub u: f64,
    /// Use every consecutive `δ_c`-spaced pair along each path instead of only
    /// `(X_0, X_{δ_c})`.
    pub pool_lags: bool,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            stride: 5,
            u: 10.0,
            pool_lags: true,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::InvalidArgument("stride must be >= 1".into()));
        }
        if !(self.u > 1.0) {
            return Err(Error::InvalidArgument(format!("u must exceed 1, got {}", self.u)));
        }
        Ok(())
    }

    /// `δ_c` for observations on `data`'s grid.
    pub fn delta_c(&self, data: &TrajectorySet) -> f64 {
        self.stride as f64 * data.grid().delta()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatedOUModel {
    pub phi_tilde: Matrix,
    pub sigma_hat: Matrix,
    pub f_hat: Matrix,
    pub omega_hat: Matrix,
    pub u_used: f64,
    pub delta_c: f64,
    pub n_pairs: usize,
}

/// Lagged state pairs `(X_{t−δ_c}, X_t)` as row-aligned `m × d` matrices.
#[derive(Debug, Clone)]
pub struct LagPairs {
    pub prev: Matrix,
    pub next: Matrix,
}

impl LagPairs {
    pub fn new(prev: Matrix, next: Matrix) -> Result<Self> {
        if prev.shape() != next.shape() {
            return Err(Error::Shape(format!(
                "lag pairs disagree: {:?} vs {:?}",
                prev.shape(),
                next.shape()
            )));
        }
        Ok(Self { prev, next })
    }

    pub fn from_data(data: &TrajectorySet, config: &EstimationConfig) -> Result<Self> {
        config.validate()?;
        let n = data.grid().n_steps();
        if config.stride > n {
            return Err(Error::InvalidArgument(format!(
                "stride {} exceeds the {n} observed steps",
                config.stride
            )));
        }
        let lags: Vec<usize> = if config.pool_lags {
            (0..=n - config.stride).step_by(config.stride).collect()
        } else {
            vec![0]
        };
        let d = data.dim();
        let m = data.n_traj() * lags.len();
        let mut prev = Matrix::zeros(m, d);
        let mut next = Matrix::zeros(m, d);
        let mut row = 0;
        for j in 0..data.n_traj() {
            for &k in &lags {
                for i in 0..d {
                    prev[(row, i)] = data.value(j, k, i);
                    next[(row, i)] = data.value(j, k + config.stride, i);
                }
                row += 1;
            }
        }
        Ok(Self { prev, next })
    }

    pub fn len(&self) -> usize {
        self.prev.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.prev.ncols()
    }
}

const CHUNK: usize = 256;

/// `Σ_rows aᵢbᵢᵀ`, accumulated in fixed-size chunks whose partial sums are
/// combined in chunk order.
fn cross_moment(a: &Matrix, b: &Matrix) -> Matrix {
    let m = a.nrows();
    let chunks = m.div_ceil(CHUNK);
    let partial = par::map_range(chunks, |c| {
        let lo = c * CHUNK;
        let len = CHUNK.min(m - lo);
        a.rows(lo, len).transpose() * b.rows(lo, len)
    });
    partial
        .into_iter()
        .fold(Matrix::zeros(a.ncols(), b.ncols()), |acc, p| acc + p)
}

/// `F̂ = C(−1)C(0)⁻¹` from lag pairs.
pub fn estimate_f_from_pairs(pairs: &LagPairs) -> Result<Matrix> {
    let m = pairs.len() as f64;
    let c0 = cross_moment(&pairs.prev, &pairs.prev) / m;
    let c1 = cross_moment(&pairs.next, &pairs.prev) / m;
    // F C0 = C1  <=>  C0 Fᵀ = C1ᵀ (C0 symmetric).
    let ft = matcore::solve_in(&c0, &c1.transpose(), "C_N(0)")?;
    Ok(ft.transpose())
}

/// VAR(1) coefficient `F̂` estimated from `data`.
pub fn estimate_f(data: &TrajectorySet, config: &EstimationConfig) -> Result<Matrix> {
    let d = data.dim();
    if data.n_traj() < d + 2 {
        return Err(Error::TooFewTrajectories {
            needed: d + 2,
            got: data.n_traj(),
        });
    }
    estimate_f_from_pairs(&LagPairs::from_data(data, config)?)
}

/// Singular-value-clipped Cayley inverse of `F̂`; returns `(Φ̃, Φ̄)`.
pub fn estimate_phi(f_hat: &Matrix, delta_c: f64, u: f64) -> Result<(Matrix, Matrix)> {
    matcore::ensure_square(f_hat, "estimate_phi")?;
    if !(delta_c > 0.0) {
        return Err(Error::InvalidArgument(format!("delta_c must be positive, got {delta_c}")));
    }
    if !(u > 1.0) {
        return Err(Error::InvalidArgument(format!("u must exceed 1, got {u}")));
    }
    let d = f_hat.nrows();
    let id = Matrix::identity(d, d);
    // F̄ + I = U S̄ Vᵀ, singular values in [1, 3], hence invertible.
    let f_bar_plus_i = matcore::svd_clip(&(&id + f_hat), 1.0, 3.0)?;
    let f_bar = &f_bar_plus_i - &id;
    let phi_bar_t = matcore::solve_in(
        &f_bar_plus_i.transpose(),
        &(&f_bar - &id).transpose(),
        "F_bar + I",
    )?;
    let phi_bar = phi_bar_t.transpose() * (2.0 / delta_c);
    let clipped = matcore::svd_clip(&(&id - &phi_bar), 1.0 / u, u)?;
    let phi_tilde = id - clipped;
    Ok((phi_tilde, phi_bar))
}

/// Residual covariance `Ω̂ = Σ rᵣrᵣᵀ / (m − d − 1)`, `r = X_t − F̂X_{t−δ_c}`.
pub fn estimate_omega_from_pairs(pairs: &LagPairs, f_hat: &Matrix) -> Result<Matrix> {
    let d = pairs.dim();
    let m = pairs.len();
    if m <= d + 1 {
        return Err(Error::TooFewTrajectories {
            needed: d + 2,
            got: m,
        });
    }
    let resid = &pairs.next - &pairs.prev * f_hat.transpose();
    let s = cross_moment(&resid, &resid) / (m - d - 1) as f64;
    // Exact symmetry: both triangles come from the same products up to
    // summation order.
    Ok((&s + s.transpose()) * 0.5)
}

pub fn estimate_omega(data: &TrajectorySet, f_hat: &Matrix, config: &EstimationConfig) -> Result<Matrix> {
    estimate_omega_from_pairs(&LagPairs::from_data(data, config)?, f_hat)
}

/// Diffusion covariance from the Kronecker identity, symmetrized.
pub fn estimate_sigma(f_hat: &Matrix, phi_tilde: &Matrix, omega_hat: &Matrix) -> Result<Matrix> {
    let d = f_hat.nrows();
    if phi_tilde.shape() != (d, d) || omega_hat.shape() != (d, d) {
        return Err(Error::Shape("estimate_sigma operands must all be d x d".into()));
    }
    let id = Matrix::identity(d, d);
    let lhs = matcore::kron(f_hat, f_hat)? - Matrix::identity(d * d, d * d);
    let rhs = matcore::kron(phi_tilde, &id)? + matcore::kron(&id, phi_tilde)?;
    let vec_omega = Matrix::from_column_slice(d * d, 1, omega_hat.as_slice());
    let vec_sigma = matcore::solve_in(&lhs, &(rhs * vec_omega), "F⊗F - I⊗I")?;
    let s = Matrix::from_column_slice(d, d, vec_sigma.as_slice());
    Ok((&s + s.transpose()) * 0.5)
}

/// Full estimator on the training trajectories.
pub fn fit(data: &TrajectorySet, config: &EstimationConfig) -> Result<EstimatedOUModel> {
    config.validate()?;
    let d = data.dim();
    if data.n_traj() < d + 2 {
        return Err(Error::TooFewTrajectories {
            needed: d + 2,
            got: data.n_traj(),
        });
    }
    let pairs = LagPairs::from_data(data, config)?;
    let delta_c = config.delta_c(data);
    let f_hat = estimate_f_from_pairs(&pairs)?;
    let omega_hat = estimate_omega_from_pairs(&pairs, &f_hat)?;
    let (phi_tilde, _) = estimate_phi(&f_hat, delta_c, config.u)?;
    let sigma_hat = estimate_sigma(&f_hat, &phi_tilde, &omega_hat)?;
    Ok(EstimatedOUModel {
        phi_tilde,
        sigma_hat,
        f_hat,
        omega_hat,
        u_used: config.u,
        delta_c,
        n_pairs: pairs.len(),
    })
}
