//! Optimal filtering for the OU model.
//!
//! For a query `α ↛ β | C` the unobserved block is `U = V∖C`. Given a drift
//! estimate `Φ`, the conditional mean `m_t = E[X_U(t) | F_t^C]` and the scaled
//! conditional covariance `y_t` satisfy
//!
//! ```text
//! dm = (A_t X_C + B_t m) dt + C_t dX_C
//! A_t = Φ_{U,C} − y_t Φ_{C,U}ᵀ Φ_C
//! B_t = Φ_U − y_t Φ_{C,U}ᵀ Φ_{C,U}
//! C_t = y_t Φ_{C,U}ᵀ
//! ```
//!
//! started from the stationary-SEM Gaussian `N(0, σ²Υ)`,
//! `Υ = (I − Φ)⁻¹(I − Φᵀ)⁻¹`. The mean is forwarded with an Euler recursion
//! using left-endpoint coefficients. `y_t` does not depend on the data, so
//! the coefficient paths are computed once per query and shared across
//! trajectories.

pub mod riccati;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{self, submatrix, Matrix, Vector};
use crate::par;
use crate::sdesim::{sem_inverse, TimeGrid, TrajectorySet};

pub use riccati::{RiccatiMethod, RiccatiPath, RiccatiSystem};

/// Query `α ↛ β | C`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub alpha: usize,
    pub beta: usize,
    pub cond_set: Vec<usize>,
}

impl QuerySpec {
    pub fn new(alpha: usize, beta: usize, cond_set: Vec<usize>) -> Self {
        Self {
            alpha,
            beta,
            cond_set,
        }
    }

    /// `α ↛ β | V∖{α}`, the query behind local independence graph edges.
    pub fn pairwise(alpha: usize, beta: usize, d: usize) -> Self {
        Self::new(alpha, beta, (0..d).filter(|&i| i != alpha).collect())
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.alpha >= d || self.beta >= d {
            return bad(format!("query indices ({}, {}) out of range for d={d}", self.alpha, self.beta));
        }
        if self.alpha == self.beta {
            return bad("alpha and beta must differ".into());
        }
        if self.cond_set.contains(&self.alpha) {
            return bad("alpha must not be in the conditioning set".into());
        }
        if !self.cond_set.contains(&self.beta) {
            return bad("beta must be in the conditioning set".into());
        }
        let mut seen = vec![false; d];
        for &c in &self.cond_set {
            if c >= d {
                return bad(format!("conditioning index {c} out of range for d={d}"));
            }
            if std::mem::replace(&mut seen[c], true) {
                return bad(format!("conditioning index {c} repeated"));
            }
        }
        Ok(())
    }

    /// `V∖C` in ascending order.
    pub fn unobserved(&self, d: usize) -> Vec<usize> {
        (0..d).filter(|i| !self.cond_set.contains(i)).collect()
    }

    /// Position of `α` within [`Self::unobserved`].
    pub fn alpha_position(&self, d: usize) -> Result<usize> {
        self.unobserved(d)
            .iter()
            .position(|&i| i == self.alpha)
            .ok_or_else(|| Error::InvalidArgument("alpha is not unobserved".into()))
    }
}

fn check_query(phi: &Matrix, query: &QuerySpec) -> Result<usize> {
    matcore::ensure_square(phi, "filter drift")?;
    matcore::ensure_finite(phi, "filter drift")?;
    let d = phi.nrows();
    query.validate(d)?;
    Ok(d)
}

/// Initial conditional-mean coefficient `Υ_{U,C}Υ_C⁻¹` and covariance
/// `y₀ = Υ_U − Υ_{U,C}Υ_C⁻¹Υ_{C,U}`.
pub fn initial_values(phi: &Matrix, query: &QuerySpec) -> Result<(Matrix, Matrix)> {
    let d = check_query(phi, query)?;
    let inv = sem_inverse(phi)?;
    let ups = &inv * inv.transpose();
    let u = query.unobserved(d);
    let c = &query.cond_set;
    let ups_c = submatrix(&ups, c, c);
    let ups_cu = submatrix(&ups, c, &u);
    let coef = matcore::solve_in(&ups_c, &ups_cu, "Upsilon_C")?.transpose();
    let y0 = submatrix(&ups, &u, &u) - &coef * ups_cu;
    Ok((coef, (&y0 + y0.transpose()) * 0.5))
}

/// Riccati system for `query` under drift `phi`.
pub fn riccati_system(phi: &Matrix, query: &QuerySpec) -> Result<RiccatiSystem> {
    let d = check_query(phi, query)?;
    let u = query.unobserved(d);
    let phi_cu = submatrix(phi, &query.cond_set, &u);
    RiccatiSystem::new(submatrix(phi, &u, &u), phi_cu.transpose() * phi_cu)
}

/// Conditional covariance path with the default (RK4) solver.
pub fn solve_riccati(phi: &Matrix, y0: &Matrix, query: &QuerySpec, grid: &TimeGrid) -> Result<RiccatiPath> {
    solve_riccati_with(phi, y0, query, grid, RiccatiMethod::default())
}

pub fn solve_riccati_with(
    phi: &Matrix,
    y0: &Matrix,
    query: &QuerySpec,
    grid: &TimeGrid,
    method: RiccatiMethod,
) -> Result<RiccatiPath> {
    riccati_system(phi, query)?.solve(y0, grid, method)
}

/// Per-grid-point filter coefficients `A_k`, `B_k`, `C_k`.
#[derive(Debug, Clone)]
pub struct FilterCoefficients {
    pub a: Vec<Matrix>,
    pub b: Vec<Matrix>,
    pub c: Vec<Matrix>,
}

impl FilterCoefficients {
    pub fn new(phi: &Matrix, riccati: &RiccatiPath, query: &QuerySpec) -> Result<Self> {
        let d = check_query(phi, query)?;
        let u = query.unobserved(d);
        let c = &query.cond_set;
        let phi_uc = submatrix(phi, &u, c);
        let phi_cu = submatrix(phi, c, &u);
        let phi_c = submatrix(phi, c, c);
        let phi_u = submatrix(phi, &u, &u);
        let gram = phi_cu.transpose() * &phi_cu;
        let cu_t_c = phi_cu.transpose() * phi_c;
        let mut out = Self {
            a: Vec::with_capacity(riccati.len()),
            b: Vec::with_capacity(riccati.len()),
            c: Vec::with_capacity(riccati.len()),
        };
        for y in &riccati.y {
            if y.shape() != (u.len(), u.len()) {
                return Err(Error::Shape("riccati path does not match the query".into()));
            }
            out.a.push(&phi_uc - y * &cu_t_c);
            out.b.push(&phi_u - y * &gram);
            out.c.push(y * phi_cu.transpose());
        }
        Ok(out)
    }
}

/// Euler recursion for the conditional mean:
/// `m_k = m_{k−1} + (A_{k−1}x_{k−1} + B_{k−1}m_{k−1})δ + C_{k−1}(x_k − x_{k−1})`.
///
/// `xc` is `(n + 1) × |C|` (rows are time); returns `(n + 1) × |U|`.
pub fn forward_filter(coeffs: &FilterCoefficients, xc: &Matrix, grid: &TimeGrid, m0: &Vector) -> Result<Matrix> {
    let n_pts = grid.n_points();
    if xc.nrows() != n_pts || coeffs.a.len() < n_pts {
        return Err(Error::Shape(format!(
            "filter needs {n_pts} grid points, got {} observations and {} coefficients",
            xc.nrows(),
            coeffs.a.len()
        )));
    }
    let nu = m0.len();
    let nc = xc.ncols();
    if coeffs.a[0].shape() != (nu, nc) {
        return Err(Error::Shape("coefficients do not match the observed block".into()));
    }
    let delta = grid.delta();
    let mut m_hat = Matrix::zeros(n_pts, nu);
    m_hat.row_mut(0).copy_from(&m0.transpose());
    let mut prev = m0.clone();
    let mut next = Vector::zeros(nu);
    for k in 1..n_pts {
        let (a, b, c) = (&coeffs.a[k - 1], &coeffs.b[k - 1], &coeffs.c[k - 1]);
        for r in 0..nu {
            let mut drift = 0.0;
            let mut jump = 0.0;
            for q in 0..nc {
                drift += a[(r, q)] * xc[(k - 1, q)];
                jump += c[(r, q)] * (xc[(k, q)] - xc[(k - 1, q)]);
            }
            for v in 0..nu {
                drift += b[(r, v)] * prev[v];
            }
            next[r] = prev[r] + drift * delta + jump;
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::FilterBlowUp { traj: 0, step: k });
        }
        m_hat.row_mut(k).copy_from(&next.transpose());
        std::mem::swap(&mut prev, &mut next);
    }
    Ok(m_hat)
}

/// `Π̂_k = m̂_k[α]` and `μ̂_k = Φ_{β,U} m̂_k + Φ_{β,C} x_{C,k}`.
pub fn projections(m_hat: &Matrix, xc: &Matrix, phi: &Matrix, query: &QuerySpec) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = check_query(phi, query)?;
    let u = query.unobserved(d);
    let c = &query.cond_set;
    if m_hat.ncols() != u.len() || xc.ncols() != c.len() || m_hat.nrows() != xc.nrows() {
        return Err(Error::Shape("projection inputs disagree with the query".into()));
    }
    let pos = query.alpha_position(d)?;
    let pi = m_hat.column(pos).iter().cloned().collect();
    let row_u: Vec<f64> = u.iter().map(|&i| phi[(query.beta, i)]).collect();
    let row_c: Vec<f64> = c.iter().map(|&i| phi[(query.beta, i)]).collect();
    let mu = (0..m_hat.nrows())
        .map(|k| {
            let hidden: f64 = row_u.iter().enumerate().map(|(v, w)| w * m_hat[(k, v)]).sum();
            let seen: f64 = row_c.iter().enumerate().map(|(q, w)| w * xc[(k, q)]).sum();
            hidden + seen
        })
        .collect();
    Ok((pi, mu))
}

/// Filter output for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPath {
    pub m_hat: Matrix,
    pub pi_hat: Vec<f64>,
    pub mu_hat: Vec<f64>,
}

/// Filter outputs for a set of trajectories, in the order requested.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPaths {
    pub traj: Vec<usize>,
    pub paths: Vec<FilterPath>,
}

/// Everything about a query that does not depend on the observed path.
#[derive(Debug, Clone)]
pub struct OptimalFilter {
    phi: Matrix,
    query: QuerySpec,
    grid: TimeGrid,
    m0_coef: Matrix,
    riccati: RiccatiPath,
    coeffs: FilterCoefficients,
}

impl OptimalFilter {
    pub fn new(phi: &Matrix, query: &QuerySpec, grid: &TimeGrid) -> Result<Self> {
        Self::with_method(phi, query, grid, RiccatiMethod::default())
    }

    pub fn with_method(phi: &Matrix, query: &QuerySpec, grid: &TimeGrid, method: RiccatiMethod) -> Result<Self> {
        let (m0_coef, y0) = initial_values(phi, query)?;
        let riccati = solve_riccati_with(phi, &y0, query, grid, method)?;
        let coeffs = FilterCoefficients::new(phi, &riccati, query)?;
        Ok(Self {
            phi: phi.clone(),
            query: query.clone(),
            grid: *grid,
            m0_coef,
            riccati,
            coeffs,
        })
    }

    pub fn riccati(&self) -> &RiccatiPath {
        &self.riccati
    }

    pub fn m0_coef(&self) -> &Matrix {
        &self.m0_coef
    }

    /// `(n + 1) × |C|` observed block of trajectory `j`.
    pub fn observed(&self, data: &TrajectorySet, j: usize) -> Matrix {
        let c = &self.query.cond_set;
        Matrix::from_fn(self.grid.n_points(), c.len(), |k, q| data.value(j, k, c[q]))
    }

    pub fn run(&self, data: &TrajectorySet, j: usize) -> Result<FilterPath> {
        if data.grid() != &self.grid || data.dim() != self.phi.nrows() {
            return Err(Error::Shape("data grid or dimension differs from the filter's".into()));
        }
        let xc = self.observed(data, j);
        let m0 = &self.m0_coef * xc.row(0).transpose();
        let m_hat = forward_filter(&self.coeffs, &xc, &self.grid, &m0).map_err(|e| match e {
            Error::FilterBlowUp { step, .. } => Error::FilterBlowUp { traj: j, step },
            other => other,
        })?;
        let (pi_hat, mu_hat) = projections(&m_hat, &xc, &self.phi, &self.query)?;
        Ok(FilterPath { m_hat, pi_hat, mu_hat })
    }

    /// Runs the filter on each listed trajectory (in parallel when enabled).
    pub fn run_all(&self, data: &TrajectorySet, traj: &[usize]) -> Result<FilterPaths> {
        let paths = par::map_slice(traj, |&j| self.run(data, j))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        Ok(FilterPaths {
            traj: traj.to_vec(),
            paths,
        })
    }
}
