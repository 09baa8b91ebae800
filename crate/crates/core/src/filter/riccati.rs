//! Conditional-covariance Riccati equation
//!
//! `ẏ = A y + y Aᵀ + I − y S y`, with `A = Φ_{U}` and `S = Φ_{C,U}ᵀ Φ_{C,U}`
//! for the unobserved block `U = V∖C`.
//!
//! Two solvers: a fixed-step RK4 integrator (the default) and the closed form
//! obtained from the eigen-decomposition of the Hamiltonian
//! `M = [[−Aᵀ, S], [I, A]]`.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::matcore::{self, Matrix};
use crate::sdesim::TimeGrid;

type CMatrix = DMatrix<Complex<f64>>;

/// Largest RK4 step; grid intervals are subdivided evenly to stay below it.
pub const MAX_RK4_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RiccatiMethod {
    #[default]
    RungeKutta4,
    NegativeExponential,
}

/// `y` at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiPath {
    pub y: Vec<Matrix>,
}

impl RiccatiPath {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.y.first().map_or(0, |m| m.nrows())
    }
}

/// Coefficients of the Riccati equation for one query.
#[derive(Debug, Clone)]
pub struct RiccatiSystem {
    pub a: Matrix,
    pub s: Matrix,
}

impl RiccatiSystem {
    pub fn new(a: Matrix, s: Matrix) -> Result<Self> {
        matcore::ensure_square(&a, "riccati drift")?;
        if s.shape() != a.shape() {
            return Err(Error::Shape("riccati quadratic term must match drift block".into()));
        }
        Ok(Self { a, s })
    }

    pub fn rhs(&self, y: &Matrix) -> Matrix {
        let ay = &self.a * y;
        let n = y.nrows();
        &ay + ay.transpose() + Matrix::identity(n, n) - y * &self.s * y
    }

    pub fn solve(&self, y0: &Matrix, grid: &TimeGrid, method: RiccatiMethod) -> Result<RiccatiPath> {
        if y0.shape() != self.a.shape() {
            return Err(Error::Shape(format!(
                "initial covariance is {:?}, system is {:?}",
                y0.shape(),
                self.a.shape()
            )));
        }
        let path = match method {
            RiccatiMethod::RungeKutta4 if self.a.nrows() == 1 => self.rk4_scalar(y0[(0, 0)], grid)?,
            RiccatiMethod::RungeKutta4 => self.rk4(y0, grid)?,
            RiccatiMethod::NegativeExponential => self.closed_form(y0, grid)?,
        };
        Ok(path)
    }

    fn substeps(grid: &TimeGrid) -> (usize, f64) {
        let m = (grid.delta() / MAX_RK4_STEP).ceil().max(1.0) as usize;
        (m, grid.delta() / m as f64)
    }

    fn rk4(&self, y0: &Matrix, grid: &TimeGrid) -> Result<RiccatiPath> {
        let (m, h) = Self::substeps(grid);
        let mut y = (y0 + y0.transpose()) * 0.5;
        let mut out = Vec::with_capacity(grid.n_points());
        out.push(y.clone());
        for k in 1..=grid.n_steps() {
            for _ in 0..m {
                let k1 = self.rhs(&y);
                let k2 = self.rhs(&(&y + &k1 * (h / 2.0)));
                let k3 = self.rhs(&(&y + &k2 * (h / 2.0)));
                let k4 = self.rhs(&(&y + &k3 * h));
                y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                y = (&y + y.transpose()) * 0.5;
            }
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::RiccatiBlowUp { step: k });
            }
            out.push(y.clone());
        }
        Ok(RiccatiPath { y: out })
    }

    fn rk4_scalar(&self, y0: f64, grid: &TimeGrid) -> Result<RiccatiPath> {
        let (m, h) = Self::substeps(grid);
        let a2 = 2.0 * self.a[(0, 0)];
        let s = self.s[(0, 0)];
        let f = |y: f64| a2 * y + 1.0 - s * y * y;
        let mut y = y0;
        let mut out = Vec::with_capacity(grid.n_points());
        out.push(Matrix::from_element(1, 1, y));
        for k in 1..=grid.n_steps() {
            for _ in 0..m {
                let k1 = f(y);
                let k2 = f(y + 0.5 * h * k1);
                let k3 = f(y + 0.5 * h * k2);
                let k4 = f(y + h * k3);
                y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            if !y.is_finite() {
                return Err(Error::RiccatiBlowUp { step: k });
            }
            out.push(Matrix::from_element(1, 1, y));
        }
        Ok(RiccatiPath { y: out })
    }

    /// The Hamiltonian `[[−Aᵀ, S], [I, A]]`.
    pub fn hamiltonian(&self) -> Matrix {
        let n = self.a.nrows();
        let mut h = Matrix::zeros(2 * n, 2 * n);
        h.view_mut((0, 0), (n, n)).copy_from(&(-self.a.transpose()));
        h.view_mut((0, n), (n, n)).copy_from(&self.s);
        h.view_mut((n, 0), (n, n)).fill_with_identity();
        h.view_mut((n, n), (n, n)).copy_from(&self.a);
        h
    }

    /// Negative-exponential closed form.
    ///
    /// With `W⁻¹MW = diag(Λ, D)`, `Re Λ > 0 > Re D`, and
    /// `R = −(W₂₂ − y₀W₁₂)⁻¹(W₂₁ − y₀W₁₁)`:
    ///
    /// `y_t = (W₂₁ + W₂₂ e^{tD} R e^{−tΛ})(W₁₁ + W₁₂ e^{tD} R e^{−tΛ})⁻¹`.
    ///
    /// For a Hamiltonian `D = −Λ`, so both exponentials decay. Fails when the
    /// spectrum has eigenvalues near the imaginary axis or `W` is
    /// ill-conditioned (non-diagonalizable Hamiltonian).
    fn closed_form(&self, y0: &Matrix, grid: &TimeGrid) -> Result<RiccatiPath> {
        let n = self.a.nrows();
        let (w, lambda, dneg) = eigen_split(&self.hamiltonian())?;
        let block = |r: usize, c: usize| w.view((r * n, c * n), (n, n)).into_owned();
        let (w11, w12, w21, w22) = (block(0, 0), block(0, 1), block(1, 0), block(1, 1));
        let y0c = y0.map(|v| Complex::new(v, 0.0));
        let lhs = &w22 - &y0c * &w12;
        let rhs = &w21 - &y0c * &w11;
        let r = -lhs
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NotDiagonalizable("W22 - y0 W12 singular".into()))?;
        let mut out = Vec::with_capacity(grid.n_points());
        for k in 0..grid.n_points() {
            let t = grid.time(k);
            let left = CMatrix::from_diagonal(&dneg.map(|l| (l * t).exp()));
            let right = CMatrix::from_diagonal(&lambda.map(|l| (-l * t).exp()));
            let mid = left * &r * right;
            let num = &w21 + &w22 * &mid;
            let den = &w11 + &w12 * &mid;
            // y = num · den⁻¹  <=>  denᵀ yᵀ = numᵀ
            let yt = den
                .transpose()
                .lu()
                .solve(&num.transpose())
                .ok_or(Error::RiccatiBlowUp { step: k })?;
            let y = yt.transpose();
            let scale = y.iter().map(|c| c.norm()).fold(1.0, f64::max);
            if y.iter().any(|c| !c.re.is_finite() || c.im.abs() > 1e-8 * scale) {
                return Err(Error::RiccatiBlowUp { step: k });
            }
            let re = y.map(|c| c.re);
            out.push((&re + re.transpose()) * 0.5);
        }
        Ok(RiccatiPath { y: out })
    }
}

/// Eigenvectors of `m` ordered so that the first half of the columns carry
/// eigenvalues with positive real part and the rest negative.
fn eigen_split(
    m: &Matrix,
) -> Result<(CMatrix, nalgebra::DVector<Complex<f64>>, nalgebra::DVector<Complex<f64>>)> {
    let n2 = m.nrows();
    let n = n2 / 2;
    let mut eig: Vec<Complex<f64>> = m.clone().complex_eigenvalues().iter().cloned().collect();
    eig.sort_by(|a, b| b.re.total_cmp(&a.re));
    let scale = eig.iter().map(|c| c.norm()).fold(1.0, f64::max);
    let gap = 1e-8 * scale;
    if eig[n - 1].re <= gap || eig[n].re >= -gap {
        return Err(Error::NotDiagonalizable(format!(
            "eigenvalues {:?} do not split across the imaginary axis",
            eig
        )));
    }
    let mc = m.map(|v| Complex::new(v, 0.0));
    let mut w = CMatrix::zeros(n2, n2);
    for (col, lam) in eig.iter().enumerate() {
        let shifted = &mc - CMatrix::identity(n2, n2) * *lam;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested Vt");
        let (idx, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty spectrum");
        let v = v_t.row(idx).map(|c| c.conj()).transpose();
        w.set_column(col, &v);
    }
    let sv = w.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smin > 0.0 && smax / smin < 1e10) {
        return Err(Error::NotDiagonalizable(format!(
            "eigenvector matrix condition {:.3e}",
            smax / smin
        )));
    }
    let lambda = nalgebra::DVector::from_iterator(n, eig[..n].iter().cloned());
    let dneg = nalgebra::DVector::from_iterator(n, eig[n..].iter().cloned());
    Ok((w, lambda, dneg))
}
