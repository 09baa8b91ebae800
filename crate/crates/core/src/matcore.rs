//! Dense linear-algebra utilities: matrix exponential, singular-value
//! clipping, Kronecker products and conditioned linear solves.
//!
//! Everything here is a pure function over [`Matrix`] (a column-major
//! `nalgebra::DMatrix<f64>`), so `vec(A)` is simply `A.as_slice()`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Largest condition number accepted by [`solve`] and friends.
pub const MAX_CONDITION: f64 = 1e12;

pub(crate) fn ensure_square(a: &Matrix, context: &'static str) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(Error::NotSquare {
            context,
            rows: a.nrows(),
            cols: a.ncols(),
        })
    }
}

pub(crate) fn ensure_finite(a: &Matrix, context: &'static str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context))
    }
}

fn one_norm(a: &Matrix) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

// Degree-m Padé coefficients of exp and the 1-norm bounds below which each
// degree is accurate to unit roundoff (Higham 2005).
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [(f64, &[f64]); 4] = [
    (1.495585217958292e-2, &PADE3),
    (2.539398330063230e-1, &PADE5),
    (9.504178996162932e-1, &PADE7),
    (2.097847961257068e0, &PADE9),
];
const THETA13: f64 = 5.371920351148152e0;

fn pade_quotient(u: Matrix, v: Matrix) -> Matrix {
    let lhs = &v - &u;
    let rhs = &v + &u;
    lhs.lu()
        .solve(&rhs)
        .expect("Pade denominator is nonsingular inside its norm bound")
}

fn pade_low(a: &Matrix, b: &[f64]) -> Matrix {
    let n = a.nrows();
    let a2 = a * a;
    let mut power = Matrix::identity(n, n);
    let mut u_even = Matrix::zeros(n, n);
    let mut v = Matrix::zeros(n, n);
    for k in 0..b.len() / 2 {
        u_even += &power * b[2 * k + 1];
        v += &power * b[2 * k];
        power = &power * &a2;
    }
    pade_quotient(a * u_even, v)
}

fn pade13(a: &Matrix) -> Matrix {
    let b = &PADE13;
    let n = a.nrows();
    let id = Matrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    pade_quotient(u, v)
}

/// `exp(t·A)` by scaling and squaring with a diagonal Padé approximant of
/// degree 3 to 13, chosen from the 1-norm of `t·A`.
pub fn mat_exp(a: &Matrix, t: f64) -> Result<Matrix> {
    ensure_square(a, "mat_exp")?;
    ensure_finite(a, "mat_exp")?;
    if !t.is_finite() {
        return Err(Error::NonFinite("mat_exp time"));
    }
    let scaled = a * t;
    let norm = one_norm(&scaled);
    for (theta, coeffs) in THETA {
        if norm <= theta {
            return Ok(pade_low(&scaled, coeffs));
        }
    }
    let squarings = (norm / THETA13).log2().ceil().max(0.0) as i32;
    let mut r = pade13(&(scaled / 2f64.powi(squarings)));
    for _ in 0..squarings {
        r = &r * &r;
    }
    ensure_finite(&r, "mat_exp result")?;
    Ok(r)
}

/// Returns `U·clip(S)·Vᵀ` where `U·S·Vᵀ` is an SVD of `a` and every singular
/// value is clamped into `[lo, hi]`. The input's own `U` and `V` are reused.
pub fn svd_clip(a: &Matrix, lo: f64, hi: f64) -> Result<Matrix> {
    if !(lo <= hi) {
        return Err(Error::InvalidArgument(format!(
            "svd_clip bounds out of order: lo={lo}, hi={hi}"
        )));
    }
    ensure_finite(a, "svd_clip")?;
    ensure_square(a, "svd_clip")?;
    let (u, s, v) = jacobi_svd(a);
    let clipped = s.map(|s| s.clamp(lo, hi));
    let out = u * Matrix::from_diagonal(&clipped) * v.transpose();
    debug_assert!({
        let eps = 1e-10 * hi.max(1.0);
        singular_values(&out)
            .iter()
            .all(|&s| s >= lo - eps && s <= hi + eps)
    });
    Ok(out)
}

/// One-sided Jacobi SVD of a square matrix, `a = U·diag(s)·Vᵀ`.
///
/// nalgebra's bidiagonal SVD returns inaccurate singular vectors when
/// singular values cluster, which is exactly what clipping produces.
fn jacobi_svd(a: &Matrix) -> (Matrix, Vector, Matrix) {
    let n = a.ncols();
    let mut w = a.clone();
    let mut v = Matrix::identity(n, n);
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut w, &mut v] {
                    for r in 0..n {
                        let (x, y) = (m[(r, p)], m[(r, q)]);
                        m[(r, p)] = c * x - s * y;
                        m[(r, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let s = Vector::from_fn(n, |j, _| w.column(j).norm());
    let scale = s.max().max(f64::MIN_POSITIVE);
    let mut u = Matrix::zeros(n, n);
    let mut filled = vec![false; n];
    for j in 0..n {
        if s[j] > scale * 1e-15 {
            u.set_column(j, &(w.column(j) / s[j]));
            filled[j] = true;
        }
    }
    // Complete U for (numerically) zero singular values.
    for j in 0..n {
        if filled[j] {
            continue;
        }
        for e in 0..n {
            let mut cand = Vector::zeros(n);
            cand[e] = 1.0;
            for k in 0..n {
                if filled[k] {
                    let proj = u.column(k).dot(&cand);
                    cand -= u.column(k) * proj;
                }
            }
            let norm = cand.norm();
            if norm > 0.5 {
                u.set_column(j, &(cand / norm));
                filled[j] = true;
                break;
            }
        }
    }
    (u, s, v)
}

/// Kronecker product `A ⊗ B`.
pub fn kron(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    ensure_finite(a, "kron")?;
    ensure_finite(b, "kron")?;
    Ok(a.kronecker(b))
}

pub fn singular_values(a: &Matrix) -> Vector {
    a.clone().svd(false, false).singular_values
}

/// 2-norm condition number; infinite for singular (or empty) matrices.
pub fn condition_number(a: &Matrix) -> f64 {
    let s = singular_values(a);
    let max = s.iter().cloned().fold(0.0, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

pub fn spectral_norm(a: &Matrix) -> f64 {
    singular_values(a).iter().cloned().fold(0.0, f64::max)
}

/// Solves `A·X = B`, rejecting `A` whose condition number exceeds
/// [`MAX_CONDITION`].
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    solve_in(a, b, "solve")
}

pub(crate) fn solve_in(a: &Matrix, b: &Matrix, context: &'static str) -> Result<Matrix> {
    ensure_square(a, context)?;
    ensure_finite(a, context)?;
    ensure_finite(b, context)?;
    if a.nrows() != b.nrows() {
        return Err(Error::Shape(format!(
            "{context}: lhs is {}x{}, rhs has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let cond = condition_number(a);
    if !(cond < MAX_CONDITION) {
        return Err(Error::IllConditioned { context, cond });
    }
    let x = a
        .clone()
        .lu()
        .solve(b)
        .ok_or(Error::IllConditioned { context, cond })?;
    ensure_finite(&x, context)?;
    Ok(x)
}

/// `A⁻¹` under the same conditioning rule as [`solve`].
pub fn inverse(a: &Matrix, context: &'static str) -> Result<Matrix> {
    ensure_square(a, context)?;
    solve_in(a, &Matrix::identity(a.nrows(), a.nrows()), context)
}

/// Symmetric PSD square root of the symmetric part of `a`; negative
/// eigenvalues (sampling noise) are floored at zero.
pub fn sym_sqrt_psd(a: &Matrix) -> Result<Matrix> {
    ensure_square(a, "sym_sqrt_psd")?;
    ensure_finite(a, "sym_sqrt_psd")?;
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    Ok(q * Matrix::from_diagonal(&roots) * q.transpose())
}

/// Block of `a` with the given row and column indices, in the given order.
pub fn submatrix(a: &Matrix, rows: &[usize], cols: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

/// `‖A − B‖_F / max(‖B‖_F, tiny)`.
pub fn rel_frobenius(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
