//! Dense complex linear algebra on top of `faer`: matrix exponential,
//! eigendecompositions, bordered solves and induced norms.

use faer::linalg::solvers::Solve;
use faer::{Col, Mat, Side};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = Mat<Complex64>;

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);

pub fn to_complex(m: &Mat<f64>) -> CMat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| Complex64::new(m[(i, j)], 0.0))
}

/// Real part, or `None` if any imaginary part is nonzero.
pub fn real_part_if_real(m: &CMat) -> Option<Mat<f64>> {
    let mut out = Mat::zeros(m.nrows(), m.ncols());
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let z = m[(i, j)];
            if z.im != 0.0 {
                return None;
            }
            out[(i, j)] = z.re;
        }
    }
    Some(out)
}

/// Induced ∞-norm (maximum absolute row sum).
pub fn norm_inf(m: &CMat) -> f64 {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Induced 1-norm (maximum absolute column sum).
pub fn norm_one(m: &CMat) -> f64 {
    (0..m.ncols())
        .map(|j| (0..m.nrows()).map(|i| m[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            worst = worst.max((a[(i, j)] - b[(i, j)]).norm());
        }
    }
    worst
}

pub fn identity(n: usize) -> CMat {
    Mat::identity(n, n)
}

pub fn scale(m: &CMat, s: Complex64) -> CMat {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * s)
}

pub fn mat_vec(m: &CMat, v: &[Complex64]) -> Vec<Complex64> {
    let col = Col::from_fn(v.len(), |i| v[i]);
    let out = m * &col;
    (0..out.nrows()).map(|i| out[i]).collect()
}

/// Row vector times matrix: `vᵀ M`.
pub fn vec_mat(v: &[Complex64], m: &CMat) -> Vec<Complex64> {
    (0..m.ncols())
        .map(|j| (0..m.nrows()).map(|i| v[i] * m[(i, j)]).sum())
        .collect()
}

// Padé(13) coefficients and the 1-norm threshold from Higham (2005).
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
const THETA13: f64 = 5.371920351148152;

/// Default cap on `‖tG‖₁` before the exponential is refused.
pub const EXPM_NORM_CAP: f64 = 1e10;

/// Matrix exponential by scaling and squaring with a degree-13 Padé
/// approximant.
pub fn expm(a: &CMat) -> Result<CMat> {
    expm_capped(a, EXPM_NORM_CAP)
}

pub fn expm_capped(a: &CMat, cap: f64) -> Result<CMat> {
    let n = a.nrows();
    let norm = norm_one(a);
    if !norm.is_finite() {
        return Err(Error::Precondition("matrix has non-finite entries".into()));
    }
    if norm > cap {
        return Err(Error::ExponentialOverflow { scale: norm, cap });
    }
    if norm == 0.0 {
        return Ok(identity(n));
    }
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = scale(a, Complex64::new(2f64.powi(-squarings), 0.0));
    let ident = identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let combo = |terms: &[(&CMat, f64)]| {
        Mat::from_fn(n, n, |i, j| terms.iter().map(|(m, c)| m[(i, j)] * *c).sum::<Complex64>())
    };
    let u_hi = combo(&[(&a6, PADE13[13]), (&a4, PADE13[11]), (&a2, PADE13[9])]);
    let u_lo = combo(&[(&a6, PADE13[7]), (&a4, PADE13[5]), (&a2, PADE13[3]), (&ident, PADE13[1])]);
    let u = &a * &(&(&a6 * &u_hi) + &u_lo);
    let v_hi = combo(&[(&a6, PADE13[12]), (&a4, PADE13[10]), (&a2, PADE13[8])]);
    let v_lo = combo(&[(&a6, PADE13[6]), (&a4, PADE13[4]), (&a2, PADE13[2]), (&ident, PADE13[0])]);
    let v = &(&a6 * &v_hi) + &v_lo;
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.partial_piv_lu().solve(&p);
    for _ in 0..squarings {
        r = &r * &r;
    }
    if !all_finite(&r) {
        return Err(Error::ExponentialOverflow { scale: norm, cap });
    }
    Ok(r)
}

pub fn all_finite(m: &CMat) -> bool {
    (0..m.ncols()).all(|j| (0..m.nrows()).all(|i| m[(i, j)].re.is_finite() && m[(i, j)].im.is_finite()))
}

/// Integer matrix power by repeated squaring.
pub fn matrix_power(m: &CMat, mut exponent: u64) -> CMat {
    let mut result = identity(m.nrows());
    let mut base = m.clone();
    while exponent > 0 {
        if exponent & 1 == 1 {
            result = &result * &base;
        }
        exponent >>= 1;
        if exponent > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Eigenvalues and right eigenvectors (as columns) of a general matrix.
pub struct EigenDecomposition {
    pub values: Vec<Complex64>,
    pub vectors: CMat,
}

pub fn eigen(m: &CMat) -> Result<EigenDecomposition> {
    if let Some(real) = real_part_if_real(m) {
        return eigen_real(&real);
    }
    let e = m
        .eigen()
        .map_err(|err| Error::EigenSolver(format!("{err:?}")))?;
    let s = e.S();
    Ok(EigenDecomposition {
        values: (0..m.nrows()).map(|i| s[i]).collect(),
        vectors: e.U().to_owned(),
    })
}

pub fn eigen_real(m: &Mat<f64>) -> Result<EigenDecomposition> {
    let e = m
        .eigen()
        .map_err(|err| Error::EigenSolver(format!("{err:?}")))?;
    let s = e.S();
    Ok(EigenDecomposition {
        values: (0..m.nrows()).map(|i| s[i]).collect(),
        vectors: e.U().to_owned(),
    })
}

/// Symmetric real eigendecomposition, eigenvalues in nondecreasing order.
pub fn eigen_symmetric(m: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let e = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|err| Error::EigenSolver(format!("{err:?}")))?;
    let s = e.S();
    Ok(((0..m.nrows()).map(|i| s[i]).collect(), e.U().to_owned()))
}

pub fn eigenvalues(m: &CMat) -> Result<Vec<Complex64>> {
    if let Some(real) = real_part_if_real(m) {
        if is_symmetric(&real) {
            let e = real
                .self_adjoint_eigenvalues(Side::Lower)
                .map_err(|err| Error::EigenSolver(format!("{err:?}")))?;
            return Ok(e.into_iter().map(|x| Complex64::new(x, 0.0)).collect());
        }
        return real
            .eigenvalues()
            .map_err(|err| Error::EigenSolver(format!("{err:?}")));
    }
    m.eigenvalues()
        .map_err(|err| Error::EigenSolver(format!("{err:?}")))
}

pub fn is_symmetric(m: &Mat<f64>) -> bool {
    let n = m.nrows();
    let mut scale: f64 = 0.0;
    let mut asym: f64 = 0.0;
    for j in 0..n {
        for i in 0..n {
            scale = scale.max(m[(i, j)].abs());
            if i < j {
                asym = asym.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
    }
    asym <= 1e-14 * scale.max(f64::MIN_POSITIVE)
}

/// Solve `[[M, col], [rowᵀ, 0]] [x; β] = [rhs; target]`.
///
/// With `M` singular of corank one, `col` outside its range and `row` not
/// orthogonal to its kernel, the system is regular and pins down the
/// component of `x` along the kernel through `rowᵀ x = target`.
pub fn bordered_solve(
    m: &CMat,
    col: &[Complex64],
    row: &[Complex64],
    rhs: &[Complex64],
    target: Complex64,
) -> Result<(Vec<Complex64>, Complex64)> {
    let n = m.nrows();
    let big = Mat::from_fn(n + 1, n + 1, |i, j| match (i < n, j < n) {
        (true, true) => m[(i, j)],
        (true, false) => col[i],
        (false, true) => row[j],
        (false, false) => ZERO,
    });
    let b = Col::from_fn(n + 1, |i| if i < n { rhs[i] } else { target });
    let x = big.partial_piv_lu().solve(&b);
    let sol: Vec<Complex64> = (0..n).map(|i| x[i]).collect();
    if sol.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Singular("bordered system".into()));
    }
    Ok((sol, x[n]))
}

pub fn solve(m: &CMat, rhs: &[Complex64]) -> Result<Vec<Complex64>> {
    let b = Col::from_fn(rhs.len(), |i| rhs[i]);
    let x = m.partial_piv_lu().solve(&b);
    let sol: Vec<Complex64> = (0..rhs.len()).map(|i| x[i]).collect();
    if sol.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Singular("linear solve".into()));
    }
    Ok(sol)
}

/// Neumaier-compensated sum; the result depends only on the input order.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
