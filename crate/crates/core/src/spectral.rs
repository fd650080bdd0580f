//! Top of the tilted spectrum: the principal eigenvalue `μ(z)` with its
//! right and left eigenvectors, cumulant derivatives, and the spectral
//! diagnostics used by the condition checks.

use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::discretize::{integer_time, GeneratorMatrix, TiltedFamily, TimeKind};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, EigenDecomposition, ONE, ZERO};

/// Degenerate-top threshold relative to `max(1, |μ|)`.
pub const DEGENERACY_THRESHOLD: f64 = 1e-8;

/// Principal eigen-triple of a tilted operator.
///
/// `mu` lives on the log scale: the generator eigenvalue for diffusions,
/// `ln κ` of the transfer-matrix eigenvalue `κ` for chains. `g` is scaled to
/// `‖g‖∞ = 1` with its largest entry real and positive, and `psi` to
/// `Σ ψ_i g_i · weight = 1`, so that `Π u = g ⟨ψ, u⟩` is the spectral
/// projector.
#[derive(Clone, Debug)]
pub struct SpectralTriple {
    pub z: Complex64,
    pub mu: Complex64,
    pub g: Vec<Complex64>,
    pub psi: Vec<Complex64>,
    /// `Re μ` minus the largest real part over the rest of the (log) spectrum.
    pub gap: f64,
    pub weight: f64,
    pub kind: TimeKind,
}

impl SpectralTriple {
    pub fn theta(&self) -> f64 {
        self.z.re
    }

    /// Eigenvalue of the operator itself (`e^μ` for transfer matrices).
    pub fn eigenvalue(&self) -> Complex64 {
        match self.kind {
            TimeKind::Continuous => self.mu,
            TimeKind::Discrete => self.mu.exp(),
        }
    }

    pub fn g_real(&self) -> Vec<f64> {
        self.g.iter().map(|z| z.re).collect()
    }

    pub fn psi_real(&self) -> Vec<f64> {
        self.psi.iter().map(|z| z.re).collect()
    }

    /// `⟨ψ, u⟩ = Σ ψ_i u_i · weight`.
    pub fn pairing(&self, u: &[Complex64]) -> Complex64 {
        self.psi.iter().zip(u).map(|(p, x)| p * x).sum::<Complex64>() * self.weight
    }

    pub fn pairing_real(&self, u: &[f64]) -> Complex64 {
        self.psi.iter().zip(u).map(|(p, x)| p * x).sum::<Complex64>() * self.weight
    }

    /// `ℓ(Π v) = g(x0) ⟨ψ, v⟩`.
    pub fn projected_functional(&self, start: usize, v: &[f64]) -> Complex64 {
        self.g[start] * self.pairing_real(v)
    }

    /// Matrix of `Π`: entries `g_i ψ_j · weight`.
    pub fn projector(&self) -> CMat {
        let n = self.g.len();
        Mat::from_fn(n, n, |i, j| self.g[i] * self.psi[j] * self.weight)
    }

    /// `‖G g − λ g‖∞` for the operator the triple was computed from.
    pub fn residual(&self, op: &GeneratorMatrix) -> f64 {
        let gg = linalg::mat_vec(&op.entries, &self.g);
        let lambda = self.eigenvalue();
        gg.iter()
            .zip(&self.g)
            .map(|(a, b)| (a - lambda * b).norm())
            .fold(0.0, f64::max)
    }
}

/// Position of an eigenvalue on the log scale used for ranking.
fn log_scale(kind: TimeKind, lambda: Complex64) -> Complex64 {
    match kind {
        TimeKind::Continuous => lambda,
        TimeKind::Discrete => lambda.ln(),
    }
}

/// Largest real part over the log spectrum.
pub fn spectral_abscissa(op: &GeneratorMatrix) -> Result<f64> {
    let values = linalg::eigenvalues(&op.entries)?;
    Ok(values
        .into_iter()
        .map(|l| log_scale(op.kind, l).re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Principal eigenvalue, its eigenvectors and the spectral gap.
pub fn top_eigen(op: &GeneratorMatrix) -> Result<SpectralTriple> {
    let n = op.len();
    if n == 0 {
        return Err(Error::Precondition("empty operator".into()));
    }
    let real = linalg::real_part_if_real(&op.entries);
    let symmetric = real.as_ref().is_some_and(linalg::is_symmetric);
    let dec = match (&real, symmetric) {
        (Some(r), true) => {
            let (values, vectors) = linalg::eigen_symmetric(r)?;
            EigenDecomposition {
                values: values.into_iter().map(|x| Complex64::new(x, 0.0)).collect(),
                vectors: linalg::to_complex(&vectors),
            }
        }
        _ => linalg::eigen(&op.entries)?,
    };
    let logs: Vec<Complex64> = dec.values.iter().map(|&l| log_scale(op.kind, l)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| logs[b].re.total_cmp(&logs[a].re));
    let top = order[0];
    let mu = logs[top];
    let gap = match order.get(1) {
        Some(&second) => {
            let gap = mu.re - logs[second].re;
            let threshold = DEGENERACY_THRESHOLD * mu.norm().max(1.0);
            if gap < threshold {
                return Err(Error::DegenerateTop {
                    first: mu,
                    second: logs[second],
                    threshold,
                });
            }
            gap
        }
        None => f64::INFINITY,
    };
    let mut g: Vec<Complex64> = (0..n).map(|i| dec.vectors[(i, top)]).collect();
    let peak = g
        .iter()
        .map(|z| z.norm())
        .enumerate()
        .fold((0, 0.0), |best, (i, m)| if m > best.1 { (i, m) } else { best })
        .0;
    let phase = g[peak].conj() / g[peak].norm_sqr();
    g.iter_mut().for_each(|z| *z *= phase);
    g[peak] = Complex64::new(1.0, 0.0);

    let real_tilt = op.tilt.im == 0.0 && real.is_some();
    if real_tilt {
        let worst = g.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        if worst < -1e-12 {
            return Err(Error::NotPositive(format!(
                "principal eigenvector has entry {worst:.3e} at real tilt {}",
                op.tilt.re
            )));
        }
        g.iter_mut().for_each(|z| *z = Complex64::new(z.re.max(0.0), 0.0));
    }

    let psi = if symmetric {
        let norm: f64 = g.iter().map(|z| z.re * z.re).sum::<f64>() * op.weight;
        g.iter().map(|z| z / norm).collect()
    } else {
        left_vector(op, dec.values[top], &g)?
    };
    let mut psi = psi;
    if real_tilt {
        psi.iter_mut().for_each(|z| *z = Complex64::new(z.re, 0.0));
    }
    Ok(SpectralTriple {
        z: op.tilt,
        mu,
        g,
        psi,
        gap,
        weight: op.weight,
        kind: op.kind,
    })
}

/// Left eigenvector for `lambda`, scaled so `Σ ψ_i g_i · weight = 1`.
fn left_vector(op: &GeneratorMatrix, lambda: Complex64, g: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = op.len();
    let shifted = Mat::from_fn(n, n, |i, j| {
        op.entries[(j, i)] - if i == j { lambda } else { ZERO }
    });
    let col: Vec<Complex64> = g.iter().map(|z| z.conj()).collect();
    let row: Vec<Complex64> = g.iter().map(|z| z * op.weight).collect();
    let (psi, _) = linalg::bordered_solve(&shifted, &col, &row, &vec![ZERO; n], Complex64::new(1.0, 0.0))?;
    Ok(psi)
}

pub fn triple_at(family: &TiltedFamily, z: Complex64) -> Result<SpectralTriple> {
    // G(z) = A + c(z) I: same eigenvectors as A, eigenvalues shifted by c(z).
    if let Some((b, v)) = family.scalar_tilt() {
        let mut triple = match family.base_top.get() {
            Some(t) => t.clone(),
            None => {
                let t = top_eigen(&family.base_generator())?;
                family.base_top.get_or_init(|| t).clone()
            }
        };
        triple.z = z;
        triple.mu += z * b + z * z * v * 0.5;
        return Ok(triple);
    }
    top_eigen(&family.operator(z))
}

/// `μ(θ)`, the log of the principal eigenvalue of the time-one tilted
/// semigroup.
pub fn cgf(family: &TiltedFamily, theta: f64) -> Result<f64> {
    Ok(triple_at(family, Complex64::new(theta, 0.0))?.mu.re)
}

/// `μ`, `μ'`, `μ''` at a real tilt by first- and second-order perturbation
/// of the principal eigenpair.
#[derive(Clone, Debug)]
pub struct CgfExpansion {
    pub theta: f64,
    pub mu: f64,
    pub first: f64,
    pub second: f64,
    pub triple: SpectralTriple,
}

pub fn cgf_exact(family: &TiltedFamily, theta: f64) -> Result<CgfExpansion> {
    let z = Complex64::new(theta, 0.0);
    let op = family.operator(z);
    let triple = triple_at(family, z)?;
    let n = family.len();
    let g = &triple.g;
    let psi = &triple.psi;
    let w = family.weight;
    let rate: Vec<f64> = family
        .drift
        .iter()
        .zip(&family.variance)
        .map(|(b, v)| b + theta * v)
        .collect();
    let lambda = triple.eigenvalue();
    let shifted = Mat::from_fn(n, n, |i, j| {
        op.entries[(i, j)] - if i == j { lambda } else { ZERO }
    });
    let row: Vec<Complex64> = psi.iter().map(|p| p * w).collect();
    let pair = |u: &[Complex64]| -> f64 { psi.iter().zip(u).map(|(p, x)| p * x).sum::<Complex64>().re * w };
    let (first, second) = match family.kind {
        TimeKind::Continuous => {
            let bg: Vec<Complex64> = rate.iter().zip(g).map(|(r, x)| x * r).collect();
            let first = pair(&bg);
            let rhs: Vec<Complex64> = rate.iter().zip(g).map(|(r, x)| x * (first - r)).collect();
            let (dg, _) = linalg::bordered_solve(&shifted, psi, &row, &rhs, ZERO)?;
            let vg: Vec<Complex64> = family.variance.iter().zip(g).map(|(v, x)| x * v).collect();
            let cross: Vec<Complex64> = rate.iter().zip(&dg).map(|(r, x)| x * (r - first)).collect();
            (first, pair(&vg) + 2.0 * pair(&cross))
        }
        TimeKind::Discrete => {
            // K(θ) = P diag(e^{θm + θ²v/2}); K' = K C, K'' = K (C² + V).
            let kappa = lambda.re;
            let cg: Vec<Complex64> = rate.iter().zip(g).map(|(c, x)| x * c).collect();
            let d1 = kappa * pair(&cg);
            let kcg = linalg::mat_vec(&op.entries, &cg);
            let rhs: Vec<Complex64> = g.iter().zip(&kcg).map(|(x, y)| x * d1 - y).collect();
            let (dg, _) = linalg::bordered_solve(&shifted, psi, &row, &rhs, ZERO)?;
            let c2g: Vec<Complex64> = rate
                .iter()
                .zip(&family.variance)
                .zip(g)
                .map(|((c, v), x)| x * (c * c + v))
                .collect();
            let cdg: Vec<Complex64> = rate.iter().zip(&dg).map(|(c, x)| x * c).collect();
            let d2 = kappa * pair(&c2g) + 2.0 * kappa * pair(&cdg);
            let first = d1 / kappa;
            (first, d2 / kappa - first * first)
        }
    };
    Ok(CgfExpansion {
        theta,
        mu: triple.mu.re,
        first,
        second,
        triple,
    })
}

/// Finite-difference step for cumulant derivatives.
pub const DERIVATIVE_STEP: f64 = 1e-3;
/// Relative agreement required between the two derivative routes.
pub const DERIVATIVE_TOLERANCE: f64 = 5e-3;
const DERIVATIVE_FLOOR: f64 = 1e-8;

/// `μ'` and `μ''` by Richardson-extrapolated central differences, with the
/// spectral values (`⟨ψ, (b + θσ²) g⟩` and the effective diffusivity)
/// attached as a cross-check.
#[derive(Clone, Debug, Serialize)]
pub struct CgfDerivatives {
    pub theta: f64,
    pub mu: f64,
    pub first: f64,
    pub second: f64,
    pub spectral_first: f64,
    pub spectral_second: f64,
}

pub fn cgf_derivatives(family: &TiltedFamily, theta: f64) -> Result<CgfDerivatives> {
    let h = DERIVATIVE_STEP;
    let mus: Vec<f64> = [-h, -0.5 * h, 0.0, 0.5 * h, h]
        .par_iter()
        .map(|d| cgf(family, theta + d))
        .collect::<Result<_>>()?;
    let d1 = |lo: f64, hi: f64, step: f64| (hi - lo) / (2.0 * step);
    let d2 = |lo: f64, hi: f64, step: f64| (hi - 2.0 * mus[2] + lo) / (step * step);
    let first = (4.0 * d1(mus[1], mus[3], 0.5 * h) - d1(mus[0], mus[4], h)) / 3.0;
    let second = (4.0 * d2(mus[1], mus[3], 0.5 * h) - d2(mus[0], mus[4], h)) / 3.0;

    let exact = cgf_exact(family, theta)?;
    let spectral_second = match family.kind {
        TimeKind::Continuous => crate::simulate::effective_diffusivity_from(family, &exact.triple)?.xi,
        TimeKind::Discrete => exact.second,
    };
    for (quantity, fd, sp) in [("mu'", first, exact.first), ("mu''", second, spectral_second)] {
        if (fd - sp).abs() > DERIVATIVE_TOLERANCE * sp.abs() + DERIVATIVE_FLOOR {
            return Err(Error::DerivativeMismatch {
                quantity,
                finite_difference: fd,
                spectral: sp,
            });
        }
    }
    Ok(CgfDerivatives {
        theta,
        mu: mus[2],
        first,
        second,
        spectral_first: exact.first,
        spectral_second,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct B3Sample {
    pub s: f64,
    /// `μ(θ) − max Re spec G(θ + is)`, positive when the condition holds.
    pub gap: f64,
}

pub fn check_b3(family: &TiltedFamily, theta: f64, s_list: &[f64]) -> Result<Vec<B3Sample>> {
    if let Some(s) = s_list.iter().find(|s| **s == 0.0 || !s.is_finite()) {
        return Err(Error::Precondition(format!("B3 needs nonzero finite s, got {s}")));
    }
    let mu = spectral_abscissa(&family.operator(Complex64::new(theta, 0.0)))?;
    s_list
        .par_iter()
        .map(|&s| {
            let top = spectral_abscissa(&family.operator(Complex64::new(theta, s)))?;
            Ok(B3Sample { s, gap: mu - top })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DecaySample {
    pub s: f64,
    pub t: f64,
    /// `‖exp(tG(θ+is))‖∞ / e^{tμ(θ)}`.
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayProfile {
    pub theta: f64,
    pub samples: Vec<DecaySample>,
    /// Every sample with `|s| > k` and `t ≥ 1` satisfies
    /// `ratio ≤ (1 − epsilon)^⌊t⌋`.
    pub k: f64,
    pub epsilon: f64,
}

/// Semigroup of `G − μ` (or `K / e^μ`) at time `t`, reusing powers of the
/// time-one matrix for integer times.
struct ScaledSemigroup {
    op: GeneratorMatrix,
    unit: Option<CMat>,
}

impl ScaledSemigroup {
    fn new(family: &TiltedFamily, z: Complex64, mu: Complex64) -> Self {
        let mut op = family.operator(z);
        let n = op.len();
        match op.kind {
            TimeKind::Continuous => {
                for i in 0..n {
                    op.entries[(i, i)] -= mu;
                }
            }
            TimeKind::Discrete => op.entries = linalg::scale(&op.entries, (-mu).exp()),
        }
        Self { op, unit: None }
    }

    fn at(&mut self, t: f64) -> Result<CMat> {
        if t >= 1.0 && t.fract() == 0.0 {
            if self.unit.is_none() {
                self.unit = Some(crate::discretize::semigroup_step(&self.op, 1.0)?);
            }
            return Ok(linalg::matrix_power(self.unit.as_ref().unwrap(), t as u64));
        }
        crate::discretize::semigroup_step(&self.op, t)
    }
}

pub fn decay_profile(family: &TiltedFamily, theta: f64, s_grid: &[f64], t_grid: &[f64]) -> Result<DecayProfile> {
    if s_grid.is_empty() || t_grid.is_empty() {
        return Err(Error::Precondition("decay profile needs nonempty s and t grids".into()));
    }
    if family.kind == TimeKind::Discrete {
        for &t in t_grid {
            integer_time(t)?;
        }
    }
    let mu = Complex64::new(cgf(family, theta)?, 0.0);
    let rows: Vec<Vec<DecaySample>> = s_grid
        .par_iter()
        .map(|&s| {
            let mut semigroup = ScaledSemigroup::new(family, Complex64::new(theta, s), mu);
            t_grid
                .iter()
                .map(|&t| {
                    let e = semigroup.at(t)?;
                    Ok(DecaySample { s, t, ratio: linalg::norm_inf(&e) })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let samples: Vec<DecaySample> = rows.into_iter().flatten().collect();
    let (k, epsilon) = fit_decay(&samples)?;
    Ok(DecayProfile { theta, samples, k, epsilon })
}

fn fit_decay(samples: &[DecaySample]) -> Result<(f64, f64)> {
    let usable: Vec<&DecaySample> = samples.iter().filter(|d| d.t >= 1.0).collect();
    if usable.is_empty() {
        return Err(Error::DecayFit("no samples with t >= 1".into()));
    }
    let mut thresholds: Vec<f64> = usable.iter().map(|d| d.s.abs()).collect();
    thresholds.push(0.0);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    for k in thresholds {
        let eps = usable
            .iter()
            .filter(|d| d.s.abs() > k)
            .map(|d| 1.0 - d.ratio.powf(1.0 / d.t.floor()))
            .fold(f64::INFINITY, f64::min);
        if !eps.is_finite() {
            break;
        }
        if eps > 0.0 {
            return Ok((k, eps));
        }
    }
    Err(Error::DecayFit(
        "no threshold K leaves a uniformly contracting remainder".into(),
    ))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DecompositionSample {
    pub t: f64,
    /// `‖R(t)‖∞ e^{−t Re μ}`.
    pub remainder: f64,
    /// `‖exp(tG)Π − e^{tμ}Π‖∞ e^{−t Re μ}`.
    pub consistency: f64,
    /// `max_{N=2,3} ‖R(t)^N − R(Nt)‖∞ e^{−Nt Re μ}`.
    pub power_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecompositionReport {
    pub theta: f64,
    pub s: f64,
    pub mu: (f64, f64),
    pub samples: Vec<DecompositionSample>,
    /// Per-unit-time contraction of the remainder between consecutive times.
    pub decay_factors: Vec<f64>,
}

/// Split `exp(tG(θ+is)) = e^{tμ} Π + R(t)` and check the remainder.
pub fn decomposition_check(family: &TiltedFamily, theta: f64, s: f64, t_list: &[f64]) -> Result<DecompositionReport> {
    let z = Complex64::new(theta, s);
    let triple = triple_at(family, z)?;
    let proj = triple.projector();
    let n = family.len();
    let complement = Mat::from_fn(n, n, |i, j| {
        (if i == j { ONE } else { ZERO }) - proj[(i, j)]
    });
    let mut times: Vec<f64> = t_list.to_vec();
    times.sort_by(f64::total_cmp);
    times.dedup();
    if family.kind == TimeKind::Discrete {
        for &t in &times {
            integer_time(t)?;
        }
    }
    let mut semigroup = ScaledSemigroup::new(family, z, triple.mu);
    let mut samples = Vec::with_capacity(times.len());
    for &t in &times {
        let e = semigroup.at(t)?;
        let r = &e * &complement;
        let consistency = linalg::max_abs_diff(&(&e * &proj), &proj);
        let mut power_residual: f64 = 0.0;
        if t > 0.0 {
            let mut power = r.clone();
            for m in 2..=3u32 {
                power = &power * &r;
                let direct = &semigroup.at(m as f64 * t)? * &complement;
                power_residual = power_residual.max(linalg::max_abs_diff(&power, &direct));
            }
        }
        samples.push(DecompositionSample {
            t,
            remainder: linalg::norm_inf(&r),
            consistency,
            power_residual,
        });
    }
    let decay_factors: Vec<f64> = samples
        .windows(2)
        .map(|w| (w[1].remainder / w[0].remainder).powf(1.0 / (w[1].t - w[0].t)))
        .collect();
    if let Some(f) = decay_factors.iter().find(|f| !(**f < 1.0)) {
        return Err(Error::NonDecayingRemainder(format!(
            "remainder contraction factor {f:.6} at θ = {theta}, s = {s}"
        )));
    }
    Ok(DecompositionReport {
        theta,
        s,
        mu: (triple.mu.re, triple.mu.im),
        samples,
        decay_factors,
    })
}
