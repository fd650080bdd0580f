use num_complex::Complex64;
use serde::Serialize;

use faer::Mat;

use crate::discretize::{TiltedFamily, TimeKind};
use crate::error::{Error, Result};
use crate::linalg;
use crate::spectral::{triple_at, SpectralTriple};

/// Solution of the tilted Poisson problem `Ã f = c_θ − (b + θσ²)`, with
/// `Ã` the generator of the Doob-transformed state process and
/// `⟨π_θ, f⟩ = 0`.
#[derive(Clone, Debug, Serialize)]
pub struct Corrector {
    pub theta: f64,
    pub f: Vec<f64>,
    pub c_theta: f64,
    /// `∫ [ |V∇f|² + σ² ] dπ_θ`.
    pub xi: f64,
    pub residual: f64,
    pub solvability: f64,
}

const SOLVABILITY_TOLERANCE: f64 = 1e-10;
const RESIDUAL_TOLERANCE: f64 = 1e-8;

pub fn effective_diffusivity(family: &TiltedFamily, theta: f64) -> Result<Corrector> {
    let triple = triple_at(family, Complex64::new(theta, 0.0))?;
    effective_diffusivity_from(family, &triple)
}

pub fn effective_diffusivity_from(family: &TiltedFamily, triple: &SpectralTriple) -> Result<Corrector> {
    let grid = match (family.kind, family.grid) {
        (TimeKind::Continuous, Some(grid)) => grid,
        _ => {
            return Err(Error::Unsupported(
                "effective diffusivity is defined for torus diffusions".into(),
            ))
        }
    };
    let theta = triple.theta();
    let n = family.len();
    let w = family.weight;
    let g = triple.g_real();
    if let Some(x) = g.iter().find(|x| !(**x > 0.0)) {
        return Err(Error::NotPositive(format!("eigenfunction value {x:.3e}")));
    }
    let mu = triple.mu.re;
    let pi: Vec<f64> = triple.psi_real().iter().zip(&g).map(|(p, x)| p * x).collect();
    let rate: Vec<f64> = family
        .drift
        .iter()
        .zip(&family.variance)
        .map(|(b, v)| b + theta * v)
        .collect();
    let c_theta = linalg::compensated_sum(pi.iter().zip(&rate).map(|(p, r)| p * r * w));
    let rhs: Vec<f64> = rate.iter().map(|r| c_theta - r).collect();
    let solvability = linalg::compensated_sum(pi.iter().zip(&rhs).map(|(p, r)| p * r * w)).abs();
    if solvability > SOLVABILITY_TOLERANCE * c_theta.abs().max(1.0) {
        return Err(Error::Solvability(format!(
            "π-weighted mean of the source is {solvability:.3e}"
        )));
    }
    let tilt = family.tilt_diagonal(Complex64::new(theta, 0.0));
    let doob = Mat::from_fn(n, n, |i, j| {
        if i == j {
            family.base[(i, i)] + tilt[i].re - mu
        } else {
            family.base[(i, j)] * g[j] / g[i]
        }
    });
    let cplx = |v: &[f64]| -> Vec<Complex64> { v.iter().map(|&x| Complex64::new(x, 0.0)).collect() };
    let row: Vec<Complex64> = pi.iter().map(|p| Complex64::new(p * w, 0.0)).collect();
    let (sol, _) = linalg::bordered_solve(&linalg::to_complex(&doob), &cplx(&pi), &row, &cplx(&rhs), Complex64::new(0.0, 0.0))?;
    let f: Vec<f64> = sol.iter().map(|z| z.re).collect();
    let residual = (0..n)
        .map(|i| {
            let s: f64 = (0..n).map(|j| doob[(i, j)] * f[j]).sum();
            (s - rhs[i]).abs()
        })
        .fold(0.0, f64::max);
    if residual > RESIDUAL_TOLERANCE * rhs.iter().fold(1.0f64, |m, r| m.max(r.abs())) {
        return Err(Error::Singular(format!("Poisson residual {residual:.3e}")));
    }
    let h = grid.spacing();
    let xi = linalg::compensated_sum((0..n).map(|i| {
        let mut q = family.variance[i];
        for axis in 0..grid.dim {
            let df = (f[grid.neighbour(i, axis, 1)] - f[grid.neighbour(i, axis, -1)]) / (2.0 * h);
            q += family.diffusivity[i][axis] * df * df;
        }
        w * pi[i] * q
    }));
    Ok(Corrector {
        theta,
        f,
        c_theta,
        xi,
        residual,
        solvability,
    })
}
