//! Fourier–Laplace inversion along the vertical line `Re z = θ`.
//!
//! For a kernel `k(z)` (either `1/z` for tails or the two-sided Laplace
//! transform of a test function) the normalized quantity
//! `e^{(aθ − μ(θ))t} E[...]` equals
//! `(1/π) ∫_0^∞ Re[ N_t(θ+is) e^{−isat} k(θ+is) ] ds`
//! with `N_t(z) = ℓ(exp(t(G(z) − μ(θ))) v)`. The integral is a trapezoid sum
//! whose step is halved until the result settles.

use std::collections::HashMap;

use faer::linalg::solvers::Solve;
use faer::{Col, Mat};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{integer_time, semigroup_step, TiltedFamily, TimeKind};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionSettings {
    /// Relative change between successive step halvings that ends refinement.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_rounds")]
    pub max_rounds: usize,
    #[serde(default = "default_nodes")]
    pub max_nodes: usize,
}

fn default_tol() -> f64 {
    1e-6
}

fn default_rounds() -> usize {
    10
}

fn default_nodes() -> usize {
    1 << 16
}

impl Default for InversionSettings {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_rounds: default_rounds(),
            max_nodes: default_nodes(),
        }
    }
}

/// `ℓ exp(tM) v = Σ_j w_j e^{t λ_j}`.
struct Modal {
    values: Vec<Complex64>,
    weights: Vec<Complex64>,
}

impl Modal {
    fn eval(&self, t: f64, shift: f64) -> Complex64 {
        self.values
            .iter()
            .zip(&self.weights)
            .map(|(l, w)| w * ((l - shift) * t).exp())
            .sum()
    }
}

const RECONSTRUCTION_TOLERANCE: f64 = 1e-10;

/// Modal expansion of `ℓ exp(tM) v`, or `None` when the eigenvectors are too
/// ill-conditioned to reproduce `v(x0)` at `t = 0`.
fn modal(m: &CMat, start: usize, v: &[Complex64]) -> Result<Option<Modal>> {
    let n = m.nrows();
    let (values, weights) = match linalg::real_part_if_real(m).filter(linalg::is_symmetric) {
        Some(real) => {
            let (vals, u) = linalg::eigen_symmetric(&real)?;
            let weights: Vec<Complex64> = (0..n)
                .map(|j| {
                    let proj: Complex64 = (0..n).map(|i| v[i] * u[(i, j)]).sum();
                    proj * u[(start, j)]
                })
                .collect();
            (vals.into_iter().map(|x| Complex64::new(x, 0.0)).collect(), weights)
        }
        None => {
            let dec = linalg::eigen(m)?;
            let rhs = Col::from_fn(n, |i| v[i]);
            let coef = dec.vectors.partial_piv_lu().solve(&rhs);
            let weights = (0..n).map(|j| dec.vectors[(start, j)] * coef[j]).collect();
            (dec.values, weights)
        }
    };
    let total: Complex64 = weights.iter().sum();
    let scale = v.iter().map(|z| z.norm()).fold(1.0, f64::max);
    if !((total - v[start]).norm() <= RECONSTRUCTION_TOLERANCE * scale) {
        return Ok(None);
    }
    Ok(Some(Modal { values, weights }))
}

/// `N_t(θ + is)` for every requested `t`.
pub(crate) struct NodeEvaluator<'a> {
    family: &'a TiltedFamily,
    start: usize,
    v: Vec<Complex64>,
    theta: f64,
    mu: f64,
    times: Vec<f64>,
    base: Option<Vec<Complex64>>,
}

impl<'a> NodeEvaluator<'a> {
    pub(crate) fn new(
        family: &'a TiltedFamily,
        start: usize,
        v: &[f64],
        theta: f64,
        mu: f64,
        times: &[f64],
    ) -> Result<Self> {
        if family.kind == TimeKind::Discrete {
            for &t in times {
                integer_time(t)?;
            }
        }
        let mut eval = Self {
            family,
            start,
            v: v.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
            theta,
            mu,
            times: times.to_vec(),
            base: None,
        };
        // Constant b and σ: G(z) = A + c(z) I, so ℓ exp(tA) v is shared.
        if family.scalar_tilt().is_some() {
            let base = family.base_generator();
            eval.base = Some(eval.propagate(&base.entries, 0.0)?);
        }
        Ok(eval)
    }

    /// `ℓ exp(t(M − shift)) v` for every time.
    fn propagate(&self, m: &CMat, shift: f64) -> Result<Vec<Complex64>> {
        if let Some(modal) = modal(m, self.start, &self.v)? {
            return Ok(self.times.iter().map(|&t| modal.eval(t, shift)).collect());
        }
        let n = m.nrows();
        let shifted = Mat::from_fn(n, n, |i, j| m[(i, j)] - if i == j { Complex64::new(shift, 0.0) } else { linalg::ZERO });
        let op = crate::discretize::GeneratorMatrix {
            entries: shifted,
            tilt: Complex64::new(0.0, 0.0),
            kind: TimeKind::Continuous,
            weight: self.family.weight,
        };
        self.times
            .iter()
            .map(|&t| {
                let e = semigroup_step(&op, t)?;
                Ok((0..n).map(|j| e[(self.start, j)] * self.v[j]).sum())
            })
            .collect()
    }

    pub(crate) fn eval(&self, s: f64) -> Result<Vec<Complex64>> {
        let z = Complex64::new(self.theta, s);
        match self.family.kind {
            TimeKind::Continuous => {
                if let (Some(base), Some((b, var))) = (&self.base, self.family.scalar_tilt()) {
                    let c = z * b + z * z * var * 0.5 - self.mu;
                    return Ok(self.times.iter().zip(base).map(|(&t, n)| n * (c * t).exp()).collect());
                }
                self.propagate(&self.family.operator(z).entries, self.mu)
            }
            TimeKind::Discrete => {
                let op = self.family.operator(z);
                let scaled = linalg::scale(&op.entries, Complex64::new((-self.mu).exp(), 0.0));
                let mut order: Vec<usize> = (0..self.times.len()).collect();
                order.sort_by(|&a, &b| self.times[a].total_cmp(&self.times[b]));
                let mut out = vec![linalg::ZERO; self.times.len()];
                let mut x = self.v.clone();
                let mut done = 0u64;
                for idx in order {
                    let target = self.times[idx].round() as u64;
                    while done < target {
                        x = linalg::mat_vec(&scaled, &x);
                        done += 1;
                    }
                    out[idx] = x[self.start];
                }
                Ok(out)
            }
        }
    }
}

/// Trapezoid evaluation of the normalized inversion integral for all times
/// at once. `kernel` is evaluated at `θ + is`.
pub(crate) fn saddle_line(
    eval: &NodeEvaluator,
    kernel: &(dyn Fn(Complex64) -> Complex64 + Sync),
    a: f64,
    curvature: f64,
    settings: &InversionSettings,
) -> Result<Vec<f64>> {
    let times = &eval.times;
    let t_max = times.iter().cloned().fold(0.0, f64::max);
    if !(times.iter().all(|&t| t > 0.0)) {
        return Err(Error::Precondition("inversion needs t > 0".into()));
    }
    let h0 = 1.0 / (t_max * curvature.max(1e-12)).sqrt().max(1.0);
    let mut cache: HashMap<u64, Vec<Complex64>> = HashMap::new();
    let mut previous: Option<Vec<f64>> = None;
    let mut change = f64::INFINITY;
    for level in 0..=settings.max_rounds {
        let h = h0 / f64::powi(2.0, level as i32);
        let sums = trapezoid(eval, kernel, a, h, settings, &mut cache)?;
        if let Some(prev) = &previous {
            change = prev
                .iter()
                .zip(&sums)
                .map(|(p, q)| (p - q).abs() / q.abs().max(f64::MIN_POSITIVE))
                .fold(0.0, f64::max);
            if change < settings.tol {
                return Ok(sums);
            }
        }
        previous = Some(sums);
    }
    Err(Error::NonConvergent {
        rounds: settings.max_rounds,
        detail: format!(
            "saddle-line quadrature still changes by {change:.3e} after halving the step; inspect the decay profile"
        ),
    })
}

const QUIET_NODES: usize = 4;
const BATCH: usize = 8;

fn trapezoid(
    eval: &NodeEvaluator,
    kernel: &(dyn Fn(Complex64) -> Complex64 + Sync),
    a: f64,
    h: f64,
    settings: &InversionSettings,
    cache: &mut HashMap<u64, Vec<Complex64>>,
) -> Result<Vec<f64>> {
    let times = &eval.times;
    let m = times.len();
    let term = |s: f64, n: &[Complex64]| -> Vec<Complex64> {
        let k = kernel(Complex64::new(eval.theta, s));
        times
            .iter()
            .zip(n)
            .map(|(&t, nt)| nt * Complex64::new(0.0, -s * a * t).exp() * k)
            .collect()
    };
    let mut sums = vec![0.0; m];
    let mut quiet = vec![0usize; m];
    let mut k = 0usize;
    loop {
        // Evaluate the next batch of nodes, reusing cached ones.
        let nodes: Vec<f64> = (k..k + BATCH).map(|j| j as f64 * h).collect();
        let missing: Vec<f64> = nodes.iter().cloned().filter(|s| !cache.contains_key(&s.to_bits())).collect();
        let fresh: Vec<(f64, Vec<Complex64>)> = missing
            .par_iter()
            .map(|&s| Ok((s, eval.eval(s)?)))
            .collect::<Result<_>>()?;
        for (s, n) in fresh {
            cache.insert(s.to_bits(), n);
        }
        for (j, &s) in nodes.iter().enumerate() {
            let values = term(s, &cache[&s.to_bits()]);
            let w = if k + j == 0 { 0.5 } else { 1.0 };
            for i in 0..m {
                sums[i] += w * h * values[i].re;
                if h * values[i].norm() < 0.01 * settings.tol * sums[i].abs() {
                    quiet[i] += 1;
                } else {
                    quiet[i] = 0;
                }
            }
            if quiet.iter().all(|&q| q >= QUIET_NODES) {
                return Ok(sums.iter().map(|x| x / std::f64::consts::PI).collect());
            }
        }
        k += BATCH;
        if k > settings.max_nodes {
            return Err(Error::NonConvergent {
                rounds: 0,
                detail: format!("integrand has not decayed after {k} nodes at step {h:.3e}"),
            });
        }
    }
}

/// Span of the lattice generated by the increments, if they are commensurate.
pub(crate) fn lattice_span(increments: &[f64]) -> Option<f64> {
    let scale = increments.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return None;
    }
    let tol = 1e-9 * scale;
    let mut span = 0.0f64;
    for &x in increments {
        let (mut p, mut q) = (span.max(x.abs()), span.min(x.abs()));
        while q > tol {
            let r = p % q;
            p = q;
            q = if r < tol || q - r < tol { 0.0 } else { r };
        }
        span = p;
    }
    (span > tol).then_some(span)
}

/// Largest lattice the periodic inversion will handle.
const MAX_LATTICE_POINTS: f64 = 1e6;

/// `e^{I n} P(S_n ≥ a n)` for a chain with lattice increments, by the
/// periodic trapezoid rule on `∫_{−π}^{π} Φ(θ'+iu) e^{−(θ'+iu)k₀} / (1 − e^{−(θ'+iu)}) du`.
pub(crate) fn lattice_tail(eval: &NodeEvaluator, a: f64, span: f64) -> Result<f64> {
    let [n] = eval.times[..] else {
        return Err(Error::Precondition("lattice inversion takes a single time".into()));
    };
    let family = eval.family;
    let theta = eval.theta;
    let lo = family.drift.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = family.drift.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = n * (hi - lo) / span + 1.0;
    if range > MAX_LATTICE_POINTS {
        return Err(Error::Unsupported(format!("lattice with {range:.0} points is too fine")));
    }
    let k0 = (a * n / span - 1e-9).ceil();
    let lattice_theta = theta * span;
    let integrand = |u: f64| -> Result<f64> {
        let w = Complex64::new(lattice_theta, u);
        let m = eval.eval(u / span)?[0];
        let phase = Complex64::new(theta * (a * n - span * k0), -u * k0).exp();
        Ok((m * phase / (1.0 - (-w).exp())).re)
    };
    let mut points = (2.0 * range).max(64.0).log2().ceil().exp2() as usize;
    let mut previous = f64::NAN;
    for _ in 0..12 {
        let values: Vec<f64> = (0..points)
            .into_par_iter()
            .map(|j| integrand(std::f64::consts::TAU * j as f64 / points as f64))
            .collect::<Result<_>>()?;
        let value = linalg::compensated_sum(values) / points as f64;
        if (value - previous).abs() <= 1e-13 * value.abs() {
            return Ok(value);
        }
        previous = value;
        points *= 2;
    }
    Err(Error::NonConvergent {
        rounds: 12,
        detail: "periodic lattice quadrature did not settle".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans() {
        assert_eq!(lattice_span(&[1.0, -1.0]), Some(1.0));
        assert!((lattice_span(&[0.5, 1.5, 0.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!((lattice_span(&[0.3, 0.7]).unwrap() - 0.1).abs() < 1e-9);
        assert_eq!(lattice_span(&[0.0, 0.0]), None);
    }
}
