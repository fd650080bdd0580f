//! Legendre transform of the cumulant generating function: tail slope `a`
//! to tilt `θ_a`, rate `I(a) = aθ_a − μ(θ_a)` and curvature
//! `I''(a) = 1/μ''(θ_a)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::TiltedFamily;
use crate::error::{Error, Result};
use crate::spectral::{cgf_exact, CgfExpansion};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSettings {
    /// Initial upper end of the tilt bracket.
    #[serde(default = "default_theta_max")]
    pub theta_max: f64,
    /// The bracket doubles up to this tilt before `a` is declared out of range.
    #[serde(default = "default_theta_cap")]
    pub theta_cap: f64,
}

fn default_theta_max() -> f64 {
    8.0
}

fn default_theta_cap() -> f64 {
    64.0
}

impl Default for RateSettings {
    fn default() -> Self {
        Self {
            theta_max: default_theta_max(),
            theta_cap: default_theta_cap(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RatePoint {
    pub a: f64,
    pub theta_a: f64,
    pub rate: f64,
    pub rate_second: f64,
    /// `μ(θ_a)`, kept for downstream normalization.
    pub mu: f64,
}

impl RatePoint {
    /// `I(a) + μ(θ_a) − aθ_a`.
    pub fn duality_residual(&self) -> f64 {
        self.rate + self.mu - self.a * self.theta_a
    }
}

const ROOT_TOLERANCE: f64 = 1e-12;

/// `μ'` on `[0, θ_hi]` as explored: `(μ'(0), μ'(θ_hi), θ_hi)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AdmissibleRange {
    pub lower: f64,
    pub upper: f64,
    pub theta_hi: f64,
}

pub fn admissible_range(family: &TiltedFamily, settings: &RateSettings) -> Result<AdmissibleRange> {
    let lower = slope(family, 0.0)?.first;
    let theta_hi = settings.theta_max;
    let upper = slope(family, theta_hi)?.first;
    Ok(AdmissibleRange { lower, upper, theta_hi })
}

fn slope(family: &TiltedFamily, theta: f64) -> Result<CgfExpansion> {
    let e = cgf_exact(family, theta)?;
    if !(e.second > 0.0) {
        return Err(Error::NotConvex {
            theta,
            second: e.second,
        });
    }
    Ok(e)
}

/// Root of `μ'(θ) = a` on `(0, θ_hi)`: bisection, then Newton.
pub fn solve_theta(family: &TiltedFamily, a: f64, settings: &RateSettings) -> Result<f64> {
    Ok(solve(family, a, settings)?.theta)
}

fn solve(family: &TiltedFamily, a: f64, settings: &RateSettings) -> Result<CgfExpansion> {
    if !a.is_finite() {
        return Err(Error::Precondition(format!("tail slope {a} is not finite")));
    }
    let lower = slope(family, 0.0)?.first;
    let mut hi = settings.theta_max;
    let mut upper = slope(family, hi)?.first;
    while upper <= a && hi < settings.theta_cap {
        hi = (2.0 * hi).min(settings.theta_cap);
        upper = slope(family, hi)?.first;
    }
    if !(a > lower && a < upper) {
        return Err(Error::OutOfRange { a, lower, upper });
    }
    let mut lo = 0.0;
    while hi - lo > 1e-3 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if slope(family, mid)?.first < a {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut theta = 0.5 * (lo + hi);
    for _ in 0..50 {
        let e = slope(family, theta)?;
        let miss = e.first - a;
        if miss.abs() <= ROOT_TOLERANCE * a.abs().max(1.0) {
            return Ok(e);
        }
        if miss < 0.0 {
            lo = theta;
        } else {
            hi = theta;
        }
        let step = theta - miss / e.second;
        theta = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
    }
    Err(Error::NonConvergent {
        rounds: 50,
        detail: format!("Newton iteration for θ_a at a = {a}"),
    })
}

pub fn rate_point(family: &TiltedFamily, a: f64, settings: &RateSettings) -> Result<RatePoint> {
    let e = solve(family, a, settings)?;
    Ok(RatePoint {
        a,
        theta_a: e.theta,
        rate: a * e.theta - e.mu,
        rate_second: 1.0 / e.second,
        mu: e.mu,
    })
}

#[derive(Debug, Default)]
pub struct RateTable {
    pub rows: Vec<RatePoint>,
    /// Slopes that could not be solved, with the reason.
    pub failures: Vec<(f64, Error)>,
}

pub fn rate_table(family: &TiltedFamily, a_list: &[f64], settings: &RateSettings) -> RateTable {
    let results: Vec<(f64, Result<RatePoint>)> = a_list
        .par_iter()
        .map(|&a| (a, rate_point(family, a, settings)))
        .collect();
    let mut table = RateTable::default();
    for (a, r) in results {
        match r {
            Ok(p) => table.rows.push(p),
            Err(e) => table.failures.push((a, e)),
        }
    }
    table
}
