//! Tail probabilities and their expansion in powers of `t^{−1/2}`.

mod fit;
mod inversion;
mod test_function;

pub use fit::{basis_size, fit_coefficients, CoeffFit, MAX_CONDITION, MIN_SPAN};
pub use inversion::InversionSettings;
pub use test_function::{Shape, TestFunction};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::discretize::{integer_time, semigroup_step, TiltedFamily, TimeKind};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::EvaluationFrame;
use crate::rate::{rate_point, RatePoint, RateSettings};
use crate::spectral::{cgf, cgf_exact, triple_at};
use inversion::{lattice_span, lattice_tail, saddle_line, NodeEvaluator};

/// Largest `Re log E[e^{zY_t}]` returned on the linear scale.
pub const MGF_LOG_CAP: f64 = 700.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionSettings {
    #[serde(default)]
    pub rate: RateSettings,
    #[serde(default)]
    pub inversion: InversionSettings,
}

fn frame_vector(family: &TiltedFamily, frame: &EvaluationFrame) -> Result<Vec<f64>> {
    frame.validate(family.len())?;
    Ok(frame.test_vector(family.len()))
}

fn check_time(family: &TiltedFamily, t: f64) -> Result<()> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Precondition(format!("time must be positive, got {t}")));
    }
    if family.kind == TimeKind::Discrete {
        integer_time(t)?;
    }
    Ok(())
}

/// `ℓ(exp(t(G(z) − μ₀)) v)` together with `μ₀ = μ(Re z)`.
fn scaled_mgf(family: &TiltedFamily, frame: &EvaluationFrame, z: Complex64, t: f64) -> Result<(Complex64, f64)> {
    check_time(family, t)?;
    let v = frame_vector(family, frame)?;
    let mu0 = cgf(family, z.re)?;
    let op = family.operator(z);
    let shift = match family.kind {
        TimeKind::Continuous => Complex64::new(-mu0, 0.0),
        TimeKind::Discrete => Complex64::new((-mu0).exp(), 0.0),
    };
    let entries = match family.kind {
        TimeKind::Continuous => {
            let n = op.len();
            faer::Mat::from_fn(n, n, |i, j| op.entries[(i, j)] + if i == j { shift } else { linalg::ZERO })
        }
        TimeKind::Discrete => linalg::scale(&op.entries, shift),
    };
    let scaled = crate::discretize::GeneratorMatrix { entries, ..op };
    let e = semigroup_step(&scaled, t)?;
    let value = (0..family.len()).map(|j| e[(frame.start, j)] * v[j]).sum();
    Ok((value, mu0))
}

/// `E[e^{zY_t}]` from the start state of `frame`, paired with its test
/// vector. Fails with [`Error::MgfOverflow`] when the magnitude leaves the
/// double range; [`log_mgf`] covers that case.
pub fn mgf(family: &TiltedFamily, frame: &EvaluationFrame, z: Complex64, t: f64) -> Result<Complex64> {
    let log = log_mgf(family, frame, z, t)?;
    if log.re > MGF_LOG_CAP {
        return Err(Error::MgfOverflow { log_magnitude: log.re });
    }
    Ok(log.exp())
}

pub fn log_mgf(family: &TiltedFamily, frame: &EvaluationFrame, z: Complex64, t: f64) -> Result<Complex64> {
    let (value, mu0) = scaled_mgf(family, frame, z, t)?;
    Ok(value.ln() + mu0 * t)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TailPoint {
    pub t: f64,
    pub probability: f64,
    pub log_probability: f64,
    /// `e^{I(a)t} P(S_t ≥ at)`.
    pub normalized: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TailCurve {
    pub a: f64,
    pub rate: RatePoint,
    pub points: Vec<TailPoint>,
}

impl TailCurve {
    pub fn times(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    pub fn normalized(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.normalized).collect()
    }
}

/// How a model's tail is inverted.
enum Route {
    Line { curvature: f64 },
    Lattice { span: f64 },
}

fn route(family: &TiltedFamily, theta: f64) -> Result<Route> {
    if family.kind == TimeKind::Discrete {
        let zero = family.variance.iter().filter(|&&v| v == 0.0).count();
        if zero == family.len() {
            let span = lattice_span(&family.drift)
                .ok_or_else(|| Error::Unsupported("chain increments are all zero".into()))?;
            return Ok(Route::Lattice { span });
        }
        if zero > 0 {
            return Err(Error::Unsupported(
                "chains mixing atomic and Gaussian increments cannot be inverted".into(),
            ));
        }
    }
    Ok(Route::Line {
        curvature: cgf_exact(family, theta)?.second,
    })
}

/// Normalized values `e^{I t} E[...]` for a kernel on the saddle line.
fn normalized_values(
    family: &TiltedFamily,
    frame: &EvaluationFrame,
    point: &RatePoint,
    times: &[f64],
    kernel: &(dyn Fn(Complex64) -> Complex64 + Sync),
    lattice_ok: bool,
    settings: &InversionSettings,
) -> Result<Vec<f64>> {
    for &t in times {
        check_time(family, t)?;
    }
    let v = frame_vector(family, frame)?;
    let (theta, mu) = (point.theta_a, point.mu);
    match route(family, theta)? {
        Route::Line { curvature } => {
            let eval = NodeEvaluator::new(family, frame.start, &v, theta, mu, times)?;
            saddle_line(&eval, kernel, point.a, curvature, settings)
        }
        Route::Lattice { span } if lattice_ok => times
            .iter()
            .map(|&t| {
                let eval = NodeEvaluator::new(family, frame.start, &v, theta, mu, &[t])?;
                lattice_tail(&eval, point.a, span)
            })
            .collect(),
        Route::Lattice { .. } => Err(Error::Unsupported(
            "weak expectations need a non-lattice observable".into(),
        )),
    }
}

/// `P(S_t ≥ at)` and its normalization for every `t` in `times`.
pub fn tail_curve(
    family: &TiltedFamily,
    frame: &EvaluationFrame,
    a: f64,
    times: &[f64],
    settings: &ExpansionSettings,
) -> Result<TailCurve> {
    let point = rate_point(family, a, &settings.rate)?;
    let kernel = |z: Complex64| 1.0 / z;
    let values = normalized_values(family, frame, &point, times, &kernel, true, &settings.inversion)?;
    let points = times
        .iter()
        .zip(values)
        .map(|(&t, normalized)| {
            let log_probability = normalized.ln() - point.rate * t;
            TailPoint {
                t,
                probability: log_probability.exp(),
                log_probability,
                normalized,
            }
        })
        .collect();
    Ok(TailCurve { a, rate: point, points })
}

pub fn exact_tail(
    family: &TiltedFamily,
    frame: &EvaluationFrame,
    a: f64,
    t: f64,
    settings: &ExpansionSettings,
) -> Result<f64> {
    Ok(tail_curve(family, frame, a, &[t], settings)?.points[0].probability)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LeadingCoefficient {
    pub a: f64,
    pub d0: f64,
    pub theta_a: f64,
    pub rate_second: f64,
    /// `ℓ(Π v) = g(x0) ⟨ψ, v⟩`.
    pub projected: f64,
    /// The same functional computed as if `ψ` were proportional to `g`;
    /// differs from `projected` for non-reversible models.
    pub symmetric_projected: f64,
    /// `θ_a` is close enough to zero that `D_0` is dominated by `1/θ_a`.
    pub near_boundary: bool,
}

const BOUNDARY_TILT: f64 = 1e-3;

pub fn leading_coefficient(
    family: &TiltedFamily,
    frame: &EvaluationFrame,
    a: f64,
    settings: &RateSettings,
) -> Result<LeadingCoefficient> {
    if let Route::Lattice { .. } = route(family, 0.0)? {
        return Err(Error::Unsupported(
            "lattice observables have no single leading coefficient".into(),
        ));
    }
    let v = frame_vector(family, frame)?;
    let point = rate_point(family, a, settings)?;
    if !(point.theta_a > 0.0) {
        return Err(Error::OutOfRange {
            a,
            lower: a,
            upper: a,
        });
    }
    let triple = triple_at(family, Complex64::new(point.theta_a, 0.0))?;
    let projected = triple.projected_functional(frame.start, &v).re;
    let g = triple.g_real();
    let w = family.weight;
    let norm: f64 = g.iter().map(|x| x * x * w).sum();
    let symmetric_projected = g[frame.start] * g.iter().zip(&v).map(|(x, y)| x * y * w).sum::<f64>() / norm;
    let d0 = projected * point.rate_second.sqrt() / (point.theta_a * std::f64::consts::TAU.sqrt());
    Ok(LeadingCoefficient {
        a,
        d0,
        theta_a: point.theta_a,
        rate_second: point.rate_second,
        projected,
        symmetric_projected,
        near_boundary: point.theta_a < BOUNDARY_TILT,
    })
}

/// Tail curve over `times` and the fitted coefficients `D_0..D_⌊r/2⌋`.
pub fn extract_coefficients(
    family: &TiltedFamily,
    frame: &EvaluationFrame,
    a: f64,
    times: &[f64],
    order: usize,
    settings: &ExpansionSettings,
) -> Result<(TailCurve, CoeffFit)> {
    let need = basis_size(order) + 2;
    if times.len() < need {
        return Err(Error::Precondition(format!(
            "order {order} needs at least {need} times, got {}",
            times.len()
        )));
    }
    let reference = leading_coefficient(family, frame, a, &settings.rate)?.d0;
    let curve = tail_curve(family, frame, a, times, settings)?;
    let fit = fit_coefficients(a, &curve.times(), &curve.normalized(), order, Some(reference))?;
    Ok((curve, fit))
}

/// `e^{I(a)t} E[f(S_t − at)]` for every `t` in `times`.
pub fn weak_curve(
    family: &TiltedFamily,
    frame: &EvaluationFrame,
    f: &TestFunction,
    a: f64,
    times: &[f64],
    settings: &ExpansionSettings,
) -> Result<Vec<f64>> {
    let point = rate_point(family, a, &settings.rate)?;
    f.admissible_at(point.theta_a)?;
    if f.amplitude == 0.0 {
        for &t in times {
            check_time(family, t)?;
        }
        return Ok(vec![0.0; times.len()]);
    }
    let kernel = f.transform();
    normalized_values(family, frame, &point, times, &kernel, false, &settings.inversion)
}

pub fn weak_expectation(
    family: &TiltedFamily,
    frame: &EvaluationFrame,
    f: &TestFunction,
    a: f64,
    t: f64,
    settings: &ExpansionSettings,
) -> Result<f64> {
    Ok(weak_curve(family, frame, f, a, &[t], settings)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::PeriodicGrid;
    use crate::model::{DiscreteChainSpec, TorusDiffusionSpec};

    fn gaussian(n: usize) -> TiltedFamily {
        TiltedFamily::diffusion(&TorusDiffusionSpec::gaussian_baseline(), PeriodicGrid::new(n, 1).unwrap()).unwrap()
    }

    fn upper_normal(x: f64) -> f64 {
        0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
    }

    #[test]
    fn gaussian_mgf() {
        let f = gaussian(16);
        let frame = EvaluationFrame::default();
        assert!((mgf(&f, &frame, Complex64::new(0.0, 0.0), 3.0).unwrap() - 1.0).norm() < 1e-12);
        let m = mgf(&f, &frame, Complex64::new(1.5, 0.0), 2.0).unwrap();
        assert!((m.re - (2.25f64).exp()).abs() < 1e-11 * 2.25f64.exp());
        let m = mgf(&f, &frame, Complex64::new(0.0, 1.0), 1.0).unwrap();
        assert!((m.norm() - (-0.5f64).exp()).abs() < 1e-12);
        assert!(matches!(
            mgf(&f, &frame, Complex64::new(10.0, 0.0), 20.0),
            Err(Error::MgfOverflow { .. })
        ));
        let log = log_mgf(&f, &frame, Complex64::new(10.0, 0.0), 20.0).unwrap();
        assert!((log.re - 1000.0).abs() < 1e-9);
        assert!(mgf(&f, &frame, Complex64::new(1.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn gaussian_tail() {
        let f = gaussian(16);
        let frame = EvaluationFrame::default();
        let s = ExpansionSettings::default();
        let p = exact_tail(&f, &frame, 1.0, 16.0, &s).unwrap();
        assert!((p - upper_normal(4.0)).abs() < 1e-6 * p, "{p:e}");
        let curve = tail_curve(&f, &frame, 2.0, &[1.0, 4.0, 9.0], &s).unwrap();
        for p in &curve.points {
            let exact = upper_normal(2.0 * p.t.sqrt());
            assert!((p.probability - exact).abs() < 1e-6 * exact, "{p:?}");
        }
        assert!(exact_tail(&f, &frame, 1.0, 0.0, &s).is_err());
        assert!(exact_tail(&f, &frame, 1.0, -1.0, &s).is_err());
    }

    #[test]
    fn coin_tail_is_binomial() {
        let f = TiltedFamily::chain(&DiscreteChainSpec::symmetric_coin()).unwrap();
        let p = exact_tail(&f, &EvaluationFrame::default(), 0.6, 10.0, &ExpansionSettings::default()).unwrap();
        assert!((p - 56.0 / 1024.0).abs() < 1e-12, "{p}");
        assert!(exact_tail(&f, &EvaluationFrame::default(), 0.6, 10.5, &ExpansionSettings::default()).is_err());
    }

    #[test]
    fn gaussian_leading_coefficient() {
        let f = gaussian(16);
        let frame = EvaluationFrame::default();
        let r = RateSettings::default();
        let d = leading_coefficient(&f, &frame, 1.0, &r).unwrap();
        assert!((d.d0 - 1.0 / std::f64::consts::TAU.sqrt()).abs() < 1e-12);
        let d = leading_coefficient(&f, &frame, 2.0, &r).unwrap();
        assert!((d.d0 - 0.5 / std::f64::consts::TAU.sqrt()).abs() < 1e-12);
        assert!((d.projected - d.symmetric_projected).abs() < 1e-12);
        assert!(leading_coefficient(&f, &frame, 1e-5, &r).unwrap().near_boundary);
        let coin = TiltedFamily::chain(&DiscreteChainSpec::symmetric_coin()).unwrap();
        assert!(matches!(leading_coefficient(&coin, &frame, 0.5, &r), Err(Error::Unsupported(_))));
    }

    #[test]
    fn weak_expectation_of_one_sided_exponential() {
        // E[e^{−β(S−c)}; S ≥ c] = e^{βc + β²t/2} Φ̄((c + βt)/√t), S ~ N(0, t)
        let f = gaussian(16);
        let frame = EvaluationFrame::default();
        let s = ExpansionSettings::default();
        let beta = 2.0;
        let test = TestFunction::new(Shape::OneSidedExponential { rate: beta });
        let t = 16.0;
        let got = weak_expectation(&f, &frame, &test, 1.0, t, &s).unwrap();
        let c = t;
        let log_exact = beta * c + beta * beta * t / 2.0 + upper_normal((c + beta * t) / t.sqrt()).ln() + t / 2.0;
        assert!((got.ln() - log_exact).abs() < 1e-6, "{got:e} {:e}", log_exact.exp());
        let zero = TestFunction::zero(Shape::Bump { width: 1.0 });
        assert_eq!(weak_expectation(&f, &frame, &zero, 1.0, t, &s).unwrap(), 0.0);
        let narrow = TestFunction::new(Shape::OneSidedExponential { rate: 0.5 });
        assert!(matches!(
            weak_expectation(&f, &frame, &narrow, 1.0, t, &s),
            Err(Error::Inadmissible(_))
        ));
    }

    #[test]
    fn weak_expectation_of_gaussian_window() {
        // S − at ~ N(−at, t) convolved with the window: closed form.
        let f = gaussian(16);
        let w = 0.7;
        let test = TestFunction::new(Shape::GaussianWindow { width: w });
        let (a, t) = (1.0, 9.0);
        let got = weak_expectation(&f, &EvaluationFrame::default(), &test, a, t, &ExpansionSettings::default()).unwrap();
        let var = t + w * w;
        let exact = (w * w / var).sqrt() * (-(a * t).powi(2) / (2.0 * var)).exp() * (a * a * t / 2.0).exp();
        assert!((got - exact).abs() < 1e-6 * exact, "{got} {exact}");
    }
}
