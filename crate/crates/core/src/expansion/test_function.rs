use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    /// `exp(−y²/(2w²))`.
    GaussianWindow { width: f64 },
    /// `e^{−βy}` for `y ≥ 0`, zero otherwise.
    OneSidedExponential { rate: f64 },
    /// `exp(−1/(1 − (y/w)²))` on `|y| < w`.
    Bump { width: f64 },
}

/// Smoothing function `f` for weak expectations `E[f(S_t − at)]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

impl TestFunction {
    pub fn new(shape: Shape) -> Self {
        Self { shape, amplitude: 1.0 }
    }

    pub fn zero(shape: Shape) -> Self {
        Self { shape, amplitude: 0.0 }
    }

    fn scale(&self) -> f64 {
        match self.shape {
            Shape::GaussianWindow { width } | Shape::Bump { width } => width,
            Shape::OneSidedExponential { rate } => rate,
        }
    }

    pub fn check(&self) -> Result<()> {
        let s = self.scale();
        if !(s > 0.0 && s.is_finite() && self.amplitude.is_finite()) {
            return Err(Error::Precondition(format!("test function parameters {self:?}")));
        }
        Ok(())
    }

    /// Number of continuous derivatives; `None` for smooth shapes.
    pub fn smoothness(&self) -> Option<u32> {
        match self.shape {
            Shape::OneSidedExponential { .. } => Some(0),
            _ => None,
        }
    }

    /// Exponential order: largest `α` with `e^{αy} f(y)` bounded as
    /// `y → +∞`. Infinite for compact or Gaussian decay.
    pub fn decay_order(&self) -> f64 {
        match self.shape {
            Shape::OneSidedExponential { rate } => rate,
            _ => f64::INFINITY,
        }
    }

    /// Polynomial moment weight of the class; always zero for the catalog.
    pub fn moment_order(&self) -> u32 {
        0
    }

    pub fn admissible_at(&self, theta: f64) -> Result<()> {
        self.check()?;
        let alpha = self.decay_order();
        if alpha > theta {
            Ok(())
        } else {
            Err(Error::Inadmissible(format!(
                "decay order {alpha} does not exceed the tilt {theta}"
            )))
        }
    }

    pub fn value(&self, y: f64) -> f64 {
        self.amplitude
            * match self.shape {
                Shape::GaussianWindow { width } => (-0.5 * (y / width).powi(2)).exp(),
                Shape::OneSidedExponential { rate } => {
                    if y >= 0.0 {
                        (-rate * y).exp()
                    } else {
                        0.0
                    }
                }
                Shape::Bump { width } => bump(y / width),
            }
    }

    /// Two-sided Laplace transform `∫ f(y) e^{−zy} dy`.
    pub fn transform(&self) -> impl Fn(Complex64) -> Complex64 + Sync {
        let amplitude = self.amplitude;
        let shape = self.shape;
        let rule = match shape {
            Shape::Bump { .. } => composite_legendre(BUMP_PANELS, BUMP_ORDER),
            _ => Vec::new(),
        };
        move |z: Complex64| -> Complex64 {
            let raw = match shape {
                Shape::GaussianWindow { width } => {
                    (z * z * (0.5 * width * width)).exp() * (width * std::f64::consts::TAU.sqrt())
                }
                Shape::OneSidedExponential { rate } => 1.0 / (z + rate),
                Shape::Bump { width } => rule
                    .iter()
                    .map(|&(x, w)| (-z * (x * width)).exp() * (w * width * bump(x)))
                    .sum(),
            };
            raw * amplitude
        }
    }
}

fn bump(u: f64) -> f64 {
    if u.abs() < 1.0 {
        (-1.0 / (1.0 - u * u)).exp()
    } else {
        0.0
    }
}

const BUMP_PANELS: usize = 32;
const BUMP_ORDER: usize = 16;

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
fn legendre(order: usize) -> Vec<(f64, f64)> {
    let n = order as f64;
    (1..=order)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=order {
                    let k = k as f64;
                    (p0, p1) = (p1, ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k);
                }
                dp = n * (x * p1 - p0) / (x * x - 1.0);
                let step = p1 / dp;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

fn composite_legendre(panels: usize, order: usize) -> Vec<(f64, f64)> {
    let base = legendre(order);
    let half = 1.0 / panels as f64;
    (0..panels)
        .flat_map(|p| {
            let mid = -1.0 + (2 * p + 1) as f64 * half;
            base.iter().map(move |&(x, w)| (mid + half * x, half * w))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let rule = legendre(8);
        let total: f64 = rule.iter().map(|p| p.1).sum();
        assert!((total - 2.0).abs() < 1e-14);
        let x14: f64 = rule.iter().map(|&(x, w)| w * x.powi(14)).sum();
        assert!((x14 - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn transforms_at_zero_are_integrals() {
        let g = TestFunction::new(Shape::GaussianWindow { width: 0.5 });
        assert!((g.transform()(Complex64::new(0.0, 0.0)).re - 0.5 * std::f64::consts::TAU.sqrt()).abs() < 1e-14);
        let e = TestFunction::new(Shape::OneSidedExponential { rate: 3.0 });
        assert!((e.transform()(Complex64::new(1.0, 0.0)).re - 0.25).abs() < 1e-15);
        // ∫ exp(−1/(1−u²)) du over (−1, 1)
        let b = TestFunction::new(Shape::Bump { width: 1.0 });
        assert!((b.transform()(Complex64::new(0.0, 0.0)).re - 0.443_993_816_168_079_4).abs() < 1e-12);
    }

    #[test]
    fn bump_transform_matches_gaussian_quadrature_shift() {
        // A real shift z = c multiplies by e^{−cy}; compare against a direct
        // midpoint sum.
        let b = TestFunction::new(Shape::Bump { width: 2.0 });
        let z = Complex64::new(0.7, 1.3);
        let m = 200_000;
        let direct: Complex64 = (0..m)
            .map(|k| {
                let y = -2.0 + 4.0 * (k as f64 + 0.5) / m as f64;
                (-z * y).exp() * b.value(y) * (4.0 / m as f64)
            })
            .sum();
        assert!((b.transform()(z) - direct).norm() < 1e-9);
    }

    #[test]
    fn admissibility() {
        let e = TestFunction::new(Shape::OneSidedExponential { rate: 2.0 });
        assert!(e.admissible_at(1.0).is_ok());
        assert!(matches!(e.admissible_at(2.0), Err(Error::Inadmissible(_))));
        assert!(TestFunction::new(Shape::GaussianWindow { width: 1.0 }).admissible_at(50.0).is_ok());
        assert!(TestFunction::new(Shape::Bump { width: -1.0 }).check().is_err());
    }

    #[test]
    fn serde_shape_is_tagged() {
        let f: TestFunction = serde_json::from_str(r#"{"shape":"bump","width":0.5}"#).unwrap();
        assert_eq!(f, TestFunction::new(Shape::Bump { width: 0.5 }));
        assert!(serde_json::from_str::<TestFunction>(r#"{"shape":"bump","widht":0.5}"#).is_err());
    }
}
