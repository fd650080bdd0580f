//! Periodic scalar functions on the unit torus.
//!
//! Model coefficients are either closed forms from a small catalog
//! (constants, single harmonics, finite Fourier sums, and sums/products of
//! those) or values tabulated on a regular periodic grid. Every field can be
//! evaluated, differentiated and tabulated in dimension 1 or 2.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

/// One Fourier mode `cos * cos(2π k·x) + sin * sin(2π k·x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Harmonic {
    pub wave: Vec<i32>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Field {
    Constant(f64),
    /// `amplitude * cos(2π wave·x)`
    Cos { amplitude: f64, wave: Vec<i32> },
    /// `amplitude * sin(2π wave·x)`
    Sin { amplitude: f64, wave: Vec<i32> },
    Fourier {
        #[serde(default)]
        offset: f64,
        terms: Vec<Harmonic>,
    },
    /// Values on an `m` (or `m × m`, row-major, first coordinate slowest)
    /// periodic grid, linearly interpolated in between.
    Tabulated { values: Vec<f64> },
    Sum(Vec<Field>),
    Product(Vec<Field>),
}

impl Field {
    pub fn constant(value: f64) -> Self {
        Field::Constant(value)
    }

    pub fn cos(amplitude: f64, wave: i32) -> Self {
        Field::Cos {
            amplitude,
            wave: vec![wave],
        }
    }

    pub fn sin(amplitude: f64, wave: i32) -> Self {
        Field::Sin {
            amplitude,
            wave: vec![wave],
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Field::Constant(c) => *c,
            Field::Cos { amplitude, wave } => amplitude * (TAU * dot(wave, x)).cos(),
            Field::Sin { amplitude, wave } => amplitude * (TAU * dot(wave, x)).sin(),
            Field::Fourier { offset, terms } => {
                offset
                    + terms
                        .iter()
                        .map(|h| {
                            let phase = TAU * dot(&h.wave, x);
                            h.cos * phase.cos() + h.sin * phase.sin()
                        })
                        .sum::<f64>()
            }
            Field::Tabulated { values } => interpolate(values, x),
            Field::Sum(fields) => fields.iter().map(|f| f.value(x)).sum(),
            Field::Product(fields) => fields.iter().map(|f| f.value(x)).product(),
        }
    }

    /// Partial derivative along `axis`.
    pub fn partial(&self, x: &[f64], axis: usize) -> f64 {
        match self {
            Field::Constant(_) => 0.0,
            Field::Cos { amplitude, wave } => {
                -amplitude * TAU * wave_component(wave, axis) * (TAU * dot(wave, x)).sin()
            }
            Field::Sin { amplitude, wave } => {
                amplitude * TAU * wave_component(wave, axis) * (TAU * dot(wave, x)).cos()
            }
            Field::Fourier { terms, .. } => terms
                .iter()
                .map(|h| {
                    let phase = TAU * dot(&h.wave, x);
                    let k = TAU * wave_component(&h.wave, axis);
                    k * (h.sin * phase.cos() - h.cos * phase.sin())
                })
                .sum(),
            Field::Tabulated { values } => {
                let dim = x.len();
                let m = table_side(values.len(), dim).unwrap_or(1).max(1);
                let step = 1.0 / m as f64;
                let mut fwd = x.to_vec();
                let mut bwd = x.to_vec();
                fwd[axis] += step;
                bwd[axis] -= step;
                (interpolate(values, &fwd) - interpolate(values, &bwd)) / (2.0 * step)
            }
            Field::Sum(fields) => fields.iter().map(|f| f.partial(x, axis)).sum(),
            Field::Product(fields) => {
                let vals: Vec<f64> = fields.iter().map(|f| f.value(x)).collect();
                (0..fields.len())
                    .map(|i| {
                        let others: f64 = vals
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| *j != i)
                            .map(|(_, v)| v)
                            .product();
                        fields[i].partial(x, axis) * others
                    })
                    .sum()
            }
        }
    }

    /// Largest absolute wave number present, `None` for tabulated content.
    pub fn max_harmonic(&self) -> Option<u32> {
        match self {
            Field::Constant(_) => Some(0),
            Field::Cos { wave, .. } | Field::Sin { wave, .. } => Some(wave_norm(wave)),
            Field::Fourier { terms, .. } => {
                Some(terms.iter().map(|h| wave_norm(&h.wave)).max().unwrap_or(0))
            }
            Field::Tabulated { .. } => None,
            Field::Sum(fields) => fields
                .iter()
                .map(|f| f.max_harmonic())
                .try_fold(0, |acc, k| k.map(|k| acc.max(k))),
            Field::Product(fields) => fields
                .iter()
                .map(|f| f.max_harmonic())
                .try_fold(0, |acc, k| k.map(|k| acc + k)),
        }
    }

    /// Side length of every table contained in this field.
    pub fn table_sizes(&self, dim: usize, out: &mut Vec<Option<usize>>) {
        match self {
            Field::Tabulated { values } => out.push(table_side(values.len(), dim)),
            Field::Sum(fields) | Field::Product(fields) => {
                fields.iter().for_each(|f| f.table_sizes(dim, out))
            }
            _ => {}
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Field::Constant(c) => Some(*c),
            Field::Cos { amplitude, wave } | Field::Sin { amplitude, wave } => {
                if *amplitude == 0.0 || wave.iter().all(|&k| k == 0) {
                    Some(self.value(&vec![0.0; wave.len()]))
                } else {
                    None
                }
            }
            Field::Fourier { offset, terms } => terms
                .iter()
                .all(|h| (h.cos == 0.0 && h.sin == 0.0) || h.wave.iter().all(|&k| k == 0))
                .then(|| offset + terms.iter().map(|h| h.cos).sum::<f64>()),
            Field::Tabulated { values } => {
                let first = *values.first()?;
                values.iter().all(|&v| v == first).then_some(first)
            }
            Field::Sum(fields) => fields.iter().map(|f| f.constant_value()).sum(),
            Field::Product(fields) => fields.iter().map(|f| f.constant_value()).product(),
        }
    }

    /// `self + c`, folding the constant into the representation when possible.
    pub fn shifted(&self, c: f64) -> Field {
        match self {
            Field::Constant(v) => Field::Constant(v + c),
            Field::Fourier { offset, terms } => Field::Fourier {
                offset: offset + c,
                terms: terms.clone(),
            },
            Field::Tabulated { values } => Field::Tabulated {
                values: values.iter().map(|v| v + c).collect(),
            },
            Field::Sum(fields) => {
                let mut fields = fields.clone();
                match fields.iter_mut().find(|f| matches!(f, Field::Constant(_))) {
                    Some(Field::Constant(v)) => *v += c,
                    _ => fields.push(Field::Constant(c)),
                }
                Field::Sum(fields)
            }
            other => Field::Sum(vec![other.clone(), Field::Constant(c)]),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Field::Constant(c) => c.is_finite(),
            Field::Cos { amplitude, .. } | Field::Sin { amplitude, .. } => amplitude.is_finite(),
            Field::Fourier { offset, terms } => {
                offset.is_finite() && terms.iter().all(|h| h.cos.is_finite() && h.sin.is_finite())
            }
            Field::Tabulated { values } => values.iter().all(|v| v.is_finite()),
            Field::Sum(fields) | Field::Product(fields) => fields.iter().all(Field::is_finite),
        }
    }

    /// Every wave vector and table must match `dim`.
    pub fn dimension_consistent(&self, dim: usize) -> bool {
        match self {
            Field::Constant(_) => true,
            Field::Cos { wave, .. } | Field::Sin { wave, .. } => wave.len() == dim,
            Field::Fourier { terms, .. } => terms.iter().all(|h| h.wave.len() == dim),
            Field::Tabulated { values } => table_side(values.len(), dim).is_some(),
            Field::Sum(fields) | Field::Product(fields) => {
                fields.iter().all(|f| f.dimension_consistent(dim))
            }
        }
    }

    /// Largest jump in the second difference across the periodic seam of any
    /// contained table, relative to the largest interior second difference.
    /// Closed forms are periodic by construction and report 0.
    pub fn seam_defect(&self, dim: usize) -> f64 {
        match self {
            Field::Tabulated { values } => table_seam_defect(values, dim),
            Field::Sum(fields) | Field::Product(fields) => fields
                .iter()
                .map(|f| f.seam_defect(dim))
                .fold(0.0, f64::max),
            _ => 0.0,
        }
    }
}

fn dot(wave: &[i32], x: &[f64]) -> f64 {
    wave.iter().zip(x).map(|(&k, &xi)| k as f64 * xi).sum()
}

fn wave_component(wave: &[i32], axis: usize) -> f64 {
    wave.get(axis).copied().unwrap_or(0) as f64
}

fn wave_norm(wave: &[i32]) -> u32 {
    wave.iter().map(|k| k.unsigned_abs()).max().unwrap_or(0)
}

pub(crate) fn table_side(len: usize, dim: usize) -> Option<usize> {
    match dim {
        1 => (len > 0).then_some(len),
        2 => {
            let m = (len as f64).sqrt().round() as usize;
            (m > 0 && m * m == len).then_some(m)
        }
        _ => None,
    }
}

fn wrap_index(i: i64, m: usize) -> usize {
    i.rem_euclid(m as i64) as usize
}

/// Periodic linear (1-D) or bilinear (2-D) interpolation.
pub(crate) fn interpolate(values: &[f64], x: &[f64]) -> f64 {
    let dim = x.len();
    let Some(m) = table_side(values.len(), dim) else {
        return f64::NAN;
    };
    let locate = |xi: f64| {
        let u = xi.rem_euclid(1.0) * m as f64;
        let i = u.floor();
        (i as i64, u - i)
    };
    match dim {
        1 => {
            let (i, frac) = locate(x[0]);
            let a = values[wrap_index(i, m)];
            let b = values[wrap_index(i + 1, m)];
            a + frac * (b - a)
        }
        _ => {
            let (i, fi) = locate(x[0]);
            let (j, fj) = locate(x[1]);
            let at = |di: i64, dj: i64| values[wrap_index(i + di, m) * m + wrap_index(j + dj, m)];
            let lo = at(0, 0) + fj * (at(0, 1) - at(0, 0));
            let hi = at(1, 0) + fj * (at(1, 1) - at(1, 0));
            lo + fi * (hi - lo)
        }
    }
}

fn table_seam_defect(values: &[f64], dim: usize) -> f64 {
    let Some(m) = table_side(values.len(), dim) else {
        return f64::INFINITY;
    };
    if m < 4 {
        return 0.0;
    }
    let lines: Vec<Vec<f64>> = match dim {
        1 => vec![values.to_vec()],
        _ => {
            let mut lines = Vec::with_capacity(2 * m);
            for r in 0..m {
                lines.push(values[r * m..(r + 1) * m].to_vec());
                lines.push((0..m).map(|c| values[c * m + r]).collect());
            }
            lines
        }
    };
    let mut worst: f64 = 0.0;
    for line in &lines {
        let second = |i: usize| line[(i + 1) % m] - 2.0 * line[i] + line[(i + m - 1) % m];
        let interior = (1..m - 1).map(|i| second(i).abs()).fold(0.0, f64::max);
        let seam = second(0).abs().max(second(m - 1).abs());
        let scale = line.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
        let excess = (seam - 4.0 * interior).max(0.0) / scale;
        worst = worst.max(excess);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms_and_derivatives() {
        let f = Field::Fourier {
            offset: 0.5,
            terms: vec![Harmonic {
                wave: vec![2],
                cos: 1.0,
                sin: -0.5,
            }],
        };
        let x = [0.123];
        let h = 1e-6;
        let fd = (f.value(&[x[0] + h]) - f.value(&[x[0] - h])) / (2.0 * h);
        assert!((f.partial(&x, 0) - fd).abs() < 1e-6);
        assert_eq!(f.max_harmonic(), Some(2));

        let p = Field::Product(vec![Field::cos(1.0, 1), Field::sin(2.0, 3)]);
        let fd = (p.value(&[x[0] + h]) - p.value(&[x[0] - h])) / (2.0 * h);
        assert!((p.partial(&x, 0) - fd).abs() < 1e-5);
        assert_eq!(p.max_harmonic(), Some(4));
    }

    #[test]
    fn shifting_folds_constants() {
        assert_eq!(Field::Constant(1.0).shifted(-1.0), Field::Constant(0.0));
        let s = Field::cos(1.0, 1).shifted(2.0);
        assert!((s.value(&[0.0]) - 3.0).abs() < 1e-15);
        assert_eq!(Field::Sum(vec![Field::Constant(1.0)]).shifted(1.0).constant_value(), Some(2.0));
    }

    #[test]
    fn tabulated_interpolates_periodically() {
        let f = Field::Tabulated {
            values: vec![0.0, 1.0, 0.0, -1.0],
        };
        assert!((f.value(&[0.125]) - 0.5).abs() < 1e-15);
        assert!((f.value(&[0.875]) + 0.5).abs() < 1e-15);
        assert!((f.value(&[1.25]) - 1.0).abs() < 1e-15);
        assert_eq!(f.max_harmonic(), None);
    }

    #[test]
    fn seam_check_flags_sawtooth() {
        let smooth: Vec<f64> = (0..32).map(|i| (TAU * i as f64 / 32.0).cos()).collect();
        assert_eq!(Field::Tabulated { values: smooth }.seam_defect(1), 0.0);
        let saw: Vec<f64> = (0..32).map(|i| i as f64 / 32.0).collect();
        assert!(Field::Tabulated { values: saw }.seam_defect(1) > 0.1);
    }

    #[test]
    fn json_catalog_shape() {
        let f: Field = serde_json::from_str(r#"{"cos": {"amplitude": 1.0, "wave": [1]}}"#).unwrap();
        assert_eq!(f, Field::cos(1.0, 1));
        let c: Field = serde_json::from_str(r#"{"constant": 2.5}"#).unwrap();
        assert_eq!(c, Field::Constant(2.5));
        assert!(serde_json::from_str::<Field>(r#"{"cos": {"amplitude": 1.0, "wave": [1], "phase": 0}}"#).is_err());
    }
}
