use num_complex::Complex64;
use serde::Serialize;

use super::{simulate_batch, tilted_dynamics_from, SimulationSettings, Start};
use crate::discretize::TiltedFamily;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::linalg::compensated_sum;
use crate::spectral::triple_at;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DecorrelationRow {
    pub t: f64,
    /// `(1/t) E_π[(Ỹ_t − c_θ t) · ∂ log g_θ(X̃_t)]`.
    pub statistic: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DecorrelationReport {
    pub theta: f64,
    pub c_theta: f64,
    pub rows: Vec<DecorrelationRow>,
    /// Smallest `C` with `|statistic| ≤ C/√t` on every row.
    pub envelope: f64,
}

/// Correlation between the centred tilted observable and the eigenfunction
/// log-gradient at the final state, started from the tilted stationary law.
pub fn decorrelation_check(
    family: &TiltedFamily,
    theta: f64,
    t_list: &[f64],
    settings: &SimulationSettings,
) -> Result<DecorrelationReport> {
    let triple = triple_at(family, Complex64::new(theta, 0.0))?;
    let grid = family
        .grid
        .ok_or_else(|| Error::Unsupported("decorrelation needs a torus diffusion".into()))?;
    if grid.dim != 1 {
        return Err(Error::Unsupported("decorrelation check is one-dimensional".into()));
    }
    let g = triple.g_real();
    let pi: Vec<f64> = triple.psi_real().iter().zip(&g).map(|(p, x)| p * x * family.weight).collect();
    let c_theta = compensated_sum(
        pi.iter()
            .zip(family.drift.iter().zip(&family.variance))
            .map(|(p, (b, v))| p * (b + theta * v)),
    );
    let mut times = t_list.to_vec();
    times.sort_by(f64::total_cmp);
    if times.is_empty() {
        return Ok(DecorrelationReport {
            theta,
            c_theta,
            rows: Vec::new(),
            envelope: 0.0,
        });
    }
    let dynamics = tilted_dynamics_from(family, &triple)?;
    let h = grid.spacing();
    let slope: Vec<f64> = (0..grid.len())
        .map(|i| (g[grid.neighbour(i, 0, 1)].ln() - g[grid.neighbour(i, 0, -1)].ln()) / (2.0 * h))
        .collect();
    let slope = Field::Tabulated { values: slope };
    let start = Start::Density { grid, masses: pi };
    let horizon = *times.last().unwrap();
    let batch = simulate_batch(&dynamics.spec, &start, horizon, &times, settings)?;
    let rows: Vec<DecorrelationRow> = batch
        .checkpoints
        .iter()
        .filter(|snap| snap.t > 0.0)
        .map(|snap| {
            let t = snap.t;
            let samples: Vec<f64> = snap
                .x
                .iter()
                .zip(&snap.y)
                .map(|(x, y)| (y - c_theta * t) * slope.value(&x[..1]) / t)
                .collect();
            let n = samples.len() as f64;
            let mean = compensated_sum(samples.iter().copied()) / n;
            let var = compensated_sum(samples.iter().map(|s| (s - mean) * (s - mean))) / (n - 1.0).max(1.0);
            DecorrelationRow {
                t,
                statistic: mean,
                stderr: (var / n).sqrt(),
            }
        })
        .collect();
    let envelope = rows.iter().map(|r| r.statistic.abs() * r.t.sqrt()).fold(0.0, f64::max);
    Ok(DecorrelationReport {
        theta,
        c_theta,
        rows,
        envelope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::PeriodicGrid;
    use crate::model::TorusDiffusionSpec;

    #[test]
    fn gaussian_statistic_vanishes() {
        let family = TiltedFamily::diffusion(
            &TorusDiffusionSpec::gaussian_baseline(),
            PeriodicGrid::new(32, 1).unwrap(),
        )
        .unwrap();
        let s = SimulationSettings::new(1e-2, 200, 3);
        let r = decorrelation_check(&family, 1.0, &[0.5, 1.0], &s).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert!(r.rows.iter().all(|row| row.statistic.abs() < 1e-9));
        let empty = decorrelation_check(&family, 1.0, &[], &s).unwrap();
        assert!(empty.rows.is_empty());
    }
}
