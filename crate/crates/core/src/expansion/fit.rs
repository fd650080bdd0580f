use faer::Mat;
use serde::Serialize;

use crate::error::{Error, Result};

/// Largest acceptable condition number of the equilibrated design matrix.
pub const MAX_CONDITION: f64 = 1e8;
/// Smallest ratio `t_max / t_min` accepted for a fit.
pub const MIN_SPAN: f64 = 8.0;

/// Coefficients of `Σ_k D_k t^{−(k+1/2)}`, `k = 0..=⌊r/2⌋`, fitted to a
/// normalized curve.
#[derive(Clone, Debug, Serialize)]
pub struct CoeffFit {
    pub a: f64,
    pub order: usize,
    pub coefficients: Vec<f64>,
    /// `‖W(Xc − y)‖ / ‖Wy‖`.
    pub residual: f64,
    pub condition: f64,
    /// Analytic leading coefficient, when known.
    pub d0_reference: Option<f64>,
    /// `|D_0 − reference| / reference`.
    pub d0_gap: Option<f64>,
    /// Relative change of `D_0` when the largest time is left out.
    pub stability: Option<f64>,
}

impl CoeffFit {
    pub fn d0(&self) -> f64 {
        self.coefficients[0]
    }
}

pub fn basis_size(order: usize) -> usize {
    order / 2 + 1
}

/// Weighted least squares; rows are scaled by `t^{(r+1)/2}` so every
/// equation reads `Σ_k D_k t^{r/2 − k} ≈ t^{(r+1)/2} y`.
fn solve(times: &[f64], values: &[f64], order: usize) -> Result<(Vec<f64>, f64, f64)> {
    let m = times.len();
    let k = basis_size(order);
    let power = (order as f64 + 1.0) / 2.0;
    let design = Mat::from_fn(m, k, |i, j| times[i].powf(power - j as f64 - 0.5));
    let rhs: Vec<f64> = times.iter().zip(values).map(|(t, y)| y * t.powf(power)).collect();
    let norms: Vec<f64> = (0..k)
        .map(|j| (0..m).map(|i| design[(i, j)].powi(2)).sum::<f64>().sqrt())
        .collect();
    let scaled = Mat::from_fn(m, k, |i, j| design[(i, j)] / norms[j]);
    let svd = scaled
        .thin_svd()
        .map_err(|e| Error::EigenSolver(format!("singular value decomposition: {e:?}")))?;
    let s = svd.S();
    let (u, v) = (svd.U(), svd.V());
    let smax = (0..k).map(|i| s[i]).fold(0.0, f64::max);
    let smin = (0..k).map(|i| s[i]).fold(f64::INFINITY, f64::min);
    let condition = smax / smin;
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { cond: condition });
    }
    let mut coef = vec![0.0; k];
    for p in 0..k {
        let proj: f64 = (0..m).map(|i| u[(i, p)] * rhs[i]).sum::<f64>() / s[p];
        for (j, c) in coef.iter_mut().enumerate() {
            *c += v[(j, p)] * proj;
        }
    }
    for (c, n) in coef.iter_mut().zip(&norms) {
        *c /= n;
    }
    let misfit: f64 = (0..m)
        .map(|i| {
            let fit: f64 = (0..k).map(|j| design[(i, j)] * coef[j]).sum();
            (fit - rhs[i]).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    let scale = rhs.iter().map(|r| r * r).sum::<f64>().sqrt();
    Ok((coef, misfit / scale.max(f64::MIN_POSITIVE), condition))
}

pub fn fit_coefficients(
    a: f64,
    times: &[f64],
    values: &[f64],
    order: usize,
    reference: Option<f64>,
) -> Result<CoeffFit> {
    let k = basis_size(order);
    if times.len() != values.len() {
        return Err(Error::Precondition("times and values differ in length".into()));
    }
    if times.len() < k + 2 {
        return Err(Error::Precondition(format!(
            "order {order} needs at least {} samples, got {}",
            k + 2,
            times.len()
        )));
    }
    if !times.iter().chain(values).all(|x| x.is_finite()) || !times.iter().all(|&t| t > 0.0) {
        return Err(Error::Precondition("fit samples must be finite with t > 0".into()));
    }
    let lo = times.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = times.iter().cloned().fold(0.0, f64::max);
    if hi / lo < MIN_SPAN {
        return Err(Error::Precondition(format!(
            "times span a factor {:.2}, need at least {MIN_SPAN}",
            hi / lo
        )));
    }
    let (coefficients, residual, condition) = solve(times, values, order)?;
    let mut order_idx: Vec<usize> = (0..times.len()).collect();
    order_idx.sort_by(|&i, &j| times[i].total_cmp(&times[j]));
    let keep = &order_idx[..order_idx.len() - 1];
    let stability = solve(
        &keep.iter().map(|&i| times[i]).collect::<Vec<_>>(),
        &keep.iter().map(|&i| values[i]).collect::<Vec<_>>(),
        order,
    )
    .ok()
    .map(|(c, _, _)| ((c[0] - coefficients[0]) / coefficients[0]).abs());
    let d0_gap = reference.map(|r| ((coefficients[0] - r) / r).abs());
    Ok(CoeffFit {
        a,
        order,
        coefficients,
        residual,
        condition,
        d0_reference: reference,
        d0_gap,
        stability,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_series() {
        let times: Vec<f64> = (2..=32).map(|k| 8.0 * k as f64).collect();
        let d = [0.4, -0.4, 1.2];
        let values: Vec<f64> = times
            .iter()
            .map(|t| d.iter().enumerate().map(|(k, c)| c * t.powf(-(k as f64 + 0.5))).sum())
            .collect();
        let fit = fit_coefficients(1.0, &times, &values, 4, Some(0.4)).unwrap();
        for (c, e) in fit.coefficients.iter().zip(d) {
            assert!((c - e).abs() < 1e-8 * e.abs(), "{fit:?}");
        }
        assert!(fit.residual < 1e-12 && fit.d0_gap.unwrap() < 1e-10);
        assert!(fit.stability.unwrap() < 1e-9);
    }

    #[test]
    fn order_zero_is_the_mean_of_scaled_values() {
        let times = [10.0, 40.0, 80.0];
        let values = [0.3, 0.2, 0.1];
        let fit = fit_coefficients(1.0, &times, &values, 0, None).unwrap();
        let mean = times.iter().zip(values).map(|(t, v)| t.sqrt() * v).sum::<f64>() / 3.0;
        assert!((fit.d0() - mean).abs() < 1e-14);
        assert_eq!(fit.coefficients.len(), 1);
    }

    #[test]
    fn preconditions() {
        assert!(fit_coefficients(1.0, &[10.0, 20.0, 40.0], &[1.0; 3], 0, None).is_err());
        assert!(fit_coefficients(1.0, &[10.0, 80.0], &[1.0; 2], 0, None).is_err());
        assert!(fit_coefficients(1.0, &[10.0, 40.0, 80.0, 100.0], &[1.0; 4], 4, None).is_err());
    }

    #[test]
    fn ill_conditioned_basis_is_rejected() {
        let times: Vec<f64> = (0..16).map(|k| 1.0 + 7.0 * k as f64 / 15.0).collect();
        let values = vec![1.0; 16];
        assert!(matches!(
            fit_coefficients(1.0, &times, &values, 24, None),
            Err(Error::IllConditioned { .. })
        ));
    }
}
