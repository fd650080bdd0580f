//! Finite-dimensional generators: periodic-grid discretization of torus
//! diffusions, transfer matrices of finite chains, their exponential tilts
//! and semigroups, and invariant densities.

use std::io::Write;
use std::sync::OnceLock;

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;
use petgraph::algo::condensation;
use petgraph::graph::DiGraph;
use petgraph::Direction;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::linalg::{self, CMat};
use crate::model::{DiscreteChainSpec, Model, TorusDiffusionSpec};
use crate::spectral::SpectralTriple;

/// Regular grid with `n` points per coordinate on the unit torus.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PeriodicGrid {
    pub n: usize,
    pub dim: usize,
}

impl PeriodicGrid {
    pub fn new(n: usize, dim: usize) -> Result<Self> {
        if n < 8 || n % 2 != 0 {
            return Err(Error::Precondition(format!(
                "grid size must be even and at least 8, got {n}"
            )));
        }
        if !(1..=2).contains(&dim) {
            return Err(Error::Precondition(format!("dimension {dim} is not 1 or 2")));
        }
        Ok(Self { n, dim })
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Quadrature weight of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Coordinates of a flat index; the first coordinate varies slowest.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let h = self.spacing();
        match self.dim {
            1 => [idx as f64 * h, 0.0],
            _ => [(idx / self.n) as f64 * h, (idx % self.n) as f64 * h],
        }
    }

    pub fn coords(&self, idx: usize) -> [usize; 2] {
        match self.dim {
            1 => [idx, 0],
            _ => [idx / self.n, idx % self.n],
        }
    }

    /// Flat index of integer coordinates, wrapped periodically.
    pub fn index(&self, coords: [i64; 2]) -> usize {
        let n = self.n as i64;
        let c0 = coords[0].rem_euclid(n) as usize;
        match self.dim {
            1 => c0,
            _ => c0 * self.n + coords[1].rem_euclid(n) as usize,
        }
    }

    /// Flat index of the neighbour `offset` steps away along `axis`.
    pub fn neighbour(&self, idx: usize, axis: usize, offset: i64) -> usize {
        let c = self.coords(idx);
        let mut c = [c[0] as i64, c[1] as i64];
        c[axis] += offset;
        self.index(c)
    }

    /// Grid index nearest to a point of the torus.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut c = [0i64; 2];
        for (axis, &xi) in x.iter().enumerate().take(self.dim) {
            c[axis] = (xi * self.n as f64).round() as i64;
        }
        self.index(c)
    }

    pub fn tabulate(&self, field: &Field) -> Vec<f64> {
        (0..self.len())
            .map(|i| field.value(&self.point(i)[..self.dim]))
            .collect()
    }
}

/// Continuous-time generators produce semigroups `exp(tG)`; discrete-time
/// transfer matrices produce integer powers `Gᵗ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeKind {
    Continuous,
    Discrete,
}

#[derive(Clone, Debug)]
pub struct GeneratorMatrix {
    pub entries: CMat,
    pub tilt: Complex64,
    pub kind: TimeKind,
    /// Quadrature weight pairing grid functions: `⟨ψ, u⟩ = Σ ψ_i u_i · weight`.
    pub weight: f64,
}

impl GeneratorMatrix {
    pub fn tag(&self) -> &'static str {
        if self.tilt == Complex64::new(0.0, 0.0) {
            "base"
        } else {
            "tilted"
        }
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest absolute row sum; zero for a conservative generator.
    pub fn conservation_defect(&self) -> f64 {
        (0..self.len())
            .map(|i| {
                let target = match self.kind {
                    TimeKind::Continuous => 0.0,
                    TimeKind::Discrete => 1.0,
                };
                let s: Complex64 = (0..self.len()).map(|j| self.entries[(i, j)]).sum();
                (s - target).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Dump the matrix as CSV (`re` and `im` blocks side by side).
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        for i in 0..self.len() {
            let row: Vec<String> = (0..self.len())
                .flat_map(|j| {
                    let z = self.entries[(i, j)];
                    [format!("{:.14e}", z.re), format!("{:.14e}", z.im)]
                })
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Smallest grid that resolves every harmonic of the model.
pub fn min_grid_size(spec: &TorusDiffusionSpec) -> usize {
    let k = spec.max_harmonic().unwrap_or(0) as usize;
    let n = (4 * k).max(8);
    n + n % 2
}

/// Divergence-form central-difference discretization of
/// `½∇·(D∇u) + V_0·∇u` with `D = Σ V_i V_iᵀ`.
pub fn build_generator(spec: &TorusDiffusionSpec, grid: &PeriodicGrid) -> Result<GeneratorMatrix> {
    let base = base_generator(spec, grid)?;
    Ok(GeneratorMatrix {
        entries: linalg::to_complex(&base),
        tilt: Complex64::new(0.0, 0.0),
        kind: TimeKind::Continuous,
        weight: grid.cell_volume(),
    })
}

/// `G(z) = A + diag(z b + z² σ² / 2)`.
pub fn build_tilted_generator(
    spec: &TorusDiffusionSpec,
    grid: &PeriodicGrid,
    z: Complex64,
) -> Result<GeneratorMatrix> {
    let family = TiltedFamily::diffusion(spec, *grid)?;
    Ok(family.operator(z))
}

fn base_generator(spec: &TorusDiffusionSpec, grid: &PeriodicGrid) -> Result<Mat<f64>> {
    if spec.dim != grid.dim {
        return Err(Error::Precondition(format!(
            "{}-dimensional model on a {}-dimensional grid",
            spec.dim, grid.dim
        )));
    }
    let needed = min_grid_size(spec);
    if grid.n < needed {
        return Err(Error::GridTooCoarse {
            n: grid.n,
            reason: format!(
                "highest harmonic {} needs n >= {needed}",
                spec.max_harmonic().unwrap_or(0)
            ),
        });
    }
    let dim = grid.dim;
    let len = grid.len();
    let h = grid.spacing();
    let tensors: Vec<[[f64; 2]; 2]> = (0..len)
        .map(|i| spec.diffusion_tensor(&grid.point(i)[..dim]))
        .collect();
    if dim == 2 {
        let scale = tensors
            .iter()
            .map(|d| d[0][0].abs().max(d[1][1].abs()))
            .fold(0.0, f64::max);
        if tensors.iter().any(|d| d[0][1].abs() > 1e-14 * scale.max(1.0)) {
            return Err(Error::Unsupported(
                "two-dimensional models need a diagonal diffusion tensor".into(),
            ));
        }
    }
    let mut a = Mat::<f64>::zeros(len, len);
    for i in 0..len {
        let x = grid.point(i);
        let drift: Vec<f64> = spec.drift.iter().map(|f| f.value(&x[..dim])).collect();
        for axis in 0..dim {
            let up = grid.neighbour(i, axis, 1);
            let down = grid.neighbour(i, axis, -1);
            let d_up = 0.5 * (tensors[i][axis][axis] + tensors[up][axis][axis]);
            let d_down = 0.5 * (tensors[i][axis][axis] + tensors[down][axis][axis]);
            let to_up = 0.5 * d_up / (h * h) + drift[axis] / (2.0 * h);
            let to_down = 0.5 * d_down / (h * h) - drift[axis] / (2.0 * h);
            if to_up < 0.0 || to_down < 0.0 {
                return Err(Error::GridTooCoarse {
                    n: grid.n,
                    reason: format!(
                        "drift dominates diffusion at x = {:?} (negative off-diagonal rate)",
                        &x[..dim]
                    ),
                });
            }
            a[(i, up)] += to_up;
            a[(i, down)] += to_down;
        }
        let off: f64 = (0..len).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
        a[(i, i)] = -off;
    }
    Ok(a)
}

/// The one-parameter family `z ↦ G(z)` of a model, with everything needed to
/// assemble tilted operators and their `z`-derivatives.
#[derive(Clone, Debug)]
pub struct TiltedFamily {
    pub kind: TimeKind,
    /// Base generator `A` (diffusions) or transition matrix `P` (chains).
    pub base: Mat<f64>,
    /// Observable drift `b` on the grid, or per-state increment means.
    pub drift: Vec<f64>,
    /// `σ²` on the grid, or per-state increment variances.
    pub variance: Vec<f64>,
    pub weight: f64,
    pub grid: Option<PeriodicGrid>,
    /// Diagonal of the diffusion tensor at grid points (diffusions only).
    pub diffusivity: Vec<[f64; 2]>,
    pub spec: Option<TorusDiffusionSpec>,
    /// Principal triple of the base generator, shared by every tilt when
    /// the tilt is a scalar shift.
    pub(crate) base_top: OnceLock<SpectralTriple>,
}

impl TiltedFamily {
    pub fn new(model: &Model, grid_n: usize) -> Result<Self> {
        match model {
            Model::TorusDiffusion(spec) => Self::diffusion(spec, PeriodicGrid::new(grid_n, spec.dim)?),
            Model::DiscreteChain(chain) => Self::chain(chain),
        }
    }

    pub fn diffusion(spec: &TorusDiffusionSpec, grid: PeriodicGrid) -> Result<Self> {
        let base = base_generator(spec, &grid)?;
        let sigma = grid.tabulate(&spec.obs_noise);
        let diffusivity = (0..grid.len())
            .map(|i| {
                let d = spec.diffusion_tensor(&grid.point(i)[..grid.dim]);
                [d[0][0], d[1][1]]
            })
            .collect();
        Ok(Self {
            kind: TimeKind::Continuous,
            base,
            drift: grid.tabulate(&spec.obs_drift),
            variance: sigma.iter().map(|s| s * s).collect(),
            weight: grid.cell_volume(),
            grid: Some(grid),
            diffusivity,
            spec: Some(spec.clone()),
            base_top: OnceLock::new(),
        })
    }

    pub fn chain(chain: &DiscreteChainSpec) -> Result<Self> {
        let n = chain.n_states();
        let report = crate::model::validate_spec(&Model::DiscreteChain(chain.clone()), 0);
        report.into_result()?;
        Ok(Self {
            kind: TimeKind::Discrete,
            base: Mat::from_fn(n, n, |i, j| chain.transition[i][j]),
            drift: chain.increment_mean.clone(),
            variance: (0..n).map(|i| chain.variance(i)).collect(),
            weight: 1.0,
            grid: None,
            diffusivity: Vec::new(),
            spec: None,
            base_top: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.base.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Diagonal tilt factor: `z b + z² σ²/2` for generators, its exponential
    /// for transfer matrices.
    pub fn tilt_diagonal(&self, z: Complex64) -> Vec<Complex64> {
        self.drift
            .iter()
            .zip(&self.variance)
            .map(|(&b, &v)| {
                let c = z * b + z * z * v * 0.5;
                match self.kind {
                    TimeKind::Continuous => c,
                    TimeKind::Discrete => c.exp(),
                }
            })
            .collect()
    }

    pub fn operator(&self, z: Complex64) -> GeneratorMatrix {
        let diag = self.tilt_diagonal(z);
        let n = self.len();
        let entries = match self.kind {
            TimeKind::Continuous => Mat::from_fn(n, n, |i, j| {
                let a = Complex64::new(self.base[(i, j)], 0.0);
                if i == j {
                    a + diag[i]
                } else {
                    a
                }
            }),
            TimeKind::Discrete => Mat::from_fn(n, n, |i, j| self.base[(i, j)] * diag[j]),
        };
        GeneratorMatrix {
            entries,
            tilt: z,
            kind: self.kind,
            weight: self.weight,
        }
    }

    pub fn operator_real(&self, theta: f64) -> Mat<f64> {
        let diag = self.tilt_diagonal(Complex64::new(theta, 0.0));
        let n = self.len();
        match self.kind {
            TimeKind::Continuous => Mat::from_fn(n, n, |i, j| {
                self.base[(i, j)] + if i == j { diag[i].re } else { 0.0 }
            }),
            TimeKind::Discrete => Mat::from_fn(n, n, |i, j| self.base[(i, j)] * diag[j].re),
        }
    }

    /// `(b, σ²)` when both are the same at every grid point, so that the
    /// tilt is a scalar shift of the base generator.
    pub fn scalar_tilt(&self) -> Option<(f64, f64)> {
        if self.kind != TimeKind::Continuous {
            return None;
        }
        let b = self.drift[0];
        let v = self.variance[0];
        let same = self.drift.iter().all(|&x| x == b) && self.variance.iter().all(|&x| x == v);
        same.then_some((b, v))
    }

    pub fn base_generator(&self) -> GeneratorMatrix {
        GeneratorMatrix {
            entries: linalg::to_complex(&self.base),
            tilt: Complex64::new(0.0, 0.0),
            kind: self.kind,
            weight: self.weight,
        }
    }

    /// Weighted pairing `Σ ψ_i u_i · weight`.
    pub fn pairing(&self, psi: &[f64], u: &[f64]) -> f64 {
        linalg::compensated_sum(psi.iter().zip(u).map(|(p, x)| p * x * self.weight))
    }
}

/// `exp(tG)` for generators, `Gᵗ` (integer `t`) for transfer matrices.
pub fn semigroup_step(g: &GeneratorMatrix, t: f64) -> Result<CMat> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Precondition(format!("time must be nonnegative, got {t}")));
    }
    if t == 0.0 {
        return Ok(linalg::identity(g.len()));
    }
    match g.kind {
        TimeKind::Continuous => linalg::expm(&linalg::scale(&g.entries, Complex64::new(t, 0.0))),
        TimeKind::Discrete => Ok(linalg::matrix_power(&g.entries, integer_time(t)?)),
    }
}

pub(crate) fn integer_time(t: f64) -> Result<u64> {
    let r = t.round();
    if (t - r).abs() > 1e-9 || r < 0.0 {
        return Err(Error::Precondition(format!(
            "discrete-time chains need integer times, got {t}"
        )));
    }
    Ok(r as u64)
}

/// Stationary density: `ρ̄ ≥ 0`, `Σ ρ̄ · weight = 1`.
#[derive(Clone, Debug)]
pub struct InvariantDensity {
    pub values: Vec<f64>,
    pub grid: Option<PeriodicGrid>,
    pub weight: f64,
}

impl InvariantDensity {
    pub fn integral(&self) -> f64 {
        linalg::compensated_sum(self.values.iter().map(|r| r * self.weight))
    }

    pub fn expectation(&self, f: &[f64]) -> f64 {
        linalg::compensated_sum(self.values.iter().zip(f).map(|(r, x)| r * x * self.weight))
    }
}

/// Number of closed communicating classes of the jump structure, which is
/// the dimension of the null space of the (shifted) generator.
pub fn closed_classes(m: &Mat<f64>) -> usize {
    let n = m.nrows();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, 3 * n);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && m[(i, j)] > 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let dag = condensation(graph, true);
    dag.node_indices()
        .filter(|&c| dag.neighbors_directed(c, Direction::Outgoing).next().is_none())
        .count()
}

pub fn invariant_density(g: &GeneratorMatrix) -> Result<InvariantDensity> {
    let real = linalg::real_part_if_real(&g.entries)
        .ok_or_else(|| Error::Precondition("invariant density needs a real base generator".into()))?;
    let n = real.nrows();
    let classes = closed_classes(&real);
    if classes != 1 {
        return Err(Error::Reducible { dim: classes });
    }
    // Mᵀρ = 0 with the last equation replaced by normalization.
    let shift = match g.kind {
        TimeKind::Continuous => 0.0,
        TimeKind::Discrete => 1.0,
    };
    let mut system = Mat::from_fn(n, n, |i, j| real[(j, i)] - if i == j { shift } else { 0.0 });
    for j in 0..n {
        system[(n - 1, j)] = g.weight;
    }
    let mut rhs = Mat::<f64>::zeros(n, 1);
    rhs[(n - 1, 0)] = 1.0;
    let sol = system.partial_piv_lu().solve(&rhs);
    let mut values: Vec<f64> = (0..n).map(|i| sol[(i, 0)]).collect();
    let top = values.iter().cloned().fold(0.0, f64::max);
    if values.iter().any(|v| !v.is_finite()) || !(top > 0.0) {
        return Err(Error::Singular("stationary equations".into()));
    }
    if let Some(v) = values.iter().find(|&&v| v < -1e-10 * top) {
        return Err(Error::NotPositive(format!("stationary density has entry {v:.3e}")));
    }
    values.iter_mut().for_each(|v| *v = v.max(0.0));
    let total = linalg::compensated_sum(values.iter().map(|v| v * g.weight));
    values.iter_mut().for_each(|v| *v /= total);
    Ok(InvariantDensity {
        values,
        grid: None,
        weight: g.weight,
    })
}

/// Stationary density of a model, attached to its grid.
pub fn model_density(family: &TiltedFamily) -> Result<InvariantDensity> {
    let mut density = invariant_density(&family.base_generator())?;
    density.grid = family.grid;
    Ok(density)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, TAU};

    fn real(m: &CMat) -> Mat<f64> {
        linalg::real_part_if_real(m).unwrap()
    }

    #[test]
    fn grid_rejects_small_or_odd_sizes() {
        assert!(PeriodicGrid::new(6, 1).is_err());
        assert!(PeriodicGrid::new(9, 1).is_err());
        let g = PeriodicGrid::new(8, 2).unwrap();
        assert_eq!(g.len(), 64);
        assert_eq!(g.point(9), [0.125, 0.125]);
        assert_eq!(g.neighbour(0, 1, -1), 7);
        assert_eq!(g.nearest(&[0.99, 0.0]), 0);
    }

    #[test]
    fn laplacian_stencil_at_n8() {
        let grid = PeriodicGrid::new(8, 1).unwrap();
        let g = build_generator(&TorusDiffusionSpec::gaussian_baseline(), &grid).unwrap();
        let a = real(&g.entries);
        for i in 0..8 {
            assert_eq!(a[(i, i)], -64.0);
            assert_eq!(a[(i, (i + 1) % 8)], 32.0);
            assert_eq!(a[(i, (i + 7) % 8)], 32.0);
        }
        assert_eq!(g.tag(), "base");
    }

    #[test]
    fn generators_conserve_mass() {
        let mut spec = TorusDiffusionSpec::mathieu();
        spec.drift = vec![Field::sin(-1.0, 1)];
        spec.diffusion = vec![vec![Field::Fourier {
            offset: 1.0,
            terms: vec![crate::field::Harmonic { wave: vec![2], cos: 0.3, sin: 0.1 }],
        }]];
        let g = build_generator(&spec, &PeriodicGrid::new(64, 1).unwrap()).unwrap();
        assert!(g.conservation_defect() < 1e-10);
        let a = real(&g.entries);
        for i in 0..64 {
            for j in 0..64 {
                if i != j {
                    assert!(a[(i, j)] >= 0.0);
                }
            }
        }
    }

    #[test]
    fn nyquist_and_peclet_checks() {
        let mut spec = TorusDiffusionSpec::mathieu();
        spec.obs_drift = Field::cos(1.0, 5);
        let err = build_generator(&spec, &PeriodicGrid::new(16, 1).unwrap()).unwrap_err();
        assert!(matches!(err, Error::GridTooCoarse { .. }));
        spec.obs_drift = Field::cos(1.0, 1);
        spec.drift = vec![Field::Constant(50.0)];
        let err = build_generator(&spec, &PeriodicGrid::new(16, 1).unwrap()).unwrap_err();
        assert!(matches!(err, Error::GridTooCoarse { .. }), "{err}");
    }

    #[test]
    fn tilt_with_constant_coefficients_is_a_shift() {
        let spec = TorusDiffusionSpec::gaussian_baseline();
        let grid = PeriodicGrid::new(16, 1).unwrap();
        let base = build_generator(&spec, &grid).unwrap();
        let tilted = build_tilted_generator(&spec, &grid, Complex64::new(0.7, 0.0)).unwrap();
        assert_eq!(tilted.tag(), "tilted");
        for i in 0..16 {
            for j in 0..16 {
                let shift = if i == j { 0.245 } else { 0.0 };
                assert!((tilted.entries[(i, j)] - base.entries[(i, j)] - shift).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn semigroup_is_stochastic_and_positive() {
        let grid = PeriodicGrid::new(32, 1).unwrap();
        let family = TiltedFamily::diffusion(&TorusDiffusionSpec::mathieu(), grid).unwrap();
        let p = semigroup_step(&family.base_generator(), 0.5).unwrap();
        for i in 0..32 {
            let s: Complex64 = (0..32).map(|j| p[(i, j)]).sum();
            assert!((s.re - 1.0).abs() < 1e-12 && s.im.abs() < 1e-14);
        }
        let e = semigroup_step(&family.operator(Complex64::new(1.5, 0.0)), 1.0).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                assert!(e[(i, j)].re > 0.0);
            }
        }
        assert!(semigroup_step(&family.base_generator(), -1.0).is_err());
        assert_eq!(
            linalg::max_abs_diff(&semigroup_step(&family.base_generator(), 0.0).unwrap(), &linalg::identity(32)),
            0.0
        );
    }

    #[test]
    fn uniform_density_for_brownian_motion() {
        let family = TiltedFamily::diffusion(
            &TorusDiffusionSpec::gaussian_baseline(),
            PeriodicGrid::new(32, 1).unwrap(),
        )
        .unwrap();
        let rho = model_density(&family).unwrap();
        for v in &rho.values {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_drift_density_matches_closed_form() {
        let mut spec = TorusDiffusionSpec::gaussian_baseline();
        spec.drift = vec![Field::sin(-1.0, 1)];
        let family = TiltedFamily::diffusion(&spec, PeriodicGrid::new(256, 1).unwrap()).unwrap();
        let rho = model_density(&family).unwrap();
        // ρ̄ ∝ exp(cos(2πx)/π), normalized by the grid sum.
        let raw: Vec<f64> = (0..256).map(|i| ((TAU * i as f64 / 256.0).cos() / PI).exp()).collect();
        let z: f64 = raw.iter().sum::<f64>() / 256.0;
        let worst = raw
            .iter()
            .zip(&rho.values)
            .map(|(r, v)| (r / z - v).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-4, "max deviation {worst:e}");
        assert!((rho.integral() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_two_state_chain_density() {
        let family = TiltedFamily::chain(&DiscreteChainSpec::symmetric_coin()).unwrap();
        let rho = model_density(&family).unwrap();
        assert!((rho.values[0] - 0.5).abs() < 1e-15 && (rho.values[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reducible_chain_is_rejected() {
        let chain = DiscreteChainSpec {
            transition: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            increment_mean: vec![0.0, 1.0],
            increment_var: vec![],
        };
        let family = TiltedFamily::chain(&chain).unwrap();
        assert!(matches!(model_density(&family), Err(Error::Reducible { dim: 2 })));
    }

    #[test]
    fn chain_powers_need_integer_times() {
        let family = TiltedFamily::chain(&DiscreteChainSpec::checkerboard()).unwrap();
        let p2 = semigroup_step(&family.base_generator(), 2.0).unwrap();
        assert!(linalg::max_abs_diff(&p2, &linalg::identity(2)) < 1e-15);
        assert!(semigroup_step(&family.base_generator(), 1.5).is_err());
    }
}
