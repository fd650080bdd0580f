//! Monte Carlo for torus diffusions: Euler–Maruyama paths, the
//! eigenfunction-tilted dynamics, importance-sampled and naive tail
//! estimators, and the corrector behind the effective diffusivity.

mod decorrelation;
mod diffusivity;

pub use decorrelation::{decorrelation_check, DecorrelationReport, DecorrelationRow};
pub use diffusivity::{effective_diffusivity, effective_diffusivity_from, Corrector};

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{PeriodicGrid, TiltedFamily};
use crate::error::{Error, Result};
use crate::field::{interpolate, Field};
use crate::linalg::compensated_sum;
use crate::model::{EvaluationFrame, TorusDiffusionSpec};
use crate::rate::{rate_point, RateSettings};
use crate::spectral::{triple_at, SpectralTriple};

/// Which Itô drift realizes the model's state dynamics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftConvention {
    /// `V_0 + ½∇·D`: the process generated by the divergence-form
    /// operator `½∇·(D∇u) + V_0·∇u`.
    #[default]
    DivergenceForm,
    /// `V_0 + ½Σ(V_i·∇)V_i`: Stratonovich reading of `V_i ∘ dW_i`.
    Stratonovich,
    /// `V_0` as written.
    Ito,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSettings {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub convention: DriftConvention,
}

impl SimulationSettings {
    pub fn new(dt: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            dt,
            n_paths,
            seed,
            convention: DriftConvention::default(),
        }
    }
}

pub const MAX_DT: f64 = 1e-2;

/// Number of steps of size `dt` in `t`, or an error if `t` is off the lattice.
pub fn step_count(t: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || dt > MAX_DT {
        return Err(Error::Precondition(format!("time step {dt} must lie in (0, {MAX_DT}]")));
    }
    if !(t >= 0.0) {
        return Err(Error::Precondition(format!("horizon {t} is negative")));
    }
    let steps = (t / dt).round();
    if (steps * dt - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::Precondition(format!("horizon {t} is not a multiple of dt = {dt}")));
    }
    Ok(steps as usize)
}

/// State of a batch of paths at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    /// Positions wrapped to `[0, 1)`.
    pub x: Vec<[f64; 2]>,
    pub y: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch {
    pub n_paths: usize,
    pub dt: f64,
    pub t: f64,
    pub dim: usize,
    /// Path `p` draws `W` from stream `2p` and `W̃` from stream `2p + 1` of
    /// a ChaCha8 generator seeded with `seed`.
    pub seed: u64,
    pub start: Vec<[f64; 2]>,
    pub x: Vec<[f64; 2]>,
    pub y: Vec<f64>,
    pub checkpoints: Vec<Snapshot>,
}

/// Initial positions.
#[derive(Clone, Debug)]
pub enum Start {
    Point([f64; 2]),
    /// Inverse-CDF draw from a grid density (cell masses), jittered uniformly
    /// within the cell.
    Density { grid: PeriodicGrid, masses: Vec<f64> },
}

struct PathResult {
    x: [f64; 2],
    y: f64,
    x0: [f64; 2],
    checkpoints: Vec<([f64; 2], f64)>,
}

/// A field flattened to `offset + Σ harmonics + Σ tables` for fast
/// evaluation along paths; anything else is evaluated as given.
enum Compiled<'a> {
    Constant(f64),
    /// `offset + c cos(k·x) + s sin(k·x)`.
    Harmonic {
        offset: f64,
        k: [f64; 2],
        c: f64,
        s: f64,
    },
    /// `offset + table(x)`, one-dimensional.
    Table {
        offset: f64,
        table: Vec<f64>,
    },
    Flat {
        offset: f64,
        /// `(2π·wave, cos, sin)`.
        harmonics: Vec<([f64; 2], f64, f64)>,
        /// Scaled one-dimensional tables.
        tables: Vec<Vec<f64>>,
    },
    General(&'a Field),
}

#[derive(Default)]
struct Flat {
    offset: f64,
    harmonics: Vec<([f64; 2], f64, f64)>,
    tables: Vec<Vec<f64>>,
}

/// Harmonics are replaced by a table when linear interpolation on a grid of
/// at most this many points keeps the error below `REFINE_TOLERANCE` times
/// their total amplitude.
const MAX_REFINED: usize = 1 << 20;
const REFINE_TOLERANCE: f64 = 1e-7;

impl Flat {
    /// Merge harmonics and tables into one 1-D table on a grid that refines
    /// every existing table, so those are reproduced exactly.
    fn refine(&mut self) {
        let k_max = self.harmonics.iter().map(|(k, _, _)| k[0].abs()).fold(0.0, f64::max);
        // Linear interpolation of A cos(kx) errs by at most A (kh)² / 8.
        let need = (k_max / (8.0 * REFINE_TOLERANCE).sqrt()).ceil() as usize;
        let mut m = 1usize;
        for t in &self.tables {
            m = lcm(m, t.len());
        }
        let m = m * need.div_ceil(m).max(1);
        if m > MAX_REFINED {
            return;
        }
        let table: Vec<f64> = (0..m)
            .map(|i| {
                let x = i as f64 / m as f64;
                let waves: f64 = self
                    .harmonics
                    .iter()
                    .map(|(k, c, s)| {
                        let (sn, cs) = (k[0] * x).sin_cos();
                        c * cs + s * sn
                    })
                    .sum();
                waves + self.tables.iter().map(|t| lookup(t, &[x])).sum::<f64>()
            })
            .collect();
        self.harmonics.clear();
        self.tables = vec![table];
    }

    fn push_wave(&mut self, wave: &[i32], cos: f64, sin: f64) {
        let mut k = [0.0; 2];
        for (slot, &w) in k.iter_mut().zip(wave) {
            *slot = TAU * w as f64;
        }
        self.harmonics.push((k, cos, sin));
    }

    fn absorb(&mut self, field: &Field, scale: f64, dim: usize) -> bool {
        match field {
            Field::Constant(c) => self.offset += scale * c,
            Field::Cos { amplitude, wave } => self.push_wave(wave, scale * amplitude, 0.0),
            Field::Sin { amplitude, wave } => self.push_wave(wave, 0.0, scale * amplitude),
            Field::Fourier { offset, terms } => {
                self.offset += scale * offset;
                for h in terms {
                    self.push_wave(&h.wave, scale * h.cos, scale * h.sin);
                }
            }
            Field::Tabulated { values } if dim == 1 => match field.constant_value() {
                Some(c) => self.offset += scale * c,
                None => self.tables.push(values.iter().map(|v| scale * v).collect()),
            },
            Field::Sum(fields) => return fields.iter().all(|f| self.absorb(f, scale, dim)),
            Field::Product(fields) => {
                let varying: Vec<&Field> = fields.iter().filter(|f| f.constant_value().is_none()).collect();
                let factor: f64 = fields.iter().filter_map(Field::constant_value).product();
                return match varying.as_slice() {
                    [] => {
                        self.offset += scale * factor;
                        true
                    }
                    [one] => self.absorb(one, scale * factor, dim),
                    _ => false,
                };
            }
            _ => return false,
        }
        true
    }
}

impl<'a> Compiled<'a> {
    fn new(field: &'a Field, dim: usize) -> Self {
        let mut flat = Flat::default();
        if flat.absorb(field, 1.0, dim) {
            if dim == 1 && !flat.harmonics.is_empty() {
                flat.refine();
            }
            let offset = flat.offset;
            match (flat.harmonics.len(), flat.tables.len()) {
                (0, 0) => Compiled::Constant(offset),
                (1, 0) => {
                    let (k, c, s) = flat.harmonics[0];
                    Compiled::Harmonic { offset, k, c, s }
                }
                (0, 1) => Compiled::Table {
                    offset,
                    table: flat.tables.pop().expect("one table"),
                },
                _ => Compiled::Flat {
                    offset,
                    harmonics: flat.harmonics,
                    tables: flat.tables,
                },
            }
        } else {
            Compiled::General(field)
        }
    }

    fn constant(&self) -> Option<f64> {
        match self {
            Compiled::Constant(c) => Some(*c),
            _ => None,
        }
    }

    #[inline(always)]
    fn value(&self, x: &[f64]) -> f64 {
        match self {
            Compiled::Constant(v) => *v,
            Compiled::Harmonic { offset, k, c, s } => {
                let phase = k[0] * x[0] + if x.len() > 1 { k[1] * x[1] } else { 0.0 };
                if *s == 0.0 {
                    offset + c * phase.cos()
                } else if *c == 0.0 {
                    offset + s * phase.sin()
                } else {
                    let (sn, cs) = phase.sin_cos();
                    offset + c * cs + s * sn
                }
            }
            Compiled::Table { offset, table } => offset + lookup(table, x),
            Compiled::Flat {
                offset,
                harmonics,
                tables,
            } => {
                let mut v = *offset;
                for (k, c, s) in harmonics {
                    let phase = k[0] * x[0] + if x.len() > 1 { k[1] * x[1] } else { 0.0 };
                    if *s == 0.0 {
                        v += c * phase.cos();
                    } else if *c == 0.0 {
                        v += s * phase.sin();
                    } else {
                        let (sn, cs) = phase.sin_cos();
                        v += c * cs + s * sn;
                    }
                }
                for t in tables {
                    v += lookup(t, x);
                }
                v
            }
            Compiled::General(f) => f.value(x),
        }
    }
}

fn lcm(a: usize, b: usize) -> usize {
    let (mut x, mut y) = (a, b);
    while y != 0 {
        (x, y) = (y, x % y);
    }
    a / x * b
}

/// Periodic linear interpolation of a 1-D table at a position in `[0, 1)`.
#[inline]
fn lookup(table: &[f64], x: &[f64]) -> f64 {
    let m = table.len();
    let u = x[0] * m as f64;
    if !(0.0..m as f64).contains(&u) {
        return interpolate(table, x);
    }
    let i = (u as usize).min(m - 1);
    let frac = u - i as f64;
    let a = table[i];
    let b = table[if i + 1 == m { 0 } else { i + 1 }];
    a + frac * (b - a)
}

/// `offset + table(x)` on `[0, 1)`; an empty table is the constant.
#[derive(Clone, Copy)]
struct Tab<'a> {
    offset: f64,
    table: &'a [f64],
}

impl Tab<'_> {
    #[inline(always)]
    fn eval(&self, x: f64) -> f64 {
        if self.table.is_empty() {
            self.offset
        } else {
            self.offset + lookup(self.table, &[x])
        }
    }
}

/// One-dimensional model with one diffusion field and tabulated or
/// constant coefficients.
struct Line<'a> {
    drift: Tab<'a>,
    diffusion: Tab<'a>,
    obs_drift: Tab<'a>,
    obs_noise: Tab<'a>,
}

impl Line<'_> {
    #[inline(always)]
    fn step(&self, x: &mut f64, y: &mut f64, state: &mut ChaCha8Rng, obs: &mut ChaCha8Rng, dt: f64, sqrt_dt: f64, lazy: bool) {
        let at = *x;
        let b = self.obs_drift.eval(at);
        let mut next = at + self.drift.eval(at) * dt;
        let dw: f64 = state.sample::<f64, _>(StandardNormal) * sqrt_dt;
        next += self.diffusion.eval(at) * dw;
        *y += b * dt;
        if !lazy {
            let dw: f64 = obs.sample::<f64, _>(StandardNormal) * sqrt_dt;
            *y += self.obs_noise.eval(at) * dw;
        }
        *x = wrap(next);
    }
}

/// Drift and noise coefficients, with the constant cases detected once.
struct Coefficients<'a> {
    spec: &'a TorusDiffusionSpec,
    convention: DriftConvention,
    dim: usize,
    drift: Vec<Compiled<'a>>,
    diffusion: Vec<Vec<Compiled<'a>>>,
    obs_drift: Compiled<'a>,
    obs_noise: Compiled<'a>,
    constant_noise: Option<f64>,
    /// The convention's drift correction vanishes identically.
    plain_drift: bool,
}

impl<'a> Coefficients<'a> {
    fn new(spec: &'a TorusDiffusionSpec, convention: DriftConvention) -> Self {
        let dim = spec.dim;
        let diffusion: Vec<Vec<Compiled>> = spec
            .diffusion
            .iter()
            .map(|v| v.iter().map(|f| Compiled::new(f, dim)).collect())
            .collect();
        let constant_diffusion = diffusion.iter().flatten().all(|c| c.constant().is_some());
        let obs_noise = Compiled::new(&spec.obs_noise, dim);
        Self {
            spec,
            convention,
            dim,
            drift: spec.drift.iter().map(|f| Compiled::new(f, dim)).collect(),
            diffusion,
            obs_drift: Compiled::new(&spec.obs_drift, dim),
            constant_noise: obs_noise.constant(),
            obs_noise,
            plain_drift: convention == DriftConvention::Ito || constant_diffusion,
        }
    }

    fn line(&self) -> Option<Line<'_>> {
        fn tab<'b>(c: &'b Compiled<'_>) -> Option<Tab<'b>> {
            match c {
                Compiled::Constant(v) => Some(Tab { offset: *v, table: &[] }),
                Compiled::Table { offset, table } => Some(Tab {
                    offset: *offset,
                    table: table.as_slice(),
                }),
                _ => None,
            }
        }
        if self.dim != 1 || self.diffusion.len() != 1 || !self.plain_drift {
            return None;
        }
        Some(Line {
            drift: tab(&self.drift[0])?,
            diffusion: tab(&self.diffusion[0][0])?,
            obs_drift: tab(&self.obs_drift)?,
            obs_noise: tab(&self.obs_noise)?,
        })
    }

    #[inline]
    fn drift(&self, x: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (r, f) in self.drift.iter().enumerate() {
            out[r] = f.value(x);
        }
        if self.plain_drift {
            return out;
        }
        let corr = match self.convention {
            DriftConvention::DivergenceForm => self.spec.divergence_drift(x),
            DriftConvention::Stratonovich => self.spec.stratonovich_drift(x),
            DriftConvention::Ito => [0.0; 2],
        };
        [out[0] + corr[0], out[1] + corr[1]]
    }
}

#[inline]
fn wrap(x: f64) -> f64 {
    // One Euler step rarely leaves [-1, 2); these branches agree with the
    // floor below there.
    if (0.0..1.0).contains(&x) {
        return x;
    }
    if (1.0..2.0).contains(&x) {
        return x - 1.0;
    }
    if (-1.0..0.0).contains(&x) {
        let w = x + 1.0;
        return if w >= 1.0 { 0.0 } else { w };
    }
    let w = x - x.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

fn draw_start(start: &Start, rng: &mut ChaCha8Rng) -> [f64; 2] {
    match start {
        Start::Point(p) => *p,
        Start::Density { grid, masses } => {
            let total: f64 = masses.iter().sum();
            let u: f64 = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut cell = masses.len() - 1;
            for (i, m) in masses.iter().enumerate() {
                acc += m;
                if u < acc {
                    cell = i;
                    break;
                }
            }
            let p = grid.point(cell);
            let h = grid.spacing();
            let mut x = [0.0; 2];
            for axis in 0..grid.dim {
                x[axis] = wrap(p[axis] + (rng.random::<f64>() - 0.5) * h);
            }
            x
        }
    }
}

/// Paths advanced together; their dependency chains overlap in the CPU.
const LANES: usize = 4;

/// Paths `first..first + count` (`count ≤ LANES`). Every path uses its own
/// streams, so grouping does not change its values.
#[allow(clippy::too_many_arguments)]
fn simulate_lanes(
    coeffs: &Coefficients,
    start: &Start,
    steps: usize,
    dt: f64,
    checkpoints: &[usize],
    seed: u64,
    first: u64,
    count: usize,
) -> Vec<PathResult> {
    let stream = |k: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k);
        rng
    };
    let mut state_rng: [ChaCha8Rng; LANES] = std::array::from_fn(|l| stream(2 * (first + l as u64)));
    let mut obs_rng: [ChaCha8Rng; LANES] = std::array::from_fn(|l| stream(2 * (first + l as u64) + 1));
    let dim = coeffs.dim;
    let sqrt_dt = dt.sqrt();
    let x0: [[f64; 2]; LANES] = std::array::from_fn(|l| draw_start(start, &mut state_rng[l]));
    let mut x = x0;
    let mut y = [0.0; LANES];
    // With constant σ the observable noise is one Gaussian per checkpoint
    // interval; its sum is drawn lazily.
    let mut pending_steps = 0usize;
    let mut marks: [Vec<([f64; 2], f64)>; LANES] = std::array::from_fn(|_| Vec::with_capacity(checkpoints.len()));
    let mut next_mark = checkpoints.iter().peekable();
    let line = coeffs.line();
    let lazy = coeffs.constant_noise.is_some();
    let flush = |y: &mut [f64; LANES], pending: usize, rngs: &mut [ChaCha8Rng; LANES]| {
        if let (Some(sigma), true) = (coeffs.constant_noise, pending > 0) {
            let scale = sigma * (pending as f64 * dt).sqrt();
            for (yl, rng) in y.iter_mut().zip(rngs.iter_mut()) {
                let z: f64 = rng.sample(StandardNormal);
                *yl += scale * z;
            }
        }
    };
    for step in 0..=steps {
        while next_mark.peek().is_some_and(|&&m| m == step) {
            flush(&mut y, pending_steps, &mut obs_rng);
            pending_steps = 0;
            for l in 0..LANES {
                marks[l].push((x[l], y[l]));
            }
            next_mark.next();
        }
        if step == steps {
            break;
        }
        if let Some(line) = &line {
            for l in 0..LANES {
                line.step(&mut x[l][0], &mut y[l], &mut state_rng[l], &mut obs_rng[l], dt, sqrt_dt, lazy);
            }
            pending_steps += 1;
            continue;
        }
        for l in 0..LANES {
            let xs = &x[l][..dim];
            let b = coeffs.obs_drift.value(xs);
            let drift = coeffs.drift(xs);
            let mut next = [x[l][0] + drift[0] * dt, x[l][1] + drift[1] * dt];
            for v in &coeffs.diffusion {
                let dw: f64 = state_rng[l].sample::<f64, _>(StandardNormal) * sqrt_dt;
                for (r, f) in v.iter().enumerate() {
                    next[r] += f.value(xs) * dw;
                }
            }
            y[l] += b * dt;
            if coeffs.constant_noise.is_none() {
                let dw: f64 = obs_rng[l].sample::<f64, _>(StandardNormal) * sqrt_dt;
                y[l] += coeffs.obs_noise.value(xs) * dw;
            }
            for xi in next.iter_mut().take(dim) {
                *xi = wrap(*xi);
            }
            x[l] = next;
        }
        pending_steps += 1;
    }
    flush(&mut y, pending_steps, &mut obs_rng);
    let mut marks = marks.into_iter();
    (0..count)
        .map(|l| PathResult {
            x: x[l],
            y: y[l],
            x0: x0[l],
            checkpoints: marks.next().expect("one mark list per lane"),
        })
        .collect()
}

fn run_paths(
    spec: &TorusDiffusionSpec,
    start: &Start,
    t: f64,
    checkpoint_times: &[f64],
    settings: &SimulationSettings,
) -> Result<(Vec<PathResult>, usize, Vec<usize>)> {
    let steps = step_count(t, settings.dt)?;
    let marks: Vec<usize> = checkpoint_times
        .iter()
        .map(|&c| step_count(c, settings.dt))
        .collect::<Result<_>>()?;
    if marks.iter().any(|&m| m > steps) || marks.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Precondition("checkpoints must be sorted and within the horizon".into()));
    }
    let coeffs = Coefficients::new(spec, settings.convention);
    let n = settings.n_paths;
    let results: Vec<PathResult> = (0..n.div_ceil(LANES))
        .into_par_iter()
        .flat_map_iter(|c| {
            let first = c * LANES;
            let count = LANES.min(n - first);
            simulate_lanes(&coeffs, start, steps, settings.dt, &marks, settings.seed, first as u64, count)
        })
        .collect();
    Ok((results, steps, marks))
}

/// Euler–Maruyama for `X` and `Y` from a fixed start, `Y_0 = 0`.
pub fn euler_maruyama(
    spec: &TorusDiffusionSpec,
    x0: [f64; 2],
    t: f64,
    settings: &SimulationSettings,
) -> Result<TrajectoryBatch> {
    simulate_batch(spec, &Start::Point(x0), t, &[], settings)
}

pub fn simulate_batch(
    spec: &TorusDiffusionSpec,
    start: &Start,
    t: f64,
    checkpoint_times: &[f64],
    settings: &SimulationSettings,
) -> Result<TrajectoryBatch> {
    let (results, _, _) = run_paths(spec, start, t, checkpoint_times, settings)?;
    let checkpoints = checkpoint_times
        .iter()
        .enumerate()
        .map(|(k, &c)| Snapshot {
            t: c,
            x: results.iter().map(|r| r.checkpoints[k].0).collect(),
            y: results.iter().map(|r| r.checkpoints[k].1).collect(),
        })
        .collect();
    Ok(TrajectoryBatch {
        n_paths: settings.n_paths,
        dt: settings.dt,
        t,
        dim: spec.dim,
        seed: settings.seed,
        start: results.iter().map(|r| r.x0).collect(),
        x: results.iter().map(|r| r.x).collect(),
        y: results.iter().map(|r| r.y).collect(),
        checkpoints,
    })
}

/// The Doob-transformed model at tilt `θ`: extra state drift `D∇log g_θ`
/// and observable drift `b + θσ²`.
#[derive(Clone, Debug)]
pub struct TiltedDynamics {
    pub theta: f64,
    pub mu: f64,
    pub spec: TorusDiffusionSpec,
    /// `g_θ` on the grid, interpolated for importance weights.
    pub eigenfunction: Field,
    pub grid: PeriodicGrid,
}

pub fn tilted_dynamics(family: &TiltedFamily, theta: f64) -> Result<TiltedDynamics> {
    let triple = triple_at(family, Complex64::new(theta, 0.0))?;
    tilted_dynamics_from(family, &triple)
}

pub fn tilted_dynamics_from(family: &TiltedFamily, triple: &SpectralTriple) -> Result<TiltedDynamics> {
    let (Some(spec), Some(grid)) = (&family.spec, family.grid) else {
        return Err(Error::Unsupported("tilted dynamics need a torus diffusion".into()));
    };
    let theta = triple.theta();
    if theta == 0.0 {
        return Ok(TiltedDynamics {
            theta,
            mu: 0.0,
            spec: spec.clone(),
            eigenfunction: Field::Constant(1.0),
            grid,
        });
    }
    let g = triple.g_real();
    if let Some(x) = g.iter().find(|x| !(**x > 0.0)) {
        return Err(Error::NotPositive(format!("eigenfunction value {x:.3e} at θ = {theta}")));
    }
    let log_g: Vec<f64> = g.iter().map(|x| x.ln()).collect();
    let h = grid.spacing();
    let mut tilted = spec.clone();
    for axis in 0..grid.dim {
        let extra: Vec<f64> = (0..grid.len())
            .map(|i| {
                let d = (log_g[grid.neighbour(i, axis, 1)] - log_g[grid.neighbour(i, axis, -1)]) / (2.0 * h);
                family.diffusivity[i][axis] * d
            })
            .collect();
        tilted.drift[axis] = Field::Sum(vec![spec.drift[axis].clone(), Field::Tabulated { values: extra }]);
    }
    tilted.obs_drift = Field::Sum(vec![
        spec.obs_drift.clone(),
        Field::Product(vec![Field::Constant(theta), spec.obs_noise.clone(), spec.obs_noise.clone()]),
    ]);
    Ok(TiltedDynamics {
        theta,
        mu: triple.mu.re,
        spec: tilted,
        eigenfunction: Field::Tabulated { values: g },
        grid,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IsEstimate {
    pub p_hat: f64,
    pub stderr: f64,
    /// `(Σ h)² / Σ h²` over the per-path contributions `h`.
    pub ess: f64,
    pub theta: f64,
    pub n_paths: usize,
    /// Paths with `Y_t ≥ at`.
    pub hits: usize,
}

pub const MIN_ESS: f64 = 10.0;

fn summarize(contributions: &[f64], hits: usize, theta: f64) -> IsEstimate {
    let n = contributions.len();
    let sum = compensated_sum(contributions.iter().copied());
    let p_hat = sum / n as f64;
    let sq = compensated_sum(contributions.iter().map(|h| h * h));
    let var = if n > 1 {
        compensated_sum(contributions.iter().map(|h| (h - p_hat) * (h - p_hat))) / (n - 1) as f64
    } else {
        0.0
    };
    IsEstimate {
        p_hat,
        stderr: (var / n as f64).sqrt(),
        ess: if sq > 0.0 { sum * sum / sq } else { 0.0 },
        theta,
        n_paths: n,
        hits,
    }
}

fn start_point(family: &TiltedFamily, frame: &EvaluationFrame) -> Result<[f64; 2]> {
    let grid = family
        .grid
        .ok_or_else(|| Error::Unsupported("simulation needs a torus diffusion".into()))?;
    frame.validate(grid.len())?;
    Ok(grid.point(frame.start))
}

/// Estimate `P(Y_t ≥ at)` under the dynamics tilted by `theta` with
/// likelihood ratio `e^{−θY_t + tμ(θ)} g_θ(X_0)/g_θ(X_t)`. At `theta = 0`
/// this is the plain indicator mean.
pub fn estimate_tail_tilted(
    family: &TiltedFamily,
    frame: &EvaluationFrame,
    a: f64,
    t: f64,
    theta: f64,
    settings: &SimulationSettings,
) -> Result<IsEstimate> {
    if settings.n_paths == 0 {
        return Err(Error::Precondition("need at least one path".into()));
    }
    let x0 = start_point(family, frame)?;
    let dynamics = tilted_dynamics(family, theta)?;
    let (results, _, _) = run_paths(&dynamics.spec, &Start::Point(x0), t, &[], settings)?;
    let dim = dynamics.grid.dim;
    let g0 = dynamics.eigenfunction.value(&x0[..dim]);
    let level = a * t;
    let mut hits = 0;
    let contributions: Vec<f64> = results
        .iter()
        .map(|r| {
            if r.y >= level {
                hits += 1;
                if theta == 0.0 {
                    1.0
                } else {
                    (-theta * r.y + t * dynamics.mu).exp() * g0 / dynamics.eigenfunction.value(&r.x[..dim])
                }
            } else {
                0.0
            }
        })
        .collect();
    Ok(summarize(&contributions, hits, theta))
}

/// Importance-sampled tail at the Legendre tilt `θ_a`.
pub fn estimate_tail_is(
    family: &TiltedFamily,
    frame: &EvaluationFrame,
    a: f64,
    t: f64,
    settings: &SimulationSettings,
    rate: &RateSettings,
) -> Result<IsEstimate> {
    let point = rate_point(family, a, rate)?;
    let est = estimate_tail_tilted(family, frame, a, t, point.theta_a, settings)?;
    if est.ess < MIN_ESS {
        return Err(Error::LowEffectiveSampleSize { ess: est.ess });
    }
    Ok(est)
}

/// Naive indicator mean under the original dynamics; zero hits is a valid
/// outcome.
pub fn estimate_tail_mc(
    family: &TiltedFamily,
    frame: &EvaluationFrame,
    a: f64,
    t: f64,
    settings: &SimulationSettings,
) -> Result<IsEstimate> {
    estimate_tail_tilted(family, frame, a, t, 0.0, settings)
}

/// Run `f` on a dedicated pool of `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(n: usize) -> SimulationSettings {
        SimulationSettings::new(1e-2, n, 11)
    }

    #[test]
    fn step_checks() {
        assert!(step_count(1.0, 0.02).is_err());
        assert!(step_count(1.005, 0.01).is_err());
        assert_eq!(step_count(0.3, 0.01).unwrap(), 30);
    }

    #[test]
    fn conventions_agree_for_constant_noise() {
        let mut spec = TorusDiffusionSpec::mathieu();
        spec.drift = vec![Field::sin(0.5, 1)];
        let mut s = settings(20);
        let a = euler_maruyama(&spec, [0.1, 0.0], 1.0, &s).unwrap();
        s.convention = DriftConvention::Stratonovich;
        let b = euler_maruyama(&spec, [0.1, 0.0], 1.0, &s).unwrap();
        s.convention = DriftConvention::Ito;
        let c = euler_maruyama(&spec, [0.1, 0.0], 1.0, &s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert!(a.x.iter().all(|x| (0.0..1.0).contains(&x[0])));
    }

    #[test]
    fn conventions_differ_for_state_dependent_noise() {
        let mut spec = TorusDiffusionSpec::mathieu();
        spec.diffusion = vec![vec![Field::Sum(vec![Field::Constant(1.0), Field::sin(0.5, 1)])]];
        let mut s = settings(4);
        let a = euler_maruyama(&spec, [0.1, 0.0], 0.5, &s).unwrap();
        s.convention = DriftConvention::Stratonovich;
        let b = euler_maruyama(&spec, [0.1, 0.0], 0.5, &s).unwrap();
        assert_ne!(a.x, b.x);
    }

    #[test]
    fn paths_do_not_depend_on_the_pool() {
        let spec = TorusDiffusionSpec::mathieu();
        let s = settings(64);
        let serial = with_threads(1, || euler_maruyama(&spec, [0.0; 2], 0.5, &s).unwrap()).unwrap();
        let parallel = with_threads(4, || euler_maruyama(&spec, [0.0; 2], 0.5, &s).unwrap()).unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn checkpoints_match_shorter_runs() {
        let spec = TorusDiffusionSpec::mathieu();
        let s = settings(8);
        let long = simulate_batch(&spec, &Start::Point([0.2, 0.0]), 1.0, &[0.5], &s).unwrap();
        assert_eq!(long.checkpoints.len(), 1);
        // identical X path prefix: the state stream is consumed identically
        let short = euler_maruyama(&spec, [0.2, 0.0], 0.5, &s).unwrap();
        assert_eq!(long.checkpoints[0].x, short.x);
    }

    #[test]
    fn gaussian_tilt_only_shifts_the_observable() {
        let family = TiltedFamily::diffusion(
            &TorusDiffusionSpec::gaussian_baseline(),
            PeriodicGrid::new(16, 1).unwrap(),
        )
        .unwrap();
        let d = tilted_dynamics(&family, 1.0).unwrap();
        assert!((d.spec.obs_drift.value(&[0.3]) - 1.0).abs() < 1e-15);
        assert!(d.spec.drift[0].value(&[0.3]).abs() < 1e-10);
        let unchanged = tilted_dynamics(&family, 0.0).unwrap();
        assert_eq!(&unchanged.spec, family.spec.as_ref().unwrap());
    }

    #[test]
    fn zero_tilt_is_naive_mc() {
        let family = TiltedFamily::diffusion(
            &TorusDiffusionSpec::gaussian_baseline(),
            PeriodicGrid::new(16, 1).unwrap(),
        )
        .unwrap();
        let frame = EvaluationFrame::default();
        let s = settings(2000);
        let naive = estimate_tail_mc(&family, &frame, 0.5, 1.0, &s).unwrap();
        let tilted = estimate_tail_tilted(&family, &frame, 0.5, 1.0, 0.0, &s).unwrap();
        assert_eq!(naive, tilted);
        // P(N(0,1) ≥ 0.5) = 0.3085
        assert!((naive.p_hat - 0.3085375387259869).abs() < 3.0 * naive.stderr + 1e-12);
        assert_eq!(naive.ess, naive.hits as f64);
    }

    #[test]
    fn below_the_mean_the_tail_is_near_one() {
        let family = TiltedFamily::diffusion(
            &TorusDiffusionSpec::gaussian_baseline(),
            PeriodicGrid::new(16, 1).unwrap(),
        )
        .unwrap();
        let est = estimate_tail_mc(&family, &EvaluationFrame::default(), -1.0, 4.0, &settings(500)).unwrap();
        // P(N(0, 4) ≥ −4) = Φ(2)
        assert!((est.p_hat - 0.9772498680518208).abs() < 4.0 * est.stderr);
    }
}
