//! Model definitions: torus diffusions with an additive observable, finite
//! Markov chains with per-state increments, and the evaluation frame
//! (start point and test vector) used by moment generating functions.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::discretize::{InvariantDensity, PeriodicGrid};
use crate::error::{Error, Result};
use crate::field::Field;

/// A vector field on the torus, one scalar field per coordinate.
pub type VectorField = Vec<Field>;

/// `dX = Σ V_i(X) ∘ dW_i + V_0(X) dt`, `dY = b(X) dt + σ(X) dW̃` on the
/// unit torus of dimension 1 or 2, with `W̃` independent of `W`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusDiffusionSpec {
    pub dim: usize,
    /// Diffusion vector fields `V_1..V_k`.
    pub diffusion: Vec<VectorField>,
    /// Drift vector field `V_0`.
    pub drift: VectorField,
    /// Observable drift `b`.
    pub obs_drift: Field,
    /// Observable noise `σ`.
    pub obs_noise: Field,
}

impl TorusDiffusionSpec {
    /// One-dimensional model with a single diffusion field.
    pub fn one_dimensional(v: Field, v0: Field, b: Field, sigma: Field) -> Self {
        Self {
            dim: 1,
            diffusion: vec![vec![v]],
            drift: vec![v0],
            obs_drift: b,
            obs_noise: sigma,
        }
    }

    /// `V = 1, V_0 = 0, b = 0, σ = 1`: the observable is a Brownian motion.
    pub fn gaussian_baseline() -> Self {
        Self::one_dimensional(
            Field::Constant(1.0),
            Field::Constant(0.0),
            Field::Constant(0.0),
            Field::Constant(1.0),
        )
    }

    /// `V = 1, V_0 = 0, b = cos(2πx), σ = 1`.
    pub fn mathieu() -> Self {
        Self::one_dimensional(
            Field::Constant(1.0),
            Field::Constant(0.0),
            Field::cos(1.0, 1),
            Field::Constant(1.0),
        )
    }

    /// Diffusion tensor `Σ V_i V_iᵀ` at `x`, as a row-major `dim × dim` array.
    pub fn diffusion_tensor(&self, x: &[f64]) -> [[f64; 2]; 2] {
        let mut d = [[0.0; 2]; 2];
        for v in &self.diffusion {
            let vals = component_values(v, x);
            for r in 0..self.dim {
                for c in 0..self.dim {
                    d[r][c] += vals[r] * vals[c];
                }
            }
        }
        d
    }

    /// `½ Σ_c ∂_c D_rc`: the Itô drift correction that realizes the
    /// divergence-form generator `½∇·(D∇u)`.
    pub fn divergence_drift(&self, x: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for v in &self.diffusion {
            let vals = component_values(v, x);
            for r in 0..self.dim {
                for c in 0..self.dim {
                    // ∂_c (V_r V_c) = V_r ∂_c V_c + V_c ∂_c V_r
                    out[r] += 0.5 * (vals[r] * v[c].partial(x, c) + vals[c] * v[r].partial(x, c));
                }
            }
        }
        out
    }

    /// `½ Σ_i (V_i·∇) V_i`: the Stratonovich-to-Itô correction.
    pub fn stratonovich_drift(&self, x: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for v in &self.diffusion {
            for r in 0..self.dim {
                for c in 0..self.dim {
                    out[r] += 0.5 * v[c].value(x) * v[r].partial(x, c);
                }
            }
        }
        out
    }

    pub fn fields(&self) -> impl Iterator<Item = &Field> {
        self.diffusion
            .iter()
            .flatten()
            .chain(self.drift.iter())
            .chain([&self.obs_drift, &self.obs_noise])
    }

    pub fn max_harmonic(&self) -> Option<u32> {
        self.fields()
            .map(Field::max_harmonic)
            .try_fold(0, |acc, k| k.map(|k| acc.max(k)))
    }
}

fn component_values(v: &[Field], x: &[f64]) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (r, f) in v.iter().enumerate().take(2) {
        out[r] = f.value(x);
    }
    out
}

/// Discrete-time chain: at each step the state moves with `transition` and
/// the observable gains a Gaussian increment with mean `increment_mean[j]`
/// and variance `increment_var[j]`, where `j` is the state moved to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteChainSpec {
    pub transition: Vec<Vec<f64>>,
    pub increment_mean: Vec<f64>,
    #[serde(default)]
    pub increment_var: Vec<f64>,
}

impl DiscreteChainSpec {
    pub fn n_states(&self) -> usize {
        self.transition.len()
    }

    pub fn variance(&self, state: usize) -> f64 {
        self.increment_var.get(state).copied().unwrap_or(0.0)
    }

    /// Two states, every row `(½, ½)`, increments `+1` and `−1`: the
    /// observable is a simple symmetric random walk.
    pub fn symmetric_coin() -> Self {
        Self {
            transition: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            increment_mean: vec![1.0, -1.0],
            increment_var: vec![0.0, 0.0],
        }
    }

    /// Period-2 chain with unit increments in both states.
    pub fn checkerboard() -> Self {
        Self {
            transition: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            increment_mean: vec![1.0, 1.0],
            increment_var: vec![0.0, 0.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Model {
    TorusDiffusion(TorusDiffusionSpec),
    DiscreteChain(DiscreteChainSpec),
}

impl Model {
    pub fn as_diffusion(&self) -> Result<&TorusDiffusionSpec> {
        match self {
            Model::TorusDiffusion(spec) => Ok(spec),
            Model::DiscreteChain(_) => Err(Error::Unsupported(
                "operation requires a torus diffusion".into(),
            )),
        }
    }

    pub fn as_chain(&self) -> Result<&DiscreteChainSpec> {
        match self {
            Model::DiscreteChain(chain) => Ok(chain),
            Model::TorusDiffusion(_) => Err(Error::Unsupported(
                "operation requires a discrete chain".into(),
            )),
        }
    }
}

impl From<TorusDiffusionSpec> for Model {
    fn from(spec: TorusDiffusionSpec) -> Self {
        Model::TorusDiffusion(spec)
    }
}

impl From<DiscreteChainSpec> for Model {
    fn from(chain: DiscreteChainSpec) -> Self {
        Model::DiscreteChain(chain)
    }
}

/// Start point (the Dirac functional) and test vector for
/// `E_x0[e^{z S_t} v(X_t)]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationFrame {
    #[serde(default)]
    pub start: usize,
    /// Defaults to the constant one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_vector: Option<Vec<f64>>,
}

impl EvaluationFrame {
    pub fn at(start: usize) -> Self {
        Self {
            start,
            test_vector: None,
        }
    }

    pub fn test_vector(&self, len: usize) -> Vec<f64> {
        self.test_vector.clone().unwrap_or_else(|| vec![1.0; len])
    }

    pub fn validate(&self, len: usize) -> Result<()> {
        let mut report = ValidationReport::default();
        self.check(len, &mut report);
        report.into_result()
    }

    fn check(&self, len: usize, report: &mut ValidationReport) {
        if self.start >= len {
            report.push(
                IssueKind::FrameOutOfRange,
                format!("start index {} outside 0..{len}", self.start),
            );
        }
        if let Some(v) = &self.test_vector {
            if v.len() != len {
                report.push(
                    IssueKind::ShapeMismatch,
                    format!("test vector has {} entries, expected {len}", v.len()),
                );
            }
            if v.iter().any(|x| !x.is_finite()) {
                report.push(IssueKind::NonFinite, "test vector is not finite".into());
            }
            if v.iter().all(|&x| x == 0.0) {
                report.push(IssueKind::ZeroTestVector, "test vector is identically zero".into());
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    Dimension,
    ShapeMismatch,
    NonFinite,
    DegenerateNoise,
    NotElliptic,
    NotPeriodic,
    NotStochastic,
    NegativeEntry,
    NegativeVariance,
    FrameOutOfRange,
    ZeroTestVector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub kind: IssueKind,
    pub message: String,
}

/// Every violated invariant of a model; empty means valid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has(&self, kind: IssueKind) -> bool {
        self.issues.iter().any(|i| i.kind == kind)
    }

    fn push(&mut self, kind: IssueKind, message: String) {
        self.issues.push(ValidationIssue { kind, message });
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidModel(self))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "no issues");
        }
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{:?}: {}", issue.kind, issue.message)?;
        }
        Ok(())
    }
}

const SEAM_TOLERANCE: f64 = 1e-6;
const STOCHASTIC_TOLERANCE: f64 = 1e-12;

/// Check every model invariant. Diffusion coefficients are tabulated on a
/// grid with `grid_n` points per dimension.
pub fn validate_spec(model: &Model, grid_n: usize) -> ValidationReport {
    let mut report = ValidationReport::default();
    match model {
        Model::TorusDiffusion(spec) => validate_diffusion(spec, grid_n, &mut report),
        Model::DiscreteChain(chain) => validate_chain(chain, &mut report),
    }
    report
}

/// Validate the model together with the evaluation frame it will be used with.
pub fn validate_with_frame(model: &Model, grid_n: usize, frame: &EvaluationFrame) -> ValidationReport {
    let mut report = validate_spec(model, grid_n);
    let len = match model {
        Model::TorusDiffusion(spec) if (1..=2).contains(&spec.dim) => grid_n.pow(spec.dim as u32),
        Model::TorusDiffusion(_) => return report,
        Model::DiscreteChain(chain) => chain.n_states(),
    };
    frame.check(len, &mut report);
    report
}

fn validate_diffusion(spec: &TorusDiffusionSpec, grid_n: usize, report: &mut ValidationReport) {
    if !(1..=2).contains(&spec.dim) {
        report.push(IssueKind::Dimension, format!("dim = {} (must be 1 or 2)", spec.dim));
        return;
    }
    let dim = spec.dim;
    if spec.diffusion.is_empty() {
        report.push(IssueKind::NotElliptic, "no diffusion vector fields".into());
    }
    for (i, v) in spec.diffusion.iter().enumerate() {
        if v.len() != dim {
            report.push(
                IssueKind::ShapeMismatch,
                format!("diffusion field V_{} has {} components, expected {dim}", i + 1, v.len()),
            );
        }
    }
    if spec.drift.len() != dim {
        report.push(
            IssueKind::ShapeMismatch,
            format!("drift V_0 has {} components, expected {dim}", spec.drift.len()),
        );
    }
    if report.has(IssueKind::ShapeMismatch) {
        return;
    }
    for (name, field) in named_fields(spec) {
        if !field.is_finite() {
            report.push(IssueKind::NonFinite, format!("{name} has non-finite coefficients"));
        }
        if !field.dimension_consistent(dim) {
            report.push(
                IssueKind::Dimension,
                format!("{name} has wave vectors or tables inconsistent with dim = {dim}"),
            );
        }
        let defect = field.seam_defect(dim);
        if defect > SEAM_TOLERANCE {
            report.push(
                IssueKind::NotPeriodic,
                format!("{name} does not match across the periodic seam (defect {defect:.3e})"),
            );
        }
    }
    if report.has(IssueKind::Dimension) || report.has(IssueKind::NonFinite) {
        return;
    }
    let n = grid_n.max(8);
    let Ok(grid) = PeriodicGrid::new(n + n % 2, dim) else {
        return;
    };
    let mut worst_sigma = f64::INFINITY;
    let mut worst_ellipticity = f64::INFINITY;
    for idx in 0..grid.len() {
        let x = grid.point(idx);
        let x = &x[..dim];
        let s = spec.obs_noise.value(x);
        worst_sigma = worst_sigma.min(s * s);
        let d = spec.diffusion_tensor(x);
        let min_eig = if dim == 1 {
            d[0][0]
        } else {
            let tr = d[0][0] + d[1][1];
            let det = d[0][0] * d[1][1] - d[0][1] * d[1][0];
            0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt())
        };
        worst_ellipticity = worst_ellipticity.min(min_eig);
    }
    if !(worst_sigma > 0.0) {
        report.push(
            IssueKind::DegenerateNoise,
            format!("degenerate observable noise: min σ² = {worst_sigma:.3e}"),
        );
    }
    if !(worst_ellipticity > 0.0) {
        report.push(
            IssueKind::NotElliptic,
            format!("Σ V_i V_iᵀ is not positive definite (min eigenvalue {worst_ellipticity:.3e}); hypoelliptic models are unsupported"),
        );
    }
}

fn named_fields(spec: &TorusDiffusionSpec) -> Vec<(String, &Field)> {
    let mut out = Vec::new();
    for (i, v) in spec.diffusion.iter().enumerate() {
        for (c, f) in v.iter().enumerate() {
            out.push((format!("V_{}[{c}]", i + 1), f));
        }
    }
    for (c, f) in spec.drift.iter().enumerate() {
        out.push((format!("V_0[{c}]"), f));
    }
    out.push(("b".to_string(), &spec.obs_drift));
    out.push(("sigma".to_string(), &spec.obs_noise));
    out
}

fn validate_chain(chain: &DiscreteChainSpec, report: &mut ValidationReport) {
    let n = chain.n_states();
    if n == 0 {
        report.push(IssueKind::ShapeMismatch, "chain has no states".into());
        return;
    }
    for (i, row) in chain.transition.iter().enumerate() {
        if row.len() != n {
            report.push(
                IssueKind::ShapeMismatch,
                format!("transition row {i} has {} entries, expected {n}", row.len()),
            );
            continue;
        }
        if row.iter().any(|p| !p.is_finite()) {
            report.push(IssueKind::NonFinite, format!("transition row {i} is not finite"));
            continue;
        }
        if let Some(p) = row.iter().find(|&&p| p < 0.0) {
            report.push(IssueKind::NegativeEntry, format!("transition row {i} has entry {p}"));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOLERANCE {
            report.push(
                IssueKind::NotStochastic,
                format!("transition row {i} sums to {sum} (not stochastic)"),
            );
        }
    }
    if chain.increment_mean.len() != n {
        report.push(
            IssueKind::ShapeMismatch,
            format!("increment_mean has {} entries, expected {n}", chain.increment_mean.len()),
        );
    }
    if !chain.increment_var.is_empty() && chain.increment_var.len() != n {
        report.push(
            IssueKind::ShapeMismatch,
            format!("increment_var has {} entries, expected {n}", chain.increment_var.len()),
        );
    }
    if chain
        .increment_mean
        .iter()
        .chain(&chain.increment_var)
        .any(|x| !x.is_finite())
    {
        report.push(IssueKind::NonFinite, "increments are not finite".into());
    }
    if chain.increment_var.iter().any(|&v| v < 0.0) {
        report.push(IssueKind::NegativeVariance, "negative increment variance".into());
    }
}

/// Subtract the stationary mean of the observable drift so that the
/// centered observable has zero asymptotic mean.
pub fn center_observable(model: &Model, density: &InvariantDensity) -> Result<Model> {
    let integral = density.integral();
    if (integral - 1.0).abs() > 1e-10 {
        return Err(Error::NotNormalized { integral });
    }
    match model {
        Model::TorusDiffusion(spec) => {
            let grid = density.grid.ok_or_else(|| {
                Error::Precondition("diffusion needs a grid density".into())
            })?;
            if grid.dim != spec.dim {
                return Err(Error::Precondition(format!(
                    "density on a {}-dimensional grid for a {}-dimensional model",
                    grid.dim, spec.dim
                )));
            }
            let b: Vec<f64> = (0..grid.len())
                .map(|i| spec.obs_drift.value(&grid.point(i)[..spec.dim]))
                .collect();
            let mean = density.expectation(&b);
            let mut centered = spec.clone();
            centered.obs_drift = spec.obs_drift.shifted(-mean);
            Ok(Model::TorusDiffusion(centered))
        }
        Model::DiscreteChain(chain) => {
            if density.values.len() != chain.n_states() {
                return Err(Error::Precondition("density length differs from state count".into()));
            }
            let mean = density.expectation(&chain.increment_mean);
            let mut centered = chain.clone();
            centered.increment_mean.iter_mut().for_each(|m| *m -= mean);
            Ok(Model::DiscreteChain(centered))
        }
    }
}

/// On-disk model description. The coefficients live under `fields`, the
/// additive observable under `observable`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum ModelFile {
    TorusDiffusion {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        grid_n: Option<usize>,
        fields: DiffusionFields,
        observable: DiffusionObservable,
        #[serde(default)]
        eval_frame: EvaluationFrame,
    },
    DiscreteChain {
        fields: ChainFields,
        observable: ChainObservable,
        #[serde(default)]
        eval_frame: EvaluationFrame,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionFields {
    pub dim: usize,
    pub diffusion: Vec<VectorField>,
    pub drift: VectorField,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionObservable {
    pub drift: Field,
    pub noise: Field,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFields {
    pub transition: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainObservable {
    pub increment_mean: Vec<f64>,
    #[serde(default)]
    pub increment_var: Vec<f64>,
}

impl ModelFile {
    pub fn new(model: Model, grid_n: Option<usize>, eval_frame: EvaluationFrame) -> Self {
        match model {
            Model::TorusDiffusion(spec) => ModelFile::TorusDiffusion {
                grid_n,
                fields: DiffusionFields {
                    dim: spec.dim,
                    diffusion: spec.diffusion,
                    drift: spec.drift,
                },
                observable: DiffusionObservable {
                    drift: spec.obs_drift,
                    noise: spec.obs_noise,
                },
                eval_frame,
            },
            Model::DiscreteChain(chain) => ModelFile::DiscreteChain {
                fields: ChainFields {
                    transition: chain.transition,
                },
                observable: ChainObservable {
                    increment_mean: chain.increment_mean,
                    increment_var: chain.increment_var,
                },
                eval_frame,
            },
        }
    }

    pub fn model(&self) -> Model {
        match self {
            ModelFile::TorusDiffusion { fields, observable, .. } => Model::TorusDiffusion(TorusDiffusionSpec {
                dim: fields.dim,
                diffusion: fields.diffusion.clone(),
                drift: fields.drift.clone(),
                obs_drift: observable.drift.clone(),
                obs_noise: observable.noise.clone(),
            }),
            ModelFile::DiscreteChain { fields, observable, .. } => Model::DiscreteChain(DiscreteChainSpec {
                transition: fields.transition.clone(),
                increment_mean: observable.increment_mean.clone(),
                increment_var: observable.increment_var.clone(),
            }),
        }
    }

    pub fn grid_n(&self) -> Option<usize> {
        match self {
            ModelFile::TorusDiffusion { grid_n, .. } => *grid_n,
            ModelFile::DiscreteChain { .. } => None,
        }
    }

    pub fn eval_frame(&self) -> &EvaluationFrame {
        match self {
            ModelFile::TorusDiffusion { eval_frame, .. } | ModelFile::DiscreteChain { eval_frame, .. } => eval_frame,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_noise_is_flagged() {
        let mut spec = TorusDiffusionSpec::gaussian_baseline();
        spec.obs_noise = Field::Constant(0.0);
        let report = validate_spec(&spec.into(), 64);
        assert!(report.has(IssueKind::DegenerateNoise), "{report}");
    }

    #[test]
    fn gaussian_baseline_is_valid() {
        let report = validate_spec(&TorusDiffusionSpec::gaussian_baseline().into(), 64);
        assert!(report.is_valid(), "{report}");
    }

    #[test]
    fn non_stochastic_row_is_flagged() {
        let chain = DiscreteChainSpec {
            transition: vec![vec![0.5, 0.49], vec![0.5, 0.5]],
            increment_mean: vec![1.0, -1.0],
            increment_var: vec![],
        };
        let report = validate_spec(&chain.into(), 0);
        assert!(report.has(IssueKind::NotStochastic), "{report}");
        assert_eq!(report.issues.len(), 1);
    }

    #[test]
    fn hypoelliptic_model_is_unsupported() {
        let mut spec = TorusDiffusionSpec::gaussian_baseline();
        spec.diffusion = vec![vec![Field::sin(1.0, 1)]];
        let report = validate_spec(&spec.into(), 64);
        assert!(report.has(IssueKind::NotElliptic));
    }

    #[test]
    fn frame_checks() {
        let frame = EvaluationFrame {
            start: 3,
            test_vector: Some(vec![0.0; 2]),
        };
        let report = validate_with_frame(&DiscreteChainSpec::symmetric_coin().into(), 0, &frame);
        assert!(report.has(IssueKind::FrameOutOfRange));
        assert!(report.has(IssueKind::ZeroTestVector));
    }

    #[test]
    fn model_json_is_tagged_by_kind() {
        let json = serde_json::to_string(&Model::from(DiscreteChainSpec::symmetric_coin())).unwrap();
        assert!(json.starts_with(r#"{"kind":"discrete_chain""#), "{json}");
        let back: Model = serde_json::from_str(&json).unwrap();
        assert_eq!(back, Model::from(DiscreteChainSpec::symmetric_coin()));
    }

    #[test]
    fn model_file_round_trips() {
        let text = r#"{
            "kind": "torus_diffusion",
            "grid_n": 128,
            "fields": {"dim": 1, "diffusion": [[{"constant": 1.0}]], "drift": [{"constant": 0.0}]},
            "observable": {"drift": {"cos": {"amplitude": 1.0, "wave": [1]}}, "noise": {"constant": 1.0}}
        }"#;
        let file: ModelFile = serde_json::from_str(text).unwrap();
        assert_eq!(file.model(), Model::TorusDiffusion(TorusDiffusionSpec::mathieu()));
        assert_eq!(file.grid_n(), Some(128));
        assert_eq!(file.eval_frame(), &EvaluationFrame::default());
        let back: ModelFile = serde_json::from_str(&serde_json::to_string(&file).unwrap()).unwrap();
        assert_eq!(back, file);

        let chain = ModelFile::new(DiscreteChainSpec::symmetric_coin().into(), None, EvaluationFrame::at(1));
        let back: ModelFile = serde_json::from_str(&serde_json::to_string(&chain).unwrap()).unwrap();
        assert_eq!(back.model(), Model::DiscreteChain(DiscreteChainSpec::symmetric_coin()));
        assert_eq!(back.eval_frame().start, 1);
    }

    #[test]
    fn model_file_rejects_unknown_keys() {
        let text = r#"{"kind": "discrete_chain", "fields": {"transition": [[1.0]]},
            "observable": {"increment_mean": [1.0]}, "grid": 8}"#;
        assert!(serde_json::from_str::<ModelFile>(text).is_err());
        let text = r#"{"kind": "discrete_chain", "fields": {"transition": [[1.0]], "extra": 1},
            "observable": {"increment_mean": [1.0]}}"#;
        assert!(serde_json::from_str::<ModelFile>(text).is_err());
    }
}
