//! Large-deviation rates and tail expansions for additive functionals of
//! torus diffusions and finite Markov chains.
//!
//! A model is discretized into a [`TiltedFamily`] `z ↦ G(z)`. Its principal
//! eigenvalue gives the cumulant generating function and the rate function;
//! inversion of the moment generating function along `Re z = θ_a` gives
//! near-exact tails, from which the coefficients of the expansion in
//! `t^{−1/2}` are fitted.

pub mod discretize;
pub mod error;
pub mod expansion;
pub mod field;
pub mod linalg;
pub mod model;
pub mod rate;
pub mod simulate;
pub mod spectral;
pub mod verify;

pub use discretize::{GeneratorMatrix, PeriodicGrid, TiltedFamily, TimeKind};
pub use error::{Error, Result};
pub use expansion::{CoeffFit, ExpansionSettings, InversionSettings, LeadingCoefficient, TailCurve, TestFunction};
pub use field::Field;
pub use model::{DiscreteChainSpec, EvaluationFrame, Model, ModelFile, TorusDiffusionSpec, ValidationReport};
pub use rate::{RatePoint, RateSettings};
pub use simulate::{DriftConvention, IsEstimate, SimulationSettings};
pub use spectral::SpectralTriple;
pub use verify::{Condition, ConditionReport, Verdict};
