//! Run configuration: a strict JSON document that points at a model file
//! and carries grids, tolerances, the seed and the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use ldp_core::model::{validate_with_frame, ModelFile};
use ldp_core::{DriftConvention, EvaluationFrame, ExpansionSettings, InversionSettings, Model, RateSettings};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const DEFAULT_GRID_N: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Model file, relative to the config file.
    pub model: PathBuf,
    /// Overrides the model file's `grid_n`; both default to 256.
    #[serde(default)]
    pub grid_n: Option<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub rate: RateSettings,
    #[serde(default)]
    pub inversion: InversionSettings,
    /// Tail slopes for `rate`, `expand` and `report`.
    #[serde(default = "default_a_grid")]
    pub a_grid: Vec<f64>,
    /// Tilts for `spectral` and `verify-conditions`.
    #[serde(default = "default_theta_grid")]
    pub theta_grid: Vec<f64>,
    #[serde(default)]
    pub expand: ExpandConfig,
    #[serde(default)]
    pub conditions: ConditionConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    /// Also write SVG plots next to the CSV files.
    #[serde(default)]
    pub svg: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpandConfig {
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    #[serde(default = "default_order")]
    pub order: usize,
}

impl Default for ExpandConfig {
    fn default() -> Self {
        Self {
            times: default_times(),
            order: default_order(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionConfig {
    /// Imaginary offsets probed for the strict-maximum check.
    #[serde(default = "default_s_grid")]
    pub s_grid: Vec<f64>,
    /// Times used for the contraction fit.
    #[serde(default = "default_decay_times")]
    pub t_grid: Vec<f64>,
}

impl Default for ConditionConfig {
    fn default() -> Self {
        Self {
            s_grid: default_s_grid(),
            t_grid: default_decay_times(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_sim_a")]
    pub a: f64,
    #[serde(default = "default_sim_t")]
    pub t: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub convention: DriftConvention,
    /// Run the untilted estimator alongside importance sampling.
    #[serde(default = "default_true")]
    pub naive: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            a: default_sim_a(),
            t: default_sim_t(),
            dt: default_dt(),
            n_paths: default_paths(),
            convention: DriftConvention::default(),
            naive: true,
        }
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_seed() -> u64 {
    20240601
}

fn default_a_grid() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}

fn default_theta_grid() -> Vec<f64> {
    vec![0.0, 0.5, 1.0]
}

fn default_times() -> Vec<f64> {
    (2..=32).map(|k| 8.0 * k as f64).collect()
}

fn default_order() -> usize {
    4
}

fn default_s_grid() -> Vec<f64> {
    let (lo, hi, m) = (0.1f64, 50.0f64, 12);
    (0..m)
        .map(|i| (lo.ln() + (hi / lo).ln() * i as f64 / (m - 1) as f64).exp())
        .collect()
}

fn default_decay_times() -> Vec<f64> {
    vec![1.0, 2.0, 3.0]
}

fn default_sim_a() -> f64 {
    1.0
}

fn default_sim_t() -> f64 {
    16.0
}

fn default_dt() -> f64 {
    1e-3
}

fn default_paths() -> usize {
    100_000
}

fn default_true() -> bool {
    true
}

/// A parsed and validated configuration with its model loaded.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    /// As parsed, with `grid_n` resolved.
    pub config: RunConfig,
    /// Directory of the config file; relative paths resolve against it.
    pub base: PathBuf,
    pub model_file: ModelFile,
    pub hash: String,
}

impl LoadedConfig {
    pub fn model(&self) -> Model {
        self.model_file.model()
    }

    pub fn frame(&self) -> &EvaluationFrame {
        self.model_file.eval_frame()
    }

    pub fn grid_n(&self) -> usize {
        self.config.grid_n.unwrap_or(DEFAULT_GRID_N)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base.join(&self.config.output_dir)
    }

    pub fn expansion(&self) -> ExpansionSettings {
        ExpansionSettings {
            rate: self.config.rate,
            inversion: self.config.inversion,
        }
    }
}

fn schema_error(file: &Path, err: serde_path_to_error::Error<serde_json::Error>) -> CliError {
    let key = err.path().to_string();
    let inner = err.into_inner();
    let line = inner.line();
    let column = inner.column();
    CliError::Schema {
        file: file.to_path_buf(),
        line,
        column,
        key,
        message: inner.to_string(),
    }
}

fn parse_strict<T: for<'de> Deserialize<'de>>(file: &Path, text: &str) -> Result<T, CliError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(&mut de).map_err(|e| schema_error(file, e))?;
    de.end().map_err(|e| CliError::Schema {
        file: file.to_path_buf(),
        line: e.line(),
        column: e.column(),
        key: ".".into(),
        message: e.to_string(),
    })?;
    Ok(value)
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn invalid(key: &str, message: impl Into<String>) -> CliError {
    CliError::Invalid {
        key: key.into(),
        message: message.into(),
    }
}

fn check_grid(key: &str, values: &[f64], positive: bool) -> Result<(), CliError> {
    if values.is_empty() {
        return Err(invalid(key, "must not be empty"));
    }
    if let Some(x) = values.iter().find(|x| !x.is_finite() || (positive && **x <= 0.0) || **x < 0.0) {
        let need = if positive { "positive" } else { "nonnegative" };
        return Err(invalid(key, format!("entries must be finite and {need}, found {x}")));
    }
    Ok(())
}

impl RunConfig {
    /// Range and consistency checks that the schema cannot express.
    pub fn check(&self) -> Result<(), CliError> {
        if let Some(n) = self.grid_n {
            if n < 8 || n % 2 == 1 {
                return Err(invalid("grid_n", format!("must be even and at least 8, got {n}")));
            }
        }
        let positive = [
            ("rate.theta_max", self.rate.theta_max),
            ("rate.theta_cap", self.rate.theta_cap),
            ("inversion.tol", self.inversion.tol),
            ("simulate.t", self.simulate.t),
            ("simulate.dt", self.simulate.dt),
        ];
        for (key, x) in positive {
            if !(x > 0.0 && x.is_finite()) {
                return Err(invalid(key, format!("must be positive, got {x}")));
            }
        }
        if self.rate.theta_cap < self.rate.theta_max {
            return Err(invalid("rate.theta_cap", "must be at least rate.theta_max"));
        }
        if self.inversion.max_rounds == 0 || self.inversion.max_nodes == 0 {
            return Err(invalid("inversion", "max_rounds and max_nodes must be positive"));
        }
        if self.simulate.n_paths == 0 {
            return Err(invalid("simulate.n_paths", "must be positive"));
        }
        if !self.simulate.a.is_finite() {
            return Err(invalid("simulate.a", "must be finite"));
        }
        if self.a_grid.iter().any(|a| !a.is_finite()) || self.a_grid.is_empty() {
            return Err(invalid("a_grid", "entries must be finite and the grid nonempty"));
        }
        check_grid("theta_grid", &self.theta_grid, false)?;
        check_grid("expand.times", &self.expand.times, true)?;
        check_grid("conditions.s_grid", &self.conditions.s_grid, true)?;
        check_grid("conditions.t_grid", &self.conditions.t_grid, true)?;
        Ok(())
    }
}

/// Read, schema-check and validate a config and the model it refers to.
pub fn parse_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = read(path)?;
    let mut config: RunConfig = parse_strict(path, &text)?;
    config.check()?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let model_path = base.join(&config.model);
    if !model_path.is_file() {
        return Err(invalid("model", format!("model file {} does not exist", model_path.display())));
    }
    let model_file: ModelFile = parse_strict(&model_path, &read(&model_path)?)?;
    let grid_n = config.grid_n.or(model_file.grid_n()).unwrap_or(DEFAULT_GRID_N);
    config.grid_n = Some(grid_n);
    config.check()?;
    let report = validate_with_frame(&model_file.model(), grid_n, model_file.eval_frame());
    if !report.is_valid() {
        return Err(CliError::InvalidModel {
            path: model_path,
            report: report.to_string(),
        });
    }
    let hash = config_hash(&config, &model_file);
    Ok(LoadedConfig {
        config,
        base,
        model_file,
        hash,
    })
}

/// The resolved configuration as pretty JSON; parsing it again yields the
/// same configuration.
pub fn emit_config(config: &RunConfig) -> String {
    let mut text = serde_json::to_string_pretty(config).expect("configuration serializes");
    text.push('\n');
    text
}

/// SHA-256 over the canonical serializations of the configuration and the
/// model.
pub fn config_hash(config: &RunConfig, model: &ModelFile) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(config).expect("configuration serializes"));
    hasher.update([0u8]);
    hasher.update(serde_json::to_vec(model).expect("model serializes"));
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn minimal() -> RunConfig {
        parse_strict(Path::new("run.json"), r#"{"model": "m.json"}"#).unwrap()
    }

    #[test]
    fn unknown_nested_key_is_located() {
        let err = parse_strict::<RunConfig>(Path::new("run.json"), "{\"model\": \"m.json\",\n \"rate\": {\"theta\": 1}}")
            .unwrap_err();
        match err {
            CliError::Schema { line, key, .. } => {
                assert_eq!(line, 2);
                assert!(key.starts_with("rate"), "{key}");
            }
            other => panic!("{other}"),
        }
    }

    proptest! {
        #[test]
        fn emitted_config_parses_back(
            seed in any::<u64>(),
            grid_n in prop::option::of(4usize..512),
            a_grid in prop::collection::vec(-1e3f64..1e3, 1..6),
            tol in 1e-15f64..1.0,
            dt in 1e-6f64..1e-2,
            svg in any::<bool>(),
        ) {
            let mut config = minimal();
            config.seed = seed;
            config.grid_n = grid_n.map(|n| 2 * n);
            config.a_grid = a_grid;
            config.inversion.tol = tol;
            config.simulate.dt = dt;
            config.svg = svg;
            let text = emit_config(&config);
            let back: RunConfig = parse_strict(Path::new("run.json"), &text).unwrap();
            prop_assert_eq!(&back, &config);
            prop_assert_eq!(emit_config(&back), text);
        }
    }
}
