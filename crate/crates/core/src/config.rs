//! Run configuration: JSON schema, defaults and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::grid::{PeriodicGrid, Point};
use crate::mather::EtaRule;
use crate::models::{validate_assumptions, AxisDiffusion, DiffusionSpec, DiscountSpec, HamiltonianSpec, PotentialSpec};
use crate::solver::{estimate_ergodic_constant, ProblemSpec, SolveOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Solve,
    Ergodic,
    VvGap,
    Adjoint,
    Mather,
    Regularize,
    Select,
    TheoremA,
    TheoremB,
    TheoremC,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Experiment::Solve,
        Experiment::Ergodic,
        Experiment::VvGap,
        Experiment::Adjoint,
        Experiment::Mather,
        Experiment::Regularize,
        Experiment::Select,
        Experiment::TheoremA,
        Experiment::TheoremB,
        Experiment::TheoremC,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Solve => "solve",
            Experiment::Ergodic => "ergodic",
            Experiment::VvGap => "vv-gap",
            Experiment::Adjoint => "adjoint",
            Experiment::Mather => "mather",
            Experiment::Regularize => "regularize",
            Experiment::Select => "select",
            Experiment::TheoremA => "theorem-a",
            Experiment::TheoremB => "theorem-b",
            Experiment::TheoremC => "theorem-c",
        }
    }

    pub fn parse(s: &str) -> Option<Experiment> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn default_diffusion() -> DiffusionSpec {
    DiffusionSpec::zero()
}

fn default_discount() -> DiscountSpec {
    DiscountSpec::Linear
}

fn default_potential() -> PotentialSpec {
    PotentialSpec::zero()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hamiltonian: HamiltonianSpec,
    #[serde(default = "default_diffusion")]
    pub diffusion: DiffusionSpec,
    #[serde(default = "default_discount")]
    pub discount: DiscountSpec,
    #[serde(default = "default_potential")]
    pub potential: PotentialSpec,
    /// Ergodic constant. When absent it is `max W` for first-order models
    /// and estimated by the discounted extrapolation otherwise.
    #[serde(default)]
    pub c_h: Option<f64>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "one")]
    pub dim: usize,
    pub n: usize,
}

fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    200
}
fn default_ceiling() -> f64 {
    0.5
}
fn default_max_mode() -> usize {
    4
}
fn default_slack_c() -> f64 {
    20.0
}
fn default_family_size() -> usize {
    8
}
fn default_cauchy_tol() -> f64 {
    0.01
}
fn default_x0() -> Vec<Vec<f64>> {
    vec![vec![0.0]]
}

/// Experiment parameters. Each experiment reads the subset it needs and
/// rejects missing required entries by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentParams {
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Strictly decreasing.
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub eta: f64,
    /// Strictly decreasing.
    #[serde(default)]
    pub etas: Option<Vec<f64>>,
    #[serde(default)]
    pub eta_rule: EtaRule,
    /// Adjoint source points; 1D entries need one coordinate.
    #[serde(default = "default_x0")]
    pub x0: Vec<Vec<f64>>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_ceiling")]
    pub lambda_ceiling: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_mode")]
    pub max_mode: usize,
    /// Constant `C` of the slack `C·(h + λ + η)` used by the certificates.
    #[serde(default = "default_slack_c")]
    pub slack_c: f64,
    /// Oracle family representative used as `w` or `û₀`; defaults to the
    /// last (smooth) one for theorem-c and the first (kinked) one for regularize.
    #[serde(default)]
    pub representative: Option<usize>,
    #[serde(default = "default_family_size")]
    pub family_size: usize,
    #[serde(default = "default_cauchy_tol")]
    pub cauchy_tol: f64,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        serde_json::from_value(Value::Object(Default::default())).expect("all fields have defaults")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: Experiment,
    #[serde(default)]
    pub params: ExperimentParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    Json,
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Json]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Run directory; `--out` overrides it.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: None,
            formats: default_formats(),
            workers: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// λ sequence used to estimate `c_H` when the config leaves it out and the
/// model has diffusion.
pub const ERGODIC_LAMBDAS: [f64; 3] = [1e-2, 5e-3, 2.5e-3];

fn config_err(field: impl Into<String>, detail: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        detail: detail.into(),
    }
}

/// Dotted paths of keys present in `input` but absent from `canonical`.
fn unknown_keys(input: &Value, canonical: &Value, path: &str, out: &mut Vec<String>) {
    let join = |k: &str| if path.is_empty() { k.to_string() } else { format!("{path}.{k}") };
    match (input, canonical) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in a {
                match b.get(k) {
                    Some(w) => unknown_keys(v, w, &join(k), out),
                    None => out.push(join(k)),
                }
            }
        }
        (Value::Array(a), Value::Array(b)) => {
            for (i, (v, w)) in a.iter().zip(b).enumerate() {
                unknown_keys(v, w, &format!("{path}[{i}]"), out);
            }
        }
        _ => {}
    }
}

fn check_positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(config_err(field, format!("must be positive and finite, got {v}")))
    }
}

fn check_decreasing(field: &str, seq: &[f64]) -> Result<()> {
    for (i, &v) in seq.iter().enumerate() {
        check_positive(&format!("{field}[{i}]"), v)?;
    }
    if let Some(i) = seq.windows(2).position(|w| !(w[1] < w[0])) {
        return Err(config_err(
            format!("{field}[{}]", i + 1),
            "sequence must be strictly decreasing",
        ));
    }
    Ok(())
}

impl RunConfig {
    /// Parse JSON text, rejecting unknown keys by dotted path, then validate.
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let value: Value = serde_json::from_str(text).map_err(|e| {
            config_err(format!("line {} column {}", e.line(), e.column()), e.to_string())
        })?;
        let cfg: RunConfig = serde_path_to_error::deserialize(value.clone()).map_err(|e| {
            let path = e.path().to_string();
            let field = if path == "." { "config".to_string() } else { path };
            config_err(field, e.into_inner().to_string())
        })?;
        let canonical = serde_json::to_value(&cfg)?;
        let mut unknown = Vec::new();
        unknown_keys(&value, &canonical, "", &mut unknown);
        if let Some(first) = unknown.first() {
            return Err(config_err(first.clone(), "unknown key"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical JSON with every default filled in.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn grid(&self) -> Result<PeriodicGrid> {
        PeriodicGrid::new(self.grid.dim, self.grid.n).map_err(|e| config_err("grid", e.to_string()))
    }

    pub fn first_order(&self) -> bool {
        self.model.diffusion.axes.iter().all(|a| matches!(a, AxisDiffusion::Zero))
    }

    /// `c_H` as configured, else `max W` for first-order mechanical models,
    /// else the discounted extrapolation over [`ERGODIC_LAMBDAS`]. Returns
    /// the value and where it came from.
    pub fn resolve_c_h(&self) -> Result<(f64, &'static str)> {
        if let Some(c) = self.model.c_h {
            return Ok((c, "config"));
        }
        if self.first_order() {
            return Ok((self.model.hamiltonian.potential().extrema(self.grid.dim).1, "max W"));
        }
        let problem = self.problem(0.0)?;
        let est = estimate_ergodic_constant(&problem, 0.0, &ERGODIC_LAMBDAS, &self.solve_options())?;
        Ok((est.c_h, "extrapolated"))
    }

    /// The configured problem with the given ergodic constant.
    pub fn problem(&self, c_h: f64) -> Result<ProblemSpec> {
        let m = &self.model;
        let grid = self.grid()?;
        // A sampled potential is interpolated onto the run grid.
        let source = match &m.potential {
            PotentialSpec::Sampled { field } if field.grid().dim() != grid.dim() => {
                return Err(config_err("model.potential.field.grid.dim", "must match grid.dim"));
            }
            PotentialSpec::Sampled { field } => *field.grid(),
            PotentialSpec::Closed { .. } => grid,
        };
        Ok(ProblemSpec::new(
            m.hamiltonian.clone(),
            m.diffusion.clone(),
            m.discount.clone(),
            m.potential.clone(),
            c_h,
            source,
        )
        .with_grid(grid))
    }

    pub fn solve_options(&self) -> SolveOptions {
        let p = &self.experiment.params;
        SolveOptions {
            tol: p.tol,
            max_iter: p.max_iter,
            lambda_ceiling: p.lambda_ceiling,
            initial: None,
        }
    }

    pub fn x0_points(&self) -> Vec<Point> {
        self.experiment
            .params
            .x0
            .iter()
            .map(|x| [x.first().copied().unwrap_or(0.0), x.get(1).copied().unwrap_or(0.0)])
            .collect()
    }

    pub fn require_lambda(&self) -> Result<f64> {
        self.experiment
            .params
            .lambda
            .ok_or_else(|| config_err("experiment.params.lambda", format!("required by {}", self.experiment.name)))
    }

    pub fn require_lambdas(&self, min_len: usize) -> Result<&[f64]> {
        let seq = self
            .experiment
            .params
            .lambdas
            .as_deref()
            .ok_or_else(|| config_err("experiment.params.lambdas", format!("required by {}", self.experiment.name)))?;
        if seq.len() < min_len {
            return Err(config_err(
                "experiment.params.lambdas",
                format!("{} needs at least {min_len} entries, got {}", self.experiment.name, seq.len()),
            ));
        }
        Ok(seq)
    }

    pub fn require_etas(&self, min_len: usize) -> Result<&[f64]> {
        let seq = self
            .experiment
            .params
            .etas
            .as_deref()
            .ok_or_else(|| config_err("experiment.params.etas", format!("required by {}", self.experiment.name)))?;
        if seq.len() < min_len {
            return Err(config_err(
                "experiment.params.etas",
                format!("{} needs at least {min_len} entries, got {}", self.experiment.name, seq.len()),
            ));
        }
        Ok(seq)
    }

    /// Field-level checks plus the model assumption validator.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        let p = &self.experiment.params;
        check_positive("experiment.params.tol", p.tol)?;
        check_positive("experiment.params.lambda_ceiling", p.lambda_ceiling)?;
        check_positive("experiment.params.slack_c", p.slack_c)?;
        check_positive("experiment.params.cauchy_tol", p.cauchy_tol)?;
        if p.max_iter == 0 {
            return Err(config_err("experiment.params.max_iter", "must be at least 1"));
        }
        if !(p.eta.is_finite() && p.eta >= 0.0) {
            return Err(config_err("experiment.params.eta", format!("must be nonnegative, got {}", p.eta)));
        }
        if let EtaRule::Fixed { eta } = p.eta_rule {
            if !(eta.is_finite() && eta >= 0.0) {
                return Err(config_err("experiment.params.eta_rule.eta", format!("must be nonnegative, got {eta}")));
            }
        }
        if let Some(l) = p.lambda {
            check_positive("experiment.params.lambda", l)?;
            if l > p.lambda_ceiling {
                return Err(config_err(
                    "experiment.params.lambda",
                    format!("{l} exceeds the ceiling lambda_ceiling = {}", p.lambda_ceiling),
                ));
            }
        }
        if let Some(seq) = &p.lambdas {
            check_decreasing("experiment.params.lambdas", seq)?;
            if seq[0] > p.lambda_ceiling {
                return Err(config_err(
                    "experiment.params.lambdas[0]",
                    format!("{} exceeds the ceiling lambda_ceiling = {}", seq[0], p.lambda_ceiling),
                ));
            }
        }
        if let Some(seq) = &p.etas {
            check_decreasing("experiment.params.etas", seq)?;
        }
        if p.x0.is_empty() {
            return Err(config_err("experiment.params.x0", "needs at least one point"));
        }
        for (i, x) in p.x0.iter().enumerate() {
            if x.len() != grid.dim() || x.iter().any(|c| !c.is_finite()) {
                return Err(config_err(
                    format!("experiment.params.x0[{i}]"),
                    format!("expected {} finite coordinates", grid.dim()),
                ));
            }
        }
        if p.family_size < 2 {
            return Err(config_err("experiment.params.family_size", "must be at least 2"));
        }
        if let Some(r) = p.representative {
            if r >= p.family_size {
                return Err(config_err(
                    "experiment.params.representative",
                    format!("index {r} outside a family of {}", p.family_size),
                ));
            }
        }
        if let Some(c) = self.model.c_h {
            if !c.is_finite() {
                return Err(config_err("model.c_h", "must be finite"));
            }
        }
        if self.output.formats.is_empty() {
            return Err(config_err("output.formats", "needs at least one format"));
        }
        if self.output.workers == Some(0) {
            return Err(config_err("output.workers", "must be at least 1"));
        }
        let problem = self.problem(self.model.c_h.unwrap_or(0.0))?;
        validate_assumptions(&problem, 0.0).map_err(|e| config_err("model", e.to_string()))?;
        Ok(())
    }
}

/// Read and validate a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(path.display().to_string(), e.to_string()))?;
    RunConfig::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        r#"{
            "model": {"hamiltonian": {"family": "mechanical", "potential": {"modes": [{"amplitude": 1.0, "frequency": [2]}]}}},
            "grid": {"n": 512},
            "experiment": {"name": "solve", "params": {"lambda": 0.01}}
        }"#
        .to_string()
    }

    #[test]
    fn defaults_are_filled() {
        let cfg = RunConfig::from_json(&minimal()).unwrap();
        assert_eq!(cfg.experiment.params.tol, 1e-8);
        assert_eq!(cfg.experiment.params.eta, 0.0);
        assert_eq!(cfg.grid.dim, 1);
        assert_eq!(cfg.model.discount, DiscountSpec::Linear);
        assert_eq!(cfg.output.formats, default_formats());
    }

    #[test]
    fn round_trip() {
        let cfg = RunConfig::from_json(&minimal()).unwrap();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn negative_lambda_names_field() {
        let text = minimal().replace("0.01", "-0.1");
        match RunConfig::from_json(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "experiment.params.lambda"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_rejected_with_path() {
        let text = minimal().replace("\"n\": 512", "\"n\": 512, \"spacing\": 0.1");
        match RunConfig::from_json(&text) {
            Err(Error::Config { field, detail }) => {
                assert!(field.contains("spacing") || detail.contains("spacing"), "{field}: {detail}")
            }
            other => panic!("{other:?}"),
        }
        let text = minimal().replace("\"lambda\": 0.01", "\"lambda\": 0.01, \"lamda\": 2");
        assert!(matches!(RunConfig::from_json(&text), Err(Error::Config { .. })));
    }

    #[test]
    fn ceiling_and_sequences() {
        let text = minimal().replace("0.01", "0.9");
        assert!(matches!(RunConfig::from_json(&text), Err(Error::Config { field, .. }) if field == "experiment.params.lambda"));
        let text = minimal().replace("\"lambda\": 0.01", "\"lambdas\": [0.1, 0.2]");
        assert!(matches!(RunConfig::from_json(&text), Err(Error::Config { field, .. }) if field == "experiment.params.lambdas[1]"));
    }

    #[test]
    fn crossing_sigma_is_rejected() {
        let text = minimal().replace(
            "\"frequency\": [2]}]}}",
            "\"frequency\": [2]}]}}, \"discount\": {\"family\": \"exp-spatial\", \"sigma\": {\"offset\": 0.5, \"modes\": [{\"amplitude\": 1.0, \"frequency\": [1]}]}}",
        );
        match RunConfig::from_json(&text) {
            Err(Error::Config { field, detail }) => {
                assert_eq!(field, "model");
                assert!(detail.contains("positive discount derivative"), "{detail}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn experiment_names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(Experiment::parse(e.name()), Some(e));
            let v = serde_json::to_value(e).unwrap();
            assert_eq!(v, Value::String(e.name().into()));
        }
    }
}
