//! Experiment configuration files (TOML).
//!
//! ```toml
//! experiment = "couple"
//! repetitions = 4
//! output_dir = "runs/couple"
//!
//! [potential]
//! kind = "diagonal_quadratic"
//! dim = 2
//! coefficients = [0.5, 2.0]
//!
//! [sampler]
//! sampler = "idealized_hmc"
//! T = 0.5
//! k = 50
//! seed = 7
//!
//! [[expectations]]
//! metric = "contraction_slope_mean"
//! comparator = "<"
//! threshold = 0.0
//! ```
//!
//! Unknown keys are rejected. Validation reports every offending field, not
//! just the first.

use std::fmt;
use std::path::PathBuf;

use hmc_lab::dynamics::Integrator;
use hmc_lab::potentials::Potential;
use hmc_lab::samplers::{SamplerConfig, SamplerKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Sample,
    Couple,
    IntegrateCheck,
    Convergence,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Sample => "sample",
            ExperimentKind::Couple => "couple",
            ExperimentKind::IntegrateCheck => "integrate-check",
            ExperimentKind::Convergence => "convergence",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKindName {
    SphericalQuadratic,
    DiagonalQuadratic,
    DenseQuadratic,
    PerturbedQuadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerName {
    IdealizedHmc,
    UnadjustedHmc,
    Rwm,
    Ula,
}

impl From<SamplerName> for SamplerKind {
    fn from(s: SamplerName) -> Self {
        match s {
            SamplerName::IdealizedHmc => SamplerKind::IdealizedHmc,
            SamplerName::UnadjustedHmc => SamplerKind::UnadjustedHmc,
            SamplerName::Rwm => SamplerKind::Rwm,
            SamplerName::Ula => SamplerKind::Ula,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorName {
    Exact,
    Leapfrog,
    Euler2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Lt => value < threshold,
            Comparator::Le => value <= threshold,
            Comparator::Gt => value > threshold,
            Comparator::Ge => value >= threshold,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub kind: Option<PotentialKindName>,
    pub dim: Option<usize>,
    /// `c_j` of a diagonal quadratic `Σ c_j x_j²`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    /// Hessian spectrum of a dense quadratic, or of a dense perturbed base.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum_seed: Option<u64>,
    /// Diagonal of the base matrix `A` of a perturbed quadratic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_diagonal: Option<Vec<f64>>,
    /// Softplus amplitude `a` of a perturbed quadratic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerName>,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Scheme checked by `integrate-check`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorName>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub metric: String,
    pub comparator: Comparator,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repetitions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Starting point of every chain; defaults to the potential's minimizer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Seed for the reference chain's stationary start (`couple`); defaults to
    /// `seed + 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0_seed: Option<u64>,
    pub potential: PotentialSpec,
    pub sampler: SamplerSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub expectations: Vec<Expectation>,
}

/// One offending field and what is wrong with it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}`: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ConfigErrors(pub Vec<FieldError>);

impl ConfigErrors {
    pub fn fields(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(|e| e.field.as_str())
    }

    pub fn mentions(&self, field: &str) -> bool {
        self.fields().any(|f| f == field)
    }
}

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "invalid configuration ({} error(s)):", self.0.len())?;
        for e in &self.0 {
            writeln!(f, "  {e}")?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct Errors(Vec<FieldError>);

impl Errors {
    fn push(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(FieldError {
            field: field.to_string(),
            message: message.into(),
        });
    }
}

const TOP_KEYS: &[&str] = &[
    "experiment",
    "repetitions",
    "output_dir",
    "x0",
    "y0_seed",
    "potential",
    "sampler",
    "expectations",
];
const POTENTIAL_KEYS: &[&str] = &[
    "kind",
    "dim",
    "coefficients",
    "spectrum",
    "spectrum_seed",
    "base_diagonal",
    "perturbation",
];
const SAMPLER_KEYS: &[&str] = &["sampler", "T", "eta", "k", "seed", "integrator"];
const EXPECTATION_KEYS: &[&str] = &["metric", "comparator", "threshold"];

fn unknown_keys(table: &toml::Table, allowed: &[&str], prefix: &str, errors: &mut Errors) {
    for key in table.keys() {
        if !allowed.contains(&key.as_str()) {
            errors.push(&format!("{prefix}{key}"), "unknown key");
        }
    }
}

fn check_structure(table: &toml::Table, errors: &mut Errors) {
    unknown_keys(table, TOP_KEYS, "", errors);
    for (section, keys) in [("potential", POTENTIAL_KEYS), ("sampler", SAMPLER_KEYS)] {
        match table.get(section) {
            Some(toml::Value::Table(t)) => unknown_keys(t, keys, &format!("{section}."), errors),
            Some(_) => errors.push(section, "must be a table"),
            None => errors.push(section, "missing section"),
        }
    }
    if let Some(toml::Value::Array(items)) = table.get("expectations") {
        for (i, item) in items.iter().enumerate() {
            if let toml::Value::Table(t) = item {
                unknown_keys(t, EXPECTATION_KEYS, &format!("expectations[{i}]."), errors);
            }
        }
    }
}

/// Parse and validate a configuration.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let mut errors = Errors::default();
    let table: toml::Table = toml::from_str(text).map_err(|e| {
        ConfigErrors(vec![FieldError {
            field: "<syntax>".into(),
            message: e.to_string().trim().to_string(),
        }])
    })?;
    check_structure(&table, &mut errors);
    if !errors.0.is_empty() {
        return Err(ConfigErrors(errors.0));
    }
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
        ConfigErrors(vec![FieldError {
            field: "<type>".into(),
            message: e.to_string().trim().to_string(),
        }])
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// TOML text that [`parse_config`] reads back to an equal value.
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("configuration is always representable as TOML")
}

fn positive(errors: &mut Errors, field: &str, value: Option<f64>) -> Option<f64> {
    match value {
        None => {
            errors.push(field, "required");
            None
        }
        Some(v) if !(v.is_finite() && v > 0.0) => {
            errors.push(field, format!("must be finite and > 0, found {v}"));
            None
        }
        Some(v) => Some(v),
    }
}

impl ExperimentConfig {
    pub fn kind(&self) -> ExperimentKind {
        self.experiment.unwrap_or(ExperimentKind::Sample)
    }

    pub fn repetitions(&self) -> usize {
        self.repetitions.unwrap_or(1)
    }

    pub fn seed(&self) -> u64 {
        self.sampler.seed.unwrap_or(0)
    }

    pub fn y0_seed(&self) -> u64 {
        self.y0_seed.unwrap_or_else(|| self.seed().wrapping_add(1))
    }

    /// Collects every violated rule.
    pub fn validate(&self) -> Result<(), ConfigErrors> {
        let mut errors = Errors::default();
        let kind = match self.experiment {
            Some(k) => k,
            None => {
                errors.push("experiment", "required");
                ExperimentKind::Sample
            }
        };
        if self.repetitions == Some(0) {
            errors.push("repetitions", "must be >= 1");
        }
        if kind == ExperimentKind::Convergence && self.repetitions() < 2 {
            errors.push("repetitions", "convergence needs at least 2 chains for a moment fit");
        }
        let potential = self.build_potential_collect(&mut errors);
        if let (Some(p), Some(x0)) = (&potential, &self.x0) {
            if x0.len() != p.dim() {
                errors.push("x0", format!("has length {}, potential dim is {}", x0.len(), p.dim()));
            }
        }
        if let Some(x0) = &self.x0 {
            if x0.iter().any(|v| !v.is_finite()) {
                errors.push("x0", "entries must be finite");
            }
        }
        let s = &self.sampler;
        if kind == ExperimentKind::IntegrateCheck {
            positive(&mut errors, "sampler.T", s.t);
            let scheme = s.integrator.unwrap_or(if s.eta.is_some() {
                IntegratorName::Leapfrog
            } else {
                IntegratorName::Exact
            });
            if scheme != IntegratorName::Exact {
                positive(&mut errors, "sampler.eta", s.eta);
            } else if let Some(p) = &potential {
                if !p.is_quadratic() {
                    errors.push("sampler.integrator", "exact flow needs a quadratic potential");
                }
            }
        } else {
            match s.sampler {
                None => errors.push("sampler.sampler", "required"),
                Some(name) => {
                    let sk = SamplerKind::from(name);
                    if matches!(kind, ExperimentKind::Couple | ExperimentKind::Convergence) && !sk.is_hmc() {
                        errors.push("sampler.sampler", format!("{kind} needs an HMC sampler"));
                    }
                    if sk.is_hmc() {
                        positive(&mut errors, "sampler.T", s.t);
                    }
                    if sk != SamplerKind::IdealizedHmc {
                        positive(&mut errors, "sampler.eta", s.eta);
                    }
                }
            }
            match s.k {
                None => errors.push("sampler.k", "required"),
                Some(0) if kind != ExperimentKind::Sample => errors.push("sampler.k", "must be >= 1"),
                _ => {}
            }
            if s.integrator.is_some() {
                errors.push("sampler.integrator", "only used by integrate-check");
            }
        }
        if kind == ExperimentKind::Convergence {
            if let Some(p) = &potential {
                if !p.is_quadratic() {
                    errors.push("potential.kind", "convergence compares against a Gaussian target; use a quadratic");
                }
            }
        }
        for (i, e) in self.expectations.iter().enumerate() {
            if e.metric.trim().is_empty() {
                errors.push(&format!("expectations[{i}].metric"), "must not be empty");
            }
            if e.threshold.is_nan() {
                errors.push(&format!("expectations[{i}].threshold"), "must not be NaN");
            }
        }
        if errors.0.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(errors.0))
        }
    }

    /// The configured potential. Only meaningful on a validated config.
    pub fn build_potential(&self) -> Result<Potential, ConfigErrors> {
        let mut errors = Errors::default();
        match self.build_potential_collect(&mut errors) {
            Some(p) => Ok(p),
            None => Err(ConfigErrors(errors.0)),
        }
    }

    fn build_potential_collect(&self, errors: &mut Errors) -> Option<Potential> {
        let spec = &self.potential;
        let before = errors.0.len();
        let Some(kind) = spec.kind else {
            errors.push("potential.kind", "required");
            return None;
        };
        let dim = match spec.dim {
            Some(0) => {
                errors.push("potential.dim", "must be >= 1");
                None
            }
            None => {
                errors.push("potential.dim", "required");
                None
            }
            d => d,
        };
        let sized = |errors: &mut Errors, field: &str, values: &Option<Vec<f64>>| -> Option<Vec<f64>> {
            match values {
                None => {
                    errors.push(field, "required");
                    None
                }
                Some(v) if dim.is_some_and(|d| d != v.len()) => {
                    errors.push(field, format!("has length {}, dim is {}", v.len(), dim.unwrap()));
                    None
                }
                Some(v) if v.iter().any(|c| !(c.is_finite() && *c > 0.0)) => {
                    errors.push(field, "entries must be finite and > 0");
                    None
                }
                Some(v) => Some(v.clone()),
            }
        };
        let built = match kind {
            PotentialKindName::SphericalQuadratic => dim.map(Potential::spherical),
            PotentialKindName::DiagonalQuadratic => sized(errors, "potential.coefficients", &spec.coefficients).map(Potential::diagonal),
            PotentialKindName::DenseQuadratic => {
                let spectrum = sized(errors, "potential.spectrum", &spec.spectrum);
                spectrum.map(|s| Potential::dense(s, spec.spectrum_seed.unwrap_or(0)))
            }
            PotentialKindName::PerturbedQuadratic => {
                let amplitude = match spec.perturbation {
                    None => {
                        errors.push("potential.perturbation", "required");
                        None
                    }
                    Some(a) if !(a.is_finite() && a >= 0.0) => {
                        errors.push("potential.perturbation", format!("must be finite and >= 0, found {a}"));
                        None
                    }
                    a => a,
                };
                if spec.base_diagonal.is_some() == spec.spectrum.is_some() {
                    errors.push("potential.base_diagonal", "give exactly one of `base_diagonal` or `spectrum`");
                    None
                } else if spec.base_diagonal.is_some() {
                    let diag = sized(errors, "potential.base_diagonal", &spec.base_diagonal);
                    diag.zip(amplitude).map(|(d, a)| Potential::perturbed_diagonal(d, a))
                } else {
                    let spectrum = sized(errors, "potential.spectrum", &spec.spectrum);
                    spectrum
                        .zip(amplitude)
                        .map(|(s, a)| Potential::perturbed_dense(s, spec.spectrum_seed.unwrap_or(0), a))
                }
            }
        };
        if errors.0.len() > before {
            return None;
        }
        match built {
            Some(Ok(p)) => Some(p),
            Some(Err(e)) => {
                errors.push("potential", e.to_string());
                None
            }
            None => None,
        }
    }

    /// Sampler settings for chain-based experiments.
    pub fn sampler_config(&self) -> SamplerConfig {
        let s = &self.sampler;
        SamplerConfig {
            sampler: s.sampler.map(SamplerKind::from).unwrap_or(SamplerKind::IdealizedHmc),
            integration_time: s.t,
            step_size: s.eta,
            steps: s.k.unwrap_or(0),
            seed: self.seed(),
        }
    }

    /// Integrator checked by `integrate-check`.
    pub fn integrator(&self) -> Integrator {
        let s = &self.sampler;
        match s.integrator {
            Some(IntegratorName::Exact) => Integrator::exact(),
            Some(IntegratorName::Leapfrog) => Integrator::leapfrog(s.eta.unwrap_or_default()),
            Some(IntegratorName::Euler2) => Integrator::euler2(s.eta.unwrap_or_default()),
            None => match s.eta {
                Some(eta) => Integrator::leapfrog(eta),
                None => Integrator::exact(),
            },
        }
    }
}
