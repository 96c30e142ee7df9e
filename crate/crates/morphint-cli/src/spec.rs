//! Run specification schema and its resolution into library types.
//!
//! A spec is a single JSON document; unknown keys are rejected. The `mode`
//! key selects between a run spec (integrate / tune / trace) and a bench
//! suite.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use morphint::domain::{HyperRectangle, MorphRun};
use morphint::expr::ExpressionProgram;
use morphint::integrand::{builtin, from_expression, BuiltinName, Integrand, Signedness};
use morphint::propagator::PropagatorConfig;
use morphint::splitting::SplitConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Integrate,
    Tune,
    Bench,
    Trace,
}

impl FromStr for Mode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "integrate" => Self::Integrate,
            "tune" => Self::Tune,
            "bench" => Self::Bench,
            "trace" => Self::Trace,
            other => bail!("unknown mode `{other}` (expected integrate, tune, bench, or trace)"),
        })
    }
}

/// Integrand selection: a named builtin or an expression over `x1..xN`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IntegrandSpec {
    Builtin {
        builtin: String,
        /// Terns for the phi blocks (dimension `3*count`), the dimension
        /// itself otherwise.
        #[serde(default = "one")]
        count: usize,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        params: BTreeMap<String, f64>,
    },
    Expression { expression: String, dim: usize, signedness: Signedness },
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Maximum move lengths: `"auto"` (tuner), one scalar for every dimension,
/// or the full per-dimension vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeltaSpec {
    Keyword(String),
    Uniform(f64),
    PerDim(Vec<f64>),
}

impl Default for DeltaSpec {
    fn default() -> Self {
        Self::Keyword("auto".into())
    }
}

impl DeltaSpec {
    pub fn is_auto(&self) -> Result<bool> {
        match self {
            Self::Keyword(word) if word == "auto" => Ok(true),
            Self::Keyword(word) => bail!("bad delta_max `{word}` (expected \"auto\", a number, or an array)"),
            _ => Ok(false),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PropagatorSpec {
    IsMc {
        #[serde(default)]
        delta_max: DeltaSpec,
    },
    Langevin { diffusion: f64 },
}

impl Default for PropagatorSpec {
    fn default() -> Self {
        Self::IsMc { delta_max: DeltaSpec::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    #[serde(default = "default_n_blocks")]
    pub n_blocks: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_trial: Option<f64>,
    #[serde(default)]
    pub propagator: PropagatorSpec,
}

fn default_n_traj() -> usize {
    5000
}

fn default_n_steps() -> usize {
    100_000
}

fn default_n_blocks() -> usize {
    50
}

/// Full run specification for integrate / tune / trace modes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub mode: Mode,
    pub integrand: IntegrandSpec,
    /// Defaults to the builtin's conventional domain; required for
    /// expressions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainSpec>,
    pub run: RunParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

/// A spec resolved against the library types, ready to execute.
pub struct ResolvedRun {
    pub integrand: Arc<dyn Integrand>,
    pub domain: HyperRectangle,
    /// Run with a concrete propagator (auto deltas resolved by the caller
    /// via the tuner before building this).
    pub params: RunParams,
    pub split: Option<SplitConfig>,
    pub auto_tune: bool,
}

pub fn resolve_integrand(spec: &IntegrandSpec) -> Result<(Arc<dyn Integrand>, Option<HyperRectangle>)> {
    match spec {
        IntegrandSpec::Builtin { builtin: name, count, params } => {
            let name = BuiltinName::from_str(name)?;
            let integrand = builtin(name, *count, params)?;
            Ok((integrand, Some(name.default_domain(*count))))
        }
        IntegrandSpec::Expression { expression, dim, signedness } => {
            let program = ExpressionProgram::parse(expression, *dim)
                .with_context(|| format!("parsing expression `{expression}`"))?;
            Ok((from_expression(program, *signedness), None))
        }
    }
}

impl RunSpec {
    pub fn resolve(&self) -> Result<ResolvedRun> {
        let (integrand, default_domain) = resolve_integrand(&self.integrand)?;
        let domain = match (&self.domain, default_domain) {
            (Some(d), _) => HyperRectangle::new(d.lower.clone(), d.upper.clone())?,
            (None, Some(d)) => d,
            (None, None) => bail!("expression integrands need an explicit domain"),
        };
        if domain.dim() != integrand.dim() {
            bail!(
                "domain has {} dimensions but the integrand expects {}",
                domain.dim(),
                integrand.dim()
            );
        }
        let auto_tune = match &self.run.propagator {
            PropagatorSpec::IsMc { delta_max } => delta_max.is_auto()?,
            PropagatorSpec::Langevin { .. } => false,
        };
        if let Some(split) = &self.split {
            split.validate()?;
        }
        Ok(ResolvedRun {
            integrand,
            domain,
            params: self.run.clone(),
            split: self.split,
            auto_tune,
        })
    }
}

impl RunParams {
    /// Builds the concrete run; `delta_max` supplies tuned step lengths when
    /// the spec said `"auto"`.
    pub fn to_morph_run(&self, dim: usize, tuned_delta: Option<Vec<f64>>) -> Result<MorphRun> {
        let propagator = match &self.propagator {
            PropagatorSpec::IsMc { delta_max } => {
                let delta = match (delta_max, tuned_delta) {
                    (DeltaSpec::PerDim(v), _) => v.clone(),
                    (DeltaSpec::Uniform(d), _) => vec![*d; dim],
                    (DeltaSpec::Keyword(_), Some(tuned)) => tuned,
                    (DeltaSpec::Keyword(_), None) => {
                        bail!("auto delta_max requested but no tuned value supplied")
                    }
                };
                PropagatorConfig::is_mc(delta)?
            }
            PropagatorSpec::Langevin { diffusion } => PropagatorConfig::langevin(*diffusion)?,
        };
        Ok(MorphRun::new(
            self.n_traj,
            self.n_steps,
            self.n_blocks,
            propagator,
            self.master_seed,
            self.e_trial,
        )?)
    }

    /// Short pilot run used by the step tuner.
    pub fn pilot(&self, dim: usize) -> Result<MorphRun> {
        Ok(MorphRun::new(
            100,
            1000,
            2,
            PropagatorConfig::is_mc_uniform(1.0, dim)?,
            self.master_seed,
            self.e_trial,
        )?)
    }
}

// ---------------------------------------------------------------------------
// Bench suite
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMethod {
    MorphIsmc,
    MorphLangevin,
    BaselineIsmc,
    BaselineMean,
}

impl BenchMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::MorphIsmc => "morph-ismc",
            Self::MorphLangevin => "morph-langevin",
            Self::BaselineIsmc => "baseline-ismc",
            Self::BaselineMean => "baseline-mean",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchRow {
    /// Builtin integrand name.
    pub function: String,
    #[serde(default = "one")]
    pub count: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    pub method: BenchMethod,
    pub n_traj: usize,
    pub n_steps: usize,
    #[serde(default = "default_n_blocks")]
    pub n_blocks: usize,
    #[serde(default)]
    pub delta_max: DeltaSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_trial: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSuite {
    pub mode: Mode,
    pub rows: Vec<BenchRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    /// Relative tolerance of the cubature used for the oracle column.
    #[serde(default = "default_oracle_tol")]
    pub oracle_rel_tol: f64,
}

fn default_oracle_tol() -> f64 {
    1e-5
}

/// Parses a spec document, applying command-line overrides for mode and
/// seed before schema validation.
pub fn load(text: &str, mode_override: Option<Mode>, seed_override: Option<u64>) -> Result<Document> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).context("spec is not valid JSON")?;
    let object = value.as_object_mut().ok_or_else(|| anyhow!("spec must be a JSON object"))?;
    if let Some(mode) = mode_override {
        let word = match mode {
            Mode::Integrate => "integrate",
            Mode::Tune => "tune",
            Mode::Bench => "bench",
            Mode::Trace => "trace",
        };
        object.insert("mode".into(), serde_json::Value::String(word.into()));
    }
    let mode: Mode = match object.get("mode") {
        Some(serde_json::Value::String(s)) => s.parse()?,
        Some(_) => bail!("`mode` must be a string"),
        None => bail!("spec is missing the `mode` key"),
    };
    if mode == Mode::Bench {
        let suite: BenchSuite = serde_json::from_value(value).context("invalid bench suite")?;
        return Ok(Document::Bench(suite));
    }
    if let Some(seed) = seed_override {
        let run = object
            .get_mut("run")
            .and_then(|r| r.as_object_mut())
            .ok_or_else(|| anyhow!("spec is missing the `run` object"))?;
        run.insert("master_seed".into(), serde_json::Value::from(seed));
    }
    let spec: RunSpec = serde_json::from_value(value).context("invalid run spec")?;
    Ok(Document::Run(spec))
}

pub enum Document {
    Run(RunSpec),
    Bench(BenchSuite),
}
