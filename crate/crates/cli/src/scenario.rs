//! Scenario files: a JSON document with a chart declaration, engine
//! options, and a task payload whose shape depends on the subcommand.
//! Expression payloads are strings in the scalar expression grammar; form
//! literals are `{indices, coeff}` records whose indices are auto-sorted
//! with the permutation sign applied on load.

use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;
use varmax::extcalc::{Chart, DiffForm, VecField};
use varmax::symexpr::{parse_expr, ScalarExpr, ZeroTest};
use varmax::varprin::SampleConfig;

/// Error carrying a module-qualified code and the exit class: input errors
/// exit with 2, engine errors with 1.
#[derive(Debug, Clone)]
pub struct CliError {
    pub code: String,
    pub message: String,
    pub input: bool,
}

impl CliError {
    pub fn input(code: &str, message: impl ToString) -> CliError {
        CliError {
            code: code.to_string(),
            message: message.to_string(),
            input: true,
        }
    }

    pub fn engine(code: &str, message: impl ToString) -> CliError {
        CliError {
            code: code.to_string(),
            message: message.to_string(),
            input: false,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub chart: ChartSpec,
    /// Optional task tag; when present it must match the subcommand.
    #[serde(default)]
    pub task: Option<String>,
    #[serde(default)]
    pub options: OptionsSpec,
    #[serde(default)]
    pub payload: serde_json::Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    pub coords: Vec<String>,
    #[serde(default)]
    pub vertical: Vec<String>,
    #[serde(default)]
    pub time: Option<String>,
}

#[derive(Deserialize, Default, Clone)]
#[serde(deny_unknown_fields)]
pub struct OptionsSpec {
    pub seed: Option<u64>,
    pub trials: Option<u32>,
    pub tol: Option<f64>,
    pub nowhere_samples: Option<u32>,
    pub verify_points: Option<u32>,
    pub witness_points: Option<Vec<Vec<f64>>>,
}

impl OptionsSpec {
    /// Merge into a sampling config; CLI flags take precedence over file
    /// options, which take precedence over defaults.
    pub fn sample_config(&self, trials: Option<u32>, tol: Option<f64>) -> SampleConfig {
        let defaults = SampleConfig::default();
        SampleConfig {
            zero: ZeroTest {
                trials: trials.or(self.trials).unwrap_or(defaults.zero.trials),
                tol: tol.or(self.tol).unwrap_or(defaults.zero.tol),
            },
            nowhere_points: self.nowhere_samples.unwrap_or(defaults.nowhere_points),
            verify_points: self.verify_points.unwrap_or(defaults.verify_points),
            witness_points: self.witness_points.clone().unwrap_or_default(),
        }
    }
}

#[derive(Deserialize, Clone)]
#[serde(deny_unknown_fields)]
pub struct FormRec {
    pub indices: Vec<String>,
    pub coeff: String,
}

#[derive(Deserialize, Clone)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub start: Vec<f64>,
    pub t_end: f64,
    pub h: f64,
    #[serde(default)]
    pub monitors: BTreeMap<String, String>,
    #[serde(default)]
    pub drift_tol: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractPayload {
    #[serde(default)]
    pub theta: Option<Vec<FormRec>>,
    #[serde(default)]
    pub eta: Option<Vec<FormRec>>,
    #[serde(default)]
    pub residual_tol: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiouvillePayload {
    #[serde(default)]
    pub volume: Option<Vec<FormRec>>,
    pub gamma: Vec<FormRec>,
    #[serde(default)]
    pub gamma_degree: Option<usize>,
    #[serde(default)]
    pub sigma: Option<Vec<FormRec>>,
    #[serde(default)]
    pub time_name: Option<String>,
    #[serde(default)]
    pub residual_tol: Option<f64>,
    #[serde(default)]
    pub flow: Option<FlowSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianPayload {
    pub omega: Vec<FormRec>,
    /// Optional primitive with ω = m dβ; constant-coefficient ω get a
    /// linear primitive automatically.
    #[serde(default)]
    pub beta: Option<Vec<FormRec>>,
    pub hamiltonian: String,
    #[serde(default)]
    pub time_name: Option<String>,
    #[serde(default)]
    pub residual_tol: Option<f64>,
    #[serde(default)]
    pub flow: Option<FlowSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NambuPayload {
    #[serde(default)]
    pub volume: Option<Vec<FormRec>>,
    pub hamiltonians: Vec<String>,
    #[serde(default)]
    pub time_name: Option<String>,
    #[serde(default)]
    pub residual_tol: Option<f64>,
    #[serde(default)]
    pub flow: Option<FlowSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperHamPayload {
    pub omegas: [Vec<FormRec>; 3],
    pub hamiltonians: [String; 3],
    #[serde(default = "default_sign")]
    pub sign: i8,
    #[serde(default)]
    pub sigmas: Option<[Vec<FormRec>; 3]>,
    #[serde(default)]
    pub time_name: Option<String>,
    #[serde(default)]
    pub residual_tol: Option<f64>,
    #[serde(default)]
    pub flow: Option<FlowSpec>,
}

fn default_sign() -> i8 {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyPayload {
    pub field: Vec<String>,
    pub form: Vec<FormRec>,
    #[serde(default)]
    pub residual_tol: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowPayload {
    pub field: Vec<String>,
    pub start: Vec<f64>,
    pub t_end: f64,
    pub h: f64,
    #[serde(default)]
    pub monitors: BTreeMap<String, String>,
    #[serde(default)]
    pub drift_tol: Option<f64>,
}

#[derive(Deserialize, Clone)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub coord: String,
    pub origin: f64,
    pub spacing: f64,
    pub count: usize,
}

#[derive(Deserialize, Clone)]
#[serde(deny_unknown_fields)]
pub struct Phi0Spec {
    pub axes: Vec<AxisSpec>,
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
    #[serde(default)]
    pub fiber: BTreeMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionPayload {
    pub theta: Vec<FormRec>,
    pub phi0: Phi0Spec,
    pub steps: usize,
    pub h: f64,
    #[serde(default)]
    pub residual_tol: Option<f64>,
    #[serde(default)]
    pub tangency_threshold: Option<f64>,
}

// ---------------------------------------------------------------------------
// Loading and conversion
// ---------------------------------------------------------------------------

pub fn load_scenario(path: &Path) -> Result<ScenarioFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input("scenario.io", format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::input("scenario.json", format!("{}: {e}", path.display())))
}

/// Build the chart as declared; an empty vertical list defaults to the
/// first coordinate (tasks that need a true vertical pair validate later).
pub fn build_chart(spec: &ChartSpec) -> Result<Chart, CliError> {
    let coords: Vec<&str> = spec.coords.iter().map(String::as_str).collect();
    let vertical: Vec<&str> = if spec.vertical.is_empty() {
        coords.first().map(|c| vec![*c]).unwrap_or_default()
    } else {
        spec.vertical.iter().map(String::as_str).collect()
    };
    Chart::new(&coords, &vertical, spec.time.as_deref())
        .map_err(|e| CliError::input("extcalc.chart", e))
}

pub fn parse_scalar(source: &str, chart: &Chart) -> Result<ScalarExpr, CliError> {
    parse_expr(source, chart).map_err(|e| match e {
        varmax::symexpr::ExprError::UnknownIdentifier(ref name) => CliError::input(
            "symexpr.unknown-identifier",
            format!("unknown identifier `{name}` in `{source}`"),
        ),
        other => CliError::input("symexpr.parse", format!("in `{source}`: {other}")),
    })
}

/// Load a form literal. The degree is inferred from the records; indices
/// are sorted with the sign folded into the coefficient.
pub fn parse_form(
    chart: &Chart,
    records: &[FormRec],
    degree_hint: Option<usize>,
) -> Result<DiffForm, CliError> {
    let degree = match (records.first(), degree_hint) {
        (Some(first), _) => first.indices.len(),
        (None, Some(d)) => d,
        (None, None) => {
            return Err(CliError::input(
                "scenario.validate",
                "cannot infer the degree of an empty form literal",
            ))
        }
    };
    let mut terms = Vec::with_capacity(records.len());
    for rec in records {
        if rec.indices.len() != degree {
            return Err(CliError::input(
                "scenario.validate",
                format!(
                    "form records mix degrees {} and {}",
                    degree,
                    rec.indices.len()
                ),
            ));
        }
        let mut indices = Vec::with_capacity(rec.indices.len());
        for name in &rec.indices {
            let idx = chart.coord_index(name).ok_or_else(|| {
                CliError::input(
                    "symexpr.unknown-identifier",
                    format!("unknown coordinate `{name}` in form indices"),
                )
            })?;
            indices.push(idx);
        }
        let coeff = parse_scalar(&rec.coeff, chart)?;
        terms.push((indices, coeff));
    }
    DiffForm::from_unsorted_terms(chart.clone(), degree, terms)
        .map_err(|e| CliError::input("extcalc.form", e))
}

pub fn parse_field(chart: &Chart, comps: &[String]) -> Result<VecField, CliError> {
    if comps.len() != chart.dim() {
        return Err(CliError::input(
            "scenario.validate",
            format!(
                "field has {} components, chart dimension is {}",
                comps.len(),
                chart.dim()
            ),
        ));
    }
    let parsed: Result<Vec<ScalarExpr>, CliError> =
        comps.iter().map(|c| parse_scalar(c, chart)).collect();
    VecField::new(chart.clone(), parsed?).map_err(|e| CliError::input("extcalc.field", e))
}

pub fn payload_as<T: serde::de::DeserializeOwned>(value: &serde_json::Value) -> Result<T, CliError> {
    serde_json::from_value(value.clone())
        .map_err(|e| CliError::input("scenario.payload", format!("payload shape: {e}")))
}

/// The vertical pair used on the extended chart of builder tasks.
pub fn vertical_pair(spec: &ChartSpec) -> Result<Option<(String, String)>, CliError> {
    match spec.vertical.len() {
        0 => Ok(None),
        2 => Ok(Some((spec.vertical[0].clone(), spec.vertical[1].clone()))),
        n => Err(CliError::input(
            "scenario.validate",
            format!("builder tasks need a vertical pair (2 names), got {n}"),
        )),
    }
}
