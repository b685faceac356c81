//! The structured output document. Serialization is deterministic: struct
//! fields keep declaration order, lists keep construction order, and every
//! float is pre-formatted to 12 significant digits, so identical runs give
//! byte-identical documents.

use serde::Serialize;
use varmax::varprin::VerifyReport;

/// Fixed float formatting used throughout the document.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.12e}")
}

#[derive(Serialize, Clone)]
pub struct ChartEcho {
    pub coords: Vec<String>,
    pub vertical: Vec<String>,
    pub time: Option<String>,
}

#[derive(Serialize, Clone)]
pub struct FormTermEcho {
    pub indices: Vec<String>,
    pub coeff: String,
}

#[derive(Serialize, Clone)]
pub struct CheckEcho {
    pub name: String,
    /// Symbolic verdict; absent for purely numeric checks.
    pub symbolic: Option<bool>,
    pub max_residual: Option<String>,
    pub samples_used: u32,
    pub witness_point: Option<Vec<String>>,
    pub passed: bool,
}

impl CheckEcho {
    /// Echo of an annihilation verification against a residual tolerance.
    pub fn from_verify(name: &str, report: &VerifyReport, residual_tol: f64) -> CheckEcho {
        CheckEcho {
            name: name.to_string(),
            symbolic: Some(report.symbolic_pass),
            max_residual: Some(fmt_float(report.max_residual)),
            samples_used: report.samples_used,
            witness_point: report
                .witness_point
                .as_ref()
                .map(|p| p.iter().map(|v| fmt_float(*v)).collect()),
            passed: report.passed(residual_tol),
        }
    }

    pub fn boolean(name: &str, passed: bool) -> CheckEcho {
        CheckEcho {
            name: name.to_string(),
            symbolic: Some(passed),
            max_residual: None,
            samples_used: 0,
            witness_point: None,
            passed,
        }
    }

    pub fn numeric(name: &str, value: f64, samples: u32, tol: f64) -> CheckEcho {
        CheckEcho {
            name: name.to_string(),
            symbolic: None,
            max_residual: Some(fmt_float(value)),
            samples_used: samples,
            witness_point: None,
            passed: value <= tol,
        }
    }
}

#[derive(Serialize, Clone)]
pub struct MonitorEcho {
    pub name: String,
    pub initial: String,
    pub drift: String,
    pub passed: bool,
}

#[derive(Serialize, Clone)]
pub struct ErrorEcho {
    pub code: String,
    pub message: String,
}

/// The uniform output document. Every list key is always present (an empty
/// run emits empty arrays, not absent keys).
#[derive(Serialize, Clone)]
pub struct ReportDoc {
    pub task: String,
    pub status: String,
    pub seed: u64,
    pub chart: ChartEcho,
    pub field: Vec<String>,
    pub normalized_field: Vec<String>,
    pub theta: Vec<FormTermEcho>,
    pub checks: Vec<CheckEcho>,
    pub monitors: Vec<MonitorEcho>,
    pub notes: Vec<String>,
    pub artifacts: Vec<String>,
    pub errors: Vec<ErrorEcho>,
}

impl ReportDoc {
    pub fn new(task: &str, seed: u64, chart: ChartEcho) -> ReportDoc {
        ReportDoc {
            task: task.to_string(),
            status: "pass".to_string(),
            seed,
            chart,
            field: Vec::new(),
            normalized_field: Vec::new(),
            theta: Vec::new(),
            checks: Vec::new(),
            monitors: Vec::new(),
            notes: Vec::new(),
            artifacts: Vec::new(),
            errors: Vec::new(),
        }
    }

    /// Recompute the status from the accumulated checks and monitors.
    pub fn settle_status(&mut self) {
        let all_pass = self.checks.iter().all(|c| c.passed)
            && self.monitors.iter().all(|m| m.passed)
            && self.errors.is_empty();
        self.status = if all_pass { "pass" } else { "fail" }.to_string();
    }

    pub fn render(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
