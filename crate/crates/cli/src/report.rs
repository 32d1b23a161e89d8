use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Error,
}

/// One judged quantity with the tolerance it was judged against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub observed: Value,
    pub expected: Value,
    pub tolerance: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, observed: impl Serialize, expected: impl Serialize, tolerance: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            observed: serde_json::to_value(observed).unwrap_or(Value::Null),
            expected: serde_json::to_value(expected).unwrap_or(Value::Null),
            tolerance: tolerance.into(),
        }
    }

    pub fn exact<T: Serialize + PartialEq>(name: &str, observed: T, expected: T) -> Self {
        let ok = observed == expected;
        Self::new(name, ok, observed, expected, "exact")
    }

    pub fn at_most(name: &str, observed: f64, bound: f64) -> Self {
        Self::new(name, observed <= bound, observed, format!("<= {bound:e}"), format!("{bound:e}"))
    }

    pub fn at_least(name: &str, observed: f64, bound: f64) -> Self {
        Self::new(name, observed >= bound, observed, format!(">= {bound:e}"), format!("{bound:e}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub status: Status,
    pub checks: Vec<Check>,
    /// Numerical warnings; failures under `--strict`.
    pub warnings: Vec<String>,
    pub results: BTreeMap<String, Value>,
    pub artifacts: Vec<String>,
    pub error: Option<String>,
}

impl StageReport {
    pub fn new(stage: &str) -> Self {
        Self {
            stage: stage.into(),
            status: Status::Pass,
            checks: Vec::new(),
            warnings: Vec::new(),
            results: BTreeMap::new(),
            artifacts: Vec::new(),
            error: None,
        }
    }

    pub fn put(&mut self, key: &str, value: impl Serialize) {
        self.results.insert(key.into(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn finish(&mut self, strict: bool) {
        if self.status == Status::Error {
            return;
        }
        let failed = self.checks.iter().any(|c| !c.passed) || (strict && !self.warnings.is_empty());
        self.status = if failed { Status::Fail } else { Status::Pass };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub command: String,
    pub seed: u64,
    pub strict: bool,
    pub stages: Vec<StageReport>,
    pub status: Status,
}

impl RunReport {
    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn exit_code(&self) -> i32 {
        match self.status {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::Error => 3,
        }
    }
}

/// Wall-clock seconds per stage, kept out of the report.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
    pub total: f64,
}
