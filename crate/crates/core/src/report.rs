use std::fmt;

use serde::Serialize;

/// One named numerical identity and the worst residual seen for it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CheckReport {
    pub checks: Vec<Check>,
}

impl CheckReport {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `residual <= tolerance` under `name`. NaN residuals fail.
    pub fn record(&mut self, name: &str, residual: f64, tolerance: f64) {
        let passed = residual <= tolerance;
        self.checks.push(Check {
            name: name.to_string(),
            max_residual: residual,
            tolerance,
            passed,
        });
    }

    /// Folds `other` into `self`, keeping the worst residual per check name.
    pub fn merge(&mut self, other: CheckReport) {
        for check in other.checks {
            match self.checks.iter_mut().find(|c| c.name == check.name) {
                Some(existing) => {
                    if !(check.max_residual <= existing.max_residual) {
                        existing.max_residual = check.max_residual;
                    }
                    existing.passed &= check.passed;
                }
                None => self.checks.push(check),
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {:<28} residual {:.3e} (tol {:.1e})",
                if c.passed { "ok  " } else { "FAIL" },
                c.name,
                c.max_residual,
                c.tolerance
            )?;
        }
        Ok(())
    }
}

/// `|a - b| / max(1, |b|)`.
pub(crate) fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
