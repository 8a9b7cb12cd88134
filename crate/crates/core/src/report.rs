//! Structured run reports: everything a scenario run decides is recorded
//! as data, and the exit status downstream is a pure function of it.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// The scenario declares this failure as the expected behavior (the
    /// counterexample mechanism); it does not fail the run.
    ExpectedFail,
    Skipped,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: CheckStatus,
    pub details: String,
}

impl CheckResult {
    pub fn pass(name: impl Into<String>, details: impl Into<String>) -> Self {
        CheckResult { name: name.into(), status: CheckStatus::Pass, details: details.into() }
    }

    pub fn fail(name: impl Into<String>, details: impl Into<String>) -> Self {
        CheckResult { name: name.into(), status: CheckStatus::Fail, details: details.into() }
    }

    pub fn of(name: impl Into<String>, ok: bool, details: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            status: if ok { CheckStatus::Pass } else { CheckStatus::Fail },
            details: details.into(),
        }
    }

    pub fn skipped(name: impl Into<String>, details: impl Into<String>) -> Self {
        CheckResult { name: name.into(), status: CheckStatus::Skipped, details: details.into() }
    }
}

/// Effective configuration after the override chain (catalog < file <
/// flag), echoed with the source of each value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectiveConfig {
    pub scenario: String,
    pub dim: usize,
    pub half_width: f64,
    pub spacing: f64,
    pub t_schedule: Vec<f64>,
    pub b: f64,
    pub a_min: f64,
    pub seed: u64,
    pub t1_quadratic_form: f64,
    pub t3_eigencount: f64,
    pub shoot_count: usize,
    pub fan_size: usize,
    pub capture_cells: f64,
    pub shoot_cells: f64,
    pub rank_tol: f64,
    pub window_edge: f64,
    pub residual_tol: f64,
    pub sources: Vec<(String, String)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenvalueRow {
    pub t: f64,
    pub degree: usize,
    pub ordinal: usize,
    pub eigenvalue: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayScatterRow {
    pub t: f64,
    pub degree: usize,
    pub rho: f64,
    pub log_abs_omega: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowlineRow {
    pub line_id: usize,
    pub time: f64,
    pub position: Vec<f64>,
    pub f_value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BettiRow {
    pub t: f64,
    pub degree: usize,
    pub window_dim: usize,
    pub rank_out: usize,
    pub betti_spectral: i64,
    pub morse_count: usize,
}

/// Plot-ready artifacts accompanying a report.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Artifacts {
    pub eigenvalues: Vec<EigenvalueRow>,
    pub decay_scatter: Vec<DecayScatterRow>,
    pub flowlines: Vec<FlowlineRow>,
    pub betti: Vec<BettiRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub version: String,
    pub effective_config: EffectiveConfig,
    pub stage: String,
    pub checks: Vec<CheckResult>,
    /// free-form structured sections (tameness table, eigencount tables,
    /// boundary inequality table) serialized as JSON values
    pub sections: Vec<(String, serde_json::Value)>,
    pub warnings: Vec<String>,
    pub overall_pass: bool,
    pub timings: Vec<StageTiming>,
}

impl ScenarioReport {
    /// Exit-status rule: pass iff no check failed (expected failures are
    /// asserted behavior and do not count).
    pub fn compute_overall(checks: &[CheckResult]) -> bool {
        checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }

    /// JSON with the timing section blanked, for determinism comparisons.
    pub fn canonical_json(&self) -> String {
        let mut clone = self.clone();
        clone.timings.clear();
        serde_json::to_string_pretty(&clone).expect("report serialization")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_json_round_trip_is_byte_identical() {
        let report = ScenarioReport {
            scenario: "demo".into(),
            version: "0.1.0".into(),
            effective_config: EffectiveConfig {
                scenario: "demo".into(),
                dim: 1,
                half_width: 4.0,
                spacing: 0.01,
                t_schedule: vec![10.0, 20.0],
                b: 0.9,
                a_min: 0.9,
                seed: 7,
                t1_quadratic_form: 5.0,
                t3_eigencount: 8.0,
                shoot_count: 16,
                fan_size: 256,
                capture_cells: 2.0,
                shoot_cells: 10.0,
                rank_tol: 1e-6,
                window_edge: 1.0,
                residual_tol: 1e-8,
                sources: vec![("b".into(), "catalog".into())],
            },
            stage: "verify".into(),
            checks: vec![CheckResult::pass("symmetry", "max asymmetry 1.2e-14")],
            sections: vec![(
                "tameness".into(),
                serde_json::json!({"verdict": "StronglyTame", "shells": [0.333251953125]}),
            )],
            warnings: vec![],
            overall_pass: true,
            timings: vec![StageTiming { stage: "spectrum".into(), millis: 12 }],
        };
        let json = report.to_json();
        let reloaded: ScenarioReport = serde_json::from_str(&json).unwrap();
        assert_eq!(json, reloaded.to_json());
    }
}
