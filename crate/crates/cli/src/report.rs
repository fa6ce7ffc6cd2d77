//! Machine-readable run report (`report_v1`).
//!
//! Field order is the serialization order, so two runs with the same inputs
//! produce byte-identical JSON apart from `timings_ms`.

use std::collections::BTreeMap;
use std::path::Path;

use contrastkit::preprocess::{BackgroundTestReport, CdeReport, DimRule};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA: &str = "report_v1";

pub const NO_SIGNAL_MESSAGE: &str = "no contrastive signal detected; proceed with non-contrastive analyses";

/// Key excluded when comparing reports across runs.
pub const TIMING_KEY: &str = "timings_ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    NoContrastiveSignal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimSource {
    User,
    Estimated,
    /// The test rejected but the estimate came out 0, so one direction is
    /// fitted.
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSelection {
    pub test: BackgroundTestReport,
    /// 0-based index into `background_paths`.
    pub selected: usize,
}

/// Subspace dimensions fed to the contrastive-dimension test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceDims {
    pub rule: DimRule,
    pub d_x: usize,
    pub d_y: usize,
    pub variance_explained_x: f64,
    pub variance_explained_y: f64,
    pub note: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub objective: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    /// Leading spectrum of the method's eigenproblem, when it has one.
    pub eigenvalues: Option<Vec<f64>>,
    /// Method-specific scalars (noise variances, shared dimension, ...).
    pub extra: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub gamma: f64,
    pub objective: Option<f64>,
    /// Leading eigenvalues at this γ, for methods with a spectrum.
    pub eigenvalues: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedFeature {
    pub index: usize,
    pub name: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub kind: String,
    /// Relative to the output directory.
    pub path: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub load: f64,
    pub background_selection: f64,
    pub cde: f64,
    pub fit: f64,
    pub write: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub status: RunStatus,
    pub message: Option<String>,
    pub background_selection: Option<BackgroundSelection>,
    pub subspace_dims: SubspaceDims,
    pub cde: CdeReport,
    pub alpha: f64,
    pub method_used: Option<String>,
    pub gamma: Option<f64>,
    pub d_used: Option<usize>,
    pub d_source: Option<DimSource>,
    pub fit: Option<FitDiagnostics>,
    pub gamma_sweep: Option<Vec<SweepPoint>>,
    pub selected_features: Option<Vec<SelectedFeature>>,
    pub outputs: Vec<OutputFile>,
    pub timings_ms: Timings,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| CliError::io(path, e))
    }

    pub fn exit_code(&self) -> i32 {
        match self.status {
            RunStatus::Completed => 0,
            RunStatus::NoContrastiveSignal => 2,
        }
    }
}

/// Report JSON with the wall-clock block removed, for run-to-run comparison.
pub fn strip_timings(json: &str) -> Result<String> {
    let mut v: serde_json::Value =
        serde_json::from_str(json).map_err(|e| CliError::Config(format!("report is not JSON: {e}")))?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove(TIMING_KEY);
    }
    Ok(serde_json::to_string(&v).expect("value serializes"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use contrastkit::preprocess::CdeResampling;

    fn sample() -> RunReport {
        RunReport {
            schema: SCHEMA.into(),
            tool_version: "0.0.0".into(),
            config_hash: "ab".into(),
            seed: 3,
            status: RunStatus::NoContrastiveSignal,
            message: Some(NO_SIGNAL_MESSAGE.into()),
            background_selection: None,
            subspace_dims: SubspaceDims {
                rule: DimRule::Fixed(2),
                d_x: 2,
                d_y: 2,
                variance_explained_x: 0.5,
                variance_explained_y: 0.5,
                note: String::new(),
            },
            cde: CdeReport {
                lambdas: vec![1.0, 0.1 + 0.2],
                theta_max: 0.1,
                lambda_min: 0.3,
                p_value: 0.5,
                replicates: 100,
                d_x: 2,
                d_y: 2,
                d_hat: 1,
                epsilon: 0.05,
                seed: 3,
                resampling: CdeResampling::Pooled,
                reason: None,
                replicate_lambda_min: vec![],
            },
            alpha: 0.05,
            method_used: None,
            gamma: None,
            d_used: None,
            d_source: None,
            fit: None,
            gamma_sweep: None,
            selected_features: None,
            outputs: vec![],
            timings_ms: Timings { total: 12.5, ..Timings::default() },
        }
    }

    #[test]
    fn keys_in_declared_order() {
        let json = sample().to_json();
        let pos = |k: &str| json.find(&format!("\"{k}\"")).unwrap();
        assert!(pos("schema") < pos("config_hash"));
        assert!(pos("status") < pos("cde"));
        assert!(pos("outputs") < pos("timings_ms"));
        assert_eq!(sample().exit_code(), 2);
    }

    #[test]
    fn floats_round_trip_exactly() {
        let json = sample().to_json();
        let back: RunReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.cde.lambdas[1], 0.1 + 0.2);
    }

    #[test]
    fn strip_ignores_timings_only() {
        let a = sample();
        let mut b = sample();
        b.timings_ms.total = 99.0;
        assert_ne!(a.to_json(), b.to_json());
        assert_eq!(strip_timings(&a.to_json()).unwrap(), strip_timings(&b.to_json()).unwrap());
        b.seed = 4;
        assert_ne!(strip_timings(&a.to_json()).unwrap(), strip_timings(&b.to_json()).unwrap());
    }
}
