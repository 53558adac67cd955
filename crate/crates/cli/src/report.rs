use serde::{Deserialize, Serialize};
use sensorplace::classify::NonlinearityParams;
use sensorplace::misdp::{PlacementResult, Variant};
use sensorplace::model::Logistic;
use sensorplace::observer::{CertificateReport, SimulationSummary};

/// The `place` output: the placement plus what is needed to recheck it.
#[derive(Debug, Serialize, Deserialize)]
pub struct PlacementReport {
    pub variant: Variant,
    pub params: NonlinearityParams,
    pub w: Option<Vec<Vec<f64>>>,
    pub w_provenance: Option<String>,
    pub y_bound: f64,
    pub logistic: Logistic,
    /// 0-based indices of the active sensors.
    pub selected: Vec<usize>,
    /// Names from the model metadata, when it has `state_names`.
    pub selected_names: Option<Vec<String>>,
    pub result: PlacementResult,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimulationReport {
    pub summary: SimulationSummary,
    pub x0: Vec<f64>,
    pub xhat0: Vec<f64>,
    /// Largest gap between `x - x̂` from the coupled run and the directly integrated error.
    pub coupled_vs_direct_max_abs_diff: f64,
    pub coupled_vs_direct_tolerance: f64,
    pub certificate: Option<CertificateReport>,
    pub certificate_error: Option<String>,
}
