//! JSON report emitted by every command. Field order is fixed by the struct
//! so reports with the same seed are byte-identical apart from wall time.

use bpdq_core::RunConfig;
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<RunConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bpw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective_frob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective_trace: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_group_scores: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_objectives: Option<BaselineObjectives>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub win_rate_vs_gptq: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub win_rate_vs_rtn: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_layer_objectives: Option<PerLayerObjectives>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outlier_stats: Option<OutlierReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchReport>,
    pub wall_time_s: f64,
}

impl Report {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            seed,
            config: None,
            bpw: None,
            objective_frob: None,
            objective_trace: None,
            per_group_scores: None,
            baseline_objectives: None,
            win_rate_vs_gptq: None,
            win_rate_vs_rtn: None,
            per_layer_objectives: None,
            outlier_stats: None,
            bench: None,
            wall_time_s: 0.0,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Mean objectives of the fixed-grid baselines (compare mode).
#[derive(Debug, Serialize)]
pub struct BaselineObjectives {
    pub rtn: f64,
    pub gptq: f64,
}

#[derive(Debug, Serialize)]
pub struct PerLayerObjectives {
    pub bpdq: Vec<f64>,
    pub gptq: Vec<f64>,
    pub rtn: Vec<f64>,
}

/// Input-channel outlier metrics, plus paired output-side metrics when a
/// packed layer is evaluated against reference weights.
#[derive(Debug, Serialize)]
pub struct OutlierReport {
    pub diagr_p95: f64,
    pub cnt10: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_diagr_reference: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_diagr_quantized: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_diagr_pct: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_cnt10_reference: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_cnt10_quantized: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_cnt10_pct: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub reps: usize,
    pub d_out: usize,
    pub d_in: usize,
    pub k: usize,
    pub g: usize,
    /// Deterministic work counts per matvec.
    pub lut_table_entries: usize,
    pub lut_lookups: usize,
    pub dense_flops: usize,
    pub lut_ns_per_op_median: f64,
    pub dense_ns_per_op_median: f64,
    pub speedup: f64,
    pub max_rel_deviation: f64,
}
