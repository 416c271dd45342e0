use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Stage};
use crate::binio::write_file;
use crate::classifier::TrainingLog;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::ncd::NcdLog;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturesSummary {
    pub clips: usize,
    pub recordings: usize,
    pub frame_hop: f64,
    pub labeled_classes: Vec<u32>,
    pub novel_classes: Vec<u32>,
    pub train_clips: usize,
    pub val_clips: usize,
    pub test_clips: usize,
    pub unlabeled_clips: usize,
    pub class_names: BTreeMap<u32, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSummary {
    pub log: TrainingLog,
    pub test_f1: Option<f64>,
    /// Digest of everything the trained weights depend on.
    pub input_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodSummary {
    pub threshold: f64,
    pub passes: usize,
    /// Accuracy over the balanced evaluation set, in percent.
    pub accuracy: f64,
    pub id_recordings: usize,
    pub ood_recordings: usize,
    pub id_clips: usize,
    pub ood_clips: usize,
    /// In-distribution clips kept below the threshold.
    pub true_negative_rate: f64,
    /// Novel clips flagged above the threshold; absent without novel clips.
    pub true_positive_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NcdSummary {
    pub unlabeled_clips: usize,
    pub labeled_clips: usize,
    pub mask: String,
    pub log: NcdLog,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringSummary {
    pub method: String,
    pub k: Option<usize>,
    pub clusters: usize,
    pub baseline_clusters: usize,
    pub params: BTreeMap<String, f64>,
}

/// Proposed (encoder output) and baseline (raw classifier embedding)
/// clustering quality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSection {
    pub proposed: MetricsReport,
    pub baseline: Option<MetricsReport>,
}

/// Fields that legitimately change between identical runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Runtime {
    /// Wall-clock seconds per stage.
    pub seconds: BTreeMap<String, f64>,
    /// Stages whose outputs were taken from an earlier run.
    pub reused: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<String>,
    pub config: ExperimentConfig,
    pub stages_run: Vec<Stage>,
    pub stages_skipped: Vec<Stage>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub features: Option<FeaturesSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub classifier: Option<ClassifierSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ood: Option<OodSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ncd: Option<NcdSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub clustering: Option<ClusteringSummary>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metrics: Option<MetricsSection>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub openness: Option<f64>,
    /// sha256 of every artifact written, by file name.
    pub artifacts: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub runtime: Runtime,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl ExperimentReport {
    pub fn new(config: ExperimentConfig) -> Self {
        Self {
            label: None,
            config,
            stages_run: Vec::new(),
            stages_skipped: Vec::new(),
            features: None,
            classifier: None,
            ood: None,
            ncd: None,
            clustering: None,
            metrics: None,
            openness: None,
            artifacts: BTreeMap::new(),
            error: None,
            runtime: Runtime::default(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Input(format!("cannot serialize report: {e}")))
    }

    /// The report without its `runtime` section; identical runs produce
    /// identical strings.
    pub fn deterministic_json(&self) -> Result<String> {
        let mut value = serde_json::to_value(self).map_err(|e| Error::Input(format!("cannot serialize report: {e}")))?;
        if let Some(map) = value.as_object_mut() {
            map.remove("runtime");
        }
        serde_json::to_string_pretty(&value).map_err(|e| Error::Input(format!("cannot serialize report: {e}")))
    }

    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(self.deterministic_json()?.as_bytes()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        write_file(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Metric rows by run, one column per report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    /// `(metric, value per column)`; `None` where the metric is undefined.
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl ComparisonTable {
    pub const METRICS: [&'static str; 4] = ["ss", "ari", "mi", "acc"];

    pub fn from_reports(reports: &[ExperimentReport]) -> Self {
        let columns = reports
            .iter()
            .enumerate()
            .map(|(i, r)| r.label.clone().unwrap_or_else(|| format!("run-{i}")))
            .collect();
        let rows = Self::METRICS
            .iter()
            .map(|m| {
                let values = reports
                    .iter()
                    .map(|r| {
                        let p = &r.metrics.as_ref()?.proposed;
                        match *m {
                            "ss" => p.ss,
                            "ari" => Some(p.ari),
                            "mi" => Some(p.mi),
                            _ => p.acc_overall,
                        }
                    })
                    .collect();
                (m.to_string(), values)
            })
            .collect();
        Self { columns, rows }
    }

    pub fn get(&self, metric: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|(m, _)| m == metric)?.1[c]
    }

    /// Markdown rendering; undefined cells show `n/a`.
    pub fn to_markdown(&self) -> String {
        let mut s = format!("| metric | {} |\n", self.columns.join(" | "));
        s.push_str(&format!("|---|{}\n", "---|".repeat(self.columns.len())));
        for (m, values) in &self.rows {
            let cells: Vec<String> = values
                .iter()
                .map(|v| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}")))
                .collect();
            s.push_str(&format!("| {m} | {} |\n", cells.join(" | ")));
        }
        s
    }
}
