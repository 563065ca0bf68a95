//! JSON result records and metrics files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use dett_core::eval::GroupMetrics;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub y: usize,
    pub a: usize,
    pub count: usize,
    /// `null` for a group with no samples.
    pub acc: Option<f64>,
}

/// `{method, seed, hyperparams, avg, worst, groups}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsJson {
    pub method: String,
    pub seed: u64,
    pub hyperparams: BTreeMap<String, f64>,
    pub avg: f64,
    pub worst: f64,
    pub groups: Vec<GroupAccuracy>,
}

impl MetricsJson {
    pub fn new(method: &str, seed: u64, hyperparams: BTreeMap<String, f64>, m: &GroupMetrics) -> Self {
        Self {
            method: method.to_string(),
            seed,
            hyperparams,
            avg: m.average_accuracy,
            worst: m.worst_group_accuracy,
            groups: m
                .groups
                .iter()
                .map(|g| GroupAccuracy {
                    y: g.y,
                    a: g.a,
                    count: g.count,
                    acc: g.accuracy(),
                })
                .collect(),
        }
    }
}

/// One record per (method, hyperparams, seed, split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub method: String,
    pub seed: u64,
    pub hyperparams: BTreeMap<String, f64>,
    pub split: String,
    /// Epoch of the checkpoint chosen on validation worst-group accuracy.
    pub epoch: usize,
    pub avg: f64,
    pub worst: f64,
    pub groups: Vec<GroupAccuracy>,
    pub wall_time: f64,
}

impl ResultRecord {
    pub fn new(
        method: &str,
        hyperparams: &BTreeMap<String, f64>,
        seed: u64,
        split: &str,
        epoch: usize,
        metrics: &GroupMetrics,
        wall_time: f64,
    ) -> Self {
        let m = MetricsJson::new(method, seed, hyperparams.clone(), metrics);
        Self {
            method: m.method,
            seed,
            hyperparams: m.hyperparams,
            split: split.to_string(),
            epoch,
            avg: m.avg,
            worst: m.worst,
            groups: m.groups,
            wall_time,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::error::read_file(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::Record {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Reads every `*.json` record under `dir/records`, sorted by file name.
pub fn load_records(dir: &Path) -> Result<Vec<ResultRecord>> {
    let records_dir = dir.join("records");
    let entries = std::fs::read_dir(&records_dir).map_err(|source| CliError::File {
        path: records_dir.clone(),
        source,
    })?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| ResultRecord::load(p)).collect()
}
