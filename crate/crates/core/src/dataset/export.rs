use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::SplitRanges;
use crate::error::{Error, Result};
use crate::preprocess::{FeatureMatrix, NormStats};
use crate::windowing::WindowingConfig;

pub const MANIFEST_VERSION: u32 = 1;

/// Everything a downstream trainer needs to rebuild the sliding windows from
/// `features.csv` without recomputing statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub target: String,
    pub t_in: usize,
    pub t_out: usize,
    pub batch_size: usize,
    pub split: SplitRanges,
    /// Feature columns of `features.csv`, after the leading `week_start`.
    pub columns: Vec<String>,
    pub label: String,
    pub norm_stats: NormStats,
    pub n_pic: usize,
    pub pic_ids: Vec<String>,
    pub weather: bool,
    pub windowing: Option<WindowingConfig>,
    pub seed: u64,
}

/// Writes `features.csv` (normalized, one row per week) and `manifest.json`
/// into `dir`.
pub fn export_dataset(
    dir: &Path,
    weeks: &[NaiveDate],
    normalized: &FeatureMatrix,
    manifest: &DatasetManifest,
) -> Result<()> {
    if weeks.len() != normalized.rows() {
        return Err(Error::Validation(format!(
            "{} weeks for {} matrix rows",
            weeks.len(),
            normalized.rows()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join("features.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["week_start".to_owned()];
    header.extend(normalized.names.iter().cloned());
    w.write_record(&header)?;
    for (week, row) in weeks.iter().zip(normalized.data.rows()) {
        let mut rec = vec![week.to_string()];
        rec.extend(row.iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(manifest)?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
