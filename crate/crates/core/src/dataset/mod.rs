//! Split-aware sliding-window datasets, feature assembly from a ranking,
//! and regional aggregation.

mod export;
pub mod synth;

use std::ops::Range;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use export::{export_dataset, read_manifest, DatasetManifest, MANIFEST_VERSION};

use crate::error::{Error, Result};
use crate::geo_metrics::PredictorRanking;
use crate::ingest::{AlignedPanel, LocationRecord, LocationSeries, PER_100K};
use crate::preprocess::{FeatureMatrix, WEATHER_FEATURES};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Contiguous train/validation/test row ranges. Validation and test get
/// `floor(ratio * rows)` rows; the remainder goes to training.
pub fn split_panel(rows: usize, ratios: [f64; 3], min_len: usize) -> Result<SplitRanges> {
    if ratios.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Config(format!("split ratios must be positive: {ratios:?}")));
    }
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must sum to 1: {ratios:?}")));
    }
    let part = |r: f64| (r * rows as f64 + 1e-9).floor() as usize;
    let val = part(ratios[1]);
    let test = part(ratios[2]);
    let train = rows.saturating_sub(val + test);
    let split = SplitRanges {
        train: 0..train,
        val: train..train + val,
        test: train + val..rows,
    };
    for (name, r) in [("train", &split.train), ("validation", &split.val), ("test", &split.test)] {
        if r.len() < min_len {
            return Err(Error::Validation(format!(
                "{name} split has {} rows; at least {min_len} needed for one sample",
                r.len()
            )));
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

/// One input block and the label values that follow it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// First input row, relative to the split.
    pub start: usize,
    /// `t_in × features`.
    pub input: Array2<f64>,
    /// `t_out` label values.
    pub target: Vec<f64>,
}

impl Sample {
    pub fn input_end(&self) -> usize {
        self.start + self.input.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlidingWindowDataset {
    pub samples: Vec<Sample>,
    pub t_in: usize,
    pub t_out: usize,
    pub batch_size: usize,
    pub split: SplitTag,
    pub features: Vec<String>,
    /// Training rows the normalization statistics were taken from, if any.
    pub provenance: Option<[usize; 2]>,
}

impl SlidingWindowDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    /// Consecutive batches in time order; the last one may be short.
    pub fn batches(&self) -> std::slice::Chunks<'_, Sample> {
        self.samples.chunks(self.batch_size.max(1))
    }

    pub fn with_provenance(mut self, train_rows: [usize; 2]) -> Self {
        self.provenance = Some(train_rows);
        self
    }
}

/// Slides a `t_in + t_out` window one row at a time over `split`.
pub fn build_windows(
    split: &FeatureMatrix,
    t_in: usize,
    t_out: usize,
    batch_size: usize,
    tag: SplitTag,
) -> Result<SlidingWindowDataset> {
    if t_in == 0 || t_out == 0 || batch_size == 0 {
        return Err(Error::Config("t_in, t_out and batch size must be positive".into()));
    }
    let span = t_in + t_out;
    if split.rows() < span {
        return Err(Error::Validation(format!(
            "{tag:?} split has {} rows, fewer than t_in + t_out = {span}",
            split.rows()
        )));
    }
    let labels = split.data.column(split.label);
    let samples = (0..=split.rows() - span)
        .map(|start| Sample {
            start,
            input: split.data.slice(s![start..start + t_in, ..]).to_owned(),
            target: labels.slice(s![start + t_in..start + span]).to_vec(),
        })
        .collect();
    Ok(SlidingWindowDataset {
        samples,
        t_in,
        t_out,
        batch_size,
        split: tag,
        features: split.names.clone(),
        provenance: None,
    })
}

pub fn incidence_column(id: &str) -> String {
    format!("incidence:{id}")
}

/// Feature matrix for `target`: the weather block (if requested), the
/// target's own incidence, then the top `n_pic` ranked peripheral series in
/// rank order. The label is the target incidence column.
pub fn assemble_features(
    panel: &AlignedPanel,
    target: &LocationSeries,
    ranking: &PredictorRanking,
    n_pic: usize,
    weather: bool,
) -> Result<FeatureMatrix> {
    if n_pic > ranking.len() {
        return Err(Error::Validation(format!(
            "requested {n_pic} peripheral columns but the ranking has {}",
            ranking.len()
        )));
    }
    let t = target.per_100k.len();
    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();

    if weather {
        let w = target.weather.as_ref().ok_or_else(|| {
            Error::Validation(format!("no weather data for target {}", target.id()))
        })?;
        for (i, name) in WEATHER_FEATURES.iter().enumerate() {
            match w.filled_column(i) {
                Some(c) => {
                    names.push((*name).to_owned());
                    cols.push(c);
                }
                None => log::warn!("{}: weather column {name} has no observations, omitted", target.id()),
            }
        }
    }

    let label = cols.len();
    names.push(incidence_column(target.id()));
    cols.push(target.per_100k.clone());

    for row in ranking.top(n_pic) {
        let pic = panel.get(&row.pic_id).ok_or_else(|| {
            Error::Validation(format!("ranked location {} not in panel", row.pic_id))
        })?;
        if pic.per_100k.len() != t {
            return Err(Error::Validation(format!(
                "{} has {} weeks, target has {t}",
                row.pic_id,
                pic.per_100k.len()
            )));
        }
        names.push(incidence_column(&row.pic_id));
        cols.push(pic.per_100k.clone());
    }

    let mut data = Array2::zeros((t, cols.len()));
    for (j, c) in cols.iter().enumerate() {
        data.column_mut(j).assign(&ndarray::ArrayView1::from(c.as_slice()));
    }
    FeatureMatrix::new(data, names, label)
}

/// Pools member locations into one series: raw counts are summed and
/// re-expressed per 100k of the combined population. The pooled location
/// sits at the population-weighted mean of member coordinates.
pub fn aggregate_region(
    panel: &AlignedPanel,
    region_id: &str,
    members: &[String],
) -> Result<LocationSeries> {
    if members.is_empty() {
        return Err(Error::Validation(format!("region {region_id} has no members")));
    }
    let mut series: Vec<&LocationSeries> = members
        .iter()
        .map(|id| {
            panel.get(id).ok_or_else(|| {
                Error::Validation(format!("region {region_id}: member {id} not in panel"))
            })
        })
        .collect::<Result<_>>()?;
    series.sort_by(|a, b| a.id().cmp(b.id()));
    series.dedup_by(|a, b| a.id() == b.id());
    if !series.iter().any(|s| s.has_data()) {
        return Err(Error::Validation(format!("region {region_id}: no member has data")));
    }

    let t = panel.len();
    let mut cases = vec![0.0; t];
    let mut mask = vec![true; t];
    let mut population = 0u64;
    let (mut lat, mut lon) = (0.0, 0.0);
    for s in &series {
        for i in 0..t {
            cases[i] += s.cases[i];
            mask[i] &= s.mask[i];
        }
        let pop = s.location.population;
        population += pop;
        lat += s.location.latitude * pop as f64;
        lon += s.location.longitude * pop as f64;
    }
    let pop = population as f64;
    Ok(LocationSeries {
        location: LocationRecord {
            location_id: region_id.to_owned(),
            name: region_id.to_owned(),
            latitude: lat / pop,
            longitude: lon / pop,
            population,
        },
        per_100k: cases.iter().map(|c| c * PER_100K / pop).collect(),
        cases,
        mask,
        weather: None,
    })
}

/// Input rows of the most recent complete block, for forecasting past the end
/// of the data.
pub fn last_input_block(matrix: &FeatureMatrix, t_in: usize) -> Result<ArrayView2<'_, f64>> {
    if matrix.rows() < t_in {
        return Err(Error::Validation(format!(
            "need {t_in} rows for an input block, have {}",
            matrix.rows()
        )));
    }
    Ok(matrix.data.slice(s![matrix.rows() - t_in.., ..]))
}
