//! Weekly resampling of daily weather, split-aware z-score normalization and
//! min-max scaling.

use chrono::NaiveDate;
use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::SplitRanges;
use crate::error::{Error, Result};
use crate::ingest::DailyWeatherRow;

/// Weekly weather variables, in column order.
pub const WEATHER_FEATURES: [&str; 12] = [
    "t_avg",
    "t_min",
    "t_max",
    "precip",
    "dtr_avg",
    "dtr_min",
    "dtr_max",
    "rainy_days",
    "surface_t",
    "surface_rh",
    "surface_pressure",
    "surface_pwat",
];

/// Twelve weekly weather columns for one location. Cells with no daily
/// record are NaN and flagged in `mask`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyWeather {
    pub columns: Vec<Vec<f64>>,
    pub mask: Vec<Vec<bool>>,
}

impl WeeklyWeather {
    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        WEATHER_FEATURES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.columns[i].as_slice())
    }

    /// Column with masked cells replaced by the previous observed value (or
    /// the next one, for a leading gap). `None` if the column has no
    /// observations at all.
    pub fn filled_column(&self, i: usize) -> Option<Vec<f64>> {
        let col = &self.columns[i];
        let mask = &self.mask[i];
        let first = mask.iter().position(|m| !m)?;
        let mut out = Vec::with_capacity(col.len());
        let mut last = col[first];
        for (v, m) in col.iter().zip(mask) {
            if !m {
                last = *v;
            }
            out.push(last);
        }
        Some(out)
    }
}

#[derive(Default)]
struct WeekAccumulator {
    t_avg: Vec<f64>,
    t_min: Vec<f64>,
    t_max: Vec<f64>,
    precip: Vec<f64>,
    dtr: Vec<f64>,
    surface_t: Vec<f64>,
    rh: Vec<f64>,
    pressure: Vec<f64>,
    pwat: Vec<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn min(v: &[f64]) -> Option<f64> {
    v.iter().copied().reduce(f64::min)
}

fn max(v: &[f64]) -> Option<f64> {
    v.iter().copied().reduce(f64::max)
}

impl WeekAccumulator {
    fn push(&mut self, d: &DailyWeatherRow) {
        let put = |dst: &mut Vec<f64>, v: Option<f64>| {
            if let Some(v) = v.filter(|v| v.is_finite()) {
                dst.push(v);
            }
        };
        put(&mut self.t_avg, d.t_avg);
        put(&mut self.t_min, d.t_min);
        put(&mut self.t_max, d.t_max);
        put(&mut self.precip, d.precip);
        if let (Some(lo), Some(hi)) = (d.t_min, d.t_max) {
            put(&mut self.dtr, Some(hi - lo));
        }
        put(&mut self.surface_t, d.t_surface);
        put(&mut self.rh, d.rh);
        put(&mut self.pressure, d.pressure);
        put(&mut self.pwat, d.pwat);
    }

    fn finish(&self) -> [Option<f64>; 12] {
        let rainy = (!self.precip.is_empty())
            .then(|| self.precip.iter().filter(|p| **p > 0.0).count() as f64);
        let surface_t = if self.surface_t.is_empty() {
            mean(&self.t_avg)
        } else {
            mean(&self.surface_t)
        };
        [
            mean(&self.t_avg),
            min(&self.t_min),
            max(&self.t_max),
            (!self.precip.is_empty()).then(|| self.precip.iter().sum()),
            mean(&self.dtr),
            min(&self.dtr),
            max(&self.dtr),
            rainy,
            surface_t,
            mean(&self.rh),
            mean(&self.pressure),
            mean(&self.pwat),
        ]
    }
}

/// Down-samples one location's daily weather onto `weeks`, each week covering
/// `[week_start, week_start + 7 days)`.
pub fn weekly_resample(daily: &[&DailyWeatherRow], weeks: &[NaiveDate]) -> WeeklyWeather {
    let t = weeks.len();
    let mut acc: Vec<WeekAccumulator> = (0..t).map(|_| WeekAccumulator::default()).collect();
    if let Some(&first) = weeks.first() {
        for d in daily {
            let offset = (d.date - first).num_days();
            if offset < 0 {
                continue;
            }
            let idx = (offset / 7) as usize;
            if idx < t {
                acc[idx].push(d);
            }
        }
    }

    let mut columns = vec![vec![f64::NAN; t]; WEATHER_FEATURES.len()];
    let mut mask = vec![vec![true; t]; WEATHER_FEATURES.len()];
    let mut empty_weeks = 0;
    for (w, a) in acc.iter().enumerate() {
        let values = a.finish();
        if values.iter().all(Option::is_none) {
            empty_weeks += 1;
        }
        for (f, v) in values.into_iter().enumerate() {
            if let Some(v) = v {
                columns[f][w] = v;
                mask[f][w] = false;
            }
        }
    }
    if empty_weeks > 0 {
        let id = daily.first().map_or("?", |d| d.location_id.as_str());
        log::warn!("{id}: {empty_weeks} week(s) without daily weather records are masked");
    }
    WeeklyWeather { columns, mask }
}

/// A time × feature design matrix with one designated label column.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Array2<f64>,
    pub names: Vec<String>,
    pub label: usize,
}

impl FeatureMatrix {
    pub fn new(data: Array2<f64>, names: Vec<String>, label: usize) -> Result<Self> {
        if names.len() != data.ncols() {
            return Err(Error::Validation(format!(
                "{} column names for {} columns",
                names.len(),
                data.ncols()
            )));
        }
        if label >= data.ncols() {
            return Err(Error::Validation(format!("label column {label} out of range")));
        }
        Ok(Self { data, names, label })
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn label_column(&self) -> Vec<f64> {
        self.data.column(self.label).to_vec()
    }

    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> FeatureMatrix {
        FeatureMatrix {
            data: self.data.slice(s![range, ..]).to_owned(),
            names: self.names.clone(),
            label: self.label,
        }
    }
}

/// Per-column training mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Index of the label within `columns`.
    pub label: usize,
    /// Zero-variance input columns removed before normalizing.
    pub dropped: Vec<String>,
    /// Row range the statistics were computed from.
    pub train_rows: [usize; 2],
}

impl NormStats {
    pub fn label_mean(&self) -> f64 {
        self.mean[self.label]
    }

    pub fn label_std(&self) -> f64 {
        self.std[self.label]
    }

    pub fn denormalize_label(&self, v: f64) -> f64 {
        v * self.label_std() + self.label_mean()
    }

    pub fn normalize_label(&self, v: f64) -> f64 {
        (v - self.label_mean()) / self.label_std()
    }

    /// Applies the stored statistics to `x`, dropping the same columns.
    pub fn apply(&self, x: &FeatureMatrix) -> Result<FeatureMatrix> {
        let idx: Vec<usize> = self
            .columns
            .iter()
            .map(|c| {
                x.names.iter().position(|n| n == c).ok_or_else(|| {
                    Error::Validation(format!("column {c} missing from matrix"))
                })
            })
            .collect::<Result<_>>()?;
        let mut data = x.data.select(Axis(1), &idx);
        for (j, mut col) in data.axis_iter_mut(Axis(1)).enumerate() {
            let (mu, sd) = (self.mean[j], self.std[j]);
            col.mapv_inplace(|v| (v - mu) / sd);
        }
        FeatureMatrix::new(data, self.columns.clone(), self.label)
    }
}

#[derive(Debug, Clone)]
pub struct NormalizedSplits {
    pub train: FeatureMatrix,
    pub val: FeatureMatrix,
    pub test: FeatureMatrix,
    pub stats: NormStats,
}

/// Relative spread below which a column is treated as constant.
const CONSTANT_TOL: f64 = 1e-12;

/// Computes z-score statistics on the training rows only and applies them to
/// all three splits.
pub fn zscore_split_normalize(x: &FeatureMatrix, split: &SplitRanges) -> Result<NormalizedSplits> {
    if split.train.is_empty() {
        return Err(Error::Validation("training split is empty".into()));
    }
    if split.test.end > x.rows() {
        return Err(Error::Validation(format!(
            "split ends at row {} but matrix has {} rows",
            split.test.end,
            x.rows()
        )));
    }
    let train = x.data.slice(s![split.train.clone(), ..]);
    if train.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("training rows contain non-finite values".into()));
    }

    let n = train.nrows() as f64;
    let mut columns = Vec::new();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    let mut dropped = Vec::new();
    let mut label = None;
    for (j, col) in train.axis_iter(Axis(1)).enumerate() {
        let mu = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
        let scale = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if sd <= CONSTANT_TOL * scale.max(f64::MIN_POSITIVE) || sd == 0.0 {
            if j == x.label {
                return Err(Error::Validation(format!(
                    "label column {} is constant over the training rows",
                    x.names[j]
                )));
            }
            log::warn!("dropping constant column {}", x.names[j]);
            dropped.push(x.names[j].clone());
            continue;
        }
        if j == x.label {
            label = Some(columns.len());
        }
        columns.push(x.names[j].clone());
        means.push(mu);
        stds.push(sd);
    }

    let stats = NormStats {
        columns,
        mean: means,
        std: stds,
        label: label.expect("label column kept"),
        dropped,
        train_rows: [split.train.start, split.train.end],
    };
    let all = stats.apply(x)?;
    Ok(NormalizedSplits {
        train: all.slice_rows(split.train.clone()),
        val: all.slice_rows(split.val.clone()),
        test: all.slice_rows(split.test.clone()),
        stats,
    })
}

/// Scales a series to `[0, 1]`. A constant series maps to all zeros.
pub fn minmax_normalize(series: &[f64]) -> Vec<f64> {
    let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        if !series.is_empty() {
            log::warn!("min-max normalization of a constant series; returning zeros");
        }
        return vec![0.0; series.len()];
    }
    series.iter().map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
}
