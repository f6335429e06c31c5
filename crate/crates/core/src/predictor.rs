//! Single-shot linear forecaster, Adam training with early stopping, and the
//! peripheral-feature-count sweep.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{assemble_features, build_windows, split_panel, Sample, SlidingWindowDataset, SplitRanges, SplitTag};
use crate::error::{Error, Result};
use crate::geo_metrics::PredictorRanking;
use crate::ingest::{AlignedPanel, LocationSeries};
use crate::preprocess::{zscore_split_normalize, FeatureMatrix, NormStats, NormalizedSplits};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 120,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("max_epochs and patience must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::Config("learning rate and epsilon must be positive".into()));
        }
        for b in [self.beta1, self.beta2] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("moment decay {b} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub val: f64,
}

/// `ŷ = Wᵀ x_last + b`, where `x_last` is the final row of the input block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub t_in: usize,
    pub features: Vec<String>,
    /// `features × t_out`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub history: Vec<EpochLoss>,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearModel {
    pub fn zeros(features: Vec<String>, t_in: usize, t_out: usize) -> Self {
        let f = features.len();
        Self {
            t_in,
            features,
            weights: Array2::zeros((f, t_out)),
            bias: Array1::zeros(t_out),
            history: Vec::new(),
            best_epoch: None,
        }
    }

    pub fn for_dataset(ds: &SlidingWindowDataset) -> Self {
        Self::zeros(ds.features.clone(), ds.t_in, ds.t_out)
    }

    pub fn n_features(&self) -> usize {
        self.weights.nrows()
    }

    pub fn t_out(&self) -> usize {
        self.weights.ncols()
    }

    pub fn predict(&self, input: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        if input.nrows() != self.t_in || input.ncols() != self.n_features() {
            return Err(Error::Validation(format!(
                "input block is {}x{}, model expects {}x{}",
                input.nrows(),
                input.ncols(),
                self.t_in,
                self.n_features()
            )));
        }
        let last = input.row(self.t_in - 1);
        Ok((self.weights.t().dot(&last) + &self.bias).to_vec())
    }

    fn predict_unchecked(&self, s: &Sample) -> Array1<f64> {
        let last = s.input.row(s.input.nrows() - 1);
        self.weights.t().dot(&last) + &self.bias
    }

    /// Mean squared error over every sample and output step.
    pub fn mse(&self, samples: &[Sample]) -> f64 {
        let n = (samples.len() * self.t_out()) as f64;
        samples
            .iter()
            .map(|s| {
                let p = self.predict_unchecked(s);
                p.iter().zip(&s.target).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / n
    }

    /// Analytic gradient of [`LinearModel::mse`] over `samples`.
    pub fn mse_gradients(&self, samples: &[Sample]) -> Gradients {
        let mut gw = Array2::zeros(self.weights.raw_dim());
        let mut gb = Array1::zeros(self.t_out());
        let scale = 2.0 / (samples.len() * self.t_out()) as f64;
        for s in samples {
            let last = s.input.row(s.input.nrows() - 1);
            let mut r = self.predict_unchecked(s);
            for (ri, y) in r.iter_mut().zip(&s.target) {
                *ri = (*ri - y) * scale;
            }
            for (f, &x) in last.iter().enumerate() {
                gw.row_mut(f).scaled_add(x, &r);
            }
            gb += &r;
        }
        Gradients {
            weights: gw,
            bias: gb,
        }
    }

    pub fn save(&self, path: &Path, norm_stats: Option<&NormStats>) -> Result<()> {
        let saved = SavedModel {
            model: self.clone(),
            norm_stats: norm_stats.cloned(),
        };
        let json = serde_json::to_string_pretty(&saved)?;
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<(Self, Option<NormStats>)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let saved: SavedModel = serde_json::from_str(&text)?;
        let m = &saved.model;
        if m.weights.nrows() != m.features.len() || m.bias.len() != m.weights.ncols() {
            return Err(Error::Validation(format!(
                "{}: inconsistent model shapes",
                path.display()
            )));
        }
        Ok((saved.model, saved.norm_stats))
    }
}

#[derive(Serialize, Deserialize)]
struct SavedModel {
    model: LinearModel,
    norm_stats: Option<NormStats>,
}

struct Adam<'a> {
    cfg: &'a TrainConfig,
    step: i32,
    mw: Array2<f64>,
    vw: Array2<f64>,
    mb: Array1<f64>,
    vb: Array1<f64>,
}

impl<'a> Adam<'a> {
    fn new(cfg: &'a TrainConfig, model: &LinearModel) -> Self {
        Self {
            cfg,
            step: 0,
            mw: Array2::zeros(model.weights.raw_dim()),
            vw: Array2::zeros(model.weights.raw_dim()),
            mb: Array1::zeros(model.t_out()),
            vb: Array1::zeros(model.t_out()),
        }
    }

    /// Returns whether any parameter moved.
    fn update(&mut self, model: &mut LinearModel, g: &Gradients) -> bool {
        self.step += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        let mut moved = false;
        let mut apply = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let delta = c.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
            moved |= delta != 0.0;
            *p -= delta;
        };
        ndarray::Zip::from(&mut model.weights)
            .and(&mut self.mw)
            .and(&mut self.vw)
            .and(&g.weights)
            .for_each(|p, m, v, &g| apply(p, m, v, g));
        ndarray::Zip::from(&mut model.bias)
            .and(&mut self.mb)
            .and(&mut self.vb)
            .and(&g.bias)
            .for_each(|p, m, v, &g| apply(p, m, v, g));
        moved
    }
}

fn check_compatible(model: &LinearModel, ds: &SlidingWindowDataset) -> Result<()> {
    if ds.features != model.features || ds.t_in != model.t_in || ds.t_out != model.t_out() {
        return Err(Error::Validation(format!(
            "{:?} dataset schema ({} features, t_in {}, t_out {}) does not match the model",
            ds.split,
            ds.n_features(),
            ds.t_in,
            ds.t_out
        )));
    }
    Ok(())
}

/// Mini-batch Adam on the MSE, batches in time order. After each epoch the
/// full training and validation losses are recorded; training stops after
/// `patience` epochs without a validation improvement, or once an epoch leaves
/// every parameter unchanged, and the best-validation parameters are restored.
pub fn train(
    model: &mut LinearModel,
    train_ds: &SlidingWindowDataset,
    val_ds: &SlidingWindowDataset,
    cfg: &TrainConfig,
) -> Result<()> {
    cfg.validate()?;
    check_compatible(model, train_ds)?;
    check_compatible(model, val_ds)?;
    if train_ds.is_empty() || val_ds.is_empty() {
        return Err(Error::Validation("training and validation sets must be non-empty".into()));
    }
    if train_ds.provenance != val_ds.provenance {
        return Err(Error::Validation(format!(
            "training and validation sets were normalized with different statistics ({:?} vs {:?})",
            train_ds.provenance, val_ds.provenance
        )));
    }

    let mut adam = Adam::new(cfg, model);
    let mut best: Option<(f64, Array2<f64>, Array1<f64>, usize)> = None;
    let mut stale = 0;
    model.history.clear();
    for epoch in 1..=cfg.max_epochs {
        let mut moved = false;
        for batch in train_ds.batches() {
            let g = model.mse_gradients(batch);
            moved |= adam.update(model, &g);
        }
        let train_loss = model.mse(&train_ds.samples);
        let val_loss = model.mse(&val_ds.samples);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at epoch {epoch} (train {train_loss}, validation {val_loss}); \
                 largest |weight| {}",
                model.weights.iter().fold(0.0f64, |a, w| a.max(w.abs()))
            )));
        }
        model.history.push(EpochLoss {
            epoch,
            train: train_loss,
            val: val_loss,
        });
        log::debug!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6}");

        if best.as_ref().is_none_or(|b| val_loss < b.0) {
            best = Some((val_loss, model.weights.clone(), model.bias.clone(), epoch));
            stale = 0;
        } else {
            stale += 1;
        }
        if stale >= cfg.patience || !moved {
            break;
        }
    }
    let (_, w, b, epoch) = best.expect("at least one epoch runs");
    model.weights = w;
    model.bias = b;
    model.best_epoch = Some(epoch);
    Ok(())
}

/// Mean absolute error over all samples and output steps, on the scale of the
/// dataset's labels.
pub fn evaluate_mae(model: &LinearModel, ds: &SlidingWindowDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Validation("cannot evaluate on an empty dataset".into()));
    }
    check_compatible(model, ds)?;
    let total: f64 = ds
        .samples
        .iter()
        .map(|s| {
            let p = model.predict_unchecked(s);
            p.iter().zip(&s.target).map(|(a, b)| (a - b).abs()).sum::<f64>()
        })
        .sum();
    Ok(total / (ds.len() * model.t_out()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastConfig {
    pub split: [f64; 3],
    pub t_in: usize,
    pub t_out: usize,
    pub batch_size: usize,
    pub weather: bool,
    pub train: TrainConfig,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            split: [0.5, 0.3, 0.2],
            t_in: 8,
            t_out: 4,
            batch_size: 32,
            weather: false,
            train: TrainConfig::default(),
        }
    }
}

/// Feature matrix, splits and windowed datasets for one peripheral count.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub features: FeatureMatrix,
    pub split: SplitRanges,
    pub normalized: NormalizedSplits,
    pub train: SlidingWindowDataset,
    pub val: SlidingWindowDataset,
    pub test: SlidingWindowDataset,
}

pub fn prepare(
    panel: &AlignedPanel,
    target: &LocationSeries,
    ranking: &PredictorRanking,
    n_pic: usize,
    cfg: &ForecastConfig,
) -> Result<PreparedData> {
    let features = assemble_features(panel, target, ranking, n_pic, cfg.weather)?;
    prepare_matrix(features, cfg)
}

pub fn prepare_matrix(features: FeatureMatrix, cfg: &ForecastConfig) -> Result<PreparedData> {
    let split = split_panel(features.rows(), cfg.split, cfg.t_in + cfg.t_out)?;
    let normalized = zscore_split_normalize(&features, &split)?;
    let prov = normalized.stats.train_rows;
    let build = |m: &FeatureMatrix, tag| {
        build_windows(m, cfg.t_in, cfg.t_out, cfg.batch_size, tag).map(|d| d.with_provenance(prov))
    };
    let train = build(&normalized.train, SplitTag::Train)?;
    let val = build(&normalized.val, SplitTag::Val)?;
    let test = build(&normalized.test, SplitTag::Test)?;
    Ok(PreparedData {
        features,
        split,
        normalized,
        train,
        val,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// On the z-scored label scale.
    pub mae_norm: f64,
    /// In cases per 100k.
    pub mae_raw: f64,
    /// On the label's min-max scale over the whole series.
    pub mae_minmax: f64,
    pub best_epoch: usize,
}

pub fn fit(data: &PreparedData, cfg: &TrainConfig) -> Result<LinearModel> {
    let mut model = LinearModel::for_dataset(&data.train);
    train(&mut model, &data.train, &data.val, cfg)?;
    Ok(model)
}

pub fn evaluate(model: &LinearModel, data: &PreparedData) -> Result<Evaluation> {
    let mae_norm = evaluate_mae(model, &data.test)?;
    let mae_raw = mae_norm * data.normalized.stats.label_std();
    let label = data.features.label_column();
    let lo = label.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = label.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Evaluation {
        mae_norm,
        mae_raw,
        mae_minmax: mae_raw / (hi - lo),
        best_epoch: model.best_epoch.unwrap_or(0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_pic: usize,
    pub evaluation: Option<Evaluation>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub optimal_n_pic: usize,
    pub optimal_mae: f64,
}

impl SweepResult {
    pub fn baseline_mae(&self) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.n_pic == 0)
            .and_then(|p| p.evaluation.as_ref())
            .map(|e| e.mae_norm)
    }

    /// Relative decrease in MAE from the baseline to the optimum.
    pub fn improvement(&self) -> Option<f64> {
        self.baseline_mae().map(|b| (b - self.optimal_mae) / b)
    }
}

/// Trains and evaluates one model per peripheral count `0..=n_max`.
pub fn sweep_n_pic(
    panel: &AlignedPanel,
    target: &LocationSeries,
    ranking: &PredictorRanking,
    cfg: &ForecastConfig,
    n_max: usize,
) -> Result<SweepResult> {
    if n_max > ranking.len() {
        return Err(Error::Validation(format!(
            "n_max {n_max} exceeds the {} ranked peripheral locations",
            ranking.len()
        )));
    }
    let points: Vec<SweepPoint> = (0..=n_max)
        .into_par_iter()
        .map(|n| {
            let outcome = prepare(panel, target, ranking, n, cfg)
                .and_then(|d| fit(&d, &cfg.train).and_then(|m| evaluate(&m, &d)));
            match outcome {
                Ok(e) => SweepPoint {
                    n_pic: n,
                    evaluation: Some(e),
                    error: None,
                },
                Err(e) => {
                    log::warn!("n_pic {n}: {e}");
                    SweepPoint {
                        n_pic: n,
                        evaluation: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    let (optimal_n_pic, optimal_mae) = points
        .iter()
        .filter_map(|p| p.evaluation.as_ref().map(|e| (p.n_pic, e.mae_norm)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| {
            Error::Numerical(format!(
                "every sweep point failed: {}",
                points[0].error.as_deref().unwrap_or("")
            ))
        })?;
    Ok(SweepResult {
        points,
        optimal_n_pic,
        optimal_mae,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn dataset(samples: Vec<Sample>, features: usize, tag: SplitTag) -> SlidingWindowDataset {
        let t_in = samples[0].input.nrows();
        let t_out = samples[0].target.len();
        SlidingWindowDataset {
            samples,
            t_in,
            t_out,
            batch_size: 32,
            split: tag,
            features: (0..features).map(|i| format!("f{i}")).collect(),
            provenance: Some([0, 10]),
        }
    }

    fn sample(last: &[f64], target: &[f64]) -> Sample {
        let mut input = Array2::zeros((2, last.len()));
        input.row_mut(1).assign(&ndarray::ArrayView1::from(last));
        Sample {
            start: 0,
            input,
            target: target.to_vec(),
        }
    }

    #[test]
    fn zero_model_outputs_bias() {
        let mut m = LinearModel::zeros(vec!["a".into(), "b".into()], 3, 4);
        m.bias = array![0.5, -1.0, 2.0, 0.0];
        let out = m.predict(Array2::from_elem((3, 2), 7.0).view()).unwrap();
        assert_eq!(out, vec![0.5, -1.0, 2.0, 0.0]);
        assert!(m.predict(Array2::zeros((2, 2)).view()).is_err());
        assert!(m.predict(Array2::zeros((3, 3)).view()).is_err());
    }

    #[test]
    fn uses_only_last_row() {
        let mut m = LinearModel::zeros(vec!["a".into()], 3, 1);
        m.weights[[0, 0]] = 2.0;
        let x = array![[100.0], [-50.0], [1.5]];
        assert_eq!(m.predict(x.view()).unwrap(), vec![3.0]);
    }

    #[test]
    fn mae_of_constant_zero_model() {
        let ds = dataset(vec![sample(&[0.3], &[1.0]), sample(&[0.1], &[-1.0])], 1, SplitTag::Test);
        let m = LinearModel::for_dataset(&ds);
        assert_eq!(evaluate_mae(&m, &ds).unwrap(), 1.0);
        let empty = SlidingWindowDataset {
            samples: vec![],
            ..ds
        };
        assert!(evaluate_mae(&m, &empty).is_err());
    }

    #[test]
    fn zero_labels_converge_immediately() {
        let s: Vec<Sample> = (0..10).map(|i| sample(&[i as f64, 1.0], &[0.0, 0.0])).collect();
        let train_ds = dataset(s.clone(), 2, SplitTag::Train);
        let val_ds = dataset(s, 2, SplitTag::Val);
        let mut m = LinearModel::for_dataset(&train_ds);
        train(&mut m, &train_ds, &val_ds, &TrainConfig::default()).unwrap();
        assert_eq!(m.history.len(), 1);
        assert_eq!(m.history[0].train, 0.0);
        assert_eq!(m.best_epoch, Some(1));
        assert!(m.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn mismatched_provenance_rejected() {
        let s = vec![sample(&[1.0], &[1.0])];
        let a = dataset(s.clone(), 1, SplitTag::Train);
        let mut b = dataset(s, 1, SplitTag::Val);
        b.provenance = Some([0, 11]);
        let mut m = LinearModel::for_dataset(&a);
        assert!(train(&mut m, &a, &b, &TrainConfig::default()).is_err());
    }

    #[test]
    fn schema_mismatch_rejected() {
        let a = dataset(vec![sample(&[1.0], &[1.0])], 1, SplitTag::Train);
        let b = dataset(vec![sample(&[1.0, 2.0], &[1.0])], 2, SplitTag::Val);
        let mut m = LinearModel::for_dataset(&a);
        assert!(train(&mut m, &a, &b, &TrainConfig::default()).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = LinearModel::zeros(vec!["x".into(), "y".into()], 4, 2);
        m.weights[[1, 0]] = 0.25;
        m.bias[1] = -3.0;
        let path = dir.path().join("model.json");
        m.save(&path, None).unwrap();
        let (back, stats) = LinearModel::load(&path).unwrap();
        assert_eq!(back, m);
        assert!(stats.is_none());
    }

    #[test]
    fn rejects_bad_train_config() {
        let bad = TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn improvement_is_relative_decrease() {
        let ev = |m: f64| Evaluation {
            mae_norm: m,
            mae_raw: m,
            mae_minmax: m,
            best_epoch: 1,
        };
        let r = SweepResult {
            points: vec![
                SweepPoint { n_pic: 0, evaluation: Some(ev(0.5)), error: None },
                SweepPoint { n_pic: 1, evaluation: Some(ev(0.4)), error: None },
            ],
            optimal_n_pic: 1,
            optimal_mae: 0.4,
        };
        assert!((r.improvement().unwrap() - 0.2).abs() < 1e-12);
    }
}
