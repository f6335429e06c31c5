//! Windowed time-lagged cross-correlation between a target series and one
//! peripheral series, and its reduction to a correlation weight.
//!
//! For window `w` and shift `theta`, the cell is the Pearson coefficient of
//! `target[t]` against `peripheral[t - theta]` for `t` in `w`. Positive
//! shifts therefore measure how well the peripheral series *leads* the
//! target. Shifted samples are drawn from the whole peripheral series, so a
//! window near the middle of the axis never loses samples to the shift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::windowing::WindowSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorrelationConfig {
    /// Largest shift, in weeks, tried in either direction.
    pub theta_max: usize,
    /// Half-width of the band averaged around the peak shift.
    pub theta_e: usize,
    /// Fewest paired samples for a cell to be defined.
    pub min_overlap: usize,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        Self {
            theta_max: 8,
            theta_e: 1,
            min_overlap: 3,
        }
    }
}

impl CorrelationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.theta_max == 0 {
            return Err(Error::Config("theta_max must be at least 1".into()));
        }
        if self.min_overlap < 2 {
            return Err(Error::Config("min_overlap must be at least 2".into()));
        }
        Ok(())
    }
}

/// Pearson product-moment correlation. `None` when either input has zero
/// variance (or fewer than two samples); that case is undefined, not zero.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson inputs must have equal length");
    let n = x.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if is_degenerate(sxx, x) || is_degenerate(syy, y) {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

// Sum of squared deviations that is only rounding noise.
fn is_degenerate(ss: f64, v: &[f64]) -> bool {
    let peak = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    ss <= 1e-24 * peak * peak * v.len() as f64 || ss == 0.0
}

/// `M` windows × `2·theta_max + 1` shifts; `None` marks undefined cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasedCorrelationMatrix {
    pub theta_max: usize,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl PhasedCorrelationMatrix {
    pub fn windows(&self) -> usize {
        self.rows.len()
    }

    pub fn shifts(&self) -> impl Iterator<Item = i64> + Clone {
        let tm = self.theta_max as i64;
        -tm..=tm
    }

    pub fn get(&self, m: usize, theta: i64) -> Option<f64> {
        let idx = theta + self.theta_max as i64;
        if idx < 0 {
            return None;
        }
        self.rows.get(m)?.get(idx as usize).copied().flatten()
    }

    /// Rows of `(m, theta, r, valid)` for plotting.
    pub fn cells(&self) -> impl Iterator<Item = (usize, i64, Option<f64>)> + '_ {
        self.rows.iter().enumerate().flat_map(move |(m, row)| {
            self.shifts().zip(row.iter()).map(move |(th, r)| (m, th, *r))
        })
    }
}

/// Computes the phased correlation matrix of `peripheral` against `target`
/// over each window.
pub fn shifted_matrix(
    target: &[f64],
    peripheral: &[f64],
    windows: &WindowSet,
    cfg: &CorrelationConfig,
) -> Result<PhasedCorrelationMatrix> {
    cfg.validate()?;
    if target.len() != peripheral.len() {
        return Err(Error::Validation(format!(
            "target has {} weeks but peripheral series has {}",
            target.len(),
            peripheral.len()
        )));
    }
    let n = target.len() as i64;
    let tm = cfg.theta_max as i64;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let rows = windows
        .iter()
        .map(|w| {
            if w.end > target.len() {
                return Err(Error::Validation(format!(
                    "window [{}, {}) exceeds series length {}",
                    w.start, w.end, n
                )));
            }
            Ok((-tm..=tm)
                .map(|theta| {
                    xs.clear();
                    ys.clear();
                    for t in w.range() {
                        let s = t as i64 - theta;
                        if (0..n).contains(&s) {
                            xs.push(target[t]);
                            ys.push(peripheral[s as usize]);
                        }
                    }
                    if xs.len() < cfg.min_overlap {
                        None
                    } else {
                        pearson(&xs, &ys)
                    }
                })
                .collect())
        })
        .collect::<Result<Vec<Vec<Option<f64>>>>>()?;
    Ok(PhasedCorrelationMatrix {
        theta_max: cfg.theta_max,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReduction {
    /// Shift of the peak correlation; `None` if the whole row is undefined.
    pub peak: Option<i64>,
    /// Mean correlation over the defined cells within `theta_e` of the peak.
    pub strength: Option<f64>,
    /// Strength when the peripheral series is in phase or leading, else 0.
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReduction {
    pub windows: Vec<WindowReduction>,
    /// Mean predictor probability across all windows, undefined rows
    /// included as zeros.
    pub mean_probability: f64,
}

/// Argmax over defined cells. Ties go to the smallest `|theta|`, then to the
/// non-negative shift.
fn peak_shift(matrix: &PhasedCorrelationMatrix, m: usize) -> Option<i64> {
    let mut best: Option<(i64, f64)> = None;
    for theta in matrix.shifts() {
        let Some(r) = matrix.get(m, theta) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((bt, br)) => {
                r > br || (r == br && (theta.abs() < bt.abs() || (theta.abs() == bt.abs() && theta > bt)))
            }
        };
        if better {
            best = Some((theta, r));
        }
    }
    best.map(|(t, _)| t)
}

pub fn reduce(matrix: &PhasedCorrelationMatrix, theta_e: usize) -> CorrelationReduction {
    let te = theta_e as i64;
    let windows: Vec<WindowReduction> = (0..matrix.windows())
        .map(|m| {
            let Some(peak) = peak_shift(matrix, m) else {
                return WindowReduction {
                    peak: None,
                    strength: None,
                    probability: 0.0,
                };
            };
            let band: Vec<f64> = (peak - te..=peak + te)
                .filter_map(|th| matrix.get(m, th))
                .collect();
            let strength = band.iter().sum::<f64>() / band.len() as f64;
            WindowReduction {
                peak: Some(peak),
                strength: Some(strength),
                probability: if peak >= 0 { strength } else { 0.0 },
            }
        })
        .collect();
    let mean_probability = if windows.is_empty() {
        0.0
    } else {
        windows.iter().map(|w| w.probability).sum::<f64>() / windows.len() as f64
    };
    CorrelationReduction {
        windows,
        mean_probability,
    }
}

/// Min-max scaling across peripheral locations; when every value is equal
/// (including a single location) all weights are 1. Spreads at the level of
/// floating-point rounding count as equal.
pub(crate) fn minmax_weights(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-9 * hi.abs().max(lo.abs())) {
        return vec![1.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Correlation weight of each peripheral location from its mean predictor
/// probability.
pub fn correlation_weights(mean_probabilities: &[f64]) -> Result<Vec<f64>> {
    if mean_probabilities.is_empty() {
        return Err(Error::Validation(
            "correlation weights need at least one peripheral location".into(),
        ));
    }
    Ok(minmax_weights(mean_probabilities))
}
