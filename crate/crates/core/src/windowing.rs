//! Correlation windows over the target series: a fixed number of equal
//! intervals, or outbreak runs detected on a smoothed `[0, 1]` curve.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::minmax_normalize;

/// Half-open week interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum WindowMethod {
    Fixed { count: usize },
    Detected { i_min: f64, delta_min: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSet {
    pub windows: Vec<Window>,
    pub method: WindowMethod,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Window> {
        self.windows.iter()
    }
}

/// Splits `[0, len)` into `count` contiguous windows. Lengths differ by at
/// most one; the leading windows take the remainder.
pub fn fixed_windows(len: usize, count: usize) -> Result<WindowSet> {
    if count == 0 || count > len {
        return Err(Error::Config(format!(
            "fixed window count must be in 1..={len}, got {count}"
        )));
    }
    let base = len / count;
    let extra = len % count;
    let mut windows = Vec::with_capacity(count);
    let mut start = 0;
    for m in 0..count {
        let end = start + base + usize::from(m < extra);
        windows.push(Window { start, end });
        start = end;
    }
    debug_assert_eq!(start, len);
    Ok(WindowSet {
        windows,
        method: WindowMethod::Fixed { count },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub window_length: usize,
    pub polyorder: usize,
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            window_length: 11,
            polyorder: 3,
        }
    }
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_length % 2 == 0 {
            return Err(Error::Config(format!(
                "smoothing window length must be odd, got {}",
                self.window_length
            )));
        }
        if self.polyorder >= self.window_length {
            return Err(Error::Config(format!(
                "polyorder {} must be below window length {}",
                self.polyorder, self.window_length
            )));
        }
        Ok(())
    }
}

/// Solves `a x = b` in place by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-14 {
            return Err(Error::Numerical("singular smoothing design matrix".into()));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Ok(x)
}

/// Convolution weights that evaluate the least-squares polynomial of degree
/// `polyorder`, fitted over `window_length` points, at the centre point.
pub fn savgol_coefficients(cfg: &SmoothingConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let half = (cfg.window_length / 2) as i64;
    let order = cfg.polyorder + 1;
    // positions are scaled to [-1, 1]; the centre value is unaffected
    let scale = half.max(1) as f64;
    let z: Vec<f64> = (-half..=half).map(|p| p as f64 / scale).collect();

    let mut gram = vec![vec![0.0; order]; order];
    for (i, row) in gram.iter_mut().enumerate() {
        for (j, g) in row.iter_mut().enumerate() {
            *g = z.iter().map(|v| v.powi((i + j) as i32)).sum();
        }
    }
    let mut e0 = vec![0.0; order];
    e0[0] = 1.0;
    let a = solve(gram, e0)?;
    Ok(z.iter()
        .map(|v| a.iter().enumerate().map(|(i, ai)| ai * v.powi(i as i32)).sum())
        .collect())
}

/// Index into `[0, n)` reflecting about the end samples (the edge sample is
/// not repeated).
fn mirror_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    let mut i = i;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Savitzky-Golay smoothing. The series is mirror-padded by half a filter
/// window at each end so the output keeps the input length.
pub fn savgol_smooth(series: &[f64], cfg: &SmoothingConfig) -> Result<Vec<f64>> {
    let coeffs = savgol_coefficients(cfg)?;
    if series.len() < cfg.window_length {
        return Err(Error::Config(format!(
            "series of length {} is shorter than the smoothing window {}",
            series.len(),
            cfg.window_length
        )));
    }
    let half = (cfg.window_length / 2) as i64;
    let n = series.len();
    Ok((0..n as i64)
        .map(|t| {
            coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| c * series[mirror_index(t + k as i64 - half, n)])
                .sum()
        })
        .collect())
}

/// Maximal runs where the value is strictly above `i_min`, kept when at
/// least `delta_min` weeks long.
pub fn detect_windows(norm_series: &[f64], i_min: f64, delta_min: usize) -> WindowSet {
    let mut windows = Vec::new();
    let mut run_start = None;
    for (t, v) in norm_series.iter().enumerate() {
        match (run_start, *v > i_min) {
            (None, true) => run_start = Some(t),
            (Some(s), false) => {
                if t - s >= delta_min {
                    windows.push(Window { start: s, end: t });
                }
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        if norm_series.len() - s >= delta_min {
            windows.push(Window {
                start: s,
                end: norm_series.len(),
            });
        }
    }
    WindowSet {
        windows,
        method: WindowMethod::Detected { i_min, delta_min },
    }
}

/// How correlation windows are chosen for a target series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum WindowingConfig {
    Fixed {
        count: usize,
    },
    Detect {
        i_min: f64,
        delta_min: usize,
        #[serde(default)]
        smoothing: SmoothingConfig,
    },
}

impl Default for WindowingConfig {
    fn default() -> Self {
        WindowingConfig::Fixed { count: 20 }
    }
}

impl WindowingConfig {
    pub fn detect(i_min: f64, delta_min: usize) -> Self {
        WindowingConfig::Detect {
            i_min,
            delta_min,
            smoothing: SmoothingConfig::default(),
        }
    }

    /// Windows for `target`. Detection smooths the raw series and rescales it
    /// to `[0, 1]` before thresholding.
    pub fn windows_for(&self, target: &[f64]) -> Result<WindowSet> {
        match *self {
            WindowingConfig::Fixed { count } => fixed_windows(target.len(), count),
            WindowingConfig::Detect {
                i_min,
                delta_min,
                smoothing,
            } => {
                let smooth = savgol_smooth(target, &smoothing)?;
                Ok(detect_windows(&minmax_normalize(&smooth), i_min, delta_min))
            }
        }
    }
}
