//! Independent reference implementations and instance generators shared by
//! the integration tests and the acceptance runner.

#![allow(dead_code)]

use std::path::PathBuf;

use lagrank::correlation::CorrelationConfig;
use lagrank::dataset::{Sample, SlidingWindowDataset, SplitTag};
use lagrank::ingest::LocationSeries;
use lagrank::predictor::{LinearModel, PreparedData};
use lagrank::preprocess::FeatureMatrix;
use lagrank::windowing::{Window, WindowMethod, WindowSet};
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const VITORIA_ORDER: [&str; 5] = ["3201209", "3205200", "3201308", "3205101", "3200607"];
pub const VITORIA_GAMMA: [f64; 5] = [1.301, 1.270, 1.202, 1.060, 1.029];

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

/// Single-pass sums formula.
pub fn pearson_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sx += a;
        sy += b;
        sxx += a * a;
        syy += b * b;
        sxy += a * b;
    }
    let vx = n * sxx - sx * sx;
    let vy = n * syy - sy * sy;
    if vx <= 1e-12 * n * sxx || vy <= 1e-12 * n * syy {
        return None;
    }
    Some((n * sxy - sx * sy) / (vx.sqrt() * vy.sqrt()))
}

/// Visits every time step for every window and shift and keeps the pairs
/// that fall inside the window with an in-range shifted index.
pub fn brute_force_matrix(
    target: &[f64],
    pic: &[f64],
    windows: &[(usize, usize)],
    theta_max: i64,
    min_overlap: usize,
) -> Vec<Vec<Option<f64>>> {
    let n = target.len() as i64;
    let mut out = Vec::new();
    for &(start, end) in windows {
        let mut row = Vec::new();
        for theta in -theta_max..=theta_max {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for t in 0..n {
                let inside = t >= start as i64 && t < end as i64;
                let s = t - theta;
                if inside && s >= 0 && s < n {
                    xs.push(target[t as usize]);
                    ys.push(pic[s as usize]);
                }
            }
            row.push(if xs.len() < min_overlap {
                None
            } else {
                pearson_oracle(&xs, &ys)
            });
        }
        out.push(row);
    }
    out
}

pub struct CorrelationInstance {
    pub target: Vec<f64>,
    pub pic: Vec<f64>,
    pub windows: Vec<(usize, usize)>,
    pub theta_max: usize,
}

impl CorrelationInstance {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let len = rng.random_range(8..=50);
        let target = (0..len).map(|_| rng.random_range(-5.0..50.0)).collect();
        let pic = (0..len).map(|_| rng.random_range(0.0..100.0)).collect();
        let count = rng.random_range(1..=5);
        let windows = (0..count)
            .map(|_| {
                let a = rng.random_range(0..len);
                let b = rng.random_range(a + 1..=len);
                (a, b)
            })
            .collect();
        Self {
            target,
            pic,
            windows,
            theta_max: rng.random_range(1..=8),
        }
    }

    pub fn window_set(&self) -> WindowSet {
        WindowSet {
            windows: self
                .windows
                .iter()
                .map(|&(start, end)| Window { start, end })
                .collect(),
            method: WindowMethod::Fixed {
                count: self.windows.len(),
            },
        }
    }

    pub fn config(&self) -> CorrelationConfig {
        CorrelationConfig {
            theta_max: self.theta_max,
            ..CorrelationConfig::default()
        }
    }
}

/// Largest absolute difference between two matrices, or `None` when their
/// defined cells differ.
pub fn matrix_gap(a: &[Vec<Option<f64>>], b: &[Vec<Option<f64>>]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut gap = 0.0f64;
    for (ra, rb) in a.iter().zip(b) {
        if ra.len() != rb.len() {
            return None;
        }
        for (x, y) in ra.iter().zip(rb) {
            match (x, y) {
                (Some(x), Some(y)) => gap = gap.max((x - y).abs()),
                (None, None) => {}
                _ => return None,
            }
        }
    }
    Some(gap)
}

fn reflect(j: i64, n: i64) -> usize {
    if j < 0 {
        (-j) as usize
    } else if j >= n {
        (2 * (n - 1) - j) as usize
    } else {
        j as usize
    }
}

/// Fits a degree-`polyorder` polynomial to every mirror-padded neighbourhood
/// and evaluates it at the centre.
pub fn savgol_oracle(series: &[f64], window_length: usize, polyorder: usize) -> Vec<f64> {
    let half = (window_length / 2) as i64;
    let n = series.len() as i64;
    let a = DMatrix::from_fn(window_length, polyorder + 1, |r, c| {
        ((r as i64 - half) as f64).powi(c as i32)
    });
    let svd = a.svd(true, true);
    (0..n)
        .map(|i| {
            let y = DVector::from_fn(window_length, |r, _| {
                series[reflect(i + r as i64 - half, n)]
            });
            svd.solve(&y, 1e-12).expect("full-rank design")[0]
        })
        .collect()
}

/// Label column followed by four columns that each lead it by 1..=4 rows,
/// so every future label is an exact affine function of the last input row.
pub fn identity_task(len: usize) -> FeatureMatrix {
    let lead = 4;
    let sig: Vec<f64> = (0..len + lead)
        .map(|i| {
            let x = i as f64;
            (x / 7.0).sin() + 0.5 * (x / 3.1).cos() + 0.3 * (x / 17.0).sin()
        })
        .collect();
    let mut data = Array2::zeros((len, lead + 1));
    for i in 0..len {
        data[[i, 0]] = sig[i];
        for h in 1..=lead {
            data[[i, h]] = sig[i + h];
        }
    }
    let names = std::iter::once("label".to_owned())
        .chain((1..=lead).map(|h| format!("lead{h}")))
        .collect();
    FeatureMatrix::new(data, names, 0).unwrap()
}

/// Ordinary least squares of every output step on `[x_last, 1]` over the
/// training samples; returns the test MAE of that fit.
pub fn least_squares_test_mae(data: &PreparedData) -> f64 {
    let design = |ds: &SlidingWindowDataset| {
        let f = ds.n_features();
        DMatrix::from_fn(ds.len(), f + 1, |r, c| {
            let s = &ds.samples[r];
            if c == f {
                1.0
            } else {
                s.input[[s.input.nrows() - 1, c]]
            }
        })
    };
    let targets = |ds: &SlidingWindowDataset| {
        DMatrix::from_fn(ds.len(), ds.t_out, |r, c| ds.samples[r].target[c])
    };
    let beta = design(&data.train)
        .svd(true, true)
        .solve(&targets(&data.train), 1e-12)
        .unwrap();
    let pred = design(&data.test) * beta;
    let y = targets(&data.test);
    (pred - &y).abs().sum() / y.len() as f64
}

pub fn random_dataset(rng: &mut ChaCha8Rng, features: usize, t_out: usize, n: usize) -> SlidingWindowDataset {
    let t_in = 3;
    let samples = (0..n)
        .map(|start| Sample {
            start,
            input: Array2::from_shape_fn((t_in, features), |_| rng.random_range(-2.0..2.0)),
            target: (0..t_out).map(|_| rng.random_range(-2.0..2.0)).collect(),
        })
        .collect();
    SlidingWindowDataset {
        samples,
        t_in,
        t_out,
        batch_size: 32,
        split: SplitTag::Train,
        features: (0..features).map(|i| format!("f{i}")).collect(),
        provenance: Some([0, n]),
    }
}

/// Largest relative gap between the analytic MSE gradient and central
/// finite differences for one random model.
pub fn gradient_check(rng: &mut ChaCha8Rng) -> f64 {
    let features = rng.random_range(1..=5);
    let t_out = rng.random_range(1..=4);
    let n = rng.random_range(1..=12);
    let ds = random_dataset(rng, features, t_out, n);
    let mut model = LinearModel::for_dataset(&ds);
    model.weights.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    model.bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    let g = model.mse_gradients(&ds.samples);
    let h = 1e-5;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
    let mut worst = 0.0f64;
    for i in 0..features {
        for j in 0..t_out {
            let mut m = model.clone();
            m.weights[[i, j]] += h;
            let up = m.mse(&ds.samples);
            m.weights[[i, j]] -= 2.0 * h;
            let down = m.mse(&ds.samples);
            worst = worst.max(rel(g.weights[[i, j]], (up - down) / (2.0 * h)));
        }
    }
    for j in 0..t_out {
        let mut m = model.clone();
        m.bias[j] += h;
        let up = m.mse(&ds.samples);
        m.bias[j] -= 2.0 * h;
        let down = m.mse(&ds.samples);
        worst = worst.max(rel(g.bias[j], (up - down) / (2.0 * h)));
    }
    worst
}

pub fn affine(series: &LocationSeries, a: f64, b: f64) -> LocationSeries {
    LocationSeries::from_per_100k(
        series.location.clone(),
        series.per_100k.iter().map(|v| a * v + b).collect(),
    )
}
