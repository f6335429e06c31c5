//! Synthetic coupled-outbreak panels with a known lag structure.
//!
//! The target sits at the hub of a star; peripheral locations lie on a ring
//! around it. Source locations drive the target with a fixed lead, decoys
//! follow their own independent outbreak seasons.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::{Duration, NaiveDate};
use geographiclib_rs::{DirectGeodesic, Geodesic};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AlignedPanel, LocationRecord, LocationSeries};

pub const TARGET_ID: &str = "IC";
const HUB: (f64, f64) = (-20.32, -40.34);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    /// Index of the peripheral location acting as a source.
    pub pic: usize,
    /// Weeks by which the source leads the target.
    pub lag: usize,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_pics: usize,
    pub sources: Vec<SourceSpec>,
    /// Observation noise standard deviation, as a fraction of `outbreak_size`.
    pub noise: f64,
    pub seasonal_period: usize,
    /// Amplitude of the target's own seasonal term, as a fraction of
    /// `outbreak_size`.
    pub seasonal_amplitude: f64,
    pub length: usize,
    pub seed: u64,
    pub ring_radius_km: f64,
    pub radius_jitter_km: f64,
    pub population: u64,
    /// Typical outbreak peak, in cases per 100k per week.
    pub outbreak_size: f64,
}

impl SynthConfig {
    /// Ten equidistant peripheral locations, one of which (chosen by the seed)
    /// leads the target by 1–4 weeks.
    pub fn star(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let pic = rng.random_range(0..10);
        let lag = rng.random_range(1..=4);
        Self {
            n_pics: 10,
            sources: vec![SourceSpec {
                pic,
                lag,
                scale: 1.0,
            }],
            noise: 0.1,
            seasonal_period: 52,
            seasonal_amplitude: 0.1,
            length: 520,
            seed,
            ring_radius_km: 60.0,
            radius_jitter_km: 0.0,
            population: 100_000,
            outbreak_size: 50.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < 2 || self.seasonal_period == 0 {
            return Err(Error::Config("synthetic length and period must be positive".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for s in &self.sources {
            if s.pic >= self.n_pics {
                return Err(Error::Config(format!("source index {} out of range", s.pic)));
            }
            if s.lag >= self.length {
                return Err(Error::Config(format!("lag {} not below length", s.lag)));
            }
            if !seen.insert(s.pic) {
                return Err(Error::Config(format!("location {} listed twice as a source", s.pic)));
            }
        }
        if self.noise < 0.0 || self.population == 0 {
            return Err(Error::Config("noise must be non-negative and population positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthPanel {
    pub panel: AlignedPanel,
    pub target_id: String,
    /// Source location id → lead in weeks.
    pub sources: BTreeMap<String, usize>,
}

pub fn pic_id(k: usize) -> String {
    format!("PIC{k:02}")
}

/// Outbreak curve: one Gaussian bump per season, peaking at a uniformly drawn
/// week of that season, with random width and log-normal size.
fn outbreak_curve(rng: &mut ChaCha8Rng, len: usize, period: usize, size: f64) -> Vec<f64> {
    let p = period as f64;
    let amp = LogNormal::new(0.0, 0.6).unwrap();
    let seasons = len / period + 2;
    let bumps: Vec<(f64, f64, f64)> = (0..seasons)
        .map(|k| {
            let centre = (k as f64 - 1.0) * p + rng.random_range(0.0..p);
            let width = rng.random_range(2.5..6.0);
            (centre, width, size * amp.sample(rng))
        })
        .collect();
    (0..len)
        .map(|t| {
            let t = t as f64;
            0.05 * size
                + bumps
                    .iter()
                    .map(|(c, w, a)| a * (-(t - c).powi(2) / (2.0 * w * w)).exp())
                    .sum::<f64>()
        })
        .collect()
}

fn observe(rng: &mut ChaCha8Rng, clean: &[f64], sd: f64) -> Vec<f64> {
    if sd == 0.0 {
        return clean.to_vec();
    }
    let n = Normal::new(0.0, sd).unwrap();
    clean.iter().map(|v| (v + n.sample(rng)).max(0.0)).collect()
}

pub fn synth_panel(cfg: &SynthConfig) -> Result<SynthPanel> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let len = cfg.length;
    let max_lag = cfg.sources.iter().map(|s| s.lag).max().unwrap_or(0);
    let sd = cfg.noise * cfg.outbreak_size;

    // generated on an axis extended by `max_lag` so lagged copies are defined
    // from the first week
    let clean: Vec<Vec<f64>> = (0..cfg.n_pics)
        .map(|_| outbreak_curve(&mut rng, len + max_lag, cfg.seasonal_period, cfg.outbreak_size))
        .collect();

    let mut target = vec![0.0; len];
    for s in &cfg.sources {
        for (t, v) in target.iter_mut().enumerate() {
            *v += s.scale * clean[s.pic][t + max_lag - s.lag];
        }
    }
    let p = cfg.seasonal_period as f64;
    for (t, v) in target.iter_mut().enumerate() {
        *v += cfg.seasonal_amplitude
            * cfg.outbreak_size
            * 0.5
            * (1.0 + (2.0 * PI * t as f64 / p).sin());
    }
    let target = observe(&mut rng, &target, sd);

    let geod = Geodesic::wgs84();
    let mut series = vec![LocationSeries::from_per_100k(
        LocationRecord {
            location_id: TARGET_ID.into(),
            name: "target".into(),
            latitude: HUB.0,
            longitude: HUB.1,
            population: cfg.population,
        },
        target,
    )];
    for (k, c) in clean.iter().enumerate() {
        let azimuth = 360.0 * k as f64 / cfg.n_pics as f64;
        let radius = cfg.ring_radius_km
            + if cfg.radius_jitter_km > 0.0 {
                rng.random_range(-cfg.radius_jitter_km..cfg.radius_jitter_km)
            } else {
                0.0
            };
        let (lat, lon): (f64, f64) = geod.direct(HUB.0, HUB.1, azimuth, radius * 1000.0);
        let obs = observe(&mut rng, &c[max_lag..], sd);
        series.push(LocationSeries::from_per_100k(
            LocationRecord {
                location_id: pic_id(k),
                name: pic_id(k),
                latitude: lat,
                longitude: lon,
                population: cfg.population,
            },
            obs,
        ));
    }

    let start = NaiveDate::from_ymd_opt(2010, 1, 4).expect("valid date");
    let weeks = (0..len).map(|i| start + Duration::days(7 * i as i64)).collect();
    Ok(SynthPanel {
        panel: AlignedPanel::new(weeks, series)?,
        target_id: TARGET_ID.into(),
        sources: cfg.sources.iter().map(|s| (pic_id(s.pic), s.lag)).collect(),
    })
}
