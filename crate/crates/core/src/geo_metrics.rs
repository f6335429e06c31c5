//! Distance and prevalence weights, the combined predictor strength, and the
//! end-to-end ranking of peripheral locations for one target.

use std::cmp::Ordering;
use std::io::{Read, Write};

use geographiclib_rs::{Geodesic, InverseGeodesic};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{
    correlation_weights, minmax_weights, reduce, shifted_matrix, CorrelationConfig,
    CorrelationReduction, PhasedCorrelationMatrix,
};
use crate::error::{Error, Result};
use crate::ingest::{AlignedPanel, LocationRecord, LocationSeries};
use crate::windowing::{WindowSet, WindowingConfig};

/// Geodesic distance on the WGS84 ellipsoid, in kilometres.
pub fn geodesic_km(a: &LocationRecord, b: &LocationRecord) -> f64 {
    geodesic_km_coords((a.latitude, a.longitude), (b.latitude, b.longitude))
}

pub fn geodesic_km_coords(a: (f64, f64), b: (f64, f64)) -> f64 {
    let metres: f64 = Geodesic::wgs84().inverse(a.0, a.1, b.0, b.1);
    metres / 1000.0
}

/// `1 - (d - min) / (max - min)`; all ones when every distance is equal.
pub fn distance_weights(distances: &[f64]) -> Vec<f64> {
    let w = minmax_weights(distances);
    if w.iter().all(|&v| v == 1.0) {
        return w;
    }
    w.into_iter().map(|d| 1.0 - d).collect()
}

/// Cumulative incidence of a series over the whole timeline.
pub fn prevalence(series: &[f64]) -> f64 {
    series.iter().sum()
}

pub fn prevalence_weights<S: AsRef<[f64]>>(series: &[S]) -> Vec<f64> {
    let totals: Vec<f64> = series.iter().map(|s| prevalence(s.as_ref())).collect();
    minmax_weights(&totals)
}

pub fn predictor_strength(gamma_c: f64, gamma_p: f64, gamma_d: f64) -> f64 {
    gamma_c * (gamma_p + gamma_d)
}

/// The three component weights of one peripheral location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicWeights {
    pub pic_id: String,
    pub gamma_c: f64,
    pub gamma_p: f64,
    pub gamma_d: f64,
    #[serde(default)]
    pub distance_km: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub rank: usize,
    pub pic_id: String,
    pub gamma_c: f64,
    pub gamma_p: f64,
    pub gamma_d: f64,
    pub gamma: f64,
    pub distance_km: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorRanking {
    pub target: String,
    pub rows: Vec<RankingRow>,
    pub windowing: Option<WindowingConfig>,
    pub window_count: Option<usize>,
}

impl PredictorRanking {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r.pic_id.as_str())
    }

    pub fn top(&self, n: usize) -> &[RankingRow] {
        &self.rows[..n.min(self.rows.len())]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "pic_id", "gamma_c", "gamma_p", "gamma_d", "gamma"])?;
        for r in &self.rows {
            w.write_record([
                r.rank.to_string(),
                r.pic_id.clone(),
                format!("{:.6}", r.gamma_c),
                format!("{:.6}", r.gamma_p),
                format!("{:.6}", r.gamma_d),
                format!("{:.6}", r.gamma),
            ])?;
        }
        w.flush().map_err(|e| Error::Validation(e.to_string()))
    }
}

/// Reads `pic_id,gamma_c,gamma_p,gamma_d[,distance_km]` rows.
pub fn read_weights_csv<R: Read>(input: R) -> Result<Vec<PicWeights>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input);
    let mut out = Vec::new();
    for rec in r.deserialize::<PicWeights>() {
        let w = rec?;
        for (name, v) in [("gamma_c", w.gamma_c), ("gamma_p", w.gamma_p), ("gamma_d", w.gamma_d)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!(
                    "{}: {name} = {v} outside [0, 1]",
                    w.pic_id
                )));
            }
        }
        out.push(w);
    }
    Ok(out)
}

fn rank_order(a: &RankingRow, b: &RankingRow) -> Ordering {
    b.gamma
        .total_cmp(&a.gamma)
        .then(b.gamma_c.total_cmp(&a.gamma_c))
        .then_with(|| match (a.distance_km, b.distance_km) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => Ordering::Equal,
        })
        .then_with(|| a.pic_id.cmp(&b.pic_id))
}

/// Combines per-location weights into a ranking ordered by strength, then
/// correlation weight, then distance, then id.
pub fn rank_from_weights(target: impl Into<String>, weights: Vec<PicWeights>) -> PredictorRanking {
    let mut rows: Vec<RankingRow> = weights
        .into_iter()
        .map(|w| RankingRow {
            rank: 0,
            gamma: predictor_strength(w.gamma_c, w.gamma_p, w.gamma_d),
            pic_id: w.pic_id,
            gamma_c: w.gamma_c,
            gamma_p: w.gamma_p,
            gamma_d: w.gamma_d,
            distance_km: w.distance_km,
        })
        .collect();
    rows.sort_by(rank_order);
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    PredictorRanking {
        target: target.into(),
        rows,
        windowing: None,
        window_count: None,
    }
}

/// Intermediate results for one peripheral location.
#[derive(Debug, Clone)]
pub struct PicDetail {
    pub pic_id: String,
    pub matrix: PhasedCorrelationMatrix,
    pub reduction: CorrelationReduction,
    pub distance_km: f64,
    pub prevalence: f64,
}

#[derive(Debug, Clone)]
pub struct RankingReport {
    pub ranking: PredictorRanking,
    pub windows: WindowSet,
    /// In input order, not rank order.
    pub details: Vec<PicDetail>,
}

fn overlaps(a: &LocationSeries, b: &LocationSeries) -> bool {
    a.mask.iter().zip(&b.mask).any(|(x, y)| !x && !y)
}

/// Ranks `pics` as predictors of `target`.
///
/// Windows come from the target's per-100k series only. Peripheral series
/// with no reported week in common with the target are skipped.
pub fn rank_pics(
    target: &LocationSeries,
    pics: &[&LocationSeries],
    windowing: &WindowingConfig,
    corr: &CorrelationConfig,
) -> Result<RankingReport> {
    corr.validate()?;
    let usable: Vec<&LocationSeries> = pics
        .iter()
        .copied()
        .filter(|p| p.id() != target.id())
        .filter(|p| {
            let ok = overlaps(target, p);
            if !ok {
                log::warn!("{}: no reported weeks overlapping the target, skipped", p.id());
            }
            ok
        })
        .collect();
    if usable.is_empty() {
        return Err(Error::Validation(format!(
            "no peripheral location has data overlapping target {}",
            target.id()
        )));
    }

    let windows = windowing.windows_for(&target.per_100k)?;
    log::info!(
        "target {}: {} correlation window(s) via {:?}",
        target.id(),
        windows.len(),
        windowing
    );

    let details: Vec<PicDetail> = usable
        .par_iter()
        .map(|p| {
            let matrix = shifted_matrix(&target.per_100k, &p.per_100k, &windows, corr)?;
            let reduction = reduce(&matrix, corr.theta_e);
            Ok(PicDetail {
                pic_id: p.id().to_owned(),
                matrix,
                reduction,
                distance_km: geodesic_km(&target.location, &p.location),
                prevalence: prevalence(&p.per_100k),
            })
        })
        .collect::<Result<_>>()?;

    let means: Vec<f64> = details.iter().map(|d| d.reduction.mean_probability).collect();
    let gamma_c = correlation_weights(&means)?;
    let gamma_d = distance_weights(&details.iter().map(|d| d.distance_km).collect::<Vec<_>>());
    let gamma_p = minmax_weights(&details.iter().map(|d| d.prevalence).collect::<Vec<_>>());

    let weights = details
        .iter()
        .enumerate()
        .map(|(k, d)| {
            log::debug!(
                "{}: gamma_c={:.4} gamma_p={:.4} gamma_d={:.4} d={:.1}km",
                d.pic_id,
                gamma_c[k],
                gamma_p[k],
                gamma_d[k],
                d.distance_km
            );
            PicWeights {
                pic_id: d.pic_id.clone(),
                gamma_c: gamma_c[k],
                gamma_p: gamma_p[k],
                gamma_d: gamma_d[k],
                distance_km: Some(d.distance_km),
            }
        })
        .collect();
    let mut ranking = rank_from_weights(target.id(), weights);
    ranking.windowing = Some(*windowing);
    ranking.window_count = Some(windows.len());
    Ok(RankingReport {
        ranking,
        windows,
        details,
    })
}

/// Ranks every other location of `panel` against `target_id`.
pub fn rank_in_panel(
    panel: &AlignedPanel,
    target_id: &str,
    windowing: &WindowingConfig,
    corr: &CorrelationConfig,
) -> Result<RankingReport> {
    let target = panel
        .get(target_id)
        .ok_or_else(|| Error::Validation(format!("target {target_id} not in panel")))?;
    let pics: Vec<&LocationSeries> = panel.series().iter().filter(|s| s.id() != target_id).collect();
    rank_pics(target, &pics, windowing, corr)
}
