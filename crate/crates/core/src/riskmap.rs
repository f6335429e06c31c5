//! Risk allocation over ranked peripheral locations and GeoJSON export.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::geo_metrics::PredictorRanking;
use crate::ingest::LocationRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskShare {
    pub pic_id: String,
    pub rank: usize,
    pub gamma: f64,
    pub gamma_share: f64,
    pub risk: f64,
}

/// Splits `regional_prediction` over the top `top_k` ranked locations in
/// proportion to Γ. Equal shares when every emitted Γ is zero. A `top_k`
/// beyond the ranking length is clamped.
pub fn allocate_risk(
    ranking: &PredictorRanking,
    top_k: usize,
    regional_prediction: f64,
) -> Result<Vec<RiskShare>> {
    if ranking.is_empty() {
        return Err(Error::Validation("ranking is empty".into()));
    }
    if top_k == 0 {
        return Err(Error::Config("top_k must be at least 1".into()));
    }
    let k = if top_k > ranking.len() {
        log::warn!("top_k {top_k} exceeds {} ranked locations; clamping", ranking.len());
        ranking.len()
    } else {
        top_k
    };
    let rows = ranking.top(k);
    let total: f64 = rows.iter().map(|r| r.gamma).sum();
    Ok(rows
        .iter()
        .map(|r| {
            let share = if total > 0.0 { r.gamma / total } else { 1.0 / k as f64 };
            RiskShare {
                pic_id: r.pic_id.clone(),
                rank: r.rank,
                gamma: r.gamma,
                gamma_share: share,
                risk: share * regional_prediction,
            }
        })
        .collect())
}

/// FeatureCollection of points, one per allocated location, with the run
/// metadata attached as a top-level `metadata` member.
pub fn riskmap_geojson(
    shares: &[RiskShare],
    locations: &[LocationRecord],
    regional_prediction: f64,
    metadata: Value,
) -> Result<Value> {
    let features = shares
        .iter()
        .map(|s| {
            let loc = locations
                .iter()
                .find(|l| l.location_id == s.pic_id)
                .ok_or_else(|| Error::Validation(format!("no coordinates for {}", s.pic_id)))?;
            Ok(json!({
                "type": "Feature",
                "geometry": {
                    "type": "Point",
                    "coordinates": [loc.longitude, loc.latitude],
                },
                "properties": {
                    "pic_id": s.pic_id,
                    "name": loc.name,
                    "rank": s.rank,
                    "gamma": s.gamma,
                    "gamma_share": s.gamma_share,
                    "predicted_next_window": regional_prediction,
                    "risk": s.risk,
                },
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(json!({
        "type": "FeatureCollection",
        "metadata": metadata,
        "features": features,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo_metrics::{rank_from_weights, PicWeights};

    fn ranking(gammas: &[(f64, f64)]) -> PredictorRanking {
        let w = gammas
            .iter()
            .enumerate()
            .map(|(i, &(c, p))| PicWeights {
                pic_id: format!("P{i}"),
                gamma_c: c,
                gamma_p: p,
                gamma_d: 0.0,
                distance_km: None,
            })
            .collect();
        rank_from_weights("R", w)
    }

    #[test]
    fn single_feature_takes_everything() {
        let r = ranking(&[(1.0, 0.4), (0.5, 0.5)]);
        let s = allocate_risk(&r, 1, 12.0).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].gamma_share, 1.0);
        assert_eq!(s[0].risk, 12.0);
    }

    #[test]
    fn three_pic_shares_follow_gamma() {
        // Γ = 0.6, 0.3, 0.1 → shares 0.6, 0.3, 0.1 of 20
        let r = ranking(&[(1.0, 0.6), (1.0, 0.3), (1.0, 0.1)]);
        let s = allocate_risk(&r, 3, 20.0).unwrap();
        let risks: Vec<f64> = s.iter().map(|x| x.risk).collect();
        for (got, want) in risks.iter().zip([12.0, 6.0, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((s.iter().map(|x| x.gamma_share).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn top_k_clamped_and_zero_gamma_split_evenly() {
        let r = ranking(&[(0.0, 0.5), (0.0, 0.2)]);
        let s = allocate_risk(&r, 5, 8.0).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.iter().all(|x| x.risk == 4.0));
    }

    #[test]
    fn geojson_layout() {
        let r = ranking(&[(1.0, 1.0)]);
        let s = allocate_risk(&r, 1, 3.0).unwrap();
        let loc = LocationRecord {
            location_id: "P0".into(),
            name: "Zero".into(),
            latitude: -20.0,
            longitude: -40.0,
            population: 1,
        };
        let g = riskmap_geojson(&s, &[loc], 3.0, json!({"seed": 1})).unwrap();
        assert_eq!(g["type"], "FeatureCollection");
        assert_eq!(g["features"][0]["geometry"]["coordinates"], json!([-40.0, -20.0]));
        assert_eq!(g["features"][0]["properties"]["risk"], 3.0);
        assert!(riskmap_geojson(&s, &[], 3.0, Value::Null).is_err());
    }
}
