//! Acceptance runner: one PASS/FAIL line per criterion, with measured values
//! and runtimes. Exits non-zero if any criterion fails.

mod common;

use std::fs::File;
use std::time::{Duration, Instant};

use common::*;
use lagrank::correlation::{reduce, shifted_matrix, CorrelationConfig};
use lagrank::dataset::split_panel;
use lagrank::dataset::synth::{synth_panel, SynthConfig};
use lagrank::geo_metrics::{rank_from_weights, rank_in_panel, rank_pics, read_weights_csv};
use lagrank::ingest::{align_panel, load_incidence, load_locations, AlignOptions, LocationSeries};
use lagrank::predictor::{sweep_n_pic, ForecastConfig};
use lagrank::preprocess::{zscore_split_normalize, FeatureMatrix};
use lagrank::windowing::{fixed_windows, WindowingConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let out = f();
    let took = t0.elapsed();
    let in_time = budget.is_none_or(|b| took < b);
    let pass = out.pass && in_time;
    let timing = match budget {
        Some(b) => format!("{took:.2?} / budget {b:.0?}"),
        None => format!("{took:.2?}"),
    };
    println!(
        "{} {name}: {} [{timing}]",
        if pass { "PASS" } else { "FAIL" },
        out.detail
    );
    pass
}

fn vitoria_ranking() -> Outcome {
    let weights = read_weights_csv(File::open(fixture("vitoria_weights.csv")).unwrap()).unwrap();
    let t0 = Instant::now();
    let ranking = rank_from_weights("3205309", weights);
    let took = t0.elapsed();
    let ids: Vec<&str> = ranking.ids().collect();
    let worst = ranking
        .rows
        .iter()
        .zip(VITORIA_GAMMA)
        .map(|(r, g)| (r.gamma - g).abs())
        .fold(0.0f64, f64::max);
    let gammas: Vec<String> = ranking.rows.iter().map(|r| format!("{:.3}", r.gamma)).collect();
    Outcome {
        pass: ids == VITORIA_ORDER && worst <= 0.002 && took < Duration::from_millis(1),
        detail: format!(
            "order {ids:?}, gamma [{}], max |error| {worst:.4} (tol 0.002), ranking took {took:.2?} (< 1 ms)",
            gammas.join(", ")
        ),
    }
}

fn windowing() -> Outcome {
    let fixed = fixed_windows(260, 5).unwrap();
    let lens: Vec<usize> = fixed.iter().map(|w| w.len()).collect();
    let incidence = load_incidence(fixture("seasonal_outbreaks.csv")).unwrap();
    let locations = load_locations(fixture("seasonal_locations.csv")).unwrap();
    let panel = align_panel(&incidence, None, &locations, &AlignOptions::default()).unwrap();
    let detected = WindowingConfig::detect(0.05, 10)
        .windows_for(&panel.series()[0].per_100k)
        .unwrap();
    let spans: Vec<String> = detected.iter().map(|w| format!("[{},{})", w.start, w.end)).collect();
    Outcome {
        pass: lens == [52; 5] && detected.len() == 4,
        detail: format!(
            "fixed T=260 M=5 -> lengths {lens:?}; detection (dmin 10, imin 0.05) -> {} windows {} (constructed 4)",
            detected.len(),
            spans.join(" ")
        ),
    }
}

fn correlation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut mismatched = 0;
    for _ in 0..200 {
        let inst = CorrelationInstance::random(&mut rng);
        let got = shifted_matrix(&inst.target, &inst.pic, &inst.window_set(), &inst.config()).unwrap();
        let want = brute_force_matrix(&inst.target, &inst.pic, &inst.windows, inst.theta_max as i64, 3);
        match matrix_gap(&got.rows, &want) {
            Some(g) => worst = worst.max(g),
            None => mismatched += 1,
        }
    }
    Outcome {
        pass: mismatched == 0 && worst < 1e-9,
        detail: format!("200 instances, max |diff| {worst:.2e} (tol 1e-9), undefined-cell mismatches {mismatched}"),
    }
}

fn causal_recovery() -> Outcome {
    let mut hits = 0;
    for seed in 0..100 {
        let s = synth_panel(&SynthConfig::star(seed)).unwrap();
        let report = rank_in_panel(
            &s.panel,
            &s.target_id,
            &WindowingConfig::default(),
            &CorrelationConfig::default(),
        )
        .unwrap();
        if s.sources.contains_key(&report.ranking.rows[0].pic_id) {
            hits += 1;
        }
    }
    Outcome {
        pass: hits >= 95,
        detail: format!("true source ranked first in {hits}/100 seeds (need >= 95)"),
    }
}

fn sweep_benefit() -> Outcome {
    let cfg = ForecastConfig::default();
    let mut wins = 0;
    let mut improvement = 0.0;
    for seed in 0..50 {
        let s = synth_panel(&SynthConfig::star(seed)).unwrap();
        let target = s.panel.get(&s.target_id).unwrap();
        let report = rank_in_panel(
            &s.panel,
            &s.target_id,
            &WindowingConfig::default(),
            &CorrelationConfig::default(),
        )
        .unwrap();
        let res = sweep_n_pic(&s.panel, target, &report.ranking, &cfg, 5).unwrap();
        let base = res.baseline_mae().unwrap();
        if res.optimal_mae < base {
            wins += 1;
        }
        improvement += res.improvement().unwrap();
    }
    Outcome {
        pass: wins * 10 >= 50 * 9,
        detail: format!(
            "optimal MAE below baseline in {wins}/50 seeds (need >= 45), mean relative decrease {:.1}%",
            100.0 * improvement / 50.0
        ),
    }
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let worst = (0..20).map(|_| gradient_check(&mut rng)).fold(0.0f64, f64::max);
    Outcome {
        pass: worst < 1e-5,
        detail: format!("20 random models, max relative error {worst:.2e} (tol 1e-5)"),
    }
}

fn normalization_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut changed = 0;
    let trials = 100;
    for _ in 0..trials {
        let rows = rng.random_range(20..120);
        let cols = rng.random_range(1..6);
        let data = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-10.0..10.0));
        let names: Vec<String> = (0..cols).map(|c| format!("c{c}")).collect();
        let x = FeatureMatrix::new(data, names, 0).unwrap();
        let split = split_panel(rows, [0.5, 0.3, 0.2], 1).unwrap();
        let before = zscore_split_normalize(&x, &split).unwrap().stats;
        let mut y = x.clone();
        for r in split.val.start..rows {
            for c in 0..cols {
                y.data[[r, c]] = rng.random_range(-1e6..1e6);
            }
        }
        let after = zscore_split_normalize(&y, &split).unwrap().stats;
        if before != after {
            changed += 1;
        }
    }
    Outcome {
        pass: changed == 0,
        detail: format!("{trials} random matrices with validation/test rows overwritten, statistics changed in {changed}"),
    }
}

fn affine_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let corr = CorrelationConfig::default();
    let windowing = WindowingConfig::Fixed { count: 6 };
    let mut bad = Vec::new();
    for seed in 0..50 {
        let mut cfg = SynthConfig::star(1000 + seed);
        cfg.length = 156;
        let s = synth_panel(&cfg).unwrap();
        let target = s.panel.get(&s.target_id).unwrap();
        let pics: Vec<LocationSeries> =
            s.panel.series().iter().filter(|x| x.id() != s.target_id).cloned().collect();
        let windows = windowing.windows_for(&target.per_100k).unwrap();
        let mut ok = true;
        for p in &pics {
            let q = affine(p, rng.random_range(0.1..20.0), rng.random_range(-50.0..50.0));
            let a = reduce(&shifted_matrix(&target.per_100k, &p.per_100k, &windows, &corr).unwrap(), 1);
            let b = reduce(&shifted_matrix(&target.per_100k, &q.per_100k, &windows, &corr).unwrap(), 1);
            for (wa, wb) in a.windows.iter().zip(&b.windows) {
                let same_s = match (wa.strength, wb.strength) {
                    (Some(x), Some(y)) => (x - y).abs() < 1e-9,
                    (x, y) => x == y,
                };
                ok &= wa.peak == wb.peak && same_s;
            }
        }
        let (a, b) = (rng.random_range(0.1..20.0), rng.random_range(0.0..50.0));
        let moved: Vec<LocationSeries> = pics.iter().map(|p| affine(p, a, b)).collect();
        let r0 = rank_pics(target, &pics.iter().collect::<Vec<_>>(), &windowing, &corr).unwrap();
        let r1 = rank_pics(target, &moved.iter().collect::<Vec<_>>(), &windowing, &corr).unwrap();
        ok &= r0.ranking.ids().eq(r1.ranking.ids());
        if !ok {
            bad.push(seed);
        }
    }
    Outcome {
        pass: bad.is_empty(),
        detail: format!("50 instances, peak/strength/ranking changed in {} {bad:?}", bad.len()),
    }
}

fn main() {
    let results = [
        check("vitoria_predictor_strength", None, vitoria_ranking),
        check("windowing_fixed_and_detected", None, windowing),
        check("correlation_oracle_equivalence", Some(Duration::from_secs(5)), correlation_oracle),
        check("causal_recovery", Some(Duration::from_secs(60)), causal_recovery),
        check("sweep_benefit", Some(Duration::from_secs(300)), sweep_benefit),
        check("gradient_check", None, gradients),
        check("normalization_train_only", None, normalization_contract),
        check("affine_lag_invariance", None, affine_invariance),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
