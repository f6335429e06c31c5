use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use lagrank::correlation::PhasedCorrelationMatrix;
use lagrank::dataset::{
    aggregate_region, export_dataset, last_input_block, DatasetManifest, MANIFEST_VERSION,
};
use lagrank::geo_metrics::{rank_from_weights, rank_pics, read_weights_csv, PredictorRanking, RankingReport};
use lagrank::ingest::{
    align_panel, load_incidence, load_locations, load_regions, load_weather, AlignOptions,
    AlignedPanel, LocationSeries,
};
use lagrank::predictor::{evaluate, fit, prepare, sweep_n_pic};
use lagrank::riskmap::{allocate_risk, riskmap_geojson};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

struct Inputs {
    panel: AlignedPanel,
    regions: BTreeMap<String, Vec<String>>,
}

/// Target series and the peripheral series ranked against it. A region
/// target is the pooled series of its members, which are its peripherals.
struct Resolved<'a> {
    target: LocationSeries,
    pics: Vec<&'a LocationSeries>,
}

fn required<'a>(p: &'a Option<std::path::PathBuf>, name: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| CliError::Usage(format!("config has no `{name}` path")))
}

fn parse_date(s: &Option<String>, name: &str) -> Result<Option<NaiveDate>> {
    s.as_deref()
        .map(|d| {
            NaiveDate::parse_from_str(d, "%Y-%m-%d")
                .map_err(|e| CliError::Usage(format!("`{name}` = {d:?}: {e}")))
        })
        .transpose()
}

fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    let incidence = load_incidence(required(&cfg.incidence, "incidence")?)?;
    let locations = load_locations(required(&cfg.locations, "locations")?)?;
    let weather = cfg.weather.as_deref().map(load_weather).transpose()?;
    let regions = match &cfg.regions {
        Some(p) => load_regions(p)?,
        None => BTreeMap::new(),
    };
    let opts = AlignOptions {
        start: parse_date(&cfg.start, "start")?,
        end: parse_date(&cfg.end, "end")?,
    };
    let panel = align_panel(&incidence, weather.as_ref(), &locations, &opts)?;
    log::info!("panel: {} locations x {} weeks", panel.series().len(), panel.len());
    Ok(Inputs { panel, regions })
}

fn resolve<'a>(inputs: &'a Inputs, target: &str) -> Result<Resolved<'a>> {
    let panel = &inputs.panel;
    if let Some(members) = inputs.regions.get(target) {
        let series = aggregate_region(panel, target, members)?;
        let pics = members
            .iter()
            .filter_map(|m| panel.get(m))
            .collect();
        log::info!("region {target}: {} members pooled", members.len());
        return Ok(Resolved { target: series, pics });
    }
    let series = panel
        .get(target)
        .ok_or_else(|| CliError::Usage(format!("target {target} is neither a location nor a region")))?;
    Ok(Resolved {
        target: series.clone(),
        pics: panel.series().iter().filter(|s| s.id() != target).collect(),
    })
}

fn rank(cfg: &RunConfig, r: &Resolved) -> Result<RankingReport> {
    let report = rank_pics(&r.target, &r.pics, &cfg.windowing, &cfg.correlation)?;
    log::info!(
        "{} window(s) ({:?}) over {} weeks",
        report.windows.len(),
        report.windows.method,
        r.target.per_100k.len()
    );
    for row in &report.ranking.rows {
        log::info!(
            "#{} {} gamma_c={:.4} gamma_p={:.4} gamma_d={:.4} gamma={:.4}",
            row.rank,
            row.pic_id,
            row.gamma_c,
            row.gamma_p,
            row.gamma_d,
            row.gamma
        );
    }
    Ok(report)
}

fn create_out(cfg: &RunConfig) -> Result<&Path> {
    let out = cfg.out_dir()?;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    Ok(out)
}

/// Writes the metadata comment line followed by whatever `body` produces.
fn write_file(path: &Path, cfg: &RunConfig, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = cfg.metadata_line().into_bytes();
    body(&mut buf)?;
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(&buf).map_err(|e| CliError::io(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(lagrank::Error::from)?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::Core(e.into())
}

fn write_matrix(path: &Path, cfg: &RunConfig, m: &PhasedCorrelationMatrix) -> Result<()> {
    write_file(path, cfg, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["m", "theta", "r", "valid"]).map_err(csv_error)?;
        for (win, theta, r) in m.cells() {
            w.write_record([
                win.to_string(),
                theta.to_string(),
                r.map(|v| format!("{v:.6}")).unwrap_or_default(),
                u8::from(r.is_some()).to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush().map_err(|e| CliError::Usage(e.to_string()))
    })
}

fn write_ranking(path: &Path, cfg: &RunConfig, ranking: &PredictorRanking) -> Result<()> {
    write_file(path, cfg, |buf| Ok(ranking.write_csv(buf)?))
}

pub fn cmd_rank(cfg: &RunConfig) -> Result<()> {
    let target = cfg.target()?;
    if cfg.incidence.is_none() {
        if let Some(path) = &cfg.weights {
            let f = File::open(path).map_err(|e| CliError::io(path, e))?;
            let ranking = rank_from_weights(target, read_weights_csv(f)?);
            let out = create_out(cfg)?;
            return write_ranking(&out.join("ranking.csv"), cfg, &ranking);
        }
    }
    let inputs = load_inputs(cfg)?;
    let resolved = resolve(&inputs, target)?;
    let report = rank(cfg, &resolved)?;
    let out = create_out(cfg)?;
    write_ranking(&out.join("ranking.csv"), cfg, &report.ranking)?;

    let weeks = inputs.panel.weeks();
    write_file(&out.join("windows.csv"), cfg, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["m", "start", "end", "first_week", "last_week"]).map_err(csv_error)?;
        for (m, win) in report.windows.iter().enumerate() {
            w.write_record([
                m.to_string(),
                win.start.to_string(),
                win.end.to_string(),
                weeks[win.start].to_string(),
                weeks[win.end - 1].to_string(),
            ])
            .map_err(csv_error)?;
        }
        w.flush().map_err(|e| CliError::Usage(e.to_string()))
    })?;

    if cfg.dump_matrices {
        let dir = out.join("matrices");
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        for d in &report.details {
            write_matrix(&dir.join(format!("{}.csv", d.pic_id)), cfg, &d.matrix)?;
        }
    }
    Ok(())
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let resolved = resolve(&inputs, cfg.target()?)?;
    let report = rank(cfg, &resolved)?;
    let res = sweep_n_pic(&inputs.panel, &resolved.target, &report.ranking, &cfg.forecast(), cfg.n_max)?;
    log::info!(
        "optimal n_pic {} with MAE {:.4} (baseline {:?})",
        res.optimal_n_pic,
        res.optimal_mae,
        res.baseline_mae()
    );

    let out = create_out(cfg)?;
    write_file(&out.join("sweep.csv"), cfg, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["n_pic", "mae_norm", "mae_raw", "optimal"]).map_err(csv_error)?;
        for p in &res.points {
            let (norm, raw) = match &p.evaluation {
                Some(e) => (format!("{:.6}", e.mae_norm), format!("{:.6}", e.mae_raw)),
                None => (String::new(), String::new()),
            };
            let opt = u8::from(p.n_pic == res.optimal_n_pic);
            w.write_record([p.n_pic.to_string(), norm, raw, opt.to_string()])
                .map_err(csv_error)?;
        }
        w.flush().map_err(|e| CliError::Usage(e.to_string()))
    })?;
    write_json(
        &out.join("sweep_summary.json"),
        &json!({
            "metadata": cfg.metadata_json(),
            "target": resolved.target.id(),
            "ranking": report.ranking.ids().collect::<Vec<_>>(),
            "optimal_n_pic": res.optimal_n_pic,
            "optimal_mae": res.optimal_mae,
            "baseline_mae": res.baseline_mae(),
            "improvement": res.improvement(),
            "points": res.points,
        }),
    )
}

pub fn cmd_predict(cfg: &RunConfig) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let resolved = resolve(&inputs, cfg.target()?)?;
    let report = rank(cfg, &resolved)?;
    let fcfg = cfg.forecast();
    let data = prepare(&inputs.panel, &resolved.target, &report.ranking, cfg.n_pic, &fcfg)?;
    let model = fit(&data, &fcfg.train)?;
    let eval = evaluate(&model, &data)?;
    log::info!(
        "test MAE {:.4} (normalized), {:.4} per 100k, best epoch {}",
        eval.mae_norm,
        eval.mae_raw,
        eval.best_epoch
    );

    let stats = &data.normalized.stats;
    let weeks = inputs.panel.weeks();
    let test_start = data.split.test.start;
    let raw_label = data.features.label_column();
    let out = create_out(cfg)?;
    write_file(&out.join("predictions.csv"), cfg, |buf| {
        let mut w = csv::Writer::from_writer(buf);
        let mut header = vec!["week_start".to_owned(), "actual".to_owned()];
        header.extend((1..=fcfg.t_out).map(|h| format!("predicted_step{h}")));
        w.write_record(&header).map_err(csv_error)?;
        for s in &data.test.samples {
            let row = test_start + s.input_end();
            let pred = model.predict(s.input.view())?;
            let mut rec = vec![weeks[row].to_string(), format!("{:.6}", raw_label[row])];
            rec.extend(pred.iter().map(|p| format!("{:.6}", stats.denormalize_label(*p))));
            w.write_record(&rec).map_err(csv_error)?;
        }
        w.flush().map_err(|e| CliError::Usage(e.to_string()))
    })?;
    model.save(&out.join("model.json"), Some(stats))?;
    write_json(
        &out.join("predict_summary.json"),
        &json!({
            "metadata": cfg.metadata_json(),
            "target": resolved.target.id(),
            "n_pic": cfg.n_pic,
            "features": model.features,
            "test_samples": data.test.len(),
            "evaluation": eval,
        }),
    )
}

pub fn cmd_riskmap(cfg: &RunConfig) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let resolved = resolve(&inputs, cfg.target()?)?;
    let report = rank(cfg, &resolved)?;
    let fcfg = cfg.forecast();
    let n_pic = cfg.n_pic.min(report.ranking.len());
    let data = prepare(&inputs.panel, &resolved.target, &report.ranking, n_pic, &fcfg)?;
    let model = fit(&data, &fcfg.train)?;
    let stats = &data.normalized.stats;
    let normalized = stats.apply(&data.features)?;
    let next = model.predict(last_input_block(&normalized, fcfg.t_in)?)?;
    let regional: f64 = next.iter().map(|v| stats.denormalize_label(*v)).sum();
    log::info!(
        "{}: predicted {regional:.3} cases per 100k over the next {} weeks",
        resolved.target.id(),
        fcfg.t_out
    );

    let shares = allocate_risk(&report.ranking, cfg.top_k, regional)?;
    let locations: Vec<_> = resolved.pics.iter().map(|s| s.location.clone()).collect();
    let mut meta = cfg.metadata_json();
    meta["target"] = json!(resolved.target.id());
    meta["n_pic"] = json!(n_pic);
    meta["horizon_weeks"] = json!(fcfg.t_out);
    meta["after_week"] = json!(inputs.panel.weeks().last().map(|d| d.to_string()));
    meta["windowing"] = json!(cfg.windowing);
    let geo = riskmap_geojson(&shares, &locations, regional, meta)?;
    let out = create_out(cfg)?;
    write_json(&out.join("riskmap.geojson"), &geo)
}

/// Writes the normalized feature matrix with the top `n_max` peripheral
/// columns; consumers select the first N of them.
pub fn cmd_export(cfg: &RunConfig) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let resolved = resolve(&inputs, cfg.target()?)?;
    let report = rank(cfg, &resolved)?;
    let fcfg = cfg.forecast();
    let data = prepare(&inputs.panel, &resolved.target, &report.ranking, cfg.n_max, &fcfg)?;
    let stats = data.normalized.stats.clone();
    let normalized = stats.apply(&data.features)?;
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        target: resolved.target.id().to_owned(),
        t_in: fcfg.t_in,
        t_out: fcfg.t_out,
        batch_size: fcfg.batch_size,
        split: data.split.clone(),
        columns: normalized.names.clone(),
        label: normalized.names[normalized.label].clone(),
        norm_stats: stats,
        n_pic: cfg.n_max,
        pic_ids: report.ranking.ids().take(cfg.n_max).map(str::to_owned).collect(),
        weather: fcfg.weather,
        windowing: Some(cfg.windowing),
        seed: cfg.seed,
    };
    let out = create_out(cfg)?;
    export_dataset(out, inputs.panel.weeks(), &normalized, &manifest)?;
    write_ranking(&out.join("ranking.csv"), cfg, &report.ranking)?;
    log::info!("exported dataset to {}", out.display());
    Ok(())
}
