//! CSV ingestion and alignment of incidence, location and daily weather data
//! onto a shared weekly time axis.
//!
//! All files are comma-separated UTF-8 with a header row and ISO-8601 dates:
//!
//! * incidence: `location_id,week_start,cases`
//! * locations: `location_id,name,latitude,longitude,population`
//! * weather: `location_id,date,t_avg,t_min,t_max,precip,rh,pressure,pwat`
//!   (blank cells are missing; an optional trailing `t_surface` column carries
//!   the reanalysis surface temperature)

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{weekly_resample, WeeklyWeather};

pub const PER_100K: f64 = 100_000.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidenceRow {
    pub location_id: String,
    pub week_start: NaiveDate,
    pub cases: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IncidenceTable {
    pub rows: Vec<IncidenceRow>,
}

impl IncidenceTable {
    pub fn new(rows: Vec<IncidenceRow>) -> Result<Self> {
        let mut seen = HashSet::new();
        for row in &rows {
            if !seen.insert((row.location_id.as_str(), row.week_start)) {
                return Err(Error::Validation(format!(
                    "duplicate incidence row for location {} week {}",
                    row.location_id, row.week_start
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Location ids in order of first appearance.
    pub fn location_ids(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.rows
            .iter()
            .filter(|r| seen.insert(r.location_id.as_str()))
            .map(|r| r.location_id.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationRecord {
    pub location_id: String,
    pub name: String,
    pub latitude: f64,
    pub longitude: f64,
    pub population: u64,
}

impl LocationRecord {
    pub fn validate(&self) -> Result<()> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(Error::Validation(format!(
                "location {}: latitude {} outside [-90, 90]",
                self.location_id, self.latitude
            )));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(Error::Validation(format!(
                "location {}: longitude {} outside [-180, 180]",
                self.location_id, self.longitude
            )));
        }
        if self.population == 0 {
            return Err(Error::Validation(format!(
                "location {}: population must be positive",
                self.location_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DailyWeatherRow {
    pub location_id: String,
    pub date: NaiveDate,
    pub t_avg: Option<f64>,
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    pub precip: Option<f64>,
    pub rh: Option<f64>,
    pub pressure: Option<f64>,
    pub pwat: Option<f64>,
    #[serde(default)]
    pub t_surface: Option<f64>,
}

impl DailyWeatherRow {
    fn validate(&self) -> std::result::Result<(), String> {
        if let (Some(lo), Some(avg), Some(hi)) = (self.t_min, self.t_avg, self.t_max) {
            if !(lo <= avg && avg <= hi) {
                return Err(format!(
                    "temperatures out of order (t_min {lo} <= t_avg {avg} <= t_max {hi} violated)"
                ));
            }
        }
        if let Some(p) = self.precip {
            if p < 0.0 {
                return Err(format!("negative precipitation {p}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DailyWeatherTable {
    pub rows: Vec<DailyWeatherRow>,
}

impl DailyWeatherTable {
    pub fn for_location<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a DailyWeatherRow> {
        self.rows.iter().filter(move |r| r.location_id == id)
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file))
}

fn require_columns(path: &Path, reader: &mut csv::Reader<File>, cols: &[&str]) -> Result<()> {
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 1, e.to_string()))?;
    let missing: Vec<&str> = cols
        .iter()
        .copied()
        .filter(|c| !headers.iter().any(|h| h == *c))
        .collect();
    if !missing.is_empty() {
        return Err(Error::parse(
            path,
            1,
            format!("header is missing column(s): {}", missing.join(", ")),
        ));
    }
    Ok(())
}

fn line_of(err: &csv::Error, fallback: u64) -> u64 {
    err.position().map(|p| p.line()).unwrap_or(fallback)
}

#[derive(Deserialize)]
struct RawIncidence {
    location_id: String,
    week_start: NaiveDate,
    cases: i64,
}

pub fn load_incidence(path: impl AsRef<Path>) -> Result<IncidenceTable> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    require_columns(path, &mut reader, &["location_id", "week_start", "cases"])?;

    let mut rows = Vec::new();
    let mut seen = HashMap::new();
    for (i, rec) in reader.deserialize::<RawIncidence>().enumerate() {
        let raw = rec.map_err(|e| Error::parse(path, line_of(&e, i as u64 + 2), e.to_string()))?;
        let line = i as u64 + 2;
        if raw.cases < 0 {
            return Err(Error::Validation(format!(
                "{}:{line}: negative case count {} for location {}",
                path.display(),
                raw.cases,
                raw.location_id
            )));
        }
        if let Some(first) = seen.insert((raw.location_id.clone(), raw.week_start), line) {
            return Err(Error::Validation(format!(
                "{}:{line}: duplicate (location {}, week {}) first seen on line {first}",
                path.display(),
                raw.location_id,
                raw.week_start
            )));
        }
        rows.push(IncidenceRow {
            location_id: raw.location_id,
            week_start: raw.week_start,
            cases: raw.cases as u64,
        });
    }
    Ok(IncidenceTable { rows })
}

pub fn write_incidence(table: &IncidenceTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Validation(format!("{other:?}")),
    })?;
    for row in &table.rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_locations(path: impl AsRef<Path>) -> Result<Vec<LocationRecord>> {
    let path = path.as_ref();
    let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.len() == 0 {
        log::warn!("{}: empty locations file", path.display());
        return Ok(Vec::new());
    }
    let mut reader = open_reader(path)?;
    require_columns(
        path,
        &mut reader,
        &["location_id", "name", "latitude", "longitude", "population"],
    )?;

    let mut out: Vec<LocationRecord> = Vec::new();
    let mut ids = HashSet::new();
    for (i, rec) in reader.deserialize::<LocationRecord>().enumerate() {
        let line = i as u64 + 2;
        let loc = rec.map_err(|e| Error::parse(path, line_of(&e, line), e.to_string()))?;
        loc.validate()
            .map_err(|e| Error::Validation(format!("{}:{line}: {e}", path.display())))?;
        if !ids.insert(loc.location_id.clone()) {
            return Err(Error::Validation(format!(
                "{}:{line}: duplicate location id {}",
                path.display(),
                loc.location_id
            )));
        }
        out.push(loc);
    }
    if out.is_empty() {
        log::warn!("{}: no location rows", path.display());
    }
    Ok(out)
}

pub fn write_locations(locations: &[LocationRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for loc in locations {
        w.serialize(loc)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_weather(path: impl AsRef<Path>) -> Result<DailyWeatherTable> {
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    require_columns(path, &mut reader, &["location_id", "date"])?;
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<DailyWeatherRow>().enumerate() {
        let line = i as u64 + 2;
        let row = rec.map_err(|e| Error::parse(path, line_of(&e, line), e.to_string()))?;
        row.validate()
            .map_err(|e| Error::Validation(format!("{}:{line}: {e}", path.display())))?;
        rows.push(row);
    }
    Ok(DailyWeatherTable { rows })
}

/// Region membership: `location_id,region_id`.
pub fn load_regions(path: impl AsRef<Path>) -> Result<BTreeMap<String, Vec<String>>> {
    #[derive(Deserialize)]
    struct Row {
        location_id: String,
        region_id: String,
    }
    let path = path.as_ref();
    let mut reader = open_reader(path)?;
    require_columns(path, &mut reader, &["location_id", "region_id"])?;
    let mut regions: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (i, rec) in reader.deserialize::<Row>().enumerate() {
        let row = rec.map_err(|e| Error::parse(path, line_of(&e, i as u64 + 2), e.to_string()))?;
        regions.entry(row.region_id).or_default().push(row.location_id);
    }
    Ok(regions)
}

/// Incidence and (optionally) weekly weather for one location on the panel's
/// time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationSeries {
    pub location: LocationRecord,
    /// Raw weekly case counts, zero where the week was not reported.
    pub cases: Vec<f64>,
    pub per_100k: Vec<f64>,
    /// `true` where the cell was filled rather than reported.
    pub mask: Vec<bool>,
    pub weather: Option<WeeklyWeather>,
}

impl LocationSeries {
    pub fn id(&self) -> &str {
        &self.location.location_id
    }

    pub fn has_data(&self) -> bool {
        self.mask.iter().any(|m| !m)
    }

    pub fn from_per_100k(location: LocationRecord, per_100k: Vec<f64>) -> Self {
        let pop = location.population as f64;
        let cases = per_100k.iter().map(|v| v * pop / PER_100K).collect();
        let mask = vec![false; per_100k.len()];
        Self {
            location,
            cases,
            per_100k,
            mask,
            weather: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AlignOptions {
    /// Inclusive clip range applied to the weekly axis.
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPanel {
    weeks: Vec<NaiveDate>,
    series: Vec<LocationSeries>,
}

impl AlignedPanel {
    pub fn new(weeks: Vec<NaiveDate>, series: Vec<LocationSeries>) -> Result<Self> {
        if weeks.windows(2).any(|w| w[1] - w[0] != Duration::days(7)) {
            return Err(Error::Validation(
                "panel weeks must be strictly increasing in 7-day steps".into(),
            ));
        }
        let t = weeks.len();
        let mut ids = HashSet::new();
        for s in &series {
            if s.cases.len() != t || s.per_100k.len() != t || s.mask.len() != t {
                return Err(Error::Validation(format!(
                    "series for {} does not have length {t}",
                    s.id()
                )));
            }
            if let Some(w) = &s.weather {
                if w.len() != t {
                    return Err(Error::Validation(format!(
                        "weather for {} does not have length {t}",
                        s.id()
                    )));
                }
            }
            if !ids.insert(s.id().to_owned()) {
                return Err(Error::Validation(format!("duplicate series {}", s.id())));
            }
        }
        Ok(Self { weeks, series })
    }

    pub fn weeks(&self) -> &[NaiveDate] {
        &self.weeks
    }

    pub fn len(&self) -> usize {
        self.weeks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weeks.is_empty()
    }

    pub fn series(&self) -> &[LocationSeries] {
        &self.series
    }

    pub fn get(&self, id: &str) -> Option<&LocationSeries> {
        self.series.iter().find(|s| s.id() == id)
    }
}

pub fn align_panel(
    incidence: &IncidenceTable,
    weather: Option<&DailyWeatherTable>,
    locations: &[LocationRecord],
    opts: &AlignOptions,
) -> Result<AlignedPanel> {
    let by_id: HashMap<&str, &LocationRecord> = locations
        .iter()
        .map(|l| (l.location_id.as_str(), l))
        .collect();

    let ids = incidence.location_ids();
    let unknown: Vec<&str> = ids
        .iter()
        .copied()
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Validation(format!(
            "incidence references locations missing from the locations file: {}",
            unknown.join(", ")
        )));
    }

    let in_range = |d: &NaiveDate| {
        opts.start.is_none_or(|s| *d >= s) && opts.end.is_none_or(|e| *d <= e)
    };

    let all_weeks: BTreeSet<NaiveDate> = incidence
        .rows
        .iter()
        .map(|r| r.week_start)
        .filter(in_range)
        .collect();
    let (Some(&first), Some(&last)) = (all_weeks.first(), all_weeks.last()) else {
        return Err(Error::Validation("no incidence weeks inside the configured range".into()));
    };
    if let Some(off) = all_weeks.iter().find(|w| (**w - first).num_days() % 7 != 0) {
        return Err(Error::Validation(format!(
            "week {off} is not on the 7-day grid starting {first}"
        )));
    }
    let t = ((last - first).num_days() / 7 + 1) as usize;
    let weeks: Vec<NaiveDate> = (0..t).map(|i| first + Duration::days(7 * i as i64)).collect();

    let mut cases: HashMap<&str, Vec<Option<u64>>> = HashMap::new();
    for row in incidence.rows.iter().filter(|r| in_range(&r.week_start)) {
        let idx = ((row.week_start - first).num_days() / 7) as usize;
        cases
            .entry(row.location_id.as_str())
            .or_insert_with(|| vec![None; t])[idx] = Some(row.cases);
    }

    if !cases.values().any(|c| c.iter().filter(|v| v.is_some()).count() >= 2) {
        return Err(Error::Validation(
            "at least one location needs two or more weeks of incidence".into(),
        ));
    }

    let mut series = Vec::with_capacity(ids.len());
    for id in ids {
        let Some(col) = cases.get(id) else {
            // every row of this location fell outside the clip range
            continue;
        };
        let loc = by_id[id];
        let pop = loc.population as f64;
        let mask: Vec<bool> = col.iter().map(Option::is_none).collect();
        let filled = mask.iter().filter(|m| **m).count();
        if filled > 0 {
            log::debug!("{id}: {filled} unreported week(s) filled with 0");
        }
        let raw: Vec<f64> = col.iter().map(|c| c.unwrap_or(0) as f64).collect();
        let per_100k = raw.iter().map(|c| c * PER_100K / pop).collect();
        let weekly_weather = weather.map(|w| {
            let daily: Vec<&DailyWeatherRow> = w.for_location(id).collect();
            weekly_resample(&daily, &weeks)
        });
        series.push(LocationSeries {
            location: loc.clone(),
            cases: raw,
            per_100k,
            mask,
            weather: weekly_weather,
        });
    }

    AlignedPanel::new(weeks, series)
}
