//! Case and field-data ingestion, scenario assembly, synthetic scenarios.
//!
//! File contracts (headers are matched exactly):
//!
//! * cases: `date,age,gender,region`, ISO dates, integer age in `[0, 120]`,
//!   gender `male`/`female`. `date` is the day the case enters the simulation.
//! * field: `date,bed,icu,vent`, one row per date, no gaps.
//!
//! Lines starting with `#` are comments.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::ParamVector;
use crate::sim::{ArrivalSchedule, DayCounts, Gender, OccupancyTrace, Patient, Simulator};
use crate::stochastic::{self, Purpose};

pub const CASE_HEADER: [&str; 4] = ["date", "age", "gender", "region"];
pub const FIELD_HEADER: [&str; 4] = ["date", "bed", "icu", "vent"];
pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// One problem found while reading a file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: Option<u64>,
    pub field: Option<String>,
    pub reason: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        if let Some(field) = &self.field {
            write!(f, "{field}: ")?;
        }
        f.write_str(&self.reason)
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing or wrong header: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("{} bad row(s): {}", .0.len(), join(.0))]
    Rows(Vec<Diagnostic>),
    #[error("gap at {0}")]
    Gap(NaiveDate),
    #[error("duplicate date {0}")]
    DuplicateDate(NaiveDate),
    #[error("empty region selection: {0}")]
    EmptyRegion(String),
    #[error("inverted window: {0}")]
    InvertedWindow(String),
    #[error("field data does not cover {0}")]
    Coverage(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("manifest: {0}")]
    Manifest(String),
}

fn join(d: &[Diagnostic]) -> String {
    d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ")
}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        DataError::Csv(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    /// Any bad row fails the whole file.
    #[default]
    Strict,
    /// Bad rows are skipped and reported as warnings.
    Lenient,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub warnings: Vec<Diagnostic>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub date: NaiveDate,
    pub age: u32,
    pub gender: Gender,
    pub region: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldRecord {
    pub date: NaiveDate,
    pub bed: u32,
    pub icu: u32,
    pub vent: u32,
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(input)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str; 4]) -> Result<(), DataError> {
    let found = rdr.headers()?.clone();
    if found.iter().ne(expected.iter().copied()) {
        return Err(DataError::Header {
            expected: expected.join(","),
            found: found.iter().collect::<Vec<_>>().join(","),
        });
    }
    Ok(())
}

fn row_err(line: u64, field: &str, reason: impl Into<String>) -> Diagnostic {
    Diagnostic {
        line: Some(line),
        field: Some(field.to_string()),
        reason: reason.into(),
    }
}

fn parse_date(s: &str, line: u64) -> Result<NaiveDate, Diagnostic> {
    NaiveDate::parse_from_str(s, DATE_FORMAT).map_err(|_| row_err(line, "date", "unparsable date"))
}

fn parse_count(s: &str, line: u64, field: &str) -> Result<u32, Diagnostic> {
    match s.parse::<i64>() {
        Ok(v) if v < 0 => Err(row_err(line, field, "negative count")),
        Ok(v) if v > u32::MAX as i64 => Err(row_err(line, field, "count too large")),
        Ok(v) => Ok(v as u32),
        Err(_) => Err(row_err(line, field, "not an integer")),
    }
}

fn collect<T>(rows: Vec<Result<T, Diagnostic>>, mode: ParseMode) -> Result<Parsed<T>, DataError> {
    let mut records = Vec::new();
    let mut bad = Vec::new();
    for r in rows {
        match r {
            Ok(v) => records.push(v),
            Err(d) => bad.push(d),
        }
    }
    match mode {
        ParseMode::Strict if !bad.is_empty() => Err(DataError::Rows(bad)),
        _ => Ok(Parsed { records, warnings: bad }),
    }
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

pub fn parse_cases<R: Read>(input: R, mode: ParseMode) -> Result<Parsed<CaseRecord>, DataError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &CASE_HEADER)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        rows.push(parse_case_row(&rec, line));
    }
    collect(rows, mode)
}

fn parse_case_row(rec: &csv::StringRecord, line: u64) -> Result<CaseRecord, Diagnostic> {
    if rec.len() != 4 {
        return Err(Diagnostic {
            line: Some(line),
            field: None,
            reason: format!("expected 4 fields, found {}", rec.len()),
        });
    }
    let date = parse_date(&rec[0], line)?;
    let age = match rec[1].parse::<i64>() {
        Ok(a) if (0..=120).contains(&a) => a as u32,
        Ok(_) => return Err(row_err(line, "age", "age out of range")),
        Err(_) => return Err(row_err(line, "age", "age is not an integer")),
    };
    let gender = match rec[2].to_ascii_lowercase().as_str() {
        "male" => Gender::Male,
        "female" => Gender::Female,
        other => return Err(row_err(line, "gender", format!("unknown gender `{other}`"))),
    };
    if rec[3].is_empty() {
        return Err(row_err(line, "region", "empty region"));
    }
    Ok(CaseRecord {
        date,
        age,
        gender,
        region: rec[3].to_string(),
    })
}

/// Parses field data into a contiguous, date-sorted series.
pub fn parse_field<R: Read>(input: R, mode: ParseMode) -> Result<Parsed<FieldRecord>, DataError> {
    let mut rdr = reader(input);
    check_header(&mut rdr, &FIELD_HEADER)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        rows.push(parse_field_row(&rec, line));
    }
    let mut parsed = collect(rows, mode)?;
    let sorted = parsed.records.windows(2).all(|w| w[0].date <= w[1].date);
    if !sorted {
        parsed.records.sort_by_key(|r| r.date);
        parsed.warnings.push(Diagnostic {
            line: None,
            field: Some("date".into()),
            reason: "input not sorted by date; sorted".into(),
        });
    }
    for w in parsed.records.windows(2) {
        if w[0].date == w[1].date {
            return Err(DataError::DuplicateDate(w[0].date));
        }
        let next = w[0].date.succ_opt().expect("date in range");
        if next != w[1].date {
            return Err(DataError::Gap(next));
        }
    }
    Ok(parsed)
}

fn parse_field_row(rec: &csv::StringRecord, line: u64) -> Result<FieldRecord, Diagnostic> {
    if rec.len() != 4 {
        return Err(Diagnostic {
            line: Some(line),
            field: None,
            reason: format!("expected 4 fields, found {}", rec.len()),
        });
    }
    Ok(FieldRecord {
        date: parse_date(&rec[0], line)?,
        bed: parse_count(&rec[1], line, "bed")?,
        icu: parse_count(&rec[2], line, "icu")?,
        vent: parse_count(&rec[3], line, "vent")?,
    })
}

pub fn write_cases<W: Write>(out: W, cases: &[CaseRecord]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CASE_HEADER)?;
    for c in cases {
        let g = match c.gender {
            Gender::Male => "male",
            Gender::Female => "female",
        };
        w.write_record([
            c.date.format(DATE_FORMAT).to_string(),
            c.age.to_string(),
            g.to_string(),
            c.region.clone(),
        ])?;
    }
    w.flush().map_err(|e| DataError::Csv(e.to_string()))
}

pub fn write_field<W: Write>(out: W, field: &[FieldRecord]) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(FIELD_HEADER)?;
    for r in field {
        w.write_record([
            r.date.format(DATE_FORMAT).to_string(),
            r.bed.to_string(),
            r.icu.to_string(),
            r.vent.to_string(),
        ])?;
    }
    w.flush().map_err(|e| DataError::Csv(e.to_string()))
}

/// Observed occupancy indexed by simulation day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSeries {
    pub first_day: usize,
    pub days: Vec<DayCounts>,
}

impl FieldSeries {
    pub fn get(&self, t: usize) -> Option<DayCounts> {
        t.checked_sub(self.first_day).and_then(|i| self.days.get(i).copied())
    }

    /// Last covered day, inclusive.
    pub fn last_day(&self) -> Option<usize> {
        (!self.days.is_empty()).then(|| self.first_day + self.days.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    /// Copies `trace` over `[t0, t1]`.
    pub fn from_trace(trace: &OccupancyTrace, t0: usize, t1: usize) -> Self {
        FieldSeries {
            first_day: t0,
            days: trace.days[t0..=t1].to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub start_date: NaiveDate,
    pub region: String,
    pub arrivals: ArrivalSchedule,
    pub field: FieldSeries,
    pub warmup_days: usize,
    /// Inclusive day indices `[start, end]` scored against field data.
    pub eval_window: (usize, usize),
    /// Ground truth when the scenario was generated synthetically.
    pub truth: Option<ParamVector>,
}

impl Scenario {
    pub fn eval_len(&self) -> usize {
        self.eval_window.1 - self.eval_window.0 + 1
    }

    pub fn date_of(&self, day: usize) -> NaiveDate {
        self.start_date + chrono::Days::new(day as u64)
    }

    pub fn case_records(&self) -> Vec<CaseRecord> {
        self.arrivals
            .patients()
            .iter()
            .map(|p| CaseRecord {
                date: self.date_of(p.infection_day),
                age: p.age.round() as u32,
                gender: p.gender,
                region: self.region.clone(),
            })
            .collect()
    }

    pub fn field_records(&self) -> Vec<FieldRecord> {
        self.field
            .days
            .iter()
            .enumerate()
            .map(|(i, d)| FieldRecord {
                date: self.date_of(self.field.first_day + i),
                bed: d.bed,
                icu: d.icu,
                vent: d.vent,
            })
            .collect()
    }
}

fn days_between(a: NaiveDate, b: NaiveDate) -> i64 {
    (b - a).num_days()
}

/// Case window `[case_start, case_end]` and evaluation window
/// `[field_start, field_end]`, all inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Windows {
    pub case_start: NaiveDate,
    pub case_end: NaiveDate,
    pub field_start: NaiveDate,
    pub field_end: NaiveDate,
}

pub fn build_scenario(
    cases: &[CaseRecord],
    field: &[FieldRecord],
    region: &str,
    w: Windows,
) -> Result<Scenario, DataError> {
    if w.case_end < w.case_start {
        return Err(DataError::InvertedWindow(format!(
            "case window {} > {}",
            w.case_start, w.case_end
        )));
    }
    if w.field_end < w.field_start {
        return Err(DataError::InvertedWindow(format!(
            "field window {} > {}",
            w.field_start, w.field_end
        )));
    }
    if w.field_start < w.case_start {
        return Err(DataError::InvertedWindow(format!(
            "field window starts {} before case window {}",
            w.field_start, w.case_start
        )));
    }
    let warmup_days = days_between(w.case_start, w.field_start) as usize;
    let last = w.case_end.max(w.field_end);
    let horizon = days_between(w.case_start, last) as usize + 1;

    let patients: Vec<Patient> = cases
        .iter()
        .filter(|c| c.region == region && c.date >= w.case_start && c.date <= w.case_end)
        .enumerate()
        .map(|(i, c)| Patient {
            id: i as u64,
            infection_day: days_between(w.case_start, c.date) as usize,
            age: c.age as f64,
            gender: c.gender,
        })
        .collect();
    if patients.is_empty() {
        return Err(DataError::EmptyRegion(format!(
            "no cases for region `{region}` between {} and {}",
            w.case_start, w.case_end
        )));
    }
    let arrivals = ArrivalSchedule::new(horizon, patients).map_err(|e| DataError::Manifest(e.to_string()))?;

    let by_date: BTreeMap<NaiveDate, &FieldRecord> = field.iter().map(|r| (r.date, r)).collect();
    let mut days = Vec::new();
    let mut d = w.field_start;
    while d <= w.field_end {
        let r = by_date
            .get(&d)
            .ok_or_else(|| DataError::Coverage(d.format(DATE_FORMAT).to_string()))?;
        days.push(DayCounts {
            bed: r.bed,
            icu: r.icu,
            vent: r.vent,
        });
        d = d.succ_opt().expect("date in range");
    }
    let eval_window = (warmup_days, days_between(w.case_start, w.field_end) as usize);
    Ok(Scenario {
        start_date: w.case_start,
        region: region.to_string(),
        arrivals,
        field: FieldSeries {
            first_day: warmup_days,
            days,
        },
        warmup_days,
        eval_window,
        truth: None,
    })
}

/// How synthetic arrivals are drawn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrivalSpec {
    /// Cases per day; its length is the simulated horizon.
    pub daily: Vec<usize>,
    pub age_min: u32,
    pub age_max: u32,
    pub male_fraction: f64,
    pub warmup_days: usize,
    pub start_date: NaiveDate,
    pub region: String,
}

impl ArrivalSpec {
    pub fn constant(per_day: usize, days: usize, warmup_days: usize) -> Self {
        ArrivalSpec {
            daily: vec![per_day; days],
            ..Default::default()
        }
        .with_warmup(warmup_days)
    }

    pub fn with_warmup(mut self, warmup_days: usize) -> Self {
        self.warmup_days = warmup_days;
        self
    }
}

impl Default for ArrivalSpec {
    fn default() -> Self {
        ArrivalSpec {
            daily: vec![50; 90],
            age_min: 20,
            age_max: 90,
            male_fraction: 0.5,
            warmup_days: 28,
            start_date: NaiveDate::from_ymd_opt(2020, 10, 12).expect("valid date"),
            region: "synthetic".into(),
        }
    }
}

/// A scenario whose field data is one simulation run under `truth`.
pub fn generate_synthetic(
    sim: &Simulator,
    truth: &ParamVector,
    spec: &ArrivalSpec,
    seed: u64,
) -> crate::Result<Scenario> {
    let horizon = spec.daily.len();
    if spec.warmup_days >= horizon {
        return Err(crate::Error::Config(format!(
            "warm-up of {} days leaves no evaluation window in a {horizon}-day horizon",
            spec.warmup_days
        )));
    }
    if spec.age_min > spec.age_max || spec.age_max > 120 {
        return Err(crate::Error::Config("invalid synthetic age range".into()));
    }
    let mut rng = stochastic::stream(seed, Purpose::Arrivals, 0, 0);
    let mut patients = Vec::new();
    for (day, &n) in spec.daily.iter().enumerate() {
        for _ in 0..n {
            let age = rng.random_range(spec.age_min..=spec.age_max) as f64;
            let gender = if rng.random::<f64>() < spec.male_fraction {
                Gender::Male
            } else {
                Gender::Female
            };
            patients.push(Patient {
                id: patients.len() as u64,
                infection_day: day,
                age,
                gender,
            });
        }
    }
    let arrivals = ArrivalSchedule::new(horizon, patients)?;
    let truth_seed = stochastic::child_seed(seed, Purpose::Replicate, u64::MAX, 0);
    let trace = sim.simulate(&arrivals, truth, truth_seed)?;
    let eval_window = (spec.warmup_days, horizon - 1);
    Ok(Scenario {
        start_date: spec.start_date,
        region: spec.region.clone(),
        field: FieldSeries::from_trace(&trace, eval_window.0, eval_window.1),
        arrivals,
        warmup_days: spec.warmup_days,
        eval_window,
        truth: Some(truth.clone()),
    })
}

/// Scenario manifest: where the data lives and which windows to use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub cases: PathBuf,
    pub field: PathBuf,
    pub region: String,
    pub case_start: NaiveDate,
    pub case_end: NaiveDate,
    pub field_start: NaiveDate,
    pub field_end: NaiveDate,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub mode: ParseMode,
}

/// Result of loading a manifest: the scenario plus non-fatal diagnostics.
#[derive(Clone, Debug)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub manifest: ScenarioManifest,
    pub warnings: Vec<Diagnostic>,
}

impl ScenarioManifest {
    pub fn windows(&self) -> Windows {
        Windows {
            case_start: self.case_start,
            case_end: self.case_end,
            field_start: self.field_start,
            field_end: self.field_end,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, DataError> {
        toml::from_str(text).map_err(|e| DataError::Manifest(e.to_string()))
    }

    /// Reads the manifest at `path`; data paths resolve relative to it.
    pub fn load(path: &Path) -> Result<LoadedScenario, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::File {
            path: path.to_path_buf(),
            source,
        })?;
        let manifest = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        manifest.load_from(base)
    }

    pub fn load_from(&self, base: &Path) -> Result<LoadedScenario, DataError> {
        let open = |p: &Path| {
            let full = base.join(p);
            std::fs::File::open(&full).map_err(|source| DataError::File { path: full, source })
        };
        let cases = parse_cases(open(&self.cases)?, self.mode)?;
        let field = parse_field(open(&self.field)?, self.mode)?;
        let scenario = build_scenario(&cases.records, &field.records, &self.region, self.windows())?;
        let mut warnings = cases.warnings;
        warnings.extend(field.warnings);
        Ok(LoadedScenario {
            scenario,
            manifest: self.clone(),
            warnings,
        })
    }
}
