//! Reading and writing the delimited-text formats.
//!
//! All files are comma-separated UTF-8 with a header row. Lines starting
//! with `#` are comments; in harmonics files a comment of the form
//! `# key = value` is kept as metadata (`mean_m`, `trend_m_per_hour`, and
//! solver diagnostics).

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, NaiveDateTime, SecondsFormat, Utc};

use crate::constituents::ConstituentCatalog;
use crate::error::{Error, Result};
use crate::format::format_sig;
use crate::series::{HarmonicSolution, WaterLevelSeries};

/// A parsed value together with the rows that were skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

impl<T> Loaded<T> {
    fn new(value: T, warnings: Vec<String>) -> Self {
        for w in &warnings {
            log::warn!("{w}");
        }
        Self { value, warnings }
    }
}

struct Row<'a> {
    line: u64,
    fields: Vec<&'a str>,
}

/// Splits text into comment lines and data rows, with 1-based line numbers.
fn rows(text: &str) -> (Vec<(u64, &str)>, Vec<Row<'_>>) {
    let mut comments = Vec::new();
    let mut data = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k as u64 + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            comments.push((line, comment.trim()));
            continue;
        }
        data.push(Row {
            line,
            fields: trimmed.split(',').map(str::trim).collect(),
        });
    }
    (comments, data)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn parse_error(origin: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: PathBuf::from(origin),
        line,
        message: message.into(),
    }
}

fn header<'a>(data: &mut std::vec::IntoIter<Row<'a>>, origin: &str, expected: &[&str]) -> Result<Row<'a>> {
    let head = data
        .next()
        .ok_or_else(|| parse_error(origin, 0, "missing header row"))?;
    let lower: Vec<String> = head.fields.iter().map(|f| f.to_ascii_lowercase()).collect();
    let matches = lower.len() >= expected.len() && expected.iter().zip(&lower).all(|(want, got)| got.starts_with(want));
    if !matches {
        return Err(parse_error(
            origin,
            head.line,
            format!(
                "unrecognized header `{}`, expected columns starting with {:?}",
                head.fields.join(","),
                expected
            ),
        ));
    }
    Ok(head)
}

/// Parses an ISO-8601 timestamp; values without an offset are taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ]
    .iter()
    .find_map(|fmt| NaiveDateTime::parse_from_str(s.trim_end_matches('Z'), fmt).ok())
    .map(|t| t.and_utc())
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

fn hours_between(epoch: DateTime<Utc>, t: DateTime<Utc>) -> f64 {
    let d = t - epoch;
    match d.num_nanoseconds() {
        Some(ns) => ns as f64 / 3.6e12,
        None => d.num_milliseconds() as f64 / 3.6e6,
    }
}

fn offset_by_hours(epoch: DateTime<Utc>, hours: f64) -> DateTime<Utc> {
    epoch + Duration::milliseconds((hours * 3.6e6).round() as i64)
}

fn parse_height(field: Option<&str>) -> Option<f64> {
    field
        .filter(|f| !f.is_empty())
        .and_then(|f| f.parse::<f64>().ok())
        .filter(|h| h.is_finite())
}

pub fn load_water_levels(path: impl AsRef<Path>) -> Result<Loaded<WaterLevelSeries>> {
    let path = path.as_ref();
    parse_water_levels(&read(path)?, &path.display().to_string())
}

/// Parses `timestamp, height_m` rows.
///
/// Rows with a missing or non-finite height are dropped with a warning.
/// Rows are sorted by time; for repeated timestamps the first row in file
/// order is kept. Times are hours since the earliest valid timestamp.
pub fn parse_water_levels(text: &str, origin: &str) -> Result<Loaded<WaterLevelSeries>> {
    let (_, data) = rows(text);
    let mut data = data.into_iter();
    header(&mut data, origin, &["time", "height"])?;
    let mut warnings = Vec::new();
    let mut samples: Vec<(DateTime<Utc>, f64)> = Vec::new();
    for row in data {
        if row.fields.len() != 2 {
            return Err(parse_error(
                origin,
                row.line,
                format!("expected 2 columns, found {}", row.fields.len()),
            ));
        }
        let t = parse_timestamp(row.fields[0])
            .ok_or_else(|| parse_error(origin, row.line, format!("invalid timestamp `{}`", row.fields[0])))?;
        match parse_height(row.fields.get(1).copied()) {
            Some(h) => samples.push((t, h)),
            None => warnings.push(format!(
                "{origin}, line {}: missing or invalid height, row dropped",
                row.line
            )),
        }
    }
    let series = series_from_samples(samples, origin, &mut warnings)?;
    Ok(Loaded::new(series, warnings))
}

fn series_from_samples(
    mut samples: Vec<(DateTime<Utc>, f64)>,
    origin: &str,
    warnings: &mut Vec<String>,
) -> Result<WaterLevelSeries> {
    if samples.is_empty() {
        return Err(Error::InsufficientData(format!("{origin}: no valid rows")));
    }
    samples.sort_by_key(|s| s.0);
    let before = samples.len();
    samples.dedup_by_key(|s| s.0);
    if samples.len() < before {
        warnings.push(format!(
            "{origin}: {} duplicate timestamp(s) dropped",
            before - samples.len()
        ));
    }
    let epoch = samples[0].0;
    let times = samples.iter().map(|s| hours_between(epoch, s.0)).collect();
    let heights = samples.iter().map(|s| s.1).collect();
    WaterLevelSeries::new(epoch, times, heights)
}

pub fn write_water_levels(series: &WaterLevelSeries) -> String {
    let mut out = String::from("timestamp,height_m\n");
    for (t, h) in series.times().iter().zip(series.heights()) {
        out.push_str(&format_timestamp(offset_by_hours(series.epoch(), *t)));
        out.push(',');
        out.push_str(&format_sig(*h));
        out.push('\n');
    }
    out
}

/// Harmonics aligned to a catalog, plus file metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicsTable {
    pub solution: HarmonicSolution,
    /// Which catalog constituents appeared in the file.
    pub present: Vec<bool>,
    pub metadata: BTreeMap<String, String>,
}

pub fn load_harmonics(path: impl AsRef<Path>, catalog: &ConstituentCatalog) -> Result<Loaded<HarmonicsTable>> {
    let path = path.as_ref();
    parse_harmonics(&read(path)?, &path.display().to_string(), catalog)
}

/// Parses `constituent_name, amplitude_m[, phase_deg]` rows.
///
/// Names not in the catalog are rejected; catalog constituents missing
/// from the file get amplitude 0 and phase 0 with a warning.
pub fn parse_harmonics(text: &str, origin: &str, catalog: &ConstituentCatalog) -> Result<Loaded<HarmonicsTable>> {
    let (comments, data) = rows(text);
    let mut metadata = BTreeMap::new();
    for (_, c) in comments {
        if let Some((k, v)) = c.split_once('=') {
            metadata.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let meta_number = |key: &str| -> Result<f64> {
        metadata.get(key).map_or(Ok(0.0), |v| {
            v.parse::<f64>()
                .map_err(|_| parse_error(origin, 0, format!("invalid `{key}` value `{v}`")))
        })
    };
    let mean = meta_number("mean_m")?;
    let trend = meta_number("trend_m_per_hour")?;

    let mut data = data.into_iter();
    let head = header(&mut data, origin, &["constituent", "amplitude"])?;
    let has_phase = head.fields.len() >= 3;
    let n = catalog.len();
    let mut amplitudes = vec![0.0; n];
    let mut phases = vec![0.0; n];
    let mut present = vec![false; n];
    let mut seen = HashSet::new();
    for row in data {
        if row.fields.len() < 2 || row.fields.len() > 3 {
            return Err(parse_error(
                origin,
                row.line,
                format!("expected 2 or 3 columns, found {}", row.fields.len()),
            ));
        }
        let name = row.fields[0];
        let k = catalog
            .index_of(name)
            .ok_or_else(|| parse_error(origin, row.line, format!("unknown constituent `{name}`")))?;
        if !seen.insert(name) {
            return Err(parse_error(
                origin,
                row.line,
                format!("constituent `{name}` listed twice"),
            ));
        }
        let amplitude: f64 = row.fields[1]
            .parse()
            .ok()
            .filter(|a: &f64| a.is_finite() && *a >= 0.0)
            .ok_or_else(|| parse_error(origin, row.line, format!("invalid amplitude `{}`", row.fields[1])))?;
        let phase_deg: f64 = match row.fields.get(2) {
            Some(p) if has_phase && !p.is_empty() => p
                .parse()
                .ok()
                .filter(|p: &f64| p.is_finite())
                .ok_or_else(|| parse_error(origin, row.line, format!("invalid phase `{p}`")))?,
            _ => 0.0,
        };
        amplitudes[k] = amplitude;
        phases[k] = phase_deg.to_radians();
        present[k] = true;
    }
    let missing: Vec<&str> = catalog
        .iter()
        .zip(&present)
        .filter(|(_, p)| !**p)
        .map(|(c, _)| c.name.as_str())
        .collect();
    let mut warnings = Vec::new();
    if !missing.is_empty() {
        warnings.push(format!(
            "{origin}: {} constituent(s) absent, set to zero: {}",
            missing.len(),
            missing.join(" ")
        ));
    }
    let solution = HarmonicSolution::new(mean, trend, amplitudes, phases)?;
    Ok(Loaded::new(
        HarmonicsTable {
            solution,
            present,
            metadata,
        },
        warnings,
    ))
}

/// Serializes a solution: metadata comment lines, then one row per constituent.
pub fn write_solution(
    solution: &HarmonicSolution,
    catalog: &ConstituentCatalog,
    metadata: &[(String, String)],
) -> Result<String> {
    solution.check_catalog(catalog)?;
    let mut out = String::new();
    out.push_str(&format!("# mean_m = {}\n", format_sig(solution.mean)));
    out.push_str(&format!("# trend_m_per_hour = {}\n", format_sig(solution.trend)));
    for (k, v) in metadata {
        out.push_str(&format!("# {k} = {v}\n"));
    }
    out.push_str("constituent_name,amplitude_m,phase_deg\n");
    for ((c, a), p) in catalog.iter().zip(&solution.amplitudes).zip(&solution.phases) {
        out.push_str(&format!(
            "{},{},{}\n",
            c.name,
            format_sig(*a),
            format_sig(p.to_degrees())
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AltimetrySample {
    pub cycle: u32,
    /// Hours since the series epoch.
    pub time: f64,
    /// Corrected sea-surface height in meters.
    pub ssh: f64,
    pub good: bool,
}

/// Along-track samples of one satellite pass over many cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct AltimetrySeries {
    pub pass_id: String,
    pub epoch: DateTime<Utc>,
    /// Sorted by time.
    pub samples: Vec<AltimetrySample>,
}

/// How the samples of one cycle become a single height.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CycleReduction {
    #[default]
    Median,
    Mean,
    /// The sample closest in time to the cycle's mean time.
    Nearest,
}

pub fn load_altimetry(path: impl AsRef<Path>) -> Result<Loaded<AltimetrySeries>> {
    let path = path.as_ref();
    let pass_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_altimetry(&read(path)?, &path.display().to_string(), &pass_id)
}

/// Parses `cycle, timestamp, ssh_m, flag` rows; flag 0 marks a good sample.
pub fn parse_altimetry(text: &str, origin: &str, pass_id: &str) -> Result<Loaded<AltimetrySeries>> {
    let (_, data) = rows(text);
    let mut data = data.into_iter();
    header(&mut data, origin, &["cycle", "time", "ssh", "flag"])?;
    let mut warnings = Vec::new();
    let mut raw: Vec<(u32, DateTime<Utc>, f64, bool)> = Vec::new();
    for row in data {
        if row.fields.len() != 4 {
            return Err(parse_error(
                origin,
                row.line,
                format!("expected 4 columns, found {}", row.fields.len()),
            ));
        }
        let cycle: u32 = row.fields[0]
            .parse()
            .map_err(|_| parse_error(origin, row.line, format!("invalid cycle `{}`", row.fields[0])))?;
        let t = parse_timestamp(row.fields[1])
            .ok_or_else(|| parse_error(origin, row.line, format!("invalid timestamp `{}`", row.fields[1])))?;
        let flag: i64 = row.fields[3]
            .parse()
            .map_err(|_| parse_error(origin, row.line, format!("invalid flag `{}`", row.fields[3])))?;
        match parse_height(Some(row.fields[2])) {
            Some(h) => raw.push((cycle, t, h, flag == 0)),
            None => warnings.push(format!(
                "{origin}, line {}: missing or invalid ssh, row dropped",
                row.line
            )),
        }
    }
    if raw.is_empty() {
        return Err(Error::InsufficientData(format!("{origin}: no valid rows")));
    }
    raw.sort_by_key(|r| r.1);
    let epoch = raw[0].1;
    let samples = raw
        .into_iter()
        .map(|(cycle, t, ssh, good)| AltimetrySample {
            cycle,
            time: hours_between(epoch, t),
            ssh,
            good,
        })
        .collect();
    Ok(Loaded::new(
        AltimetrySeries {
            pass_id: pass_id.to_string(),
            epoch,
            samples,
        },
        warnings,
    ))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl AltimetrySeries {
    /// One sample per cycle from the good-flag samples of that cycle.
    ///
    /// Cycles without good samples are absent, leaving a gap. Each cycle's
    /// time is the mean time of its good samples.
    pub fn to_series(&self, reduction: CycleReduction) -> Result<WaterLevelSeries> {
        let mut cycles: BTreeMap<u32, Vec<&AltimetrySample>> = BTreeMap::new();
        for s in self.samples.iter().filter(|s| s.good) {
            cycles.entry(s.cycle).or_default().push(s);
        }
        let mut points: Vec<(f64, f64)> = cycles
            .values()
            .map(|group| {
                let time = group.iter().map(|s| s.time).sum::<f64>() / group.len() as f64;
                let height = match reduction {
                    CycleReduction::Median => median(&mut group.iter().map(|s| s.ssh).collect::<Vec<_>>()),
                    CycleReduction::Mean => group.iter().map(|s| s.ssh).sum::<f64>() / group.len() as f64,
                    CycleReduction::Nearest => {
                        group
                            .iter()
                            .min_by(|a, b| (a.time - time).abs().total_cmp(&(b.time - time).abs()))
                            .expect("non-empty cycle")
                            .ssh
                    }
                };
                (time, height)
            })
            .collect();
        if points.is_empty() {
            return Err(Error::InsufficientData(format!(
                "pass {}: no good samples",
                self.pass_id
            )));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        points.dedup_by(|b, a| b.0 <= a.0);
        WaterLevelSeries::new(
            self.epoch,
            points.iter().map(|p| p.0).collect(),
            points.iter().map(|p| p.1).collect(),
        )
    }
}
