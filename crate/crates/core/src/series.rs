//! Water-level records and the operations applied to them before fitting.
//!
//! Times are hours since [`WaterLevelSeries::epoch`]; heights are meters.

use chrono::{DateTime, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::constituents::{normalize_angle, ConstituentCatalog};
use crate::error::{Error, Result};

/// Time-ordered water-level samples.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterLevelSeries {
    epoch: DateTime<Utc>,
    times: Vec<f64>,
    heights: Vec<f64>,
}

impl WaterLevelSeries {
    pub fn new(epoch: DateTime<Utc>, times: Vec<f64>, heights: Vec<f64>) -> Result<Self> {
        if times.len() != heights.len() {
            return Err(Error::InvalidSeries(format!(
                "{} times but {} heights",
                times.len(),
                heights.len()
            )));
        }
        if times.is_empty() {
            return Err(Error::InvalidSeries("series is empty".into()));
        }
        if let Some(k) = times.iter().position(|t| !t.is_finite()) {
            return Err(Error::InvalidSeries(format!("time {k} is not finite")));
        }
        if let Some(k) = heights.iter().position(|h| !h.is_finite()) {
            return Err(Error::InvalidSeries(format!("height {k} is not finite")));
        }
        if let Some(k) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSeries(format!(
                "times not strictly increasing at index {}",
                k + 1
            )));
        }
        Ok(Self { epoch, times, heights })
    }

    /// Series with the Unix epoch as reference, for synthetic work.
    pub fn from_hours(times: Vec<f64>, heights: Vec<f64>) -> Result<Self> {
        Self::new(default_epoch(), times, heights)
    }

    pub fn epoch(&self) -> DateTime<Utc> {
        self.epoch
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Time covered from first to last sample, in hours.
    pub fn span(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    /// Median spacing between consecutive samples; `None` for a single sample.
    pub fn native_spacing(&self) -> Option<f64> {
        if self.times.len() < 2 {
            return None;
        }
        let mut gaps: Vec<f64> = self.times.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.sort_by(f64::total_cmp);
        Some(gaps[gaps.len() / 2])
    }

    pub(crate) fn with_heights(&self, heights: Vec<f64>) -> Self {
        debug_assert_eq!(heights.len(), self.times.len());
        Self {
            epoch: self.epoch,
            times: self.times.clone(),
            heights,
        }
    }
}

pub fn default_epoch() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap()
}

/// Mean level, trend, and per-constituent amplitude and phase.
///
/// `phases[k]` is the total phase `φ_k + u_k` in radians. The model is
/// `h(t) = mean + trend·t + Σ A_k f_k cos(ω_k t + phases[k])`.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicSolution {
    pub mean: f64,
    pub trend: f64,
    pub amplitudes: Vec<f64>,
    pub phases: Vec<f64>,
}

impl HarmonicSolution {
    pub fn new(mean: f64, trend: f64, amplitudes: Vec<f64>, phases: Vec<f64>) -> Result<Self> {
        if amplitudes.len() != phases.len() {
            return Err(Error::Dimension(format!(
                "{} amplitudes but {} phases",
                amplitudes.len(),
                phases.len()
            )));
        }
        if let Some(k) = amplitudes.iter().position(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::Format(format!(
                "amplitude {k} must be finite and non-negative, got {}",
                amplitudes[k]
            )));
        }
        let phases = phases.into_iter().map(normalize_angle).collect();
        Ok(Self {
            mean,
            trend,
            amplitudes,
            phases,
        })
    }

    /// All-zero solution for `n` constituents.
    pub fn zeros(n: usize) -> Self {
        Self {
            mean: 0.0,
            trend: 0.0,
            amplitudes: vec![0.0; n],
            phases: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    pub(crate) fn check_catalog(&self, catalog: &ConstituentCatalog) -> Result<()> {
        if self.amplitudes.len() != catalog.len() || self.phases.len() != catalog.len() {
            return Err(Error::Dimension(format!(
                "solution has {} constituents, catalog has {}",
                self.amplitudes.len(),
                catalog.len()
            )));
        }
        Ok(())
    }
}

/// Resampling controls: target interval and record length in hours.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingPlan {
    pub interval: f64,
    pub record_length: f64,
    pub seed: u64,
}

impl SamplingPlan {
    pub fn new(interval: f64, record_length: f64, seed: u64) -> Result<Self> {
        if !(interval > 0.0 && interval.is_finite()) {
            return Err(Error::InvalidPlan(format!("interval {interval} must be positive")));
        }
        if !(record_length >= interval && record_length.is_finite()) {
            return Err(Error::InvalidPlan(format!(
                "record length {record_length} shorter than interval {interval}"
            )));
        }
        Ok(Self {
            interval,
            record_length,
            seed,
        })
    }

    /// Upper bound on the number of samples the plan can select.
    pub fn max_samples(&self) -> usize {
        (self.record_length / self.interval).floor() as usize + 1
    }
}

/// Least-squares line `intercept + slope·t` through `(times, values)`.
///
/// Requires at least two distinct times.
pub fn fit_line(times: &[f64], values: &[f64]) -> Result<(f64, f64)> {
    let n = times.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "line fit needs at least 2 samples, got {n}"
        )));
    }
    let nf = n as f64;
    let t_mean = times.iter().sum::<f64>() / nf;
    let v_mean = values.iter().sum::<f64>() / nf;
    let (mut stt, mut stv) = (0.0, 0.0);
    for (t, v) in times.iter().zip(values) {
        let dt = t - t_mean;
        stt += dt * dt;
        stv += dt * (v - v_mean);
    }
    if stt <= 0.0 {
        return Err(Error::InvalidSeries("all sample times identical".into()));
    }
    let slope = stv / stt;
    Ok((v_mean - slope * t_mean, slope))
}

/// A series with its least-squares line removed.
#[derive(Debug, Clone, PartialEq)]
pub struct Detrended {
    pub residual: WaterLevelSeries,
    /// Line value at `t = 0`.
    pub mean: f64,
    /// Slope in meters per hour.
    pub trend: f64,
}

/// Removes the least-squares mean and linear trend.
pub fn detrend(series: &WaterLevelSeries) -> Result<Detrended> {
    let (mean, trend) = fit_line(series.times(), series.heights())?;
    let residual = series
        .times()
        .iter()
        .zip(series.heights())
        .map(|(t, h)| h - (mean + trend * t))
        .collect();
    Ok(Detrended {
        residual: series.with_heights(residual),
        mean,
        trend,
    })
}

/// Evaluates the harmonic model at `times`.
pub fn synthesize(solution: &HarmonicSolution, times: &[f64], catalog: &ConstituentCatalog) -> Result<Vec<f64>> {
    solution.check_catalog(catalog)?;
    let terms: Vec<(f64, f64, f64)> = catalog
        .iter()
        .zip(solution.amplitudes.iter().zip(&solution.phases))
        .filter(|(_, (a, _))| **a != 0.0)
        .map(|(c, (a, p))| (c.speed, a * c.nodal_factor, *p))
        .collect();
    Ok(times
        .iter()
        .map(|&t| {
            solution.mean + solution.trend * t + terms.iter().map(|&(w, af, p)| af * (w * t + p).cos()).sum::<f64>()
        })
        .collect())
}

/// Picks samples nearest to a regular target grid.
///
/// The record window starts at a seeded uniform-random offset inside the
/// span of the input; each target snaps to the closest existing sample if
/// one lies within half the native spacing, otherwise the target is skipped.
pub fn resample(series: &WaterLevelSeries, plan: &SamplingPlan) -> Result<WaterLevelSeries> {
    let times = series.times();
    let spacing = series.native_spacing().unwrap_or(plan.interval);
    if plan.interval < spacing * (1.0 - 1e-9) {
        return Err(Error::InvalidPlan(format!(
            "interval {} h is finer than the native spacing {spacing} h",
            plan.interval
        )));
    }
    let tolerance = 0.5 * spacing * (1.0 + 1e-9);
    let window = series.span() - plan.record_length;
    let offset = if window > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        rng.random::<f64>() * window
    } else {
        0.0
    };
    let start = times[0] + offset;

    let mut picked: Vec<usize> = Vec::with_capacity(plan.max_samples());
    for j in 0..plan.max_samples() {
        let target = start + j as f64 * plan.interval;
        let pos = times.partition_point(|&t| t < target);
        let nearest = [pos.checked_sub(1), (pos < times.len()).then_some(pos)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (times[a] - target).abs().total_cmp(&(times[b] - target).abs()));
        if let Some(k) = nearest {
            if (times[k] - target).abs() <= tolerance && picked.last() != Some(&k) {
                picked.push(k);
            }
        }
    }
    if picked.is_empty() {
        return Err(Error::EmptySelection);
    }
    WaterLevelSeries::new(
        series.epoch(),
        picked.iter().map(|&k| times[k]).collect(),
        picked.iter().map(|&k| series.heights()[k]).collect(),
    )
}

/// Adds seeded zero-mean Gaussian noise with standard deviation `sigma`.
pub fn apply_noise(series: &WaterLevelSeries, sigma: f64, seed: u64) -> Result<WaterLevelSeries> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise sigma {sigma} must be >= 0")));
    }
    if sigma == 0.0 {
        return Ok(series.clone());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma checked above");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heights = series.heights().iter().map(|h| h + normal.sample(&mut rng)).collect();
    Ok(series.with_heights(heights))
}

/// Uniformly spaced times `0, step, 2·step, …` strictly below `span`.
pub fn uniform_times(step: f64, span: f64) -> Vec<f64> {
    let count = (span / step - 1e-9).ceil().max(1.0) as usize;
    (0..count).map(|j| j as f64 * step).collect()
}
