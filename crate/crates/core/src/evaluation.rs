//! Scoring and the sampling-interval × record-length experiment grid.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::cha::{cha_fit_prepared, GaugeHarmonics};
use crate::constituents::ConstituentCatalog;
use crate::design::{PreparedSystem, ReferenceVector, Regime};
use crate::error::{Error, Result};
use crate::format::format_sig;
use crate::ha::ha_fit_prepared;
use crate::relsha::{relsha_fit_prepared, RelshaConfig};
use crate::series::{apply_noise, resample, SamplingPlan, WaterLevelSeries};

/// Relative RMS amplitude error in percent:
/// `√(mean((A_k − A_true,k)²)) / Σ A_true,k · 100`.
pub fn rrmse(estimated: &[f64], truth: &[f64]) -> Result<f64> {
    if estimated.len() != truth.len() || truth.is_empty() {
        return Err(Error::Dimension(format!(
            "{} estimated vs {} true amplitudes",
            estimated.len(),
            truth.len()
        )));
    }
    let denominator: f64 = truth.iter().sum();
    if !(denominator > 0.0) {
        return Err(Error::UndefinedMetric("true amplitudes sum to zero".into()));
    }
    let mse = estimated.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64;
    Ok(mse.sqrt() / denominator * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ha,
    Cha,
    Relsha,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ha, Method::Cha, Method::Relsha];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ha => "ha",
            Method::Cha => "cha",
            Method::Relsha => "relsha",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ha" => Ok(Method::Ha),
            "cha" => Ok(Method::Cha),
            "relsha" => Ok(Method::Relsha),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

pub const SIX_MINUTES: f64 = 0.1;
/// 9.9 days; `9.9 * 24.0` would round to 237.60000000000002.
pub const JASON3_REVISIT: f64 = 237.6;
pub const SWOT_REVISIT: f64 = 264.0;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// Sampling intervals in hours.
    pub intervals: Vec<f64>,
    /// Record lengths in hours.
    pub lengths: Vec<f64>,
    pub methods: Vec<Method>,
    pub seed: u64,
    /// Standard deviation of Gaussian noise added per cell, meters.
    pub noise_sigma: f64,
    pub relsha: RelshaConfig,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            intervals: default_intervals(),
            lengths: default_lengths(),
            methods: Method::ALL.to_vec(),
            seed: 0,
            noise_sigma: 0.0,
            relsha: RelshaConfig::default(),
        }
    }
}

/// 40 log-spaced intervals from 12 min to 11 days, plus 6 min and 9.9 days.
pub fn default_intervals() -> Vec<f64> {
    let (lo, hi) = (0.2f64, SWOT_REVISIT);
    let mut v: Vec<f64> = (0..40)
        .map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / 39.0).exp())
        .collect();
    v[39] = SWOT_REVISIT;
    v.push(SIX_MINUTES);
    v.push(JASON3_REVISIT);
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * b.abs());
    v
}

/// 20 evenly spaced record lengths from 30 to 366 days.
pub fn default_lengths() -> Vec<f64> {
    (0..20)
        .map(|k| 24.0 * (30.0 + (366.0 - 30.0) * k as f64 / 19.0))
        .collect()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the cell at (interval index, length index).
pub fn cell_seed(base: u64, interval_index: usize, length_index: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(base) ^ interval_index as u64) ^ length_index as u64)
}

/// Data the grid is evaluated against.
#[derive(Debug, Clone, Copy)]
pub struct GridInputs<'a> {
    /// Densely sampled record that every cell resamples.
    pub record: &'a WaterLevelSeries,
    pub truth: &'a [f64],
    pub catalog: &'a ConstituentCatalog,
    /// Amplitude prior for the regularized fit.
    pub reference: Option<&'a [f64]>,
    /// Reference gauges for the interpolation fit.
    pub gauges: Option<(&'a GaugeHarmonics, &'a GaugeHarmonics)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub interval: f64,
    pub length: f64,
    pub method: Method,
    pub sample_count: usize,
    pub regime: Regime,
    /// `None` when the fit failed; see `error`.
    pub rrmse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorGrid {
    pub intervals: Vec<f64>,
    pub lengths: Vec<f64>,
    pub methods: Vec<Method>,
    /// Interval-major, then length, then method in `methods` order.
    pub cells: Vec<GridCell>,
}

pub const GRID_HEADER: &str = "interval_hours,length_hours,method,sample_count,regime,rrmse_percent";

fn cell_row(c: &GridCell) -> String {
    format!(
        "{},{},{},{},{},{}\n",
        format_sig(c.interval),
        format_sig(c.length),
        c.method,
        c.sample_count,
        c.regime,
        c.rrmse.map_or_else(|| "NA".to_string(), format_sig)
    )
}

impl ErrorGrid {
    pub fn cell(&self, interval_index: usize, length_index: usize, method: Method) -> Option<&GridCell> {
        let m = self.methods.iter().position(|&x| x == method)?;
        let per_interval = self.lengths.len() * self.methods.len();
        self.cells
            .get(interval_index * per_interval + length_index * self.methods.len() + m)
    }

    pub fn missing(&self) -> impl Iterator<Item = &GridCell> {
        self.cells.iter().filter(|c| c.rrmse.is_none())
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{GRID_HEADER}\n");
        for c in &self.cells {
            out.push_str(&cell_row(c));
        }
        out
    }

    /// Rebuilds a grid from per-interval slices.
    pub fn from_slices(slices: &[IntervalSlice], lengths: Vec<f64>, methods: Vec<Method>) -> Self {
        let mut cells = Vec::new();
        for slice in slices {
            for j in 0..lengths.len() {
                for method in &methods {
                    if let Some(curve) = slice.curves.iter().find(|c| c.method == *method) {
                        cells.push(curve.cells[j].clone());
                    }
                }
            }
        }
        Self {
            intervals: slices.iter().map(|s| s.interval).collect(),
            lengths,
            methods,
            cells,
        }
    }
}

/// Error as a function of record length for one method at a fixed interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub method: Method,
    pub cells: Vec<GridCell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSlice {
    pub interval: f64,
    pub curves: Vec<Curve>,
}

impl IntervalSlice {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{GRID_HEADER}\n");
        for curve in &self.curves {
            for c in &curve.cells {
                out.push_str(&cell_row(c));
            }
        }
        out
    }
}

/// Position of `interval` in `intervals`, up to a relative 1e-9.
pub fn find_interval(intervals: &[f64], interval: f64) -> Option<usize> {
    intervals
        .iter()
        .position(|&x| (x - interval).abs() <= 1e-9 * interval.abs().max(1.0))
}

pub fn interval_slice(grid: &ErrorGrid, interval: f64) -> Result<IntervalSlice> {
    let i =
        find_interval(&grid.intervals, interval).ok_or_else(|| Error::NotFound(format!("interval {interval} h")))?;
    let curves = grid
        .methods
        .iter()
        .map(|&method| Curve {
            method,
            cells: (0..grid.lengths.len())
                .filter_map(|j| grid.cell(i, j, method).cloned())
                .collect(),
        })
        .collect();
    Ok(IntervalSlice {
        interval: grid.intervals[i],
        curves,
    })
}

/// Evaluates every (interval, length, method) cell.
///
/// Runs on the current rayon pool; cell results depend only on the cell's
/// own seed, so the grid is the same for any thread count.
pub fn run_grid(inputs: &GridInputs<'_>, spec: &GridSpec) -> Result<ErrorGrid> {
    let n = inputs.catalog.len();
    if inputs.truth.len() != n {
        return Err(Error::Alignment(format!(
            "{} true amplitudes for {n} constituents",
            inputs.truth.len()
        )));
    }
    let reference = if spec.methods.contains(&Method::Relsha) {
        let r = inputs.reference.ok_or(Error::MissingPrior)?;
        let q = ReferenceVector::from_amplitudes(r)?;
        if q.len() != n {
            return Err(Error::Alignment(format!(
                "{} reference amplitudes for {n} constituents",
                q.len()
            )));
        }
        Some(q)
    } else {
        None
    };
    if spec.methods.contains(&Method::Cha) && inputs.gauges.is_none() {
        return Err(Error::InvalidConfig(
            "interpolation method needs two reference gauges".into(),
        ));
    }
    spec.relsha.validate()?;

    let jobs: Vec<(usize, usize)> = (0..spec.intervals.len())
        .flat_map(|i| (0..spec.lengths.len()).map(move |j| (i, j)))
        .collect();
    let cells: Vec<Vec<GridCell>> = jobs
        .par_iter()
        .map(|&(i, j)| evaluate_cell(inputs, spec, reference.as_ref(), i, j))
        .collect();

    Ok(ErrorGrid {
        intervals: spec.intervals.clone(),
        lengths: spec.lengths.clone(),
        methods: spec.methods.clone(),
        cells: cells.into_iter().flatten().collect(),
    })
}

fn evaluate_cell(
    inputs: &GridInputs<'_>,
    spec: &GridSpec,
    reference: Option<&ReferenceVector>,
    i: usize,
    j: usize,
) -> Vec<GridCell> {
    let (interval, length) = (spec.intervals[i], spec.lengths[j]);
    let n = inputs.catalog.len();
    let seed = cell_seed(spec.seed, i, j);
    let cell = |method, count: usize, outcome: Result<f64>| GridCell {
        interval,
        length,
        method,
        sample_count: count,
        regime: Regime::classify(count, n),
        rrmse: outcome.as_ref().ok().copied(),
        error: outcome.err().map(|e| e.to_string()),
    };

    let prepared = SamplingPlan::new(interval, length, seed)
        .and_then(|plan| resample(inputs.record, &plan))
        .and_then(|s| apply_noise(&s, spec.noise_sigma, splitmix64(seed ^ 0xA5A5_A5A5)))
        .and_then(|s| Ok((s.len(), PreparedSystem::new(&s, inputs.catalog)?)));
    let (count, prepared) = match prepared {
        Ok(p) => p,
        Err(e) => {
            let msg = e.to_string();
            return spec
                .methods
                .iter()
                .map(|&m| cell(m, 0, Err(Error::InvalidConfig(msg.clone()))))
                .map(|mut c| {
                    c.error = Some(msg.clone());
                    c
                })
                .collect();
        }
    };

    spec.methods
        .iter()
        .map(|&method| {
            let amplitudes = match method {
                Method::Ha => ha_fit_prepared(&prepared, inputs.catalog).map(|f| f.solution.amplitudes),
                Method::Cha => {
                    let (a, b) = inputs.gauges.expect("checked in run_grid");
                    cha_fit_prepared(&prepared, a, b, inputs.catalog).map(|f| f.solution.amplitudes)
                }
                Method::Relsha => relsha_fit_prepared(
                    &prepared,
                    reference.expect("checked in run_grid"),
                    inputs.catalog,
                    &spec.relsha,
                )
                .map(|f| f.solution.amplitudes),
            };
            cell(method, count, amplitudes.and_then(|a| rrmse(&a, inputs.truth)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rrmse_examples() {
        assert_eq!(rrmse(&[0.3, 0.2], &[0.3, 0.2]).unwrap(), 0.0);
        // √(0.5·1) / 1 · 100
        let v = rrmse(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((v - 50.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!((v - 70.71).abs() < 0.005);
    }

    #[test]
    fn rrmse_is_scale_invariant() {
        let est = [0.61, 0.13, 0.02, 0.4];
        let truth = [0.6, 0.12, 0.03, 0.35];
        let base = rrmse(&est, &truth).unwrap();
        for c in [1e-3, 0.5, 2.0, 1e4] {
            let e: Vec<f64> = est.iter().map(|x| x * c).collect();
            let t: Vec<f64> = truth.iter().map(|x| x * c).collect();
            assert!((rrmse(&e, &t).unwrap() - base).abs() < 1e-12 * base);
        }
    }

    #[test]
    fn rrmse_errors() {
        assert!(matches!(rrmse(&[1.0], &[0.0]), Err(Error::UndefinedMetric(_))));
        assert!(matches!(rrmse(&[1.0], &[1.0, 2.0]), Err(Error::Dimension(_))));
        assert!(rrmse(&[], &[]).is_err());
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("lsq".parse::<Method>().is_err());
    }

    #[test]
    fn default_lattice_shape() {
        let iv = default_intervals();
        assert_eq!(iv.len(), 42);
        assert_eq!(iv[0], SIX_MINUTES);
        assert!((iv[1] - 0.2).abs() < 1e-12);
        assert_eq!(*iv.last().unwrap(), SWOT_REVISIT);
        assert!(iv.contains(&JASON3_REVISIT));
        assert!(iv.windows(2).all(|w| w[0] < w[1]));
        let lengths = default_lengths();
        assert_eq!(lengths.len(), 20);
        assert_eq!(lengths[0], 720.0);
        assert!((lengths[19] - 366.0 * 24.0).abs() < 1e-9);
    }

    #[test]
    fn cell_seeds_differ() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..20 {
            for j in 0..20 {
                assert!(seen.insert(cell_seed(7, i, j)));
            }
        }
        assert_eq!(cell_seed(7, 3, 4), cell_seed(7, 3, 4));
        assert_ne!(cell_seed(7, 3, 4), cell_seed(8, 3, 4));
    }
}
