//! Constrained harmonic analysis: harmonics interpolated between two
//! reference gauges with one scalar weight fitted to the observations.

use std::f64::consts::{PI, TAU};

use nalgebra::DVector;

use crate::constituents::{normalize_angle, ConstituentCatalog};
use crate::design::{pack, PreparedSystem, Regime};
use crate::error::{Error, Result};
use crate::series::{HarmonicSolution, WaterLevelSeries};

/// Grid step of the weight scan.
pub const WEIGHT_STEP: f64 = 0.001;

/// Published harmonics of a reference gauge.
#[derive(Debug, Clone, PartialEq)]
pub struct GaugeHarmonics {
    pub station: String,
    pub solution: HarmonicSolution,
}

impl GaugeHarmonics {
    pub fn new(station: impl Into<String>, solution: HarmonicSolution) -> Self {
        Self {
            station: station.into(),
            solution,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChaFit {
    /// Fitted weight: 0 is the first reference, 1 the second.
    pub weight: f64,
    pub solution: HarmonicSolution,
    /// Sum of squared residuals at the fitted weight.
    pub objective: f64,
    /// False when both references are identical and the weight has no effect.
    pub identifiable: bool,
    pub regime: Regime,
}

/// Signed shortest arc from `from` to `to`, in `(−π, π]`.
fn shortest_arc(from: f64, to: f64) -> f64 {
    let d = (to - from).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// Amplitudes and phases at weight `w`: linear in amplitude, shortest arc
/// in phase (ties at the antipode go toward increasing angle).
pub fn interpolate(a: &HarmonicSolution, b: &HarmonicSolution, w: f64) -> (Vec<f64>, Vec<f64>) {
    let amplitudes = a
        .amplitudes
        .iter()
        .zip(&b.amplitudes)
        .map(|(x, y)| (1.0 - w) * x + w * y)
        .collect();
    let phases = a
        .phases
        .iter()
        .zip(&b.phases)
        .map(|(&p, &q)| normalize_angle(p + w * shortest_arc(p, q)))
        .collect();
    (amplitudes, phases)
}

fn check_alignment(reference: &GaugeHarmonics, catalog: &ConstituentCatalog) -> Result<()> {
    let n = catalog.len();
    if reference.solution.amplitudes.len() != n || reference.solution.phases.len() != n {
        return Err(Error::Alignment(format!(
            "reference `{}` has {} constituents, catalog has {n}",
            reference.station,
            reference.solution.amplitudes.len()
        )));
    }
    Ok(())
}

pub fn cha_fit(
    series: &WaterLevelSeries,
    ref_a: &GaugeHarmonics,
    ref_b: &GaugeHarmonics,
    catalog: &ConstituentCatalog,
) -> Result<ChaFit> {
    check_alignment(ref_a, catalog)?;
    check_alignment(ref_b, catalog)?;
    cha_fit_prepared(&PreparedSystem::new(series, catalog)?, ref_a, ref_b, catalog)
}

pub fn cha_fit_prepared(
    prepared: &PreparedSystem,
    ref_a: &GaugeHarmonics,
    ref_b: &GaugeHarmonics,
    catalog: &ConstituentCatalog,
) -> Result<ChaFit> {
    check_alignment(ref_a, catalog)?;
    check_alignment(ref_b, catalog)?;
    let factors = catalog.nodal_factors();
    let (a, b) = (&ref_a.solution, &ref_b.solution);
    let state = |w: f64| -> DVector<f64> {
        let (amps, phases) = interpolate(a, b, w);
        pack(&amps, &phases, &factors).0
    };
    let objective = |w: f64| prepared.system.residual_norm_squared(&state(w));

    let steps = (1.0 / WEIGHT_STEP).round() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| i as f64 / steps as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&w| objective(w)).collect();
    let best = values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(i, _)| i)
        .expect("grid is non-empty");

    let (mut weight, mut value) = (grid[best], values[best]);
    if best > 0 && best < steps {
        let (f0, f1, f2) = (values[best - 1], values[best], values[best + 1]);
        let curvature = f0 - 2.0 * f1 + f2;
        if curvature > 0.0 {
            let shift = 0.5 * (f0 - f2) / curvature;
            let w = (grid[best] + shift * WEIGHT_STEP).clamp(grid[best - 1], grid[best + 1]);
            let f = objective(w);
            if f < value {
                weight = w;
                value = f;
            }
        }
    }

    let identifiable = a != b;
    if !identifiable {
        log::warn!("reference gauges are identical; interpolation weight is not identifiable");
    }
    let x = state(weight);
    Ok(ChaFit {
        weight,
        solution: prepared.solution(&x, &factors)?,
        objective: value,
        identifiable,
        regime: prepared.regime(),
    })
}
