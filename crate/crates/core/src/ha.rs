//! Classical least-squares harmonic analysis.

use crate::constituents::ConstituentCatalog;
use crate::design::{PreparedSystem, Regime};
use crate::error::Result;
use crate::series::{HarmonicSolution, WaterLevelSeries};

#[derive(Debug, Clone, PartialEq)]
pub struct HaFit {
    pub solution: HarmonicSolution,
    pub regime: Regime,
    /// Numerical rank of the detrended design matrix.
    pub rank: usize,
    /// Sum of squared residuals of the fitted model.
    pub residual_sum_squares: f64,
}

/// Fits mean, trend, and all catalog constituents by least squares.
///
/// With fewer samples than unknowns the minimum-norm solution is returned
/// and the fit is flagged underdetermined.
pub fn ha_fit(series: &WaterLevelSeries, catalog: &ConstituentCatalog) -> Result<HaFit> {
    ha_fit_prepared(&PreparedSystem::new(series, catalog)?, catalog)
}

pub fn ha_fit_prepared(prepared: &PreparedSystem, catalog: &ConstituentCatalog) -> Result<HaFit> {
    let (x, rank) = prepared.system.min_norm_solution();
    let regime = prepared.regime();
    if regime == Regime::Underdetermined {
        log::debug!(
            "harmonic analysis underdetermined: {} samples for {} unknowns",
            prepared.samples,
            2 * prepared.constituents
        );
    }
    Ok(HaFit {
        solution: prepared.solution(&x, &catalog.nodal_factors())?,
        regime,
        rank,
        residual_sum_squares: prepared.system.residual_norm_squared(&x),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constituents::Constituent;
    use crate::design::{build_design_matrix, pack_solution};
    use crate::error::Error;
    use crate::series::{detrend, synthesize, uniform_times};
    use nalgebra::DVector;

    fn small_catalog() -> ConstituentCatalog {
        ConstituentCatalog::new(vec![
            Constituent::new("A", 28.98f64.to_radians()).unwrap(),
            Constituent::new("B", 30.0f64.to_radians()).unwrap(),
            Constituent::new("C", 15.04f64.to_radians()).unwrap(),
        ])
        .unwrap()
    }

    fn truth() -> HarmonicSolution {
        HarmonicSolution::new(0.25, 1e-4, vec![0.6, 0.12, 0.1], vec![0.4, 1.3, 5.0]).unwrap()
    }

    #[test]
    fn recovers_noiseless_overdetermined_signal() {
        let cat = small_catalog();
        let t = uniform_times(1.0, 24.0 * 40.0);
        let h = synthesize(&truth(), &t, &cat).unwrap();
        let fit = ha_fit(&WaterLevelSeries::from_hours(t, h).unwrap(), &cat).unwrap();
        assert_eq!(fit.regime, Regime::Overdetermined);
        assert_eq!(fit.rank, 6);
        for k in 0..3 {
            assert!((fit.solution.amplitudes[k] - truth().amplitudes[k]).abs() < 1e-10);
            assert!((fit.solution.phases[k] - truth().phases[k]).abs() < 1e-8);
        }
        assert!((fit.solution.mean - 0.25).abs() < 1e-9);
        assert!((fit.solution.trend - 1e-4).abs() < 1e-12);
        assert!(fit.residual_sum_squares < 1e-18);
    }

    #[test]
    fn zero_series_gives_zero_amplitudes() {
        let cat = ConstituentCatalog::standard();
        let t = uniform_times(1.0, 1000.0);
        let n = t.len();
        let fit = ha_fit(&WaterLevelSeries::from_hours(t, vec![0.0; n]).unwrap(), &cat).unwrap();
        assert!(fit.solution.amplitudes.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn too_few_samples() {
        let cat = small_catalog();
        let s = WaterLevelSeries::from_hours(vec![0.0], vec![1.0]).unwrap();
        assert!(matches!(ha_fit(&s, &cat), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn underdetermined_flag() {
        let cat = small_catalog();
        let t = vec![0.0, 3.0, 7.0, 20.0];
        let h = synthesize(&truth(), &t, &cat).unwrap();
        let fit = ha_fit(&WaterLevelSeries::from_hours(t, h).unwrap(), &cat).unwrap();
        assert_eq!(fit.regime, Regime::Underdetermined);
        assert!(fit.rank <= 2);
    }

    #[test]
    fn residual_is_orthogonal_to_detrended_columns() {
        let cat = small_catalog();
        let t: Vec<f64> = (0..300).map(|j| j as f64 * 2.3 + (j as f64 * 0.7).sin()).collect();
        let mut h = synthesize(&truth(), &t, &cat).unwrap();
        for (k, v) in h.iter_mut().enumerate() {
            *v += 0.05 * ((k * 7919 % 101) as f64 / 101.0 - 0.5);
        }
        let series = WaterLevelSeries::from_hours(t.clone(), h.clone()).unwrap();
        let fit = ha_fit(&series, &cat).unwrap();
        let x = pack_solution(&fit.solution, &cat).unwrap();
        let design = build_design_matrix(&t, &cat).unwrap().into_inner();
        let model = &design * x.as_vector();
        let resid: Vec<f64> = (0..t.len())
            .map(|i| model[i] + fit.solution.mean + fit.solution.trend * t[i] - h[i])
            .collect();
        let r = DVector::from_vec(resid);
        let hnorm = DVector::from_vec(h).norm();
        // orthogonal to every design column, the constant, and time
        let g = design.transpose() * &r;
        assert!(g.amax() < 1e-8 * hnorm, "{}", g.amax());
        assert!(r.sum().abs() < 1e-8 * hnorm);
        let tr: f64 = r.iter().zip(&t).map(|(a, b)| a * b).sum();
        assert!(tr.abs() < 1e-8 * hnorm * t[t.len() - 1]);
        // the detrended observations see the same residual
        let d = detrend(&series).unwrap();
        assert_eq!(d.residual.len(), t.len());
    }

    #[test]
    fn constant_offset_only_moves_mean() {
        let cat = small_catalog();
        let t = uniform_times(0.5, 24.0 * 20.0);
        let h = synthesize(&truth(), &t, &cat).unwrap();
        let shifted: Vec<f64> = h.iter().map(|v| v + 3.25).collect();
        let a = ha_fit(&WaterLevelSeries::from_hours(t.clone(), h).unwrap(), &cat).unwrap();
        let b = ha_fit(&WaterLevelSeries::from_hours(t, shifted).unwrap(), &cat).unwrap();
        assert!((b.solution.mean - a.solution.mean - 3.25).abs() < 1e-10);
        for k in 0..3 {
            assert!((a.solution.amplitudes[k] - b.solution.amplitudes[k]).abs() < 1e-12);
        }
    }
}
