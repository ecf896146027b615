//! Synthetic stations for experiments: a bundled ground truth and the
//! references derived from it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cha::GaugeHarmonics;
use crate::constituents::ConstituentCatalog;
use crate::error::Result;
use crate::ingest::parse_harmonics;
use crate::series::{default_epoch, synthesize, uniform_times, HarmonicSolution, WaterLevelSeries};

const BUNDLED_TRUTH: &str = include_str!("../data/synthetic_truth.csv");

/// The bundled synthetic station, aligned to `catalog`.
///
/// Constituents of the catalog that the bundled file does not list get
/// zero amplitude.
pub fn bundled_truth(catalog: &ConstituentCatalog) -> Result<HarmonicSolution> {
    Ok(
        parse_harmonics(BUNDLED_TRUTH, "<bundled synthetic_truth.csv>", catalog)?
            .value
            .solution,
    )
}

/// Multiplies each amplitude by an independent factor `1 + U(−fraction, fraction)`.
pub fn perturb_amplitudes(amplitudes: &[f64], fraction: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    amplitudes
        .iter()
        .map(|a| a * (1.0 + rng.random_range(-fraction..=fraction)))
        .collect()
}

/// Truth and the priors handed to the solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub truth: HarmonicSolution,
    /// Amplitude prior for the regularized fit: truth perturbed by ±10 %.
    pub reference: Vec<f64>,
    /// Two gauges bracketing the truth loosely, for the interpolation fit.
    pub gauge_a: GaugeHarmonics,
    pub gauge_b: GaugeHarmonics,
}

impl Scenario {
    pub fn from_truth(truth: HarmonicSolution, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe_f00d_d00d);
        let reference = perturb_amplitudes(&truth.amplitudes, 0.10, rng.random());
        let mut gauge = |station: &str, low: f64, high: f64| {
            let amplitudes = truth
                .amplitudes
                .iter()
                .map(|a| a * (1.0 + rng.random_range(low..=high)))
                .collect();
            let phases = truth
                .phases
                .iter()
                .map(|p| p + rng.random_range(-20f64..=20.0).to_radians())
                .collect();
            GaugeHarmonics::new(
                station,
                HarmonicSolution::new(0.0, 0.0, amplitudes, phases).expect("non-negative amplitudes"),
            )
        };
        let gauge_a = gauge("synthetic-a", -0.25, 0.05);
        let gauge_b = gauge("synthetic-b", -0.05, 0.25);
        Self {
            truth,
            reference,
            gauge_a,
            gauge_b,
        }
    }

    pub fn bundled(catalog: &ConstituentCatalog, seed: u64) -> Result<Self> {
        Ok(Self::from_truth(bundled_truth(catalog)?, seed))
    }
}

/// Noiseless record of `truth` sampled every `step` hours over `span` hours.
pub fn synthetic_series(
    truth: &HarmonicSolution,
    catalog: &ConstituentCatalog,
    step: f64,
    span: f64,
) -> Result<WaterLevelSeries> {
    let times = uniform_times(step, span);
    let heights = synthesize(truth, &times, catalog)?;
    WaterLevelSeries::new(default_epoch(), times, heights)
}
