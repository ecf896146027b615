//! Tidal harmonic analysis for sparse water-level records.
//!
//! Three estimators share one model and one set of data structures:
//!
//! - [`ha`]: ordinary least-squares harmonic analysis;
//! - [`cha`]: interpolation between two reference gauges;
//! - [`relsha`]: least squares with a penalty on the difference between
//!   fitted and reference amplitudes, usable when the record has fewer
//!   samples than unknowns.
//!
//! [`evaluation`] runs all three over a grid of sampling intervals and
//! record lengths and scores them against a known truth.

// `!(x > 0.0)` is how NaN gets rejected along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cha;
pub mod constituents;
pub mod design;
pub mod error;
pub mod evaluation;
pub mod format;
pub mod ha;
pub mod harness;
pub mod ingest;
pub mod lbfgs;
pub mod relsha;
pub mod series;
pub mod synthetic;

pub use cha::{cha_fit, ChaFit, GaugeHarmonics};
pub use constituents::{Constituent, ConstituentCatalog};
pub use design::Regime;
pub use error::{Error, Result};
pub use evaluation::{rrmse, run_grid, ErrorGrid, GridSpec, Method};
pub use ha::{ha_fit, HaFit};
pub use relsha::{relsha_fit, InitStrategy, RelshaConfig, RelshaFit};
pub use series::{HarmonicSolution, SamplingPlan, WaterLevelSeries};
