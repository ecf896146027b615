//! Linear-algebra objects shared by the solvers.
//!
//! The state vector stacks the cosine coefficients of all `n` constituents
//! followed by the sine coefficients. With the design matrix columns
//! `[cos(ω_k t) | sin(ω_k t)]`, the expansion
//!
//! ```text
//! A f cos(ωt + θ) = (A f cos θ)·cos(ωt) + (−A f sin θ)·sin(ωt)
//! ```
//!
//! fixes `x[k] = A_k f_k cos θ_k` and `x[n+k] = −A_k f_k sin θ_k`, so that
//! `H·x` reproduces the harmonic model exactly.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::constituents::{normalize_angle, ConstituentCatalog};
use crate::error::{Error, Result};
use crate::series::{detrend, HarmonicSolution, WaterLevelSeries};

/// Relative singular-value cutoff for rank decisions.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Whether a fit has at least as many samples as unknowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Overdetermined,
    Underdetermined,
}

impl Regime {
    /// Underdetermined iff `samples < 2n`.
    pub fn classify(samples: usize, constituents: usize) -> Self {
        if samples < 2 * constituents {
            Regime::Underdetermined
        } else {
            Regime::Overdetermined
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Overdetermined => "overdetermined",
            Regime::Underdetermined => "underdetermined",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `m × 2n` matrix of `cos(ω_k t_i)` then `sin(ω_k t_i)` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix(DMatrix<f64>);

impl DesignMatrix {
    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

pub fn build_design_matrix(times: &[f64], catalog: &ConstituentCatalog) -> Result<DesignMatrix> {
    if catalog.is_empty() {
        return Err(Error::Dimension("catalog is empty".into()));
    }
    if times.is_empty() {
        return Err(Error::InsufficientData("no sample times".into()));
    }
    let n = catalog.len();
    let mut h = DMatrix::zeros(times.len(), 2 * n);
    for (k, c) in catalog.iter().enumerate() {
        for (i, &t) in times.iter().enumerate() {
            let (s, co) = (c.speed * t).sin_cos();
            h[(i, k)] = co;
            h[(i, n + k)] = s;
        }
    }
    Ok(DesignMatrix(h))
}

/// Explicit `n × 2n` pairing matrix with ones at `(k, k)` and `(k, n+k)`.
///
/// The solvers use [`pair_energy`] instead; this exists for checking it.
pub fn build_k(n: usize) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(n, 2 * n);
    for i in 0..n {
        k[(i, i)] = 1.0;
        k[(i, n + i)] = 1.0;
    }
    k
}

/// `K(x ⊙ x)`: the squared magnitude of each (cos, sin) pair.
pub fn pair_energy(x: &DVector<f64>) -> DVector<f64> {
    let n = x.len() / 2;
    DVector::from_fn(n, |k, _| x[k] * x[k] + x[n + k] * x[n + k])
}

/// The `2n` harmonic unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(pub DVector<f64>);

impl StateVector {
    pub fn constituents(&self) -> usize {
        self.0.len() / 2
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }
}

pub fn pack_solution(solution: &HarmonicSolution, catalog: &ConstituentCatalog) -> Result<StateVector> {
    solution.check_catalog(catalog)?;
    Ok(pack(&solution.amplitudes, &solution.phases, &catalog.nodal_factors()))
}

pub(crate) fn pack(amplitudes: &[f64], phases: &[f64], nodal_factors: &[f64]) -> StateVector {
    let n = amplitudes.len();
    let mut x = DVector::zeros(2 * n);
    for k in 0..n {
        let af = amplitudes[k] * nodal_factors[k];
        let (s, c) = phases[k].sin_cos();
        x[k] = af * c;
        x[n + k] = -af * s;
    }
    StateVector(x)
}

/// Amplitudes and phases from a state vector.
///
/// Amplitudes are the pair magnitudes divided by the nodal factor; a zero
/// pair has phase 0.
pub fn unpack_state(x: &StateVector, nodal_factors: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = x.constituents();
    if x.0.len() != 2 * n || nodal_factors.len() != n {
        return Err(Error::Dimension(format!(
            "state of length {} with {} nodal factors",
            x.0.len(),
            nodal_factors.len()
        )));
    }
    let mut amplitudes = Vec::with_capacity(n);
    let mut phases = Vec::with_capacity(n);
    for (k, &f) in nodal_factors.iter().enumerate() {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::InvalidNodalFactor { index: k, factor: f });
        }
        let (c, s) = (x.0[k], x.0[n + k]);
        let magnitude = c.hypot(s);
        amplitudes.push(magnitude / f);
        phases.push(if magnitude == 0.0 {
            0.0
        } else {
            normalize_angle((-s).atan2(c))
        });
    }
    Ok((amplitudes, phases))
}

/// `q_k = A_{0,k}²`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceVector(DVector<f64>);

impl ReferenceVector {
    pub fn from_amplitudes(amplitudes: &[f64]) -> Result<Self> {
        if amplitudes.is_empty() {
            return Err(Error::MissingPrior);
        }
        if let Some(k) = amplitudes.iter().position(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(Error::Format(format!(
                "reference amplitude {k} must be finite and non-negative"
            )));
        }
        Ok(Self(DVector::from_iterator(
            amplitudes.len(),
            amplitudes.iter().map(|a| a * a),
        )))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A least-squares term `‖A x − c‖² + offset`.
///
/// Tall systems are reduced by a thin QR factorization to a square `A`;
/// `offset` then holds the part of the observations outside the column
/// space, so the value equals the uncompressed residual norm.
#[derive(Debug, Clone)]
pub struct LeastSquaresSystem {
    pub a: DMatrix<f64>,
    pub c: DVector<f64>,
    pub offset: f64,
}

impl LeastSquaresSystem {
    pub fn new(matrix: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        let (rows, cols) = matrix.shape();
        if rows <= cols {
            return Self {
                a: matrix,
                c: rhs,
                offset: 0.0,
            };
        }
        let qr = matrix.qr();
        let mut qtb = rhs;
        qr.q_tr_mul(&mut qtb);
        let offset = qtb.rows(cols, rows - cols).norm_squared();
        Self {
            a: qr.r(),
            c: qtb.rows(0, cols).into_owned(),
            offset,
        }
    }

    pub fn residual_norm_squared(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.c).norm_squared() + self.offset
    }

    /// Minimum-norm least-squares solution and numerical rank.
    pub fn min_norm_solution(&self) -> (DVector<f64>, usize) {
        min_norm_solve(&self.a, &self.c)
    }
}

/// Minimum-norm solution of `min ‖A x − b‖` by truncated SVD, singular
/// values below `σ_max·RANK_TOLERANCE` treated as zero.
pub fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, usize) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let sigma_max = svd.singular_values.max();
    let cutoff = sigma_max * RANK_TOLERANCE;
    let mut x = DVector::zeros(a.ncols());
    let mut rank = 0;
    if sigma_max > 0.0 {
        for (j, &s) in svd.singular_values.iter().enumerate() {
            if s > cutoff {
                rank += 1;
                let coeff = u.column(j).dot(b) / s;
                x += v_t.row(j).transpose() * coeff;
            }
        }
    }
    (x, rank)
}

/// A series prepared for harmonic fitting.
///
/// The mean and trend are removed from the observations and from every
/// design column, so the harmonic fit is the same as a joint fit of mean,
/// trend, and harmonics. `column_lines` holds the line each column lost,
/// used to turn the detrended fit back into the full model's mean and
/// trend.
#[derive(Debug, Clone)]
pub struct PreparedSystem {
    pub samples: usize,
    pub constituents: usize,
    pub detrended_mean: f64,
    pub detrended_trend: f64,
    column_intercepts: DVector<f64>,
    column_slopes: DVector<f64>,
    pub system: LeastSquaresSystem,
}

impl PreparedSystem {
    pub fn new(series: &WaterLevelSeries, catalog: &ConstituentCatalog) -> Result<Self> {
        let d = detrend(series)?;
        let mut h = build_design_matrix(series.times(), catalog)?.into_inner();
        let times = series.times();
        let (intercepts, slopes) = project_out_line(&mut h, times);
        let rhs = DVector::from_column_slice(d.residual.heights());
        Ok(Self {
            samples: series.len(),
            constituents: catalog.len(),
            detrended_mean: d.mean,
            detrended_trend: d.trend,
            column_intercepts: intercepts,
            column_slopes: slopes,
            system: LeastSquaresSystem::new(h, rhs),
        })
    }

    pub fn regime(&self) -> Regime {
        Regime::classify(self.samples, self.constituents)
    }

    /// Mean and trend of the full model for harmonic coefficients `x`.
    pub fn mean_and_trend(&self, x: &DVector<f64>) -> (f64, f64) {
        (
            self.detrended_mean - self.column_intercepts.dot(x),
            self.detrended_trend - self.column_slopes.dot(x),
        )
    }

    pub fn solution(&self, x: &DVector<f64>, nodal_factors: &[f64]) -> Result<HarmonicSolution> {
        let (amplitudes, phases) = unpack_state(&StateVector(x.clone()), nodal_factors)?;
        let (mean, trend) = self.mean_and_trend(x);
        HarmonicSolution::new(mean, trend, amplitudes, phases)
    }
}

/// Subtracts each column's least-squares line in place, returning the
/// removed intercepts and slopes.
fn project_out_line(h: &mut DMatrix<f64>, times: &[f64]) -> (DVector<f64>, DVector<f64>) {
    let m = times.len() as f64;
    let t_mean = times.iter().sum::<f64>() / m;
    let stt: f64 = times.iter().map(|t| (t - t_mean).powi(2)).sum();
    let cols = h.ncols();
    let mut intercepts = DVector::zeros(cols);
    let mut slopes = DVector::zeros(cols);
    for j in 0..cols {
        let mut col = h.column_mut(j);
        let mean = col.sum() / m;
        let slope = if stt > 0.0 {
            col.iter()
                .zip(times)
                .map(|(v, t)| (t - t_mean) * (v - mean))
                .sum::<f64>()
                / stt
        } else {
            0.0
        };
        let intercept = mean - slope * t_mean;
        for (v, t) in col.iter_mut().zip(times) {
            *v -= intercept + slope * t;
        }
        intercepts[j] = intercept;
        slopes[j] = slope;
    }
    (intercepts, slopes)
}
