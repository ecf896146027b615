//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Every accepted step satisfies the sufficient-decrease condition, so the
//! objective never increases across iterates. The line search works with
//! changes in value rather than values, which lets an objective supply those
//! changes without the cancellation of subtracting two nearly equal numbers.

use std::collections::VecDeque;

use nalgebra::{Cholesky, DVector, Dyn};

/// Factored approximation of the Hessian at an iterate, used as the initial
/// matrix of the two-loop recursion in place of a scaled identity.
pub type Preconditioner = Cholesky<f64, Dyn>;

pub trait Objective {
    fn value_and_gradient(&mut self, x: &DVector<f64>) -> (f64, DVector<f64>);

    /// `f(x + step) − f(x)`, given both values.
    fn change(&mut self, _x: &DVector<f64>, _step: &DVector<f64>, fx: f64, f_next: f64) -> f64 {
        f_next - fx
    }

    fn preconditioner(&mut self, _x: &DVector<f64>) -> Option<Preconditioner> {
        None
    }
}

struct Closure<F>(F);

impl<F> Objective for Closure<F>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    fn value_and_gradient(&mut self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        (self.0)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop once `‖∇f‖∞` is at or below this value.
    pub gradient_tolerance: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iterations: 2000,
            gradient_tolerance: 1e-8,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsReport {
    pub x: DVector<f64>,
    /// Initial value plus the accumulated accepted changes.
    pub value: f64,
    pub gradient: DVector<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Objective at the start and after every accepted step.
    pub history: Vec<f64>,
}

impl LbfgsReport {
    pub fn gradient_norm(&self) -> f64 {
        self.gradient.amax()
    }
}

/// A trial point on the search line. `f` is the change from the line origin.
#[derive(Clone)]
struct Point {
    alpha: f64,
    x: DVector<f64>,
    f: f64,
    g: DVector<f64>,
    slope: f64,
}

/// Minimizes `f` from `x0`. The closure returns the value and gradient.
pub fn minimize<F>(x0: DVector<f64>, options: &LbfgsOptions, f: F) -> LbfgsReport
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    minimize_objective(x0, options, &mut Closure(f))
}

pub fn minimize_objective<O: Objective>(x0: DVector<f64>, options: &LbfgsOptions, objective: &mut O) -> LbfgsReport {
    let mut evaluations = 1;
    let (mut fx, mut gx) = objective.value_and_gradient(&x0);
    let mut x = x0;
    let mut history = vec![fx];
    let mut memory: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;

    while gx.amax() > options.gradient_tolerance && iterations < options.max_iterations {
        let metric = objective.preconditioner(&x);
        let mut direction = two_loop(&gx, &memory, metric.as_ref());
        let mut slope = direction.dot(&gx);
        if !(slope < 0.0) {
            memory.clear();
            direction = -&gx;
            slope = direction.dot(&gx);
        }
        let first_step = if memory.is_empty() && metric.is_none() {
            (1.0 / direction.amax()).min(1.0)
        } else {
            1.0
        };

        let mut search = LineSearch {
            x: &x,
            f0: fx,
            slope0: slope,
            direction: &direction,
            options,
            evaluations: &mut evaluations,
        };
        let mut accepted = search.run(objective, first_step);
        if accepted.is_none() && !memory.is_empty() {
            memory.clear();
            direction = -&gx;
            let slope = direction.dot(&gx);
            let step = (1.0 / direction.amax()).min(1.0);
            let mut search = LineSearch {
                x: &x,
                f0: fx,
                slope0: slope,
                direction: &direction,
                options,
                evaluations: &mut evaluations,
            };
            accepted = search.run(objective, step);
        }
        let Some(next) = accepted else {
            break;
        };

        let s = &next.x - &x;
        let y = &next.g - &gx;
        let sy = s.dot(&y);
        if sy > f64::EPSILON * s.norm() * y.norm() {
            if memory.len() == options.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        x = next.x;
        fx += next.f;
        gx = next.g;
        history.push(fx);
        iterations += 1;
    }

    LbfgsReport {
        converged: gx.amax() <= options.gradient_tolerance,
        x,
        value: fx,
        gradient: gx,
        iterations,
        evaluations,
        history,
    }
}

fn two_loop(
    g: &DVector<f64>,
    memory: &VecDeque<(DVector<f64>, DVector<f64>, f64)>,
    metric: Option<&Preconditioner>,
) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * s.dot(&q);
        q.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some(metric) = metric {
        q = metric.solve(&q);
    } else if let Some((s, y, _)) = memory.back() {
        q *= s.dot(y) / y.norm_squared();
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q.axpy(a - b, s, 1.0);
    }
    -q
}

struct LineSearch<'a> {
    x: &'a DVector<f64>,
    f0: f64,
    slope0: f64,
    direction: &'a DVector<f64>,
    options: &'a LbfgsOptions,
    evaluations: &'a mut usize,
}

impl LineSearch<'_> {
    fn eval<O: Objective>(&mut self, objective: &mut O, alpha: f64) -> Point {
        *self.evaluations += 1;
        let step = self.direction * alpha;
        let xa = self.x + &step;
        let (fa, ga) = objective.value_and_gradient(&xa);
        let change = if fa.is_finite() {
            objective.change(self.x, &step, self.f0, fa)
        } else {
            f64::INFINITY
        };
        let slope = ga.dot(self.direction);
        Point {
            alpha,
            x: xa,
            f: change,
            g: ga,
            slope,
        }
    }

    fn armijo(&self, p: &Point) -> bool {
        p.f.is_finite() && p.f <= self.options.c1 * p.alpha * self.slope0
    }

    fn curvature(&self, p: &Point) -> bool {
        p.slope.abs() <= -self.options.c2 * self.slope0
    }

    fn run<O: Objective>(&mut self, objective: &mut O, first_step: f64) -> Option<Point> {
        let origin = Point {
            alpha: 0.0,
            x: self.x.clone(),
            f: 0.0,
            g: DVector::zeros(0),
            slope: self.slope0,
        };
        let mut prev = origin;
        let mut alpha = first_step;
        let mut budget = self.options.max_line_search;

        // bracketing phase
        let (mut lo, mut hi) = loop {
            if budget == 0 {
                return None;
            }
            budget -= 1;
            let p = self.eval(objective, alpha);
            if !self.armijo(&p) || (prev.alpha > 0.0 && p.f >= prev.f) {
                break (prev, p);
            }
            if self.curvature(&p) {
                return Some(p);
            }
            if p.slope >= 0.0 {
                break (p, prev);
            }
            prev = p;
            alpha *= 2.0;
        };

        // zoom phase: `lo` satisfies sufficient decrease with the lowest value so far
        while budget > 0 {
            budget -= 1;
            let trial = interpolate_step(&lo, &hi);
            if (trial - lo.alpha).abs() <= f64::EPSILON * lo.alpha.abs().max(1.0) {
                break;
            }
            let p = self.eval(objective, trial);
            if !self.armijo(&p) || p.f >= lo.f {
                hi = p;
            } else {
                if self.curvature(&p) {
                    return Some(p);
                }
                if p.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
        }
        (lo.alpha > 0.0 && lo.f < 0.0).then_some(lo)
    }
}

/// Safeguarded quadratic interpolation between bracket ends.
fn interpolate_step(lo: &Point, hi: &Point) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let d = b - a;
    let denom = 2.0 * (hi.f - lo.f - lo.slope * d);
    let mut t = if denom > 0.0 && hi.f.is_finite() {
        a - lo.slope * d * d / denom
    } else {
        0.5 * (a + b)
    };
    let (min, max) = (a.min(b), a.max(b));
    let margin = 0.1 * (max - min);
    if !(t > min + margin && t < max - margin) {
        t = 0.5 * (a + b);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic() {
        let target = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let scales = DVector::from_vec(vec![1.0, 10.0, 100.0]);
        let report = minimize(DVector::zeros(3), &LbfgsOptions::default(), |x| {
            let d = x - &target;
            let g = d.component_mul(&scales);
            (0.5 * d.dot(&g), g)
        });
        assert!(report.converged);
        assert!((report.x.clone() - target).amax() < 1e-9);
    }

    #[test]
    fn minimizes_rosenbrock_monotonically() {
        let options = LbfgsOptions {
            gradient_tolerance: 1e-10,
            ..LbfgsOptions::default()
        };
        let report = minimize(DVector::from_vec(vec![-1.2, 1.0]), &options, |v| {
            let (x, y) = (v[0], v[1]);
            let f = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
            let g = DVector::from_vec(vec![-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)]);
            (f, g)
        });
        assert!(report.converged, "{report:?}");
        assert!((report.x[0] - 1.0).abs() < 1e-6 && (report.x[1] - 1.0).abs() < 1e-6);
        assert!(report.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let options = LbfgsOptions {
            max_iterations: 2,
            gradient_tolerance: 1e-14,
            ..LbfgsOptions::default()
        };
        let report = minimize(DVector::from_vec(vec![-1.2, 1.0]), &options, |v| {
            let (x, y) = (v[0], v[1]);
            let f = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
            let g = DVector::from_vec(vec![-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)]);
            (f, g)
        });
        assert!(!report.converged);
        assert_eq!(report.iterations, 2);
    }

    #[test]
    fn already_optimal_start() {
        let report = minimize(DVector::from_vec(vec![0.0]), &LbfgsOptions::default(), |x| {
            (x[0] * x[0], x * 2.0)
        });
        assert!(report.converged);
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn exact_hessian_preconditioner_takes_one_step() {
        struct Quadratic {
            hessian: nalgebra::DMatrix<f64>,
            target: DVector<f64>,
        }
        impl Objective for Quadratic {
            fn value_and_gradient(&mut self, x: &DVector<f64>) -> (f64, DVector<f64>) {
                let d = x - &self.target;
                let g = &self.hessian * &d;
                (0.5 * d.dot(&g), g)
            }
            fn preconditioner(&mut self, _x: &DVector<f64>) -> Option<Preconditioner> {
                self.hessian.clone().cholesky()
            }
        }
        let mut q = Quadratic {
            hessian: nalgebra::DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.005, 0.0, 0.005, 1e-4]),
            target: DVector::from_vec(vec![1.0, -1.0, 2.0]),
        };
        let report = minimize_objective(DVector::zeros(3), &LbfgsOptions::default(), &mut q);
        assert!(report.converged);
        assert_eq!(report.iterations, 1);
        assert!((report.x - &q.target).amax() < 1e-9);
    }

    #[test]
    fn exact_changes_survive_a_large_offset() {
        // 1e12 + ½‖x − 1‖²: plain value differences lose everything below 1e-4
        struct Offset;
        impl Objective for Offset {
            fn value_and_gradient(&mut self, x: &DVector<f64>) -> (f64, DVector<f64>) {
                let d = x.add_scalar(-1.0);
                (1e12 + 0.5 * d.norm_squared(), d)
            }
            fn change(&mut self, x: &DVector<f64>, step: &DVector<f64>, _fx: f64, _f_next: f64) -> f64 {
                let d = x.add_scalar(-1.0);
                d.dot(step) + 0.5 * step.norm_squared()
            }
        }
        let options = LbfgsOptions {
            gradient_tolerance: 1e-12,
            ..LbfgsOptions::default()
        };
        let report = minimize_objective(DVector::from_element(4, 1.001), &options, &mut Offset);
        assert!(report.converged);
        assert!(report.history.windows(2).all(|w| w[1] <= w[0]));
    }
}
