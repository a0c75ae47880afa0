//! Limited-memory BFGS for smooth unconstrained problems.
//!
//! The search direction comes from the usual two-loop recursion over the
//! last `history_size` step/gradient-change pairs. Steps are chosen by a
//! bracketing line search with cubic interpolation that enforces the strong
//! Wolfe conditions. A solve stops when
//!
//! * the gradient norm drops below `gradient_tolerance`,
//! * the relative energy change `(f_k - f_{k+1}) / max(|f_k|, |f_{k+1}|)`
//!   drops below `relative_energy_tolerance` (an exact zero energy counts as
//!   no change), or
//! * `max_iterations` iterations have been taken.

#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;


/// A differentiable function. `evaluate` writes the gradient into `grad`
/// (same length as `x`, overwritten) and returns the value.
pub trait Objective {
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Objective for F {
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        self(x, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub relative_energy_tolerance: f64,
    pub history_size: usize,
    /// Armijo constant.
    pub sufficient_decrease: f64,
    /// Strong Wolfe curvature constant.
    pub curvature: f64,
    /// Objective evaluations allowed per line search.
    pub max_line_search_evaluations: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            gradient_tolerance: 1e-8,
            relative_energy_tolerance: 1e8 * f64::EPSILON,
            history_size: 10,
            sufficient_decrease: 1e-4,
            curvature: 0.9,
            max_line_search_evaluations: 40,
        }
    }
}

impl SolveConfig {
    fn validate(&self) -> Result<(), SolverError> {
        let ok = self.max_iterations > 0
            && self.gradient_tolerance > 0.0
            && self.relative_energy_tolerance >= 0.0
            && self.history_size > 0
            && self.sufficient_decrease > 0.0
            && self.sufficient_decrease < self.curvature
            && self.curvature < 1.0
            && self.max_line_search_evaluations > 0;
        if ok {
            Ok(())
        } else {
            Err(SolverError::InvalidConfig)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    RelativeEnergy,
    IterationCap,
    /// No step satisfying sufficient decrease was found, even along the
    /// steepest-descent direction.
    LineSearch,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Gradient => "gradient",
            Termination::RelativeEnergy => "relative-energy",
            Termination::IterationCap => "iteration-cap",
            Termination::LineSearch => "line-search",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x: Vec<f64>,
    pub energy: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Energy at the start and after every accepted step.
    pub energy_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("objective returned a non-finite value or gradient (last finite energy {energy})")]
    NonFinite { last_good: Vec<f64>, energy: f64 },
    #[error("invalid solver configuration")]
    InvalidConfig,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn all_finite(f: f64, g: &[f64]) -> bool {
    f.is_finite() && g.iter().all(|v| v.is_finite())
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// `-H g` by the two-loop recursion. The initial inverse Hessian is
/// `gamma * diag(scale)`, or `gamma * I` without a scale.
fn search_direction(history: &VecDeque<Pair>, g: &[f64], scale: Option<&[f64]>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = vec![0.0; history.len()];
    for (i, p) in history.iter().enumerate().rev() {
        let a = p.rho * dot(&p.s, &q);
        alphas[i] = a;
        for (qk, yk) in q.iter_mut().zip(&p.y) {
            *qk -= a * yk;
        }
    }
    match (history.back(), scale) {
        (Some(last), None) => {
            let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
            q.iter_mut().for_each(|qk| *qk *= gamma);
        }
        (Some(last), Some(d)) => {
            let ydy: f64 = last.y.iter().zip(d).map(|(y, d)| y * y * d).sum();
            let gamma = dot(&last.s, &last.y) / ydy;
            q.iter_mut().zip(d).for_each(|(qk, dk)| *qk *= gamma * dk);
        }
        (None, Some(d)) => q.iter_mut().zip(d).for_each(|(qk, dk)| *qk *= dk),
        (None, None) => {}
    }
    for (i, p) in history.iter().enumerate() {
        let b = p.rho * dot(&p.y, &q);
        for (qk, sk) in q.iter_mut().zip(&p.s) {
            *qk += (alphas[i] - b) * sk;
        }
    }
    for qk in &mut q {
        *qk = -*qk;
    }
    q
}

struct Trial {
    step: f64,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

enum Search {
    Accepted(Trial),
    Failed,
}

struct LineSearch<'a, O: Objective> {
    objective: &'a mut O,
    x: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    slope0: f64,
    config: &'a SolveConfig,
    evaluations: usize,
    buf: Vec<f64>,
}

impl<O: Objective> LineSearch<'_, O> {
    fn eval(&mut self, step: f64) -> Trial {
        for ((b, x), d) in self.buf.iter_mut().zip(self.x).zip(self.dir) {
            *b = x + step * d;
        }
        let mut g = vec![0.0; self.x.len()];
        let f = self.objective.evaluate(&self.buf, &mut g);
        self.evaluations += 1;
        let slope = dot(&g, self.dir);
        Trial { step, f, g, slope }
    }

    fn armijo(&self, t: &Trial) -> bool {
        t.f <= self.f0 + self.config.sufficient_decrease * t.step * self.slope0
    }

    fn curvature_ok(&self, t: &Trial) -> bool {
        t.slope.abs() <= -self.config.curvature * self.slope0
    }

    fn run(&mut self, initial_step: f64) -> Result<Search, SolverError> {
        let mut prev = Trial {
            step: 0.0,
            f: self.f0,
            g: Vec::new(),
            slope: self.slope0,
        };
        let mut step = initial_step;
        let mut first = true;
        while self.evaluations < self.config.max_line_search_evaluations {
            let t = self.eval(step);
            if !all_finite(t.f, &t.g) {
                // overshoot into an overflowing region: pull back
                step = prev.step + 0.5 * (step - prev.step);
                if step - prev.step <= f64::EPSILON * step.max(1.0) {
                    return Err(SolverError::NonFinite {
                        last_good: self.x.to_vec(),
                        energy: self.f0,
                    });
                }
                continue;
            }
            if !self.armijo(&t) || (!first && t.f >= prev.f) {
                return Ok(self.zoom(prev, t));
            }
            if self.curvature_ok(&t) {
                return Ok(Search::Accepted(t));
            }
            if t.slope >= 0.0 {
                return Ok(self.zoom(t, prev));
            }
            first = false;
            step = 2.0 * t.step;
            prev = t;
        }
        Ok(if prev.step > 0.0 {
            Search::Accepted(prev)
        } else {
            Search::Failed
        })
    }

    /// Shrinks the bracket `[lo, hi]` (in either order); `lo` always
    /// satisfies sufficient decrease.
    fn zoom(&mut self, mut lo: Trial, mut hi: Trial) -> Search {
        while self.evaluations < self.config.max_line_search_evaluations {
            let width = (hi.step - lo.step).abs();
            if width <= f64::EPSILON * lo.step.abs().max(hi.step.abs()) {
                break;
            }
            let step = cubic_minimizer(&lo, &hi);
            let t = self.eval(step);
            if !all_finite(t.f, &t.g) || !self.armijo(&t) || t.f >= lo.f {
                hi = t;
                continue;
            }
            if self.curvature_ok(&t) {
                return Search::Accepted(t);
            }
            if t.slope * (hi.step - lo.step) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
        if lo.step > 0.0 && lo.f < self.f0 {
            Search::Accepted(lo)
        } else {
            Search::Failed
        }
    }
}

/// Minimiser of the cubic through the bracket ends, kept at least 10% of
/// the bracket away from either end; bisection when the cubic is unusable.
fn cubic_minimizer(a: &Trial, b: &Trial) -> f64 {
    let (lo, hi) = if a.step < b.step { (a.step, b.step) } else { (b.step, a.step) };
    let guard = 0.1 * (hi - lo);
    let mid = 0.5 * (lo + hi);
    if !b.f.is_finite() {
        return mid;
    }
    let d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.step - b.step);
    let disc = d1 * d1 - a.slope * b.slope;
    if !(disc >= 0.0) {
        return mid;
    }
    let d2 = (b.step - a.step).signum() * disc.sqrt();
    let denom = b.slope - a.slope + 2.0 * d2;
    if denom == 0.0 {
        return mid;
    }
    let step = b.step - (b.step - a.step) * (b.slope + d2 - d1) / denom;
    if !step.is_finite() {
        return mid;
    }
    step.clamp(lo + guard, hi - guard)
}

/// Minimises `objective` starting from `x0`.
pub fn minimize<O: Objective>(
    objective: &mut O,
    x0: &[f64],
    config: &SolveConfig,
) -> Result<SolveReport, SolverError> {
    run(objective, x0, config, None)
}

/// [`minimize`] with a diagonal initial inverse Hessian, typically the
/// reciprocal of a Hessian diagonal estimate. Entries must be positive and
/// finite.
pub fn minimize_scaled<O: Objective>(
    objective: &mut O,
    x0: &[f64],
    config: &SolveConfig,
    inverse_diagonal: &[f64],
) -> Result<SolveReport, SolverError> {
    if inverse_diagonal.len() != x0.len() || inverse_diagonal.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(SolverError::InvalidConfig);
    }
    run(objective, x0, config, Some(inverse_diagonal))
}

fn run<O: Objective>(
    objective: &mut O,
    x0: &[f64],
    config: &SolveConfig,
    scale: Option<&[f64]>,
) -> Result<SolveReport, SolverError> {
    config.validate()?;
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = objective.evaluate(&x, &mut g);
    let mut evaluations = 1;
    if !all_finite(f, &g) {
        return Err(SolverError::NonFinite {
            last_good: x,
            energy: f,
        });
    }
    let mut trace = vec![f];
    let mut history: VecDeque<Pair> = VecDeque::with_capacity(config.history_size);
    let mut iterations = 0;

    let report = |x: Vec<f64>, f: f64, g: &[f64], iterations, evaluations, termination, trace| SolveReport {
        x,
        energy: f,
        gradient_norm: norm(g),
        iterations,
        evaluations,
        termination,
        energy_trace: trace,
    };

    if norm(&g) < config.gradient_tolerance {
        return Ok(report(x, f, &g, 0, evaluations, Termination::Gradient, trace));
    }

    while iterations < config.max_iterations {
        let mut dir = search_direction(&history, &g, scale);
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            history.clear();
            dir = search_direction(&history, &g, scale);
            slope = dot(&dir, &g);
        }

        let mut outcome = None;
        for attempt in 0..2 {
            let initial = if history.is_empty() && scale.is_none() {
                (1.0 / norm(&dir)).min(1.0)
            } else {
                1.0
            };
            let mut ls = LineSearch {
                objective: &mut *objective,
                x: &x,
                dir: &dir,
                f0: f,
                slope0: slope,
                config,
                evaluations: 0,
                buf: vec![0.0; n],
            };
            let result = ls.run(initial);
            evaluations += ls.evaluations;
            match result? {
                Search::Accepted(t) => {
                    outcome = Some(t);
                    break;
                }
                Search::Failed if attempt == 0 && !history.is_empty() => {
                    history.clear();
                    dir = search_direction(&history, &g, scale);
                    slope = dot(&dir, &g);
                }
                Search::Failed => break,
            }
        }
        let Some(t) = outcome else {
            return Ok(report(x, f, &g, iterations, evaluations, Termination::LineSearch, trace));
        };

        let s: Vec<f64> = dir.iter().map(|d| t.step * d).collect();
        let y: Vec<f64> = t.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > f64::EPSILON * dot(&y, &y) {
            if history.len() == config.history_size {
                history.pop_front();
            }
            history.push_back(Pair { s, y, rho: 1.0 / sy });
        }
        for (xk, dk) in x.iter_mut().zip(&dir) {
            *xk += t.step * dk;
        }
        let f_prev = f;
        f = t.f;
        g = t.g;
        iterations += 1;
        trace.push(f);

        if norm(&g) < config.gradient_tolerance {
            return Ok(report(x, f, &g, iterations, evaluations, Termination::Gradient, trace));
        }
        let scale = f_prev.abs().max(f.abs());
        let change = if scale > 0.0 { (f_prev - f) / scale } else { 0.0 };
        if change <= config.relative_energy_tolerance {
            return Ok(report(x, f, &g, iterations, evaluations, Termination::RelativeEnergy, trace));
        }
    }
    Ok(report(x, f, &g, iterations, evaluations, Termination::IterationCap, trace))
}

/// Central-difference gradient with step `h`.
pub fn finite_difference_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        g[1] = 200.0 * (b - a * a);
        (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
    }

    fn assert_monotone(trace: &[f64]) {
        assert!(trace.windows(2).all(|w| w[1] <= w[0]), "trace increased: {trace:?}");
    }

    #[test]
    fn shifted_bowl() {
        let mut f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 3.0);
            g[1] = 2.0 * (x[1] + 1.0);
            (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2)
        };
        let r = minimize(&mut f, &[0.0, 0.0], &SolveConfig::default()).unwrap();
        assert!(r.iterations <= 20);
        assert!(r.gradient_norm < 1e-8 || r.termination == Termination::RelativeEnergy);
        assert!((r.x[0] - 3.0).abs() < 1e-8 && (r.x[1] + 1.0).abs() < 1e-8);
        assert_monotone(&r.energy_trace);
    }

    #[test]
    fn rosenbrock_valley() {
        let r = minimize(&mut rosenbrock, &[-1.2, 1.0], &SolveConfig::default()).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{r:?}");
        assert_monotone(&r.energy_trace);
    }

    #[test]
    fn spd_quadratic_reaches_gradient_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let m = DMatrix::from_fn(10, 10, |_, _| rng.random_range(-1.0..1.0));
        let h = &m * m.transpose() + DMatrix::identity(10, 10);
        let b = DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
        let exact = h.clone().lu().solve(&b).unwrap();
        // written around the minimiser so the energy has no cancellation
        let mut f = |x: &[f64], g: &mut [f64]| {
            let xv = DVector::from_column_slice(x);
            let grad = &h * &xv - &b;
            g.copy_from_slice(grad.as_slice());
            let d = xv - &exact;
            0.5 * d.dot(&(&h * &d))
        };
        let config = SolveConfig {
            relative_energy_tolerance: 0.0,
            ..Default::default()
        };
        let r = minimize(&mut f, &[0.0; 10], &config).unwrap();
        assert_eq!(r.termination, Termination::Gradient, "{r:?}");
        assert!(r.gradient_norm < 1e-8);
        assert!(r.iterations < 100);
        assert!((DVector::from_vec(r.x.clone()) - exact).norm() < 1e-7);
        assert_monotone(&r.energy_trace);
    }

    #[test]
    fn start_at_minimum_takes_no_steps() {
        let mut f = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * x[0];
            x[0] * x[0]
        };
        let r = minimize(&mut f, &[0.0], &SolveConfig::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.termination, Termination::Gradient, "{r:?}");
    }

    #[test]
    fn deterministic_reports() {
        let a = minimize(&mut rosenbrock, &[-1.2, 1.0], &SolveConfig::default()).unwrap();
        let b = minimize(&mut rosenbrock, &[-1.2, 1.0], &SolveConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn translation_moves_minimizer() {
        let c = [0.5, -2.0];
        let mut shifted = |x: &[f64], g: &mut [f64]| rosenbrock(&[x[0] - c[0], x[1] - c[1]], g);
        let base = minimize(&mut rosenbrock, &[-1.2, 1.0], &SolveConfig::default()).unwrap();
        let moved = minimize(&mut shifted, &[-1.2 + c[0], 1.0 + c[1]], &SolveConfig::default()).unwrap();
        assert_eq!(base.iterations, moved.iterations);
        assert!((moved.x[0] - base.x[0] - c[0]).abs() < 1e-6);
        assert!((moved.x[1] - base.x[1] - c[1]).abs() < 1e-6);
    }

    #[test]
    fn nan_at_start_fails_with_iterate() {
        let mut f = |_: &[f64], g: &mut [f64]| {
            g[0] = 0.0;
            f64::NAN
        };
        match minimize(&mut f, &[1.5], &SolveConfig::default()) {
            Err(SolverError::NonFinite { last_good, .. }) => assert_eq!(last_good, vec![1.5]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn iteration_cap_is_respected() {
        let config = SolveConfig {
            max_iterations: 3,
            ..SolveConfig::default()
        };
        let r = minimize(&mut rosenbrock, &[-1.2, 1.0], &config).unwrap();
        assert_eq!(r.iterations, 3);
        assert_eq!(r.termination, Termination::IterationCap);
        assert_eq!(r.energy_trace.len(), 4);
    }

    #[test]
    fn finite_differences() {
        let g = finite_difference_gradient(|x| x[0] * x[0], &[2.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8);
        let z = finite_difference_gradient(|_| 7.0, &[1.0, -3.0, 2.0], 1e-3);
        assert_eq!(z, vec![0.0; 3]);
        let mut grad = [0.0; 2];
        rosenbrock(&[0.3, 0.7], &mut grad);
        let fd = finite_difference_gradient(|x| rosenbrock(x, &mut [0.0; 2]), &[0.3, 0.7], 1e-6);
        assert!((fd[0] - grad[0]).abs() < 1e-6 && (fd[1] - grad[1]).abs() < 1e-6);
    }
}
