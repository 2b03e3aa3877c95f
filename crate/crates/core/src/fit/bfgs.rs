//! BFGS with a strong-Wolfe line search.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{IsfError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeSettings {
    pub max_iter: usize,
    /// Stop when the largest gradient component falls below this.
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
    /// Consecutive iterations without meaningful decrease before giving up.
    pub stall_iters: usize,
}

impl Default for MinimizeSettings {
    fn default() -> Self {
        MinimizeSettings { max_iter: 1000, grad_tol: 1e-8, c1: 1e-4, c2: 0.9, stall_iters: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    MaxIterations,
    Stalled,
    LineSearch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizeResult {
    pub theta: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

struct Point {
    x: DVector<f64>,
    f: f64,
    g: DVector<f64>,
}

struct Objective<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Objective<F> {
    fn at(&mut self, x: DVector<f64>) -> Point {
        let mut g = DVector::zeros(x.len());
        let f = (self.f)(x.as_slice(), g.as_mut_slice());
        self.evals += 1;
        let f = if f.is_finite() && g.iter().all(|v| v.is_finite()) { f } else { f64::NAN };
        Point { x, f, g }
    }
}

/// Minimizes `f`, which returns the value and writes the gradient.
pub fn minimize<F>(f: F, theta0: &[f64], settings: &MinimizeSettings) -> Result<MinimizeResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut obj = Objective { f, evals: 0 };
    let n = theta0.len();
    let mut cur = obj.at(DVector::from_column_slice(theta0));
    if cur.f.is_nan() {
        return Err(IsfError::NonFinite("objective at the starting point".into()));
    }
    let mut history = vec![cur.f];
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut stalls = 0;
    let mut iterations = 0;
    let finish = |cur: Point, iterations, evals, termination, history| MinimizeResult {
        theta: cur.x.as_slice().to_vec(),
        value: cur.f,
        iterations,
        evaluations: evals,
        termination,
        history,
    };

    loop {
        if cur.g.amax() <= settings.grad_tol {
            return Ok(finish(cur, iterations, obj.evals, Termination::Gradient, history));
        }
        if iterations >= settings.max_iter {
            return Ok(finish(cur, iterations, obj.evals, Termination::MaxIterations, history));
        }
        let mut p = -(&h * &cur.g);
        if p.dot(&cur.g) >= 0.0 {
            h.fill_with_identity();
            fresh = true;
            p = -cur.g.clone();
        }
        let alpha0 = if fresh { (1.0 / cur.g.norm()).min(1.0) } else { 1.0 };
        let next = match line_search(&mut obj, &cur, &p, alpha0, settings) {
            Some(next) => next,
            None if !fresh => {
                h.fill_with_identity();
                fresh = true;
                continue;
            }
            None => return Ok(finish(cur, iterations, obj.evals, Termination::LineSearch, history)),
        };
        iterations += 1;

        let s = &next.x - &cur.x;
        let y = &next.g - &cur.g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if fresh {
                // scale the initial inverse Hessian before the first update
                h *= sy / y.dot(&y);
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h += (&s * s.transpose()) * (rho * rho * yhy + rho);
            fresh = false;
        }

        let decrease = cur.f - next.f;
        if decrease <= 1e-15 * cur.f.abs().max(f64::MIN_POSITIVE) {
            stalls += 1;
        } else {
            stalls = 0;
        }
        history.push(next.f);
        cur = next;
        if stalls >= settings.stall_iters {
            return Ok(finish(cur, iterations, obj.evals, Termination::Stalled, history));
        }
    }
}

fn line_search<F: FnMut(&[f64], &mut [f64]) -> f64>(
    obj: &mut Objective<F>,
    start: &Point,
    p: &DVector<f64>,
    alpha0: f64,
    settings: &MinimizeSettings,
) -> Option<Point> {
    let (c1, c2) = (settings.c1, settings.c2);
    let phi0 = start.f;
    let dphi0 = start.g.dot(p);
    let trial = |obj: &mut Objective<F>, a: f64| {
        let pt = obj.at(&start.x + p * a);
        let d = pt.g.dot(p);
        (pt, d)
    };

    // (alpha, phi, dphi, point) of the previous trial
    let mut prev: (f64, f64, f64, Option<Point>) = (0.0, phi0, dphi0, None);
    let mut a = alpha0;
    for i in 0..40 {
        let (pt, d) = trial(obj, a);
        let phi = pt.f;
        if phi.is_nan() || phi > phi0 + c1 * a * dphi0 || (i > 0 && phi >= prev.1) {
            return zoom(obj, start, p, prev, (a, phi, d), settings);
        }
        if d.abs() <= -c2 * dphi0 {
            return Some(pt);
        }
        if d >= 0.0 {
            let cur = (a, phi, d, Some(pt));
            let hi = (prev.0, prev.1, prev.2);
            return zoom(obj, start, p, cur, hi, settings);
        }
        prev = (a, phi, d, Some(pt));
        a *= 2.0;
    }
    prev.3
}

fn zoom<F: FnMut(&[f64], &mut [f64]) -> f64>(
    obj: &mut Objective<F>,
    start: &Point,
    p: &DVector<f64>,
    mut lo: (f64, f64, f64, Option<Point>),
    mut hi: (f64, f64, f64),
    settings: &MinimizeSettings,
) -> Option<Point> {
    let (c1, c2) = (settings.c1, settings.c2);
    let phi0 = start.f;
    let dphi0 = start.g.dot(p);
    for _ in 0..40 {
        let (a_lo, a_hi) = (lo.0, hi.0);
        let width = (a_hi - a_lo).abs();
        if width <= 1e-16 * a_lo.abs().max(a_hi.abs()) {
            break;
        }
        let mut a = cubic_min(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2).unwrap_or(0.5 * (a_lo + a_hi));
        let (left, right) = (a_lo.min(a_hi), a_lo.max(a_hi));
        if !(a > left + 0.1 * width && a < right - 0.1 * width) {
            a = 0.5 * (a_lo + a_hi);
        }
        let pt = obj.at(&start.x + p * a);
        let phi = pt.f;
        let d = pt.g.dot(p);
        if phi.is_nan() || phi > phi0 + c1 * a * dphi0 || phi >= lo.1 {
            hi = (a, phi, d);
        } else {
            if d.abs() <= -c2 * dphi0 {
                return Some(pt);
            }
            if d * (a_hi - a_lo) >= 0.0 {
                hi = (lo.0, lo.1, lo.2);
            }
            lo = (a, phi, d, Some(pt));
        }
    }
    // sufficient decrease still holds at lo
    lo.3
}

/// Minimizer of the cubic interpolating values and slopes at `a` and `b`.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    if !fb.is_finite() || !db.is_finite() {
        return None;
    }
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    t.is_finite().then_some(t)
}
