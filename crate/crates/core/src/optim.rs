//! BFGS minimiser with a strong-Wolfe line search.
//!
//! Objective values of `+inf` (or NaN) are treated as "step too long" and the
//! line search backs off, so likelihoods may signal a non-PD covariance with
//! `-inf` without special handling by the caller.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    /// Convergence when the gradient infinity-norm drops below this.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Number of starting points (the first is the data-driven start).
    pub starts: usize,
    /// Largest infinity-norm of a single trial step.
    pub max_step: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iter: 500,
            starts: 3,
            max_step: 4.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub message: String,
}

impl Minimum {
    pub fn grad_inf_norm(&self) -> f64 {
        inf_norm(&self.grad)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Once no further progress is possible, the gradient is judged relative to
/// the objective's magnitude, since rounding in `f` limits how small it can get.
fn settled(g: &[f64], f: f64, settings: &OptimizerSettings) -> bool {
    inf_norm(g) < settings.grad_tol * f.abs().max(1.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], alpha: f64, p: &[f64]) -> Vec<f64> {
    x.iter().zip(p).map(|(a, b)| a + alpha * b).collect()
}

struct Probe {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

fn finite(f: f64) -> bool {
    f.is_finite()
}

/// Cubic interpolation minimiser on [lo, hi]; falls back to bisection.
fn interpolate(a: &Probe, b: &Probe) -> f64 {
    let (lo, hi) = if a.alpha < b.alpha { (a.alpha, b.alpha) } else { (b.alpha, a.alpha) };
    let d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    let mid = 0.5 * (lo + hi);
    if disc < 0.0 || !disc.is_finite() {
        return mid;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / (b.slope - a.slope + 2.0 * d2);
    let margin = 0.1 * (hi - lo);
    if t.is_finite() && t > lo + margin && t < hi - margin {
        t
    } else {
        mid
    }
}

fn line_search<F>(
    fg: &mut F,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    p: &[f64],
    alpha_init: f64,
) -> Option<Probe>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let slope0 = dot(g0, p);
    let eval = |fg: &mut F, alpha: f64| {
        let (f, g) = fg(&axpy(x, alpha, p));
        let slope = dot(&g, p);
        Probe { alpha, f, g, slope }
    };
    let mut prev = Probe { alpha: 0.0, f: f0, g: g0.to_vec(), slope: slope0 };
    let mut alpha = alpha_init;
    let mut best: Option<Probe> = None;
    for i in 0..40 {
        let cur = eval(fg, alpha);
        if !finite(cur.f) || cur.g.iter().any(|v| !v.is_finite()) {
            alpha = 0.5 * (prev.alpha + alpha);
            if alpha - prev.alpha < 1e-14 {
                break;
            }
            continue;
        }
        if cur.f > f0 + C1 * cur.alpha * slope0 || (i > 0 && cur.f >= prev.f) {
            return zoom(fg, x, p, f0, slope0, prev, cur, &mut best);
        }
        if cur.slope.abs() <= -C2 * slope0 {
            return Some(cur);
        }
        if cur.slope >= 0.0 {
            return zoom(fg, x, p, f0, slope0, cur, prev, &mut best);
        }
        if cur.f < f0 {
            best = Some(Probe { alpha: cur.alpha, f: cur.f, g: cur.g.clone(), slope: cur.slope });
        }
        let next = (2.0 * cur.alpha).min(cur.alpha + 10.0);
        prev = cur;
        alpha = next;
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn zoom<F>(
    fg: &mut F,
    x: &[f64],
    p: &[f64],
    f0: f64,
    slope0: f64,
    mut lo: Probe,
    mut hi: Probe,
    best: &mut Option<Probe>,
) -> Option<Probe>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    for _ in 0..40 {
        let alpha = interpolate(&lo, &hi);
        let (f, g) = fg(&axpy(x, alpha, p));
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            hi = Probe { alpha, f: f64::INFINITY, g, slope: f64::NAN };
            hi.slope = lo.slope.abs();
            continue;
        }
        let cur = Probe { alpha, slope: dot(&g, p), f, g };
        if cur.f > f0 + C1 * alpha * slope0 || cur.f >= lo.f {
            hi = cur;
        } else {
            if cur.slope.abs() <= -C2 * slope0 {
                return Some(cur);
            }
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = Probe { alpha: lo.alpha, f: lo.f, g: lo.g.clone(), slope: lo.slope };
            }
            lo = cur;
        }
        if (hi.alpha - lo.alpha).abs() < 1e-16 * lo.alpha.abs().max(1.0) {
            break;
        }
    }
    // Accept any sufficient-decrease point found along the way.
    if lo.alpha > 0.0 && lo.f < f0 {
        return Some(lo);
    }
    best.take()
}

/// Minimises `fg` (returning value and gradient) from `x0`.
pub fn bfgs<F>(mut fg: F, x0: &[f64], settings: &OptimizerSettings) -> Minimum
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut f, mut g) = fg(&x);
    if !f.is_finite() {
        return Minimum {
            x,
            f,
            grad: g,
            iterations: 0,
            converged: false,
            message: "objective not finite at the starting point".into(),
        };
    }
    let mut h = vec![0.0; n * n];
    let reset = |h: &mut Vec<f64>, scale: f64| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            h[i * n + i] = scale;
        }
    };
    reset(&mut h, 1.0);
    let mut fresh = true;
    let mut stalls = 0;
    for iter in 0..settings.max_iter {
        if inf_norm(&g) < settings.grad_tol {
            return Minimum { x, f, grad: g, iterations: iter, converged: true, message: "gradient tolerance reached".into() };
        }
        let mut p: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| h[i * n + j] * g[j]).sum::<f64>()).collect();
        if dot(&p, &g) >= 0.0 || p.iter().any(|v| !v.is_finite()) {
            reset(&mut h, 1.0);
            fresh = true;
            p = g.iter().map(|v| -v).collect();
        }
        let pmax = inf_norm(&p);
        let alpha0 = if pmax > settings.max_step { settings.max_step / pmax } else { 1.0 };
        let alpha0 = if fresh && iter == 0 { alpha0.min(1.0 / inf_norm(&g).max(1.0)) } else { alpha0 };
        let Some(probe) = line_search(&mut fg, &x, f, &g, &p, alpha0) else {
            if !fresh {
                reset(&mut h, 1.0);
                fresh = true;
                continue;
            }
            let converged = settled(&g, f, settings);
            return Minimum { x, f, grad: g, iterations: iter, converged, message: "line search failed".into() };
        };
        let s: Vec<f64> = p.iter().map(|v| v * probe.alpha).collect();
        let yv: Vec<f64> = probe.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let df = f - probe.f;
        x = axpy(&x, probe.alpha, &p);
        f = probe.f;
        g = probe.g;
        if df.abs() <= 1e-15 * f.abs().max(1.0) {
            stalls += 1;
            if stalls > 20 {
                let converged = settled(&g, f, settings);
                return Minimum { x, f, grad: g, iterations: iter + 1, converged, message: "no further progress".into() };
            }
        } else {
            stalls = 0;
        }
        let sy = dot(&s, &yv);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() {
            if fresh {
                reset(&mut h, sy / dot(&yv, &yv));
                fresh = false;
            }
            // H+ = (I - ρ s yᵀ) H (I - ρ y sᵀ) + ρ s sᵀ
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * yv[j]).sum()).collect();
            let yhy = dot(&yv, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }
    }
    let converged = settled(&g, f, settings);
    Minimum { x, f, grad: g, iterations: settings.max_iter, converged, message: "iteration limit".into() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_rosenbrock() {
        let fg = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            (f, g)
        };
        let m = bfgs(fg, &[-1.2, 1.0], &OptimizerSettings::default());
        assert!(m.converged, "{}", m.message);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn backs_off_infinite_region() {
        // f = x^2 - ln(1 - x) on x < 1, +inf beyond.
        let fg = |x: &[f64]| {
            if x[0] >= 1.0 {
                (f64::INFINITY, vec![f64::NAN])
            } else {
                (x[0] * x[0] - (1.0 - x[0]).ln(), vec![2.0 * x[0] + 1.0 / (1.0 - x[0])])
            }
        };
        let m = bfgs(fg, &[-3.0], &OptimizerSettings::default());
        assert!(m.converged);
        // 2x + 1/(1-x) = 0  =>  x = (1 - sqrt(3)) / 2
        assert!((m.x[0] - (1.0 - 3f64.sqrt()) / 2.0).abs() < 1e-7);
    }

    #[test]
    fn deterministic() {
        let fg = |x: &[f64]| (x.iter().map(|v| (v - 2.0).powi(4)).sum::<f64>(), x.iter().map(|v| 4.0 * (v - 2.0).powi(3)).collect());
        let a = bfgs(fg, &[0.0, 1.0, 5.0], &OptimizerSettings::default());
        let b = bfgs(fg, &[0.0, 1.0, 5.0], &OptimizerSettings::default());
        assert_eq!(a.x, b.x);
    }
}
