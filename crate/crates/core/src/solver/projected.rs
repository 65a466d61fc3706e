//! Bound-constrained limited-memory quasi-Newton with projected backtracking.

use std::collections::VecDeque;

const MEMORY: usize = 8;
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACK: usize = 40;

pub(crate) struct BoxResult {
    pub x: Vec<f64>,
    pub projected_gradient: f64,
    pub iterations: usize,
}

pub(crate) fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((xi, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *xi = xi.clamp(*l, *h);
    }
}

/// `‖P(x − g) − x‖∞`.
pub(crate) fn projected_gradient_norm(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((xi, gi), (l, h))| ((xi - gi).clamp(*l, *h) - xi).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimises `fun` over `[lo, hi]` starting at `x0`.
///
/// `fun` returns `None` where the objective is undefined (e.g. the embedded
/// power flow has no solution); the line search treats such points as
/// infinitely bad. Returns `None` only if `x0` itself is undefined.
pub(crate) fn minimize_box<F>(
    mut fun: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    tol: f64,
    max_iter: usize,
) -> Option<BoxResult>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut f, mut g) = fun(&x)?;
    let width = lo
        .iter()
        .zip(hi)
        .map(|(l, h)| h - l)
        .fold(0.0, f64::max)
        .max(1e-12);

    let mut s_hist: VecDeque<Vec<f64>> = VecDeque::with_capacity(MEMORY);
    let mut y_hist: VecDeque<Vec<f64>> = VecDeque::with_capacity(MEMORY);
    let mut iterations = 0;

    while iterations < max_iter {
        if projected_gradient_norm(&x, &g, lo, hi) <= tol {
            break;
        }
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)))
            .collect();
        let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(&free).map(|(x, &f)| if f { *x } else { 0.0 }).collect() };

        let q0 = mask(&g);
        let gmax = q0.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if gmax == 0.0 {
            break;
        }
        let steepest_scale = 0.1 * width / gmax;

        let mut d = two_loop(&q0, &s_hist, &y_hist, &free, steepest_scale);
        if dot(&d, &g) >= 0.0 {
            d = q0.iter().map(|v| -steepest_scale * v).collect();
            s_hist.clear();
            y_hist.clear();
        }

        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..MAX_BACKTRACK {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            project(&mut xn, lo, hi);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            if step.iter().all(|s| *s == 0.0) {
                break;
            }
            if let Some((fn_, gn)) = fun(&xn) {
                if fn_.is_finite() && fn_ <= f + ARMIJO * dot(&g, &step) {
                    accepted = Some((xn, fn_, gn, step));
                    break;
                }
            }
            t *= 0.5;
        }
        iterations += 1;

        let Some((xn, fn_, gn, s)) = accepted else {
            if s_hist.is_empty() {
                break;
            }
            s_hist.clear();
            y_hist.clear();
            continue;
        };
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if s_hist.len() == MEMORY {
                s_hist.pop_front();
                y_hist.pop_front();
            }
            s_hist.push_back(s.clone());
            y_hist.push_back(y);
        }
        let decrease = f - fn_;
        x = xn;
        f = fn_;
        g = gn;
        let step_norm = s.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if decrease <= 1e-15 * f.abs().max(1.0) && step_norm <= 1e-12 * width {
            break;
        }
    }

    let projected_gradient = projected_gradient_norm(&x, &g, lo, hi);
    Some(BoxResult {
        x,
        projected_gradient,
        iterations,
    })
}

/// L-BFGS two-loop recursion restricted to the free variables.
fn two_loop(
    q0: &[f64],
    s_hist: &VecDeque<Vec<f64>>,
    y_hist: &VecDeque<Vec<f64>>,
    free: &[bool],
    fallback_scale: f64,
) -> Vec<f64> {
    let fdot = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .zip(free)
            .filter(|(_, &f)| f)
            .map(|((x, y), _)| x * y)
            .sum()
    };
    let mut q = q0.to_vec();
    let k = s_hist.len();
    let mut alpha = vec![0.0; k];
    let mut rho = vec![0.0; k];
    for i in (0..k).rev() {
        let sy = fdot(&s_hist[i], &y_hist[i]);
        rho[i] = if sy > 0.0 { 1.0 / sy } else { 0.0 };
        alpha[i] = rho[i] * fdot(&s_hist[i], &q);
        for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
            *qj -= alpha[i] * yj;
        }
    }
    let gamma = match (s_hist.back(), y_hist.back()) {
        (Some(s), Some(y)) => {
            let yy = fdot(y, y);
            let sy = fdot(s, y);
            if yy > 0.0 && sy > 0.0 {
                sy / yy
            } else {
                fallback_scale
            }
        }
        _ => fallback_scale,
    };
    for v in q.iter_mut() {
        *v *= gamma;
    }
    for i in 0..k {
        let beta = rho[i] * fdot(&y_hist[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
            *qj += (alpha[i] - beta) * sj;
        }
    }
    q.iter()
        .zip(free)
        .map(|(v, &f)| if f { -v } else { 0.0 })
        .collect()
}
