// Index loops mirror the matrix notation of the identities under test.
#![allow(clippy::needless_range_loop)]
#![allow(dead_code)]

use prehistory::model::{DriftFunction, JumpMeasure, ModelSpec};

/// Adaptive Simpson quadrature on `[a, b]` to absolute tolerance `tol`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
            + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Integral over the real line split at `centre`, truncated where the integrand is negligible.
pub fn integrate_line(f: &dyn Fn(f64) -> f64, centre: f64, half_width: f64, tol: f64) -> f64 {
    let pieces = 16;
    let mut total = 0.0;
    for k in 0..pieces {
        let a = centre - half_width + 2.0 * half_width * k as f64 / pieces as f64;
        let b = centre - half_width + 2.0 * half_width * (k + 1) as f64 / pieces as f64;
        total += integrate(f, a, b, tol / pieces as f64);
    }
    total
}

pub fn gaussian_spec(
    drift: DriftFunction<f64>,
    eps: f64,
    horizon: f64,
    x0: f64,
    xt: f64,
) -> ModelSpec<f64> {
    ModelSpec::new(
        JumpMeasure::gaussian(drift, 1.0).unwrap(),
        eps,
        horizon,
        x0,
        xt,
    )
    .unwrap()
}

pub fn spec_with_kappa(
    drift: DriftFunction<f64>,
    kappa: f64,
    eps: f64,
    horizon: f64,
    x0: f64,
    xt: f64,
) -> ModelSpec<f64> {
    ModelSpec::new(
        JumpMeasure::new(drift, kappa, 1.0).unwrap(),
        eps,
        horizon,
        x0,
        xt,
    )
    .unwrap()
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(r, s)| r.iter().zip(s).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

/// Exhaustive path enumeration of a small absorbing chain started at `start`.
pub struct Enumeration {
    /// `(path, probability)`, paths of `steps + 1` states.
    pub paths: Vec<(Vec<usize>, f64)>,
}

impl Enumeration {
    pub fn new(rows: &[Vec<f64>], start: usize, steps: usize) -> Self {
        let dim = rows.len();
        let mut paths = vec![(vec![start], 1.0)];
        for _ in 0..steps {
            let mut next = Vec::with_capacity(paths.len() * dim);
            for (p, w) in &paths {
                let last = *p.last().unwrap();
                for j in 0..dim {
                    let mut q = p.clone();
                    q.push(j);
                    next.push((q, w * rows[last][j]));
                }
            }
            paths = next;
        }
        Self { paths }
    }

    /// Sum of probabilities of paths satisfying `pred`.
    pub fn mass(&self, pred: impl Fn(&[usize]) -> bool) -> f64 {
        self.paths
            .iter()
            .filter(|(p, _)| pred(p))
            .map(|(_, w)| w)
            .sum()
    }
}
