//! Bridge chains on the lattice and their small-noise drifts.
//!
//! Two chains realize the process conditioned on both endpoints:
//!
//! * the forward chain `x̃` starts in the bin of `x0` at step 0 and moves with
//!   Doob-transformed kernels `L[i][j] = h[n+1][j] P[i][j] / h[n][i]`, where
//!   `h[n][i]` is the probability of sitting in the bin of `xT` at step `N`
//!   from bin `i` at step `n`;
//! * the backward chain `x̄` starts in the bin of `xT` at time `Δ` and moves
//!   with the Bayes-reversed kernels of the unconditioned chain, reaching the
//!   bin of `x0` after `N` steps.
//!
//! Both have the prehistory density as their marginal law (the backward chain
//! on mirrored step indices).

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianModel;
use crate::model::{ModelSpec, PathSample, StepConvention};
use crate::nop::{solve_nop_scanned, ShootingConfig};
use crate::nppd::{build_transition_matrix, fmt_float, DensitySequence, Grid, TransitionMatrix};
use crate::oracle::affine_limit_drift;
use crate::real::Real;
use crate::rng::{stream_id, substream};

/// Hitting vectors `h[n]`, stored normalized with a log scale per step.
#[derive(Debug, Clone, PartialEq)]
pub struct HittingSequence<T> {
    normalized: Vec<Vec<T>>,
    log_scale: Vec<T>,
}

impl<T: Real> HittingSequence<T> {
    pub fn steps(&self) -> usize {
        self.normalized.len() - 1
    }

    pub fn normalized(&self, n: usize) -> &[T] {
        &self.normalized[n]
    }

    pub fn log_scale(&self, n: usize) -> T {
        self.log_scale[n]
    }

    /// `h[n][i]` for interior `i`.
    pub fn value(&self, n: usize, i: usize) -> T {
        self.normalized[n][i] * self.log_scale[n].exp()
    }
}

/// `h[N] = 1{bin(xT)}`, `h[n] = P h[n+1]` restricted to interior bins.
pub fn hitting_probabilities<T: Real>(
    matrix: &TransitionMatrix<T>,
    grid: &Grid<T>,
    x_t: T,
    steps: usize,
) -> Result<HittingSequence<T>> {
    if matrix.n_bins() != grid.n_bins {
        return Err(Error::invalid(
            "matrix",
            "matrix and grid disagree on the bin count",
        ));
    }
    let end = grid.bin_of(x_t)?;
    let nb = grid.n_bins;
    let mut normalized = vec![Vec::new(); steps + 1];
    let mut log_scale = vec![T::zero(); steps + 1];
    let mut last = vec![T::zero(); nb];
    last[end] = T::one();
    normalized[steps] = last;
    for n in (0..steps).rev() {
        let next = &normalized[n + 1];
        let mut cur: Vec<T> = (0..nb)
            .map(|i| {
                let (lo, hi) = matrix.row_band(i);
                let row = matrix.row(i);
                (lo..hi).fold(T::zero(), |acc, j| acc + row[j] * next[j])
            })
            .collect();
        let max = cur.iter().copied().fold(T::zero(), T::max);
        if !(max > T::zero()) {
            return Err(Error::ZeroConditioningMass);
        }
        let inv = T::one() / max;
        cur.iter_mut().for_each(|v| *v = *v * inv);
        log_scale[n] = log_scale[n + 1] + max.ln();
        normalized[n] = cur;
    }
    Ok(HittingSequence {
        normalized,
        log_scale,
    })
}

/// Doob kernel `L[i][j] = h[n+1][j] P[i][j] / h[n][i]` with `0/0 = 0`; the
/// absorbing row and column are zero because `h` vanishes there.
pub fn tilde_kernel<T: Real>(
    matrix: &TransitionMatrix<T>,
    hits: &HittingSequence<T>,
    n: usize,
) -> Result<Vec<Vec<T>>> {
    if n >= hits.steps() {
        return Err(Error::invalid(
            "n",
            format!("step {n} is not below N = {}", hits.steps()),
        ));
    }
    let dim = matrix.dim();
    let nb = dim - 1;
    let (now, next) = (hits.normalized(n), hits.normalized(n + 1));
    let mut k = vec![vec![T::zero(); dim]; dim];
    for i in 0..nb {
        if now[i] == T::zero() {
            continue;
        }
        // h[n][i] is the row sum up to scale; normalizing by the recomputed sum
        // keeps rows stochastic even where h[n][i] has underflowed to subnormal.
        let row = &mut k[i];
        for (j, v) in row.iter_mut().enumerate().take(nb) {
            *v = next[j] * matrix.get(i, j);
        }
        let sum = row.iter().copied().fold(T::zero(), |a, b| a + b);
        if sum > T::zero() {
            row.iter_mut().for_each(|v| *v = *v / sum);
        }
    }
    Ok(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ChainDirection {
    /// `x̄`: from `xT` back to `x0` on the lattice `Δ + mε`, left-continuous.
    Backward,
    /// `x̃`: from `x0` to `xT` on the lattice `nε`, right-continuous.
    Forward,
}

#[derive(Debug, Clone, Copy)]
enum Weights<'a, T> {
    Backward(&'a DensitySequence<T>),
    Forward(&'a HittingSequence<T>),
}

/// A bridge chain ready for sampling; borrows the matrix and weight vectors.
#[derive(Debug, Clone)]
pub struct ReversedChain<'a, T> {
    pub direction: ChainDirection,
    pub pin_start: T,
    pub pin_end: T,
    pub grid: Grid<T>,
    pub epsilon: T,
    pub delta: T,
    matrix: &'a TransitionMatrix<T>,
    weights: Weights<'a, T>,
    start_bin: usize,
    steps: usize,
}

impl<'a, T: Real> ReversedChain<'a, T> {
    /// `x̃`, driven by Doob kernels from the hitting vectors toward `xT`.
    pub fn forward(
        matrix: &'a TransitionMatrix<T>,
        hits: &'a HittingSequence<T>,
        grid: &Grid<T>,
        spec: &ModelSpec<T>,
    ) -> Result<Self> {
        let start_bin = grid.bin_of(spec.x0)?;
        grid.bin_of(spec.x_t)?;
        if hits.steps() != spec.steps() {
            return Err(Error::invalid(
                "hits",
                "hitting vectors do not span the model's step count",
            ));
        }
        if hits.normalized(0)[start_bin] == T::zero() {
            return Err(Error::ZeroConditioningMass);
        }
        Ok(Self {
            direction: ChainDirection::Forward,
            pin_start: spec.x0,
            pin_end: spec.x_t,
            grid: *grid,
            epsilon: spec.epsilon,
            delta: spec.delta(),
            matrix,
            weights: Weights::Forward(hits),
            start_bin,
            steps: spec.steps(),
        })
    }

    /// `x̄`, driven by the Bayes-reversed kernels of the unconditioned laws.
    pub fn backward(
        matrix: &'a TransitionMatrix<T>,
        forward: &'a DensitySequence<T>,
        grid: &Grid<T>,
        spec: &ModelSpec<T>,
    ) -> Result<Self> {
        grid.bin_of(spec.x0)?;
        let start_bin = grid.bin_of(spec.x_t)?;
        if forward.steps() != spec.steps() {
            return Err(Error::invalid(
                "forward",
                "densities do not span the model's step count",
            ));
        }
        if forward.normalized(spec.steps())[start_bin] == T::zero() {
            return Err(Error::ZeroConditioningMass);
        }
        Ok(Self {
            direction: ChainDirection::Backward,
            pin_start: spec.x_t,
            pin_end: spec.x0,
            grid: *grid,
            epsilon: spec.epsilon,
            delta: spec.delta(),
            matrix,
            weights: Weights::Backward(forward),
            start_bin,
            steps: spec.steps(),
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Kernel of the chain's own step `k` (`0 <= k < N`).
    pub fn kernel(&self, k: usize) -> Result<Vec<Vec<T>>> {
        if k >= self.steps {
            return Err(Error::invalid(
                "k",
                format!("step {k} is not below N = {}", self.steps),
            ));
        }
        match self.weights {
            Weights::Forward(h) => tilde_kernel(self.matrix, h, k),
            Weights::Backward(p) => {
                crate::nppd::reversed_kernel(self.matrix, p, self.steps - 1 - k)
            }
        }
    }

    /// Times of the chain's knots.
    pub fn knot_times(&self) -> Vec<T> {
        let offset = match self.direction {
            ChainDirection::Forward => T::zero(),
            ChainDirection::Backward => self.delta,
        };
        (0..=self.steps)
            .map(|k| offset + T::from_usize_lossy(k) * self.epsilon)
            .collect()
    }

    fn step_from<R: Rng + ?Sized>(&self, i: usize, k: usize, rng: &mut R) -> Option<usize> {
        let m = self.matrix;
        let (lo, hi, weight): (usize, usize, Box<dyn Fn(usize) -> T + '_>) = match self.weights {
            Weights::Forward(h) => {
                let next = h.normalized(k + 1);
                let (lo, hi) = m.row_band(i);
                (lo, hi, Box::new(move |j| m.get(i, j) * next[j]))
            }
            Weights::Backward(p) => {
                let prev = p.normalized(self.steps - 1 - k);
                let (lo, hi) = m.col_band(i);
                (lo, hi, Box::new(move |j| prev[j] * m.get(j, i)))
            }
        };
        let total = (lo..hi).fold(T::zero(), |acc, j| acc + weight(j));
        if !(total > T::zero()) {
            return None;
        }
        let target = T::lit(rng.random::<f64>()) * total;
        let mut acc = T::zero();
        let mut last_positive = None;
        for j in lo..hi {
            let w = weight(j);
            if w > T::zero() {
                last_positive = Some(j);
                acc = acc + w;
                if target < acc {
                    return Some(j);
                }
            }
        }
        last_positive
    }

    /// Bin indices visited by one sampled path, `N + 1` entries.
    pub fn sample_bins<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<usize>> {
        let mut bins = Vec::with_capacity(self.steps + 1);
        let mut i = self.start_bin;
        bins.push(i);
        for k in 0..self.steps {
            i = self.step_from(i, k, rng).ok_or_else(|| {
                Error::Numeric(format!("bridge chain has no admissible move at step {k}"))
            })?;
            bins.push(i);
        }
        Ok(bins)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PathSample<T>> {
        let bins = self.sample_bins(rng)?;
        let convention = match self.direction {
            ChainDirection::Forward => StepConvention::RightContinuous,
            ChainDirection::Backward => StepConvention::LeftContinuous,
        };
        Ok(PathSample {
            times: self.knot_times(),
            states: bins.iter().map(|&b| self.grid.midpoint(b)).collect(),
            convention,
        })
    }

    /// `count` paths, path `k` drawn from substream `(block, k)` of `seed`.
    pub fn sample_many(&self, count: usize, seed: u64, block: u32) -> Result<Vec<PathSample<T>>> {
        (0..count)
            .into_par_iter()
            .map(|k| self.sample(&mut substream(seed, stream_id(block, k as u32))))
            .collect()
    }
}

pub fn sample_bridge<T: Real, R: Rng + ?Sized>(
    chain: &ReversedChain<'_, T>,
    rng: &mut R,
) -> Result<PathSample<T>> {
    chain.sample(rng)
}

/// Columns `path,k,t,x`.
pub fn write_paths_csv<T: Real, W: Write>(
    paths: &[PathSample<T>],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "path,k,t,x")?;
    for (p, path) in paths.iter().enumerate() {
        for (k, (&t, &x)) in path.times.iter().zip(&path.states).enumerate() {
            writeln!(w, "{p},{k},{},{}", fmt_float(t), fmt_float(x))?;
        }
    }
    Ok(())
}

/// Drifts `b̄(x, t)` of the reversed bridge and `b̃(x, t)` of the forward bridge in the small-noise limit.
#[derive(Debug, Clone)]
pub enum LimitDriftField<T> {
    /// Limits of the affine Gaussian conditioned-jump means.
    AffineClosedForm {
        a0: T,
        a1: T,
        x0: T,
        x_t: T,
        horizon: T,
    },
    /// Fresh local optimal-path solves.
    NopLocal(NopLocalDrift<T>),
}

impl<T: Real> LimitDriftField<T> {
    pub fn tilde(&self, x: T, t: T) -> Result<T> {
        match self {
            LimitDriftField::AffineClosedForm {
                a0,
                a1,
                x_t,
                horizon,
                ..
            } => Ok(affine_limit_drift(*a0, *a1, x, *x_t, *horizon - t)),
            LimitDriftField::NopLocal(d) => d.tilde(x, t),
        }
    }

    pub fn bar(&self, x: T, t: T) -> Result<T> {
        match self {
            LimitDriftField::AffineClosedForm {
                a0,
                a1,
                x0,
                horizon,
                ..
            } => Ok(affine_limit_drift(*a0, *a1, x, *x0, *horizon - t)),
            LimitDriftField::NopLocal(d) => d.bar(x, t),
        }
    }
}

pub fn limit_drift<T: Real>(field: &LimitDriftField<T>, x: T, t: T) -> Result<T> {
    field.tilde(x, t)
}

#[derive(Debug, Clone)]
struct DriftCache<T> {
    xs: Vec<T>,
    ts: Vec<T>,
    tilde: Vec<Vec<T>>,
    bar: Vec<Vec<T>>,
}

/// Drifts from local boundary-value solves:
/// `b̃(x, t) = H_α(x, α(0))` for the optimal path from `(x, t)` to `(xT, T)`, and
/// `b̄(x, t) = -H_α(x, α(T - t))` for the optimal path from `(x0, 0)` to `(x, T - t)`.
#[derive(Debug, Clone)]
pub struct NopLocalDrift<T> {
    pub model: HamiltonianModel<T>,
    pub x0: T,
    pub x_t: T,
    pub horizon: T,
    pub alpha_range: (T, T),
    pub grid_points: usize,
    pub shooting: ShootingConfig<T>,
    cache: Option<DriftCache<T>>,
}

impl<T: Real> NopLocalDrift<T> {
    pub fn new(
        model: HamiltonianModel<T>,
        x0: T,
        x_t: T,
        horizon: T,
        alpha_range: (T, T),
        grid_points: usize,
    ) -> Self {
        Self {
            model,
            x0,
            x_t,
            horizon,
            alpha_range,
            grid_points,
            shooting: ShootingConfig::default(),
            cache: None,
        }
    }

    fn solve_tilde(&self, x: T, t: T) -> Result<T> {
        let rem = self.horizon - t;
        let r = solve_nop_scanned(
            &self.model,
            x,
            self.x_t,
            rem,
            self.alpha_range,
            self.grid_points,
            &self.shooting,
        )?;
        Ok(self.model.h_alpha(x, r.alpha0))
    }

    fn solve_bar(&self, x: T, t: T) -> Result<T> {
        let dur = self.horizon - t;
        let r = solve_nop_scanned(
            &self.model,
            self.x0,
            x,
            dur,
            self.alpha_range,
            self.grid_points,
            &self.shooting,
        )?;
        Ok(-self.model.h_alpha(x, r.trajectory.end().alpha))
    }

    /// Precompute both drifts on the lattice `xs × ts`; later evaluations
    /// interpolate bilinearly inside it and solve afresh outside.
    pub fn with_cache(mut self, xs: Vec<T>, ts: Vec<T>) -> Result<Self> {
        if xs.len() < 2 || ts.len() < 2 {
            return Err(Error::invalid(
                "cache",
                "cache lattice needs at least two points per axis",
            ));
        }
        let nodes: Vec<(usize, usize)> = (0..xs.len())
            .flat_map(|a| (0..ts.len()).map(move |b| (a, b)))
            .collect();
        let solved: Vec<(T, T)> = nodes
            .par_iter()
            .map(|&(a, b)| {
                let tl = self.solve_tilde(xs[a], ts[b]).unwrap_or_else(|_| T::nan());
                let br = self.solve_bar(xs[a], ts[b]).unwrap_or_else(|_| T::nan());
                (tl, br)
            })
            .collect();
        let mut tilde = vec![vec![T::nan(); ts.len()]; xs.len()];
        let mut bar = tilde.clone();
        for (&(a, b), &(tl, br)) in nodes.iter().zip(&solved) {
            tilde[a][b] = tl;
            bar[a][b] = br;
        }
        self.cache = Some(DriftCache { xs, ts, tilde, bar });
        Ok(self)
    }

    fn cached(&self, x: T, t: T, which: fn(&DriftCache<T>) -> &Vec<Vec<T>>) -> Option<T> {
        let c = self.cache.as_ref()?;
        let locate = |grid: &[T], v: T| -> Option<(usize, T)> {
            if v < grid[0] || v > grid[grid.len() - 1] {
                return None;
            }
            let k = grid.partition_point(|&g| g <= v).clamp(1, grid.len() - 1);
            Some((k - 1, (v - grid[k - 1]) / (grid[k] - grid[k - 1])))
        };
        let (a, u) = locate(&c.xs, x)?;
        let (b, w) = locate(&c.ts, t)?;
        let f = which(c);
        let v = (T::one() - u) * (T::one() - w) * f[a][b]
            + u * (T::one() - w) * f[a + 1][b]
            + (T::one() - u) * w * f[a][b + 1]
            + u * w * f[a + 1][b + 1];
        v.is_finite().then_some(v)
    }

    pub fn tilde(&self, x: T, t: T) -> Result<T> {
        match self.cached(x, t, |c| &c.tilde) {
            Some(v) => Ok(v),
            None => self.solve_tilde(x, t),
        }
    }

    pub fn bar(&self, x: T, t: T) -> Result<T> {
        match self.cached(x, t, |c| &c.bar) {
            Some(v) => Ok(v),
            None => self.solve_bar(x, t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlnConfig<T> {
    pub epsilons: Vec<T>,
    pub samples: usize,
    /// Deviations are measured on `[0, t_star_fraction · T]`.
    pub t_star_fraction: T,
    pub bootstrap_resamples: usize,
}

impl<T: Real> Default for LlnConfig<T> {
    fn default() -> Self {
        Self {
            epsilons: Vec::new(),
            samples: 200,
            t_star_fraction: T::lit(0.9),
            bootstrap_resamples: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlnRow<T> {
    pub epsilon: T,
    pub median: T,
    pub p90: T,
    pub samples: usize,
    /// 95% percentile-bootstrap interval for the median.
    pub median_ci: (T, T),
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted<T: Real>(sorted: &[T], p: T) -> T {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * T::from_usize_lossy(n - 1);
    let k = pos.floor().to_usize().unwrap_or(0).min(n - 2);
    let frac = pos - T::from_usize_lossy(k);
    sorted[k] + frac * (sorted[k + 1] - sorted[k])
}

/// Sup of `|path(t) - φ(t)|` over `[0, t_star]` for a right-continuous lattice path,
/// checking both ends of every constant piece.
pub fn sup_deviation<T: Real>(path: &PathSample<T>, nop: &(dyn Fn(T) -> T + Sync), t_star: T) -> T {
    let mut sup = T::zero();
    for (k, (&t, &x)) in path.times.iter().zip(&path.states).enumerate() {
        if t > t_star {
            break;
        }
        let end = path.times.get(k + 1).copied().unwrap_or(t).min(t_star);
        sup = sup.max((x - nop(t)).abs()).max((x - nop(end)).abs());
    }
    sup
}

/// Median and 90th percentile of the sup-deviation of forward bridge paths from
/// the optimal path, for each `ε` in `cfg.epsilons`.
pub fn lln_experiment<T: Real>(
    spec: &ModelSpec<T>,
    grid_for: &(dyn Fn(T) -> Result<Grid<T>> + Sync),
    nop: &(dyn Fn(T) -> T + Sync),
    cfg: &LlnConfig<T>,
    seed: u64,
) -> Result<Vec<LlnRow<T>>> {
    if cfg.samples == 0 {
        return Err(Error::invalid("samples", "at least one sample is required"));
    }
    let t_star = cfg.t_star_fraction * spec.horizon;
    let mut rows = Vec::with_capacity(cfg.epsilons.len());
    for (e, &eps) in cfg.epsilons.iter().enumerate() {
        let s = spec.with_epsilon(eps)?;
        let grid = grid_for(eps)?;
        let matrix = build_transition_matrix(&s, &grid);
        let hits = hitting_probabilities(&matrix, &grid, s.x_t, s.steps())?;
        let chain = ReversedChain::forward(&matrix, &hits, &grid, &s)?;
        let mut devs: Vec<T> = (0..cfg.samples)
            .into_par_iter()
            .map(|k| {
                let path = chain.sample(&mut substream(seed, stream_id(2 * e as u32, k as u32)))?;
                Ok(sup_deviation(&path, nop, t_star))
            })
            .collect::<Result<_>>()?;
        devs.sort_by(|a, b| a.partial_cmp(b).expect("finite deviation"));
        let median = quantile_sorted(&devs, T::lit(0.5));
        let p90 = quantile_sorted(&devs, T::lit(0.9));
        let median_ci = bootstrap_median_ci(&devs, cfg.bootstrap_resamples, seed, 2 * e as u32 + 1);
        rows.push(LlnRow {
            epsilon: eps,
            median,
            p90,
            samples: cfg.samples,
            median_ci,
        });
    }
    Ok(rows)
}

/// 95% percentile-bootstrap interval of the median.
pub fn bootstrap_median_ci<T: Real>(data: &[T], resamples: usize, seed: u64, block: u32) -> (T, T) {
    if resamples == 0 || data.is_empty() {
        return (T::nan(), T::nan());
    }
    let mut meds: Vec<T> = (0..resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, stream_id(block, b as u32));
            let mut s: Vec<T> = (0..data.len())
                .map(|_| data[rng.random_range(0..data.len())])
                .collect();
            s.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            quantile_sorted(&s, T::lit(0.5))
        })
        .collect();
    meds.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    (
        quantile_sorted(&meds, T::lit(0.025)),
        quantile_sorted(&meds, T::lit(0.975)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles() {
        let v = [1.0_f64, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 5.0);
        assert!((quantile_sorted(&v, 0.9) - 4.6_f64).abs() < 1e-12);
    }

    #[test]
    fn affine_drift_field() {
        let f = LimitDriftField::AffineClosedForm {
            a0: 0.0_f64,
            a1: 0.0,
            x0: 0.0,
            x_t: 1.0,
            horizon: 2.0,
        };
        assert!((f.tilde(0.25, 1.0).unwrap() - 0.75_f64).abs() < 1e-15);
        assert!((f.bar(0.25, 1.0).unwrap() + 0.25_f64).abs() < 1e-15);
    }
}
