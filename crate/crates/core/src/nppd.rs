//! Lattice approximation of the prehistory density.
//!
//! The state space `[xl, xr)` is cut into `N_x` half-open bins plus one
//! absorbing state (index `N_x`, bins are 0-based) that collects mass leaving
//! the domain. The chain jumps from bin midpoint `x(i)` into bin `j` with
//! probability `μ_{x(i)}((D_j - x(i))/ε)`. The forward recursion propagates
//! the unconditioned law from `x0`; the backward recursion runs the Bayes-
//! reversed kernels from the bin of `xT` and yields the law at every step
//! conditioned on both endpoints.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::{HamiltonianModel, PhaseTrajectory};
use crate::model::ModelSpec;
use crate::nop::{solve_nop_scanned, ShootingConfig, ShootingResult};
use crate::real::{steps_floor, Real};

pub const DEFAULT_BINS: usize = 400;
pub const DEFAULT_PADDING: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid<T> {
    pub xl: T,
    pub xr: T,
    pub n_bins: usize,
}

impl<T: Real> Grid<T> {
    pub fn new(xl: T, xr: T, n_bins: usize) -> Result<Self> {
        if !(xl.is_finite() && xr.is_finite() && xl < xr) {
            return Err(Error::invalid(
                "grid",
                format!("need finite xl < xr, got [{xl}, {xr})"),
            ));
        }
        if n_bins < 2 {
            return Err(Error::invalid(
                "n_bins",
                format!("at least 2 bins are required, got {n_bins}"),
            ));
        }
        Ok(Self { xl, xr, n_bins })
    }

    pub fn width(&self) -> T {
        (self.xr - self.xl) / T::from_usize_lossy(self.n_bins)
    }

    /// Left edge of bin `k` (`k = n_bins` gives `xr`).
    pub fn edge(&self, k: usize) -> T {
        self.xl + (self.xr - self.xl) * T::from_usize_lossy(k) / T::from_usize_lossy(self.n_bins)
    }

    pub fn midpoint(&self, i: usize) -> T {
        self.xl
            + (self.xr - self.xl) * (T::from_usize_lossy(i) + T::lit(0.5))
                / T::from_usize_lossy(self.n_bins)
    }

    pub fn midpoints(&self) -> Vec<T> {
        (0..self.n_bins).map(|i| self.midpoint(i)).collect()
    }

    /// Absorbing-state index.
    pub fn absorbing(&self) -> usize {
        self.n_bins
    }

    /// Bin containing `x` under the half-open convention; quotients within
    /// rounding of an edge are assigned to the bin starting at that edge.
    pub fn bin_of(&self, x: T) -> Result<usize> {
        if !(x >= self.xl && x < self.xr) {
            return Err(Error::OutOfDomain {
                x: x.as_f64(),
                xl: self.xl.as_f64(),
                xr: self.xr.as_f64(),
            });
        }
        Ok(steps_floor(x - self.xl, self.width()).min(self.n_bins - 1))
    }
}

pub fn build_grid<T: Real>(xl: T, xr: T, n_bins: usize) -> Result<Grid<T>> {
    Grid::new(xl, xr, n_bins)
}

/// Grid padded by `padding` times the span of the endpoints and (if given)
/// the NOP's range on either side.
pub fn default_grid<T: Real>(
    spec: &ModelSpec<T>,
    nop: Option<&PhaseTrajectory<T>>,
    n_bins: usize,
    padding: T,
) -> Result<Grid<T>> {
    let (mut lo, mut hi) = (spec.x0.min(spec.x_t), spec.x0.max(spec.x_t));
    if let Some(traj) = nop {
        let (a, b) = traj.x_range();
        lo = lo.min(a);
        hi = hi.max(b);
    }
    let span = if hi > lo { hi - lo } else { T::one() };
    Grid::new(lo - padding * span, hi + padding * span, n_bins)
}

/// Warning text when bins are coarser than half the jump scale `εσ`.
pub fn resolution_warning<T: Real>(spec: &ModelSpec<T>, grid: &Grid<T>) -> Option<String> {
    let limit = spec.epsilon * spec.measure.sigma() / T::lit(2.0);
    (grid.width() > limit).then(|| {
        format!(
            "bin width {} exceeds epsilon*sigma/2 = {}; the lattice kernel will be visibly smeared",
            grid.width(),
            limit
        )
    })
}

/// Row-stochastic `(N_x + 1) × (N_x + 1)` matrix of the lattice chain.
///
/// Rows and columns restricted to interior bins carry their nonzero band so
/// recursions skip entries that underflowed to exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix<T> {
    dim: usize,
    data: Vec<T>,
    row_band: Vec<(usize, usize)>,
    col_band: Vec<(usize, usize)>,
}

impl<T: Real> TransitionMatrix<T> {
    /// Build from dense rows. The last row must be the absorbing row.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let dim = rows.len();
        if dim < 3 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid(
                "matrix",
                "rows must form a square matrix of size at least 3",
            ));
        }
        let abs = dim - 1;
        for (j, &v) in rows[abs].iter().enumerate() {
            if v != if j == abs { T::one() } else { T::zero() } {
                return Err(Error::invalid("matrix", "last row must be absorbing"));
            }
        }
        let data = rows.into_iter().flatten().collect();
        Ok(Self::with_bands(dim, data))
    }

    fn with_bands(dim: usize, data: Vec<T>) -> Self {
        let n = dim - 1;
        let mut row_band = vec![(0, 0); n];
        let mut col_band = vec![(usize::MAX, 0); n];
        for i in 0..n {
            let row = &data[i * dim..i * dim + n];
            let first = row.iter().position(|&v| v != T::zero());
            if let Some(lo) = first {
                let hi = n - row.iter().rev().position(|&v| v != T::zero()).unwrap_or(0);
                row_band[i] = (lo, hi);
                for j in lo..hi {
                    if row[j] != T::zero() {
                        let cb = &mut col_band[j];
                        cb.0 = cb.0.min(i);
                        cb.1 = cb.1.max(i + 1);
                    }
                }
            }
        }
        for cb in &mut col_band {
            if cb.0 == usize::MAX {
                *cb = (0, 0);
            }
        }
        Self {
            dim,
            data,
            row_band,
            col_band,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_bins(&self) -> usize {
        self.dim - 1
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.dim + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Interior columns `[lo, hi)` outside which row `i` is zero (interior `i` only).
    pub fn row_band(&self, i: usize) -> (usize, usize) {
        self.row_band[i]
    }

    /// Interior rows `[lo, hi)` outside which column `j` is zero (interior `j` only).
    pub fn col_band(&self, j: usize) -> (usize, usize) {
        self.col_band[j]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        self.data.chunks(self.dim).map(|r| r.to_vec()).collect()
    }
}

/// Transition matrix of the lattice chain for `spec` on `grid`.
pub fn build_transition_matrix<T: Real>(
    spec: &ModelSpec<T>,
    grid: &Grid<T>,
) -> TransitionMatrix<T> {
    let n = grid.n_bins;
    let dim = n + 1;
    let eps = spec.epsilon;
    let measure = &spec.measure;
    let edges: Vec<T> = (0..=n).map(|k| grid.edge(k)).collect();
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = grid.midpoint(i);
            let mut row = vec![T::zero(); dim];
            let bin = |j: usize| {
                measure.bin_probability(x, (edges[j] - x) / eps, (edges[j + 1] - x) / eps)
            };
            let target = x + eps * measure.drift().eval(x);
            let c = if target < grid.xl {
                0
            } else if target >= grid.xr {
                n - 1
            } else {
                steps_floor(target - grid.xl, grid.width()).min(n - 1)
            };
            row[c] = bin(c);
            // Bin masses decay monotonically away from the jump mean, so the
            // first exact zero ends the nonzero run on each side.
            for j in (c + 1)..n {
                let p = bin(j);
                if p == T::zero() && edges[j] > target {
                    break;
                }
                row[j] = p;
            }
            for j in (0..c).rev() {
                let p = bin(j);
                if p == T::zero() && edges[j + 1] <= target {
                    break;
                }
                row[j] = p;
            }
            row[n] = measure.outside_probability(x, (grid.xl - x) / eps, (grid.xr - x) / eps);
            row
        })
        .collect();
    let mut data = Vec::with_capacity(dim * dim);
    for row in rows {
        data.extend(row);
    }
    data.extend((0..dim).map(|j| if j == n { T::one() } else { T::zero() }));
    TransitionMatrix::with_bands(dim, data)
}

/// Unconditioned laws `p[n]`, `n = 0..=N`.
///
/// The interior part of each step is stored normalized to unit mass, with the
/// logarithm of its true mass kept alongside; the absorbing state holds the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySequence<T> {
    interior: Vec<Vec<T>>,
    log_mass: Vec<T>,
}

impl<T: Real> DensitySequence<T> {
    /// `N`.
    pub fn steps(&self) -> usize {
        self.interior.len() - 1
    }

    pub fn n_bins(&self) -> usize {
        self.interior[0].len()
    }

    /// Interior law at step `n` normalized to unit mass.
    pub fn normalized(&self, n: usize) -> &[T] {
        &self.interior[n]
    }

    /// Natural log of the interior mass at step `n`.
    pub fn log_mass(&self, n: usize) -> T {
        self.log_mass[n]
    }

    /// Mass in the absorbing state at step `n`.
    pub fn escape_mass(&self, n: usize) -> T {
        -self.log_mass[n].exp_m1()
    }

    /// `p[n][i]` including the absorbing index `N_x`.
    pub fn prob(&self, n: usize, i: usize) -> T {
        if i == self.n_bins() {
            self.escape_mass(n)
        } else {
            self.interior[n][i] * self.log_mass[n].exp()
        }
    }

    /// Full `N_x + 1` vector at step `n`.
    pub fn vector(&self, n: usize) -> Vec<T> {
        (0..=self.n_bins()).map(|i| self.prob(n, i)).collect()
    }
}

/// `p[n+1] = p[n] P` from a point mass at the bin of `x0`.
pub fn forward_recursion<T: Real>(
    matrix: &TransitionMatrix<T>,
    grid: &Grid<T>,
    x0: T,
    steps: usize,
) -> Result<DensitySequence<T>> {
    check_dims(matrix, grid)?;
    let start = grid.bin_of(x0)?;
    let mut p0 = vec![T::zero(); grid.n_bins];
    p0[start] = T::one();
    let mut start_vec = p0;
    let mut seq = DensitySequence {
        interior: Vec::with_capacity(steps + 1),
        log_mass: vec![T::zero()],
    };
    seq.interior.push(start_vec.clone());
    for _ in 0..steps {
        let next = forward_step(matrix, &start_vec);
        let mass: T = next.iter().copied().sum();
        let prev_log = *seq.log_mass.last().expect("nonempty");
        if mass > T::zero() {
            let inv = T::one() / mass;
            start_vec = next.into_iter().map(|v| v * inv).collect();
            seq.log_mass.push(prev_log + mass.ln());
        } else {
            start_vec = vec![T::zero(); grid.n_bins];
            seq.log_mass.push(T::neg_infinity());
        }
        seq.interior.push(start_vec.clone());
    }
    Ok(seq)
}

fn forward_step<T: Real>(matrix: &TransitionMatrix<T>, p: &[T]) -> Vec<T> {
    let n = matrix.n_bins();
    let mut next = vec![T::zero(); n];
    for (i, &pi) in p.iter().enumerate() {
        if pi == T::zero() {
            continue;
        }
        let (lo, hi) = matrix.row_band(i);
        let row = matrix.row(i);
        for j in lo..hi {
            next[j] = next[j] + pi * row[j];
        }
    }
    next
}

fn check_dims<T: Real>(matrix: &TransitionMatrix<T>, grid: &Grid<T>) -> Result<()> {
    if matrix.n_bins() != grid.n_bins {
        return Err(Error::invalid(
            "matrix",
            format!(
                "matrix has {} bins but the grid has {}",
                matrix.n_bins(),
                grid.n_bins
            ),
        ));
    }
    Ok(())
}

/// Bayes-reversed kernel `P̄⁽ⁿ⁾[i][j] = p[n][j] P[j][i] / p[n+1][i]` with `0/0 = 0`.
pub fn reversed_kernel<T: Real>(
    matrix: &TransitionMatrix<T>,
    p: &DensitySequence<T>,
    n: usize,
) -> Result<Vec<Vec<T>>> {
    if n >= p.steps() {
        return Err(Error::invalid(
            "n",
            format!("step {n} is not below N = {}", p.steps()),
        ));
    }
    let dim = matrix.dim();
    let now = p.vector(n);
    let next = p.vector(n + 1);
    let mut k = vec![vec![T::zero(); dim]; dim];
    for i in 0..dim {
        if next[i] == T::zero() {
            continue;
        }
        // The row sum equals p[n+1][i] exactly; dividing by the recomputed sum
        // avoids the cancellation in the escape entry `1 - mass`.
        let row = &mut k[i];
        for (j, v) in row.iter_mut().enumerate() {
            *v = now[j] * matrix.get(j, i);
        }
        let sum = row.iter().copied().fold(T::zero(), |a, b| a + b);
        if sum > T::zero() {
            row.iter_mut().for_each(|v| *v = *v / sum);
        }
    }
    Ok(k)
}

/// Laws `p̄[n]` of the chain at step `n` conditioned to sit in the bin of `xT` at step `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedSequence<T> {
    /// Interior vectors `p̄[n]`, `n = 0..=N`; the absorbing entry is identically zero.
    pub vectors: Vec<Vec<T>>,
    /// Largest `|Σ_i p̄[n][i] - 1|` seen before per-step normalization.
    pub max_mass_defect: T,
}

/// Backward recursion `p̄[n] = p̄[n+1] P̄⁽ⁿ⁾`, streaming the reversed kernels.
pub fn backward_recursion<T: Real>(
    matrix: &TransitionMatrix<T>,
    p: &DensitySequence<T>,
    grid: &Grid<T>,
    x_t: T,
) -> Result<ConditionedSequence<T>> {
    check_dims(matrix, grid)?;
    let end = grid.bin_of(x_t)?;
    let big_n = p.steps();
    if p.normalized(big_n)[end] == T::zero() || p.log_mass(big_n) == T::neg_infinity() {
        return Err(Error::ZeroConditioningMass);
    }
    let nb = grid.n_bins;
    let mut vectors = vec![Vec::new(); big_n + 1];
    let mut last = vec![T::zero(); nb];
    last[end] = T::one();
    vectors[big_n] = last;
    let mut max_defect = T::zero();
    for n in (0..big_n).rev() {
        let cur = p.normalized(n);
        let nxt = p.normalized(n + 1);
        let ratio: Vec<T> = vectors[n + 1]
            .iter()
            .zip(nxt)
            .map(|(&q, &pn)| if pn == T::zero() { T::zero() } else { q / pn })
            .collect();
        let scale = (p.log_mass(n) - p.log_mass(n + 1)).exp();
        let mut out = vec![T::zero(); nb];
        for (j, o) in out.iter_mut().enumerate() {
            if cur[j] == T::zero() {
                continue;
            }
            let (lo, hi) = matrix.row_band(j);
            let row = matrix.row(j);
            let mut acc = T::zero();
            for i in lo..hi {
                acc = acc + row[i] * ratio[i];
            }
            *o = cur[j] * scale * acc;
        }
        let mass: T = out.iter().copied().sum();
        if !(mass > T::zero()) {
            return Err(Error::Numeric(format!(
                "conditioned mass vanished at step {n}"
            )));
        }
        max_defect = max_defect.max((mass - T::one()).abs());
        let inv = T::one() / mass;
        out.iter_mut().for_each(|v| *v = *v * inv);
        vectors[n] = out;
    }
    Ok(ConditionedSequence {
        vectors,
        max_mass_defect: max_defect,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeakOptions<T> {
    /// Local maxima lower than this fraction of the slice maximum are dropped.
    pub min_relative_height: T,
}

impl<T: Real> Default for PeakOptions<T> {
    fn default() -> Self {
        Self {
            min_relative_height: T::lit(0.5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Peak<T> {
    pub x: T,
    pub height: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeakSlice<T> {
    pub t: T,
    /// Sorted by position.
    pub peaks: Vec<Peak<T>>,
}

impl<T: Real> PeakSlice<T> {
    /// Highest peak; the leftmost among equals.
    pub fn primary(&self) -> Option<Peak<T>> {
        self.peaks.iter().copied().fold(None, |best, p| match best {
            Some(b) if b.height >= p.height => Some(b),
            _ => Some(p),
        })
    }
}

/// Local maxima of one density slice, refined by a 3-point parabola.
/// Plateaus report their leftmost bin.
pub fn slice_peaks<T: Real>(values: &[T], grid: &Grid<T>, opts: &PeakOptions<T>) -> Vec<Peak<T>> {
    let n = values.len();
    let max = values.iter().copied().fold(T::zero(), T::max);
    if !(max > T::zero()) {
        return Vec::new();
    }
    let floor = opts.min_relative_height * max;
    let h = grid.width();
    let mut peaks = Vec::new();
    for i in 0..n {
        let y = values[i];
        let left = if i > 0 {
            values[i - 1]
        } else {
            T::neg_infinity()
        };
        let right = if i + 1 < n {
            values[i + 1]
        } else {
            T::neg_infinity()
        };
        if !(y > left && y >= right && y >= floor && y > T::zero()) {
            continue;
        }
        let mut peak = Peak {
            x: grid.midpoint(i),
            height: y,
        };
        if i > 0 && i + 1 < n {
            let curv = left - T::lit(2.0) * y + right;
            if curv < T::zero() {
                let half = T::lit(0.5);
                let off = (half * (left - right) / curv).max(-half).min(half);
                peak.x = peak.x + off * h;
                peak.height = y - T::lit(0.25) * (left - right) * off;
            }
        }
        peaks.push(peak);
    }
    peaks
}

/// Prehistory density `q[n][i]` in units of 1/length, plus per-step peaks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NppdField<T> {
    pub grid: Grid<T>,
    pub epsilon: T,
    pub times: Vec<T>,
    pub density: Vec<Vec<T>>,
    pub peaks: Vec<PeakSlice<T>>,
}

impl<T: Real> NppdField<T> {
    /// `h Σ_i q[n][i]`.
    pub fn mass(&self, n: usize) -> T {
        self.grid.width() * self.density[n].iter().copied().sum::<T>()
    }

    /// Slice index for time `t` (`⌊t/ε⌋`, clamped).
    pub fn step_at(&self, t: T) -> usize {
        steps_floor(t, self.epsilon).min(self.density.len() - 1)
    }
}

pub fn assemble_nppd<T: Real>(
    conditioned: &ConditionedSequence<T>,
    grid: &Grid<T>,
    epsilon: T,
    opts: &PeakOptions<T>,
) -> NppdField<T> {
    let scale = T::from_usize_lossy(grid.n_bins) / (grid.xr - grid.xl);
    let density: Vec<Vec<T>> = conditioned
        .vectors
        .iter()
        .map(|v| v.iter().map(|&p| p * scale).collect())
        .collect();
    let times: Vec<T> = (0..density.len())
        .map(|n| T::from_usize_lossy(n) * epsilon)
        .collect();
    let mut field = NppdField {
        grid: *grid,
        epsilon,
        times,
        density,
        peaks: Vec::new(),
    };
    field.peaks = peak_trajectory(&field, grid, opts);
    field
}

pub fn peak_trajectory<T: Real>(
    field: &NppdField<T>,
    grid: &Grid<T>,
    opts: &PeakOptions<T>,
) -> Vec<PeakSlice<T>> {
    field
        .density
        .iter()
        .zip(&field.times)
        .map(|(q, &t)| PeakSlice {
            t,
            peaks: slice_peaks(q, grid, opts),
        })
        .collect()
}

/// Everything produced by one pass of the lattice pipeline.
#[derive(Debug, Clone)]
pub struct NppdRun<T> {
    pub grid: Grid<T>,
    pub matrix: TransitionMatrix<T>,
    pub forward: DensitySequence<T>,
    pub conditioned: ConditionedSequence<T>,
    pub field: NppdField<T>,
}

impl<T: Real> NppdRun<T> {
    /// Mass absorbed outside the domain by step `N`.
    pub fn escape_mass(&self) -> T {
        self.forward.escape_mass(self.forward.steps())
    }
}

/// Matrix, forward and backward recursions, and assembly for `spec` on `grid`.
pub fn compute_nppd<T: Real>(
    spec: &ModelSpec<T>,
    grid: &Grid<T>,
    opts: &PeakOptions<T>,
) -> Result<NppdRun<T>> {
    let matrix = build_transition_matrix(spec, grid);
    let forward = forward_recursion(&matrix, grid, spec.x0, spec.steps())?;
    let conditioned = backward_recursion(&matrix, &forward, grid, spec.x_t)?;
    let field = assemble_nppd(&conditioned, grid, spec.epsilon, opts);
    Ok(NppdRun {
        grid: *grid,
        matrix,
        forward,
        conditioned,
        field,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdequacyOptions<T> {
    pub alpha_range: (T, T),
    pub grid_points: usize,
    /// Boundary actions are sampled at `T k / time_samples`, `k = 1..=time_samples`.
    pub time_samples: usize,
    pub required_margin: T,
}

impl<T: Real> Default for AdequacyOptions<T> {
    fn default() -> Self {
        Self {
            alpha_range: (T::lit(-20.0), T::lit(20.0)),
            grid_points: 401,
            time_samples: 8,
            required_margin: T::lit(0.2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdequacyReport<T> {
    pub endpoints_inside: bool,
    pub nop_inside: bool,
    /// Smallest action found for reaching either boundary within the horizon.
    pub boundary_action: Option<T>,
    pub target_action: T,
    /// `(boundary_action - target_action) / target_action`.
    pub margin: Option<T>,
    pub passes: bool,
    pub warnings: Vec<String>,
}

/// Advisory check that leaving the domain is much less likely than reaching `xT`.
pub fn domain_adequacy_check<T: Real>(
    spec: &ModelSpec<T>,
    grid: &Grid<T>,
    nop: &ShootingResult<T>,
    cfg: &ShootingConfig<T>,
    opts: &AdequacyOptions<T>,
) -> AdequacyReport<T> {
    let inside = |x: T| x >= grid.xl && x < grid.xr;
    let endpoints_inside = inside(spec.x0) && inside(spec.x_t);
    let (lo, hi) = nop.trajectory.x_range();
    let nop_inside = inside(lo) && inside(hi);
    let target_action = nop.action;
    let mut warnings = Vec::new();
    if !endpoints_inside {
        warnings.push("an endpoint lies outside the domain".to_string());
    }
    if !nop_inside {
        warnings.push("the optimal path leaves the domain".to_string());
    }
    let mut boundary_action: Option<T> = None;
    if endpoints_inside {
        if let Ok(model) = HamiltonianModel::for_measure(spec.measure.clone()) {
            let samples = opts.time_samples.max(1);
            let jobs: Vec<(T, T)> = [grid.xl, grid.xr]
                .iter()
                .flat_map(|&b| {
                    (1..=samples).map(move |k| {
                        (
                            b,
                            spec.horizon * T::from_usize_lossy(k) / T::from_usize_lossy(samples),
                        )
                    })
                })
                .collect();
            let actions: Vec<Option<T>> = jobs
                .par_iter()
                .map(|&(b, t)| {
                    solve_nop_scanned(
                        &model,
                        spec.x0,
                        b,
                        t,
                        opts.alpha_range,
                        opts.grid_points,
                        cfg,
                    )
                    .ok()
                    .map(|r| r.action)
                })
                .collect();
            for a in actions.into_iter().flatten() {
                boundary_action = Some(boundary_action.map_or(a, |m: T| m.min(a)));
            }
        }
        if boundary_action.is_none() {
            warnings.push(
                "no boundary could be reached within the momentum range; margin unknown".into(),
            );
        }
    }
    let margin = boundary_action.map(|b| {
        if target_action > T::zero() {
            (b - target_action) / target_action
        } else if b > T::zero() {
            T::infinity()
        } else {
            T::zero()
        }
    });
    let margin_ok = margin.map_or(true, |m| m >= opts.required_margin);
    if !margin_ok {
        warnings.push(format!(
            "boundary action exceeds the target action by less than {}%",
            (opts.required_margin * T::lit(100.0)).round()
        ));
    }
    let passes = endpoints_inside && nop_inside && margin_ok;
    AdequacyReport {
        endpoints_inside,
        nop_inside,
        boundary_action,
        target_action,
        margin,
        passes,
        warnings,
    }
}

/// 17 significant digits: lossless for `f64`.
pub fn fmt_float<T: Real>(v: T) -> String {
    format!("{v:.16e}")
}

/// Columns `n,t,i,x_mid,q`, one row per step and interior bin.
pub fn write_nppd_csv<T: Real, W: Write>(field: &NppdField<T>, mut w: W) -> std::io::Result<()> {
    writeln!(w, "n,t,i,x_mid,q")?;
    let mids = field.grid.midpoints();
    for (n, (row, &t)) in field.density.iter().zip(&field.times).enumerate() {
        for (i, (&q, &x)) in row.iter().zip(&mids).enumerate() {
            writeln!(
                w,
                "{n},{},{i},{},{}",
                fmt_float(t),
                fmt_float(x),
                fmt_float(q)
            )?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NppdCsvRow<T> {
    pub n: usize,
    pub t: T,
    pub i: usize,
    pub x_mid: T,
    pub q: T,
}

pub fn read_nppd_csv<T: Real + std::str::FromStr, R: BufRead>(
    r: R,
) -> std::io::Result<Vec<NppdCsvRow<T>>> {
    let bad = |line: usize, what: &str| {
        std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("line {line}: {what}"),
        )
    };
    let mut rows = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if k == 0 {
            if line.trim() != "n,t,i,x_mid,q" {
                return Err(bad(1, "unexpected header"));
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(k + 1, "expected 5 fields"));
        }
        let num = |s: &str| s.parse::<T>().map_err(|_| bad(k + 1, "bad float"));
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(k + 1, "bad integer"));
        rows.push(NppdCsvRow {
            n: int(f[0])?,
            t: num(f[1])?,
            i: int(f[2])?,
            x_mid: num(f[3])?,
            q: num(f[4])?,
        });
    }
    Ok(rows)
}

/// Columns `t,x_peak[,x_peak2]`: the highest peak, then the runner-up when any slice has one.
pub fn write_peaks_csv<T: Real, W: Write>(peaks: &[PeakSlice<T>], mut w: W) -> std::io::Result<()> {
    let two = peaks.iter().any(|s| s.peaks.len() > 1);
    writeln!(w, "{}", if two { "t,x_peak,x_peak2" } else { "t,x_peak" })?;
    for s in peaks {
        let mut ranked = s.peaks.clone();
        ranked.sort_by(|a, b| {
            b.height
                .partial_cmp(&a.height)
                .expect("finite")
                .then(a.x.partial_cmp(&b.x).expect("finite"))
        });
        let first = ranked.first().map(|p| fmt_float(p.x)).unwrap_or_default();
        if two {
            let second = ranked.get(1).map(|p| fmt_float(p.x)).unwrap_or_default();
            writeln!(w, "{},{first},{second}", fmt_float(s.t))?;
        } else {
            writeln!(w, "{},{first}", fmt_float(s.t))?;
        }
    }
    Ok(())
}
