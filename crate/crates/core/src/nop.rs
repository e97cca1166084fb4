//! Optimal fluctuation paths by shooting on the initial momentum.
//!
//! A NOP from `x0` to `xT` over `[0, T]` is a solution of Hamilton's equations
//! with `x(0) = x0`, `x(T) = xT`; the free parameter is `α(0)`. Shots are
//! classified by the sign of `x(T) - xT`, with escaping shots assigned the sign
//! of their escape direction, and sign changes are refined by bisection.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::{
    diverged, integrate_hamilton, rk4_step, HamiltonianModel, PhaseTrajectory,
};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShootingConfig<T> {
    /// RK4 steps over `[0, T]`; `None` selects `max(1000, ⌈200 T⌉)`.
    pub steps: Option<usize>,
    /// Bisection stops once the bracket is narrower than this...
    pub alpha_tol: T,
    /// ...and the terminal miss `|x(T) - xT|` is below this.
    pub terminal_tol: T,
    /// Shots leaving the endpoint interval by more than this are aborted.
    pub escape_margin: T,
    pub max_bisections: usize,
    /// Roots whose action exceeds the smallest by more than this are not NOPs.
    pub coexist_tol: T,
    /// Scan shots are followed up to `hit_horizon_factor · T` to record hit times.
    pub hit_horizon_factor: T,
}

impl<T: Real> Default for ShootingConfig<T> {
    fn default() -> Self {
        Self {
            steps: None,
            alpha_tol: T::lit(1e-8),
            terminal_tol: T::lit(1e-6),
            escape_margin: T::lit(5.0),
            max_bisections: 200,
            coexist_tol: T::lit(1e-3),
            hit_horizon_factor: T::lit(2.0),
        }
    }
}

impl<T: Real> ShootingConfig<T> {
    pub fn steps_for(&self, horizon: T) -> usize {
        self.steps.unwrap_or_else(|| {
            let by_time = (T::lit(200.0) * horizon)
                .ceil()
                .to_usize()
                .unwrap_or(usize::MAX);
            by_time.max(1000)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShootingResult<T> {
    pub alpha0: T,
    pub trajectory: PhaseTrajectory<T>,
    pub terminal_error: T,
    pub action: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NopScan<T> {
    pub alpha0_grid: Vec<T>,
    /// First time the shot reaches `xT`, if it does within the hit horizon.
    pub hit_times: Vec<Option<T>>,
    /// `x(T)` of each shot, `None` when the shot escaped or diverged first.
    pub terminal_values: Vec<Option<T>>,
    /// Every stationary path found, sorted by `alpha0`.
    pub candidates: Vec<ShootingResult<T>>,
    /// Candidates of minimal action (the coexisting NOPs), sorted by `alpha0`.
    pub roots: Vec<ShootingResult<T>>,
}

/// Signed terminal miss of one shot; escapes map to ±∞.
#[derive(Debug, Clone, Copy)]
struct Shot<T> {
    miss: T,
    terminal: Option<T>,
    hit_time: Option<T>,
}

struct Problem<'a, T> {
    model: &'a HamiltonianModel<T>,
    x0: T,
    xt: T,
    horizon: T,
    steps: usize,
    lo: T,
    hi: T,
}

impl<'a, T: Real> Problem<'a, T> {
    fn new(
        model: &'a HamiltonianModel<T>,
        x0: T,
        xt: T,
        horizon: T,
        cfg: &ShootingConfig<T>,
    ) -> Result<Self> {
        if !(horizon.is_finite() && horizon > T::zero()) {
            return Err(Error::invalid(
                "horizon",
                format!("must be positive, got {horizon}"),
            ));
        }
        if !(x0.is_finite() && xt.is_finite()) {
            return Err(Error::invalid("endpoints", "must be finite"));
        }
        Ok(Self {
            model,
            x0,
            xt,
            horizon,
            steps: cfg.steps_for(horizon),
            lo: x0.min(xt) - cfg.escape_margin,
            hi: x0.max(xt) + cfg.escape_margin,
        })
    }

    /// Integrate one shot for `extra_factor · T`, stopping early on escape.
    fn shoot(&self, alpha0: T, extra_factor: T, want_hit: bool) -> Shot<T> {
        let dt = self.horizon / T::from_usize_lossy(self.steps);
        let total = if want_hit {
            (extra_factor * T::from_usize_lossy(self.steps))
                .ceil()
                .to_usize()
                .unwrap_or(self.steps)
                .max(self.steps)
        } else {
            self.steps
        };
        let mut s = [self.x0, alpha0, T::zero()];
        let mut terminal = None;
        let mut hit_time = None;
        let mut escape = T::zero();
        for k in 1..=total {
            let prev = s[0];
            s = rk4_step(self.model, s, dt);
            if diverged(&s) || s[0] < self.lo || s[0] > self.hi {
                escape = if s[0].is_nan() || s[0] == self.xt {
                    T::zero()
                } else if s[0] > self.xt {
                    T::one()
                } else {
                    -T::one()
                };
                break;
            }
            if want_hit && hit_time.is_none() {
                let (d0, d1) = (prev - self.xt, s[0] - self.xt);
                if d1 == T::zero() {
                    hit_time = Some(T::from_usize_lossy(k) * dt);
                } else if d0 != T::zero() && (d0 < T::zero()) != (d1 < T::zero()) {
                    let frac = d0 / (d0 - d1);
                    hit_time = Some((T::from_usize_lossy(k - 1) + frac) * dt);
                }
            }
            if k == self.steps {
                terminal = Some(s[0]);
                if !want_hit {
                    break;
                }
            }
            if want_hit && terminal.is_some() && hit_time.is_some() {
                break;
            }
        }
        let miss = match terminal {
            Some(x) => x - self.xt,
            None if escape > T::zero() => T::infinity(),
            None if escape < T::zero() => T::neg_infinity(),
            None => T::nan(),
        };
        Shot {
            miss,
            terminal,
            hit_time,
        }
    }

    fn miss(&self, alpha0: T) -> T {
        self.shoot(alpha0, T::one(), false).miss
    }

    fn finish(&self, alpha0: T) -> Result<ShootingResult<T>> {
        let trajectory = integrate_hamilton(self.model, self.x0, alpha0, self.horizon, self.steps)?;
        let terminal_error = (trajectory.end().x - self.xt).abs();
        let action = trajectory.action.max(T::zero());
        Ok(ShootingResult {
            alpha0,
            trajectory,
            terminal_error,
            action,
        })
    }

    fn bisect(&self, mut lo: T, mut hi: T, cfg: &ShootingConfig<T>) -> Result<ShootingResult<T>> {
        let (mut g_lo, g_hi) = (self.miss(lo), self.miss(hi));
        if g_lo == T::zero() {
            return self.finish(lo);
        }
        if g_hi == T::zero() {
            return self.finish(hi);
        }
        if g_lo.is_nan() || g_hi.is_nan() || (g_lo < T::zero()) == (g_hi < T::zero()) {
            return Err(Error::NoBracket {
                lo: lo.as_f64(),
                hi: hi.as_f64(),
            });
        }
        let mut best = if g_lo.abs() <= g_hi.abs() {
            (lo, g_lo)
        } else {
            (hi, g_hi)
        };
        let mut iterations = 0;
        while iterations < cfg.max_bisections {
            let width_ok = (hi - lo).abs() <= cfg.alpha_tol;
            if width_ok && best.1.abs() <= cfg.terminal_tol {
                break;
            }
            let mid = lo + (hi - lo) * T::lit(0.5);
            if mid == lo || mid == hi {
                break;
            }
            let g = self.miss(mid);
            iterations += 1;
            if g.is_nan() {
                return Err(Error::Numeric(format!(
                    "shot at alpha0 = {mid} produced no usable endpoint"
                )));
            }
            if g.abs() < best.1.abs() {
                best = (mid, g);
            }
            if g == T::zero() {
                break;
            }
            if (g < T::zero()) == (g_lo < T::zero()) {
                lo = mid;
                g_lo = g;
            } else {
                hi = mid;
            }
        }
        let result = self.finish(best.0)?;
        if result.terminal_error <= cfg.terminal_tol {
            Ok(result)
        } else {
            Err(Error::NoConvergence {
                terminal_error: result.terminal_error.as_f64(),
                iterations,
            })
        }
    }
}

/// Shoot from `x0` and bisect on `α(0)` inside `bracket` until `x(T)` hits `xT`.
pub fn solve_nop<T: Real>(
    model: &HamiltonianModel<T>,
    x0: T,
    x_t: T,
    horizon: T,
    bracket: (T, T),
    cfg: &ShootingConfig<T>,
) -> Result<ShootingResult<T>> {
    let problem = Problem::new(model, x0, x_t, horizon, cfg)?;
    let (lo, hi) = if bracket.0 <= bracket.1 {
        bracket
    } else {
        (bracket.1, bracket.0)
    };
    problem.bisect(lo, hi, cfg)
}

/// Shoot every momentum in `grid`, record hit times, and solve each sign change.
pub fn scan_alpha0<T: Real>(
    model: &HamiltonianModel<T>,
    x0: T,
    x_t: T,
    horizon: T,
    grid: &[T],
    cfg: &ShootingConfig<T>,
) -> Result<NopScan<T>> {
    if grid.is_empty() {
        return Err(Error::invalid("grid", "scan grid is empty"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid(
            "grid",
            "scan grid must be strictly increasing",
        ));
    }
    let problem = Problem::new(model, x0, x_t, horizon, cfg)?;
    let shots: Vec<Shot<T>> = grid
        .par_iter()
        .map(|&a| problem.shoot(a, cfg.hit_horizon_factor, true))
        .collect();

    let mut brackets = Vec::new();
    for (k, shot) in shots.iter().enumerate() {
        if shot.miss == T::zero() {
            brackets.push((grid[k], grid[k]));
        } else if k + 1 < shots.len() {
            let next = shots[k + 1].miss;
            let (a, b) = (shot.miss, next);
            if !a.is_nan() && !b.is_nan() && b != T::zero() && (a < T::zero()) != (b < T::zero()) {
                brackets.push((grid[k], grid[k + 1]));
            }
        }
    }

    let solved: Vec<Result<ShootingResult<T>>> = brackets
        .par_iter()
        .map(|&(lo, hi)| problem.bisect(lo, hi, cfg))
        .collect();
    let mut candidates: Vec<ShootingResult<T>> = Vec::new();
    for r in solved {
        match r {
            Ok(root) => {
                let dup = candidates
                    .iter()
                    .any(|c| (c.alpha0 - root.alpha0).abs() <= T::lit(10.0) * cfg.alpha_tol);
                if !dup {
                    candidates.push(root);
                }
            }
            // Brackets straddling an escape boundary with no finite crossing, or
            // steep branches where the terminal tolerance is unreachable.
            Err(Error::NoBracket { .. }) | Err(Error::NoConvergence { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    candidates.sort_by(|a, b| a.alpha0.partial_cmp(&b.alpha0).expect("finite momenta"));
    let min_action = candidates
        .iter()
        .map(|c| c.action)
        .fold(T::infinity(), T::min);
    let roots = candidates
        .iter()
        .filter(|c| c.action <= min_action + cfg.coexist_tol)
        .cloned()
        .collect();

    Ok(NopScan {
        alpha0_grid: grid.to_vec(),
        hit_times: shots.iter().map(|s| s.hit_time).collect(),
        terminal_values: shots.iter().map(|s| s.terminal).collect(),
        candidates,
        roots,
    })
}

/// `n` uniformly spaced momenta over `[lo, hi]`.
pub fn alpha_grid<T: Real>(lo: T, hi: T, n: usize) -> Vec<T> {
    if n <= 1 {
        return vec![lo];
    }
    let step = (hi - lo) / T::from_usize_lossy(n - 1);
    (0..n).map(|k| lo + step * T::from_usize_lossy(k)).collect()
}

/// Scan `[lo, hi]` and return a minimal-action NOP (the one with the smallest
/// action; ties resolved toward the smaller momentum).
pub fn solve_nop_scanned<T: Real>(
    model: &HamiltonianModel<T>,
    x0: T,
    x_t: T,
    horizon: T,
    alpha_range: (T, T),
    grid_points: usize,
    cfg: &ShootingConfig<T>,
) -> Result<ShootingResult<T>> {
    let grid = alpha_grid(alpha_range.0, alpha_range.1, grid_points.max(2));
    let scan = scan_alpha0(model, x0, x_t, horizon, &grid, cfg)?;
    scan.roots
        .into_iter()
        .min_by(|a, b| a.action.partial_cmp(&b.action).expect("finite actions"))
        .ok_or(Error::NoBracket {
            lo: alpha_range.0.as_f64(),
            hi: alpha_range.1.as_f64(),
        })
}

/// Closed-form NOP for the affine drift `a0 + a1 x` with Gaussian jumps.
pub fn nop_closed_affine<T: Real>(a0: T, a1: T, x0: T, x_t: T, horizon: T, t: T) -> T {
    if a1 == T::zero() {
        return x0 * (horizon - t) / horizon + x_t * t / horizon;
    }
    let den = (a1 * horizon).sinh();
    let s1 = (a1 * (horizon - t)).sinh() / den;
    let s2 = (a1 * t).sinh() / den;
    x0 * s1 + x_t * s2 - (a0 / a1) * (T::one() - s1 - s2)
}

/// Time derivative of [`nop_closed_affine`].
pub fn nop_closed_affine_velocity<T: Real>(a0: T, a1: T, x0: T, x_t: T, horizon: T, t: T) -> T {
    if a1 == T::zero() {
        return (x_t - x0) / horizon;
    }
    let den = (a1 * horizon).sinh();
    let d1 = -a1 * (a1 * (horizon - t)).cosh() / den;
    let d2 = a1 * (a1 * t).cosh() / den;
    x0 * d1 + x_t * d2 + (a0 / a1) * (d1 + d2)
}
