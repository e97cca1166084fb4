//! Hamiltonian `H(x, α) = ln ∫ e^{αz} μ_x(dz)`, its Legendre dual `L`, Hamilton's
//! equations and the action functional.
//!
//! For Gaussian jumps `H = b(x)α + σ²α²/4` exactly. For other shapes the
//! cumulant series is truncated after `α⁶`; every mode keeps `H` linear in the
//! drift, so `∂H/∂x = b'(x) α`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{JumpMeasure, PathSample};
use crate::real::Real;
use crate::special::ln_gamma;

pub const MAX_SERIES_ORDER: usize = 3;
const NEWTON_MAX_ITER: usize = 50;
const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HamiltonianMode {
    ClosedKappa2,
    /// Cumulant series through `α^{2k}`, `1 <= k <= 3`.
    Series {
        order: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HamiltonianModel<T> {
    measure: JumpMeasure<T>,
    mode: HamiltonianMode,
    series_coeffs: Vec<T>,
}

/// `[c2, c4, c6]`, the even cumulants of the centred jump law divided by `(2j)!`.
pub fn series_coefficients<T: Real>(kappa: T, sigma: T) -> Result<[T; 3]> {
    if !(kappa.is_finite() && kappa > T::one()) {
        return Err(Error::invalid(
            "kappa",
            format!("kappa must exceed 1, got {kappa}"),
        ));
    }
    if !(sigma.is_finite() && sigma > T::zero()) {
        return Err(Error::invalid(
            "sigma",
            format!("sigma must be positive, got {sigma}"),
        ));
    }
    let g = |k: f64| ln_gamma(T::lit(k) / kappa).exp();
    let (g1, g3, g5, g7) = (g(1.0), g(3.0), g(5.0), g(7.0));
    let s2 = sigma * sigma;
    let c2 = s2 * g3 / (T::lit(2.0) * g1);
    let c4 = s2 * s2 * (g5 * g1 - T::lit(3.0) * g3 * g3) / (T::lit(24.0) * g1 * g1);
    let c6 =
        s2 * s2 * s2 * (g7 * g1 * g1 - T::lit(15.0) * g3 * g5 * g1 + T::lit(30.0) * g3 * g3 * g3)
            / (T::lit(720.0) * g1 * g1 * g1);
    Ok([c2, c4, c6])
}

impl<T: Real> HamiltonianModel<T> {
    pub fn closed_kappa2(measure: JumpMeasure<T>) -> Result<Self> {
        if !measure.is_gaussian() {
            return Err(Error::invalid(
                "mode",
                format!(
                    "the closed form requires kappa = 2, got {}",
                    measure.kappa()
                ),
            ));
        }
        Ok(Self {
            measure,
            mode: HamiltonianMode::ClosedKappa2,
            series_coeffs: Vec::new(),
        })
    }

    pub fn series(measure: JumpMeasure<T>, order: usize) -> Result<Self> {
        if !(1..=MAX_SERIES_ORDER).contains(&order) {
            return Err(Error::invalid(
                "order",
                format!("series order must lie in 1..={MAX_SERIES_ORDER}, got {order}"),
            ));
        }
        let c = series_coefficients(measure.kappa(), measure.sigma())?;
        Ok(Self {
            measure,
            mode: HamiltonianMode::Series { order },
            series_coeffs: c[..order].to_vec(),
        })
    }

    /// Closed form for Gaussian jumps, full series otherwise.
    pub fn for_measure(measure: JumpMeasure<T>) -> Result<Self> {
        if measure.is_gaussian() {
            Self::closed_kappa2(measure)
        } else {
            Self::series(measure, MAX_SERIES_ORDER)
        }
    }

    pub fn measure(&self) -> &JumpMeasure<T> {
        &self.measure
    }

    pub fn mode(&self) -> HamiltonianMode {
        self.mode
    }

    pub fn series_coeffs(&self) -> &[T] {
        &self.series_coeffs
    }

    /// Coefficient of `α²`.
    pub fn c2(&self) -> T {
        match self.mode {
            HamiltonianMode::ClosedKappa2 => {
                let s = self.measure.sigma();
                s * s / T::lit(4.0)
            }
            HamiltonianMode::Series { .. } => self.series_coeffs[0],
        }
    }

    /// Drift-free part `Σ c_{2j} α^{2j}` and its first two derivatives.
    fn even_part(&self, alpha: T) -> (T, T, T) {
        match self.mode {
            HamiltonianMode::ClosedKappa2 => {
                let c = self.c2();
                (c * alpha * alpha, T::lit(2.0) * c * alpha, T::lit(2.0) * c)
            }
            HamiltonianMode::Series { .. } => {
                let a2 = alpha * alpha;
                let (mut v, mut d1, mut d2) = (T::zero(), T::zero(), T::zero());
                let mut pow = T::one(); // α^{2j-2}
                for (j, &c) in self.series_coeffs.iter().enumerate() {
                    let m = T::from_usize_lossy(2 * (j + 1));
                    v = v + c * pow * a2;
                    d1 = d1 + c * m * pow * alpha;
                    d2 = d2 + c * m * (m - T::one()) * pow;
                    pow = pow * a2;
                }
                (v, d1, d2)
            }
        }
    }

    pub fn h(&self, x: T, alpha: T) -> T {
        self.measure.drift().eval(x) * alpha + self.even_part(alpha).0
    }

    pub fn h_alpha(&self, x: T, alpha: T) -> T {
        self.measure.drift().eval(x) + self.even_part(alpha).1
    }

    pub fn h_alpha_alpha(&self, alpha: T) -> T {
        self.even_part(alpha).2
    }

    pub fn h_x(&self, x: T, alpha: T) -> T {
        self.measure.drift().derivative(x) * alpha
    }

    /// `sup_α [αβ - H(x, α)]` by safeguarded Newton iteration on `H_α = β`.
    pub fn lagrangian(&self, x: T, beta: T) -> Result<T> {
        let alpha = self.lagrangian_argmax(x, beta)?;
        Ok((alpha * beta - self.h(x, alpha)).max(T::zero()))
    }

    /// The maximiser `α` in the Legendre transform, i.e. the momentum of velocity `β`.
    pub fn lagrangian_argmax(&self, x: T, beta: T) -> Result<T> {
        let b = self.measure.drift().eval(x);
        let tol = T::lit(1e-12).max(T::lit(64.0) * T::epsilon() * (T::one() + beta.abs()));
        let mut alpha = (beta - b) / (T::lit(2.0) * self.c2());
        let mut g = self.h_alpha(x, alpha) - beta;
        for _ in 0..NEWTON_MAX_ITER {
            if g.abs() < tol {
                return Ok(alpha);
            }
            let mut step = g / self.h_alpha_alpha(alpha);
            // Halve until the residual decreases; H is convex so this terminates.
            let mut next = alpha - step;
            let mut g_next = self.h_alpha(x, next) - beta;
            let mut halvings = 0;
            while !(g_next.abs() < g.abs()) && halvings < 60 {
                step = step * T::lit(0.5);
                next = alpha - step;
                g_next = self.h_alpha(x, next) - beta;
                halvings += 1;
            }
            if next == alpha {
                break;
            }
            alpha = next;
            g = g_next;
        }
        if g.abs() < tol {
            Ok(alpha)
        } else {
            Err(Error::Numeric(format!(
                "Legendre transform did not converge at x = {x}, beta = {beta}: residual {g:e}"
            )))
        }
    }
}

pub fn hamiltonian_eval<T: Real>(model: &HamiltonianModel<T>, x: T, alpha: T) -> T {
    model.h(x, alpha)
}

pub fn lagrangian_eval<T: Real>(model: &HamiltonianModel<T>, x: T, beta: T) -> Result<T> {
    model.lagrangian(x, beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhasePoint<T> {
    pub x: T,
    pub alpha: T,
}

/// `(∂H/∂α, -∂H/∂x)`.
pub fn hamilton_rhs<T: Real>(model: &HamiltonianModel<T>, p: PhasePoint<T>) -> (T, T) {
    (model.h_alpha(p.x, p.alpha), -model.h_x(p.x, p.alpha))
}

/// Uniform-step trajectory of Hamilton's equations with its running action.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseTrajectory<T> {
    pub times: Vec<T>,
    pub points: Vec<PhasePoint<T>>,
    /// Running action `∫_0^{t_k} (α ẋ - H) dt` at every knot.
    pub cumulative_action: Vec<T>,
    /// Total action over the trajectory.
    pub action: T,
}

impl<T: Real> PhaseTrajectory<T> {
    pub fn xs(&self) -> Vec<T> {
        self.points.iter().map(|p| p.x).collect()
    }

    pub fn x_at(&self, t: T) -> T {
        let xs = self.xs();
        crate::model::interpolate_linear(&self.times, &xs, t)
    }

    pub fn alpha_at(&self, t: T) -> T {
        let al: Vec<T> = self.points.iter().map(|p| p.alpha).collect();
        crate::model::interpolate_linear(&self.times, &al, t)
    }

    pub fn end(&self) -> PhasePoint<T> {
        *self.points.last().expect("trajectory is nonempty")
    }

    pub fn x_range(&self) -> (T, T) {
        self.points
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), p| {
                (lo.min(p.x), hi.max(p.x))
            })
    }
}

/// Augmented state `(x, α, A)` advanced by one RK4 step; `A` is the running action.
#[inline]
pub(crate) fn rk4_step<T: Real>(model: &HamiltonianModel<T>, s: [T; 3], dt: T) -> [T; 3] {
    let f = |x: T, a: T| {
        let ha = model.h_alpha(x, a);
        [ha, -model.h_x(x, a), a * ha - model.h(x, a)]
    };
    let half = T::lit(0.5);
    let k1 = f(s[0], s[1]);
    let k2 = f(s[0] + half * dt * k1[0], s[1] + half * dt * k1[1]);
    let k3 = f(s[0] + half * dt * k2[0], s[1] + half * dt * k2[1]);
    let k4 = f(s[0] + dt * k3[0], s[1] + dt * k3[1]);
    let sixth = dt / T::lit(6.0);
    let two = T::lit(2.0);
    [
        s[0] + sixth * (k1[0] + two * (k2[0] + k3[0]) + k4[0]),
        s[1] + sixth * (k1[1] + two * (k2[1] + k3[1]) + k4[1]),
        s[2] + sixth * (k1[2] + two * (k2[2] + k3[2]) + k4[2]),
    ]
}

#[inline]
pub(crate) fn diverged<T: Real>(s: &[T; 3]) -> bool {
    let bound = T::lit(DIVERGENCE_BOUND);
    !(s[0].abs() <= bound && s[1].abs() <= bound && s[2].is_finite())
}

/// Fixed-step RK4 integration of Hamilton's equations from `(x0, alpha0)` over `[0, horizon]`.
pub fn integrate_hamilton<T: Real>(
    model: &HamiltonianModel<T>,
    x0: T,
    alpha0: T,
    horizon: T,
    steps: usize,
) -> Result<PhaseTrajectory<T>> {
    if steps < 10 {
        return Err(Error::invalid(
            "steps",
            format!("at least 10 steps are required, got {steps}"),
        ));
    }
    if !(horizon.is_finite() && horizon > T::zero()) {
        return Err(Error::invalid(
            "horizon",
            format!("must be positive, got {horizon}"),
        ));
    }
    let dt = horizon / T::from_usize_lossy(steps);
    let mut s = [x0, alpha0, T::zero()];
    let mut times = Vec::with_capacity(steps + 1);
    let mut points = Vec::with_capacity(steps + 1);
    let mut cumulative = Vec::with_capacity(steps + 1);
    times.push(T::zero());
    points.push(PhasePoint {
        x: x0,
        alpha: alpha0,
    });
    cumulative.push(T::zero());
    for k in 1..=steps {
        s = rk4_step(model, s, dt);
        let t = T::from_usize_lossy(k) * dt;
        if diverged(&s) {
            return Err(Error::Divergence {
                t: t.as_f64(),
                x: s[0].as_f64(),
                alpha: s[1].as_f64(),
            });
        }
        times.push(t);
        points.push(PhasePoint {
            x: s[0],
            alpha: s[1],
        });
        cumulative.push(s[2]);
    }
    Ok(PhaseTrajectory {
        times,
        points,
        action: s[2],
        cumulative_action: cumulative,
    })
}

/// `Σ L(x̄_k, slope_k) Δt_k` along a polyline, with `x̄_k` the segment midpoint.
pub fn action_of_polyline<T: Real>(
    model: &HamiltonianModel<T>,
    times: &[T],
    xs: &[T],
) -> Result<T> {
    if times.len() != xs.len() {
        return Err(Error::invalid("path", "times and states differ in length"));
    }
    let mut total = T::zero();
    for k in 1..times.len() {
        let dt = times[k] - times[k - 1];
        if !(dt > T::zero()) {
            return Err(Error::invalid("path", "times must be strictly increasing"));
        }
        let slope = (xs[k] - xs[k - 1]) / dt;
        let mid = T::lit(0.5) * (xs[k] + xs[k - 1]);
        total = total + model.lagrangian(mid, slope)? * dt;
    }
    Ok(total)
}

pub fn action_of_path<T: Real>(model: &HamiltonianModel<T>, path: &PathSample<T>) -> Result<T> {
    action_of_polyline(model, &path.times, &path.states)
}
