//! Closed-form Gaussian results for affine drift `b(x) = a0 + a1 x` with
//! Gaussian jumps (`κ = 2`), used as ground truth for the numerical pipeline.
//!
//! Discrete-time quantities live on the lattice `nε` with `N = ⌊T/ε⌋` and
//! `r = 1 + a1 ε`. The reversed chain runs on the shifted lattice `Δ + mε`
//! with `Δ = T - Nε`, and its moments at step `m` equal the bridge moments at
//! the mirrored step `N - m`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::real::{steps_ceil, steps_floor, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineGaussianModel<T> {
    pub a0: T,
    pub a1: T,
    pub sigma: T,
    pub epsilon: T,
    pub horizon: T,
    steps: usize,
    delta: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BridgeMoments<T> {
    pub mean: T,
    pub variance: T,
}

impl<T: Real> BridgeMoments<T> {
    pub fn pinned(at: T) -> Self {
        Self {
            mean: at,
            variance: T::zero(),
        }
    }

    pub fn std_dev(&self) -> T {
        self.variance.sqrt()
    }

    pub fn pdf(&self, x: T) -> T {
        gaussian_pdf(self.mean, self.variance, x)
    }
}

pub fn gaussian_pdf<T: Real>(mean: T, variance: T, x: T) -> T {
    gaussian_log_pdf(mean, variance, x).exp()
}

pub fn gaussian_log_pdf<T: Real>(mean: T, variance: T, x: T) -> T {
    let d = x - mean;
    -(d * d) / (T::lit(2.0) * variance) - T::lit(0.5) * (T::lit(2.0) * T::PI() * variance).ln()
}

impl<T: Real> AffineGaussianModel<T> {
    pub fn new(a0: T, a1: T, sigma: T, epsilon: T, horizon: T) -> Result<Self> {
        if !(sigma.is_finite() && sigma > T::zero()) {
            return Err(Error::invalid(
                "sigma",
                format!("must be positive, got {sigma}"),
            ));
        }
        if !(epsilon.is_finite() && epsilon > T::zero()) {
            return Err(Error::invalid(
                "epsilon",
                format!("must be positive, got {epsilon}"),
            ));
        }
        if !(horizon.is_finite() && horizon > T::zero()) {
            return Err(Error::invalid(
                "horizon",
                format!("must be positive, got {horizon}"),
            ));
        }
        if !(a0.is_finite() && a1.is_finite()) {
            return Err(Error::invalid(
                "drift",
                "affine coefficients must be finite",
            ));
        }
        if (a1 * epsilon).abs() >= T::one() {
            return Err(Error::invalid(
                "a1",
                format!(
                    "|a1 * epsilon| must be below 1, got {}",
                    (a1 * epsilon).abs()
                ),
            ));
        }
        let steps = steps_floor(horizon, epsilon);
        if steps < 1 {
            return Err(Error::invalid(
                "epsilon",
                "no whole step fits in the horizon",
            ));
        }
        let delta = (horizon - T::from_usize_lossy(steps) * epsilon).max(T::zero());
        Ok(Self {
            a0,
            a1,
            sigma,
            epsilon,
            horizon,
            steps,
            delta,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    fn r(&self) -> T {
        T::one() + self.a1 * self.epsilon
    }

    fn rpow(&self, k: usize) -> T {
        self.r().powi(k as i32)
    }

    /// Weights `(A, B)` with `M̃(n) = x0 A + xT B - (a0/a1)(1 - A - B)`.
    fn bridge_weights(&self, n: usize) -> (T, T) {
        let big_n = self.steps;
        let n = n.min(big_n);
        if self.a1 == T::zero() {
            let nn = T::from_usize_lossy(big_n);
            let k = T::from_usize_lossy(n);
            return ((nn - k) / nn, k / nn);
        }
        let den = self.rpow(2 * big_n) - T::one();
        let a = self.rpow(n) * (self.rpow(2 * (big_n - n)) - T::one()) / den;
        let b = self.rpow(big_n - n) * (self.rpow(2 * n) - T::one()) / den;
        (a, b)
    }

    /// Bridge moments at lattice step `n`, pinned at `start` for `n = 0` and at `end` for `n = N`.
    fn bridge_at_step(&self, start: T, end: T, n: usize) -> BridgeMoments<T> {
        let big_n = self.steps;
        let n = n.min(big_n);
        if n == 0 {
            return BridgeMoments::pinned(start);
        }
        if n == big_n {
            return BridgeMoments::pinned(end);
        }
        let (a, b) = self.bridge_weights(n);
        let eps = self.epsilon;
        let s2 = self.sigma * self.sigma;
        if self.a1 == T::zero() {
            let nn = T::from_usize_lossy(big_n);
            let k = T::from_usize_lossy(n);
            let variance = eps * eps * s2 * (nn - k) * k / (T::lit(2.0) * nn);
            return BridgeMoments {
                mean: start * a + end * b,
                variance,
            };
        }
        let mean = start * a + end * b - (self.a0 / self.a1) * (T::one() - a - b);
        let pre = eps * s2 / (T::lit(2.0) * self.a1 * (T::lit(2.0) + self.a1 * eps));
        let variance =
            pre * (self.rpow(2 * (big_n - n)) - T::one()) * (self.rpow(2 * n) - T::one())
                / (self.rpow(2 * big_n) - T::one());
        BridgeMoments {
            mean,
            variance: variance.max(T::zero()),
        }
    }

    /// `M(t | xs, s)`, `V(t | xs, s)` of the unconditioned chain.
    pub fn forward_moments(&self, xs: T, s: T, t: T) -> BridgeMoments<T> {
        let ns = steps_floor(s, self.epsilon);
        let nt = steps_floor(t, self.epsilon);
        let k = nt.saturating_sub(ns);
        if k == 0 {
            return BridgeMoments::pinned(xs);
        }
        let eps = self.epsilon;
        let s2 = self.sigma * self.sigma;
        if self.a1 == T::zero() {
            let kk = T::from_usize_lossy(k);
            return BridgeMoments {
                mean: xs + eps * self.a0 * kk,
                variance: eps * eps * s2 * kk / T::lit(2.0),
            };
        }
        let rk = self.rpow(k);
        let mean = xs * rk + (self.a0 / self.a1) * (rk - T::one());
        let variance = eps * s2 / (T::lit(2.0) * self.a1 * (T::lit(2.0) + self.a1 * eps))
            * (rk * rk - T::one());
        BridgeMoments { mean, variance }
    }

    /// `M̃(t | x0, 0)`, `Ṽ(t | x0, 0)`, the moments of the bridge at `n = ⌊t/ε⌋`.
    pub fn nppd_moments(&self, x0: T, x_t: T, t: T) -> BridgeMoments<T> {
        self.bridge_at_step(x0, x_t, steps_floor(t, self.epsilon))
    }

    /// Moments of the reversed chain at `m = ⌈(t - Δ)/ε⌉`: pinned at `xT` on `[0, Δ]`.
    pub fn reversed_moments(&self, x0: T, x_t: T, t: T) -> BridgeMoments<T> {
        let m = if t <= self.delta {
            0
        } else {
            steps_ceil(t - self.delta, self.epsilon)
        };
        self.bridge_at_step(x_t, x0, m)
    }

    /// Mean and variance of the conditioned jump from `x` at step `m` with
    /// `N - m` steps left to reach `x_pin`. Serves both reversed chains.
    pub fn reversed_jump_params_affine(&self, x: T, x_pin: T, m: usize) -> Result<(T, T)> {
        if m >= self.steps {
            return Err(Error::invalid(
                "m",
                format!("step {m} is not below N = {}", self.steps),
            ));
        }
        let k = self.steps - m;
        let half_s2 = self.sigma * self.sigma / T::lit(2.0);
        if self.a1 == T::zero() {
            let remaining = T::from_usize_lossy(k) * self.epsilon;
            let mean = (x_pin - x) / remaining;
            let variance = half_s2 * (T::one() - self.epsilon / remaining);
            return Ok((mean, variance.max(T::zero())));
        }
        let (a0, a1, eps) = (self.a0, self.a1, self.epsilon);
        let den = self.rpow(2 * k) - T::one();
        let mean = (T::lit(2.0) + a1 * eps) * self.rpow(k - 1) / den * a1 * x_pin
            - (self.rpow(2 * k - 1) + T::one()) / den * a1 * x
            - (self.rpow(k - 1) - T::one()) / (self.rpow(k) + T::one()) * a0;
        let variance = half_s2 * (self.rpow(2 * (k - 1)) - T::one()) / den;
        Ok((mean, variance.max(T::zero())))
    }

    /// Continuous-time limit of [`Self::forward_moments`].
    pub fn forward_moments_limit(&self, xs: T, s: T, t: T) -> BridgeMoments<T> {
        let tau = t - s;
        let s2 = self.sigma * self.sigma;
        if self.a1 == T::zero() {
            return BridgeMoments {
                mean: xs + self.a0 * tau,
                variance: self.epsilon * s2 * tau / T::lit(2.0),
            };
        }
        let e = (self.a1 * tau).exp();
        BridgeMoments {
            mean: xs * e + (self.a0 / self.a1) * (e - T::one()),
            variance: self.epsilon * s2 / (T::lit(4.0) * self.a1) * (e * e - T::one()),
        }
    }

    /// Continuous-time limit of [`Self::nppd_moments`].
    pub fn nppd_moments_limit(&self, x0: T, x_t: T, t: T) -> BridgeMoments<T> {
        let big_t = self.horizon;
        let s2 = self.sigma * self.sigma;
        let mean = crate::nop::nop_closed_affine(self.a0, self.a1, x0, x_t, big_t, t);
        let variance = if self.a1 == T::zero() {
            self.epsilon * s2 * (big_t - t) * t / (T::lit(2.0) * big_t)
        } else {
            let a1 = self.a1;
            self.epsilon * s2 / (T::lit(2.0) * a1) * (a1 * (big_t - t)).sinh() * (a1 * t).sinh()
                / (a1 * big_t).sinh()
        };
        BridgeMoments {
            mean,
            variance: variance.max(T::zero()),
        }
    }

    /// Small-noise density-ratio probe for `a1 = 0`: returns
    /// `(p(x+εz, t-ε) / p(x, t), exp(∂S/∂t - z ∂S/∂x))` with
    /// `S(x, t | x0) = (x - x0 - a0 t)² / (σ² t)`.
    pub fn density_ratio_check(&self, x0: T, x: T, t: T, z: T) -> Result<(T, T)> {
        if self.a1 != T::zero() {
            return Err(Error::Unsupported(
                "the density-ratio check has a closed-form action only for a1 = 0".into(),
            ));
        }
        let eps = self.epsilon;
        if steps_floor(t, eps) < 2 {
            return Err(Error::invalid("t", "t must span at least two steps"));
        }
        let at = self.forward_moments(x0, T::zero(), t);
        let before = self.forward_moments(x0, T::zero(), t - eps);
        let lhs = (gaussian_log_pdf(before.mean, before.variance, x + eps * z)
            - gaussian_log_pdf(at.mean, at.variance, x))
        .exp();
        let s2 = self.sigma * self.sigma;
        let d = x - x0 - self.a0 * t;
        let s_x = T::lit(2.0) * d / (s2 * t);
        let s_t = -T::lit(2.0) * self.a0 * d / (s2 * t) - d * d / (s2 * t * t);
        let rhs = (s_t - z * s_x).exp();
        Ok((lhs, rhs))
    }
}

/// `ε → 0` limits of the conditioned-jump means: the drifts of the limiting
/// bridge SDEs. `remaining` is the time left to reach `pin`.
pub fn affine_limit_drift<T: Real>(a0: T, a1: T, x: T, pin: T, remaining: T) -> T {
    if a1 == T::zero() {
        return (pin - x) / remaining;
    }
    let (c, s) = ((a1 * remaining).cosh(), (a1 * remaining).sinh());
    (a1 * pin - c * a1 * x - a0 * (c - T::one())) / s
}
