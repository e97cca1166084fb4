//! Jump-process family: drifts, generalized-Gaussian jump measures, the
//! forward simulator and the deterministic small-noise limit.
//!
//! The state evolves on the lattice `nε` as `x((n+1)ε) = x(nε) + ε Z_n`, where
//! `Z_n` has density proportional to `exp(-|z - b(x)|^κ / σ^κ)` around the
//! drift `b(x)` of the current state.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::real::{steps_floor, Real};
use crate::special::{gamma_pq, ln_gamma};

/// Polynomial drift `b(x) = Σ_k c_k x^k`, coefficients in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polynomial<T> {
    pub coeffs: Vec<T>,
}

impl<T: Real> Polynomial<T> {
    pub fn new(coeffs: Vec<T>) -> Self {
        Self { coeffs }
    }

    pub fn eval(&self, x: T) -> T {
        self.coeffs
            .iter()
            .rev()
            .fold(T::zero(), |acc, &c| acc * x + c)
    }

    pub fn derivative(&self, x: T) -> T {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(T::zero(), |acc, (k, &c)| {
                acc * x + c * T::from_usize_lossy(k)
            })
    }
}

/// Drift catalog. Every entry carries an analytic derivative.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DriftFunction<T> {
    Zero,
    /// `a0 + a1 x`.
    Affine {
        a0: T,
        a1: T,
    },
    /// `(x - x³) / (1 + |x|³)`: stable equilibria at ±1.
    Bistable,
    Custom(Polynomial<T>),
}

impl<T: Real> DriftFunction<T> {
    pub fn eval(&self, x: T) -> T {
        match self {
            DriftFunction::Zero => T::zero(),
            DriftFunction::Affine { a0, a1 } => *a0 + *a1 * x,
            DriftFunction::Bistable => {
                let a = x.abs();
                if a <= T::one() {
                    (x - x * a * a) / (T::one() + a.powi(3))
                } else {
                    // Divided through by |x|³ so huge inputs stay finite.
                    let u = a.recip();
                    x.signum() * (u * u - T::one()) / (u.powi(3) + T::one())
                }
            }
            DriftFunction::Custom(p) => p.eval(x),
        }
    }

    pub fn derivative(&self, x: T) -> T {
        match self {
            DriftFunction::Zero => T::zero(),
            DriftFunction::Affine { a1, .. } => *a1,
            DriftFunction::Bistable => {
                // b'(x) = (1 - 3x² - 2|x|³) / (1 + |x|³)², even in x.
                let (a, two, three) = (x.abs(), T::lit(2.0), T::lit(3.0));
                if a <= T::one() {
                    let den = T::one() + a.powi(3);
                    (T::one() - three * a * a - two * a.powi(3)) / (den * den)
                } else {
                    let u = a.recip();
                    let den = u.powi(3) + T::one();
                    (u.powi(6) - three * u.powi(4) - two * u.powi(3)) / (den * den)
                }
            }
            DriftFunction::Custom(p) => p.derivative(x),
        }
    }

    /// Affine coefficients `(a0, a1)` when the drift is affine (including zero).
    pub fn affine_coefficients(&self) -> Option<(T, T)> {
        match self {
            DriftFunction::Zero => Some((T::zero(), T::zero())),
            DriftFunction::Affine { a0, a1 } => Some((*a0, *a1)),
            DriftFunction::Custom(p) if p.coeffs.len() <= 2 => {
                let c = |k: usize| p.coeffs.get(k).copied().unwrap_or_else(T::zero);
                Some((c(0), c(1)))
            }
            _ => None,
        }
    }
}

pub fn drift_eval<T: Real>(drift: &DriftFunction<T>, x: T) -> T {
    drift.eval(x)
}

/// Generalized-Gaussian jump law `μ_x` with mean `b(x)`, shape `κ > 1` and
/// scale `σ > 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpMeasure<T> {
    drift: DriftFunction<T>,
    kappa: T,
    sigma: T,
}

impl<T: Real> JumpMeasure<T> {
    pub fn new(drift: DriftFunction<T>, kappa: T, sigma: T) -> Result<Self> {
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
        let finite = match &drift {
            DriftFunction::Affine { a0, a1 } => a0.is_finite() && a1.is_finite(),
            DriftFunction::Custom(p) => p.coeffs.iter().all(|c| c.is_finite()),
            _ => true,
        };
        if !finite {
            return Err(Error::invalid("drift", "drift coefficients must be finite"));
        }
        Ok(Self {
            drift,
            kappa,
            sigma,
        })
    }

    /// Gaussian jumps with variance `σ²/2`.
    pub fn gaussian(drift: DriftFunction<T>, sigma: T) -> Result<Self> {
        Self::new(drift, T::lit(2.0), sigma)
    }

    pub fn drift(&self) -> &DriftFunction<T> {
        &self.drift
    }

    pub fn kappa(&self) -> T {
        self.kappa
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn is_gaussian(&self) -> bool {
        self.kappa == T::lit(2.0)
    }

    /// Density of the jump `z` from state `x`.
    pub fn density(&self, x: T, z: T) -> T {
        let k = self.kappa;
        let ln_norm = k.ln() - (T::lit(2.0) * self.sigma).ln() - ln_gamma(T::one() / k);
        (ln_norm - ((z - self.drift.eval(x)).abs() / self.sigma).powf(k)).exp()
    }

    /// Variance of a single jump, `σ² Γ(3/κ) / Γ(1/κ)`.
    pub fn variance(&self) -> T {
        if self.is_gaussian() {
            return self.sigma * self.sigma / T::lit(2.0);
        }
        let k = self.kappa;
        let three = T::lit(3.0);
        self.sigma * self.sigma * (ln_gamma(three / k) - ln_gamma(T::one() / k)).exp()
    }

    /// `(μ([b, b+u)), μ([b+u, ∞)))` for `u >= 0`, i.e. the central half-mass
    /// and the upper tail, each accurate in its own regime.
    fn half_masses(&self, u: T) -> (T, T) {
        let half = T::lit(0.5);
        if u.is_infinite() {
            return (half, T::zero());
        }
        let (p, q) = gamma_pq(T::one() / self.kappa, (u / self.sigma).powf(self.kappa));
        (half * p, half * q)
    }

    /// `μ_x([lo, hi))` over jump values (not positions).
    pub fn bin_probability(&self, x: T, lo: T, hi: T) -> T {
        if !(lo < hi) {
            return T::zero();
        }
        let b = self.drift.eval(x);
        let (ul, uh) = (lo - b, hi - b);
        let p = if ul >= T::zero() {
            let (cl, tl) = self.half_masses(ul);
            let (ch, th) = self.half_masses(uh);
            if tl < T::lit(0.25) {
                tl - th
            } else {
                ch - cl
            }
        } else if uh <= T::zero() {
            let (cl, tl) = self.half_masses(-uh);
            let (ch, th) = self.half_masses(-ul);
            if tl < T::lit(0.25) {
                tl - th
            } else {
                ch - cl
            }
        } else {
            self.half_masses(-ul).0 + self.half_masses(uh).0
        };
        p.max(T::zero()).min(T::one())
    }

    /// Mass strictly below `lo` plus mass at or above `hi`.
    pub fn outside_probability(&self, x: T, lo: T, hi: T) -> T {
        let b = self.drift.eval(x);
        let tail = |u: T| {
            if u >= T::zero() {
                self.half_masses(u).1
            } else {
                self.half_masses(-u).0 + T::lit(0.5)
            }
        };
        (tail(b - lo) + tail(hi - b)).min(T::one())
    }

    /// One draw of the jump from state `x`.
    pub fn sample<R: Rng + ?Sized>(&self, x: T, rng: &mut R) -> T {
        let shape = 1.0 / self.kappa.as_f64();
        let g = Gamma::new(shape, 1.0)
            .expect("positive gamma shape")
            .sample(rng);
        let mag = self.sigma.as_f64() * g.powf(1.0 / self.kappa.as_f64());
        let signed = if rng.random::<bool>() { mag } else { -mag };
        self.drift.eval(x) + T::lit(signed)
    }
}

pub fn jump_bin_probability<T: Real>(measure: &JumpMeasure<T>, x: T, lo: T, hi: T) -> T {
    measure.bin_probability(x, lo, hi)
}

pub fn sample_jump<T: Real, R: Rng + ?Sized>(measure: &JumpMeasure<T>, x: T, rng: &mut R) -> T {
    measure.sample(x, rng)
}

/// A complete problem instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec<T> {
    pub measure: JumpMeasure<T>,
    pub epsilon: T,
    pub horizon: T,
    pub x0: T,
    pub x_t: T,
}

impl<T: Real> ModelSpec<T> {
    pub fn new(measure: JumpMeasure<T>, epsilon: T, horizon: T, x0: T, x_t: T) -> Result<Self> {
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
        if steps_floor(horizon, epsilon) < 1 {
            return Err(Error::invalid(
                "epsilon",
                format!("epsilon {epsilon} leaves no whole step within horizon {horizon}"),
            ));
        }
        if !x0.is_finite() {
            return Err(Error::invalid("x0", "must be finite"));
        }
        if !x_t.is_finite() {
            return Err(Error::invalid("xT", "must be finite"));
        }
        Ok(Self {
            measure,
            epsilon,
            horizon,
            x0,
            x_t,
        })
    }

    /// `N = ⌊T/ε⌋`.
    pub fn steps(&self) -> usize {
        steps_floor(self.horizon, self.epsilon)
    }

    /// `Δ = T - Nε`, the offset of the reversed-time lattice.
    pub fn delta(&self) -> T {
        (self.horizon - T::from_usize_lossy(self.steps()) * self.epsilon).max(T::zero())
    }

    pub fn with_epsilon(&self, epsilon: T) -> Result<Self> {
        Self::new(
            self.measure.clone(),
            epsilon,
            self.horizon,
            self.x0,
            self.x_t,
        )
    }
}

/// How a step path is read between knots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StepConvention {
    /// `states[k]` holds on `[times[k], times[k+1])`.
    RightContinuous,
    /// `states[0]` holds on `[0, times[0]]`, `states[k]` on `(times[k-1], times[k]]`.
    LeftContinuous,
}

/// A sampled or computed path given by its values at knot times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSample<T> {
    pub times: Vec<T>,
    pub states: Vec<T>,
    pub convention: StepConvention,
}

impl<T: Real> PathSample<T> {
    /// Value of the step function at `t`.
    pub fn value_at(&self, t: T) -> T {
        let k = match self.convention {
            StepConvention::RightContinuous => {
                self.times.partition_point(|&s| s <= t).saturating_sub(1)
            }
            StepConvention::LeftContinuous => self
                .times
                .partition_point(|&s| s < t)
                .min(self.times.len() - 1),
        };
        self.states[k]
    }

    /// Piecewise-linear interpolation through the knots.
    pub fn interpolate(&self, t: T) -> T {
        interpolate_linear(&self.times, &self.states, t)
    }
}

pub(crate) fn interpolate_linear<T: Real>(times: &[T], values: &[T], t: T) -> T {
    let k = times.partition_point(|&s| s <= t);
    if k == 0 {
        return values[0];
    }
    if k >= times.len() {
        return values[times.len() - 1];
    }
    let (t0, t1) = (times[k - 1], times[k]);
    let w = (t - t0) / (t1 - t0);
    values[k - 1] + w * (values[k] - values[k - 1])
}

/// One forward path on the lattice `0, ε, …, Nε`; held constant on `[Nε, T]`.
pub fn simulate_forward<T: Real, R: Rng + ?Sized>(
    spec: &ModelSpec<T>,
    rng: &mut R,
) -> PathSample<T> {
    let n = spec.steps();
    let mut times = Vec::with_capacity(n + 1);
    let mut states = Vec::with_capacity(n + 1);
    let mut x = spec.x0;
    times.push(T::zero());
    states.push(x);
    for k in 1..=n {
        x = x + spec.epsilon * spec.measure.sample(x, rng);
        times.push(T::from_usize_lossy(k) * spec.epsilon);
        states.push(x);
    }
    PathSample {
        times,
        states,
        convention: StepConvention::RightContinuous,
    }
}

/// RK4 solution of `ẋ = b(x)`, `x(0) = x0` on `[0, T]` with `steps` uniform steps.
pub fn deterministic_limit<T: Real>(spec: &ModelSpec<T>, steps: usize) -> Result<PathSample<T>> {
    if steps < 1 {
        return Err(Error::invalid("steps", "at least one step is required"));
    }
    let b = spec.measure.drift();
    let dt = spec.horizon / T::from_usize_lossy(steps);
    let half = T::lit(0.5);
    let sixth = T::one() / T::lit(6.0);
    let mut x = spec.x0;
    let mut times = vec![T::zero()];
    let mut states = vec![x];
    for k in 1..=steps {
        let k1 = b.eval(x);
        let k2 = b.eval(x + half * dt * k1);
        let k3 = b.eval(x + half * dt * k2);
        let k4 = b.eval(x + dt * k3);
        x = x + dt * sixth * (k1 + T::lit(2.0) * (k2 + k3) + k4);
        times.push(T::from_usize_lossy(k) * dt);
        states.push(x);
    }
    Ok(PathSample {
        times,
        states,
        convention: StepConvention::RightContinuous,
    })
}
