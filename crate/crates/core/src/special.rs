//! Gamma function and regularized incomplete gamma functions.
//!
//! The jump measure's CDF is a regularized incomplete gamma function, and its
//! far tails set the smallest transition probabilities of the lattice chain.
//! Both `P` and `Q = 1 - P` are therefore returned, each computed where it is
//! the accurate one.

use crate::real::Real;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

const MAX_ITER: usize = 1000;

/// `ln Γ(x)` for `x > 0` (and non-integer `x <= 0` via reflection).
pub fn ln_gamma<T: Real>(x: T) -> T {
    let half = T::lit(0.5);
    if x < half {
        // Γ(x)Γ(1-x) = π / sin(πx)
        let s = (T::PI() * x).sin().abs();
        return (T::PI() / s).ln() - ln_gamma(T::one() - x);
    }
    let x = x - T::one();
    let mut acc = T::lit(LANCZOS[0]);
    for (k, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc = acc + T::lit(c) / (x + T::from_usize_lossy(k));
    }
    let t = x + T::lit(LANCZOS_G) + half;
    half * (T::lit(2.0) * T::PI()).ln() + (x + half) * t.ln() - t + acc.ln()
}

/// `Γ(x)` for `x > 0`.
pub fn gamma<T: Real>(x: T) -> T {
    ln_gamma(x).exp()
}

/// Regularized lower and upper incomplete gamma functions `(P(a, x), Q(a, x))`
/// for `a > 0`, `x >= 0`.
///
/// Below `x = a + 1` the power series gives `P` to full relative precision;
/// above it the Lentz continued fraction gives `Q` to full relative precision,
/// which keeps far-tail probabilities meaningful long after `1 - P` has
/// rounded to zero.
pub fn gamma_pq<T: Real>(a: T, x: T) -> (T, T) {
    debug_assert!(a > T::zero());
    if x <= T::zero() {
        return (T::zero(), T::one());
    }
    if x.is_infinite() {
        return (T::one(), T::zero());
    }
    let prefactor = (a * x.ln() - x - ln_gamma(a)).exp();
    if x < a + T::one() {
        let p = (series(a, x) * prefactor).min(T::one());
        (p, T::one() - p)
    } else {
        let q = (continued_fraction(a, x) * prefactor).min(T::one());
        (T::one() - q, q)
    }
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p<T: Real>(a: T, x: T) -> T {
    gamma_pq(a, x).0
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q<T: Real>(a: T, x: T) -> T {
    gamma_pq(a, x).1
}

fn series<T: Real>(a: T, x: T) -> T {
    let mut ap = a;
    let mut term = T::one() / a;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        ap = ap + T::one();
        term = term * x / ap;
        sum = sum + term;
        if term.abs() < sum.abs() * T::epsilon() {
            break;
        }
    }
    sum
}

fn continued_fraction<T: Real>(a: T, x: T) -> T {
    let tiny = T::min_positive_value() / T::epsilon();
    let mut b = x + T::one() - a;
    let mut c = T::one() / tiny;
    let mut d = T::one() / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let fi = T::from_usize_lossy(i);
        let an = -fi * (fi - a);
        b = b + T::lit(2.0);
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = T::one() / d;
        let delta = d * c;
        h = h * delta;
        if (delta - T::one()).abs() < T::epsilon() {
            break;
        }
    }
    h
}
