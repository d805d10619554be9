//! Numerically hardened scalar special functions.
//!
//! Everything downstream — the Rician pdfs, the conditional CDFs, the
//! series coefficients — reduces to the four kernels in this module:
//! `J_0`, `ln I_0`, the first-order Marcum Q, and the regularized lower
//! incomplete gamma. All of them avoid overflow by composing large
//! exponents in log domain and avoid cancellation by summing only
//! nonnegative terms.

use crate::scalar::Scalar;
use crate::{Error, Result};

/// Bessel function of the first kind, order zero.
///
/// Evaluated as the N-point rectangle rule on the periodic integral
/// `J_0(x) = (1/2π) ∫_0^{2π} cos(x sin θ) dθ`. By the Jacobi–Anger
/// expansion the rule is exact up to an aliasing error of `2 J_N(|x|)`,
/// which for `N ≥ 2.4|x| + 64` is far below double-precision resolution.
/// Absolute error ≤ 1e-12 for |x| ≤ 100 (and well beyond).
pub fn bessel_j0<T: Scalar>(x: T) -> T {
    let xa = x.abs();
    let n = 64 + 2 * (T::of(1.2) * xa).to_usize().unwrap_or(usize::MAX / 4).min(100_000);
    let step = T::of(2.0) * T::PI() / T::of_usize(n);
    let mut sum = T::zero();
    for j in 0..n {
        sum += (xa * (step * T::of_usize(j)).sin()).cos();
    }
    sum / T::of_usize(n)
}

/// Natural log of the modified Bessel function `I_0(x)`, `x ≥ 0`.
///
/// Series of nonnegative terms for `x ≤ 100` (no cancellation, no
/// overflow since `I_0(100) ≈ 1e42`), asymptotic expansion
/// `I_0(x) ≈ e^x/√(2πx) · Σ c_k x^{-k}` beyond, where the switch point
/// keeps the truncated tail below 1e-14 relative. No overflow for `x`
/// up to 1e6 and far past.
pub fn log_bessel_i0<T: Scalar>(x: T) -> Result<T> {
    if x < T::zero() {
        return Err(Error::Domain(format!("log_bessel_i0: negative argument {x}")));
    }
    Ok(ln_i0(x))
}

/// `log_bessel_i0` without the domain check; callers guarantee `x ≥ 0`.
pub(crate) fn ln_i0<T: Scalar>(x: T) -> T {
    if x <= T::of(100.0) {
        let q = x * x * T::of(0.25);
        let mut term = T::one();
        let mut sum = T::one();
        let mut k = 1usize;
        loop {
            let kf = T::of_usize(k);
            term = term * q / (kf * kf);
            sum += term;
            if term <= sum * T::epsilon() || k > 400 {
                break;
            }
            k += 1;
        }
        sum.ln()
    } else {
        // c_k = (1·3·…·(2k−1))² / (k! 8^k)
        const C: [f64; 8] = [
            1.0,
            0.125,
            0.0703125,
            0.0732421875,
            0.112152099609375,
            0.227108001708984375,
            0.57250142097473144531,
            1.72772750258445739746,
        ];
        let inv = x.recip();
        let mut poly = T::zero();
        for &c in C.iter().rev() {
            poly = poly * inv + T::of(c);
        }
        x - (T::of(2.0) * T::PI() * x).ln() * T::of(0.5) + poly.ln()
    }
}

/// Natural log of the gamma function for positive arguments.
///
/// Lanczos approximation (g = 7, 9 coefficients), relative error of the
/// result around 1e-15. Returns `+inf` at the poles (`z ≤ 0` integer) and
/// uses the reflection formula for `0 < z < 0.5`.
pub fn ln_gamma<T: Scalar>(z: T) -> T {
    const COEFFS: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if z <= T::zero() {
        if z == z.floor() {
            return T::infinity();
        }
        // ln Γ(z) = ln(π / sin(πz)) − ln Γ(1 − z)
        let s = (T::PI() * z).sin().abs();
        return (T::PI() / s).ln() - ln_gamma(T::one() - z);
    }
    if z < T::of(0.5) {
        let s = (T::PI() * z).sin();
        return (T::PI() / s).ln() - ln_gamma(T::one() - z);
    }
    let zm1 = z - T::one();
    let mut acc = T::of(COEFFS[0]);
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += T::of(c) / (zm1 + T::of_usize(i));
    }
    let t = zm1 + T::of(7.5);
    T::of(0.5 * (2.0 * std::f64::consts::PI).ln()) + (zm1 + T::of(0.5)) * t.ln() - t + acc.ln()
}

/// `ln(n!)`, exact through the integer factorial for `n ≤ 34`
/// (fits in `u128`), `ln Γ(n+1)` beyond.
pub fn log_factorial<T: Scalar>(n: usize) -> T {
    if n <= 34 {
        let mut f: u128 = 1;
        for k in 2..=n as u128 {
            f *= k;
        }
        T::of(f as f64).ln()
    } else {
        ln_gamma(T::of_usize(n + 1))
    }
}

/// Regularized lower incomplete gamma function `P(a, x) = γ(a, x)/Γ(a)`.
///
/// Series expansion for `x < a + 1`, Lentz continued fraction for the
/// complement otherwise; both sides carry the `exp(a ln x − x − ln Γ(a))`
/// prefactor in log domain. Error ≤ 1e-12 over the ranges used here.
pub fn lower_gamma_regularized<T: Scalar>(a: T, x: T) -> Result<T> {
    if a <= T::zero() {
        return Err(Error::Domain(format!("lower_gamma_regularized: a = {a} must be positive")));
    }
    if x < T::zero() {
        return Err(Error::Domain(format!("lower_gamma_regularized: x = {x} must be nonnegative")));
    }
    Ok(gamma_p(a, x))
}

/// `lower_gamma_regularized` without the domain checks.
pub(crate) fn gamma_p<T: Scalar>(a: T, x: T) -> T {
    if x == T::zero() {
        return T::zero();
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + T::one() {
        // P(a,x) = prefactor · Σ_{k≥0} x^k / (a (a+1) … (a+k))
        let mut term = a.recip();
        let mut sum = term;
        let mut ak = a;
        for _ in 0..500 {
            ak += T::one();
            term = term * x / ak;
            sum += term;
            if term < sum * T::epsilon() {
                break;
            }
        }
        (log_prefactor + sum.ln()).exp().min(T::one())
    } else {
        // Q(a,x) via the modified Lentz continued fraction.
        let tiny = T::of(1e-300);
        let eps = T::epsilon();
        let mut b = x + T::one() - a;
        let mut c = T::of(1e300);
        let mut d = b.recip();
        let mut f = d;
        for i in 1..500 {
            let an = -T::of_usize(i) * (T::of_usize(i) - a);
            b += T::of(2.0);
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = d.recip();
            let delta = d * c;
            f = f * delta;
            if (delta - T::one()).abs() < eps {
                break;
            }
        }
        let q = (log_prefactor + f.ln()).exp();
        (T::one() - q).max(T::zero())
    }
}

/// First-order Marcum Q function `Q_1(a, b)`, the complementary CDF of a
/// noncentral chi distribution with two degrees of freedom.
///
/// Computed as the Poisson mixture
/// `Q_1(a,b) = Σ_k e^{−a²/2} (a²/2)^k / k! · Q(k+1, b²/2)`,
/// summed from `k = 0` for small noncentrality and from the Poisson mode
/// outward (multiplicative recurrences anchored by `ln Γ`) for large
/// noncentrality. Absolute error ≤ 1e-10 for `a, b ≤ 50`; result ∈ [0, 1].
pub fn marcum_q1<T: Scalar>(a: T, b: T) -> Result<T> {
    if a < T::zero() || b < T::zero() {
        return Err(Error::Domain(format!("marcum_q1: negative argument (a = {a}, b = {b})")));
    }
    Ok(marcum_q1_unchecked(a, b))
}

/// `marcum_q1` without the domain check; callers guarantee `a, b ≥ 0`.
pub(crate) fn marcum_q1_unchecked<T: Scalar>(a: T, b: T) -> T {
    if b == T::zero() {
        return T::one();
    }
    if a == T::zero() {
        return (-b * b * T::of(0.5)).exp();
    }
    // Gaussian-tail shortcuts: 1 − Q_1 ≤ e^{−(a−b)²/2} for a > b and
    // Q_1 ≤ e^{−(b−a)²/2} for b > a, so past ~√1500 separation the
    // value is 0 or 1 to far below any tolerance used here.
    let d = a - b;
    if d * d * T::of(0.5) > T::of(745.0) {
        return if d > T::zero() { T::one() } else { T::zero() };
    }
    let lambda = a * a * T::of(0.5); // Poisson intensity of the mixture
    let x = b * b * T::of(0.5); // inner upper-gamma argument
    if lambda <= T::of(30.0) {
        marcum_ascending(lambda, x)
    } else {
        marcum_mode_anchored(lambda, x)
    }
}

/// Ascending series from `k = 0`; safe while `e^{−λ}` is representable.
fn marcum_ascending<T: Scalar>(lambda: T, x: T) -> T {
    let mut w = (-lambda).exp(); // Poisson(λ) pmf at k
    let mut r = (-x).exp(); // Poisson(x) pmf at k
    let mut g = r; // Q(k+1, x) = P(Poisson(x) ≤ k)
    let mut sum = w * g;
    let mut consumed = w; // Σ pmf so far; remainder bounds the tail
    let mut k = 1usize;
    loop {
        let kf = T::of_usize(k);
        w = w * lambda / kf;
        r = r * x / kf;
        g += r;
        sum += w * g;
        consumed += w;
        if T::one() - consumed < T::of(1e-17) || k > 700 {
            break;
        }
        k += 1;
    }
    sum.min(T::one())
}

/// Two-pmf window summation anchored at the Poisson modes; handles large
/// `λ` and `x` where the `k = 0` terms underflow.
fn marcum_mode_anchored<T: Scalar>(lambda: T, x: T) -> T {
    let spread = T::of(10.0) * lambda.sqrt() + T::of(20.0);
    let k_lo = (lambda - spread).max(T::zero()).floor().as_f64() as usize;
    let k_hi = (lambda + spread).ceil().as_f64() as usize;

    let pois = |mean: T, k: usize| -> T {
        let kf = T::of_usize(k);
        (-mean + kf * mean.ln() - ln_gamma(kf + T::one())).exp()
    };

    // Prefix CDF of Poisson(x) up to k_lo − 1 through the regularized
    // upper gamma identity P(Poisson(x) ≤ n) = Q(n+1, x).
    let mut g = if k_lo == 0 {
        T::zero()
    } else {
        T::one() - gamma_p(T::of_usize(k_lo), x)
    };
    let mut r = pois(x, k_lo);
    let mut w = pois(lambda, k_lo);
    let mut sum = T::zero();
    for k in k_lo..=k_hi {
        if k > k_lo {
            let kf = T::of_usize(k);
            w = w * lambda / kf;
            r = r * x / kf;
        }
        g += r;
        sum += w * g;
    }
    sum.min(T::one())
}
