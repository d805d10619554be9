//! Gauss–Legendre quadrature rules and composite integration helpers.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::scalar::Scalar;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on [-1, 1].
///
/// Nodes are found by Newton iteration on the Legendre recurrence and
/// cached per order (the cache is process-wide and thread-safe).
pub fn gauss_legendre(n: usize) -> Arc<(Vec<f64>, Vec<f64>)> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<(Vec<f64>, Vec<f64>)>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().unwrap().get(&n) {
        return rule.clone();
    }
    let rule = Arc::new(compute_rule(n));
    cache.lock().unwrap().insert(n, rule.clone());
    rule
}

fn compute_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature order must be at least 1");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess for the i-th positive root
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n(x) and its derivative by upward recurrence
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// ∫_a^b f(x) dx by a single `n`-point Gauss–Legendre rule.
pub fn integrate<T: Scalar, F: FnMut(T) -> T>(a: T, b: T, n: usize, mut f: F) -> T {
    let rule = gauss_legendre(n);
    let c = (a + b) * T::of(0.5);
    let h = (b - a) * T::of(0.5);
    let mut sum = T::zero();
    for (&t, &w) in rule.0.iter().zip(rule.1.iter()) {
        sum += T::of(w) * f(c + h * T::of(t));
    }
    sum * h
}

/// Composite Gauss–Legendre over the panels delimited by `edges`
/// (strictly increasing), `n` nodes per panel.
pub fn integrate_panels<T: Scalar, F: FnMut(T) -> T>(edges: &[T], n: usize, mut f: F) -> T {
    let mut total = T::zero();
    for w in edges.windows(2) {
        total += integrate(w[0], w[1], n, &mut f);
    }
    total
}

/// Splits `[a, b]` into panels that resolve a localized feature at
/// `center` with width scale `sigma`, in addition to a coarse background
/// grid of `coarse` panels. Returns the sorted panel edges.
pub fn feature_panels<T: Scalar>(a: T, b: T, center: T, sigma: T, coarse: usize) -> Vec<T> {
    let mut edges = Vec::with_capacity(coarse + 12);
    for i in 0..=coarse {
        edges.push(a + (b - a) * T::of_usize(i) / T::of_usize(coarse));
    }
    if sigma > T::zero() && sigma.is_finite() {
        for &k in &[-8.0, -4.0, -2.0, -1.0, 1.0, 2.0, 4.0, 8.0] {
            let e = center + T::of(k) * sigma;
            if e > a && e < b {
                edges.push(e);
            }
        }
    }
    edges.sort_by(|x, y| x.partial_cmp(y).unwrap());
    edges.dedup_by(|x, y| (*x - *y).abs() <= (b - a) * T::of(1e-14));
    edges
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_integrates_polynomials_exactly() {
        // n-point rule is exact for degree 2n-1
        for n in [2usize, 5, 16, 32, 64] {
            let deg = 2 * n - 1;
            let exact = 1.0 / (deg as f64 + 1.0); // ∫_0^1 x^deg
            let got = integrate(0.0f64, 1.0, n, |x| x.powi(deg as i32));
            assert!((got - exact).abs() < 1e-14, "n = {n}: {got} vs {exact}");
        }
    }

    #[test]
    fn weights_sum_to_two() {
        for n in [1usize, 7, 24, 48] {
            let rule = gauss_legendre(n);
            let s: f64 = rule.1.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n = {n}");
        }
    }

    #[test]
    fn integrates_gaussian_accurately() {
        // ∫_{-8}^{8} e^{-x²/2} dx = √(2π) up to ~1e-15 of tail mass
        let got =
            integrate_panels(&[-8.0f64, -4.0, -2.0, 0.0, 2.0, 4.0, 8.0], 32, |x| (-0.5 * x * x).exp());
        let exact = (2.0 * std::f64::consts::PI).sqrt();
        assert!((got - exact).abs() < 1e-12, "{got} vs {exact}");
    }

    #[test]
    fn feature_panels_cover_interval() {
        let edges = feature_panels(0.0f64, 10.0, 3.0, 0.2, 4);
        assert_eq!(edges[0], 0.0);
        assert_eq!(*edges.last().unwrap(), 10.0);
        assert!(edges.windows(2).all(|w| w[1] > w[0]));
        // feature edges present
        assert!(edges.iter().any(|&e| (e - 2.8).abs() < 1e-12));
    }
}
