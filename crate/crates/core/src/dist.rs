//! Marginal and conditional SNR distributions of the FA ports, and the
//! non-selected-port probability Ψ.
//!
//! Conditioned on the port-1 SNR `γ_1 = v1`, the remaining ports are
//! independent with noncentral-χ²-type laws of rate `β_m` and
//! noncentrality `z_m = τ_m κ + β_m ρ_m² v1`. Every pdf here multiplies
//! `e^{-large}` by `I_0(large)`, so all evaluations compose the exponent
//! in log domain and exponentiate once.

use crate::model::{PortParams, SystemConfig};
use crate::outage::TruncationPolicy;
use crate::scalar::{LogSum, Scalar};
use crate::special::{ln_i0, marcum_q1_unchecked};
use crate::{Error, Result};

/// Evaluation context conditioned on `γ_1 = v1`.
#[derive(Debug, Clone, Copy)]
pub struct ConditionalContext<'a, T> {
    /// Conditioning value of the port-1 SNR.
    pub v1: T,
    /// Per-port coefficients of the scenario.
    pub ports: &'a PortParams<T>,
    /// Rician factor.
    pub kappa: T,
}

impl<'a, T: Scalar> ConditionalContext<'a, T> {
    pub fn new(v1: T, ports: &'a PortParams<T>, kappa: T) -> Self {
        debug_assert!(v1 >= T::zero());
        Self { v1, ports, kappa }
    }
}

/// ln pdf of port `m` conditioned on `γ_1 = v1` (marginal convention for
/// `m = 1`): `ln β_m − z_m − β_m x + ln I_0(2√(β_m x z_m))`.
pub(crate) fn port_pdf_log<T: Scalar>(port: usize, x: T, ctx: &ConditionalContext<'_, T>) -> T {
    let beta = ctx.ports.beta(port);
    let z = ctx.ports.noncentrality(port, ctx.v1, ctx.kappa);
    beta.ln() - z - beta * x + ln_i0(T::of(2.0) * (beta * x * z).sqrt())
}

/// pdf of port `m` conditioned on `γ_1 = v1`; valid for every port under
/// the port-1 marginal convention.
pub(crate) fn port_pdf<T: Scalar>(port: usize, x: T, ctx: &ConditionalContext<'_, T>) -> T {
    port_pdf_log(port, x, ctx).exp()
}

/// CDF of port `m` conditioned on `γ_1 = v1`:
/// `1 − Q_1(√(2 z_m), √(2 β_m x))`.
pub(crate) fn port_cdf<T: Scalar>(port: usize, x: T, ctx: &ConditionalContext<'_, T>) -> T {
    if x <= T::zero() {
        return T::zero();
    }
    let beta = ctx.ports.beta(port);
    let z = ctx.ports.noncentrality(port, ctx.v1, ctx.kappa);
    T::one() - marcum_q1_unchecked((T::of(2.0) * z).sqrt(), (T::of(2.0) * beta * x).sqrt())
}

/// pdf of the port-1 SNR `γ_1` (noncentral χ² with two degrees of freedom,
/// scaled): `((κ+1)/γ̄) e^{−κ−(κ+1)v/γ̄} I_0(2√(κ(κ+1)v/γ̄))`.
pub fn pdf_gamma1<T: Scalar>(v1: T, cfg: &SystemConfig<T>) -> T {
    if v1 < T::zero() {
        return T::zero();
    }
    let beta = (cfg.kappa + T::one()) / cfg.avg_snr;
    (beta.ln() - cfg.kappa - beta * v1 + ln_i0(T::of(2.0) * (cfg.kappa * beta * v1).sqrt())).exp()
}

/// Upper quantile of `γ_1`: the smallest `v` with `P(γ_1 > v) ≤ tail`.
pub(crate) fn gamma1_upper_quantile<T: Scalar>(cfg: &SystemConfig<T>, tail: T) -> T {
    let beta = (cfg.kappa + T::one()) / cfg.avg_snr;
    let a = (T::of(2.0) * cfg.kappa).sqrt();
    let upper = |v: T| marcum_q1_unchecked(a, (T::of(2.0) * beta * v).sqrt());
    let mut hi = cfg.avg_snr;
    while upper(hi) > tail {
        hi = hi * T::of(2.0);
    }
    let mut lo = T::zero();
    for _ in 0..80 {
        let mid = (lo + hi) * T::of(0.5);
        if upper(mid) > tail {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

/// Conditional pdf of port `m ≥ 2` given `γ_1 = v1`, evaluated through the
/// closed Bessel form.
pub fn cond_pdf<T: Scalar>(port: usize, vm: T, ctx: &ConditionalContext<'_, T>) -> Result<T> {
    if port < 2 || port > ctx.ports.ports() {
        return Err(Error::Domain(format!(
            "cond_pdf: port {port} is not a conditioned port (2..=M)"
        )));
    }
    if vm < T::zero() {
        return Ok(T::zero());
    }
    Ok(port_pdf(port, vm, ctx))
}

/// Conditional pdf of port `m ≥ 2` through the series
/// `Σ_n d_{m,n}(v1) vm^n e^{−β_m vm}`, truncated once the terms decrease
/// and the current term adds less than `policy.tail_rel_tol` of the sum.
///
/// Matches [`cond_pdf`] to 1e-10 relative; mostly a transparency check of
/// the coefficients that feed the outage series.
pub fn cond_pdf_series<T: Scalar>(
    port: usize,
    vm: T,
    ctx: &ConditionalContext<'_, T>,
    policy: &TruncationPolicy<T>,
) -> Result<T> {
    if port < 2 || port > ctx.ports.ports() {
        return Err(Error::Domain(format!(
            "cond_pdf_series: port {port} is not a conditioned port (2..=M)"
        )));
    }
    if vm < T::zero() {
        return Ok(T::zero());
    }
    let beta = ctx.ports.beta(port);
    let z = ctx.ports.noncentrality(port, ctx.v1, ctx.kappa);
    // term_n = d_{m,n} vm^n e^{−β vm}; ratio t_{n+1}/t_n = β z vm / (n+1)²
    let ln_t0 = beta.ln() - z - beta * vm;
    if vm == T::zero() || z == T::zero() {
        return Ok(ln_t0.exp()); // only n = 0 survives (0^0 = 1)
    }
    let ln_ratio_num = (beta * z * vm).ln();
    let mut acc = LogSum::new();
    let mut ln_t = ln_t0;
    acc.add_log(ln_t);
    let tol_log = T::of(policy.tail_rel_tol.as_f64().min(1e-14)).ln();
    for n in 0..policy.n_max {
        let step = ln_ratio_num - T::of(2.0) * T::of_usize(n + 1).ln();
        ln_t += step;
        acc.add_log(ln_t);
        if step < T::zero() && ln_t < acc.ln_value() + tol_log {
            return Ok(acc.ln_value().exp());
        }
    }
    Err(Error::Numerical(format!(
        "cond_pdf_series: tail not decreasing within n_max = {} (last log-term {})",
        policy.n_max,
        ln_t.as_f64()
    )))
}

/// Conditional CDF of port `m ≥ 2` given `γ_1 = v1`:
/// `1 − Q_1(√(2 τ_m κ + 2 β_m ρ_m² v1), √(2 β_m vm))`.
pub fn cond_cdf<T: Scalar>(port: usize, vm: T, ctx: &ConditionalContext<'_, T>) -> T {
    debug_assert!(port >= 2, "port 1 is the conditioning port");
    if vm <= T::zero() {
        return T::zero();
    }
    port_cdf(port, vm, ctx)
}

/// Ψ(ν, v1): probability that every non-selected, non-pivot port
/// (`m ∈ {K+2..M}`) stays below `ν`, conditioned on `γ_1 = v1`.
/// Empty product (`K ≥ M−1`) gives 1.
pub fn psi<T: Scalar>(nu: T, ctx: &ConditionalContext<'_, T>, cfg: &SystemConfig<T>) -> T {
    let mut p = T::one();
    for m in (cfg.selected + 2)..=cfg.ports {
        p *= port_cdf(m, nu, ctx);
        if p == T::zero() {
            break;
        }
    }
    p
}

/// Lower bound on Ψ from the single-term pdf bound:
/// `∏_{m∈𝓜} e^{−z_m} (1 − e^{−β_m ν})`; always ≤ [`psi`].
pub fn psi_lb<T: Scalar>(nu: T, ctx: &ConditionalContext<'_, T>, cfg: &SystemConfig<T>) -> T {
    let mut ln_p = T::zero();
    for m in (cfg.selected + 2)..=cfg.ports {
        let z = ctx.ports.noncentrality(m, ctx.v1, ctx.kappa);
        let tail = T::one() - (-ctx.ports.beta(m) * nu).exp();
        if tail <= T::zero() {
            return T::zero();
        }
        ln_p += -z + tail.ln();
    }
    ln_p.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::port_coeffs;
    use crate::quad::{integrate_panels, feature_panels};

    /// Direct series I_0 used as the test-side reference.
    fn ref_i0(x: f64) -> f64 {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..300 {
            term *= q / ((k * k) as f64);
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
        }
        sum
    }

    fn policy() -> TruncationPolicy<f64> {
        TruncationPolicy::default()
    }

    /// Aperture that puts `ρ_2` at the first root of J_0 for M = 2.
    const W_RHO_ZERO: f64 = 2.404825557695773 / (2.0 * std::f64::consts::PI);

    #[test]
    fn pdf_gamma1_rayleigh_reduction() {
        let cfg = SystemConfig::new(4, 2, 0.2f64, 0.0, 3.0, 1.0).unwrap();
        for &v in &[0.0, 0.7, 2.5, 9.0] {
            let expect = (1.0 / 3.0) * (-v / 3.0f64).exp();
            assert!((pdf_gamma1(v, &cfg) - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn pdf_gamma1_direct_value() {
        // kappa = 1, gamma_bar = 1, v1 = 1: 2 e^{-3} I_0(2 sqrt 2)
        let cfg = SystemConfig::new(4, 2, 0.2f64, 1.0, 1.0, 1.0).unwrap();
        let expect = 2.0 * (-3.0f64).exp() * ref_i0(2.0 * 2.0f64.sqrt());
        let got = pdf_gamma1(1.0, &cfg);
        assert!((got - expect).abs() < 1e-12 * expect, "{got} vs {expect}");
    }

    #[test]
    fn pdf_gamma1_normalizes() {
        for &(kappa, gbar) in &[(0.0f64, 1.0), (1.0, 3.0), (6.0, 0.4)] {
            let cfg = SystemConfig::new(4, 2, 0.2, kappa, gbar, 1.0).unwrap();
            let vmax = gamma1_upper_quantile(&cfg, 1e-13);
            let edges: Vec<f64> = (0..=40).map(|i| vmax * i as f64 / 40.0).collect();
            let mass = integrate_panels(&edges, 32, |v| pdf_gamma1(v, &cfg));
            assert!((mass - 1.0).abs() < 1e-8, "kappa={kappa}: mass {mass}");
        }
    }

    #[test]
    fn cond_pdf_rejects_port_one() {
        let cfg = SystemConfig::new(4, 2, 0.2f64, 1.0, 3.0, 1.0).unwrap();
        let pp = port_coeffs(&cfg).unwrap();
        let ctx = ConditionalContext::new(1.0, &pp, cfg.kappa);
        assert!(cond_pdf(1, 0.5, &ctx).is_err());
        assert!(cond_pdf_series(1, 0.5, &ctx, &policy()).is_err());
    }

    #[test]
    fn cond_pdf_direct_value() {
        // (M=2, W=0.5, kappa=1, gamma_bar=10, v1=2, vm=1) against Eq.-level
        // arithmetic with the reference I_0
        let cfg = SystemConfig::new(2, 1, 0.5f64, 1.0, 10.0, 1.0).unwrap();
        let pp = port_coeffs(&cfg).unwrap();
        let ctx = ConditionalContext::new(2.0, &pp, cfg.kappa);
        let (beta, tau, rho_sq) = (pp.beta(2), pp.tau(2), pp.rho_sq_stat(2));
        let z = tau * 1.0 + beta * rho_sq * 2.0;
        let expect = beta * (-tau).exp() * (-beta * (1.0 + rho_sq * 2.0)).exp()
            * ref_i0(2.0 * (beta * 1.0 * z).sqrt());
        let got = cond_pdf(2, 1.0, &ctx).unwrap();
        assert!((got - expect).abs() < 1e-12 * expect, "{got} vs {expect}");
    }

    #[test]
    fn cond_pdf_independence_reduction() {
        // rho_2 ~ 0 (aperture at the J_0 root): Eq. (8) collapses to the
        // marginal-form pdf with beta_m and tau_m = 1
        let cfg = SystemConfig::new(2, 1, W_RHO_ZERO, 1.3, 5.0, 1.0).unwrap();
        let pp = port_coeffs(&cfg).unwrap();
        assert!(pp.rho[1].abs() < 1e-12);
        let ctx = ConditionalContext::new(3.7, &pp, cfg.kappa);
        let beta = pp.beta(2);
        for &vm in &[0.1, 1.0, 4.0] {
            let expect = beta * (-cfg.kappa - beta * vm).exp()
                * ref_i0(2.0 * (beta * vm * cfg.kappa).sqrt());
            let got = cond_pdf(2, vm, &ctx).unwrap();
            assert!((got - expect).abs() < 1e-9 * expect.max(1e-3));
        }
    }

    #[test]
    fn cond_pdf_normalizes() {
        let cfg = SystemConfig::new(5, 2, 0.3f64, 1.0, 4.0, 1.0).unwrap();
        let pp = port_coeffs(&cfg).unwrap();
        for &v1 in &[0.0, 1.5, 8.0] {
            let ctx = ConditionalContext::new(v1, &pp, cfg.kappa);
            for m in 2..=5 {
                let beta = pp.beta(m);
                let z = pp.noncentrality(m, v1, cfg.kappa);
                let mean = (1.0 + z) / beta;
                let sigma = (1.0 + 2.0 * z).sqrt() / beta;
                let hi = mean + 14.0 * sigma + 20.0 / beta;
                let edges = feature_panels(0.0, hi, mean, sigma, 8);
                let mass = integrate_panels(&edges, 32, |x| port_pdf(m, x, &ctx));
                assert!((mass - 1.0).abs() < 1e-8, "m={m} v1={v1}: mass {mass}");
            }
        }
    }

    #[test]
    fn series_matches_bessel_form_on_grid() {
        let cfg = SystemConfig::new(4, 2, 0.25f64, 1.0, 8.0, 1.0).unwrap();
        let pp = port_coeffs(&cfg).unwrap();
        let pol = policy();
        // deterministic pseudo-random grid
        let mut state = 0x243F6A8885A308D3u64;
        let mut unit = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let m = 2 + (unit() * 3.0) as usize;
            let vm = unit() * 12.0;
            let v1 = unit() * 15.0;
            let ctx = ConditionalContext::new(v1, &pp, cfg.kappa);
            let a = cond_pdf(m, vm, &ctx).unwrap();
            let b = cond_pdf_series(m, vm, &ctx, &pol).unwrap();
            assert!(
                (a - b).abs() <= 1e-10 * a.abs().max(1e-300),
                "m={m} vm={vm} v1={v1}: {a} vs {b}"
            );
        }
    }

    #[test]
    fn series_at_zero_is_d0() {
        let cfg = SystemConfig::new(4, 2, 0.25f64, 1.0, 8.0, 1.0).unwrap();
        let pp = port_coeffs(&cfg).unwrap();
        let ctx = ConditionalContext::new(2.0, &pp, cfg.kappa);
        let got = cond_pdf_series(3, 0.0, &ctx, &policy()).unwrap();
        let expect = crate::model::d_coeff_log(3, 0, 2.0, &pp, cfg.kappa).exp();
        assert!((got - expect).abs() < 1e-13 * expect);
    }

    #[test]
    fn series_rayleigh_single_term() {
        // kappa = 0 and rho ~ 0: density is the single exponential term
        let cfg = SystemConfig::new(2, 1, W_RHO_ZERO, 0.0, 5.0, 1.0).unwrap();
        let pp = port_coeffs(&cfg).unwrap();
        let ctx = ConditionalContext::new(0.0, &pp, cfg.kappa);
        let beta = pp.beta(2);
        for &vm in &[0.2, 1.0, 3.3] {
            let got = cond_pdf_series(2, vm, &ctx, &policy()).unwrap();
            let expect = beta * (-beta * vm).exp();
            assert!((got - expect).abs() < 1e-10 * expect);
        }
    }

    #[test]
    fn cond_cdf_limits_and_quadrature_consistency() {
        let cfg = SystemConfig::new(5, 2, 0.3f64, 1.5, 6.0, 1.0).unwrap();
        let pp = port_coeffs(&cfg).unwrap();
        let ctx = ConditionalContext::new(2.2, &pp, cfg.kappa);
        assert_eq!(cond_cdf(3, 0.0, &ctx), 0.0);
        assert!((cond_cdf(3, 1e6, &ctx) - 1.0).abs() < 1e-12);
        // CDF increments equal pdf integrals
        for m in 2..=5 {
            let (lo, hi) = (0.8, 5.0);
            let inc = cond_cdf(m, hi, &ctx) - cond_cdf(m, lo, &ctx);
            let edges: Vec<f64> = (0..=24).map(|i| lo + (hi - lo) * i as f64 / 24.0).collect();
            let quad = integrate_panels(&edges, 32, |x| port_pdf(m, x, &ctx));
            assert!((inc - quad).abs() < 1e-8, "m={m}: {inc} vs {quad}");
        }
        // monotone in vm
        let mut prev = 0.0;
        for i in 0..=50 {
            let vm = i as f64 * 0.3;
            let c = cond_cdf(4, vm, &ctx);
            assert!(c >= prev - 1e-13);
            prev = c;
        }
    }

    #[test]
    fn psi_edge_cases() {
        let pp = port_coeffs(&SystemConfig::new(6, 2, 0.3f64, 1.0, 5.0, 1.0).unwrap()).unwrap();
        let cfg = SystemConfig::new(6, 2, 0.3f64, 1.0, 5.0, 1.0).unwrap();
        let ctx = ConditionalContext::new(1.0, &pp, cfg.kappa);
        assert_eq!(psi(0.0, &ctx, &cfg), 0.0);
        assert!((psi(1e9, &ctx, &cfg) - 1.0).abs() < 1e-12);
        // M = K+1: empty product
        let cfg1 = SystemConfig::new(3, 2, 0.3f64, 1.0, 5.0, 1.0).unwrap();
        let pp1 = port_coeffs(&cfg1).unwrap();
        let ctx1 = ConditionalContext::new(1.0, &pp1, cfg1.kappa);
        assert_eq!(psi(0.7, &ctx1, &cfg1), 1.0);
        assert_eq!(psi_lb(0.7, &ctx1, &cfg1), 1.0);
    }

    #[test]
    fn psi_monotone_in_nu() {
        let cfg = SystemConfig::new(8, 2, 0.25f64, 1.0, 4.0, 1.0).unwrap();
        let pp = port_coeffs(&cfg).unwrap();
        let ctx = ConditionalContext::new(2.0, &pp, cfg.kappa);
        let mut prev = 0.0;
        for i in 0..=40 {
            let nu = i as f64 * 0.25;
            let p = psi(nu, &ctx, &cfg);
            assert!(p >= prev - 1e-13);
            prev = p;
        }
    }

    #[test]
    fn psi_lb_dominated_by_psi() {
        let cfg = SystemConfig::new(7, 2, 0.3f64, 1.2, 5.0, 1.0).unwrap();
        let pp = port_coeffs(&cfg).unwrap();
        for &v1 in &[0.0, 0.9, 3.4, 11.0] {
            let ctx = ConditionalContext::new(v1, &pp, cfg.kappa);
            for &nu in &[0.05, 0.4, 1.1, 2.8, 7.0] {
                let lb = psi_lb(nu, &ctx, &cfg);
                let exact = psi(nu, &ctx, &cfg);
                assert!(lb <= exact + 1e-12, "v1={v1} nu={nu}: {lb} > {exact}");
            }
        }
    }

    #[test]
    fn psi_lb_tight_at_rayleigh_origin() {
        // kappa = 0, v1 = 0 makes the bound exact
        let cfg = SystemConfig::new(6, 2, 0.3f64, 0.0, 5.0, 1.0).unwrap();
        let pp = port_coeffs(&cfg).unwrap();
        let ctx = ConditionalContext::new(0.0, &pp, cfg.kappa);
        for &nu in &[0.1, 0.9, 2.5] {
            let lb = psi_lb(nu, &ctx, &cfg);
            let exact = psi(nu, &ctx, &cfg);
            assert!((lb - exact).abs() < 1e-10 * exact.max(1e-12), "nu={nu}");
        }
    }

    #[test]
    fn rho_sign_only_enters_tau() {
        // distribution formulas depend on rho through rho² (and signed rho
        // through tau); flipping the sign of rho_m leaves beta and the pdf
        // untouched while tau moves
        let cfg = SystemConfig::new(6, 2, 0.45f64, 1.0, 5.0, 1.0).unwrap();
        let pp = port_coeffs(&cfg).unwrap();
        // W = 0.45 pushes the far ports past the first J_0 root
        assert!(pp.rho.iter().any(|r| *r < 0.0), "expected a negative correlation");
        for m in 2..=6 {
            let r = pp.rho[m - 1];
            let beta_flip = (cfg.kappa + 1.0) / ((1.0 - r * r) * cfg.avg_snr);
            assert!((pp.beta(m) - beta_flip).abs() < 1e-15 * beta_flip);
            let tau_signed = (1.0 - r) / (1.0 + r);
            assert!((pp.tau(m) - tau_signed).abs() < 1e-13 * tau_signed.abs().max(1.0));
        }
    }
}
