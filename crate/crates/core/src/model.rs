//! Physical scenario and per-port derived coefficients.
//!
//! A scenario is `M` equispaced fluid-antenna ports across `W` wavelengths.
//! Port `m` is correlated with port 1 through `ρ_m = J_0(2π(m−1)W/(M−1))`,
//! and conditioned on the port-1 SNR its law is governed by the rate
//! `β_m = (κ+1)/((1−ρ_m²) γ̄)` and the LoS attenuation
//! `τ_m = (1−ρ_m)/(1+ρ_m)`.
//!
//! Port 1 needs a convention: the correlation model yields `ρ_1 = 1`,
//! which makes `β_1` singular, yet the marginal law of port 1 equals the
//! conditional law at `ρ = 0`, `β = (κ+1)/γ̄`, `τ = 1`. All distribution
//! formulas therefore treat port 1 with `β_1 = (κ+1)/γ̄`, `τ_1 = 1` and
//! `ρ_1 → 0`, while [`PortParams::rho`] keeps the correlation-model value
//! `ρ_1 = 1`; [`PortParams::rho_sq_stat`] applies the convention.

use crate::scalar::Scalar;
use crate::special::{bessel_j0, log_factorial};
use crate::{Error, Result};

/// Full parameter set of one FAS scenario. All SNR-like quantities are
/// linear; dB conversion happens only at the CLI boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemConfig<T> {
    /// Number of fluid antenna ports.
    pub ports: usize,
    /// Number of selected (combined) ports.
    pub selected: usize,
    /// Aperture in wavelengths.
    pub aperture: T,
    /// Rician factor κ (ratio of LoS to scattered power), κ = 0 is Rayleigh.
    pub kappa: T,
    /// Average SNR γ̄ (linear).
    pub avg_snr: T,
    /// Outage threshold γ_th (linear).
    pub threshold: T,
}

impl<T: Scalar> SystemConfig<T> {
    /// Validates `1 ≤ K ≤ M`, `M ≥ 2`, `W > 0`, `κ ≥ 0`, `γ̄ > 0`, `γ_th > 0`.
    pub fn new(
        ports: usize,
        selected: usize,
        aperture: T,
        kappa: T,
        avg_snr: T,
        threshold: T,
    ) -> Result<Self> {
        if ports < 2 {
            return Err(Error::Config(format!("M = {ports} must be at least 2")));
        }
        if selected < 1 || selected > ports {
            return Err(Error::Config(format!(
                "K = {selected} must satisfy 1 <= K <= M = {ports}"
            )));
        }
        if !(aperture > T::zero() && aperture.is_finite()) {
            return Err(Error::Config(format!("W = {aperture} must be positive")));
        }
        if !(kappa >= T::zero() && kappa.is_finite()) {
            return Err(Error::Config(format!("kappa = {kappa} must be nonnegative")));
        }
        if !(avg_snr > T::zero() && avg_snr.is_finite()) {
            return Err(Error::Config(format!("gamma_bar = {avg_snr} must be positive")));
        }
        if !(threshold > T::zero() && threshold.is_finite()) {
            return Err(Error::Config(format!("gamma_th = {threshold} must be positive")));
        }
        Ok(Self {
            ports,
            selected,
            aperture,
            kappa,
            avg_snr,
            threshold,
        })
    }
}

/// LoS and non-LoS powers of the unit-mean-square Rician channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RicianParams<T> {
    /// LoS power μ_h².
    pub los_power: T,
    /// Scattered power σ_h².
    pub scatter_power: T,
}

/// κ ↦ (μ_h², σ_h²) = (κ/(κ+1), 1/(κ+1)).
pub fn rician_params<T: Scalar>(kappa: T) -> Result<RicianParams<T>> {
    if kappa < T::zero() {
        return Err(Error::Domain(format!("rician_params: kappa = {kappa} must be nonnegative")));
    }
    let denom = kappa + T::one();
    Ok(RicianParams {
        los_power: kappa / denom,
        scatter_power: denom.recip(),
    })
}

/// Spatial correlations `ρ_m = J_0(2π(m−1)W/(M−1))` for `m = 1..M`.
pub fn port_correlations<T: Scalar>(ports: usize, aperture: T) -> Result<Vec<T>> {
    if ports < 2 {
        return Err(Error::Config(format!("M = {ports} must be at least 2 (port spacing divides by M-1)")));
    }
    if !(aperture > T::zero()) {
        return Err(Error::Config(format!("W = {aperture} must be positive")));
    }
    let scale = T::of(2.0) * T::PI() * aperture / T::of_usize(ports - 1);
    Ok((0..ports)
        .map(|i| {
            if i == 0 {
                T::one()
            } else {
                bessel_j0(scale * T::of_usize(i))
            }
        })
        .collect())
}

/// Per-port derived coefficients with the port-1 marginal convention.
#[derive(Debug, Clone, PartialEq)]
pub struct PortParams<T> {
    /// Correlation-model values; `rho[0] = 1` exactly.
    pub rho: Vec<T>,
    /// Rate parameters; `beta[0] = (κ+1)/γ̄` by the marginal convention.
    pub beta: Vec<T>,
    /// LoS attenuation factors `(1−ρ_m)/(1+ρ_m)` with signed `ρ_m`;
    /// `tau[0] = 1`, in [0, 1] for `ρ_m ≥ 0` and above 1 past the first
    /// `J_0` root.
    pub tau: Vec<T>,
}

impl<T: Scalar> PortParams<T> {
    /// Number of ports.
    pub fn ports(&self) -> usize {
        self.rho.len()
    }

    /// `β_m` for 1-based port index.
    #[inline]
    pub fn beta(&self, port: usize) -> T {
        self.beta[port - 1]
    }

    /// `τ_m` for 1-based port index.
    #[inline]
    pub fn tau(&self, port: usize) -> T {
        self.tau[port - 1]
    }

    /// `ρ_m²` as used by every distribution formula: 0 for port 1
    /// (marginal convention), `ρ_m²` otherwise.
    #[inline]
    pub fn rho_sq_stat(&self, port: usize) -> T {
        if port == 1 {
            T::zero()
        } else {
            let r = self.rho[port - 1];
            r * r
        }
    }

    /// Noncentrality `z_m(v1) = τ_m κ + β_m ρ_m² v1` of the conditional
    /// port law; the Poisson intensity of its Erlang-mixture expansion.
    #[inline]
    pub fn noncentrality(&self, port: usize, v1: T, kappa: T) -> T {
        self.tau(port) * kappa + self.beta(port) * self.rho_sq_stat(port) * v1
    }

    /// `τ_[M] = Σ_m τ_m`.
    pub fn tau_total(&self) -> T {
        self.tau.iter().fold(T::zero(), |acc, &t| acc + t)
    }

    /// `β_ρ^[M] = Σ_m β_m ρ_m²` under the marginal convention (the port-1
    /// term vanishes).
    pub fn beta_rho_total(&self) -> T {
        (1..=self.ports()).fold(T::zero(), |acc, m| {
            acc + self.beta(m) * self.rho_sq_stat(m)
        })
    }
}

/// Derives [`PortParams`] from a scenario.
///
/// Ports `m ≥ 2` with `ρ_m²` within 1e-9 of 1 are rejected: a fully
/// correlated port has a degenerate conditional law and its rate blows up.
pub fn port_coeffs<T: Scalar>(cfg: &SystemConfig<T>) -> Result<PortParams<T>> {
    let rho = port_correlations(cfg.ports, cfg.aperture)?;
    let kp1 = cfg.kappa + T::one();
    let mut beta = Vec::with_capacity(cfg.ports);
    let mut tau = Vec::with_capacity(cfg.ports);
    for (i, &r) in rho.iter().enumerate() {
        if i == 0 {
            beta.push(kp1 / cfg.avg_snr);
            tau.push(T::one());
            continue;
        }
        let one_minus_rho_sq = T::one() - r * r;
        if one_minus_rho_sq < T::of(1e-9) {
            return Err(Error::Config(format!(
                "port {} is degenerately correlated with port 1 (rho = {r}); \
                 reduce W or M so that no |rho_m| reaches 1",
                i + 1
            )));
        }
        beta.push(kp1 / (one_minus_rho_sq * cfg.avg_snr));
        tau.push((T::one() - r) / (T::one() + r));
    }
    Ok(PortParams { rho, beta, tau })
}

/// `ln d_{m,n}(v1)` where
/// `d_{m,n}(v1) = β_m^{n+1} e^{−τ_m κ} e^{−β_m ρ_m² v1} (τ_m κ + β_m ρ_m² v1)^n / (n!)²`.
///
/// Returns `-inf` when the coefficient is exactly zero (`n ≥ 1` with zero
/// noncentrality); `exp` of the result reconstructs the direct evaluation
/// to 1e-12 relative wherever the direct form does not overflow.
pub fn d_coeff_log<T: Scalar>(
    port: usize,
    n: usize,
    v1: T,
    pp: &PortParams<T>,
    kappa: T,
) -> T {
    let beta = pp.beta(port);
    let z = pp.noncentrality(port, v1, kappa);
    let base = T::of_usize(n + 1) * beta.ln()
        - pp.tau(port) * kappa
        - beta * pp.rho_sq_stat(port) * v1
        - T::of(2.0) * log_factorial::<T>(n);
    if n == 0 {
        base // z^0 = 1 even when z = 0
    } else if z == T::zero() {
        T::neg_infinity()
    } else {
        base + T::of_usize(n) * z.ln()
    }
}

/// Average SNR from the free-space link budget:
/// `γ̄ = (λ/4πd)² · P_s / σ_w²`.
pub fn pathloss_avg_snr<T: Scalar>(
    symbol_power: T,
    noise_power: T,
    distance: T,
    wavelength: T,
) -> Result<T> {
    for (name, v) in [
        ("Ps", symbol_power),
        ("sigma_w_sq", noise_power),
        ("d", distance),
        ("lambda", wavelength),
    ] {
        if !(v > T::zero() && v.is_finite()) {
            return Err(Error::Domain(format!("pathloss_avg_snr: {name} = {v} must be positive")));
        }
    }
    let ratio = wavelength / (T::of(4.0) * T::PI() * distance);
    Ok(ratio * ratio * symbol_power / noise_power)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::bessel_j0;

    fn cfg_2ports() -> SystemConfig<f64> {
        SystemConfig::new(2, 1, 0.5, 1.0, 10.0, 1.0).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SystemConfig::new(1, 1, 0.5, 1.0, 1.0, 1.0).is_err());
        assert!(SystemConfig::new(4, 5, 0.5, 1.0, 1.0, 1.0).is_err());
        assert!(SystemConfig::new(4, 0, 0.5, 1.0, 1.0, 1.0).is_err());
        assert!(SystemConfig::new(4, 2, 0.0, 1.0, 1.0, 1.0).is_err());
        assert!(SystemConfig::new(4, 2, 0.5, -0.1, 1.0, 1.0).is_err());
        assert!(SystemConfig::new(4, 2, 0.5, 1.0, 0.0, 1.0).is_err());
        assert!(SystemConfig::new(4, 2, 0.5, 1.0, 1.0, 0.0).is_err());
        assert!(SystemConfig::new(4, 2, 0.5, 0.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn rician_params_cases() {
        let p = rician_params(0.0f64).unwrap();
        assert_eq!((p.los_power, p.scatter_power), (0.0, 1.0));
        let p = rician_params(1.0f64).unwrap();
        assert_eq!((p.los_power, p.scatter_power), (0.5, 0.5));
        let p = rician_params(1e12f64).unwrap();
        assert!((p.los_power - 1.0).abs() < 1e-11);
        assert!(rician_params(-1.0f64).is_err());
        // sum rule
        for &k in &[0.0f64, 0.3, 2.0, 50.0] {
            let p = rician_params(k).unwrap();
            assert!((p.los_power + p.scatter_power - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn correlations_first_port_is_one() {
        let rho = port_correlations(7, 0.3f64).unwrap();
        assert_eq!(rho[0], 1.0);
        assert!(rho.iter().all(|r| r.abs() <= 1.0 + 1e-15));
    }

    #[test]
    fn correlations_match_bessel_directly() {
        let rho = port_correlations(2, 0.5f64).unwrap();
        assert!((rho[1] - bessel_j0(std::f64::consts::PI)).abs() < 1e-15);
        assert!((rho[1] - (-0.3042421776440939)).abs() < 1e-12);

        let rho = port_correlations(15, 0.2f64).unwrap();
        let arg = 2.0 * std::f64::consts::PI * 14.0 * 0.2 / 14.0;
        assert!((rho[14] - bessel_j0(arg)).abs() < 1e-15);
        assert!((rho[14] - bessel_j0(0.4 * std::f64::consts::PI)).abs() < 1e-15);
    }

    #[test]
    fn correlations_reject_single_port() {
        assert!(port_correlations(1, 0.5f64).is_err());
    }

    #[test]
    fn port_coeffs_marginal_convention() {
        let cfg = cfg_2ports();
        let pp = port_coeffs(&cfg).unwrap();
        // beta_1 = (kappa+1)/gamma_bar, tau_1 = 1, rho_1 stored as 1 but 0 in stats
        assert!((pp.beta(1) - 0.2).abs() < 1e-15);
        assert_eq!(pp.tau(1), 1.0);
        assert_eq!(pp.rho[0], 1.0);
        assert_eq!(pp.rho_sq_stat(1), 0.0);
        // m = 2 per the derived formulas with J_0(pi)
        let r = bessel_j0(std::f64::consts::PI);
        assert!((pp.beta(2) - 2.0 / (10.0 * (1.0 - r * r))).abs() < 1e-14);
        assert!((pp.tau(2) - (1.0 - r) / (1.0 + r)).abs() < 1e-14);
        assert!(pp.beta.iter().all(|b| b.is_finite() && *b > 0.0));
        // tau is nonnegative for |rho| < 1 and stays in [0, 1] while rho >= 0;
        // past the first J_0 root (rho < 0) it exceeds 1 by construction
        assert!(pp.tau.iter().all(|t| *t >= 0.0 && t.is_finite()));
        assert!(pp.tau[1] > 1.0); // J_0(pi) < 0 here
    }

    #[test]
    fn port_coeffs_deterministic() {
        let cfg = SystemConfig::new(15, 2, 0.2f64, 1.0, 3.1622776601683795, 3.1622776601683795)
            .unwrap();
        let a = port_coeffs(&cfg).unwrap();
        let b = port_coeffs(&cfg).unwrap();
        assert_eq!(a, b); // bit-identical
    }

    #[test]
    fn port_coeffs_rejects_degenerate_spacing() {
        // tiny aperture puts rho_2 within 1e-9 of 1
        let cfg = SystemConfig::new(8, 2, 1e-6f64, 1.0, 10.0, 1.0).unwrap();
        let err = port_coeffs(&cfg).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("port 2"), "message: {msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn d_coeff_log_n0_forms() {
        let cfg = cfg_2ports();
        let pp = port_coeffs(&cfg).unwrap();
        // port 1 (rho -> 0, tau = 1): ln d_{1,0} = ln beta_1 - kappa
        let v = d_coeff_log(1, 0, 7.3, &pp, cfg.kappa);
        assert!((v - (pp.beta(1).ln() - cfg.kappa)).abs() < 1e-14);
        // general n = 0: ln beta - tau kappa - beta rho^2 v1
        let v1 = 2.0;
        let expect =
            pp.beta(2).ln() - pp.tau(2) * cfg.kappa - pp.beta(2) * pp.rho_sq_stat(2) * v1;
        assert!((d_coeff_log(2, 0, v1, &pp, cfg.kappa) - expect).abs() < 1e-13);
    }

    #[test]
    fn d_coeff_log_matches_direct_arithmetic() {
        // m=2, n=3, v1=2 for (M=2, W=0.5, kappa=1, gamma_bar=10)
        let cfg = cfg_2ports();
        let pp = port_coeffs(&cfg).unwrap();
        let (beta, tau, rho_sq) = (pp.beta(2), pp.tau(2), pp.rho_sq_stat(2));
        let z = tau * 1.0 + beta * rho_sq * 2.0;
        let direct = beta.powi(4) * (-tau).exp() * (-beta * rho_sq * 2.0).exp() * z.powi(3) / 36.0;
        let v = d_coeff_log(2, 3, 2.0, &pp, 1.0);
        assert!((v.exp() - direct).abs() < 1e-12 * direct, "{} vs {direct}", v.exp());
    }

    #[test]
    fn d_coeff_log_linear_in_v1_at_n0() {
        let cfg = SystemConfig::new(6, 2, 0.3f64, 2.0, 5.0, 1.0).unwrap();
        let pp = port_coeffs(&cfg).unwrap();
        for m in 2..=6 {
            for &v1 in &[0.4, 1.9, 12.0] {
                let diff = d_coeff_log(m, 0, v1, &pp, 2.0) - d_coeff_log(m, 0, 0.0, &pp, 2.0);
                let expect = -pp.beta(m) * pp.rho_sq_stat(m) * v1;
                assert!((diff - expect).abs() < 1e-12 * expect.abs().max(1.0));
            }
        }
    }

    #[test]
    fn d_coeff_log_zero_noncentrality() {
        // kappa = 0 and v1 = 0 makes z = 0: n = 0 finite, n >= 1 is ln 0
        let cfg = SystemConfig::new(4, 2, 0.3f64, 0.0, 5.0, 1.0).unwrap();
        let pp = port_coeffs(&cfg).unwrap();
        assert!(d_coeff_log(2, 0, 0.0, &pp, 0.0).is_finite());
        assert_eq!(d_coeff_log(2, 1, 0.0, &pp, 0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn pathloss_cases() {
        // d = lambda/(4 pi): unit path loss
        let lam = 0.3f64;
        let d = lam / (4.0 * std::f64::consts::PI);
        let g = pathloss_avg_snr(2.0, 0.5, d, lam).unwrap();
        assert!((g - 4.0).abs() < 1e-12);
        // inverse-square law
        let g1 = pathloss_avg_snr(1.0, 1.0, 5.0, lam).unwrap();
        let g2 = pathloss_avg_snr(1.0, 1.0, 10.0, lam).unwrap();
        assert!((g1 / g2 - 4.0).abs() < 1e-12);
        // direct arithmetic
        let g = pathloss_avg_snr(1.0, 1.0, 10.0, 0.1).unwrap();
        let expect = (0.1 / (40.0 * std::f64::consts::PI)).powi(2);
        assert!((g - expect).abs() < 1e-18);
        assert!(pathloss_avg_snr(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(pathloss_avg_snr(1.0, 1.0, -1.0, 1.0).is_err());
    }
}
