//! Top-level outage probability evaluators: exact integral, closed-form
//! lower bound, numeric lower-bound oracle, high-SNR asymptote, and the
//! κ-peak locator.
//!
//! The exact route integrates
//! `C(M,K)(M−K) · Φ(γ_th, ν, v1) · Ψ(ν, v1) · f_{ν|γ1}(ν) · f_{γ1}(v1)`
//! over the pivot SNR `ν ∈ [0, γ_th/K]` and the conditioning SNR
//! `v1 ∈ [0, V_max]`. The pivot density is identified with the conditional
//! law of port `K+1` (the port holding the `(K+1)`-th highest gain in the
//! labeling convention `𝓢 = {1..K}`, `𝓜 = {K+2..M}`).

use rayon::prelude::*;

use crate::dist::{gamma1_upper_quantile, pdf_gamma1, port_pdf, psi, ConditionalContext};
use crate::laplace::{hypoexp_cdf, phi_internal, PoleSpec, SelectionAlgebra, POLE_MERGE_TOL};
use crate::model::{port_coeffs, PortParams, SystemConfig};
use crate::montecarlo::McEstimate;
use crate::quad::{feature_panels, integrate, integrate_panels};
use crate::scalar::Scalar;
use crate::special::log_factorial;
use crate::{Error, Result};

/// Which algorithm evaluates Φ inside the exact outage integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhiRoute {
    /// Multi-index series when its degree cap can hold the expansion,
    /// direct quadrature/convolution otherwise.
    #[default]
    Auto,
    /// Force the multi-index series (errors when the cap binds).
    Series,
    /// Force the direct route.
    Direct,
}

/// Series truncation and quadrature resolution controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationPolicy<T> {
    /// Cap on the total series degree `Σ n_m` of the Φ expansion.
    pub total_degree_max: usize,
    /// Relative tail threshold for layer/series stopping rules.
    pub tail_rel_tol: T,
    /// Per-series cap for the single-port pdf expansion.
    pub n_max: usize,
    /// Gauss–Legendre nodes per outer (`v1`) panel.
    pub quad_nodes_v1: usize,
    /// Gauss–Legendre nodes per inner (`ν`) panel.
    pub quad_nodes_nu: usize,
    /// Φ algorithm selection.
    pub phi_route: PhiRoute,
    /// Base grid size of the direct route's convolution (`K ≥ 3`).
    pub conv_grid: usize,
    /// Panel cap for the outer doubling refinement.
    pub max_outer_panels: usize,
    /// Relative tolerance of the outer doubling refinement.
    pub outer_rel_tol: T,
}

impl<T: Scalar> Default for TruncationPolicy<T> {
    fn default() -> Self {
        Self {
            total_degree_max: 40,
            tail_rel_tol: T::of(1e-12),
            n_max: 60,
            quad_nodes_v1: 16,
            quad_nodes_nu: 16,
            phi_route: PhiRoute::Auto,
            conv_grid: 1024,
            max_outer_panels: 2048,
            outer_rel_tol: T::of(1e-9),
        }
    }
}

impl<T: Scalar> TruncationPolicy<T> {
    pub fn validate(&self) -> Result<()> {
        if self.total_degree_max == 0
            || self.n_max == 0
            || self.quad_nodes_v1 == 0
            || self.quad_nodes_nu == 0
            || self.conv_grid < 16
            || self.max_outer_panels < 2
        {
            return Err(Error::Config("truncation policy fields must be positive".into()));
        }
        let tol = self.tail_rel_tol;
        if !(tol > T::zero() && tol <= T::of(1e-3)) {
            return Err(Error::Config(format!(
                "tail_rel_tol = {tol} must lie in (0, 1e-3]"
            )));
        }
        if !(self.outer_rel_tol > T::zero() && self.outer_rel_tol <= T::of(1e-3)) {
            return Err(Error::Config("outer_rel_tol must lie in (0, 1e-3]".into()));
        }
        Ok(())
    }
}

/// Evaluation route of an [`OutageEstimate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Analytical,
    LowerBoundClosed,
    LowerBoundNumeric,
    Asymptotic,
    McBestK,
    McRps,
}

impl Method {
    /// Stable identifier used in CSV headers and reports.
    pub fn name(self) -> &'static str {
        match self {
            Method::Analytical => "op_analytical",
            Method::LowerBoundClosed => "op_lb_closed",
            Method::LowerBoundNumeric => "op_lb_numeric",
            Method::Asymptotic => "op_asymptotic",
            Method::McBestK => "op_mc_best_k",
            Method::McRps => "op_mc_rps",
        }
    }
}

/// Evaluation diagnostics attached to an estimate.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalMeta {
    /// Outer quadrature panels at convergence.
    pub outer_panels: usize,
    /// Inner nodes per panel (analytical routes).
    pub inner_nodes: usize,
    /// Monte Carlo trials (simulation routes).
    pub trials: u64,
    /// Monte Carlo seed.
    pub seed: u64,
}

/// An outage probability value with its method tag and error metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutageEstimate<T> {
    /// Estimated outage probability, clamped to [0, 1].
    pub value: T,
    /// Route that produced the value.
    pub method: Method,
    /// Dominant error estimate: quadrature refinement delta, series tail,
    /// or Monte Carlo half-width, plus any clamping residual.
    pub error_metric: T,
    /// Evaluation diagnostics.
    pub meta: EvalMeta,
}

impl<T: Scalar> From<McEstimate<T>> for OutageEstimate<T> {
    fn from(mc: McEstimate<T>) -> Self {
        OutageEstimate {
            value: mc.p_hat,
            method: mc.method,
            error_metric: mc.std_err,
            meta: EvalMeta {
                trials: mc.trials,
                seed: mc.seed,
                ..EvalMeta::default()
            },
        }
    }
}

/// `C(M,K) · (M−K)` as a scalar.
fn selection_weight<T: Scalar>(m: usize, k: usize) -> T {
    let mut c = T::one();
    for i in 1..=k {
        c = c * T::of_usize(m - k + i) / T::of_usize(i);
    }
    c * T::of_usize(m - k)
}

/// The Φ route actually used inside the outage integrals: `Auto` resolves
/// to the direct evaluation (explicit `Series` stays as requested).
fn integration_policy<T: Scalar>(policy: &TruncationPolicy<T>) -> TruncationPolicy<T> {
    let mut p = *policy;
    if p.phi_route == PhiRoute::Auto {
        p.phi_route = PhiRoute::Direct;
    }
    p
}

/// Inner integral over the pivot SNR `ν` for one conditioning value `v1`:
/// `∫_0^{γ_th/K} Φ·Ψ·f_{ν|γ1} dν` with panels placed around the pivot
/// density's bump. Returns the value and the largest Φ series tail seen.
#[allow(clippy::too_many_arguments)]
fn inner_integral<T: Scalar>(
    v1: T,
    cfg: &SystemConfig<T>,
    pp: &PortParams<T>,
    policy: &TruncationPolicy<T>,
    algebra: &SelectionAlgebra<T>,
    cache: &mut crate::laplace::ResidueCache<T>,
    nodes_per_panel: usize,
) -> Result<(T, T)> {
    let k = cfg.selected;
    let upper = cfg.threshold / T::of_usize(k);
    let ctx = ConditionalContext::new(v1, pp, cfg.kappa);
    let pivot = k + 1;
    let z = pp.noncentrality(pivot, v1, cfg.kappa);
    let beta = pp.beta(pivot);
    let mean = (T::one() + z) / beta;
    let sigma = (T::one() + T::of(2.0) * z).sqrt() / beta;
    let edges = feature_panels(T::zero(), upper, mean, sigma, 4);
    let mut tail_max = T::zero();
    let mut failure: Option<Error> = None;
    let value = integrate_panels(&edges, nodes_per_panel, |nu| {
        if failure.is_some() {
            return T::zero();
        }
        // cheapest factor first: the pivot density kills the whole strip
        // once the conditioning pushes its bump past the interval
        let pivot_pdf = port_pdf(pivot, nu, &ctx);
        if pivot_pdf == T::zero() {
            return T::zero();
        }
        match phi_internal(cfg.threshold, nu, &ctx, cfg, policy, algebra, cache) {
            Ok((phi_v, tail)) => {
                if tail > tail_max {
                    tail_max = tail;
                }
                if phi_v == T::zero() {
                    return T::zero();
                }
                let psi_v = psi(nu, &ctx, cfg);
                if psi_v == T::zero() {
                    return T::zero();
                }
                phi_v * psi_v * pivot_pdf
            }
            Err(e) => {
                failure = Some(e);
                T::zero()
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok((value, tail_max)),
    }
}

/// Shared outer machinery: doubling panel refinement of
/// `∫_0^{V_max} f_{γ1}(v1) · inner(v1) dv1` with deterministic parallel
/// reduction. `inner` must be pure.
fn outer_refine<T, F>(
    cfg: &SystemConfig<T>,
    policy: &TruncationPolicy<T>,
    v_max: T,
    inner: F,
) -> Result<(T, T, usize, T)>
where
    T: Scalar,
    F: Fn(T) -> Result<(T, T)> + Sync,
{
    let level = |panels: usize| -> Result<(T, T)> {
        let edges: Vec<T> = (0..=panels)
            .map(|i| v_max * T::of_usize(i) / T::of_usize(panels))
            .collect();
        let parts: Vec<Result<(T, T)>> = edges
            .par_windows(2)
            .map(|w| {
                let mut tail = T::zero();
                let mut failure: Option<Error> = None;
                let val = integrate(w[0], w[1], policy.quad_nodes_v1, |v1| {
                    if failure.is_some() {
                        return T::zero();
                    }
                    match inner(v1) {
                        Ok((iv, tl)) => {
                            if tl > tail {
                                tail = tl;
                            }
                            iv * pdf_gamma1(v1, cfg)
                        }
                        Err(e) => {
                            failure = Some(e);
                            T::zero()
                        }
                    }
                });
                match failure {
                    Some(e) => Err(e),
                    None => Ok((val, tail)),
                }
            })
            .collect();
        let mut sum = T::zero();
        let mut tail = T::zero();
        for part in parts {
            let (v, t) = part?;
            sum += v;
            tail = tail.max(t);
        }
        Ok((sum, tail))
    };

    let mut panels = 16usize.min(policy.max_outer_panels);
    let (mut value, mut tail) = level(panels)?;
    let mut delta = T::infinity();
    let mut prev_delta;
    loop {
        if panels >= policy.max_outer_panels {
            if delta > T::of(1e-5) * value.abs().max(T::of(1e-300)) {
                return Err(Error::Numerical(format!(
                    "outer quadrature not converged at {panels} panels \
                     (value {:.6e}, last delta {:.3e})",
                    value.as_f64(),
                    delta.as_f64()
                )));
            }
            break;
        }
        panels *= 2;
        let (next, next_tail) = level(panels)?;
        prev_delta = delta;
        delta = (next - value).abs();
        value = next;
        tail = tail.max(next_tail);
        let tol_abs = policy.outer_rel_tol * value.abs().max(T::of(1e-300));
        if delta <= tol_abs || delta <= T::of(1e-14) {
            break;
        }
        // plateau: the inner quadrature bias bounds what doubling can
        // resolve; accept once the deltas stop contracting at a level that
        // is already far below the cross-method tolerances
        if delta >= prev_delta * T::of(0.5) && delta <= T::of(1e-6) * value.abs() {
            break;
        }
    }
    Ok((value, delta.min(T::one()), panels, tail))
}

/// Exact outage probability of best-`K`-of-`M` MRC selection (`K < M`) by
/// two-dimensional quadrature of the conditional decomposition.
pub fn op_analytical<T: Scalar>(
    cfg: &SystemConfig<T>,
    policy: &TruncationPolicy<T>,
) -> Result<OutageEstimate<T>> {
    policy.validate()?;
    if cfg.selected >= cfg.ports {
        return Err(Error::Config(
            "op_analytical requires K < M; use op_analytical_all for K = M".into(),
        ));
    }
    let pp = port_coeffs(cfg)?;
    let algebra = SelectionAlgebra::new(&pp, cfg.selected)?;
    let weight = selection_weight::<T>(cfg.ports, cfg.selected);
    let v_max = gamma1_upper_quantile(cfg, T::of(1e-12));
    // inside the integral the direct Φ is both the fast and the uniformly
    // stable route; Auto therefore resolves to it here, while a forced
    // Series policy is honored (and surfaces its truncation errors)
    let policy = &integration_policy(policy);

    let inner = |v1: T| -> Result<(T, T)> {
        let mut cache = algebra.cache();
        inner_integral(v1, cfg, &pp, policy, &algebra, &mut cache, policy.quad_nodes_nu)
    };
    let (raw, delta, panels, tail) = outer_refine(cfg, policy, v_max, inner)?;
    let mut value = raw * weight;
    let mut err = delta * weight + tail;

    // inner-resolution estimate: re-run a handful of v1 nodes at doubled
    // inner order and take the largest relative drift
    let mut inner_drift = T::zero();
    for &frac in &[0.05, 0.2, 0.45, 0.7] {
        let v1 = v_max * T::of(frac);
        let mut cache = algebra.cache();
        let (a, _) = inner_integral(v1, cfg, &pp, policy, &algebra, &mut cache, policy.quad_nodes_nu)?;
        let (b, _) =
            inner_integral(v1, cfg, &pp, policy, &algebra, &mut cache, policy.quad_nodes_nu * 2)?;
        inner_drift = inner_drift.max((a - b).abs());
    }
    err += inner_drift * weight * v_max;

    let clamped = value.clamp(T::zero(), T::one());
    err += (clamped - value).abs();
    value = clamped;
    Ok(OutageEstimate {
        value,
        method: Method::Analytical,
        error_metric: err,
        meta: EvalMeta {
            outer_panels: panels,
            inner_nodes: policy.quad_nodes_nu,
            ..EvalMeta::default()
        },
    })
}

/// Outage probability with every port combined (`K = M`):
/// `E_{γ1}[Φ(γ_th, 0, v1)]` by a single quadrature.
pub fn op_analytical_all<T: Scalar>(
    cfg: &SystemConfig<T>,
    policy: &TruncationPolicy<T>,
) -> Result<OutageEstimate<T>> {
    policy.validate()?;
    if cfg.selected != cfg.ports {
        return Err(Error::Config("op_analytical_all requires K = M".into()));
    }
    let pp = port_coeffs(cfg)?;
    let algebra = SelectionAlgebra::new(&pp, cfg.selected)?;
    let v_max = gamma1_upper_quantile(cfg, T::of(1e-12));
    let policy = &integration_policy(policy);
    let inner = |v1: T| -> Result<(T, T)> {
        let ctx = ConditionalContext::new(v1, &pp, cfg.kappa);
        let mut cache = algebra.cache();
        phi_internal(cfg.threshold, T::zero(), &ctx, cfg, policy, &algebra, &mut cache)
    };
    let (raw, delta, panels, tail) = outer_refine(cfg, policy, v_max, inner)?;
    let value = raw.clamp(T::zero(), T::one());
    Ok(OutageEstimate {
        value,
        method: Method::Analytical,
        error_metric: delta + tail + (value - raw).abs(),
        meta: EvalMeta {
            outer_panels: panels,
            ..EvalMeta::default()
        },
    })
}

/// Numeric lower-bound oracle: the outage integral with every factor
/// replaced by its single-term bound (Ψ^LB, Φ^LB, and the pivot density
/// bound). The `v1` dependence of the bounded integrand collapses to
/// `e^{−β_ρ v1}`, so the double integral factorizes exactly into two 1-D
/// quadratures, evaluated here with doubling refinement.
pub fn op_lb_numeric<T: Scalar>(
    cfg: &SystemConfig<T>,
    policy: &TruncationPolicy<T>,
) -> Result<OutageEstimate<T>> {
    policy.validate()?;
    if cfg.selected >= cfg.ports {
        return Err(Error::Config("op_lb_numeric requires K < M".into()));
    }
    let pp = port_coeffs(cfg)?;
    let k = cfg.selected;
    let pivot = k + 1;
    let beta_rho = pp.beta_rho_total();
    let tau_tot = pp.tau_total();
    let weight = selection_weight::<T>(cfg.ports, cfg.selected);

    // factor A: ∫ f_{γ1}(v) e^{−β_ρ v} dv
    let v_quant = gamma1_upper_quantile(cfg, T::of(1e-14));
    let v_cut = if beta_rho > T::zero() {
        (T::of(50.0) / beta_rho).min(v_quant)
    } else {
        v_quant
    };
    let (a_val, a_delta) = refine_1d(T::zero(), v_cut, policy, |v| {
        pdf_gamma1(v, cfg) * (-beta_rho * v).exp()
    })?;

    // factor B: ∫_0^{γ_th/K} e^{−(β_S+β_{K+1})ν} ∏_{m∈𝓜}(1−e^{−β_m ν})
    //           F_hypo(γ_th − Kν) dν
    let upper = cfg.threshold / T::of_usize(k);
    let beta_s: T = (1..=k).map(|m| pp.beta(m)).fold(T::zero(), |a, b| a + b);
    let sel_betas: Vec<T> = (1..=k).map(|m| pp.beta(m)).collect();
    let mut hypo_err: Option<Error> = None;
    let (b_val, b_delta) = refine_1d(T::zero(), upper, policy, |nu| {
        if hypo_err.is_some() {
            return T::zero();
        }
        let mut ln_f = -(beta_s + pp.beta(pivot)) * nu;
        for m in (k + 2)..=cfg.ports {
            let t = T::one() - (-pp.beta(m) * nu).exp();
            if t <= T::zero() {
                return T::zero();
            }
            ln_f += t.ln();
        }
        match hypoexp_cdf(cfg.threshold - T::of_usize(k) * nu, &sel_betas) {
            Ok(h) => ln_f.exp() * h,
            Err(e) => {
                hypo_err = Some(e);
                T::zero()
            }
        }
    })?;
    if let Some(e) = hypo_err {
        return Err(e);
    }

    let pref = weight * pp.beta(pivot) * (-cfg.kappa * tau_tot).exp();
    let raw = pref * a_val * b_val;
    let value = raw.clamp(T::zero(), T::one());
    let err = pref * (a_delta * b_val.abs() + b_delta * a_val.abs()) + (value - raw).abs();
    Ok(OutageEstimate {
        value,
        method: Method::LowerBoundNumeric,
        error_metric: err,
        meta: EvalMeta::default(),
    })
}

/// 1-D doubling refinement used by the lower-bound quadratures. `refine_1d`
/// is serial: its integrands are cheap closed forms.
fn refine_1d<T: Scalar, F: FnMut(T) -> T>(
    a: T,
    b: T,
    policy: &TruncationPolicy<T>,
    mut f: F,
) -> Result<(T, T)> {
    let mut panels = 8usize;
    let level = |panels: usize, f: &mut F| -> T {
        let edges: Vec<T> = (0..=panels)
            .map(|i| a + (b - a) * T::of_usize(i) / T::of_usize(panels))
            .collect();
        integrate_panels(&edges, 24, &mut *f)
    };
    let mut value = level(panels, &mut f);
    loop {
        if panels >= policy.max_outer_panels.max(256) {
            return Err(Error::Numerical(format!(
                "1-D refinement not converged at {panels} panels (value {:.6e})",
                value.as_f64()
            )));
        }
        panels *= 2;
        let next = level(panels, &mut f);
        let delta = (next - value).abs();
        value = next;
        if delta <= policy.outer_rel_tol * value.abs().max(T::of(1e-300)) || delta <= T::of(1e-16) {
            return Ok((value, delta));
        }
    }
}

/// Which transcription of the closed-form lower bound to evaluate.
///
/// The exponent of the `v1` average in the closed form lacks the `κ`
/// factor that the noncentral-χ² transform identity produces (the two
/// agree exactly at κ = 1, the value used by every published curve). The
/// numerically verified form carries the factor; the verbatim form is kept
/// evaluable behind this flag and the acceptance gate records both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Eq31Form {
    /// `exp(−κ·x/(1+x))` with `x = β_ρ γ̄/(κ+1)` — matches the numeric
    /// lower-bound oracle at every κ. Default.
    #[default]
    KappaCorrected,
    /// `exp(−x/(1+x))` as printed.
    Verbatim,
}

/// Closed-form lower bound on the outage probability (`K < M`), evaluated
/// with the numerically verified exponent by default.
pub fn op_lower_bound<T: Scalar>(cfg: &SystemConfig<T>) -> Result<OutageEstimate<T>> {
    op_lower_bound_with(cfg, Eq31Form::default())
}

/// Closed-form lower bound with an explicit transcription choice.
pub fn op_lower_bound_with<T: Scalar>(
    cfg: &SystemConfig<T>,
    form: Eq31Form,
) -> Result<OutageEstimate<T>> {
    if cfg.selected >= cfg.ports {
        return Err(Error::Config("op_lower_bound requires K < M".into()));
    }
    let free = cfg.ports - cfg.selected - 1; // |𝓜|
    if free > 24 {
        return Err(Error::Config(format!(
            "closed-form lower bound enumerates 2^{free} subsets; reduce M−K−1 \
             to 24 or below, or use op_lb_numeric instead"
        )));
    }
    let pp = port_coeffs(cfg)?;
    let k = cfg.selected;
    let pivot = k + 1;
    let sel_betas: Vec<T> = (1..=k).map(|m| pp.beta(m)).collect();
    let merged = PoleSpec::merged(&sel_betas, &vec![1usize; k], T::of(POLE_MERGE_TOL))?;
    if merged.betas.len() != k {
        return Err(Error::Config(
            "selected-set rates are pairwise coincident; the closed-form weights \
             are undefined — use op_lb_numeric"
                .into(),
        ));
    }
    // hypoexponential cover-up weights over 𝓢
    let weights: Vec<T> = (0..k)
        .map(|j| {
            let mut w = T::one();
            for l in 0..k {
                if l != j {
                    w *= sel_betas[l] / (sel_betas[l] - sel_betas[j]);
                }
            }
            w
        })
        .collect();
    let beta_s: T = sel_betas.iter().fold(T::zero(), |a, &b| a + b);
    let base = beta_s + pp.beta(pivot);
    let u0 = cfg.threshold / T::of_usize(k);
    let exp_j: Vec<T> = sel_betas.iter().map(|&b| (-b * cfg.threshold).exp()).collect();

    // Gray-code walk over subsets of 𝓜 = {K+2..M}, maintaining the running
    // rate sum incrementally
    let m_betas: Vec<T> = ((k + 2)..=cfg.ports).map(|m| pp.beta(m)).collect();
    let total = 1u64 << free;
    let mut beta_tilde = base;
    let mut parity_neg = false;
    let mut gray_prev = 0u64;
    let mut sum = T::zero();
    for i in 0..total {
        if i > 0 {
            let gray = i ^ (i >> 1);
            let flipped = (gray ^ gray_prev).trailing_zeros() as usize;
            if gray & (1 << flipped) != 0 {
                beta_tilde += m_betas[flipped];
            } else {
                beta_tilde -= m_betas[flipped];
            }
            parity_neg = !parity_neg;
            gray_prev = gray;
        }
        let e_tilde = (-beta_tilde * u0).exp();
        let mut term = (T::one() - e_tilde) / beta_tilde;
        for j in 0..k {
            // stable form of e^{−β_j γ_th}(1−e^{−(β̃−Kβ_j)u0})/(β̃−Kβ_j):
            // the combined exponent of the second piece is −β̃ u0 exactly
            let denom = beta_tilde - T::of_usize(k) * sel_betas[j];
            let num = exp_j[j] - e_tilde;
            let piece = if denom.abs() > T::of(1e-9) * beta_tilde {
                num / denom
            } else {
                u0 * exp_j[j] // ε → 0 limit
            };
            term -= weights[j] * piece;
        }
        sum += if parity_neg { -term } else { term };
    }

    let beta_rho = pp.beta_rho_total();
    let x = beta_rho * cfg.avg_snr / (cfg.kappa + T::one());
    let c = match form {
        Eq31Form::Verbatim => T::one(),
        Eq31Form::KappaCorrected => cfg.kappa,
    };
    let pref = selection_weight::<T>(cfg.ports, cfg.selected) * pp.beta(pivot)
        / (T::one() + x)
        * (-cfg.kappa * pp.tau_total() - c * x / (T::one() + x)).exp();
    let raw = pref * sum;
    let value = raw.clamp(T::zero(), T::one());
    Ok(OutageEstimate {
        value,
        method: Method::LowerBoundClosed,
        error_metric: (value - raw).abs(),
        meta: EvalMeta::default(),
    })
}

/// ln of the high-SNR asymptote
/// `e^{−κ τ_[M]}/(K! K^{M−K}) · ∏_m (κ+1)/(1−ρ_m²) · (γ_th/γ̄)^M`
/// (unclamped; the κ-peak grid search maximizes this directly).
pub fn op_asymptotic_log<T: Scalar>(cfg: &SystemConfig<T>) -> Result<T> {
    let pp = port_coeffs(cfg)?;
    let k = cfg.selected;
    let mut ln = -cfg.kappa * pp.tau_total() - log_factorial::<T>(k)
        - T::of_usize(cfg.ports - k) * T::of_usize(k).ln();
    for m in 1..=cfg.ports {
        ln += ((cfg.kappa + T::one()) / (T::one() - pp.rho_sq_stat(m))).ln();
    }
    ln += T::of_usize(cfg.ports) * (cfg.threshold.ln() - cfg.avg_snr.ln());
    Ok(ln)
}

/// High-SNR asymptotic outage probability; exposes the diversity order `M`
/// as the log-log slope in `γ̄`.
pub fn op_asymptotic<T: Scalar>(cfg: &SystemConfig<T>) -> Result<OutageEstimate<T>> {
    let ln = op_asymptotic_log(cfg)?;
    let raw = ln.exp();
    let value = raw.min(T::one());
    Ok(OutageEstimate {
        value,
        method: Method::Asymptotic,
        error_metric: (value - raw).abs(),
        meta: EvalMeta::default(),
    })
}

/// Location of the high-SNR outage maximum over the Rician factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaPeak<T> {
    /// The asymptotic outage peaks at this κ > 0.
    Peak(T),
    /// `M/τ_[M] − 1 ≤ 0`: the asymptote is monotone decreasing on κ ≥ 0;
    /// the formal stationary point is carried for reference.
    MonotoneDecreasing { formal_value: T },
}

/// κ at which the high-SNR asymptote is maximal: `M/τ_[M] − 1`.
pub fn kappa_peak<T: Scalar>(cfg: &SystemConfig<T>) -> Result<KappaPeak<T>> {
    let pp = port_coeffs(cfg)?;
    let tau_tot = pp.tau_total();
    if tau_tot <= T::zero() {
        return Err(Error::Config("kappa_peak: tau_[M] must be positive".into()));
    }
    let v = T::of_usize(cfg.ports) / tau_tot - T::one();
    if v > T::zero() {
        Ok(KappaPeak::Peak(v))
    } else {
        Ok(KappaPeak::MonotoneDecreasing { formal_value: v })
    }
}
