//! Partial-fraction residue algebra, inverse-transform densities, and the
//! conditional selection/outage probability Φ.
//!
//! The Laplace transform of the conditional sum of the selected ports is a
//! product of shifted rational factors `∏ (s+β_m)^{−η_m}`; its inverse is a
//! sum of Erlang-type terms with repeated-pole residue coefficients
//! `A_{j,q}`. Φ is assembled from those pieces two ways:
//!
//! * [`phi_series`] — the multi-index expansion over per-port series orders
//!   `(n_m, ℓ_m)` with per-term residue tables. Exact term-by-term, and
//!   efficient while the per-port noncentralities `z_m` are moderate; the
//!   total series degree grows with `Σ z_m`, so a hard cap with a reported
//!   tail guards it.
//! * [`phi_direct`] — the same probability
//!   `Pr(Σ_{m∈𝓢} γ_m ≤ γ_th, γ_m > ν | γ_1 = v1)` computed by quadrature /
//!   grid convolution of the shifted conditional densities. Stable for any
//!   parameter corner, used automatically when the series cannot converge
//!   under its degree cap.
//!
//! Both routes agree wherever the series converges; tests pin that down.

use std::collections::HashMap;

use crate::dist::{port_cdf, port_pdf, ConditionalContext};
use crate::model::SystemConfig;
use crate::outage::{PhiRoute, TruncationPolicy};
use crate::scalar::{LogSum, Scalar};
use crate::{Error, Result};

/// Relative gap below which two poles are merged into one of summed
/// multiplicity. Near-equal rates arise from the `J_0` oscillation making
/// `ρ_i² ≈ ρ_j²`; the simple-pole formulas are catastrophically
/// ill-conditioned there while the merged pole is exact in the limit.
pub const POLE_MERGE_TOL: f64 = 1e-7;

/// Distinct poles with multiplicities: the denominator `∏ (s+β_j)^{η_j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PoleSpec<T> {
    /// Pole locations (rates), pairwise distinct after merging.
    pub betas: Vec<T>,
    /// Multiplicities, all ≥ 1.
    pub etas: Vec<usize>,
}

impl<T: Scalar> PoleSpec<T> {
    /// Builds a spec from raw (possibly near-coincident) rates, merging
    /// rates closer than `tol · max(β_i, β_j)` into one pole of summed
    /// multiplicity located at the multiplicity-weighted mean.
    pub fn merged(betas: &[T], etas: &[usize], tol: T) -> Result<Self> {
        if betas.is_empty() || betas.len() != etas.len() {
            return Err(Error::Config("pole spec needs matching nonempty rate/multiplicity lists".into()));
        }
        for (&b, &e) in betas.iter().zip(etas) {
            if !(b > T::zero() && b.is_finite()) {
                return Err(Error::Config(format!("pole location {b} must be positive")));
            }
            if e == 0 {
                return Err(Error::Config("pole multiplicity must be at least 1".into()));
            }
        }
        let mut order: Vec<usize> = (0..betas.len()).collect();
        order.sort_by(|&i, &j| betas[i].partial_cmp(&betas[j]).unwrap());
        let mut out_b: Vec<T> = Vec::new();
        let mut out_e: Vec<usize> = Vec::new();
        for &i in &order {
            if let (Some(last_b), Some(last_e)) = (out_b.last_mut(), out_e.last_mut()) {
                if betas[i] - *last_b < tol * betas[i] {
                    // multiplicity-weighted mean keeps the merged pole centered
                    let w_old = T::of_usize(*last_e);
                    let w_new = T::of_usize(etas[i]);
                    *last_b = (*last_b * w_old + betas[i] * w_new) / (w_old + w_new);
                    *last_e += etas[i];
                    continue;
                }
            }
            out_b.push(betas[i]);
            out_e.push(etas[i]);
        }
        Ok(Self { betas: out_b, etas: out_e })
    }

    /// Total multiplicity `Σ η_j`.
    pub fn total_order(&self) -> usize {
        self.etas.iter().sum()
    }
}

/// Residue coefficients `A_{j,q}` of
/// `∏ (s+β_m)^{−η_m} = Σ_j Σ_{q<η_j} A_{j,q} / (s+β_j)^{q+1}`.
#[derive(Debug, Clone)]
pub struct ResidueTable<T> {
    /// The (merged) pole spec the table expands.
    pub spec: PoleSpec<T>,
    /// `coeff[j][q]` is `A_{j,q}`, `0 ≤ q ≤ η_j − 1`.
    pub coeff: Vec<Vec<T>>,
}

impl<T: Scalar> ResidueTable<T> {
    /// Evaluates `Σ_j Σ_q A_{j,q}/(s+β_j)^{q+1}` for the reconstruction
    /// identity.
    pub fn reconstruct(&self, s: T) -> T {
        let mut sum = T::zero();
        for (j, row) in self.coeff.iter().enumerate() {
            let base = (s + self.spec.betas[j]).recip();
            let mut p = base;
            for &a in row {
                sum += a * p;
                p *= base;
            }
        }
        sum
    }

    /// The target function `∏ (s+β_m)^{−η_m}`.
    pub fn product(&self, s: T) -> T {
        let mut p = T::one();
        for (&b, &e) in self.spec.betas.iter().zip(&self.spec.etas) {
            p *= (s + b).powi(-(e as i32));
        }
        p
    }
}

/// Computes the residue table by the logarithmic-derivative recursion:
/// with `g(s) = ∏_{m≠j}(s+β_m)^{−η_m}`, `g' = g·h` where
/// `h(s) = −Σ_{m≠j} η_m/(s+β_m)` has closed-form derivatives, and the
/// product rule builds `g^{(r)}(−β_j)` without any symbolic machinery.
///
/// The constructed table is validated against the reconstruction identity
/// at a few spread sample points; failure (conceivable only for poles that
/// survived merging yet are still pathologically close relative to the
/// multiplicities) is a numerical error.
pub fn residues<T: Scalar>(spec: &PoleSpec<T>) -> Result<ResidueTable<T>> {
    let k = spec.betas.len();
    let mut coeff = Vec::with_capacity(k);
    for j in 0..k {
        let eta_j = spec.etas[j];
        // gaps D_m = β_m − β_j for m ≠ j
        let gaps: Vec<(T, usize)> = (0..k)
            .filter(|&m| m != j)
            .map(|m| (spec.betas[m] - spec.betas[j], spec.etas[m]))
            .collect();
        // g^{(r)}(−β_j) for r = 0..η_j−1
        let mut g = vec![T::zero(); eta_j];
        g[0] = gaps
            .iter()
            .fold(T::one(), |acc, &(d, e)| acc * d.powi(-(e as i32)));
        if eta_j > 1 {
            // h^{(i)}(−β_j) = −(−1)^i i! Σ η_m / D_m^{i+1}
            let mut h = vec![T::zero(); eta_j - 1];
            let mut fact = T::one();
            for (i, hi) in h.iter_mut().enumerate() {
                if i > 0 {
                    fact *= T::of_usize(i);
                }
                let s: T = gaps
                    .iter()
                    .fold(T::zero(), |acc, &(d, e)| acc + T::of_usize(e) * d.powi(-(i as i32 + 1)));
                let sign = if i % 2 == 0 { T::one() } else { -T::one() };
                *hi = -sign * fact * s;
            }
            // g^{(r+1)} = Σ_i C(r,i) g^{(i)} h^{(r−i)}
            let mut binom = vec![T::one()];
            for r in 0..eta_j - 1 {
                let mut next = T::zero();
                for i in 0..=r {
                    next += binom[i] * g[i] * h[r - i];
                }
                g[r + 1] = next;
                // extend Pascal row for the next r
                let mut row = vec![T::one(); r + 2];
                for c in 1..=r {
                    row[c] = binom[c - 1] + binom[c];
                }
                binom = row;
            }
        }
        // A_{j,q} = g^{(η_j−1−q)}(−β_j)/(η_j−1−q)!
        let mut row = vec![T::zero(); eta_j];
        let mut fact = T::one();
        for r in 0..eta_j {
            if r > 0 {
                fact *= T::of_usize(r);
            }
            row[eta_j - 1 - r] = g[r] / fact;
        }
        coeff.push(row);
    }
    let table = ResidueTable { spec: spec.clone(), coeff };
    // breakdown guard on the functional the tables feed: the total mass of
    // the Erlang-sum CDF, ∏β^η Σ_j Σ_q A_{j,q} β_j^{−(q+1)}, is exactly 1.
    // Poles that survived merging yet sit pathologically close relative to
    // their multiplicities shred this identity first.
    let mut ln_scale = T::zero();
    for (&b, &e) in spec.betas.iter().zip(&spec.etas) {
        ln_scale += T::of_usize(e) * b.ln();
    }
    let mut mass = T::zero();
    for (j, row) in table.coeff.iter().enumerate() {
        let b = spec.betas[j];
        let mut inv = b.recip();
        for (q, &a) in row.iter().enumerate() {
            if q > 0 {
                inv /= b;
            }
            mass += a * inv;
        }
    }
    mass = mass * ln_scale.exp();
    if !((mass - T::one()).abs() <= T::of(1e-7)) {
        return Err(Error::Numerical(format!(
            "residue table failed the unit-mass identity: {mass} (betas {:?}, etas {:?})",
            spec.betas, spec.etas
        )));
    }
    Ok(table)
}

/// Inverse transform of `e^{−Kνs} ∏ (s+β_m)^{−η_m}`:
/// `Σ_j Σ_q A_{j,q} (x−Kν)^q/q! · e^{−β_j (x−Kν)}` for `x ≥ Kν`, zero
/// before the delay.
pub fn inv_lt_density<T: Scalar>(x: T, table: &ResidueTable<T>, nu: T, k: usize) -> T {
    let t = x - T::of_usize(k) * nu;
    if t < T::zero() {
        return T::zero();
    }
    let mut sum = T::zero();
    for (j, row) in table.coeff.iter().enumerate() {
        let e = (-table.spec.betas[j] * t).exp();
        let mut pow = T::one(); // t^q / q!
        for (q, &a) in row.iter().enumerate() {
            if q > 0 {
                pow = pow * t / T::of_usize(q);
            }
            sum += a * pow * e;
        }
    }
    sum
}

/// Integer-order regularized gamma values `P(q+1, x)` for `q = 0..=q_max`,
/// computed as Poisson suffix sums `P(q+1, x) = Σ_{i>q} e^{−x} x^i/i!` —
/// nonnegative terms only, one pass for every order at once.
pub(crate) struct PoissonTails<T> {
    /// `cdf_upper[q] = P(q+1, x)`.
    cdf_upper: Vec<T>,
}

impl<T: Scalar> PoissonTails<T> {
    pub(crate) fn new(x: T, q_max: usize) -> Self {
        if x <= T::zero() {
            return Self { cdf_upper: vec![T::zero(); q_max + 1] };
        }
        // far above every requested order the upper tails are all 1
        let low_edge = x - T::of(12.0) * x.sqrt() - T::of(40.0);
        if low_edge > T::of_usize(q_max + 1) {
            return Self { cdf_upper: vec![T::one(); q_max + 1] };
        }
        let span = (x + T::of(10.0) * x.sqrt() + T::of(40.0)).as_f64() as usize;
        let len = span.max(q_max + 2);
        // pmf anchored at the mode so huge x cannot underflow the anchor
        let mode = (x.as_f64() as usize).min(len - 1);
        let mut pmf = vec![T::zero(); len];
        pmf[mode] = (-x + T::of_usize(mode) * x.ln() - crate::special::ln_gamma(T::of_usize(mode + 1))).exp();
        for i in (0..mode).rev() {
            pmf[i] = pmf[i + 1] * T::of_usize(i + 1) / x;
        }
        for i in mode + 1..len {
            pmf[i] = pmf[i - 1] * x / T::of_usize(i);
        }
        let mut cdf_upper = vec![T::zero(); q_max + 1];
        let mut suffix = T::zero();
        for i in (0..len).rev() {
            suffix += pmf[i];
            if i >= 1 && i - 1 <= q_max {
                cdf_upper[i - 1] = suffix.min(T::one());
            }
        }
        Self { cdf_upper }
    }

    #[inline]
    pub(crate) fn p(&self, q: usize) -> T {
        self.cdf_upper[q]
    }
}

/// Per-call cache of the Φ machinery pieces that depend only on the upper
/// integration limit `u`: the Poisson tails and the inverse rate powers of
/// each (merged) pole.
pub(crate) struct ErlangCdfScratch<T> {
    tails: Vec<PoissonTails<T>>,
    inv_pow: Vec<Vec<T>>, // inv_pow[j][q] = β_j^{−(q+1)}
    ln_beta: Vec<T>,
}

impl<T: Scalar> ErlangCdfScratch<T> {
    pub(crate) fn new(betas: &[T], u: T, q_max: usize) -> Self {
        let tails = betas.iter().map(|&b| PoissonTails::new(b * u, q_max)).collect();
        let inv_pow = betas
            .iter()
            .map(|&b| {
                let mut v = Vec::with_capacity(q_max + 1);
                let mut p = b.recip();
                for _ in 0..=q_max {
                    v.push(p);
                    p = p / b;
                }
                v
            })
            .collect();
        Self {
            tails,
            inv_pow,
            ln_beta: betas.iter().map(|&b| b.ln()).collect(),
        }
    }

    /// `P(Σ_j Gamma(η_j, β_j) ≤ u)` via the residue expansion
    /// `∏β^η Σ_j Σ_q A_{j,q} P(q+1, β_j u) β_j^{−(q+1)}`.
    fn erlang_cdf(&self, table: &ResidueTable<T>) -> T {
        let mut ln_scale = T::zero();
        for (j, &e) in table.spec.etas.iter().enumerate() {
            ln_scale += T::of_usize(e) * self.ln_beta[j];
        }
        let mut sum = T::zero();
        for (j, row) in table.coeff.iter().enumerate() {
            let tails = &self.tails[j];
            let inv = &self.inv_pow[j];
            for (q, &a) in row.iter().enumerate() {
                sum += a * inv[q] * tails.p(q);
            }
        }
        (ln_scale.exp() * sum).clamp(T::zero(), T::one())
    }
}

/// `P(Σ_j Gamma(η_j, rate β_j) ≤ u)` through the residue expansion.
fn erlang_sum_cdf<T: Scalar>(table: &ResidueTable<T>, u: T) -> T {
    if u <= T::zero() {
        return T::zero();
    }
    let q_max = table.spec.etas.iter().max().copied().unwrap_or(1);
    ErlangCdfScratch::new(&table.spec.betas, u, q_max).erlang_cdf(table)
}

/// CDF of a sum of independent exponentials with the given rates
/// (hypoexponential distribution).
///
/// Distinct rates use the classical weight form
/// `1 − Σ_j (∏_{ℓ≠j} β_ℓ/(β_ℓ−β_j)) e^{−β_j u}`; duplicate or
/// near-coincident rates fall back to the merged-pole residue expansion,
/// which covers repeated-rate (Erlang) components exactly.
pub fn hypoexp_cdf<T: Scalar>(u: T, betas: &[T]) -> Result<T> {
    if u < T::zero() || u == T::zero() {
        return Ok(T::zero());
    }
    let etas = vec![1usize; betas.len()];
    let spec = PoleSpec::merged(betas, &etas, T::of(POLE_MERGE_TOL))?;
    if spec.betas.len() == betas.len() {
        // all distinct: cover-up weights
        let mut acc = T::one();
        for (j, &bj) in spec.betas.iter().enumerate() {
            let mut w = T::one();
            for (l, &bl) in spec.betas.iter().enumerate() {
                if l != j {
                    w *= bl / (bl - bj);
                }
            }
            acc -= w * (-bj * u).exp();
        }
        Ok(acc.clamp(T::zero(), T::one()))
    } else {
        let table = residues(&spec)?;
        Ok(erlang_sum_cdf(&table, u))
    }
}

// ---------------------------------------------------------------------
// Φ: conditional probability that the K selected ports all exceed ν yet
// their MRC sum stays below γ_th, conditioned on γ_1 = v1.
// ---------------------------------------------------------------------

/// Thread-confined cache of residue tables keyed by the grouped
/// multiplicity vector (the pole locations are fixed per scenario).
pub struct ResidueCache<T> {
    betas: Vec<T>,
    tables: HashMap<Vec<u16>, ResidueTable<T>>,
}

impl<T: Scalar> ResidueCache<T> {
    /// `betas`: merged pole locations of the selected set.
    fn new(betas: Vec<T>) -> Self {
        Self { betas, tables: HashMap::new() }
    }

    fn table(&mut self, etas: &[u16]) -> Result<&ResidueTable<T>> {
        if !self.tables.contains_key(etas) {
            let spec = PoleSpec {
                betas: self.betas.clone(),
                etas: etas.iter().map(|&e| e as usize).collect(),
            };
            let table = residues(&spec)?;
            self.tables.insert(etas.to_vec(), table);
        }
        Ok(self.tables.get(etas).unwrap())
    }
}

/// Per-scenario structure of the selected set 𝓢 = {1..K}: merged pole
/// groups and the port-to-group map.
pub(crate) struct SelectionAlgebra<T> {
    /// merged pole locations
    group_betas: Vec<T>,
    /// group index of each selected port (0-based over 𝓢)
    port_group: Vec<usize>,
    /// Σ_{m∈𝓢} β_m (unmerged)
    beta_s: T,
}

impl<T: Scalar> SelectionAlgebra<T> {
    pub(crate) fn new(ports: &crate::model::PortParams<T>, k: usize) -> Result<Self> {
        let betas: Vec<T> = (1..=k).map(|m| ports.beta(m)).collect();
        let merged = PoleSpec::merged(&betas, &vec![1usize; k], T::of(POLE_MERGE_TOL))?;
        let port_group = betas
            .iter()
            .map(|&b| {
                merged
                    .betas
                    .iter()
                    .enumerate()
                    .min_by(|(_, x), (_, y)| {
                        (**x - b).abs().partial_cmp(&(**y - b).abs()).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap()
            })
            .collect();
        let beta_s = betas.iter().fold(T::zero(), |a, &b| a + b);
        Ok(Self { group_betas: merged.betas, port_group, beta_s })
    }

    pub(crate) fn cache(&self) -> ResidueCache<T> {
        ResidueCache::new(self.group_betas.clone())
    }
}

/// Detailed series evaluation: value plus the tail estimate of the stopped
/// layer expansion.
pub(crate) fn phi_series_detailed<T: Scalar>(
    gamma_th: T,
    nu: T,
    ctx: &ConditionalContext<'_, T>,
    cfg: &SystemConfig<T>,
    policy: &TruncationPolicy<T>,
    algebra: &SelectionAlgebra<T>,
    cache: &mut ResidueCache<T>,
) -> Result<(T, T)> {
    let k = cfg.selected;
    let u = gamma_th - T::of_usize(k) * nu;
    if u <= T::zero() {
        return Ok((T::zero(), T::zero()));
    }
    let z: Vec<T> = (1..=k)
        .map(|m| ctx.ports.noncentrality(m, ctx.v1, ctx.kappa))
        .collect();
    // per-port caps on the series order from the Poisson windows
    let caps: Vec<usize> = z
        .iter()
        .map(|&zm| {
            let w = zm + T::of(10.0) * (zm + T::one()).sqrt() + T::of(25.0);
            (w.as_f64() as usize).min(policy.total_degree_max)
        })
        .collect();
    // ln d_{m,n} tables (incremental: d_{m,n+1}/d_{m,n} = β z / (n+1)²)
    let mut ln_d: Vec<Vec<T>> = Vec::with_capacity(k);
    for (i, &zm) in z.iter().enumerate() {
        let beta = ctx.ports.beta(i + 1);
        let mut row = Vec::with_capacity(caps[i] + 1);
        let mut cur = beta.ln() - zm;
        row.push(cur);
        if zm > T::zero() {
            let ln_bz = (beta * zm).ln();
            for n in 1..=caps[i] {
                cur += ln_bz - T::of(2.0) * T::of_usize(n).ln();
                row.push(cur);
            }
        }
        ln_d.push(row);
    }
    let ln_nu = if nu > T::zero() { nu.ln() } else { T::neg_infinity() };
    let nu_beta_s = nu * algebra.beta_s;
    // ln n! table
    let max_n = *caps.iter().max().unwrap();
    let mut ln_fact = Vec::with_capacity(max_n + 2);
    ln_fact.push(T::zero());
    for n in 1..=max_n + 1 {
        ln_fact.push(ln_fact[n - 1] + T::of_usize(n).ln());
    }

    // Poisson tails and inverse rate powers shared across every (n, ℓ)
    // term of this call (they depend only on u and the pole set)
    let q_max = (max_n + 1).min(policy.total_degree_max + 1);
    let scratch = ErlangCdfScratch::new(&algebra.group_betas, u, q_max);

    let mut total = LogSum::new();
    let mut below_tol_layers = 0usize;
    let mut last_layer_ratio = T::zero();
    let tol = policy.tail_rel_tol;
    let mut converged = false;
    let mut nvec = vec![0usize; k];
    let mut etas = vec![0u16; algebra.group_betas.len()];
    let mut lvec = vec![0usize; k];

    'layers: for degree in 0..=policy.total_degree_max {
        let mut layer = LogSum::new();
        for nv in compositions(degree, &caps, &mut nvec) {
            add_nvec_terms(
                &nv, &z, &ln_d, &ln_fact, ln_nu, nu_beta_s, algebra, cache, &scratch,
                &mut etas, &mut lvec, &total, tol, &mut layer,
            )?;
        }
        // convergence bookkeeping
        let ln_layer = layer.ln_value();
        total.add_log(ln_layer);
        let ln_total = total.ln_value();
        last_layer_ratio = if ln_layer == T::neg_infinity() {
            T::zero()
        } else {
            (ln_layer - ln_total).exp()
        };
        if degree > 0 && (last_layer_ratio < tol || ln_layer == T::neg_infinity()) {
            below_tol_layers += 1;
            if below_tol_layers >= 3 {
                converged = true;
                break 'layers;
            }
        } else {
            below_tol_layers = 0;
        }
    }
    let value = total.ln_value().exp();
    if !converged && last_layer_ratio >= tol {
        return Err(Error::Numerical(format!(
            "phi series not converged at total degree {} (last layer ratio {:.3e}); \
             raise total_degree_max or use the direct route",
            policy.total_degree_max,
            last_layer_ratio.as_f64()
        )));
    }
    if !value.is_finite() {
        return Err(Error::Numerical("phi series produced a non-finite value".into()));
    }
    Ok((value.clamp(T::zero(), T::one()), value * last_layer_ratio))
}

/// All compositions of `degree` into `caps.len()` parts bounded by the
/// per-slot caps.
fn compositions(degree: usize, caps: &[usize], cur: &mut [usize]) -> Vec<Vec<usize>> {
    fn rec(degree: usize, caps: &[usize], idx: usize, cur: &mut [usize], out: &mut Vec<Vec<usize>>) {
        if idx == caps.len() - 1 {
            if degree <= caps[idx] {
                cur[idx] = degree;
                out.push(cur.to_vec());
            }
            return;
        }
        for v in 0..=degree.min(caps[idx]) {
            cur[idx] = v;
            rec(degree - v, caps, idx + 1, cur, out);
        }
    }
    let mut out = Vec::new();
    rec(degree, caps, 0, cur, &mut out);
    out
}

/// Adds every (ℓ_1..ℓ_K) term of one series multi-index to `layer`.
#[allow(clippy::too_many_arguments)]
fn add_nvec_terms<T: Scalar>(
    nvec: &[usize],
    z: &[T],
    ln_d: &[Vec<T>],
    ln_fact: &[T],
    ln_nu: T,
    nu_beta_s: T,
    algebra: &SelectionAlgebra<T>,
    cache: &mut ResidueCache<T>,
    scratch: &ErlangCdfScratch<T>,
    etas: &mut [u16],
    lvec: &mut [usize],
    total: &LogSum<T>,
    tol: T,
    layer: &mut LogSum<T>,
) -> Result<()> {
    let k = nvec.len();
    // weight bound: ∏ Pois(z_m; n_m) bounds the whole (n, ℓ)-bundle since
    // the inner probability is ≤ 1
    let mut ln_w = -nu_beta_s;
    for m in 0..k {
        if nvec[m] > 0 && z[m] == T::zero() {
            return Ok(()); // d_{m,n} = 0
        }
        ln_w += ln_d[m][nvec[m]] + ln_fact[nvec[m]];
        // d_{m,n}·n! = β^{n+1} e^{−z} z^n/n! = β^{n+1}·Pois(z;n)
    }
    let ln_guard = total.ln_value();
    if ln_guard > T::neg_infinity() {
        // β^{n+1} factors cancel against the β^{-(q+1)} of the inner CDF up
        // to O(1); a generous 60-nat margin keeps the prune safe
        let mut ln_beta_shift = T::zero();
        for m in 0..k {
            ln_beta_shift += T::of_usize(nvec[m] + 1) * algebra.group_betas[algebra.port_group[m]].ln();
        }
        if ln_w - ln_beta_shift < ln_guard + tol.ln() - T::of(60.0) {
            return Ok(());
        }
    }
    // enumerate ℓ_m ∈ 0..=n_m (only ℓ = 0 when ν = 0)
    let ln_nu_active = ln_nu > T::neg_infinity();
    lvec.iter_mut().for_each(|l| *l = 0);
    loop {
        // η groups for this (n, ℓ)
        etas.iter_mut().for_each(|e| *e = 0);
        let mut ln_term = -nu_beta_s;
        for m in 0..k {
            let (n, l) = (nvec[m], lvec[m]);
            etas[algebra.port_group[m]] += (n + 1 - l) as u16;
            ln_term += ln_d[m][n] + ln_fact[n] - ln_fact[l];
            if l > 0 {
                ln_term += T::of_usize(l) * ln_nu;
            }
        }
        // bound this term before paying for (or failing on) its residue
        // table: P ≤ 1 caps the inner CDF factor at ∏ β^{−η}
        let mut ln_b_bound = T::zero();
        for (g, &e) in etas.iter().enumerate() {
            ln_b_bound -= T::of_usize(e as usize) * algebra.group_betas[g].ln();
        }
        let negligible =
            ln_guard > T::neg_infinity() && ln_term + ln_b_bound < ln_guard + tol.ln() - T::of(30.0);
        if !negligible {
            let table = match cache.table(etas) {
                Ok(t) => t,
                Err(e) => return Err(e), // a term that matters failed
            };
            let p = scratch.erlang_cdf(table);
            if p > T::zero() {
                layer.add_log(ln_term + ln_b_bound + p.ln());
            }
        }
        // odometer over ℓ
        if !ln_nu_active {
            break;
        }
        let mut carry = true;
        for m in 0..k {
            if lvec[m] < nvec[m] {
                lvec[m] += 1;
                carry = false;
                break;
            }
            lvec[m] = 0;
        }
        if carry {
            break;
        }
    }
    Ok(())
}

/// Φ by direct evaluation of
/// `Pr(Σ_{m∈𝓢} Y_m ≤ γ_th, Y_m > ν | γ_1 = v1)` for the independent
/// conditional port laws: exact CDF differences for `K = 1`, a single
/// feature-aware quadrature for `K = 2`, and trapezoid grid convolution
/// (Richardson-extrapolated) for `K ≥ 3`. The narrowest port is always
/// consumed through its exact Marcum-Q CDF so the grid never has to
/// resolve the spikiest factor.
pub fn phi_direct<T: Scalar>(
    gamma_th: T,
    nu: T,
    ctx: &ConditionalContext<'_, T>,
    cfg: &SystemConfig<T>,
    policy: &TruncationPolicy<T>,
) -> T {
    let k = cfg.selected;
    let u = gamma_th - T::of_usize(k) * nu;
    if u <= T::zero() {
        return T::zero();
    }
    if k == 1 {
        return (port_cdf(1, gamma_th, ctx) - port_cdf(1, nu, ctx)).max(T::zero());
    }
    // cheap upper bound: every port must land inside (ν, ν+u]; once any
    // window probability underflows, the joint event is gone
    for m in 1..=k {
        let win = port_cdf(m, nu + u, ctx) - port_cdf(m, nu, ctx);
        if win <= T::zero() {
            return T::zero();
        }
    }
    // shifted densities g_m(t) = f_m(t+ν); order ports by bump width
    let mut order: Vec<usize> = (1..=k).collect();
    let width = |m: usize| {
        let z = ctx.ports.noncentrality(m, ctx.v1, ctx.kappa);
        (T::one() + T::of(2.0) * z).sqrt() / ctx.ports.beta(m)
    };
    order.sort_by(|&a, &b| width(b).partial_cmp(&width(a)).unwrap());
    let narrow = *order.last().unwrap(); // exact-CDF side
    let cdf_at_nu = port_cdf(narrow, nu, ctx);
    let cdf_tail = |t: T| (port_cdf(narrow, nu + u - t, ctx) - cdf_at_nu).max(T::zero());
    let mean_n = (T::one() + ctx.ports.noncentrality(narrow, ctx.v1, ctx.kappa))
        / ctx.ports.beta(narrow);
    let sigma_n = width(narrow);

    if k == 2 {
        let wide = order[0];
        let sigma_w = width(wide);
        let mean_w =
            (T::one() + ctx.ports.noncentrality(wide, ctx.v1, ctx.kappa)) / ctx.ports.beta(wide) - nu;
        // clip to where both factors carry mass: the wide bump window and
        // the region where the narrow CDF difference is nonzero
        let t_lo = (mean_w - T::of(14.0) * sigma_w).max(T::zero());
        let t_hi = (mean_w + T::of(14.0) * sigma_w)
            .min(u)
            .min(u + nu - mean_n + T::of(14.0) * sigma_n);
        if t_hi <= t_lo {
            return T::zero();
        }
        let mut edges = crate::quad::feature_panels(t_lo, t_hi, mean_w, sigma_w, 3);
        // the CDF factor has its own transition where ν+u−t crosses the
        // narrow port's mean
        let extra = crate::quad::feature_panels(t_lo, t_hi, u + nu - mean_n, sigma_n, 1);
        edges.extend_from_slice(&extra[1..extra.len() - 1]);
        edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
        edges.dedup_by(|a, b| (*a - *b).abs() <= (t_hi - t_lo) * T::of(1e-14));
        let val = crate::quad::integrate_panels(&edges, 12, |t| {
            port_pdf(wide, t + nu, ctx) * cdf_tail(t)
        });
        return val.clamp(T::zero(), T::one());
    }

    // K ≥ 3: convolve the K−1 widest ports on a grid, close with the
    // narrow port's exact CDF; Richardson over grid halving. The grid must
    // resolve the narrowest convolved bump.
    let min_conv_width = order[..k - 1]
        .iter()
        .map(|&m| width(m))
        .fold(T::infinity(), |a, b| a.min(b));
    let needed = (T::of(8.0) * u / min_conv_width).as_f64() as usize;
    let n = needed
        .next_power_of_two()
        .max(policy.conv_grid.max(64))
        .min(1 << 15);
    let eval = |n: usize| -> T {
        let h = u / T::of_usize(n);
        let mut acc: Vec<T> = (0..=n)
            .map(|i| port_pdf(order[0], T::of_usize(i) * h + nu, ctx))
            .collect();
        let mut next: Vec<T> = Vec::with_capacity(n + 1);
        for &m in &order[1..k - 1] {
            let gm: Vec<T> = (0..=n)
                .map(|i| port_pdf(m, T::of_usize(i) * h + nu, ctx))
                .collect();
            convolve_trapezoid(&acc, &gm, h, &mut next);
            std::mem::swap(&mut acc, &mut next);
        }
        // trapezoid of acc(t)·cdf_tail(t)
        let mut sum = T::zero();
        for (i, &c) in acc.iter().enumerate() {
            let w = if i == 0 || i == n { T::of(0.5) } else { T::one() };
            sum += w * c * cdf_tail(T::of_usize(i) * h);
        }
        sum * h
    };
    let coarse = eval(n / 2);
    let fine = eval(n);
    let richardson = fine + (fine - coarse) / T::of(3.0);
    richardson.clamp(T::zero(), T::one())
}

/// Linear convolution of two trapezoid-sampled functions on a shared
/// uniform grid, truncated to the grid length (only `[0, u]` is ever
/// needed downstream).
fn convolve_trapezoid<T: Scalar>(a: &[T], b: &[T], h: T, out: &mut Vec<T>) {
    let n = a.len();
    out.clear();
    out.resize(n, T::zero());
    if n * n <= 64 * 64 {
        // direct form for small grids
        for i in 0..n {
            let mut s = T::zero();
            for j in 0..=i {
                s += a[j] * b[i - j];
            }
            out[i] = h * (s - T::of(0.5) * (a[0] * b[i] + a[i] * b[0]));
        }
        return;
    }
    // FFT form
    use rustfft::num_complex::Complex;
    use rustfft::FftPlanner;
    let len = (2 * n).next_power_of_two();
    let mut fa: Vec<Complex<f64>> = a
        .iter()
        .map(|&x| Complex::new(x.as_f64(), 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    let mut fb: Vec<Complex<f64>> = b
        .iter()
        .map(|&x| Complex::new(x.as_f64(), 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(len)
        .collect();
    thread_local! {
        static PLANNER: std::cell::RefCell<FftPlanner<f64>> = std::cell::RefCell::new(FftPlanner::new());
    }
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let fft = p.plan_fft_forward(len);
        fft.process(&mut fa);
        fft.process(&mut fb);
        for (x, y) in fa.iter_mut().zip(fb.iter()) {
            *x *= *y;
        }
        let ifft = p.plan_fft_inverse(len);
        ifft.process(&mut fa);
    });
    let scale = 1.0 / len as f64;
    for i in 0..n {
        let raw = T::of(fa[i].re * scale);
        out[i] = h * (raw - T::of(0.5) * (a[0] * b[i] + a[i] * b[0]));
    }
}

/// Decides whether the multi-index series can converge under the policy's
/// degree cap: the layer sums only die once the total degree passes the
/// combined Poisson intensity `Σ z_m` plus a dispersion margin.
pub(crate) fn series_feasible<T: Scalar>(
    ctx: &ConditionalContext<'_, T>,
    cfg: &SystemConfig<T>,
    policy: &TruncationPolicy<T>,
) -> bool {
    let zs: T = (1..=cfg.selected)
        .map(|m| ctx.ports.noncentrality(m, ctx.v1, ctx.kappa))
        .fold(T::zero(), |a, b| a + b);
    let need = zs + T::of(10.0) * (zs + T::one()).sqrt() + T::of_usize(3 * cfg.selected + 8);
    need <= T::of_usize(policy.total_degree_max)
}

/// Φ(γ_th, ν, v1): probability that the `K` selected ports all exceed the
/// pivot SNR `ν` while their MRC sum stays below `γ_th`, conditioned on
/// `γ_1 = v1` (port 1 entering through its marginal-convention law).
///
/// Dispatches between the series and direct routes per
/// [`TruncationPolicy::phi_route`]; `Auto` uses the series exactly when its
/// degree cap can hold the Poisson mass of the expansion.
pub fn phi<T: Scalar>(
    gamma_th: T,
    nu: T,
    ctx: &ConditionalContext<'_, T>,
    cfg: &SystemConfig<T>,
    policy: &TruncationPolicy<T>,
) -> Result<T> {
    if nu < T::zero() {
        return Err(Error::Domain(format!("phi: nu = {nu} must be nonnegative")));
    }
    let algebra = SelectionAlgebra::new(ctx.ports, cfg.selected)?;
    let mut cache = algebra.cache();
    phi_internal(gamma_th, nu, ctx, cfg, policy, &algebra, &mut cache).map(|(v, _)| v)
}

/// Route dispatch with reusable selection algebra and residue cache; used
/// by the outage integrators so the per-scenario structures persist across
/// quadrature nodes. Returns the value and the series tail estimate (zero
/// for the direct route).
pub(crate) fn phi_internal<T: Scalar>(
    gamma_th: T,
    nu: T,
    ctx: &ConditionalContext<'_, T>,
    cfg: &SystemConfig<T>,
    policy: &TruncationPolicy<T>,
    algebra: &SelectionAlgebra<T>,
    cache: &mut ResidueCache<T>,
) -> Result<(T, T)> {
    match policy.phi_route {
        PhiRoute::Direct => Ok((phi_direct(gamma_th, nu, ctx, cfg, policy), T::zero())),
        PhiRoute::Series => phi_series_detailed(gamma_th, nu, ctx, cfg, policy, algebra, cache),
        PhiRoute::Auto => {
            if series_feasible(ctx, cfg, policy) {
                match phi_series_detailed(gamma_th, nu, ctx, cfg, policy, algebra, cache) {
                    Ok(v) => Ok(v),
                    Err(Error::Numerical(_)) => {
                        Ok((phi_direct(gamma_th, nu, ctx, cfg, policy), T::zero()))
                    }
                    Err(e) => Err(e),
                }
            } else {
                Ok((phi_direct(gamma_th, nu, ctx, cfg, policy), T::zero()))
            }
        }
    }
}

/// Closed-form lower bound on Φ from the single-term pdf bound: the
/// selected sum becomes a hypoexponential variable, giving
/// `e^{−νβ_S} ∏_{m∈𝓢} e^{−z_m} · F_hypo(γ_th − Kν)`.
pub fn phi_lb<T: Scalar>(
    gamma_th: T,
    nu: T,
    ctx: &ConditionalContext<'_, T>,
    cfg: &SystemConfig<T>,
) -> Result<T> {
    let k = cfg.selected;
    let u = gamma_th - T::of_usize(k) * nu;
    if u <= T::zero() {
        return Ok(T::zero());
    }
    let mut ln_pref = T::zero();
    let mut betas = Vec::with_capacity(k);
    for m in 1..=k {
        ln_pref -= ctx.ports.noncentrality(m, ctx.v1, ctx.kappa) + nu * ctx.ports.beta(m);
        betas.push(ctx.ports.beta(m));
    }
    let tail = hypoexp_cdf(u, &betas)?;
    Ok((ln_pref.exp() * tail).clamp(T::zero(), T::one()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{port_coeffs, SystemConfig};
    use crate::quad::{integrate_panels, integrate};

    fn spec(betas: &[f64], etas: &[usize]) -> PoleSpec<f64> {
        PoleSpec::merged(betas, etas, POLE_MERGE_TOL).unwrap()
    }

    // -----------------------------------------------------------------
    // residues
    // -----------------------------------------------------------------

    #[test]
    fn single_pole_residues() {
        // 1/(s+β)^{n+1}: A_{1,n} = 1, everything else 0
        let table = residues(&spec(&[2.5], &[4])).unwrap();
        assert_eq!(table.coeff.len(), 1);
        for q in 0..3 {
            assert_eq!(table.coeff[0][q], 0.0);
        }
        assert_eq!(table.coeff[0][3], 1.0);
    }

    #[test]
    fn two_simple_poles_cover_up() {
        let (b1, b2) = (1.3, 4.1);
        let table = residues(&spec(&[b1, b2], &[1, 1])).unwrap();
        assert!((table.coeff[0][0] - 1.0 / (b2 - b1)).abs() < 1e-14);
        assert!((table.coeff[1][0] - 1.0 / (b1 - b2)).abs() < 1e-14);
    }

    #[test]
    fn repeated_pole_matches_finite_difference_oracle() {
        // K=2, η=[2,1]: A_{1,q} needs d/ds of (s+β_2)^{-1} at s=-β_1
        let (b1, b2) = (0.9, 3.7);
        let table = residues(&spec(&[b1, b2], &[2, 1])).unwrap();
        // oracle: central differences with Richardson on g(s) = (s+β2)^{-1}
        let g = |s: f64| (s + b2).powi(-1);
        let fd = |s: f64, h: f64| (g(s + h) - g(s - h)) / (2.0 * h);
        let d1 = {
            let h = 1e-4;
            let a = fd(-b1, h);
            let b = fd(-b1, h / 2.0);
            (4.0 * b - a) / 3.0
        };
        // A_{1,1} = g(-β1), A_{1,0} = g'(-β1)/1!
        assert!((table.coeff[0][1] - g(-b1)).abs() < 1e-12);
        assert!((table.coeff[0][0] - d1).abs() < 1e-9, "{} vs {d1}", table.coeff[0][0]);
        // A_{2,0} = (s+β1)^{-2} at s=-β2
        assert!((table.coeff[1][0] - (b1 - b2).powi(-2)).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_identity_random_specs() {
        let mut state = 0x9E3779B97F4A7C15u64;
        let mut unit = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..30 {
            let k = 1 + (unit() * 4.0) as usize;
            // separation comparable to what distinct port correlations give
            let mut betas = Vec::with_capacity(k);
            let mut b = 0.2 + unit();
            for _ in 0..k {
                betas.push(b);
                b *= 1.8 + 2.0 * unit();
            }
            let etas: Vec<usize> = (0..k).map(|_| 1 + (unit() * 4.0) as usize).collect();
            let table = residues(&spec(&betas, &etas)).unwrap();
            let mean = betas.iter().sum::<f64>() / k as f64;
            for _ in 0..20 {
                // sample s on the pole scale; far outside it the identity
                // cancels like (s/β)^Ση and stops being a precision test
                let s = (0.2 + 1.8 * unit()) * mean;
                let target = table.product(s);
                let got = table.reconstruct(s);
                // allow rounding of the largest contributing term
                let mag = table
                    .coeff
                    .iter()
                    .enumerate()
                    .flat_map(|(j, row)| {
                        let base = (s + table.spec.betas[j]).recip();
                        row.iter().enumerate().map(move |(q, &a)| (a * base.powi(q as i32 + 1)).abs())
                    })
                    .fold(0.0f64, f64::max);
                let tol = (1e-9 * target.abs()).max(8.0 * f64::EPSILON * mag);
                assert!(
                    (got - target).abs() <= tol,
                    "betas {betas:?} etas {etas:?} s {s}: {got} vs {target}"
                );
            }
        }
    }

    #[test]
    fn near_coincident_poles_are_merged() {
        let s = spec(&[2.0, 2.0 + 1e-9, 5.0], &[1, 2, 1]);
        assert_eq!(s.betas.len(), 2);
        assert_eq!(s.etas, vec![3, 1]);
        assert!(residues(&s).is_ok());
    }

    // -----------------------------------------------------------------
    // inv_lt_density
    // -----------------------------------------------------------------

    #[test]
    fn inv_lt_zero_before_delay() {
        let table = residues(&spec(&[1.0, 2.0], &[1, 1])).unwrap();
        assert_eq!(inv_lt_density(0.5, &table, 1.0, 2), 0.0);
        assert!(inv_lt_density(2.5, &table, 1.0, 2) > 0.0);
    }

    #[test]
    fn inv_lt_total_mass_is_product_of_inverse_rates() {
        for (betas, etas) in [
            (vec![1.5, 3.0], vec![1usize, 1]),
            (vec![0.7, 2.2, 4.9], vec![2, 1, 3]),
        ] {
            let table = residues(&spec(&betas, &etas)).unwrap();
            let expect: f64 = betas
                .iter()
                .zip(&etas)
                .map(|(&b, &e)| b.powi(-(e as i32)))
                .product();
            let hi = 60.0 / betas.iter().cloned().fold(f64::MAX, f64::min);
            let edges: Vec<f64> = (0..=160).map(|i| 0.7 + hi * i as f64 / 160.0).collect();
            let nu = 0.35; // delay Kν = 0.7 with K = 2
            let mass = integrate_panels(&edges, 32, |x| inv_lt_density(x, &table, nu, 2));
            assert!(
                (mass - expect).abs() < 1e-9 * expect,
                "betas {betas:?}: {mass} vs {expect}"
            );
        }
    }

    #[test]
    fn inv_lt_matches_exponential_convolution() {
        // K=2, η=[1,1], ν=0: (e^{−β1 x} − e^{−β2 x})/(β2 − β1), which is
        // also the convolution ∫_0^x e^{−β1 s} e^{−β2 (x−s)} ds
        let (b1, b2) = (0.8, 2.9);
        let table = residues(&spec(&[b1, b2], &[1, 1])).unwrap();
        for &x in &[0.3, 1.0, 2.7, 6.0] {
            let closed = ((-b1 * x).exp() - (-b2 * x).exp()) / (b2 - b1);
            let conv = integrate(0.0, x, 48, |s: f64| (-b1 * s).exp() * (-b2 * (x - s)).exp());
            let got = inv_lt_density(x, &table, 0.0, 2);
            assert!((got - closed).abs() < 1e-12);
            assert!((got - conv).abs() < 1e-10, "{got} vs conv {conv}");
        }
    }

    #[test]
    fn inv_lt_nonnegative_on_support() {
        let table = residues(&spec(&[0.5, 1.1, 3.0], &[2, 3, 1])).unwrap();
        for i in 0..400 {
            let x = i as f64 * 0.05;
            assert!(inv_lt_density(x, &table, 0.0, 3) >= -1e-12);
        }
    }

    // -----------------------------------------------------------------
    // hypoexp_cdf
    // -----------------------------------------------------------------

    #[test]
    fn hypoexp_single_rate() {
        for &u in &[0.1, 1.0, 4.0] {
            let got = hypoexp_cdf(u, &[1.7]).unwrap();
            assert!((got - (1.0 - (-1.7 * u as f64).exp())).abs() < 1e-14);
        }
        assert_eq!(hypoexp_cdf(0.0, &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn hypoexp_weights_sum_to_one_at_zero() {
        // continuity: CDF(0+) ~ 0
        let v = hypoexp_cdf(1e-9, &[0.5, 1.5, 4.0]).unwrap();
        assert!(v < 1e-6);
    }

    #[test]
    fn hypoexp_duplicate_rates_fall_back_to_erlang() {
        // two equal rates = Erlang(2): F(u) = 1 − e^{−βu}(1 + βu)
        let b = 1.3;
        for &u in &[0.4, 1.0, 3.2] {
            let got = hypoexp_cdf(u, &[b, b]).unwrap();
            let expect = 1.0 - (-b * u as f64).exp() * (1.0 + b * u);
            assert!((got - expect).abs() < 1e-10, "{got} vs {expect}");
        }
    }

    #[test]
    fn hypoexp_matches_quadrature_of_density() {
        // independent check against ∫ of the inverse-transform density
        let betas = [0.6, 1.9, 3.1];
        let table = residues(&spec(&betas, &[1, 1, 1])).unwrap();
        let scale: f64 = betas.iter().product();
        for &u in &[0.5, 1.5, 4.0] {
            let edges: Vec<f64> = (0..=40).map(|i| u * i as f64 / 40.0).collect();
            let quad = scale * integrate_panels(&edges, 32, |x| inv_lt_density(x, &table, 0.0, 3));
            let got = hypoexp_cdf(u, &betas).unwrap();
            assert!((got - quad).abs() < 1e-10, "u={u}: {got} vs {quad}");
        }
    }

    // -----------------------------------------------------------------
    // Φ
    // -----------------------------------------------------------------

    fn phi_fixture(gamma_bar: f64) -> (SystemConfig<f64>, crate::model::PortParams<f64>) {
        let cfg = SystemConfig::new(4, 2, 0.2, 1.0, gamma_bar, 3.0).unwrap();
        let pp = port_coeffs(&cfg).unwrap();
        (cfg, pp)
    }

    #[test]
    fn phi_zero_past_the_delay() {
        let (cfg, pp) = phi_fixture(10.0);
        let ctx = ConditionalContext::new(2.0, &pp, cfg.kappa);
        let pol = TruncationPolicy::default();
        // γ_th < Kν
        assert_eq!(phi(3.0, 1.6, &ctx, &cfg, &pol).unwrap(), 0.0);
        assert_eq!(phi_lb(3.0, 1.6, &ctx, &cfg).unwrap(), 0.0);
        assert_eq!(phi_lb(3.0, 1.5, &ctx, &cfg).unwrap(), 0.0); // γ_th = Kν
    }

    #[test]
    fn phi_k1_is_port_cdf_difference() {
        let cfg = SystemConfig::new(3, 1, 0.2, 1.0, 5.0, 3.0).unwrap();
        let pp = port_coeffs(&cfg).unwrap();
        let ctx = ConditionalContext::new(1.0, &pp, cfg.kappa);
        let pol = TruncationPolicy::default();
        // ν = 0: CDF of the port-1 marginal at γ_th
        let q = crate::special::marcum_q1(
            (2.0f64 * cfg.kappa).sqrt(),
            (2.0 * (cfg.kappa + 1.0) * cfg.threshold / cfg.avg_snr).sqrt(),
        )
        .unwrap();
        let expect = 1.0 - q;
        let got = phi(cfg.threshold, 0.0, &ctx, &cfg, &pol).unwrap();
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
    }

    #[test]
    fn phi_series_and_direct_agree() {
        // compare on the domain the Auto gate actually assigns to the
        // series; beyond it the degree cap and the residue conditioning
        // both hand the evaluation to the direct route
        let mut pol = TruncationPolicy::default();
        let mut compared = 0usize;
        for &gbar in &[5.0, 10.0, 40.0] {
            let (cfg, pp) = phi_fixture(gbar);
            for &v1 in &[0.0, 0.8, 2.5] {
                let ctx = ConditionalContext::new(v1, &pp, cfg.kappa);
                if !series_feasible(&ctx, &cfg, &pol) {
                    continue;
                }
                for &nu in &[0.0, 0.3, 0.9] {
                    pol.phi_route = PhiRoute::Series;
                    let s: f64 = phi(3.0, nu, &ctx, &cfg, &pol).unwrap();
                    pol.phi_route = PhiRoute::Direct;
                    let d = phi(3.0, nu, &ctx, &cfg, &pol).unwrap();
                    assert!(
                        (s - d).abs() <= 2e-8 * s.abs().max(1e-12),
                        "gbar={gbar} v1={v1} nu={nu}: series {s} vs direct {d}"
                    );
                    compared += 1;
                }
            }
        }
        assert!(compared >= 9, "gate left too few comparison points: {compared}");
    }

    #[test]
    fn phi_direct_k3_matches_series() {
        let cfg = SystemConfig::new(5, 3, 0.25, 1.0, 12.0, 3.0).unwrap();
        let pp = port_coeffs(&cfg).unwrap();
        let mut pol = TruncationPolicy::default();
        pol.total_degree_max = 50;
        let mut compared = 0usize;
        for &v1 in &[0.0, 0.6] {
            let ctx = ConditionalContext::new(v1, &pp, cfg.kappa);
            if !series_feasible(&ctx, &cfg, &pol) {
                continue;
            }
            for &nu in &[0.0, 0.4] {
                pol.phi_route = PhiRoute::Series;
                let s: f64 = phi(3.0, nu, &ctx, &cfg, &pol).unwrap();
                pol.phi_route = PhiRoute::Direct;
                let d = phi(3.0, nu, &ctx, &cfg, &pol).unwrap();
                assert!(
                    (s - d).abs() <= 1e-6 * s.abs().max(1e-9),
                    "v1={v1} nu={nu}: series {s} vs direct {d} (rel {})",
                    ((s - d) / s).abs()
                );
                compared += 1;
            }
        }
        assert!(compared >= 2, "gate left too few comparison points: {compared}");
    }

    #[test]
    fn phi_monotonicity() {
        let (cfg, pp) = phi_fixture(8.0);
        let ctx = ConditionalContext::new(1.0, &pp, cfg.kappa);
        let pol = TruncationPolicy::default();
        // nondecreasing in γ_th
        let mut prev = 0.0;
        for i in 1..=15 {
            let g = i as f64 * 0.5;
            let v = phi(g, 0.2, &ctx, &cfg, &pol).unwrap();
            assert!(v >= prev - 1e-10, "gamma_th={g}");
            prev = v;
        }
        // nonincreasing in ν on [0, γ_th/K]
        let mut prev = 1.0;
        for i in 0..=12 {
            let nu = i as f64 * 0.12;
            let v = phi(3.0, nu, &ctx, &cfg, &pol).unwrap();
            assert!(v <= prev + 1e-10, "nu={nu}");
            prev = v;
        }
    }

    #[test]
    fn phi_lb_dominated_by_phi() {
        let (cfg, pp) = phi_fixture(7.0);
        let pol = TruncationPolicy::default();
        for &v1 in &[0.0, 0.9, 3.0] {
            let ctx = ConditionalContext::new(v1, &pp, cfg.kappa);
            for &nu in &[0.0, 0.25, 0.8, 1.4] {
                let lb = phi_lb(3.0, nu, &ctx, &cfg).unwrap();
                let exact = phi(3.0, nu, &ctx, &cfg, &pol).unwrap();
                assert!(lb <= exact + 1e-10, "v1={v1} nu={nu}: {lb} > {exact}");
            }
        }
    }

    #[test]
    fn phi_lb_equals_series_at_rayleigh_origin() {
        // κ=0, v1=0 kills every n ≥ 1 term: the series collapses onto the
        // lower bound exactly
        let cfg = SystemConfig::new(4, 2, 0.2, 0.0, 6.0, 3.0).unwrap();
        let pp = port_coeffs(&cfg).unwrap();
        let ctx = ConditionalContext::new(0.0, &pp, cfg.kappa);
        let mut pol = TruncationPolicy::default();
        pol.phi_route = PhiRoute::Series;
        for &nu in &[0.0, 0.3, 1.0] {
            let lb: f64 = phi_lb(3.0, nu, &ctx, &cfg).unwrap();
            let series = phi(3.0, nu, &ctx, &cfg, &pol).unwrap();
            assert!(
                (lb - series).abs() <= 1e-12 * lb.max(1e-300),
                "nu={nu}: {lb} vs {series}"
            );
        }
    }

    #[test]
    fn phi_series_error_when_cap_too_small() {
        // big noncentrality with a tiny cap: the series must refuse rather
        // than return a silently truncated value
        let cfg = SystemConfig::new(4, 2, 0.2, 1.0, 1.0, 3.0).unwrap();
        let pp = port_coeffs(&cfg).unwrap();
        let ctx = ConditionalContext::new(3.0, &pp, cfg.kappa);
        let mut pol = TruncationPolicy::default();
        pol.phi_route = PhiRoute::Series;
        pol.total_degree_max = 10;
        let res = phi(3.0, 0.2, &ctx, &cfg, &pol);
        assert!(matches!(res, Err(Error::Numerical(_))), "got {res:?}");
        // Auto falls back to the direct route instead
        pol.phi_route = PhiRoute::Auto;
        let v = phi(3.0, 0.2, &ctx, &cfg, &pol).unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
}
