//! Ground-truth channel simulator: correlated Rician draws, best-K/MRC
//! outage, the random-port-selection baseline, and conditional oracles for
//! the Ψ/Φ probabilities.
//!
//! Reproducibility contract: every trial runs on its own counter-indexed
//! ChaCha stream derived from `(seed, trial_index)`, so estimates are
//! bit-identical across runs and worker counts, and rejection loops inside
//! one trial cannot perturb any other trial.

use num_complex::Complex;
use rand::distributions::{Distribution, Standard};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::model::{port_correlations, rician_params, SystemConfig};
use crate::outage::Method;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// One channel realization across the `M` ports.
#[derive(Debug, Clone)]
pub struct ChannelDraw<T> {
    /// Small-scale coefficients `h_m`.
    pub h: Vec<Complex<T>>,
    /// Instantaneous SNRs `γ_m = γ̄ |h_m|²`.
    pub snr: Vec<T>,
}

/// A Monte Carlo probability estimate with binomial error metadata.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate<T> {
    pub p_hat: T,
    pub trials: u64,
    /// `sqrt(p(1−p)/trials)`.
    pub std_err: T,
    /// 95% normal-approximation interval, clamped to [0, 1].
    pub ci95: (T, T),
    pub seed: u64,
    pub method: Method,
}

impl<T: Scalar> McEstimate<T> {
    fn from_successes(successes: u64, trials: u64, seed: u64, method: Method) -> Self {
        let p = T::of(successes as f64) / T::of(trials as f64);
        let se = (p * (T::one() - p) / T::of(trials as f64)).sqrt();
        let half = T::of(1.959963984540054) * se;
        McEstimate {
            p_hat: p,
            trials,
            std_err: se,
            ci95: ((p - half).max(T::zero()), (p + half).min(T::one())),
            seed,
            method,
        }
    }
}

/// Precomputed sampling constants of one scenario.
pub struct ChannelSampler<T> {
    mu: T,
    sigma: T,
    rho: Vec<T>,
    orth: Vec<T>, // √(1−ρ_m²)
    avg_snr: T,
    ports: usize,
}

impl<T: Scalar> ChannelSampler<T>
where
    Standard: Distribution<T>,
{
    pub fn new(cfg: &SystemConfig<T>) -> Result<Self> {
        let rp = rician_params(cfg.kappa)?;
        let rho = port_correlations(cfg.ports, cfg.aperture)?;
        let orth = rho.iter().map(|&r| (T::one() - r * r).max(T::zero()).sqrt()).collect();
        Ok(Self {
            mu: rp.los_power.sqrt(),
            sigma: rp.scatter_power.sqrt(),
            rho,
            orth,
            avg_snr: cfg.avg_snr,
            ports: cfg.ports,
        })
    }

    /// RNG stream for one trial index: identical across worker layouts.
    pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial);
        rng
    }

    /// Draws the `M` correlated coefficients and SNRs of one realization.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> ChannelDraw<T> {
        let mut h = Vec::with_capacity(self.ports);
        let mut snr = Vec::with_capacity(self.ports);
        let scale = T::of(std::f64::consts::FRAC_1_SQRT_2); // Normal(0, 1/2)
        let (x1, y1) = normal_pair(rng);
        let (x1, y1) = (x1 * scale, y1 * scale);
        for m in 0..self.ports {
            let (re, im) = if m == 0 {
                (x1, y1)
            } else {
                let (xm, ym) = normal_pair(rng);
                (
                    self.orth[m] * xm * scale + self.rho[m] * x1,
                    self.orth[m] * ym * scale + self.rho[m] * y1,
                )
            };
            let hm = Complex::new(self.sigma * re + self.mu, self.sigma * im);
            snr.push(self.avg_snr * hm.norm_sqr());
            h.push(hm);
        }
        ChannelDraw { h, snr }
    }

    /// SNRs only, written into a caller buffer (the hot path).
    fn sample_snrs(&self, rng: &mut ChaCha8Rng, out: &mut [T]) {
        let scale = T::of(std::f64::consts::FRAC_1_SQRT_2);
        let (x1, y1) = normal_pair(rng);
        let (x1, y1) = (x1 * scale, y1 * scale);
        for m in 0..self.ports {
            let (re, im) = if m == 0 {
                (x1, y1)
            } else {
                let (xm, ym) = normal_pair(rng);
                (
                    self.orth[m] * xm * scale + self.rho[m] * x1,
                    self.orth[m] * ym * scale + self.rho[m] * y1,
                )
            };
            let re = self.sigma * re + self.mu;
            let im = self.sigma * im;
            out[m] = self.avg_snr * (re * re + im * im);
        }
    }
}

/// Marsaglia polar method: one pair of independent standard normals.
/// Exact (rejection-based), no tail truncation.
fn normal_pair<T: Scalar, R: Rng>(rng: &mut R) -> (T, T)
where
    Standard: Distribution<T>,
{
    loop {
        let u = T::of(2.0) * rng.gen::<T>() - T::one();
        let v = T::of(2.0) * rng.gen::<T>() - T::one();
        let s = u * u + v * v;
        if s > T::zero() && s < T::one() {
            let f = (T::of(-2.0) * s.ln() / s).sqrt();
            return (u * f, v * f);
        }
    }
}

/// Single-draw convenience matching the sampling equations directly.
pub fn sample_channels<T: Scalar>(rng: &mut ChaCha8Rng, cfg: &SystemConfig<T>) -> Result<ChannelDraw<T>>
where
    Standard: Distribution<T>,
{
    Ok(ChannelSampler::new(cfg)?.sample(rng))
}

/// Sum of the `K` largest entries, by partial selection (no full sort).
/// Scrambles `snr`.
pub fn best_k_sum<T: Scalar>(snr: &mut [T], k: usize) -> T {
    let m = snr.len();
    if k < m {
        snr.select_nth_unstable_by(m - k, |a, b| a.partial_cmp(b).unwrap());
    }
    snr[m - k..].iter().fold(T::zero(), |acc, &x| acc + x)
}

fn run_trials<T, F>(cfg: &SystemConfig<T>, trials: u64, seed: u64, method: Method, per_trial: F) -> Result<McEstimate<T>>
where
    T: Scalar,
    Standard: Distribution<T>,
    F: Fn(&ChannelSampler<T>, &mut ChaCha8Rng, &mut [T]) -> bool + Sync,
{
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let sampler = ChannelSampler::new(cfg)?;
    const CHUNK: u64 = 1 << 14;
    let chunks: Vec<u64> = (0..trials.div_ceil(CHUNK)).collect();
    let successes: u64 = chunks
        .par_iter()
        .map(|&c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(trials);
            let mut buf = vec![T::zero(); cfg.ports];
            let mut count = 0u64;
            for t in lo..hi {
                let mut rng = ChannelSampler::<T>::trial_rng(seed, t);
                if per_trial(&sampler, &mut rng, &mut buf) {
                    count += 1;
                }
            }
            count
        })
        .sum();
    Ok(McEstimate::from_successes(successes, trials, seed, method))
}

/// Outage frequency of best-`K` MRC selection: the fraction of draws where
/// the sum of the `K` largest port SNRs is at most `γ_th`.
pub fn op_mc_best_k<T: Scalar>(cfg: &SystemConfig<T>, trials: u64, seed: u64) -> Result<McEstimate<T>>
where
    Standard: Distribution<T>,
{
    let k = cfg.selected;
    let gth = cfg.threshold;
    run_trials(cfg, trials, seed, Method::McBestK, move |sampler, rng, buf| {
        sampler.sample_snrs(rng, buf);
        best_k_sum(buf, k) <= gth
    })
}

/// Outage frequency when the `K` combined ports are drawn uniformly at
/// random instead of by SNR.
pub fn op_mc_rps<T: Scalar>(cfg: &SystemConfig<T>, trials: u64, seed: u64) -> Result<McEstimate<T>>
where
    Standard: Distribution<T>,
{
    let k = cfg.selected;
    let m = cfg.ports;
    let gth = cfg.threshold;
    run_trials(cfg, trials, seed, Method::McRps, move |sampler, rng, buf| {
        sampler.sample_snrs(rng, buf);
        // partial Fisher–Yates over the port indices
        let mut idx: Vec<usize> = (0..m).collect();
        let mut sum = T::zero();
        for i in 0..k {
            let j = i + rng.gen_range(0..m - i);
            idx.swap(i, j);
            sum += buf[idx[i]];
        }
        sum <= gth
    })
}

/// Conditional Monte Carlo oracles for Ψ and Φ: rejection-samples draws
/// with `γ_1` inside `v1_window`, then estimates
/// Ψ as the fraction with `γ_m ≤ ν` for every non-selected non-pivot port,
/// and Φ as the fraction with `Σ_{m∈𝓢} γ_m ≤ γ_th` and every selected
/// port above `ν`. `trials` counts accepted draws.
pub fn conditional_oracles<T: Scalar>(
    cfg: &SystemConfig<T>,
    v1_window: (T, T),
    nu: T,
    gamma_th: T,
    trials: u64,
    seed: u64,
) -> Result<(McEstimate<T>, McEstimate<T>)>
where
    Standard: Distribution<T>,
{
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let (lo, hi) = v1_window;
    if !(lo < hi) {
        return Err(Error::Config(format!("empty conditioning window [{lo}, {hi})")));
    }
    let sampler = ChannelSampler::new(cfg)?;
    let k = cfg.selected;
    let max_attempts = trials.saturating_mul(10_000);
    let mut accepted = 0u64;
    let mut psi_hits = 0u64;
    let mut phi_hits = 0u64;
    let mut buf = vec![T::zero(); cfg.ports];
    let mut attempt = 0u64;
    let scale = T::of(std::f64::consts::FRAC_1_SQRT_2);
    while accepted < trials {
        if attempt >= max_attempts {
            return Err(Error::Numerical(format!(
                "conditioning window acceptance rate below 1e-4 \
                 ({accepted} accepted in {attempt} attempts); widen the window"
            )));
        }
        let mut rng = ChannelSampler::<T>::trial_rng(seed, attempt);
        attempt += 1;
        // draw port 1 first; reject cheaply before the other ports
        let (x1, y1) = normal_pair::<T, _>(&mut rng);
        let (x1, y1) = (x1 * scale, y1 * scale);
        let re = sampler.sigma * x1 + sampler.mu;
        let im = sampler.sigma * y1;
        let g1 = sampler.avg_snr * (re * re + im * im);
        if g1 < lo || g1 >= hi {
            continue;
        }
        accepted += 1;
        buf[0] = g1;
        for m in 1..cfg.ports {
            let (xm, ym) = normal_pair::<T, _>(&mut rng);
            let rr = sampler.orth[m] * xm * scale + sampler.rho[m] * x1;
            let ii = sampler.orth[m] * ym * scale + sampler.rho[m] * y1;
            let re = sampler.sigma * rr + sampler.mu;
            let im = sampler.sigma * ii;
            buf[m] = sampler.avg_snr * (re * re + im * im);
        }
        if (k + 1..cfg.ports).all(|i| buf[i] <= nu) {
            psi_hits += 1;
        }
        let sel = &buf[..k];
        let sum = sel.iter().fold(T::zero(), |a, &x| a + x);
        if sum <= gamma_th && sel.iter().all(|&x| x > nu) {
            phi_hits += 1;
        }
    }
    Ok((
        McEstimate::from_successes(psi_hits, trials, seed, Method::McBestK),
        McEstimate::from_successes(phi_hits, trials, seed, Method::McBestK),
    ))
}
