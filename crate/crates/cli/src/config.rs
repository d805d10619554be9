//! Flat `key = value` scenario files and their defaults.
//!
//! dB-valued quantities are accepted only at this layer; everything handed
//! to the core is linear.

use anyhow::{bail, Context};
use fas_core::outage::{PhiRoute, TruncationPolicy};
use fas_core::SystemConfig64;

/// One scenario plus simulation and truncation controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub ports: usize,
    pub selected: usize,
    pub aperture: f64,
    pub kappa: f64,
    pub gamma_bar_db: f64,
    pub gamma_th_db: f64,
    pub trials: u64,
    pub seed: u64,
    pub policy: TruncationPolicy<f64>,
}

impl Default for Scenario {
    /// Mirrors the headline figure: M=15, K=2, W=0.2, κ=1, γ_th = 5 dB.
    fn default() -> Self {
        Scenario {
            ports: 15,
            selected: 2,
            aperture: 0.2,
            kappa: 1.0,
            gamma_bar_db: 5.0,
            gamma_th_db: 5.0,
            trials: 1_000_000,
            seed: 1,
            policy: TruncationPolicy::default(),
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

impl Scenario {
    /// Parses a flat `key = value` file; `#` starts a comment. Unknown keys
    /// are rejected so typos cannot silently fall back to defaults.
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut sc = Scenario::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected `key = value`, got `{raw}`", lineno + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let ctx = || format!("line {}: bad value for `{key}`", lineno + 1);
            match key {
                "M" | "m" => sc.ports = value.parse().with_context(ctx)?,
                "K" | "k" => sc.selected = value.parse().with_context(ctx)?,
                "W" | "w" => sc.aperture = value.parse().with_context(ctx)?,
                "kappa" => sc.kappa = value.parse().with_context(ctx)?,
                "gamma_bar_db" => sc.gamma_bar_db = value.parse().with_context(ctx)?,
                "gamma_th_db" => sc.gamma_th_db = value.parse().with_context(ctx)?,
                "trials" => sc.trials = value.parse().with_context(ctx)?,
                "seed" => sc.seed = value.parse().with_context(ctx)?,
                "total_degree_max" => sc.policy.total_degree_max = value.parse().with_context(ctx)?,
                "tail_rel_tol" => sc.policy.tail_rel_tol = value.parse().with_context(ctx)?,
                "n_max" => sc.policy.n_max = value.parse().with_context(ctx)?,
                "quad_nodes_v1" => sc.policy.quad_nodes_v1 = value.parse().with_context(ctx)?,
                "quad_nodes_nu" => sc.policy.quad_nodes_nu = value.parse().with_context(ctx)?,
                "conv_grid" => sc.policy.conv_grid = value.parse().with_context(ctx)?,
                "max_outer_panels" => sc.policy.max_outer_panels = value.parse().with_context(ctx)?,
                "outer_rel_tol" => sc.policy.outer_rel_tol = value.parse().with_context(ctx)?,
                "phi_route" => {
                    sc.policy.phi_route = match value {
                        "auto" => PhiRoute::Auto,
                        "series" => PhiRoute::Series,
                        "direct" => PhiRoute::Direct,
                        other => bail!("line {}: phi_route must be auto|series|direct, got `{other}`", lineno + 1),
                    }
                }
                other => bail!("line {}: unknown key `{other}`", lineno + 1),
            }
        }
        Ok(sc)
    }

    /// The linear-unit core configuration.
    pub fn system_config(&self) -> fas_core::Result<SystemConfig64> {
        SystemConfig64::new(
            self.ports,
            self.selected,
            self.aperture,
            self.kappa,
            db_to_linear(self.gamma_bar_db),
            db_to_linear(self.gamma_th_db),
        )
    }

    /// JSON value of the full configuration for the sweep sidecar.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "M": self.ports,
            "K": self.selected,
            "W": self.aperture,
            "kappa": self.kappa,
            "gamma_bar_db": self.gamma_bar_db,
            "gamma_th_db": self.gamma_th_db,
            "trials": self.trials,
            "seed": self.seed,
            "truncation": {
                "total_degree_max": self.policy.total_degree_max,
                "tail_rel_tol": self.policy.tail_rel_tol,
                "n_max": self.policy.n_max,
                "quad_nodes_v1": self.policy.quad_nodes_v1,
                "quad_nodes_nu": self.policy.quad_nodes_nu,
                "conv_grid": self.policy.conv_grid,
                "max_outer_panels": self.policy.max_outer_panels,
                "outer_rel_tol": self.policy.outer_rel_tol,
                "phi_route": format!("{:?}", self.policy.phi_route),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_mirror_headline_figure() {
        let sc = Scenario::default();
        assert_eq!((sc.ports, sc.selected), (15, 2));
        assert_eq!(sc.aperture, 0.2);
        assert_eq!(sc.gamma_th_db, 5.0);
        assert_eq!(sc.trials, 1_000_000);
        assert_eq!(sc.seed, 1);
    }

    #[test]
    fn parses_flat_file() {
        let text = "\
# scenario
M = 8
K = 3
W = 0.4
kappa = 2.5
gamma_bar_db = 10
gamma_th_db = 3
trials = 5000
seed = 42
phi_route = direct
";
        let sc = Scenario::parse(text).unwrap();
        assert_eq!((sc.ports, sc.selected), (8, 3));
        assert_eq!(sc.aperture, 0.4);
        assert_eq!(sc.policy.phi_route, PhiRoute::Direct);
        assert_eq!(sc.seed, 42);
    }

    #[test]
    fn rejects_unknown_keys_and_garbage() {
        assert!(Scenario::parse("bogus = 1").is_err());
        assert!(Scenario::parse("M 15").is_err());
        assert!(Scenario::parse("K = many").is_err());
    }

    #[test]
    fn db_round_trip() {
        for &db in &[-2.0, 0.0, 5.0, 14.0, 50.0] {
            let back = linear_to_db(db_to_linear(db));
            assert!((back - db).abs() < 1e-12);
        }
    }
}
