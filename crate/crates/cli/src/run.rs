//! Sweep orchestration, CSV/JSON emission, and the validation suite.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use fas_core::model::port_coeffs;
use fas_core::montecarlo::{op_mc_best_k, op_mc_rps};
use fas_core::outage::{
    op_analytical, op_analytical_all, op_asymptotic, op_lb_numeric, op_lower_bound, Method,
    OutageEstimate,
};
use fas_core::Error as CoreError;
use rayon::prelude::*;

use crate::config::{db_to_linear, Scenario};
use crate::CliError;

/// Canonical method order for CSV columns.
pub const METHOD_ORDER: [Method; 6] = [
    Method::Analytical,
    Method::LowerBoundClosed,
    Method::LowerBoundNumeric,
    Method::Asymptotic,
    Method::McBestK,
    Method::McRps,
];

pub fn parse_methods(list: &str) -> Result<Vec<Method>, CliError> {
    let mut methods = Vec::new();
    for tok in list.split(',') {
        let tok = tok.trim();
        let m = match tok.trim_start_matches("op_") {
            "analytical" => Method::Analytical,
            "lb_closed" => Method::LowerBoundClosed,
            "lb_numeric" => Method::LowerBoundNumeric,
            "asymptotic" => Method::Asymptotic,
            "mc_best_k" => Method::McBestK,
            "mc_rps" => Method::McRps,
            other => {
                return Err(CliError::config(format!(
                    "unknown method `{other}` (expected analytical, lb_closed, lb_numeric, \
                     asymptotic, mc_best_k, mc_rps)"
                )))
            }
        };
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        return Err(CliError::config("empty method list".into()));
    }
    methods.sort_by_key(|m| METHOD_ORDER.iter().position(|x| x == m).unwrap());
    Ok(methods)
}

/// Swept variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepVar {
    /// Average SNR in dB.
    #[value(name = "snr_db")]
    SnrDb,
    /// Number of selected ports (integer grid).
    #[value(name = "k")]
    KPorts,
    /// Rician factor.
    #[value(name = "kappa")]
    Kappa,
}

/// Fully resolved sweep request.
pub struct SweepSpec {
    pub var: SweepVar,
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
    pub methods: Vec<Method>,
}

impl SweepSpec {
    pub fn grid(&self) -> Result<Vec<f64>, CliError> {
        if self.steps < 2 {
            return Err(CliError::config("steps must be at least 2".into()));
        }
        if !(self.start < self.stop) {
            return Err(CliError::config("start must be below stop".into()));
        }
        let pts: Vec<f64> = (0..self.steps)
            .map(|i| self.start + (self.stop - self.start) * i as f64 / (self.steps - 1) as f64)
            .collect();
        if self.var == SweepVar::KPorts {
            let ints: Vec<f64> = pts.iter().map(|p| p.round()).collect();
            if ints.windows(2).any(|w| w[1] <= w[0]) || ints[0] < 1.0 {
                return Err(CliError::config(
                    "k sweep needs a strictly increasing integer grid".into(),
                ));
            }
            return Ok(ints);
        }
        Ok(pts)
    }
}

struct PointRow {
    sweep_value: f64,
    /// value per requested method; `None` renders as an empty cell
    values: Vec<Option<f64>>,
    mc_std_err: f64,
    status: String,
}

fn apply_var(base: &Scenario, var: SweepVar, value: f64) -> Scenario {
    let mut sc = base.clone();
    match var {
        SweepVar::SnrDb => sc.gamma_bar_db = value,
        SweepVar::KPorts => sc.selected = value as usize,
        SweepVar::Kappa => sc.kappa = value,
    }
    sc
}

/// Evaluates one method at one scenario. `None` marks a method that is
/// undefined at this point (the lower bounds need K < M).
fn eval_method(
    sc: &Scenario,
    method: Method,
    warn_fallback: &mut bool,
) -> Result<Option<OutageEstimate<f64>>, CoreError> {
    let cfg = sc.system_config()?;
    let est = match method {
        Method::Analytical => {
            if sc.selected == sc.ports {
                op_analytical_all(&cfg, &sc.policy)?
            } else {
                op_analytical(&cfg, &sc.policy)?
            }
        }
        Method::LowerBoundClosed => {
            if sc.selected == sc.ports {
                return Ok(None);
            }
            if sc.ports - sc.selected - 1 > 24 {
                *warn_fallback = true;
                op_lb_numeric(&cfg, &sc.policy)?
            } else {
                op_lower_bound(&cfg)?
            }
        }
        Method::LowerBoundNumeric => {
            if sc.selected == sc.ports {
                return Ok(None);
            }
            op_lb_numeric(&cfg, &sc.policy)?
        }
        Method::Asymptotic => op_asymptotic(&cfg)?,
        Method::McBestK => op_mc_best_k(&cfg, sc.trials, sc.seed)?.into(),
        Method::McRps => op_mc_rps(&cfg, sc.trials, sc.seed)?.into(),
    };
    Ok(Some(est))
}

fn compute_point(sc: &Scenario, sweep_value: f64, methods: &[Method]) -> Result<PointRow, CoreError> {
    let mut values = Vec::with_capacity(methods.len());
    let mut mc_std_err = 0.0f64;
    let mut warn = false;
    for &m in methods {
        let est = eval_method(sc, m, &mut warn)?;
        if let Some(e) = est {
            if matches!(m, Method::McBestK | Method::McRps) {
                mc_std_err = mc_std_err.max(e.error_metric);
            }
            values.push(Some(e.value));
        } else {
            values.push(None);
        }
    }
    if warn {
        eprintln!(
            "warning: M-K-1 > 24 at sweep value {sweep_value}; op_lb_closed column \
             falls back to op_lb_numeric"
        );
    }
    Ok(PointRow {
        sweep_value,
        values,
        mc_std_err,
        status: "ok".into(),
    })
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_csv(
    path: &Path,
    methods: &[Method],
    rows: &[PointRow],
    seed: u64,
) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str("sweep_value");
    for m in methods {
        let _ = write!(out, ",{}", m.name());
    }
    out.push_str(",mc_std_err,seed,status\n");
    for row in rows {
        let _ = write!(out, "{}", fmt17(row.sweep_value));
        for v in &row.values {
            match v {
                Some(x) => {
                    let _ = write!(out, ",{}", fmt17(*x));
                }
                None => out.push(','),
            }
        }
        let _ = writeln!(out, ",{},{seed},{}", fmt17(row.mc_std_err), row.status);
    }
    std::fs::write(path, out)
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

fn write_sidecar(
    out_path: &Path,
    sc: &Scenario,
    spec: Option<&SweepSpec>,
    wall: f64,
) -> Result<(), CliError> {
    let sidecar = out_path.with_extension("meta.json");
    let mut doc = serde_json::json!({
        "config": sc.to_json(),
        "library_version": env!("CARGO_PKG_VERSION"),
        "wall_time_seconds": wall,
    });
    if let Some(spec) = spec {
        doc["sweep"] = serde_json::json!({
            "variable": format!("{:?}", spec.var),
            "start": spec.start,
            "stop": spec.stop,
            "steps": spec.steps,
            "methods": spec.methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
        });
    }
    std::fs::write(&sidecar, serde_json::to_string_pretty(&doc).unwrap())
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", sidecar.display())))
}

/// `sweep`: evaluates every requested method on the grid and writes the
/// CSV (plus a JSON sidecar). Points are dispatched to the worker pool;
/// rows are written in sweep order. On a numerical failure the partial CSV
/// is flushed with the failing row's status set, and exit code 2 follows.
pub fn sweep(base: &Scenario, spec: &SweepSpec, out_path: &Path) -> Result<(), CliError> {
    let start = Instant::now();
    let grid = spec.grid()?;
    // reject plainly invalid scenarios before burning time
    apply_var(base, spec.var, grid[0])
        .system_config()
        .map_err(CliError::from)?;
    let results: Vec<Result<PointRow, CoreError>> = grid
        .par_iter()
        .map(|&v| compute_point(&apply_var(base, spec.var, v), v, &spec.methods))
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut failure: Option<CliError> = None;
    for (v, res) in grid.iter().zip(results) {
        match res {
            Ok(row) => rows.push(row),
            Err(e) => {
                rows.push(PointRow {
                    sweep_value: *v,
                    values: vec![None; spec.methods.len()],
                    mc_std_err: 0.0,
                    status: format!("error: {e}"),
                });
                failure = Some(CliError::from(e));
                break;
            }
        }
    }
    write_csv(out_path, &spec.methods, &rows, base.seed)?;
    write_sidecar(out_path, base, Some(spec), start.elapsed().as_secs_f64())?;
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// `single`: one scenario, every applicable method, table on stdout and an
/// optional one-row CSV.
pub fn single(sc: &Scenario, out_path: Option<&Path>) -> Result<(), CliError> {
    let start = Instant::now();
    let methods: Vec<Method> = METHOD_ORDER.to_vec();
    let row = compute_point(sc, db_to_linear(sc.gamma_bar_db), &methods).map_err(CliError::from)?;
    println!("{:<16} {:<24} {}", "method", "outage_probability", "error_metric");
    let mut warn = false;
    for (m, v) in methods.iter().zip(&row.values) {
        match v {
            Some(x) => {
                let err = eval_method(sc, *m, &mut warn)
                    .map(|e| e.map(|e| e.error_metric).unwrap_or(0.0))
                    .unwrap_or(f64::NAN);
                println!("{:<16} {:<24} {:.3e}", m.name(), fmt17(*x), err);
            }
            None => println!("{:<16} (undefined at K = M)", m.name()),
        }
    }
    if let Some(path) = out_path {
        write_csv(path, &methods, &[row], sc.seed)?;
        write_sidecar(path, sc, None, start.elapsed().as_secs_f64())?;
    }
    Ok(())
}

/// `validate`: fast invariant suite plus a 1e5-trial Monte Carlo smoke
/// comparison; prints one pass/fail line per property and exits 2 on the
/// first violated invariant (after printing the whole table).
pub fn validate(sc: &Scenario) -> Result<(), CliError> {
    use fas_core::dist::{cond_pdf, cond_pdf_series, pdf_gamma1, psi, psi_lb, ConditionalContext};
    use fas_core::laplace::{phi, phi_lb, residues, PoleSpec, POLE_MERGE_TOL};
    use fas_core::quad::integrate_panels;

    let cfg = sc.system_config().map_err(CliError::from)?;
    let pp = port_coeffs(&cfg).map_err(CliError::from)?;
    let mut all_ok = true;
    let mut check = |name: &str, ok: bool, detail: String| {
        println!("{} {:<44} {detail}", if ok { "PASS" } else { "FAIL" }, name);
        all_ok &= ok;
    };

    // normalization of the port-1 marginal
    {
        let hi = 40.0 * cfg.avg_snr.max(cfg.threshold);
        let edges: Vec<f64> = (0..=64).map(|i| hi * i as f64 / 64.0).collect();
        let mass = integrate_panels(&edges, 32, |v| pdf_gamma1(v, &cfg));
        check("pdf_gamma1 normalization", (mass - 1.0).abs() < 1e-8, format!("mass = {mass:.12}"));
    }
    // normalization of a conditional pdf
    {
        let v1 = cfg.avg_snr;
        let ctx = ConditionalContext::new(v1, &pp, cfg.kappa);
        let m = 2.min(cfg.ports);
        let beta = pp.beta(m);
        let z = pp.noncentrality(m, v1, cfg.kappa);
        let hi = (1.0 + z) / beta + 14.0 * (1.0 + 2.0 * z).sqrt() / beta + 20.0 / beta;
        let edges: Vec<f64> = (0..=96).map(|i| hi * i as f64 / 96.0).collect();
        let mass = integrate_panels(&edges, 32, |x| cond_pdf(m, x, &ctx).unwrap_or(0.0));
        check("cond_pdf normalization", (mass - 1.0).abs() < 1e-7, format!("mass = {mass:.12}"));
    }
    // series form equals the Bessel form
    {
        let ctx = ConditionalContext::new(0.8 * cfg.avg_snr, &pp, cfg.kappa);
        let mut worst = 0.0f64;
        for m in 2..=cfg.ports.min(5) {
            for i in 1..=8 {
                let vm = cfg.threshold * i as f64 / 4.0;
                let a = cond_pdf(m, vm, &ctx).unwrap();
                let b = cond_pdf_series(m, vm, &ctx, &sc.policy).unwrap_or(f64::NAN);
                worst = worst.max(((a - b) / a.max(1e-300)).abs());
            }
        }
        check("series/Bessel pdf equivalence", worst < 1e-9, format!("worst rel = {worst:.3e}"));
    }
    // residue reconstruction on the selected-set poles
    {
        let k = cfg.selected.min(cfg.ports - 1).max(1);
        let betas: Vec<f64> = (1..=k).map(|m| pp.beta(m)).collect();
        let mut worst = 0.0f64;
        for etas in [vec![1usize; k], vec![2; k], vec![3; k]] {
            let spec = PoleSpec::merged(&betas, &etas, POLE_MERGE_TOL).unwrap();
            if let Ok(table) = residues(&spec) {
                for i in 1..=20 {
                    let s = 0.3 * i as f64 * betas[0];
                    let p = table.product(s);
                    worst = worst.max(((table.reconstruct(s) - p) / p).abs());
                }
            } else {
                worst = f64::INFINITY;
            }
        }
        check("residue reconstruction", worst < 1e-9, format!("worst rel = {worst:.3e}"));
    }
    // bound orderings
    {
        let mut ok = true;
        let mut detail = String::from("psi_lb <= psi, phi_lb <= phi");
        'outer: for &v1 in &[0.0, 0.7 * cfg.avg_snr, 2.0 * cfg.avg_snr] {
            let ctx = ConditionalContext::new(v1, &pp, cfg.kappa);
            for i in 0..=6 {
                let nu = cfg.threshold / cfg.selected as f64 * i as f64 / 6.0;
                if psi_lb(nu, &ctx, &cfg) > psi(nu, &ctx, &cfg) + 1e-10 {
                    ok = false;
                    detail = format!("psi_lb > psi at v1={v1}, nu={nu}");
                    break 'outer;
                }
                let lb = phi_lb(cfg.threshold, nu, &ctx, &cfg).unwrap_or(f64::NAN);
                let ex = phi(cfg.threshold, nu, &ctx, &cfg, &sc.policy).unwrap_or(f64::NAN);
                if !(lb <= ex + 1e-10) {
                    ok = false;
                    detail = format!("phi_lb > phi at v1={v1}, nu={nu} ({lb} vs {ex})");
                    break 'outer;
                }
            }
        }
        check("conditional bound ordering", ok, detail);
    }
    // analytic bound ordering and MC smoke comparison
    {
        let analytic = if cfg.selected == cfg.ports {
            op_analytical_all(&cfg, &sc.policy)
        } else {
            op_analytical(&cfg, &sc.policy)
        }
        .map_err(CliError::from)?;
        if cfg.selected < cfg.ports {
            let lb = op_lb_numeric(&cfg, &sc.policy).map_err(CliError::from)?;
            check(
                "op_lb_numeric <= op_analytical",
                lb.value <= analytic.value + 1e-12 + 1e-6 * analytic.value,
                format!("{:.6e} vs {:.6e}", lb.value, analytic.value),
            );
            if cfg.ports - cfg.selected - 1 <= 24 {
                let closed = op_lower_bound(&cfg).map_err(CliError::from)?;
                let rel = ((closed.value - lb.value) / lb.value.max(1e-300)).abs();
                check(
                    "closed-form LB vs numeric LB",
                    rel < 1e-6,
                    format!("rel diff = {rel:.3e}"),
                );
            } else {
                println!(
                    "WARN closed-form LB skipped: M-K-1 = {} exceeds the subset cap (24); \
                     op_lb_numeric stands in",
                    cfg.ports - cfg.selected - 1
                );
            }
        }
        let trials = 100_000u64;
        let mc = op_mc_best_k(&cfg, trials, sc.seed).map_err(CliError::from)?;
        let tol = (4.0 * mc.std_err).max(0.15 * analytic.value).max(3.0 / trials as f64);
        check(
            "MC smoke comparison (1e5 trials)",
            (analytic.value - mc.p_hat).abs() <= tol,
            format!(
                "analytic {:.6e} vs mc {:.6e} (tol {:.2e})",
                analytic.value, mc.p_hat, tol
            ),
        );
    }

    if all_ok {
        Ok(())
    } else {
        Err(CliError::numerical("validation failed; see the FAIL lines above".into()))
    }
}
