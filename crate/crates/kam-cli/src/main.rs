//! `kam`: command-line driver for invariant-torus computations.
//!
//! Every subcommand reads one TOML run configuration ([model], [solver],
//! [diophantine], [domain] sections, each field optional) through `--model`
//! and applies flag overrides on top. Results are emitted as JSON documents
//! (CSV for the domain raster) that depend only on the configuration, never
//! on wall time; timing and progress go to stderr. Exit codes: 0 success,
//! 2 validated mathematical rejection, 1 internal error, 64 usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::Serialize;

use kam_core::cocycle::TrichotomySplitting;
use kam_core::domain::{scan_analyticity_domain, write_scan_csv, DomainScan, RejectionReason};
use kam_core::lindstedt::{
    lindstedt_bundle_expansion, lindstedt_torus_expansion, LindstedtExpansion,
};
use kam_core::newton::{invariance_error, newton_step, run_kam_iteration, strip_margin};
use kam_core::{
    ConformalMapFamily, ConditionReport, CoreError, FourierSeries, KamRun, ModelConfig, RunConfig,
    SolverConfig, SplittingRates, TorusEmbedding,
};

#[derive(Parser)]
#[command(name = "kam", version, about = "Whiskered invariant tori of conformally symplectic maps")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Verify the conformal-symplectic identity and the exact unperturbed torus.
    CheckModel(CheckModelArgs),
    /// Solve the invariance equation at one ε by quasi-Newton iteration.
    Solve(SolveArgs),
    /// March ε outward with step halving until the solver breaks down.
    Continue(ContinueArgs),
    /// Expand torus and drift in powers of ε and tabulate truncation defects.
    Lindstedt(LindstedtArgs),
    /// Scan the complex ε disc and classify every sample.
    Domain(DomainArgs),
    /// Report growth rates of the invariant splitting at one ε.
    Rates(RatesArgs),
}

/// Flags shared by every subcommand: the config file and field overrides.
#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Override [model] kind.
    #[arg(long)]
    kind: Option<String>,
    /// Override [model] lambda.
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    /// Override [model] kappa.
    #[arg(long)]
    kappa: Option<f64>,
    /// Override [model] omega.
    #[arg(long)]
    omega: Option<f64>,
    /// Override [solver] n_modes.
    #[arg(long = "n-modes")]
    n_modes: Option<usize>,
    /// Override [solver] tol.
    #[arg(long)]
    tol: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig, String> {
        let text = fs::read_to_string(&self.model)
            .map_err(|e| format!("cannot read {}: {e}", self.model.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| format!("cannot parse {}: {e}", self.model.display()))?;
        if let Some(kind) = &self.kind {
            cfg.model.kind = kind.clone();
        }
        if let Some(v) = self.lambda {
            cfg.model.lambda = v;
        }
        if let Some(v) = self.kappa {
            cfg.model.kappa = v;
        }
        if let Some(v) = self.omega {
            cfg.model.omega = v;
            cfg.diophantine.omega = v;
        }
        if let Some(v) = self.n_modes {
            cfg.solver.n_modes = v;
        }
        if let Some(v) = self.tol {
            cfg.solver.tol = v;
        }
        cfg.diophantine
            .validate()
            .map_err(|e| format!("invalid [diophantine] section: {e}"))?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct CheckModelArgs {
    #[command(flatten)]
    common: Common,
    /// Kick strength at which the conformal identity is sampled.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    eps: f64,
    /// Random phase points per check.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// RNG seed for the sample points.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: Common,
    /// Real part of ε.
    #[arg(long, allow_hyphen_values = true)]
    eps: f64,
    /// Imaginary part of ε.
    #[arg(long = "eps-im", default_value_t = 0.0, allow_hyphen_values = true)]
    eps_im: f64,
    /// Order of the perturbative seed; 0 seeds from the flat torus.
    #[arg(long = "seed-order", default_value_t = 6)]
    seed_order: usize,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ContinueArgs {
    #[command(flatten)]
    common: Common,
    /// Target ε on the real axis; the sign sets the march direction.
    #[arg(long = "eps-max", allow_hyphen_values = true)]
    eps_max: f64,
    /// Initial ε increment.
    #[arg(long, default_value_t = 0.02)]
    step: f64,
    /// Declare breakdown once halving pushes the step below this.
    #[arg(long = "min-step", default_value_t = 1e-4)]
    min_step: f64,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LindstedtArgs {
    #[command(flatten)]
    common: Common,
    /// Expansion order; defaults to [domain] order_n.
    #[arg(long = "order-N")]
    order_n: Option<usize>,
    /// Comma-separated real ε values for the residual table.
    #[arg(long = "eps-list", value_name = "LIST")]
    eps_list: Option<String>,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DomainArgs {
    #[command(flatten)]
    common: Common,
    /// Override [domain] r0.
    #[arg(long)]
    r0: Option<f64>,
    /// Override [domain] grid.
    #[arg(long)]
    grid: Option<usize>,
    /// Override [domain] order_n.
    #[arg(long = "order-N")]
    order_n: Option<usize>,
    /// Override [domain] a_threshold.
    #[arg(long = "A")]
    a_threshold: Option<f64>,
    /// CSV raster output path.
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    /// Also write the full sample records as JSON.
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct RatesArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, allow_hyphen_values = true)]
    eps: f64,
    #[arg(long = "eps-im", default_value_t = 0.0, allow_hyphen_values = true)]
    eps_im: f64,
    #[arg(long = "seed-order", default_value_t = 6)]
    seed_order: usize,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

/// Top-level JSON envelope: schema tag, the effective configuration after
/// overrides, and the subcommand payload. Contains no timing fields.
#[derive(Serialize)]
struct Document<T: Serialize> {
    schema: &'static str,
    config: RunConfig,
    result: T,
}

#[derive(Serialize)]
struct CheckModelReport {
    eps: Complex64,
    conformality_defect: f64,
    exact_torus_residual: f64,
    newton_correction: f64,
    drift_correction: f64,
    passed: bool,
}

#[derive(Serialize)]
struct TorusReport {
    omega: f64,
    rho: f64,
    n_modes: usize,
    mu: Complex64,
    periodic: FourierSeries,
}

#[derive(Serialize)]
struct SolveReport {
    eps: Complex64,
    seed_order: usize,
    converged: bool,
    iterations: usize,
    final_error: f64,
    error_history: Vec<f64>,
    mu_drift: f64,
    torus_drift: f64,
    rates: Option<SplittingRates>,
    reports: Vec<ConditionReport>,
    torus: TorusReport,
}

#[derive(Serialize)]
struct RejectionReport {
    eps: Complex64,
    reason: &'static str,
    message: String,
}

#[derive(Serialize)]
struct ContinuationPoint {
    eps: f64,
    mu: Complex64,
    final_error: f64,
    iterations: usize,
}

#[derive(Serialize)]
struct ContinuationReport {
    target: f64,
    reached: f64,
    breakdown: bool,
    points: Vec<ContinuationPoint>,
}

#[derive(Serialize)]
struct ResidualRow {
    eps: Complex64,
    residual: f64,
}

#[derive(Serialize)]
struct LindstedtReport {
    order_n: usize,
    expansion: LindstedtExpansion,
    residual_table: Vec<ResidualRow>,
}

#[derive(Serialize)]
struct RatesReport {
    eps: Complex64,
    lambda: Complex64,
    rates: SplittingRates,
    ordering_ok: bool,
    center_brackets_lambda: bool,
    strip_margin: f64,
    final_error: f64,
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.cmd {
        Cmd::CheckModel(a) => check_model(a),
        Cmd::Solve(a) => solve(a),
        Cmd::Continue(a) => continuation(a),
        Cmd::Lindstedt(a) => lindstedt(a),
        Cmd::Domain(a) => domain(a),
        Cmd::Rates(a) => rates(a),
    };
    match outcome {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("kam: error: {msg}");
            1
        }
    }
}

fn build_family(cfg: &ModelConfig) -> Result<ConformalMapFamily, String> {
    match cfg.kind.as_str() {
        "dissipative_standard_4d" => Ok(ConformalMapFamily::standard_4d(cfg)),
        "dissipative_standard_2d" => Ok(ConformalMapFamily::standard_2d(cfg)),
        "dissipative_standard_4d_scan" => Ok(ConformalMapFamily::standard_4d_scan(cfg)),
        "dissipative_standard_4d_broken_kick" => Ok(ConformalMapFamily::broken_kick(cfg)),
        other => Err(format!(
            "unknown model kind {other:?}; expected dissipative_standard_4d, \
             dissipative_standard_2d, dissipative_standard_4d_scan, or \
             dissipative_standard_4d_broken_kick"
        )),
    }
}

fn emit<T: Serialize>(doc: &Document<T>, out: Option<&Path>) -> Result<(), String> {
    let mut text =
        serde_json::to_string_pretty(doc).map_err(|e| format!("serialization failed: {e}"))?;
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Splits solver failures into validated rejections (exit 2, with a JSON
/// record naming the reason) and internal faults (exit 1).
fn reject_or_fail(
    err: CoreError,
    eps: Complex64,
    cfg: &RunConfig,
    out: Option<&Path>,
) -> Result<i32, String> {
    match RejectionReason::classify(&err) {
        Some(reason) => {
            let doc = Document {
                schema: "kam/rejection/1",
                config: cfg.clone(),
                result: RejectionReport {
                    eps,
                    reason: reason.as_str(),
                    message: err.to_string(),
                },
            };
            emit(&doc, out)?;
            eprintln!("kam: rejected ({}): {err}", reason.as_str());
            Ok(2)
        }
        None => Err(err.to_string()),
    }
}

fn coordinate_seed(fam: &ConformalMapFamily, n_modes: usize) -> Result<TrichotomySplitting, CoreError> {
    TrichotomySplitting::coordinate(&fam.coordinate_splitting_basis(), fam.splitting_dims(), n_modes)
}

/// Seed torus and splitting at ε: the order-N truncated expansion when
/// `order > 0` (splitting falls back to the ε = 0 one if the bundle
/// expansion is unavailable), the flat torus when `order == 0`.
fn build_seed(
    fam: &ConformalMapFamily,
    eps: Complex64,
    order: usize,
    solver: &SolverConfig,
) -> Result<(TorusEmbedding, TrichotomySplitting), CoreError> {
    let k0 = TorusEmbedding::flat(fam, solver.n_modes, solver.rho0);
    if order == 0 {
        let s = coordinate_seed(fam, solver.n_modes)?;
        return Ok((k0, s));
    }
    let mut expansion = lindstedt_torus_expansion(fam, &k0, order)?;
    if let Ok(bundle) = lindstedt_bundle_expansion(fam, &expansion, order) {
        expansion.bundle = Some(bundle);
    }
    let torus = expansion.torus_at(eps, solver.rho0);
    let splitting = match expansion.splitting_at(eps) {
        Ok(s) => s,
        Err(_) => coordinate_seed(fam, solver.n_modes)?,
    };
    Ok((torus, splitting))
}

fn torus_report(k: &TorusEmbedding) -> TorusReport {
    TorusReport {
        omega: k.omega,
        rho: k.rho,
        n_modes: k.n_modes(),
        mu: k.mu,
        periodic: k.periodic.clone(),
    }
}

fn check_model(a: CheckModelArgs) -> Result<i32, String> {
    let cfg = a.common.load()?;
    let fam = build_family(&cfg.model)?;
    let eps = Complex64::new(a.eps, 0.0);
    let t0 = Instant::now();
    let defect = fam.with_eps(eps).check_conformal(a.samples, a.seed);

    // Self-test on the unperturbed limit: the flat torus solves the
    // invariance equation exactly and one Newton step only moves roundoff.
    let k0 = TorusEmbedding::flat(&fam, 64, cfg.solver.rho0);
    let residual = invariance_error(&fam, &k0)
        .map_err(|e| e.to_string())?
        .norm_rho(k0.rho);
    let splitting = coordinate_seed(&fam, 64).map_err(|e| e.to_string())?;
    let delta = 0.125 * (cfg.solver.rho0 - cfg.solver.rho_final);
    let step_cfg = SolverConfig {
        n_modes: 64,
        ..cfg.solver.clone()
    };
    let (_, _, report) =
        newton_step(&fam, &k0, &splitting, delta, &step_cfg).map_err(|e| e.to_string())?;

    let passed = defect <= 1e-12 && residual <= 1e-13 && report.correction_norm <= 1e-12;
    let result = CheckModelReport {
        eps,
        conformality_defect: defect,
        exact_torus_residual: residual,
        newton_correction: report.correction_norm,
        drift_correction: report.beta.norm(),
        passed,
    };
    eprintln!(
        "kam: check-model: conformality defect {defect:.3e}, exact-torus residual {residual:.3e} ({:.2}s)",
        t0.elapsed().as_secs_f64()
    );
    let doc = Document {
        schema: "kam/check-model/1",
        config: cfg,
        result,
    };
    emit(&doc, a.out.as_deref())?;
    Ok(if passed { 0 } else { 2 })
}

fn solve(a: SolveArgs) -> Result<i32, String> {
    let cfg = a.common.load()?;
    let fam = build_family(&cfg.model)?;
    let eps = Complex64::new(a.eps, a.eps_im);
    let f = fam.with_eps(eps);
    let t0 = Instant::now();
    let (seed, splitting) = match build_seed(&fam, eps, a.seed_order, &cfg.solver) {
        Ok(pair) => pair,
        Err(e) => return reject_or_fail(e, eps, &cfg, a.out.as_deref()),
    };
    let (k, s, run) = match run_kam_iteration(&f, &seed, &splitting, &cfg.solver) {
        Ok(triple) => triple,
        Err(e) => return reject_or_fail(e, eps, &cfg, a.out.as_deref()),
    };
    eprintln!(
        "kam: solve: converged in {} steps to {:.3e} ({:.2}s)",
        run.iterations,
        run.error_history.last().copied().unwrap_or(f64::NAN),
        t0.elapsed().as_secs_f64()
    );
    let doc = Document {
        schema: "kam/solve/1",
        config: cfg,
        result: solve_report(eps, a.seed_order, &k, s.rates, run),
    };
    emit(&doc, a.out.as_deref())?;
    Ok(0)
}

fn solve_report(
    eps: Complex64,
    seed_order: usize,
    k: &TorusEmbedding,
    rates: Option<SplittingRates>,
    run: KamRun,
) -> SolveReport {
    SolveReport {
        eps,
        seed_order,
        converged: run.converged,
        iterations: run.iterations,
        final_error: run.error_history.last().copied().unwrap_or(f64::NAN),
        error_history: run.error_history,
        mu_drift: run.mu_drift,
        torus_drift: run.torus_drift,
        rates,
        reports: run.reports,
        torus: torus_report(k),
    }
}

fn continuation(a: ContinueArgs) -> Result<i32, String> {
    let cfg = a.common.load()?;
    let fam = build_family(&cfg.model)?;
    if a.eps_max == 0.0 || a.step <= 0.0 || a.min_step <= 0.0 {
        return Err("continue needs eps-max != 0 and positive step sizes".into());
    }
    let sign = a.eps_max.signum();
    let t0 = Instant::now();

    let mut k = TorusEmbedding::flat(&fam, cfg.solver.n_modes, cfg.solver.rho0);
    let mut splitting = coordinate_seed(&fam, cfg.solver.n_modes).map_err(|e| e.to_string())?;
    let mut points = Vec::new();
    let mut reached = 0.0f64;
    let mut step = a.step;
    let mut breakdown = false;

    while reached.abs() < a.eps_max.abs() {
        let trial = if (reached + sign * step).abs() >= a.eps_max.abs() {
            a.eps_max
        } else {
            reached + sign * step
        };
        let f = fam.with_eps(Complex64::new(trial, 0.0));
        match run_kam_iteration(&f, &k, &splitting, &cfg.solver) {
            Ok((k_next, s_next, run)) => {
                points.push(ContinuationPoint {
                    eps: trial,
                    mu: k_next.mu,
                    final_error: run.error_history.last().copied().unwrap_or(f64::NAN),
                    iterations: run.iterations,
                });
                k = k_next;
                splitting = s_next;
                reached = trial;
            }
            Err(e) => {
                if RejectionReason::classify(&e).is_none() {
                    return Err(e.to_string());
                }
                step *= 0.5;
                if step < a.min_step {
                    breakdown = true;
                    eprintln!("kam: continue: breakdown at eps = {reached} ({e})");
                    break;
                }
            }
        }
    }
    eprintln!(
        "kam: continue: reached eps = {reached} in {} points ({:.2}s)",
        points.len(),
        t0.elapsed().as_secs_f64()
    );
    let any_progress = !points.is_empty();
    let doc = Document {
        schema: "kam/continue/1",
        config: cfg,
        result: ContinuationReport {
            target: a.eps_max,
            reached,
            breakdown,
            points,
        },
    };
    emit(&doc, a.out.as_deref())?;
    Ok(if any_progress { 0 } else { 2 })
}

fn lindstedt(a: LindstedtArgs) -> Result<i32, String> {
    let cfg = a.common.load()?;
    let fam = build_family(&cfg.model)?;
    let order = a.order_n.unwrap_or(cfg.domain.order_n);
    let eps_list: Vec<Complex64> = match &a.eps_list {
        Some(text) => text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map(|x| Complex64::new(x, 0.0))
                    .map_err(|e| format!("bad eps value {s:?}: {e}"))
            })
            .collect::<Result<_, _>>()?,
        None => (0..7)
            .map(|i| Complex64::new(1e-3 * 100f64.powf(i as f64 / 6.0), 0.0))
            .collect(),
    };
    let t0 = Instant::now();
    let k0 = TorusEmbedding::flat(&fam, cfg.solver.n_modes, cfg.solver.rho0);
    let mut expansion = match lindstedt_torus_expansion(&fam, &k0, order) {
        Ok(e) => e,
        Err(e) => return reject_or_fail(e, Complex64::new(0.0, 0.0), &cfg, a.out.as_deref()),
    };
    match lindstedt_bundle_expansion(&fam, &expansion, order) {
        Ok(b) => expansion.bundle = Some(b),
        Err(e) => eprintln!("kam: lindstedt: bundle expansion unavailable ({e})"),
    }
    let table = expansion
        .residual_table(&fam, &eps_list, 0.5 * cfg.solver.rho0)
        .map_err(|e| e.to_string())?;
    eprintln!(
        "kam: lindstedt: order {order} expansion, worst order residual {:.3e} ({:.2}s)",
        expansion
            .order_residuals
            .iter()
            .cloned()
            .fold(0.0f64, f64::max),
        t0.elapsed().as_secs_f64()
    );
    let doc = Document {
        schema: "kam/lindstedt/1",
        config: cfg,
        result: LindstedtReport {
            order_n: order,
            expansion,
            residual_table: table
                .into_iter()
                .map(|(eps, residual)| ResidualRow { eps, residual })
                .collect(),
        },
    };
    emit(&doc, a.out.as_deref())?;
    Ok(0)
}

fn domain(a: DomainArgs) -> Result<i32, String> {
    let mut cfg = a.common.load()?;
    let fam = build_family(&cfg.model)?;
    if let Some(v) = a.r0 {
        cfg.domain.r0 = v;
    }
    if let Some(v) = a.grid {
        cfg.domain.grid = v;
    }
    if let Some(v) = a.order_n {
        cfg.domain.order_n = v;
    }
    if let Some(v) = a.a_threshold {
        cfg.domain.a_threshold = v;
    }
    let scan_solver = SolverConfig {
        n_modes: cfg.domain.n_modes,
        tol: cfg.domain.tol,
        ..cfg.solver.clone()
    };
    let t0 = Instant::now();
    let k0 = TorusEmbedding::flat(&fam, cfg.domain.n_modes, scan_solver.rho0);
    let mut expansion =
        lindstedt_torus_expansion(&fam, &k0, cfg.domain.order_n).map_err(|e| e.to_string())?;
    match lindstedt_bundle_expansion(&fam, &expansion, cfg.domain.order_n) {
        Ok(b) => expansion.bundle = Some(b),
        Err(e) => eprintln!("kam: domain: bundle expansion unavailable ({e})"),
    }
    let scan: DomainScan =
        scan_analyticity_domain(&fam, &expansion, &cfg.domain, &cfg.diophantine, &scan_solver)
            .map_err(|e| e.to_string())?;
    let mut csv = Vec::new();
    write_scan_csv(&scan, &mut csv).map_err(|e| e.to_string())?;
    fs::write(&a.out, &csv).map_err(|e| format!("cannot write {}: {e}", a.out.display()))?;
    eprintln!(
        "kam: domain: {} samples, {} accepted, {} rejected ({:.1}s)",
        scan.samples.len(),
        scan.accepted_count,
        scan.rejected_count,
        t0.elapsed().as_secs_f64()
    );
    if let Some(json_path) = &a.json {
        let doc = Document {
            schema: "kam/domain/1",
            config: cfg,
            result: scan,
        };
        emit(&doc, Some(json_path))?;
    }
    Ok(0)
}

fn rates(a: RatesArgs) -> Result<i32, String> {
    let cfg = a.common.load()?;
    let fam = build_family(&cfg.model)?;
    let eps = Complex64::new(a.eps, a.eps_im);
    let f = fam.with_eps(eps);
    let t0 = Instant::now();
    let (seed, splitting) = match build_seed(&fam, eps, a.seed_order, &cfg.solver) {
        Ok(pair) => pair,
        Err(e) => return reject_or_fail(e, eps, &cfg, a.out.as_deref()),
    };
    let (k, s, run) = match run_kam_iteration(&f, &seed, &splitting, &cfg.solver) {
        Ok(triple) => triple,
        Err(e) => return reject_or_fail(e, eps, &cfg, a.out.as_deref()),
    };
    let rates = s
        .rates
        .ok_or_else(|| "converged splitting carries no rate estimates".to_string())?;
    let f_final = f.with_mu(k.mu);
    let result = RatesReport {
        eps,
        lambda: f.lambda(),
        rates,
        ordering_ok: rates.ordering_ok(),
        center_brackets_lambda: rates.center_brackets(f.lambda().norm(), cfg.solver.eta),
        strip_margin: strip_margin(&f_final, &k),
        final_error: run.error_history.last().copied().unwrap_or(f64::NAN),
    };
    eprintln!(
        "kam: rates: l- {:.6}, l+ {:.6}, ordering {} ({:.2}s)",
        rates.lambda_minus,
        rates.lambda_plus,
        result.ordering_ok,
        t0.elapsed().as_secs_f64()
    );
    let doc = Document {
        schema: "kam/rates/1",
        config: cfg,
        result,
    };
    emit(&doc, a.out.as_deref())?;
    Ok(0)
}
