//! Quasi-Newton correction of approximately invariant tori and the full
//! iteration driver.
//!
//! The unknown is a pair (K, μ): an embedding of the torus and a drift that
//! compensates dissipation. One step linearizes f_μ∘K − K∘T_ω around the
//! current pair, splits the linearized equation along the invariant bundles,
//! and solves each part with the method it admits:
//!
//! * center: reduced to constant coefficients by the reducibility frame,
//!   then solved through cohomology equations and a 2d×2d solvability
//!   system that also determines the drift correction β;
//! * stable/unstable: contraction series summed directly, no small divisors
//!   and no loss of analyticity domain.
//!
//! The equation solved in the center is the quasi-Newton one: the term
//! ℰ_R·W^c is dropped, which preserves quadratic convergence because ℰ_R is
//! itself proportional to the invariance error. Each step re-closes the
//! splitting on the corrected torus, so hyperbolicity data never goes stale.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::cocycle::{
    close_splitting, estimate_rates, Cocycle, SplittingRates, TrichotomySplitting,
};
use crate::config::SolverConfig;
use crate::diophantine::RESONANCE_CUTOFF;
use crate::error::{CoreError, Result};
use crate::fourier::{FourierSeries, TAU};
use crate::models::ConformalMapFamily;
use crate::reducibility::ReducibilityFrame;

/// Embedding of a d = 1 torus. The stored series is the periodic part; the
/// x-component additionally carries the affine term θ, so the embedding is
/// degree one and homotopically a graph over the circle. The drift μ stored
/// here is authoritative: operations taking a family override its μ.
#[derive(Debug, Clone)]
pub struct TorusEmbedding {
    /// Periodic part, phase_dim × 1.
    pub periodic: FourierSeries,
    pub mu: Complex64,
    pub omega: f64,
    /// Analyticity radius the current iterate is measured at.
    pub rho: f64,
}

impl TorusEmbedding {
    /// The flat ε = 0 torus (θ, ω, 0, …) with its exact drift μ0 = ω(1−λ).
    pub fn flat(fam: &ConformalMapFamily, n_modes: usize, rho: f64) -> Self {
        let (periodic, mu) = fam.initial_torus(n_modes);
        Self {
            periodic,
            mu,
            omega: fam.omega,
            rho,
        }
    }

    pub fn phase_dim(&self) -> usize {
        self.periodic.rows()
    }

    pub fn n_modes(&self) -> usize {
        self.periodic.n_modes()
    }

    /// K(θ) including the affine term.
    pub fn eval(&self, theta: Complex64) -> DVector<Complex64> {
        let mut v = DVector::from_column_slice(self.periodic.eval(theta).column(0).as_slice());
        v[0] += theta;
        v
    }

    pub fn eval_real(&self, theta: f64) -> DVector<Complex64> {
        self.eval(Complex64::new(theta, 0.0))
    }

    /// DK(θ) = d/dθ periodic + e_x, phase_dim × 1.
    pub fn dk(&self) -> FourierSeries {
        let mut e = DMatrix::zeros(self.phase_dim(), 1);
        e[(0, 0)] = Complex64::new(1.0, 0.0);
        self.periodic
            .derivative()
            .add(&FourierSeries::constant(&e, self.n_modes()))
    }

    /// K∘T_σ as an embedding: the periodic part shifts and the x-component
    /// zero mode absorbs σ.
    pub fn translate(&self, sigma: f64) -> Self {
        let mut shifted = self.periodic.shift(sigma);
        let mut zero = shifted.coeff(0);
        zero[(0, 0)] += Complex64::new(sigma, 0.0);
        shifted.set_coeff(0, &zero);
        Self {
            periodic: shifted,
            mu: self.mu,
            omega: self.omega,
            rho: self.rho,
        }
    }
}

/// e = f_μ∘K − K∘T_ω as a periodic series; the affine parts cancel exactly.
/// Errors if the embedding leaves the family's domain on the sampling grid.
pub fn invariance_error(fam: &ConformalMapFamily, k: &TorusEmbedding) -> Result<FourierSeries> {
    let fam = fam.with_mu(k.mu);
    let dim = fam.phase_dim();
    let omega = k.omega;
    FourierSeries::try_from_fn(dim, 1, k.n_modes(), fam.is_real(), |theta| {
        let image = fam.evaluate(&k.eval_real(theta))?;
        let target = k.eval_real(theta + omega);
        let diff = image - target;
        Ok(DMatrix::from_column_slice(dim, 1, diff.as_slice()))
    })
}

/// The derivative cocycle γ(θ) = Df_μ(K(θ)) over the rotation.
pub fn map_cocycle(fam: &ConformalMapFamily, k: &TorusEmbedding) -> Result<Cocycle> {
    let fam = fam.with_mu(k.mu);
    let dim = fam.phase_dim();
    let generator = FourierSeries::try_from_fn(dim, dim, k.n_modes(), fam.is_real(), |theta| {
        fam.jacobian(&k.eval_real(theta))
    })?;
    Cocycle::new(generator, k.omega)
}

/// D_μf_μ∘K as a series (constant e_y for the shipped families, sampled
/// anyway so the solver does not bake that in).
pub fn mu_direction(fam: &ConformalMapFamily, k: &TorusEmbedding) -> Result<FourierSeries> {
    let fam = fam.with_mu(k.mu);
    let dim = fam.phase_dim();
    FourierSeries::try_from_fn(dim, 1, k.n_modes(), fam.is_real(), |theta| {
        let d = fam.mu_derivative(&k.eval_real(theta));
        Ok(DMatrix::from_column_slice(dim, 1, d.as_slice()))
    })
}

/// Conservative lower bound for the distance between the range of K on the
/// strip |Im θ| ≤ rho and the boundary of the family's domain: the margin on
/// the real circle minus the worst-case excursion of the series (plus rho
/// itself for the affine term).
pub fn strip_margin(fam: &ConformalMapFamily, k: &TorusEmbedding) -> f64 {
    let m = (4 * k.n_modes()).max(256);
    let mut margin = f64::INFINITY;
    for j in 0..m {
        let p = k.eval_real(j as f64 / m as f64);
        margin = margin.min(fam.domain_margin(&p));
    }
    let spread = k.periodic.norm_rho(k.rho) - k.periodic.norm_rho(0.0) + k.rho;
    margin - spread
}

/// Solves the cohomology equation w∘T_ω − λ·w = η mode-wise:
/// ŵ_k = η̂_k / (e^{2πikω} − λ). At λ = 1 the zero mode is an obstruction:
/// η must have zero average, and the returned solution is the zero-average
/// one. Divisors below the resonance cutoff abort.
pub fn solve_cohomology(
    eta: &FourierSeries,
    lambda: Complex64,
    omega: f64,
) -> Result<FourierSeries> {
    let n = eta.n_modes() as i64;
    let scale = 1.0 + eta.norm_rho(0.0);
    let mut w = FourierSeries::zeros(eta.rows(), eta.cols(), eta.n_modes());
    for k in -n..=n {
        let rot = Complex64::new(0.0, TAU * k as f64 * omega).exp();
        let divisor = rot - lambda;
        let coeff = eta.coeff(k);
        if divisor.norm() < RESONANCE_CUTOFF {
            let mass = coeff.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if k == 0 {
                if mass > 1e-12 * scale {
                    return Err(CoreError::NonzeroAverage { average: mass });
                }
                continue;
            }
            return Err(CoreError::Resonance {
                k,
                divisor: divisor.norm(),
            });
        }
        w.set_coeff(k, &(coeff / divisor));
    }
    if eta.is_real() && lambda.im == 0.0 {
        w.symmetrize();
    } else {
        w = w.into_complex();
    }
    Ok(w)
}

/// Output of the center solve: W^c in frame coordinates, the ambient
/// correction Δ^c = M·W^c, the drift correction β, and the solvability
/// system with its conditioning.
#[derive(Debug, Clone)]
pub struct CenterSolution {
    pub w: FourierSeries,
    pub delta: FourierSeries,
    pub beta: Complex64,
    pub twist: DMatrix<Complex64>,
    pub twist_inverse_norm: f64,
    /// Residual of the reduced equation [[Id,S],[0,λId]]W − W∘T_ω + ẽ + Ãβ.
    pub residual: f64,
}

/// Solves the center component of the linearized invariance equation in the
/// reducibility frame. W₁ is normalized to zero average (the free constant
/// is the motion along the torus itself).
pub fn solve_center_equation(
    e: &FourierSeries,
    frame: &ReducibilityFrame,
    projections: &[FourierSeries; 3],
    fam: &ConformalMapFamily,
    k: &TorusEmbedding,
    rho: f64,
) -> Result<CenterSolution> {
    let d = fam.torus_dim();
    if d != 1 {
        return Err(CoreError::InvalidConfig(
            "drift extraction implemented for one-dimensional tori".into(),
        ));
    }
    let lambda = fam.lambda();
    let omega = k.omega;
    let one = Complex64::new(1.0, 0.0);

    let pi_c_fwd = projections[1].shift(omega);
    let m_inv_fwd = frame.m_inv.shift(omega);
    let e_c = pi_c_fwd.product(e)?;
    let e_t = m_inv_fwd.product(&e_c)?;
    let a_dir = mu_direction(fam, k)?;
    let a_t = m_inv_fwd.product(&pi_c_fwd.product(&a_dir)?)?;
    let (e1, e2) = (e_t.block(0, 0, d, 1), e_t.block(d, 0, d, 1));
    let (a1, a2) = (a_t.block(0, 0, d, 1), a_t.block(d, 0, d, 1));
    let s = &frame.s;

    // (W_a)⁰, (W_b)⁰ from λw − w∘T_ω = −rhs ⟺ w∘T_ω − λw = rhs.
    let wa0 = solve_cohomology(&e2.zero_average(), lambda, omega)?;
    let wb0 = solve_cohomology(&a2.zero_average(), lambda, omega)?;

    // Averages close into the 2d×2d solvability system for (W̄₂, β).
    let s_bar = s.average()[(0, 0)];
    let swa = s.product(&wa0)?.average()[(0, 0)];
    let swb = s.product(&wb0)?.average()[(0, 0)];
    let mut sys = DMatrix::<Complex64>::zeros(2, 2);
    sys[(0, 0)] = s_bar;
    sys[(0, 1)] = swb + a1.average()[(0, 0)];
    sys[(1, 0)] = lambda - one;
    sys[(1, 1)] = a2.average()[(0, 0)];
    let rhs = DVector::from_column_slice(&[
        -swa - e1.average()[(0, 0)],
        -e2.average()[(0, 0)],
    ]);
    let det = sys[(0, 0)] * sys[(1, 1)] - sys[(0, 1)] * sys[(1, 0)];
    let scale = 1.0 + sys.iter().map(|z| z.norm_sqr()).sum::<f64>();
    if det.norm() < 1e-12 * scale {
        return Err(CoreError::TwistDegeneracy { det: det.norm() });
    }
    let inv = sys.clone().try_inverse().ok_or(CoreError::TwistDegeneracy {
        det: det.norm(),
    })?;
    let twist_inverse_norm = inv.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let sol = inv * rhs;
    let (w2_bar, mut beta) = (sol[0], sol[1]);
    if fam.is_real() && lambda.im == 0.0 {
        beta = Complex64::new(beta.re, 0.0);
    }

    let n_modes = e_t.n_modes();
    let w2 = wa0
        .add(&wb0.scale(beta))
        .add(&FourierSeries::constant_scalar(w2_bar, n_modes));
    // W₁ − W₁∘T_ω = −S·W₂ − ẽ₁ − Ã₁β; the average of the right side
    // vanishes by the solvability system, so the λ = 1 solve is admissible.
    let rhs1 = s
        .product(&w2)?
        .add(&e1)
        .add(&a1.scale(beta))
        .scale(-one);
    let w1 = solve_cohomology(&rhs1.scale(-one).zero_average(), one, omega)?;
    let w = w1.vstack(&w2);
    let delta = frame.m.product(&w)?;

    // Residual of the reduced equation (the quasi-Newton step solves this
    // exactly up to truncation; the ambient defect adds ℰ_R·W, second order).
    let top = w1.add(&s.product(&w2)?);
    let bottom = w2.scale(lambda);
    let residual = top
        .vstack(&bottom)
        .sub(&w.shift(omega))
        .add(&e_t)
        .add(&a_t.scale(beta))
        .norm_rho(rho);

    Ok(CenterSolution {
        w,
        delta,
        beta,
        twist: sys,
        twist_inverse_norm,
        residual,
    })
}

/// Sums a geometric whisker series: term_{k+1} = step·(term_k∘T_dir),
/// starting at `seed`, until the term norm at `rho` drops below `tol`.
fn whisker_series(
    step: &FourierSeries,
    seed: FourierSeries,
    dir: f64,
    rho: f64,
    tol: f64,
) -> Result<FourierSeries> {
    let mut sum = seed.clone();
    let mut term = seed;
    let mut prev = f64::INFINITY;
    let mut stall = 0usize;
    for _ in 0..500 {
        let n = term.norm_rho(rho);
        if n <= tol {
            return Ok(sum);
        }
        if n >= 0.97 * prev {
            stall += 1;
            if stall >= 12 {
                return Err(CoreError::HyperbolicityFailure(format!(
                    "whisker series stopped contracting at term norm {n:.3e}"
                )));
            }
        } else {
            stall = 0;
        }
        prev = n;
        term = step.product(&term.shift(dir))?;
        sum = sum.add(&term);
    }
    Err(CoreError::NonConvergence {
        residual: prev,
        iterations: 500,
    })
}

/// Solves γ·Δ^s + Π^s∘T_ω·D_μf·β − Δ^s∘T_ω = −e^s by summing the
/// contraction from the past. Returns the correction and the residual of
/// that equation at `rho`.
pub fn solve_stable_equation(
    c: &Cocycle,
    pi_s: &FourierSeries,
    e: &FourierSeries,
    mu_dir: &FourierSeries,
    beta: Complex64,
    rho: f64,
    tol: f64,
) -> Result<(FourierSeries, f64)> {
    let omega = c.omega();
    let pi_fwd = pi_s.shift(omega);
    let h = pi_fwd.product(&e.add(&mu_dir.scale(beta)))?;
    let gamma_s = pi_fwd.product(c.generator())?;
    let delta = whisker_series(
        &gamma_s.shift(-omega),
        h.shift(-omega),
        -omega,
        rho,
        0.25 * tol,
    )?;
    let residual = c
        .generator()
        .product(&delta)?
        .add(&h)
        .sub(&delta.shift(omega))
        .norm_rho(rho);
    Ok((delta, residual))
}

/// Solves the unstable component by summing the inverse-map contraction
/// from the future; same contract as the stable solve.
pub fn solve_unstable_equation(
    c: &Cocycle,
    pi_u: &FourierSeries,
    e: &FourierSeries,
    mu_dir: &FourierSeries,
    beta: Complex64,
    rho: f64,
    tol: f64,
) -> Result<(FourierSeries, f64)> {
    let omega = c.omega();
    let pi_fwd = pi_u.shift(omega);
    let h = pi_fwd.product(&e.add(&mu_dir.scale(beta)))?;
    let gamma_inv = c.generator().inverse_pointwise()?;
    let step = pi_u.product(&gamma_inv)?;
    let seed = step.product(&h)?;
    let delta = whisker_series(&step, seed, omega, rho, 0.25 * tol)?.scale(Complex64::new(-1.0, 0.0));
    let residual = c
        .generator()
        .product(&delta)?
        .add(&h)
        .sub(&delta.shift(omega))
        .norm_rho(rho);
    Ok((delta, residual))
}

/// Solution of the linearized invariance equation
/// γΔ − Δ∘T_ω + D_μf·β + e = 0 at fixed torus data.
#[derive(Debug, Clone)]
pub struct LinearizedSolution {
    pub delta: FourierSeries,
    pub beta: Complex64,
    pub center: CenterSolution,
    pub stable_residual: f64,
    pub unstable_residual: f64,
}

/// Splits e along the bundles and solves center (reduced equation), stable
/// and unstable (contraction series) parts. Exact up to truncation when the
/// splitting is invariant and the reduction exact; otherwise correct to
/// first order, which is all the quasi-Newton step needs.
pub fn solve_linearized(
    e: &FourierSeries,
    cocycle: &Cocycle,
    frame: &ReducibilityFrame,
    projections: &[FourierSeries; 3],
    dims: (usize, usize, usize),
    fam: &ConformalMapFamily,
    k: &TorusEmbedding,
    rho: f64,
    tol: f64,
) -> Result<LinearizedSolution> {
    let (ds, _dc, du) = dims;
    let center = solve_center_equation(e, frame, projections, fam, k, rho)?;
    let mu_dir = mu_direction(fam, k)?;
    let zero = || FourierSeries::zeros(fam.phase_dim(), 1, k.n_modes());
    let (delta_s, stable_residual) = if ds > 0 {
        solve_stable_equation(cocycle, &projections[0], e, &mu_dir, center.beta, rho, tol)?
    } else {
        (zero(), 0.0)
    };
    let (delta_u, unstable_residual) = if du > 0 {
        solve_unstable_equation(cocycle, &projections[2], e, &mu_dir, center.beta, rho, tol)?
    } else {
        (zero(), 0.0)
    };
    let delta = delta_s.add(&center.delta).add(&delta_u);
    let beta = center.beta;
    Ok(LinearizedSolution {
        delta,
        beta,
        center,
        stable_residual,
        unstable_residual,
    })
}

/// Condition data of one iteration: every hypothesis of the a-posteriori
/// theory that is checkable by a finite computation, plus the solver's own
/// health indicators. Emitted every step.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub iteration: usize,
    pub rho: f64,
    pub n_modes: usize,
    /// ‖e‖_ρ before the step.
    pub invariance_error: f64,
    /// ‖e‖_{ρ−δ} after the step.
    pub corrected_error: f64,
    /// Invariance defect of the re-closed splitting.
    pub splitting_error: f64,
    /// Graph-map distance the splitting moved this step.
    pub splitting_distance: f64,
    /// Solvability system 𝒮, row-major.
    pub twist: Vec<Complex64>,
    pub twist_inverse_norm: f64,
    pub dk_norm: f64,
    /// ‖(DK^T DK)^{-1}‖.
    pub normalization_norm: f64,
    pub frame_condition: f64,
    pub rates: Option<SplittingRates>,
    pub domain_margin: f64,
    pub mu: Complex64,
    pub beta: Complex64,
    pub correction_norm: f64,
    pub center_residual: f64,
    pub stable_residual: f64,
    pub unstable_residual: f64,
    /// Set when the corrected error misses the quadratic envelope.
    pub divergence_warning: bool,
}

/// One quasi-Newton step at radius k.rho, returning the corrected pair at
/// radius k.rho − delta together with the re-closed splitting and report.
pub fn newton_step(
    fam: &ConformalMapFamily,
    k: &TorusEmbedding,
    splitting: &TrichotomySplitting,
    delta: f64,
    cfg: &SolverConfig,
) -> Result<(TorusEmbedding, TrichotomySplitting, ConditionReport)> {
    let rho = k.rho;
    if !(delta > 0.0 && delta < rho) {
        return Err(CoreError::InvalidConfig(format!(
            "domain loss {delta} incompatible with radius {rho}"
        )));
    }
    let rho_next = rho - delta;

    let e = invariance_error(fam, k)?;
    let err = e.norm_rho(rho);
    let cocycle = map_cocycle(fam, k)?;
    let projections = splitting.ambient_projections()?;
    let frame = ReducibilityFrame::build(fam, k, splitting)?;
    let sol = solve_linearized(
        &e,
        &cocycle,
        &frame,
        &projections,
        splitting.dims,
        fam,
        k,
        rho,
        cfg.tol,
    )?;

    let k_new = TorusEmbedding {
        periodic: k.periodic.add(&sol.delta),
        mu: k.mu + sol.beta,
        omega: k.omega,
        rho: rho_next,
    };

    let e_new = invariance_error(fam, &k_new)?;
    let corrected_error = e_new.norm_rho(rho_next);
    let divergence_warning = corrected_error > err.powf(1.5).max(cfg.tol);

    let cocycle_new = map_cocycle(fam, &k_new)?;
    let (closed, log) = close_splitting(
        &cocycle_new,
        splitting,
        rho_next,
        cfg.tol_split,
        cfg.split_max_iter,
    )?;

    let report = ConditionReport {
        iteration: 0,
        rho: rho_next,
        n_modes: k.n_modes(),
        invariance_error: err,
        corrected_error,
        splitting_error: log.invariance_error,
        splitting_distance: log.dist_to_seed,
        twist: sol.center.twist.iter().cloned().collect(),
        twist_inverse_norm: sol.center.twist_inverse_norm,
        dk_norm: k_new.dk().norm_rho(rho_next),
        normalization_norm: frame.n.norm_rho(rho_next),
        frame_condition: frame.condition,
        rates: None,
        domain_margin: strip_margin(fam, &k_new),
        mu: k_new.mu,
        beta: sol.beta,
        correction_norm: sol.delta.norm_rho(rho_next),
        center_residual: sol.center.residual,
        stable_residual: sol.stable_residual,
        unstable_residual: sol.unstable_residual,
        divergence_warning,
    };
    Ok((k_new, closed, report))
}

/// Summary of a full solve.
#[derive(Debug, Clone, Serialize)]
pub struct KamRun {
    pub reports: Vec<ConditionReport>,
    /// ‖e‖ before each step, then the final error.
    pub error_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// |μ_final − μ_seed|.
    pub mu_drift: f64,
    /// ‖K_final − K_seed‖ at the final radius.
    pub torus_drift: f64,
}

/// Closing tolerance that keeps the splitting defect from polluting the
/// quadratic envelope: the step error picks up ℰ_h·e, so ℰ_h ≤ 0.1·max(e,
/// tol/e) keeps that term an order below max(e², tol). Floored at tol_split.
fn closing_target(err: f64, cfg: &SolverConfig) -> f64 {
    (0.1 * err.max(cfg.tol / err.max(cfg.tol))).max(cfg.tol_split)
}

/// Runs the quasi-Newton iteration with the geometric domain-loss schedule
/// δ_j = δ0/2^{j+2}, δ0 = (rho0 − rho_final)/2, so the total loss stays
/// within half the budget. Convergence means ‖e‖ ≤ cfg.tol; two consecutive
/// misses of the quadratic envelope abort as divergence. Intermediate
/// splittings are closed only to `closing_target`; the returned one is
/// re-closed to cfg.tol_split and carries rate estimates.
pub fn run_kam_iteration(
    fam: &ConformalMapFamily,
    k0: &TorusEmbedding,
    splitting0: &TrichotomySplitting,
    cfg: &SolverConfig,
) -> Result<(TorusEmbedding, TrichotomySplitting, KamRun)> {
    if cfg.rho_final <= 0.0 || cfg.rho0 <= cfg.rho_final {
        return Err(CoreError::InvalidConfig(format!(
            "radius schedule needs 0 < rho_final < rho0, got {} .. {}",
            cfg.rho_final, cfg.rho0
        )));
    }
    let mut k = k0.clone();
    k.rho = cfg.rho0;
    let mut err = invariance_error(fam, &k)?.norm_rho(k.rho);
    let cocycle = map_cocycle(fam, &k)?;
    let (mut splitting, _) = close_splitting(
        &cocycle,
        splitting0,
        cfg.rho0,
        closing_target(err, cfg),
        cfg.split_max_iter,
    )?;

    let delta0 = 0.5 * (cfg.rho0 - cfg.rho_final);
    let mut run = KamRun {
        reports: Vec::new(),
        error_history: Vec::new(),
        iterations: 0,
        converged: false,
        mu_drift: 0.0,
        torus_drift: 0.0,
    };
    run.error_history.push(err);
    let mut consecutive_warnings = 0usize;
    for j in 0..cfg.max_iter {
        if err <= cfg.tol {
            run.converged = true;
            break;
        }
        let delta_j = delta0 / 2f64.powi(j as i32 + 2);
        let cfg_step = SolverConfig {
            tol_split: closing_target(err, cfg),
            ..cfg.clone()
        };
        let (k_next, s_next, mut report) = newton_step(fam, &k, &splitting, delta_j, &cfg_step)?;
        report.iteration = j;
        err = report.corrected_error;
        run.error_history.push(err);
        consecutive_warnings = if report.divergence_warning {
            consecutive_warnings + 1
        } else {
            0
        };
        run.reports.push(report);
        run.iterations = j + 1;
        k = k_next;
        splitting = s_next;
        if consecutive_warnings >= 2 {
            return Err(CoreError::NonConvergence {
                residual: err,
                iterations: run.iterations,
            });
        }
    }
    if !run.converged && err <= cfg.tol {
        run.converged = true;
    }
    if !run.converged {
        return Err(CoreError::NonConvergence {
            residual: err,
            iterations: run.iterations,
        });
    }
    let cocycle = map_cocycle(fam, &k)?;
    let (mut closed, _) = close_splitting(
        &cocycle,
        &splitting,
        k.rho,
        cfg.tol_split,
        cfg.split_max_iter,
    )?;
    let rates = estimate_rates(&cocycle, &closed, cfg.horizon, cfg.theta_samples)?;
    closed.rates = Some(rates);
    if let Some(last) = run.reports.last_mut() {
        last.rates = Some(rates);
    }

    run.mu_drift = (k.mu - k0.mu).norm();
    run.torus_drift = k.periodic.sub(&k0.periodic).norm_rho(cfg.rho_final);
    Ok((k, closed, run))
}

/// Fixes the phase of `candidate` relative to `reference`: finds σ so that
/// the first block of ∫ M_ref^{-1}(θ)[K_cand∘T_σ(θ) − K_ref(θ)] dθ vanishes,
/// which pins the free translation along the torus. Secant iteration; the
/// derivative of the functional is ≈ 1 because M^{-1}DK has first block Id.
pub fn normalize_phase(
    candidate: &TorusEmbedding,
    reference: &TorusEmbedding,
    m_inv_ref: &FourierSeries,
) -> Result<(f64, TorusEmbedding)> {
    let functional = |sigma: f64| -> Result<f64> {
        let shifted = candidate.translate(sigma);
        let diff = shifted.periodic.sub(&reference.periodic);
        Ok(m_inv_ref.product(&diff)?.average()[(0, 0)].re)
    };
    let mut s0 = 0.0;
    let mut f0 = functional(s0)?;
    if f0.abs() <= 1e-13 {
        return Ok((0.0, candidate.clone()));
    }
    let mut s1 = -f0;
    let mut f1 = functional(s1)?;
    for _ in 0..60 {
        if f1.abs() <= 1e-13 {
            return Ok((s1, candidate.translate(s1)));
        }
        let denom = f1 - f0;
        if denom.abs() < 1e-300 {
            break;
        }
        let s2 = s1 - f1 * (s1 - s0) / denom;
        s0 = s1;
        f0 = f1;
        s1 = s2;
        f1 = functional(s1)?;
    }
    Err(CoreError::RootFinding(format!(
        "phase normalization stalled at σ = {s1}, residual {f1:.3e}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;

    fn setup(eps: f64, n_modes: usize) -> (ConformalMapFamily, TorusEmbedding, TrichotomySplitting) {
        let fam = ConformalMapFamily::standard_4d(&ModelConfig::default())
            .with_eps(Complex64::new(eps, 0.0));
        let k = TorusEmbedding::flat(&fam, n_modes, 0.005);
        let splitting = TrichotomySplitting::coordinate(
            &fam.coordinate_splitting_basis(),
            fam.splitting_dims(),
            n_modes,
        )
        .unwrap();
        (fam, k, splitting)
    }

    #[test]
    fn flat_torus_is_exactly_invariant_at_eps_zero() {
        let (fam, k, _) = setup(0.0, 16);
        let e = invariance_error(&fam, &k).unwrap();
        assert!(e.norm_rho(k.rho) < 1e-14);
        let fam2 = ConformalMapFamily::standard_2d(&ModelConfig::default());
        let k2 = TorusEmbedding::flat(&fam2, 16, 0.005);
        assert!(invariance_error(&fam2, &k2).unwrap().norm_rho(0.005) < 1e-14);
    }

    #[test]
    fn translates_of_the_flat_torus_stay_exact() {
        let (fam, k, _) = setup(0.0, 16);
        for sigma in [0.1, -0.37, 0.62] {
            let e = invariance_error(&fam, &k.translate(sigma)).unwrap();
            assert!(e.norm_rho(0.0) < 1e-14);
        }
    }

    #[test]
    fn invariance_error_scales_linearly_in_eps() {
        let norms: Vec<f64> = [1e-3, 1e-2]
            .iter()
            .map(|&eps| {
                let (fam, k, _) = setup(eps, 32);
                invariance_error(&fam, &k).unwrap().norm_rho(0.0)
            })
            .collect();
        let ratio = norms[1] / norms[0];
        assert!(
            (ratio - 10.0).abs() < 3.0,
            "error vs eps ratio {ratio} far from linear"
        );
    }

    #[test]
    fn cohomology_solves_single_modes_exactly() {
        let omega = 0.6180339887498949;
        for lambda in [
            Complex64::new(0.5, 0.0),
            Complex64::new(0.9, 0.0),
            Complex64::new(1.0, 0.0),
        ] {
            let mut eta = FourierSeries::zeros(1, 1, 8);
            let c = DMatrix::from_element(1, 1, Complex64::new(0.3, 0.0));
            eta.set_coeff(3, &c);
            eta.set_coeff(-3, &c);
            eta.symmetrize();
            let w = solve_cohomology(&eta, lambda, omega).unwrap();
            let resid = w.shift(omega).sub(&w.scale(lambda)).sub(&eta).norm_rho(0.0);
            assert!(resid < 1e-13, "λ={lambda}: residual {resid:.3e}");
            let expected = Complex64::new(0.3, 0.0)
                / (Complex64::new(0.0, TAU * 3.0 * omega).exp() - lambda);
            assert!((w.coeff(3)[(0, 0)] - expected).norm() < 1e-14);
        }
    }

    #[test]
    fn cohomology_constant_right_hand_side() {
        let eta = FourierSeries::constant_scalar(Complex64::new(2.0, 0.0), 4);
        let lambda = Complex64::new(0.5, 0.0);
        let w = solve_cohomology(&eta, lambda, 0.618).unwrap();
        // w̄ = η̄/(1−λ) = 4.
        assert!((w.average()[(0, 0)] - Complex64::new(4.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn cohomology_rejects_average_at_symplectic_limit() {
        let eta = FourierSeries::constant_scalar(Complex64::new(1.0, 0.0), 4);
        let out = solve_cohomology(&eta, Complex64::new(1.0, 0.0), 0.618);
        assert!(matches!(out, Err(CoreError::NonzeroAverage { .. })));
    }

    #[test]
    fn center_solve_moves_only_the_drift_for_constant_y_error() {
        // At ε = 0 a constant error c·e_y is compensated exactly by β = −c.
        let (fam, k, splitting) = setup(0.0, 16);
        let frame = ReducibilityFrame::build(&fam, &k, &splitting).unwrap();
        let projections = splitting.ambient_projections().unwrap();
        let c = 1e-3;
        let mut e = FourierSeries::zeros(4, 1, 16);
        let mut e0 = DMatrix::zeros(4, 1);
        e0[(1, 0)] = Complex64::new(c, 0.0);
        e.set_coeff(0, &e0);
        let sol = solve_center_equation(&e, &frame, &projections, &fam, &k, k.rho).unwrap();
        assert!((sol.beta - Complex64::new(-c, 0.0)).norm() < 1e-15);
        assert!(sol.delta.norm_rho(0.0) < 1e-15);
        let lambda = fam.lambda();
        assert!((sol.twist[(0, 0)] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!((sol.twist[(1, 0)] - (lambda - Complex64::new(1.0, 0.0))).norm() < 1e-12);
        assert!(sol.twist[(0, 1)].norm() < 1e-12);
        assert!((sol.twist[(1, 1)] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(sol.residual < 1e-14);
    }

    #[test]
    fn whisker_solves_match_constant_block_geometric_sums() {
        let (fam, k, splitting) = setup(0.0, 16);
        let cocycle = map_cocycle(&fam, &k).unwrap();
        let projections = splitting.ambient_projections().unwrap();
        let mu_dir = mu_direction(&fam, &k).unwrap();
        let c = 0.01;
        let (lambda, kappa) = (0.9, 3.0);

        let mut e = FourierSeries::zeros(4, 1, 16);
        let mut e0 = DMatrix::zeros(4, 1);
        e0[(3, 0)] = Complex64::new(c, 0.0);
        e.set_coeff(0, &e0);
        let (ds, rs) =
            solve_stable_equation(&cocycle, &projections[0], &e, &mu_dir, Complex64::default(), 0.0, 1e-13)
                .unwrap();
        let expected = c / (1.0 - lambda / kappa);
        assert!((ds.average()[(3, 0)] - Complex64::new(expected, 0.0)).norm() < 1e-12);
        assert!(rs < 1e-12, "stable residual {rs:.3e}");

        let mut eu = FourierSeries::zeros(4, 1, 16);
        let mut eu0 = DMatrix::zeros(4, 1);
        eu0[(2, 0)] = Complex64::new(c, 0.0);
        eu.set_coeff(0, &eu0);
        let (du, ru) =
            solve_unstable_equation(&cocycle, &projections[2], &eu, &mu_dir, Complex64::default(), 0.0, 1e-13)
                .unwrap();
        let expected_u = -c / (kappa - 1.0);
        assert!((du.average()[(2, 0)] - Complex64::new(expected_u, 0.0)).norm() < 1e-12);
        assert!(ru < 1e-12, "unstable residual {ru:.3e}");
    }

    #[test]
    fn whisker_residual_small_at_finite_eps() {
        let (fam, k, splitting) = setup(0.05, 64);
        let cocycle = map_cocycle(&fam, &k).unwrap();
        let (closed, _) = close_splitting(&cocycle, &splitting, 0.0, 1e-12, 100).unwrap();
        let projections = closed.ambient_projections().unwrap();
        let e = invariance_error(&fam, &k).unwrap();
        let mu_dir = mu_direction(&fam, &k).unwrap();
        let (_, rs) =
            solve_stable_equation(&cocycle, &projections[0], &e, &mu_dir, Complex64::default(), 0.0, 1e-12)
                .unwrap();
        let (_, ru) =
            solve_unstable_equation(&cocycle, &projections[2], &e, &mu_dir, Complex64::default(), 0.0, 1e-12)
                .unwrap();
        assert!(rs < 1e-11, "stable residual {rs:.3e}");
        assert!(ru < 1e-11, "unstable residual {ru:.3e}");
    }

    #[test]
    fn newton_step_fixes_nothing_on_an_exact_solution() {
        let (fam, k, splitting) = setup(0.0, 16);
        let cfg = SolverConfig::default();
        let (k1, _, report) = newton_step(&fam, &k, &splitting, 1e-3, &cfg).unwrap();
        assert!(report.correction_norm < 1e-12);
        assert!(report.beta.norm() < 1e-12);
        assert!(report.corrected_error < 1e-13);
        assert!((k1.mu - k.mu).norm() < 1e-12);
    }

    #[test]
    fn iteration_converges_quadratically_at_finite_eps() {
        let (fam, k, splitting) = setup(0.05, 128);
        let mut cfg = SolverConfig::default();
        cfg.n_modes = 128;
        cfg.theta_samples = 8;
        let (k_e, s_e, run) = run_kam_iteration(&fam, &k, &splitting, &cfg).unwrap();
        assert!(run.converged);
        assert!(run.iterations <= 6, "took {} iterations", run.iterations);
        let final_err = invariance_error(&fam, &k_e).unwrap().norm_rho(k_e.rho);
        assert!(final_err <= cfg.tol * 1.01);
        // Quadratic decay while above the floor.
        let h = &run.error_history;
        for w in h.windows(2) {
            if w[0] < 1e3 * cfg.tol {
                break;
            }
            assert!(
                w[1] <= 10.0 * w[0].powf(1.7),
                "non-quadratic step {} -> {}",
                w[0],
                w[1]
            );
        }
        assert!(s_e.rates.unwrap().ordering_ok());
        // Drift bound: |μ_e − μ_0| ≤ C·ℰ_0 with a modest constant.
        assert!(run.mu_drift <= 10.0 * h[0]);
    }

    #[test]
    fn stepping_commutes_with_translation() {
        let (fam, k, splitting) = setup(0.05, 64);
        let sigma = 0.3;
        let cfg = {
            let mut c = SolverConfig::default();
            c.theta_samples = 8;
            c
        };
        let (k1, _, r1) = newton_step(&fam, &k, &splitting, 1e-3, &cfg).unwrap();
        let (k2, _, r2) = newton_step(&fam, &k.translate(sigma), &splitting, 1e-3, &cfg).unwrap();
        assert!((r1.beta - r2.beta).norm() < 1e-11);
        let diff = k1.translate(sigma).periodic.sub(&k2.periodic).norm_rho(0.0);
        assert!(diff < 1e-11, "translated step differs by {diff:.3e}");
    }

    #[test]
    fn phase_normalization_recovers_synthetic_translations() {
        let (fam, k, splitting) = setup(0.05, 64);
        let cfg = {
            let mut c = SolverConfig::default();
            c.n_modes = 64;
            c.theta_samples = 8;
            c
        };
        let (k_e, s_e, _) = run_kam_iteration(&fam, &k, &splitting, &cfg).unwrap();
        let frame = ReducibilityFrame::build(&fam, &k_e, &s_e).unwrap();
        let cand = k_e.translate(0.3);
        let (sigma, normalized) = normalize_phase(&cand, &k_e, &frame.m_inv).unwrap();
        assert!((sigma + 0.3).abs() < 1e-10, "recovered σ = {sigma}");
        let diff = normalized.periodic.sub(&k_e.periodic).norm_rho(0.0);
        assert!(diff < 1e-10);
        let (sigma0, _) = normalize_phase(&k_e, &k_e, &frame.m_inv).unwrap();
        assert_eq!(sigma0, 0.0);
    }
}
