//! Run configuration: model parameters and solver knobs.
//!
//! The CLI deserializes these from TOML ({[model], [solver], [diophantine],
//! [domain]} sections); every field has a default so partial files work.
//! Library callers can build them directly.

use serde::{Deserialize, Serialize};

use crate::diophantine::DiophantineParams;

/// Golden mean frequency, the standard strongly irrational test rotation.
pub const GOLDEN_OMEGA: f64 = 0.618_033_988_749_894_9;

/// Which map family to instantiate and its parameters.
///
/// `dissipative_standard_4d` is the driven map on T × R^3 with potential
/// V(x, u) = cos(2πx)(a0 + a1 u), conformal factor λ on the (x, y) pair and
/// hyperbolic driving u ↦ κu; `dissipative_standard_2d` is the classical
/// dissipative standard map (no hyperbolic factor, a1 ignored).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: String,
    /// Conformal factor; |λ| < 1 contracts the symplectic form.
    pub lambda: f64,
    /// Hyperbolic driving rate (4d model only); must satisfy κ > 1, λκ > 1.
    pub kappa: f64,
    /// Potential strength at u = 0.
    pub a0: f64,
    /// Coupling of the drive into the potential.
    pub a1: f64,
    /// Rotation number of the torus being sought.
    pub omega: f64,
    /// Half-width of the analyticity strip the model is trusted on.
    pub rho_model: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: "dissipative_standard_4d".to_string(),
            lambda: 0.9,
            kappa: 3.0,
            a0: 1.0 / (2.0 * std::f64::consts::PI),
            a1: 0.3,
            omega: GOLDEN_OMEGA,
            rho_model: 0.3,
        }
    }
}

/// Quasi-Newton iteration knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Fourier truncation order of the unknowns.
    pub n_modes: usize,
    /// Stop when ‖defect‖_ρ falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial analyticity radius ρ0. The per-step domain losses
    /// δ_j = δ0/2^{j+2} with δ0 = (ρ0 − ρ_final)/2 sum to at most
    /// (ρ0 − ρ_final)/2, so the final radius stays above `rho_final`.
    /// Keep ρ0·n_modes small: coefficient rounding noise is amplified by
    /// e^{2πρN} in the weighted norm.
    pub rho0: f64,
    pub rho_final: f64,
    /// Residual target of the splitting refinement.
    pub tol_split: f64,
    pub split_max_iter: usize,
    /// Cocycle iteration horizon for rate estimation.
    pub horizon: usize,
    /// Number of θ samples when taking sups over the torus.
    pub theta_samples: usize,
    /// Uniformity margin η demanded of the splitting.
    pub eta: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_modes: 256,
            tol: 1e-11,
            max_iter: 20,
            rho0: 0.005,
            rho_final: 0.0025,
            tol_split: 1e-11,
            split_max_iter: 200,
            horizon: 60,
            theta_samples: 64,
            eta: 0.05,
        }
    }
}

/// Analyticity-domain scan knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainConfig {
    /// Radius of the complex ε disc being scanned.
    pub r0: f64,
    /// Grid points per side of the covering square.
    pub grid: usize,
    /// Order of the perturbative seed expansion.
    pub order_n: usize,
    /// Acceptance threshold A in ν(λ(ε))·|λ(ε) − 1|^{N+1} ≤ A.
    pub a_threshold: f64,
    /// Truncation order used during scan solves (cheaper than full runs).
    pub n_modes: usize,
    pub tol: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        Self {
            r0: 0.1,
            grid: 100,
            order_n: 6,
            a_threshold: 1.0,
            n_modes: 128,
            tol: 1e-11,
        }
    }
}

/// Everything a run needs, as read from one TOML file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub solver: SolverConfig,
    pub diophantine: DiophantineParams,
    pub domain: DomainConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_consistent() {
        let cfg = RunConfig::default();
        assert!(cfg.solver.rho_final < cfg.solver.rho0);
        assert!(cfg.model.lambda * cfg.model.kappa > 1.0);
        assert!(cfg.model.kappa > 1.0);
        // Rounding noise amplified by e^{2πρN} must stay far below tol.
        let amp = (2.0 * std::f64::consts::PI * cfg.solver.rho0 * cfg.solver.n_modes as f64).exp();
        assert!(amp * 1e-16 < 0.1 * cfg.solver.tol);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let text = r#"
            [model]
            lambda = 0.8

            [solver]
            n_modes = 64
        "#;
        let cfg: RunConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.model.lambda, 0.8);
        assert_eq!(cfg.model.kappa, 3.0);
        assert_eq!(cfg.solver.n_modes, 64);
        assert_eq!(cfg.domain.grid, 100);
    }
}
