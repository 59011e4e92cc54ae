//! Small-divisor constants and analyticity-domain membership.
//!
//! The cohomological equations solved throughout the crate divide Fourier
//! coefficients by e^{2πikω} − 1 (rotation alone) or e^{2πikω} − λ
//! (conformal factor λ). Their size is governed by
//!
//! ```text
//!     ν(ω; τ)    = sup_{0<|k|≤k_max} |e^{2πikω} − 1|^{-1} |k|^{-τ},
//!     ν(λ; ω, τ) = sup_{0<|k|≤k_max} |e^{2πikω} − λ|^{-1} |k|^{-τ}.
//! ```
//!
//! The sup is truncated at `k_max`, so the computed values are lower bounds
//! of the true constants; for |λ| bounded away from the unit circle the tail
//! contributes nothing (each divisor is at least dist(|λ|, 1)), and for λ on
//! the circle the caller raises `k_max`.
//!
//! Membership in the domain family used by the ε-scans is the inequality
//! ν(λ(ε); ω, τ) · |λ(ε) − 1|^{N+1} ≤ A: close to λ = 1 the divisor blow-up
//! must be beaten by a high-order zero of the gap factor.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::config::GOLDEN_OMEGA;
use crate::error::{CoreError, Result};

/// Divisors smaller than this are treated as exact resonances.
pub const RESONANCE_CUTOFF: f64 = 1e-15;

/// Rotation number together with the Diophantine exponent and the mode bound
/// for the truncated sup.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DiophantineParams {
    pub omega: f64,
    /// Exponent for ν(ω; τ).
    pub tau: f64,
    /// Exponent for ν(λ; ω, τ). A single τ serves both constants in
    /// practice; keeping them separate costs nothing.
    pub tau_lambda: f64,
    pub k_max: u64,
}

impl Default for DiophantineParams {
    fn default() -> Self {
        Self {
            omega: GOLDEN_OMEGA,
            tau: 1.2,
            tau_lambda: 1.2,
            k_max: 100_000,
        }
    }
}

impl DiophantineParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_max < 1 {
            return Err(CoreError::InvalidConfig("k_max must be at least 1".into()));
        }
        if self.tau <= 0.0 || self.tau_lambda <= 0.0 {
            return Err(CoreError::InvalidConfig("tau must be positive".into()));
        }
        Ok(())
    }
}

/// Parameters of the ε-domain family: accept when
/// ν(λ(ε)) · |λ(ε) − 1|^{N+1} ≤ A, scanning the disc |ε| ≤ r0.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DomainSetParams {
    pub threshold_a: f64,
    pub order_n: usize,
    pub r0: f64,
}

impl Default for DomainSetParams {
    fn default() -> Self {
        Self {
            threshold_a: 1.0,
            order_n: 6,
            r0: 0.1,
        }
    }
}

impl DomainSetParams {
    pub fn validate(&self) -> Result<()> {
        if self.threshold_a <= 0.0 || self.r0 <= 0.0 || self.order_n < 1 {
            return Err(CoreError::InvalidConfig(
                "domain set needs A > 0, r0 > 0, N >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// A truncated small-divisor sup together with the mode attaining it.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NuEstimate {
    pub value: f64,
    /// Mode index where the sup is attained; the interesting diagnostic when
    /// λ sits near some e^{2πikω}.
    pub k_at_max: i64,
    pub smallest_divisor: f64,
}

/// ν(ω; τ): worst small divisor of the pure rotation. Errors with the
/// offending k when ω is resonant to within the cutoff.
pub fn nu_omega(p: &DiophantineParams) -> Result<NuEstimate> {
    p.validate()?;
    let mut best = NuEstimate {
        value: 0.0,
        k_at_max: 0,
        smallest_divisor: f64::INFINITY,
    };
    // |e^{2πikω} − 1| = 2|sin(πkω)| and is even in k: positive k suffices.
    for k in 1..=p.k_max {
        let divisor = 2.0 * (PI * k as f64 * p.omega).sin().abs();
        if divisor < RESONANCE_CUTOFF {
            return Err(CoreError::Resonance {
                k: k as i64,
                divisor,
            });
        }
        let value = (k as f64).powf(-p.tau) / divisor;
        best.smallest_divisor = best.smallest_divisor.min(divisor);
        if value > best.value {
            best.value = value;
            best.k_at_max = k as i64;
        }
    }
    Ok(best)
}

/// ν(λ; ω, τ): worst divisor of e^{2πikω} − λ over 0 < |k| ≤ k_max. Finite
/// and at most 1/dist(|λ|, 1) whenever |λ| is off the unit circle.
pub fn nu_lambda(lambda: Complex64, p: &DiophantineParams) -> Result<NuEstimate> {
    p.validate()?;
    let mut best = NuEstimate {
        value: 0.0,
        k_at_max: 0,
        smallest_divisor: f64::INFINITY,
    };
    for kk in 1..=p.k_max {
        for k in [kk as i64, -(kk as i64)] {
            let phase = Complex64::from_polar(1.0, 2.0 * PI * k as f64 * p.omega);
            let divisor = (phase - lambda).norm();
            if divisor < RESONANCE_CUTOFF {
                return Err(CoreError::Resonance { k, divisor });
            }
            let value = (kk as f64).powf(-p.tau_lambda) / divisor;
            best.smallest_divisor = best.smallest_divisor.min(divisor);
            if value > best.value {
                best.value = value;
                best.k_at_max = k;
            }
        }
    }
    Ok(best)
}

/// One membership verdict with both factors of the defining inequality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainMembership {
    pub accepted: bool,
    /// True when λ(ε) = 1 to rounding and the symplectic-limit convention
    /// (accept whenever ω itself is Diophantine) was applied instead of the
    /// 0·∞ product.
    pub symplectic_limit: bool,
    pub nu: f64,
    pub gap_factor: f64,
    pub product: f64,
}

/// Membership of ε in the domain set: ν(λ(ε)) · |λ(ε) − 1|^{N+1} ≤ A.
pub fn in_domain_g(
    epsilon: Complex64,
    lambda_of_eps: impl Fn(Complex64) -> Complex64,
    dp: &DiophantineParams,
    sp: &DomainSetParams,
) -> Result<DomainMembership> {
    sp.validate()?;
    if epsilon.norm() > sp.r0 * (1.0 + 1e-12) {
        return Err(CoreError::InvalidConfig(format!(
            "|eps| = {} exceeds scan radius r0 = {}",
            epsilon.norm(),
            sp.r0
        )));
    }
    let lambda = lambda_of_eps(epsilon);
    let gap = (lambda - Complex64::new(1.0, 0.0)).norm();
    if gap < RESONANCE_CUTOFF {
        // Symplectic limit: the inequality degenerates to 0·∞; accept iff the
        // rotation itself is Diophantine (nu_omega finite, i.e. no resonance).
        let nu = nu_omega(dp)?;
        return Ok(DomainMembership {
            accepted: true,
            symplectic_limit: true,
            nu: nu.value,
            gap_factor: 0.0,
            product: 0.0,
        });
    }
    let nu = nu_lambda(lambda, dp)?;
    let gap_factor = gap.powi(sp.order_n as i32 + 1);
    let product = nu.value * gap_factor;
    Ok(DomainMembership {
        accepted: product <= sp.threshold_a,
        symplectic_limit: false,
        nu: nu.value,
        gap_factor,
        product,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn golden_params(k_max: u64) -> DiophantineParams {
        DiophantineParams {
            omega: GOLDEN_OMEGA,
            tau: 1.2,
            tau_lambda: 1.2,
            k_max,
        }
    }

    #[test]
    fn golden_mean_sup_stabilizes_in_k_max() {
        let small = nu_omega(&golden_params(10_000)).unwrap();
        let large = nu_omega(&golden_params(100_000)).unwrap();
        assert!(small.value.is_finite() && small.value > 0.0);
        assert!(large.value >= small.value, "sup is nondecreasing in k_max");
        assert!(
            (large.value - small.value) / small.value < 0.05,
            "tail beyond 1e4 moves the golden-mean sup by < 5%"
        );
    }

    #[test]
    fn rational_rotation_is_resonant() {
        let p = DiophantineParams {
            omega: 0.5,
            ..golden_params(100)
        };
        match nu_omega(&p) {
            Err(CoreError::Resonance { k, .. }) => assert_eq!(k, 2),
            other => panic!("expected resonance at k = 2, got {other:?}"),
        }
    }

    #[test]
    fn nu_omega_nonincreasing_in_tau() {
        let lo = nu_omega(&golden_params(10_000)).unwrap();
        let hi = nu_omega(&DiophantineParams {
            tau: 2.0,
            ..golden_params(10_000)
        })
        .unwrap();
        assert!(hi.value <= lo.value);
    }

    #[test]
    fn contractive_lambda_is_bounded_by_distance_to_circle() {
        let p = DiophantineParams {
            tau_lambda: 1.0,
            ..golden_params(10_000)
        };
        let lambda = Complex64::new(0.5, 0.0);
        let nu = nu_lambda(lambda, &p).unwrap();
        assert!(nu.value <= 2.0 + 1e-12, "1/dist(0.5, 1) = 2 dominates");
        let k1_divisor = (Complex64::from_polar(1.0, 2.0 * PI * p.omega) - lambda).norm();
        assert!(nu.value >= 1.0 / k1_divisor - 1e-12, "k = 1 term is a lower bound");
    }

    #[test]
    fn unit_lambda_reduces_to_nu_omega() {
        let p = golden_params(5_000);
        let a = nu_omega(&p).unwrap();
        let b = nu_lambda(Complex64::new(1.0, 0.0), &p).unwrap();
        assert!((a.value - b.value).abs() / a.value < 1e-9);
        assert_eq!(a.k_at_max, b.k_at_max.abs());
    }

    #[test]
    fn near_circle_lambda_peaks_at_the_close_mode() {
        // λ a relative distance 1e-9 from e^{2πiω}: the k = 1 divisor is 1e-9,
        // far above the exact-resonance cutoff but dominating the sup.
        let p = golden_params(1_000);
        let lambda = Complex64::from_polar(1.0 + 1e-9, 2.0 * PI * p.omega);
        let nu = nu_lambda(lambda, &p).unwrap();
        assert_eq!(nu.k_at_max, 1);
        assert!(nu.value > 1e8 && nu.value < 2e9);
        assert!((nu.smallest_divisor - 1e-9).abs() < 1e-12);
    }

    #[test]
    fn domain_accepts_symplectic_limit() {
        let dp = golden_params(10_000);
        let sp = DomainSetParams::default();
        let m = in_domain_g(
            Complex64::new(0.0, 0.0),
            |e| Complex64::new(1.0, 0.0) - e,
            &dp,
            &sp,
        )
        .unwrap();
        assert!(m.accepted && m.symplectic_limit);
    }

    #[test]
    fn domain_accepts_small_real_dissipation() {
        // λ = 1 − ε: ν ≤ 1/ε while the gap factor is ε^{N+1}, so the product
        // is at most ε^N and the test passes comfortably at A = 1, N = 4.
        let dp = golden_params(10_000);
        let sp = DomainSetParams {
            threshold_a: 1.0,
            order_n: 4,
            r0: 0.1,
        };
        for &eps in &[1e-3, 3e-3, 1e-2] {
            let m = in_domain_g(
                Complex64::new(eps, 0.0),
                |e| Complex64::new(1.0, 0.0) - e,
                &dp,
                &sp,
            )
            .unwrap();
            assert!(m.accepted, "eps = {eps} must be accepted: {m:?}");
            assert!(m.product <= eps.powi(4) * 1.0001);
        }
    }

    #[test]
    fn domain_rejects_lambda_near_circle_resonance() {
        let dp = golden_params(10_000);
        let sp = DomainSetParams {
            threshold_a: 1.0,
            order_n: 4,
            r0: 10.0,
        };
        let target = Complex64::from_polar(1.0, 2.0 * PI * dp.omega) + Complex64::new(1e-8, 0.0);
        let m = in_domain_g(target, |e| e, &dp, &sp).unwrap();
        assert!(!m.accepted, "divisor blow-up at k = 1 must reject: {m:?}");
        assert!(m.nu > 1e7);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn off_circle_bound_independent_of_k_max(re in -0.85f64..0.85, im in -0.3f64..0.3, k_max in 10u64..2000) {
            let lambda = Complex64::new(re, im);
            prop_assume!(lambda.norm() < 0.9);
            let delta0 = 1.0 - lambda.norm();
            let p = DiophantineParams { k_max, tau_lambda: 1.3, ..golden_params(1) };
            let nu = nu_lambda(lambda, &p).unwrap();
            prop_assert!(nu.value <= 1.0 / delta0 + 1e-12);
        }

        #[test]
        fn domain_sets_nested_in_threshold(re in -0.05f64..0.05, im in -0.05f64..0.05, a in 1e-8f64..1.0, factor in 1.0f64..100.0) {
            let eps = Complex64::new(re, im);
            let dp = golden_params(2_000);
            let small = DomainSetParams { threshold_a: a, order_n: 6, r0: 0.1 };
            let large = DomainSetParams { threshold_a: a * factor, order_n: 6, r0: 0.1 };
            let lam = |e: Complex64| Complex64::new(1.0, 0.0) - e;
            let inner = in_domain_g(eps, lam, &dp, &small).unwrap();
            let outer = in_domain_g(eps, lam, &dp, &large).unwrap();
            prop_assert!(!inner.accepted || outer.accepted, "G(A) must sit inside G(A')");
        }
    }
}
