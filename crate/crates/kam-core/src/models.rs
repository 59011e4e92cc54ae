//! Concrete conformally symplectic map families.
//!
//! The benchmark is a coupled dissipative standard-whisker map on
//! T × R × R × R, built as f = S_{λ,μ} ∘ T_κ ∘ K_ε from three exact pieces:
//!
//! ```text
//!     kick      K_ε: (x,y,u,v) ↦ (x, y + ε∂_xV(x,u), u, v + ε∂_uV(x,u)),
//!               V(x,u) = cos(2πx)(a0 + a1 u),
//!     shear     T_κ: (x,y,u,v) ↦ (x+y, y, κu, κ^{-1}v),
//!     scaling   S_{λ,μ}: (x,y,u,v) ↦ (x, λy+μ, u, λv).
//! ```
//!
//! K_ε is the exact time-ε shear of the Hamiltonian V (symplectic by
//! construction, not approximately), T_κ is symplectic, and S_{λ,μ} scales
//! the form by λ, so f satisfies Df^T J_{f(x)} Df = λ J_x identically in all
//! (complex) arguments. The pairs are (x,y) and (u,v), J the standard block
//! form. At ε = 0 the map is an uncoupled product: a rotation-plus-drift on
//! the (x,y) cylinder with the exactly invariant torus K0(θ) = (θ,ω,0,0) at
//! μ0 = ω(1−λ), and a linear hyperbolic factor diag(κ, λ/κ) on (u,v). The
//! coordinate planes span{e_v}, span{e_x,e_y}, span{e_u} then form an exactly
//! invariant stable/center/unstable splitting with rates λ/κ, {λ,1}, κ.
//!
//! The degenerate two-dimensional family (no hyperbolic factor) is the
//! classical dissipative standard map and shares all center-direction
//! structure; it serves as the whisker-free sanity case.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::config::ModelConfig;
use crate::error::{CoreError, Result};
use crate::fourier::FourierSeries;

/// Arithmetic the map formulas are written against, so the same code path
/// evaluates on complex points and on truncated ε-power-series (used by the
/// perturbative expansions). Methods take references; implementors may hold
/// heap data.
pub(crate) trait RingElem: Clone {
    fn from_f64(v: f64) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn scale(&self, v: f64) -> Self;
    fn sin2pi(&self) -> Self;
    fn cos2pi(&self) -> Self;
}

impl RingElem for Complex64 {
    fn from_f64(v: f64) -> Self {
        Complex64::new(v, 0.0)
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn scale(&self, v: f64) -> Self {
        self * v
    }
    fn sin2pi(&self) -> Self {
        (self * 2.0 * PI).sin()
    }
    fn cos2pi(&self) -> Self {
        (self * 2.0 * PI).cos()
    }
}

/// Shared constants of the map formulas.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MapConstants {
    pub kappa: f64,
    pub a0: f64,
    pub a1: f64,
    /// When false the v-component of the kick is dropped, which destroys
    /// conformality at order ε. Only used to validate the checker.
    pub coupled_kick: bool,
}

/// f = S_{λ,μ} ∘ T_κ ∘ K_ε on (x, y, u, v), written once for any scalar.
pub(crate) fn standard_whisker_map<T: RingElem>(
    p: &[T; 4],
    mu: &T,
    eps: &T,
    lambda: &T,
    c: &MapConstants,
) -> [T; 4] {
    let [x, y, u, v] = p;
    let pot = u.scale(c.a1).add(&T::from_f64(c.a0));
    // y after the kick: G = y − 2πε sin(2πx)(a0 + a1 u)
    let g = y.sub(&eps.mul(&x.sin2pi()).mul(&pot).scale(2.0 * PI));
    let v_kick = if c.coupled_kick {
        v.add(&eps.mul(&x.cos2pi()).scale(c.a1))
    } else {
        v.clone()
    };
    [
        x.add(&g),
        lambda.mul(&g).add(mu),
        u.scale(c.kappa),
        lambda.mul(&v_kick).scale(1.0 / c.kappa),
    ]
}

/// The dissipative standard map on (x, y); the center rows of the above.
pub(crate) fn standard_map_2d<T: RingElem>(
    p: &[T; 2],
    mu: &T,
    eps: &T,
    lambda: &T,
    c: &MapConstants,
) -> [T; 2] {
    let [x, y] = p;
    let g = y.sub(&eps.mul(&x.sin2pi()).scale(2.0 * PI * c.a0));
    [x.add(&g), lambda.mul(&g).add(mu)]
}

/// Closed-form Df of `standard_whisker_map`, row major, same generic scalar.
pub(crate) fn standard_whisker_jacobian<T: RingElem>(
    p: &[T; 4],
    eps: &T,
    lambda: &T,
    c: &MapConstants,
) -> [[T; 4]; 4] {
    let [x, _y, u, _v] = p;
    let zero = T::from_f64(0.0);
    let one = T::from_f64(1.0);
    let two_pi = 2.0 * PI;
    let sin = x.sin2pi();
    let cos = x.cos2pi();
    let pot = u.scale(c.a1).add(&T::from_f64(c.a0));
    // G_x = −(2π)²ε cos(2πx)(a0 + a1u), G_u = −2πε a1 sin(2πx).
    let gx = eps.mul(&cos).mul(&pot).scale(-two_pi * two_pi);
    let gu = eps.mul(&sin).scale(-two_pi * c.a1);
    let vx = if c.coupled_kick {
        lambda.mul(eps).mul(&sin).scale(-two_pi * c.a1 / c.kappa)
    } else {
        zero.clone()
    };
    [
        [one.add(&gx), one.clone(), gu.clone(), zero.clone()],
        [lambda.mul(&gx), lambda.clone(), lambda.mul(&gu), zero.clone()],
        [zero.clone(), zero.clone(), T::from_f64(c.kappa), zero.clone()],
        [vx, zero.clone(), zero, lambda.scale(1.0 / c.kappa)],
    ]
}

/// Closed-form Df of `standard_map_2d`, row major.
pub(crate) fn standard_2d_jacobian<T: RingElem>(
    p: &[T; 2],
    eps: &T,
    lambda: &T,
    c: &MapConstants,
) -> [[T; 2]; 2] {
    let [x, _y] = p;
    let two_pi = 2.0 * PI;
    let gx = eps.mul(&x.cos2pi()).scale(-two_pi * two_pi * c.a0);
    [
        [T::from_f64(1.0).add(&gx), T::from_f64(1.0)],
        [lambda.mul(&gx), lambda.clone()],
    ]
}

/// Which family of formulas a [`ConformalMapFamily`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    /// Coupled standard-whisker map on T × R^3.
    Standard4d,
    /// Dissipative standard map on T × R (no whiskers).
    Standard2d,
    /// Standard4d with the v-kick omitted; intentionally non-conformal at
    /// order ε, kept as a foil for `check_conformal`.
    Standard4dBrokenKick,
}

/// Dependence of the conformal factor on the scan parameter ε.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaSpec {
    /// λ fixed, independent of ε (convergence studies).
    Fixed(f64),
    /// λ(ε) = 1 − ε (analyticity-domain scans through the symplectic point).
    OneMinusEps,
}

impl LambdaSpec {
    pub fn lambda_at(&self, eps: Complex64) -> Complex64 {
        match self {
            LambdaSpec::Fixed(l) => Complex64::new(*l, 0.0),
            LambdaSpec::OneMinusEps => Complex64::new(1.0, 0.0) - eps,
        }
    }
}

/// An instantiated map f_μ with all parameters bound, ready to evaluate on
/// complexified phase points. Immutable; cheap to clone for parameter sweeps.
#[derive(Debug, Clone)]
pub struct ConformalMapFamily {
    model: Model,
    constants: MapConstants,
    lambda_spec: LambdaSpec,
    pub eps: Complex64,
    pub mu: Complex64,
    /// Torus frequency; also the center of the y-window of the domain 𝒰.
    pub omega: f64,
    /// Polydisc radii of 𝒰: |Im x| ≤ rho_model, |y − ω| ≤ fiber_radius,
    /// |u|, |v| ≤ fiber_radius.
    pub rho_model: f64,
    pub fiber_radius: f64,
    /// Required distance to ∂𝒰; evaluation demands margin ≥ η/2.
    pub eta: f64,
    j: DMatrix<Complex64>,
}

fn standard_j(pairs: usize) -> DMatrix<Complex64> {
    let mut j = DMatrix::zeros(2 * pairs, 2 * pairs);
    for b in 0..pairs {
        j[(2 * b, 2 * b + 1)] = Complex64::new(1.0, 0.0);
        j[(2 * b + 1, 2 * b)] = Complex64::new(-1.0, 0.0);
    }
    j
}

impl ConformalMapFamily {
    fn build(model: Model, cfg: &ModelConfig, lambda_spec: LambdaSpec) -> Self {
        let pairs = if model == Model::Standard2d { 1 } else { 2 };
        let mut fam = Self {
            model,
            constants: MapConstants {
                kappa: cfg.kappa,
                a0: cfg.a0,
                a1: cfg.a1,
                coupled_kick: model != Model::Standard4dBrokenKick,
            },
            lambda_spec,
            eps: Complex64::new(0.0, 0.0),
            mu: Complex64::new(0.0, 0.0),
            omega: cfg.omega,
            rho_model: cfg.rho_model,
            fiber_radius: 0.5,
            eta: 0.05,
            j: standard_j(pairs),
        };
        fam.mu = Complex64::new(cfg.omega, 0.0)
            * (Complex64::new(1.0, 0.0) - fam.lambda_spec.lambda_at(fam.eps));
        fam
    }

    /// Benchmark family with λ fixed from the config.
    pub fn standard_4d(cfg: &ModelConfig) -> Self {
        Self::build(Model::Standard4d, cfg, LambdaSpec::Fixed(cfg.lambda))
    }

    pub fn standard_2d(cfg: &ModelConfig) -> Self {
        Self::build(Model::Standard2d, cfg, LambdaSpec::Fixed(cfg.lambda))
    }

    /// Scan family: λ(ε) = 1 − ε, symplectic at ε = 0.
    pub fn standard_4d_scan(cfg: &ModelConfig) -> Self {
        Self::build(Model::Standard4d, cfg, LambdaSpec::OneMinusEps)
    }

    /// Checker foil; see [`Model::Standard4dBrokenKick`].
    pub fn broken_kick(cfg: &ModelConfig) -> Self {
        Self::build(Model::Standard4dBrokenKick, cfg, LambdaSpec::Fixed(cfg.lambda))
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn with_eps(&self, eps: Complex64) -> Self {
        let mut fam = self.clone();
        fam.eps = eps;
        fam
    }

    pub fn with_mu(&self, mu: Complex64) -> Self {
        let mut fam = self.clone();
        fam.mu = mu;
        fam
    }

    pub fn lambda_spec(&self) -> LambdaSpec {
        self.lambda_spec
    }

    pub fn lambda(&self) -> Complex64 {
        self.lambda_spec.lambda_at(self.eps)
    }

    pub fn phase_dim(&self) -> usize {
        self.j.nrows()
    }

    pub fn torus_dim(&self) -> usize {
        1
    }

    /// (d_s, d_c, d_u) of the ε = 0 invariant coordinate splitting.
    pub fn splitting_dims(&self) -> (usize, usize, usize) {
        if self.model == Model::Standard2d {
            (0, 2, 0)
        } else {
            (1, 2, 1)
        }
    }

    /// True when the map sends real points to real points.
    pub fn is_real(&self) -> bool {
        self.eps.im == 0.0 && self.lambda().im == 0.0 && self.mu.im == 0.0
    }

    pub fn j_matrix(&self) -> &DMatrix<Complex64> {
        &self.j
    }

    pub(crate) fn constants(&self) -> &MapConstants {
        &self.constants
    }

    /// Distance from `point` to the boundary of 𝒰 (negative when outside).
    pub fn domain_margin(&self, point: &DVector<Complex64>) -> f64 {
        let mut margin = self.rho_model - point[0].im.abs();
        let y_off = (point[1] - Complex64::new(self.omega, 0.0)).norm();
        margin = margin.min(self.fiber_radius - y_off);
        for i in 2..point.len() {
            margin = margin.min(self.fiber_radius - point[i].norm());
        }
        margin
    }

    fn require_in_domain(&self, point: &DVector<Complex64>) -> Result<()> {
        if point.len() != self.phase_dim() {
            return Err(CoreError::DimensionMismatch(format!(
                "point has dimension {}, map expects {}",
                point.len(),
                self.phase_dim()
            )));
        }
        let margin = self.domain_margin(point);
        if margin < 0.5 * self.eta {
            return Err(CoreError::DomainMargin {
                margin,
                detail: format!("point {:?} too close to the boundary of U", point.as_slice()),
            });
        }
        Ok(())
    }

    pub fn evaluate(&self, point: &DVector<Complex64>) -> Result<DVector<Complex64>> {
        self.require_in_domain(point)?;
        let lambda = self.lambda();
        let out = match self.model {
            Model::Standard2d => {
                let p = [point[0], point[1]];
                let q = standard_map_2d(&p, &self.mu, &self.eps, &lambda, &self.constants);
                DVector::from_column_slice(&q)
            }
            _ => {
                let p = [point[0], point[1], point[2], point[3]];
                let q = standard_whisker_map(&p, &self.mu, &self.eps, &lambda, &self.constants);
                DVector::from_column_slice(&q)
            }
        };
        Ok(out)
    }

    /// Closed-form Df at `point`; exact, no differencing.
    pub fn jacobian(&self, point: &DVector<Complex64>) -> Result<DMatrix<Complex64>> {
        self.require_in_domain(point)?;
        let lambda = self.lambda();
        Ok(match self.model {
            Model::Standard2d => {
                let p = [point[0], point[1]];
                let rows = standard_2d_jacobian(&p, &self.eps, &lambda, &self.constants);
                DMatrix::from_fn(2, 2, |r, c| rows[r][c])
            }
            _ => {
                let p = [point[0], point[1], point[2], point[3]];
                let rows = standard_whisker_jacobian(&p, &self.eps, &lambda, &self.constants);
                DMatrix::from_fn(4, 4, |r, c| rows[r][c])
            }
        })
    }

    /// ∂f/∂μ; the drift enters only the scaled momentum, so this is the
    /// constant vector e_y.
    pub fn mu_derivative(&self, _point: &DVector<Complex64>) -> DVector<Complex64> {
        let mut d = DVector::zeros(self.phase_dim());
        d[1] = Complex64::new(1.0, 0.0);
        d
    }

    /// Max over random domain samples of ‖Df^T J Df − λJ‖_F. The identity is
    /// polynomial in all arguments, so any residual above rounding indicates
    /// a wrong map, not an unlucky sample.
    pub fn check_conformal(&self, sample_count: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lambda = self.lambda();
        let dim = self.phase_dim();
        let mut worst: f64 = 0.0;
        // Stay a full η inside 𝒰 so the jacobian calls cannot fault.
        let safe = self.fiber_radius - self.eta;
        for _ in 0..sample_count {
            let mut p = DVector::zeros(dim);
            p[0] = Complex64::new(
                rng.gen::<f64>(),
                (rng.gen::<f64>() - 0.5) * (self.rho_model - self.eta),
            );
            for i in 1..dim {
                let centre = if i == 1 { self.omega } else { 0.0 };
                let z = Complex64::new(
                    (rng.gen::<f64>() - 0.5) * safe,
                    (rng.gen::<f64>() - 0.5) * safe,
                );
                p[i] = Complex64::new(centre, 0.0) + z;
            }
            let df = self.jacobian(&p).expect("sample stays inside U");
            let resid = df.transpose() * &self.j * &df - &self.j * lambda;
            worst = worst.max(resid.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt());
        }
        worst
    }

    /// The exactly invariant ε = 0 torus K0(θ) = (θ, ω, 0, …) with drift
    /// μ0 = ω(1 − λ), as a series of the requested truncation.
    pub fn initial_torus(&self, n_modes: usize) -> (FourierSeries, Complex64) {
        let dim = self.phase_dim();
        let mut k = FourierSeries::zeros(dim, 1, n_modes);
        let mut c0 = DMatrix::zeros(dim, 1);
        c0[(1, 0)] = Complex64::new(self.omega, 0.0);
        k.set_coeff(0, &c0);
        // x-component θ + 0: the affine part θ is carried separately by the
        // embedding wrapper; here only the periodic part (zero) is stored.
        let mu0 = Complex64::new(self.omega, 0.0) * (Complex64::new(1.0, 0.0) - self.lambda());
        (k, mu0)
    }

    /// Basis matrix whose columns order the ε = 0 invariant coordinate
    /// splitting as [stable | center | unstable]: [e_v | e_x, e_y | e_u] in
    /// 4d, [e_x, e_y] in 2d.
    pub fn coordinate_splitting_basis(&self) -> DMatrix<Complex64> {
        let dim = self.phase_dim();
        let mut b = DMatrix::zeros(dim, dim);
        let one = Complex64::new(1.0, 0.0);
        if self.model == Model::Standard2d {
            b[(0, 0)] = one;
            b[(1, 1)] = one;
        } else {
            b[(3, 0)] = one; // e_v spans the stable line (rate λ/κ)
            b[(0, 1)] = one;
            b[(1, 2)] = one;
            b[(2, 3)] = one; // e_u spans the unstable line (rate κ)
        }
        b
    }
}
