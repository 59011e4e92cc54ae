//! Spectral computation, validation, and continuation of whiskered invariant
//! tori of conformally symplectic maps.
//!
//! A map f on a symplectic manifold is conformally symplectic when it scales
//! the symplectic form by a constant factor, f*Ω = λΩ. For such maps an
//! invariant torus with a prescribed rotation ω is found by solving the
//! invariance equation
//!
//! ```text
//!     f_μ ∘ K = K ∘ T_ω
//! ```
//!
//! jointly for the embedding K: T^d → M and a d-dimensional drift parameter μ
//! that compensates the dissipation. The torus is "whiskered": the tangent
//! dynamics splits into exponentially contracting and expanding directions
//! plus a 2d-dimensional center containing the rotation.
//!
//! The crate is organized bottom-up:
//!
//! * [`fourier`]: truncated Fourier series on T^d (d = 1 here) with weighted
//!   l1 analyticity norms, the algebra every other module computes in.
//! * [`diophantine`]: small-divisor constants ν(ω;τ), ν(λ;ω,τ) and the
//!   membership test for the complex-parameter validation domain.
//! * [`models`]: concrete conformally symplectic families (a coupled
//!   standard-map-with-whiskers benchmark and a 2D dissipative standard map).
//! * [`cocycle`]: transfer cocycles over the rotation, invariant-splitting
//!   graph maps, the closing iteration that makes an approximate splitting
//!   invariant, and growth-rate estimation.
//! * [`reducibility`]: the geometric frame in which the linearized center
//!   dynamics becomes constant upper-triangular, and its condition numbers.
//! * [`newton`]: one quasi-Newton correction (Δ, β) and the full iteration
//!   driver with domain-loss schedule, condition monitoring, and phase
//!   normalization for uniqueness checks.
//! * [`lindstedt`]: order-by-order ε-expansions of the torus, drift, and
//!   splitting, used both as asymptotics and as Newton seeds.
//! * [`domain`]: complex-ε scans combining Lindstedt seeds, a-posteriori
//!   Newton validation, and Diophantine-domain membership.
//!
//! All public values are immutable after construction and safe to share
//! across threads; operations return fresh values.

pub mod cocycle;
pub mod config;
pub mod diophantine;
pub mod domain;
mod error;
pub mod fourier;
mod jet;
pub mod lindstedt;
pub mod models;
pub mod newton;
pub mod reducibility;

pub use cocycle::{Cocycle, SplittingRates, TrichotomySplitting};
pub use config::{DomainConfig, ModelConfig, RunConfig, SolverConfig};
pub use diophantine::{DiophantineParams, DomainSetParams};
pub use domain::{DomainScan, RejectionReason, SampleRecord};
pub use error::{CoreError, Result};
pub use fourier::FourierSeries;
pub use lindstedt::{BundleExpansion, LindstedtExpansion};
pub use models::{ConformalMapFamily, Model};
pub use newton::{ConditionReport, KamRun, TorusEmbedding};
pub use reducibility::ReducibilityFrame;
