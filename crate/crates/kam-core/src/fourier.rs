//! Truncated Fourier series on the torus with analyticity-norm accounting.
//!
//! Every θ-dependent object in this crate (embeddings, defects, transfer
//! matrices, frames, corrections) is a [`FourierSeries`]: a matrix-valued
//! trigonometric polynomial
//!
//! ```text
//!     f(θ) = Σ_{|k| ≤ N}  ĉ_k e^{2πi k θ},      ĉ_k ∈ C^{rows×cols},
//! ```
//!
//! stored densely over k = −N..N. The size of an analytic function on the
//! complex strip |Im θ| ≤ ρ is measured by the weighted-l1 majorant
//!
//! ```text
//!     ‖f‖_ρ = Σ_k ‖ĉ_k‖_F e^{2πρ|k|},
//! ```
//!
//! an upper bound for the sup norm on the strip. Unlike the sup norm it is
//! computable from the coefficients alone and it is sub-multiplicative
//! (‖fg‖_ρ ≤ ‖f‖_ρ‖g‖_ρ, with the Frobenius norm on matrix coefficients), so
//! every a-posteriori inequality stated for sup norms remains valid verbatim.
//!
//! Products are evaluated on a zero-padded grid of at least 3N+1 points and
//! truncated back to N, which keeps all retained modes alias-free. The mass
//! beyond N is not representable; [`FourierSeries::tail_norm`] tracks the
//! mass in the upper half of the retained band as a resolution health check.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::cell::RefCell;
use std::f64::consts::PI;

use crate::error::{CoreError, Result};

pub const TAU: f64 = 2.0 * PI;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    PLANNER.with(|p| {
        let mut planner = p.borrow_mut();
        let fft = if inverse {
            planner.plan_fft_inverse(buf.len())
        } else {
            planner.plan_fft_forward(buf.len())
        };
        fft.process(buf);
    });
}

/// Smallest power-of-two grid length that resolves `min_len` samples.
pub fn fft_len(min_len: usize) -> usize {
    let mut m = 8;
    while m < min_len {
        m *= 2;
    }
    m
}

/// Matrix-valued trigonometric polynomial on T^1; see the module docs.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierSeries {
    dim_domain: usize,
    rows: usize,
    cols: usize,
    n_modes: usize,
    real: bool,
    /// Mode-major layout: block (k + N) holds ĉ_k row-major.
    coeffs: Vec<Complex64>,
}

impl FourierSeries {
    pub fn zeros(rows: usize, cols: usize, n_modes: usize) -> Self {
        Self {
            dim_domain: 1,
            rows,
            cols,
            n_modes,
            real: true,
            coeffs: vec![Complex64::new(0.0, 0.0); (2 * n_modes + 1) * rows * cols],
        }
    }

    /// Constant series (single zero mode) with the given truncation order.
    pub fn constant(value: &DMatrix<Complex64>, n_modes: usize) -> Self {
        let mut s = Self::zeros(value.nrows(), value.ncols(), n_modes);
        s.real = value.iter().all(|z| z.im == 0.0);
        s.set_coeff(0, value);
        s
    }

    pub fn constant_scalar(value: Complex64, n_modes: usize) -> Self {
        Self::constant(&DMatrix::from_element(1, 1, value), n_modes)
    }

    /// Builds a series mode by mode. `real` asserts conjugate symmetry and is
    /// enforced by symmetrization.
    pub fn from_mode_fn(
        rows: usize,
        cols: usize,
        n_modes: usize,
        real: bool,
        mut f: impl FnMut(i64) -> DMatrix<Complex64>,
    ) -> Self {
        let mut s = Self::zeros(rows, cols, n_modes);
        for k in -(n_modes as i64)..=(n_modes as i64) {
            let block = f(k);
            assert_eq!((block.nrows(), block.ncols()), (rows, cols));
            s.set_coeff(k, &block);
        }
        s.real = real;
        if real {
            s.symmetrize();
        }
        s
    }

    /// Recovers coefficients from samples on the uniform grid θ_j = j/M,
    /// M = `values.len()`. Requires M ≥ 2N+1 so the band is resolved.
    pub fn from_grid(values: &[DMatrix<Complex64>], n_modes: usize, real: bool) -> Self {
        let m = values.len();
        assert!(m >= 2 * n_modes + 1, "grid too coarse for requested band");
        let (rows, cols) = (values[0].nrows(), values[0].ncols());
        let mut s = Self::zeros(rows, cols, n_modes);
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        let scale = 1.0 / m as f64;
        for r in 0..rows {
            for c in 0..cols {
                for (j, v) in values.iter().enumerate() {
                    buf[j] = v[(r, c)];
                }
                fft_in_place(&mut buf, false);
                for k in -(n_modes as i64)..=(n_modes as i64) {
                    let src = k.rem_euclid(m as i64) as usize;
                    let i = s.idx(k, r, c);
                    s.coeffs[i] = buf[src] * scale;
                }
            }
        }
        s.real = real;
        if real {
            s.symmetrize();
        }
        s
    }

    /// Samples a function on a 3N-padded grid and projects onto the band.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        n_modes: usize,
        real: bool,
        f: impl Fn(f64) -> DMatrix<Complex64>,
    ) -> Self {
        Self::try_from_fn(rows, cols, n_modes, real, |theta| Ok(f(theta)))
            .expect("infallible sampling")
    }

    /// Fallible variant of `from_fn`; the first sampling error aborts.
    pub fn try_from_fn(
        rows: usize,
        cols: usize,
        n_modes: usize,
        real: bool,
        f: impl Fn(f64) -> Result<DMatrix<Complex64>>,
    ) -> Result<Self> {
        let m = fft_len(3 * n_modes + 1);
        let mut values = Vec::with_capacity(m);
        for j in 0..m {
            values.push(f(j as f64 / m as f64)?);
        }
        assert_eq!((values[0].nrows(), values[0].ncols()), (rows, cols));
        Ok(Self::from_grid(&values, n_modes, real))
    }

    pub fn dim_domain(&self) -> usize {
        self.dim_domain
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn n_modes(&self) -> usize {
        self.n_modes
    }
    pub fn is_real(&self) -> bool {
        self.real
    }

    fn idx(&self, k: i64, r: usize, c: usize) -> usize {
        debug_assert!(k.unsigned_abs() as usize <= self.n_modes);
        ((k + self.n_modes as i64) as usize * self.rows + r) * self.cols + c
    }

    pub fn coeff(&self, k: i64) -> DMatrix<Complex64> {
        if k.unsigned_abs() as usize > self.n_modes {
            return DMatrix::zeros(self.rows, self.cols);
        }
        DMatrix::from_fn(self.rows, self.cols, |r, c| self.coeffs[self.idx(k, r, c)])
    }

    pub fn set_coeff(&mut self, k: i64, block: &DMatrix<Complex64>) {
        for r in 0..self.rows {
            for c in 0..self.cols {
                let i = self.idx(k, r, c);
                self.coeffs[i] = block[(r, c)];
            }
        }
    }

    /// Imposes ĉ_{-k} = conj(ĉ_k) by averaging, and marks the series real.
    pub fn symmetrize(&mut self) {
        let n = self.n_modes as i64;
        for k in 0..=n {
            for r in 0..self.rows {
                for c in 0..self.cols {
                    let ip = self.idx(k, r, c);
                    let im = self.idx(-k, r, c);
                    let a = self.coeffs[ip];
                    let b = self.coeffs[im];
                    let half = 0.5 * (a + b.conj());
                    self.coeffs[ip] = half;
                    self.coeffs[im] = half.conj();
                }
            }
        }
        self.real = true;
    }

    /// Largest conjugate-symmetry defect; zero (to rounding) for series built
    /// from real data.
    pub fn reality_defect(&self) -> f64 {
        let n = self.n_modes as i64;
        let mut worst: f64 = 0.0;
        for k in 0..=n {
            for r in 0..self.rows {
                for c in 0..self.cols {
                    let d = self.coeffs[self.idx(k, r, c)]
                        - self.coeffs[self.idx(-k, r, c)].conj();
                    worst = worst.max(d.norm());
                }
            }
        }
        worst
    }

    /// Evaluation at a complex angle, Σ ĉ_k e^{2πikθ}.
    pub fn eval(&self, theta: Complex64) -> DMatrix<Complex64> {
        let w = (Complex64::new(0.0, TAU) * theta).exp();
        let winv = (Complex64::new(0.0, -TAU) * theta).exp();
        let mut out = self.coeff(0);
        let mut wp = Complex64::new(1.0, 0.0);
        let mut wm = Complex64::new(1.0, 0.0);
        for k in 1..=(self.n_modes as i64) {
            wp *= w;
            wm *= winv;
            for r in 0..self.rows {
                for c in 0..self.cols {
                    out[(r, c)] +=
                        self.coeffs[self.idx(k, r, c)] * wp + self.coeffs[self.idx(-k, r, c)] * wm;
                }
            }
        }
        out
    }

    pub fn eval_real(&self, theta: f64) -> DMatrix<Complex64> {
        self.eval(Complex64::new(theta, 0.0))
    }

    /// Values on the uniform grid θ_j = j/m via FFT. Requires m ≥ 2N+1.
    pub fn grid_values(&self, m: usize) -> Vec<DMatrix<Complex64>> {
        assert!(m >= 2 * self.n_modes + 1, "grid too coarse for this band");
        let mut out = vec![DMatrix::zeros(self.rows, self.cols); m];
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        for r in 0..self.rows {
            for c in 0..self.cols {
                buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
                for k in -(self.n_modes as i64)..=(self.n_modes as i64) {
                    buf[k.rem_euclid(m as i64) as usize] = self.coeffs[self.idx(k, r, c)];
                }
                fft_in_place(&mut buf, true);
                for (j, v) in buf.iter().enumerate() {
                    out[j][(r, c)] = *v;
                }
            }
        }
        out
    }

    /// Weighted-l1 analyticity majorant Σ_k ‖ĉ_k‖_F e^{2πρ|k|}.
    pub fn norm_rho(&self, rho: f64) -> f64 {
        assert!(rho >= 0.0, "analyticity radius must be nonnegative");
        let mut total = 0.0;
        for k in -(self.n_modes as i64)..=(self.n_modes as i64) {
            total += self.mode_frobenius(k) * (TAU * rho * k.unsigned_abs() as f64).exp();
        }
        total
    }

    /// Mass of the upper half of the band, Σ_{|k| > N/2} ‖ĉ_k‖_F e^{2πρ|k|}.
    /// Grows toward `norm_rho` when the truncation stops resolving f.
    pub fn tail_norm(&self, rho: f64) -> f64 {
        let cutoff = (self.n_modes / 2) as i64;
        let mut total = 0.0;
        for k in -(self.n_modes as i64)..=(self.n_modes as i64) {
            if k.abs() > cutoff {
                total += self.mode_frobenius(k) * (TAU * rho * k.unsigned_abs() as f64).exp();
            }
        }
        total
    }

    fn mode_frobenius(&self, k: i64) -> f64 {
        let base = (k + self.n_modes as i64) as usize * self.rows * self.cols;
        self.coeffs[base..base + self.rows * self.cols]
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Composition with the rotation: (shift f)(θ) = f(θ + ω), computed as
    /// ĉ_k ↦ ĉ_k e^{2πikω}. Exact at the truncation order; ‖·‖_ρ unchanged.
    pub fn shift(&self, omega: f64) -> Self {
        let mut out = self.clone();
        for k in -(self.n_modes as i64)..=(self.n_modes as i64) {
            let phase = Complex64::from_polar(1.0, TAU * omega * k as f64);
            for r in 0..self.rows {
                for c in 0..self.cols {
                    let i = self.idx(k, r, c);
                    out.coeffs[i] = self.coeffs[i] * phase;
                }
            }
        }
        out
    }

    /// d/dθ, mode-wise multiplication by 2πik.
    pub fn derivative(&self) -> Self {
        let mut out = self.clone();
        for k in -(self.n_modes as i64)..=(self.n_modes as i64) {
            let factor = Complex64::new(0.0, TAU * k as f64);
            for r in 0..self.rows {
                for c in 0..self.cols {
                    let i = self.idx(k, r, c);
                    out.coeffs[i] = self.coeffs[i] * factor;
                }
            }
        }
        out
    }

    /// The angle average, i.e. the zero mode.
    pub fn average(&self) -> DMatrix<Complex64> {
        self.coeff(0)
    }

    /// Removes the zero mode.
    pub fn zero_average(&self) -> Self {
        let mut out = self.clone();
        out.set_coeff(0, &DMatrix::zeros(self.rows, self.cols));
        out
    }

    /// Re-truncation (shrink drops modes; grow zero-pads).
    pub fn with_n_modes(&self, n_modes: usize) -> Self {
        let mut out = Self::zeros(self.rows, self.cols, n_modes);
        out.real = self.real;
        let keep = self.n_modes.min(n_modes) as i64;
        for k in -keep..=keep {
            for r in 0..self.rows {
                for c in 0..self.cols {
                    let i = out.idx(k, r, c);
                    out.coeffs[i] = self.coeffs[self.idx(k, r, c)];
                }
            }
        }
        out
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|z| *z *= factor);
        out.real = self.real && factor.im == 0.0;
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        self.lincomb(other, Complex64::new(1.0, 0.0))
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.lincomb(other, Complex64::new(-1.0, 0.0))
    }

    fn lincomb(&self, other: &Self, factor: Complex64) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let n = self.n_modes.max(other.n_modes);
        let mut out = self.with_n_modes(n);
        out.real = self.real && other.real && factor.im == 0.0;
        for k in -(other.n_modes as i64)..=(other.n_modes as i64) {
            for r in 0..self.rows {
                for c in 0..self.cols {
                    let i = out.idx(k, r, c);
                    out.coeffs[i] += factor * other.coeffs[other.idx(k, r, c)];
                }
            }
        }
        out
    }

    /// Pointwise matrix product computed on a 3N-padded grid and truncated
    /// back to max(N_f, N_g); retained modes are alias-free.
    pub fn product(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(CoreError::DimensionMismatch(format!(
                "product of {}x{} with {}x{} series",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let n = self.n_modes.max(other.n_modes);
        let m = fft_len(3 * n + 1);
        let a = self.grid_values(m);
        let b = other.grid_values(m);
        let prod: Vec<_> = a.iter().zip(b.iter()).map(|(x, y)| x * y).collect();
        Ok(Self::from_grid(&prod, n, self.real && other.real))
    }

    /// Pointwise transform of several series on a shared anti-aliased grid.
    /// The closure sees the grid node index and one matrix value per input.
    pub fn try_pointwise(
        inputs: &[&Self],
        n_out: usize,
        real: bool,
        mut f: impl FnMut(usize, &[DMatrix<Complex64>]) -> Result<DMatrix<Complex64>>,
    ) -> Result<Self> {
        assert!(!inputs.is_empty());
        let n_in = inputs.iter().map(|s| s.n_modes).max().unwrap();
        let m = fft_len(3 * n_out.max(n_in) + 1);
        let grids: Vec<_> = inputs.iter().map(|s| s.grid_values(m)).collect();
        let mut out = Vec::with_capacity(m);
        let mut slot: Vec<DMatrix<Complex64>> = Vec::with_capacity(inputs.len());
        for j in 0..m {
            slot.clear();
            for g in &grids {
                slot.push(g[j].clone());
            }
            out.push(f(j, &slot)?);
        }
        Ok(Self::from_grid(&out, n_out, real))
    }

    pub fn pointwise(
        inputs: &[&Self],
        n_out: usize,
        real: bool,
        mut f: impl FnMut(usize, &[DMatrix<Complex64>]) -> DMatrix<Complex64>,
    ) -> Self {
        Self::try_pointwise(inputs, n_out, real, |j, vals| Ok(f(j, vals)))
            .expect("infallible pointwise transform")
    }

    /// Pointwise matrix inverse f(θ)^{-1}, projected back onto the band.
    /// The inverse of a trigonometric polynomial is generally not one; the
    /// dropped tail is the caller's resolution risk (see `tail_norm`).
    pub fn inverse_pointwise(&self) -> Result<Self> {
        if self.rows != self.cols {
            return Err(CoreError::DimensionMismatch(format!(
                "inverse of a {}x{} series",
                self.rows, self.cols
            )));
        }
        Self::try_pointwise(&[self], self.n_modes, self.real, |_, vals| {
            vals[0].clone().try_inverse().ok_or(CoreError::SingularFrame {
                cond: f64::INFINITY,
            })
        })
    }

    /// Mode-wise transpose; equals pointwise transposition of f(θ).
    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows, self.n_modes);
        out.real = self.real;
        for k in -(self.n_modes as i64)..=(self.n_modes as i64) {
            for r in 0..self.rows {
                for c in 0..self.cols {
                    let i = out.idx(k, c, r);
                    out.coeffs[i] = self.coeffs[self.idx(k, r, c)];
                }
            }
        }
        out
    }

    /// Sub-matrix extraction, mode by mode.
    pub fn block(&self, r0: usize, c0: usize, nrows: usize, ncols: usize) -> Self {
        assert!(r0 + nrows <= self.rows && c0 + ncols <= self.cols);
        let mut out = Self::zeros(nrows, ncols, self.n_modes);
        out.real = self.real;
        for k in -(self.n_modes as i64)..=(self.n_modes as i64) {
            for r in 0..nrows {
                for c in 0..ncols {
                    let i = out.idx(k, r, c);
                    out.coeffs[i] = self.coeffs[self.idx(k, r0 + r, c0 + c)];
                }
            }
        }
        out
    }

    pub fn entry(&self, r: usize, c: usize) -> Self {
        self.block(r, c, 1, 1)
    }

    /// Column-wise concatenation [a | b].
    pub fn hstack(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows);
        let n = self.n_modes.max(other.n_modes);
        let a = self.with_n_modes(n);
        let b = other.with_n_modes(n);
        let mut out = Self::zeros(self.rows, self.cols + other.cols, n);
        out.real = self.real && other.real;
        for k in -(n as i64)..=(n as i64) {
            for r in 0..self.rows {
                for c in 0..self.cols {
                    let i = out.idx(k, r, c);
                    out.coeffs[i] = a.coeffs[a.idx(k, r, c)];
                }
                for c in 0..other.cols {
                    let i = out.idx(k, r, self.cols + c);
                    out.coeffs[i] = b.coeffs[b.idx(k, r, c)];
                }
            }
        }
        out
    }

    /// Row-wise concatenation [a; b].
    pub fn vstack(&self, other: &Self) -> Self {
        self.transpose().hstack(&other.transpose()).transpose()
    }

    /// Max Frobenius value over a sampling grid; a cheap sup-norm stand-in
    /// for diagnostics (the ‖·‖_ρ majorant is the norm used in estimates).
    pub fn sup_grid(&self, m: usize) -> f64 {
        self.grid_values(m.max(2 * self.n_modes + 1))
            .iter()
            .map(|v| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Declares the series complex-valued (no conjugate symmetry assumed).
    pub fn into_complex(mut self) -> Self {
        self.real = false;
        self
    }
}

/// Serialization schema: `{dim, rows, cols, n_modes, real_flag, coeffs}` with
/// `coeffs` a list of `[k, re, im]` triples, k-major then row-major entries.
/// f64 values survive the round trip bit-exactly (shortest-round-trip float
/// formatting on write, exact parse on read).
#[derive(Serialize, Deserialize)]
struct SeriesRepr {
    dim: usize,
    rows: usize,
    cols: usize,
    n_modes: usize,
    real_flag: bool,
    coeffs: Vec<(i64, f64, f64)>,
}

impl Serialize for FourierSeries {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        for k in -(self.n_modes as i64)..=(self.n_modes as i64) {
            for r in 0..self.rows {
                for c in 0..self.cols {
                    let z = self.coeffs[self.idx(k, r, c)];
                    coeffs.push((k, z.re, z.im));
                }
            }
        }
        SeriesRepr {
            dim: self.dim_domain,
            rows: self.rows,
            cols: self.cols,
            n_modes: self.n_modes,
            real_flag: self.real,
            coeffs,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FourierSeries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = SeriesRepr::deserialize(deserializer)?;
        if repr.dim != 1 {
            return Err(D::Error::custom("only torus dimension 1 is supported"));
        }
        let expected = (2 * repr.n_modes + 1) * repr.rows * repr.cols;
        if repr.coeffs.len() != expected {
            return Err(D::Error::custom(format!(
                "coefficient list length {} does not match {} modes of {}x{} blocks",
                repr.coeffs.len(),
                2 * repr.n_modes + 1,
                repr.rows,
                repr.cols
            )));
        }
        let mut s = FourierSeries::zeros(repr.rows, repr.cols, repr.n_modes);
        s.real = repr.real_flag;
        let mut it = repr.coeffs.iter();
        for k in -(repr.n_modes as i64)..=(repr.n_modes as i64) {
            for r in 0..repr.rows {
                for c in 0..repr.cols {
                    let &(kk, re, im) = it.next().unwrap();
                    if kk != k {
                        return Err(D::Error::custom("coefficient list out of order"));
                    }
                    let i = s.idx(k, r, c);
                    s.coeffs[i] = Complex64::new(re, im);
                }
            }
        }
        Ok(s)
    }
}
