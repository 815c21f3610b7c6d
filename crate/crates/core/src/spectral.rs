//! Truncated sine-basis representation of the controlled heat equation on
//! `(0, π)` with homogeneous Dirichlet conditions and a control window `ω = (l, r)`.
//!
//! The eigenpairs of `-Δ` are `λ_j = j²`, `e_j(x) = √(2/π) sin(jx)`. A state is
//! the vector of its first `J` coordinates in this basis, so the free flow is a
//! diagonal exponential and the control enters through the Gram matrix
//! `B_jk = ∫_ω e_j e_k dx`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Control window `ω = (l, r) ⊂ (0, π)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 2]", try_from = "[f64; 2]")]
pub struct Window {
    pub left: f64,
    pub right: f64,
}

impl Window {
    pub fn new(left: f64, right: f64) -> Result<Self> {
        if !(left.is_finite() && right.is_finite()) || left < 0.0 || right > PI || left >= right {
            return Err(Error::Config(format!(
                "control window ({left}, {right}) must satisfy 0 <= l < r <= pi"
            )));
        }
        Ok(Self { left, right })
    }

    pub fn full() -> Self {
        Self { left: 0.0, right: PI }
    }
}

impl From<Window> for [f64; 2] {
    fn from(w: Window) -> Self {
        [w.left, w.right]
    }
}

impl TryFrom<[f64; 2]> for Window {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        Window::new(v[0], v[1])
    }
}

/// Spectral coordinates of an `L²(0, π)` function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct State(pub DVector<f64>);

impl State {
    pub fn zeros(n: usize) -> Self {
        Self(DVector::zeros(n))
    }

    pub fn from_vec(coeffs: Vec<f64>) -> Self {
        Self(DVector::from_vec(coeffs))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    /// Zero-pads (or truncates) to `n` coordinates.
    pub fn resized(&self, n: usize) -> Self {
        let mut out = DVector::zeros(n);
        for (o, v) in out.iter_mut().zip(self.0.iter()) {
            *o = *v;
        }
        Self(out)
    }
}

impl From<Vec<f64>> for State {
    fn from(v: Vec<f64>) -> Self {
        Self::from_vec(v)
    }
}

impl From<State> for Vec<f64> {
    fn from(s: State) -> Self {
        s.0.as_slice().to_vec()
    }
}

/// Piecewise-constant-in-time control on a uniform grid of `[0, horizon]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseControl {
    pub horizon: f64,
    pub slices: Vec<State>,
}

impl PiecewiseControl {
    pub fn zeros(horizon: f64, n_slices: usize, n_modes: usize) -> Self {
        Self {
            horizon,
            slices: vec![State::zeros(n_modes); n_slices],
        }
    }

    /// Builds a control from slice-major flat storage (`n_slices × n_modes`).
    pub fn from_flat(horizon: f64, n_modes: usize, flat: &[f64]) -> Self {
        let slices = flat
            .chunks(n_modes)
            .map(|c| State::from_vec(c.to_vec()))
            .collect();
        Self { horizon, slices }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.slices.iter().flat_map(|s| s.as_slice().iter().copied()).collect()
    }

    pub fn n_slices(&self) -> usize {
        self.slices.len()
    }

    pub fn slice_norms(&self) -> Vec<f64> {
        self.slices.iter().map(State::norm).collect()
    }

    /// `L∞(0, T; L²)` norm: the largest slice norm.
    pub fn sup_norm(&self) -> f64 {
        self.slice_norms().into_iter().fold(0.0, f64::max)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.n_slices() != other.n_slices() {
            return Err(Error::Shape {
                expected: self.n_slices(),
                got: other.n_slices(),
            });
        }
        let slices = self
            .slices
            .iter()
            .zip(&other.slices)
            .map(|(a, b)| {
                if a.len() != b.len() {
                    return Err(Error::Shape {
                        expected: a.len(),
                        got: b.len(),
                    });
                }
                Ok(State(&a.0 + &b.0))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            horizon: self.horizon,
            slices,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralSystem {
    eigenvalues: DVector<f64>,
    omega: Window,
    gram: DMatrix<f64>,
}

/// `∫_l^r sin(jx) sin(kx) dx` from the exact antiderivatives.
fn sine_product_integral(j: usize, k: usize, l: f64, r: f64) -> f64 {
    let (jf, kf) = (j as f64, k as f64);
    let anti = |x: f64| {
        if j == k {
            x / 2.0 - (2.0 * jf * x).sin() / (4.0 * jf)
        } else {
            let d = jf - kf;
            let s = jf + kf;
            (d * x).sin() / (2.0 * d) - (s * x).sin() / (2.0 * s)
        }
    };
    anti(r) - anti(l)
}

impl SpectralSystem {
    pub fn new(n_modes: usize, omega: Window) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::Config("n_modes must be at least 1".into()));
        }
        let omega = Window::new(omega.left, omega.right)?;
        let eigenvalues = DVector::from_fn(n_modes, |j, _| ((j + 1) * (j + 1)) as f64);
        let mut gram = DMatrix::zeros(n_modes, n_modes);
        for j in 0..n_modes {
            for k in j..n_modes {
                let b = 2.0 / PI * sine_product_integral(j + 1, k + 1, omega.left, omega.right);
                gram[(j, k)] = b;
                gram[(k, j)] = b;
            }
        }
        Ok(Self {
            eigenvalues,
            omega,
            gram,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn omega(&self) -> Window {
        self.omega
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    fn check_state(&self, y: &State) -> Result<()> {
        if y.len() != self.n_modes() {
            return Err(Error::Shape {
                expected: self.n_modes(),
                got: y.len(),
            });
        }
        Ok(())
    }

    /// `e^{Δt} y0`, coordinate-wise `e^{-λ_j t}` scaling.
    pub fn free_flow(&self, y0: &State, t: f64) -> Result<State> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("free flow needs t >= 0, got {t}")));
        }
        self.check_state(y0)?;
        Ok(State(y0.0.zip_map(&self.eigenvalues, |y, lam| y * (-lam * t).exp())))
    }

    /// Terminal state `ŷ(T; y0, v)` of the controlled system (Duhamel formula,
    /// exact for piecewise-constant controls).
    pub fn terminal_map(&self, y0: &State, v: &PiecewiseControl) -> Result<State> {
        if !(v.horizon > 0.0) {
            return Err(Error::Domain(format!(
                "control horizon must be positive, got {}",
                v.horizon
            )));
        }
        for s in &v.slices {
            self.check_state(s)?;
        }
        let op = ControlOperator::new(self, v.horizon, v.n_slices());
        let mut z = self.free_flow(y0, v.horizon)?.0.as_slice().to_vec();
        op.apply_add(&v.to_flat(), &mut z);
        Ok(State::from_vec(z))
    }
}

/// The linear control-to-terminal-state map `v ↦ Σ_i diag(w_i) B v_i` for a
/// uniform slicing, stored flat for the inner loops of the solvers.
///
/// `w_ij = ∫_{t_i}^{t_{i+1}} e^{-λ_j (T - s)} ds`.
#[derive(Clone, Debug)]
pub struct ControlOperator {
    n_modes: usize,
    n_slices: usize,
    horizon: f64,
    weights: Vec<f64>,
    gram: Vec<f64>,
}

impl ControlOperator {
    pub fn new(sys: &SpectralSystem, horizon: f64, n_slices: usize) -> Self {
        let n_modes = sys.n_modes();
        let dt = horizon / n_slices as f64;
        let mut weights = vec![0.0; n_slices * n_modes];
        for i in 0..n_slices {
            // time to go from the right end of slice i
            let tail = horizon - (i + 1) as f64 * dt;
            for j in 0..n_modes {
                let lam = sys.eigenvalues[j];
                weights[i * n_modes + j] = (-lam * tail).exp() * -(-lam * dt).exp_m1() / lam;
            }
        }
        let gram = (0..n_modes)
            .flat_map(|r| (0..n_modes).map(move |c| (r, c)))
            .map(|(r, c)| sys.gram[(r, c)])
            .collect();
        Self {
            n_modes,
            n_slices,
            horizon,
            weights,
            gram,
        }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_slices(&self) -> usize {
        self.n_slices
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn slice_weights(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n_modes..(i + 1) * self.n_modes]
    }

    fn gram_row(&self, r: usize) -> &[f64] {
        &self.gram[r * self.n_modes..(r + 1) * self.n_modes]
    }

    /// `out += Σ_i diag(w_i) B v_i`.
    pub fn apply_add(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n_modes;
        for i in 0..self.n_slices {
            let vi = &v[i * n..(i + 1) * n];
            let w = self.slice_weights(i);
            for r in 0..n {
                let bv: f64 = self.gram_row(r).iter().zip(vi).map(|(b, x)| b * x).sum();
                out[r] += w[r] * bv;
            }
        }
    }

    /// `out_i = B diag(w_i) r` for every slice (the adjoint of `apply_add`).
    pub fn adjoint(&self, r: &[f64], out: &mut [f64]) {
        let n = self.n_modes;
        let mut scaled = vec![0.0; n];
        for i in 0..self.n_slices {
            let w = self.slice_weights(i);
            for ((s, wj), rj) in scaled.iter_mut().zip(w).zip(r) {
                *s = wj * rj;
            }
            let oi = &mut out[i * n..(i + 1) * n];
            for (row, o) in oi.iter_mut().enumerate() {
                *o = self.gram_row(row).iter().zip(&scaled).map(|(b, x)| b * x).sum();
            }
        }
    }

    /// `Σ_i G_i G_iᵀ`, whose largest eigenvalue is the squared operator norm.
    pub fn normal_matrix(&self) -> DMatrix<f64> {
        let n = self.n_modes;
        let b = DMatrix::from_row_slice(n, n, &self.gram);
        let bb = &b * &b;
        DMatrix::from_fn(n, n, |r, c| {
            let w: f64 = (0..self.n_slices)
                .map(|i| self.slice_weights(i)[r] * self.slice_weights(i)[c])
                .sum();
            w * bb[(r, c)]
        })
    }

    /// Squared operator norm `‖A‖²` by power iteration on `A Aᵀ`.
    pub fn lipschitz(&self) -> f64 {
        let m = self.normal_matrix();
        let n = self.n_modes;
        let mut x = DVector::from_element(n, 1.0 / (n as f64).sqrt());
        let mut est = 0.0;
        for _ in 0..500 {
            let y = &m * &x;
            let norm = y.norm();
            if norm == 0.0 {
                return 0.0;
            }
            let next = y / norm;
            let done = (norm - est).abs() <= 1e-12 * norm;
            est = norm;
            x = next;
            if done {
                break;
            }
        }
        est
    }
}
