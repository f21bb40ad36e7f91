//! The one-step DenseAM map
//!
//! ```text
//! f(x) = s2 · W̃ᵀ σ_C(s1 · W̃ g(x) + b̃) + c
//! ```
//!
//! with `W̃ = CW`, `b̃ = Cb` and `σ_C = C∘σ` for centered models, where
//! `C = I − 𝟙𝟙ᵀ/K` removes the mean over hidden units. Uncentered models use
//! `W`, `b` and `σ` directly.

mod activation;
mod energy;

pub use activation::{
    double_factorial_odd, jacobian_apply, log_sum_exp, relu_constant, softmax, softmax_jvp,
    Activation,
};
pub use energy::{dynamics_step, dynamics_step_batch, effective_energy, run_dynamics, Trajectory};

use serde::{Deserialize, Serialize};

use crate::linalg::{gemm, Matrix};
use crate::rng::{gaussian_vec, sample_gaussian, RngState};

/// Input nonlinearity `g`. The network always uses `tanh`; `Identity` is a
/// fixture hook for oracle comparisons.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMap {
    #[default]
    Tanh,
    Identity,
}

impl InputMap {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            InputMap::Tanh => x.tanh(),
            InputMap::Identity => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            InputMap::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            InputMap::Identity => 1.0,
        }
    }

    /// Antiderivative of `g`: `log cosh x` or `x²/2`.
    pub fn antiderivative(self, x: f64) -> f64 {
        match self {
            InputMap::Tanh => {
                let a = x.abs();
                a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
            }
            InputMap::Identity => 0.5 * x * x,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    /// `K × N`.
    pub w: Matrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub s1: f64,
    pub s2: f64,
    pub centered: bool,
    pub activation: Activation,
    #[serde(default)]
    pub input_map: InputMap,
}

impl ModelState {
    /// All-zero parameters.
    pub fn zeros(k: usize, n: usize, s1: f64, s2: f64, activation: Activation, centered: bool) -> Self {
        assert!(s1 > 0.0 && s2 > 0.0, "scale factors must be positive");
        ModelState {
            w: Matrix::zeros(k, n),
            b: vec![0.0; k],
            c: vec![0.0; n],
            s1,
            s2,
            centered,
            activation,
            input_map: InputMap::Tanh,
        }
    }

    /// Standard Gaussian `W`, `b`, `c`.
    pub fn gaussian(
        rng: &mut RngState,
        k: usize,
        n: usize,
        s1: f64,
        s2: f64,
        activation: Activation,
        centered: bool,
    ) -> Self {
        let mut m = Self::zeros(k, n, s1, s2, activation, centered);
        m.w = sample_gaussian(rng, k, n, 1.0);
        m.b = gaussian_vec(rng, k, 1.0);
        m.c = gaussian_vec(rng, n, 1.0);
        m
    }

    pub fn hidden(&self) -> usize {
        self.w.rows()
    }

    pub fn visible(&self) -> usize {
        self.w.cols()
    }

    /// `W̃`: `CW` when centered, else `W`.
    pub fn effective_weights(&self) -> Matrix {
        if self.centered {
            self.w.center_columns()
        } else {
            self.w.clone()
        }
    }

    /// `b̃`: `Cb` when centered, else `b`.
    pub fn effective_bias(&self) -> Vec<f64> {
        if self.centered {
            centering_matrix_apply_vec(&self.b)
        } else {
            self.b.clone()
        }
    }

    fn check_shapes(&self) {
        assert_eq!(self.b.len(), self.hidden(), "bias b has wrong length");
        assert_eq!(self.c.len(), self.visible(), "bias c has wrong length");
    }
}

/// All per-batch tensors of the forward pass.
#[derive(Clone, Debug)]
pub struct BatchTensors {
    /// `W̃` used for this batch.
    pub w_eff: Matrix,
    /// `g(X)`, `N × B`.
    pub g: Matrix,
    /// Preactivations, `K × B`.
    pub z: Matrix,
    /// `σ(Z)` before the outer centering, `K × B`.
    pub s: Matrix,
    /// `σ'(Z)` for elementwise activations.
    pub s_prime: Option<Matrix>,
    /// Outputs, `N × B`.
    pub f: Matrix,
    /// Residuals `F − Y`.
    pub r: Matrix,
}

impl BatchTensors {
    pub fn batch_size(&self) -> usize {
        self.f.cols()
    }

    /// `C S` when centered, else `S`.
    pub fn s_out(&self, centered: bool) -> Matrix {
        if centered {
            self.s.center_columns()
        } else {
            self.s.clone()
        }
    }

    pub fn loss(&self) -> f64 {
        0.5 * self.r.frobenius_sq() / self.batch_size() as f64
    }

    /// Mean squared error per output entry, `‖F − Y‖² / (N B)`. Unlike the
    /// loss it does not grow with `N`.
    pub fn mse(&self) -> f64 {
        self.r.frobenius_sq() / self.r.len() as f64
    }
}

/// Subtracts each column's mean over the row axis.
pub fn centering_matrix_apply(m: &Matrix) -> Matrix {
    m.center_columns()
}

pub fn centering_matrix_apply_vec(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

/// Forward pass on `X` (`N × B`) with targets `Y`.
pub fn forward(model: &ModelState, x: &Matrix, y: &Matrix) -> BatchTensors {
    model.check_shapes();
    assert_eq!(x.rows(), model.visible(), "input has wrong dimension");
    assert_eq!(x.shape(), y.shape(), "inputs and targets differ in shape");
    let w_eff = model.effective_weights();
    let g = x.map(|v| model.input_map.apply(v));
    let mut z = gemm(&w_eff, &g, false, false);
    z.scale_inplace(model.s1);
    z.add_col_broadcast(&model.effective_bias());
    let s = model.activation.apply(&z);
    let s_prime = model.activation.derivative(&z);
    // Outer projection σ_C = Cσ. Redundant in exact arithmetic since W̃ᵀC = W̃ᵀ.
    let s_out = if model.centered { s.center_columns() } else { s.clone() };
    let mut f = gemm(&w_eff, &s_out, true, false);
    f.scale_inplace(model.s2);
    f.add_col_broadcast(&model.c);
    let r = f.sub(y);
    BatchTensors {
        w_eff,
        g,
        z,
        s,
        s_prime,
        f,
        r,
    }
}

/// `f(X)` only.
pub fn outputs(model: &ModelState, x: &Matrix) -> Matrix {
    forward(model, x, x).f
}

/// `(1/2B) ‖F − Y‖²`.
pub fn mse_loss(f: &Matrix, y: &Matrix) -> f64 {
    assert_eq!(f.shape(), y.shape(), "mse_loss: shape mismatch");
    0.5 * f.sub(y).frobenius_sq() / f.cols() as f64
}
