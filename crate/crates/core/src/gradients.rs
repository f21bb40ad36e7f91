//! Loss gradients and the tied-weight update decomposition.
//!
//! `W` enters the forward map twice, so its gradient splits into an outer
//! term (through `W̃ᵀ`) and a hidden term (through the preactivations):
//!
//! ```text
//! ∇W = (s2/B) S̃ Rᵀ  +  (s1 s2/B) C (J(W̃R)) Gᵀ
//! ```
//!
//! where `S̃ = CS` and `J(·)` is `S' ⊙ ·` for elementwise activations or the
//! per-column softmax Jacobian. For uncentered models `C = I`.

use serde::{Deserialize, Serialize};

use crate::linalg::{gemm, Matrix};
use crate::model::{jacobian_apply, BatchTensors, ModelState};
use crate::optim::LearningRates;

#[derive(Clone, Debug)]
pub struct LossGradients {
    pub w: Matrix,
    /// Outer-occurrence term.
    pub w1: Matrix,
    /// Hidden-occurrence term.
    pub w2: Matrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

/// Gradients of `(1/2B)‖F − Y‖²` at the batch produced by `forward`.
pub fn loss_gradients(model: &ModelState, batch: &BatchTensors) -> LossGradients {
    let bsz = batch.batch_size() as f64;
    let s_out = batch.s_out(model.centered);

    let mut w1 = gemm(&s_out, &batch.r, false, true);
    w1.scale_inplace(model.s2 / bsz);

    // Error signal at the preactivations, dL/dZ.
    let mut back = gemm(&batch.w_eff, &batch.r, false, false);
    back.scale_inplace(model.s2 / bsz);
    let mut dz = jacobian_apply(&model.activation, &batch.s, batch.s_prime.as_ref(), &back);
    if model.centered {
        dz = dz.center_columns();
    }
    let mut w2 = gemm(&dz, &batch.g, false, true);
    w2.scale_inplace(model.s1);

    let b = dz.row_sums();
    let c = batch.r.row_sums().into_iter().map(|v| v / bsz).collect();
    LossGradients {
        w: w1.add(&w2),
        w1,
        w2,
        b,
        c,
    }
}

/// Change of `Z` and of the two output paths caused by a weight change `dw`.
#[derive(Clone, Debug)]
pub struct WeightResponse {
    /// `s1 · C dW · G`.
    pub dz: Matrix,
    /// `s2 · (C dW)ᵀ S̃`, the direct output change.
    pub df_outer: Matrix,
    /// `s2 · W̃ᵀ J(dZ)`, the feature-induced output change.
    pub df_hidden: Matrix,
}

/// First-order response of the network to `W ← W + dw`.
pub fn weight_response(model: &ModelState, batch: &BatchTensors, dw: &Matrix) -> WeightResponse {
    let dw_eff = if model.centered {
        dw.center_columns()
    } else {
        dw.clone()
    };
    let mut dz = gemm(&dw_eff, &batch.g, false, false);
    dz.scale_inplace(model.s1);
    let s_out = batch.s_out(model.centered);
    let mut df_outer = gemm(&dw_eff, &s_out, true, false);
    df_outer.scale_inplace(model.s2);
    let ds = jacobian_apply(&model.activation, &batch.s, batch.s_prime.as_ref(), &dz);
    let mut df_hidden = gemm(&batch.w_eff, &ds, true, false);
    df_hidden.scale_inplace(model.s2);
    WeightResponse {
        dz,
        df_outer,
        df_hidden,
    }
}

/// The ten fields of one SGD update, split by which occurrence of `W` they
/// come from. `df{ℓ}{ℓ'}` follows the convention: first index 1 for the
/// direct path and 2 for the feature path, second index the gradient term.
#[derive(Clone, Debug)]
pub struct UpdateDecomposition {
    pub dw1: Matrix,
    pub dw2: Matrix,
    pub dz1: Matrix,
    pub dz2: Matrix,
    pub df11: Matrix,
    pub df12: Matrix,
    pub df21: Matrix,
    pub df22: Matrix,
    pub db: Vec<f64>,
    pub dc: Vec<f64>,
}

/// Per-entry RMS of every field of an [`UpdateDecomposition`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecompositionRms {
    pub dw1: f64,
    pub dw2: f64,
    pub dz1: f64,
    pub dz2: f64,
    pub df11: f64,
    pub df12: f64,
    pub df21: f64,
    pub df22: f64,
    pub db: f64,
    pub dc: f64,
}

fn rms_vec(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

impl UpdateDecomposition {
    pub fn rms(&self) -> DecompositionRms {
        DecompositionRms {
            dw1: self.dw1.rms(),
            dw2: self.dw2.rms(),
            dz1: self.dz1.rms(),
            dz2: self.dz2.rms(),
            df11: self.df11.rms(),
            df12: self.df12.rms(),
            df21: self.df21.rms(),
            df22: self.df22.rms(),
            db: rms_vec(&self.db),
            dc: rms_vec(&self.dc),
        }
    }

    /// `dF11 + dF12 + dF21 + dF22`.
    pub fn total_df(&self) -> Matrix {
        self.df11.add(&self.df12).add(&self.df21).add(&self.df22)
    }
}

/// Decomposes the SGD update for `batch` from precomputed gradients.
pub fn decompose(
    model: &ModelState,
    batch: &BatchTensors,
    grads: &LossGradients,
    lr: &LearningRates,
) -> UpdateDecomposition {
    let dw1 = grads.w1.scaled(-lr.w);
    let dw2 = grads.w2.scaled(-lr.w);
    let r1 = weight_response(model, batch, &dw1);
    let r2 = weight_response(model, batch, &dw2);
    UpdateDecomposition {
        dw1,
        dw2,
        dz1: r1.dz,
        dz2: r2.dz,
        df11: r1.df_outer,
        df12: r2.df_outer,
        df21: r1.df_hidden,
        df22: r2.df_hidden,
        db: grads.b.iter().map(|g| -lr.b * g).collect(),
        dc: grads.c.iter().map(|g| -lr.c * g).collect(),
    }
}

pub fn sgd_update_decomposition(
    model: &ModelState,
    batch: &BatchTensors,
    lr: &LearningRates,
) -> UpdateDecomposition {
    decompose(model, batch, &loss_gradients(model, batch), lr)
}

/// `Ū_i = (1/K) Σ_k U_ki`.
pub fn adam_row_mean(update: &Matrix) -> Vec<f64> {
    update.col_means()
}
