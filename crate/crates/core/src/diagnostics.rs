//! Observables of a training step: hidden Gram spectrum, softmax
//! participation ratios and the per-entry size of every update term.

use serde::{Deserialize, Serialize};

use crate::gradients::{DecompositionRms, UpdateDecomposition};
use crate::linalg::{gemm, sym_top_eigs, Matrix};
use crate::model::{BatchTensors, ModelState};

/// Top two eigenvalues of a hidden Gram matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeBulk {
    /// Of `SᵀS / K`.
    pub lambda_max: f64,
    pub lambda2: f64,
    /// Of `SᵀS`.
    pub lambda_max_raw: f64,
    pub lambda2_raw: f64,
}

/// `B × B` Gram matrix `SᵀS`, symmetrized against rounding.
pub fn gram(s: &Matrix) -> Matrix {
    let g = gemm(s, s, true, false);
    let gt = g.transpose();
    g.zip_map(&gt, |a, b| 0.5 * (a + b))
}

pub fn gram_spike_bulk(s: &Matrix) -> SpikeBulk {
    let k = s.rows() as f64;
    let g = gram(s);
    let top = sym_top_eigs(&g, g.rows().min(2));
    let l1 = top[0].max(0.0);
    let l2 = top.get(1).copied().unwrap_or(0.0).max(0.0);
    SpikeBulk {
        lambda_max: l1 / k,
        lambda2: l2 / k,
        lambda_max_raw: l1,
        lambda2_raw: l2,
    }
}

/// `1/Σσ²`, or `1/‖Cσ‖²` when `centered`. A uniform `σ` has `Cσ = 0`, for
/// which the centered ratio is `+∞`.
pub fn participation_ratio(sigma: &[f64], centered: bool) -> f64 {
    let sq: f64 = sigma.iter().map(|s| s * s).sum();
    if !centered {
        return 1.0 / sq;
    }
    let sum: f64 = sigma.iter().sum();
    let csq = sq - sum * sum / sigma.len() as f64;
    if csq <= 1e-14 * sq {
        f64::INFINITY
    } else {
        1.0 / csq
    }
}

/// Mean participation ratio over the columns of `S`.
pub fn mean_participation(s: &Matrix, centered: bool) -> f64 {
    let b = s.cols();
    (0..b).map(|c| participation_ratio(&s.col(c), centered)).sum::<f64>() / b as f64
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub epoch: usize,
    /// Optimizer steps taken before this batch.
    pub step: usize,
    /// Per-entry mean squared error of the batch.
    pub mse: f64,
    /// Gram spectrum of `S̃` for centered models, `S` otherwise, over `K`.
    pub lambda_max: f64,
    pub lambda2: f64,
    pub lambda_max_raw: f64,
    pub lambda2_raw: f64,
    /// Softmax only.
    pub k_eff: Option<f64>,
    /// Softmax only; may be `+∞`.
    pub k_eff_centered: Option<f64>,
    pub z_rms: f64,
    pub f_rms: f64,
    pub update: Option<DecompositionRms>,
    pub adam_update_rms: Option<f64>,
    pub adam_row_mean_rms: Option<f64>,
}

/// Measures one batch. `epoch`, `step` and the Adam fields are filled by
/// the caller.
pub fn desiderata_probe(
    model: &ModelState,
    batch: &BatchTensors,
    decomposition: Option<&UpdateDecomposition>,
) -> DiagnosticsRecord {
    let spec = gram_spike_bulk(&batch.s_out(model.centered));
    let softmax = !model.activation.is_elementwise();
    DiagnosticsRecord {
        epoch: 0,
        step: 0,
        mse: batch.mse(),
        lambda_max: spec.lambda_max,
        lambda2: spec.lambda2,
        lambda_max_raw: spec.lambda_max_raw,
        lambda2_raw: spec.lambda2_raw,
        k_eff: softmax.then(|| mean_participation(&batch.s, false)),
        k_eff_centered: softmax.then(|| mean_participation(&batch.s, true)),
        z_rms: batch.z.rms(),
        f_rms: batch.f.rms(),
        update: decomposition.map(UpdateDecomposition::rms),
        adam_update_rms: None,
        adam_row_mean_rms: None,
    }
}
