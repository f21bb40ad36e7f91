//! Browser demo: energy descent of the network dynamics, the hidden Gram
//! spectrum with and without centering, and the scaling prescriptions.
//!
//! The `*_report` functions are plain Rust so they can be tested on the
//! host; the `#[wasm_bindgen]` wrappers only convert types.

use denseam::diagnostics::gram;
use denseam::linalg::sym_top_eigs;
use denseam::model::run_dynamics;
use denseam::oracle::{init_hidden_activations, predicted_spike};
use denseam::parameterization::{dims_for, prescription, BaseRates, OptimizerKind, ScalingRegime};
use denseam::rng::{gaussian_vec, RngState};
use denseam::{Activation, ModelState};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Caps keeping each call interactive in a browser tab.
const MAX_WIDTH: usize = 1024;
const MAX_BATCH: usize = 256;
const MAX_STEPS: usize = 5000;

pub fn parse_activation(name: &str) -> Result<Activation, String> {
    match name {
        "linear" => Ok(Activation::Linear),
        "relu1" => Ok(Activation::relu(1)),
        "relu2" => Ok(Activation::relu(2)),
        "softmax" => Ok(Activation::softmax()),
        other => Err(format!("unknown activation '{other}' (linear, relu1, relu2, softmax)")),
    }
}

fn check(name: &str, v: usize, max: usize) -> Result<(), String> {
    if v == 0 || v > max {
        Err(format!("{name} must lie in 1..={max}, got {v}"))
    } else {
        Ok(())
    }
}

/// Effective energy along `steps` Euler steps of the dynamics from a
/// Gaussian start, for a Gaussian-initialized model.
pub fn energy_report(
    activation: &str,
    centered: bool,
    n: usize,
    k: usize,
    dt: f64,
    steps: usize,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let act = parse_activation(activation)?;
    check("N", n, MAX_WIDTH)?;
    check("K", k, MAX_WIDTH)?;
    check("steps", steps, MAX_STEPS)?;
    if !(dt > 0.0 && dt <= 1.0) {
        return Err(format!("dt must lie in (0, 1], got {dt}"));
    }
    let mut rng = RngState::new(seed);
    let s1 = 1.0 / (n as f64).sqrt();
    let s2 = 1.0 / (k as f64).sqrt();
    let model = ModelState::gaussian(&mut rng, k, n, s1, s2, act, centered);
    let x0 = gaussian_vec(&mut rng, n, 1.0);
    Ok(run_dynamics(&model, &x0, dt, steps).energies)
}

#[derive(Debug, Serialize)]
pub struct Spectrum {
    /// Eigenvalues of `SᵀS / K`, descending.
    pub uncentered: Vec<f64>,
    /// Eigenvalues of `S̃ᵀS̃ / K`.
    pub centered: Vec<f64>,
    /// Mean-induced spike of `SᵀS / K` predicted at init.
    pub predicted_spike: f64,
}

/// Hidden Gram spectra at init for standard-normal preactivations.
pub fn spectrum_report(activation: &str, k: usize, b: usize, n: usize, seed: u64) -> Result<Spectrum, String> {
    let act = parse_activation(activation)?;
    check("K", k, MAX_WIDTH)?;
    check("B", b, MAX_BATCH)?;
    check("N", n, MAX_WIDTH)?;
    let eigs = |centered: bool| {
        let s = init_hidden_activations(act, centered, n, k, b, &mut RngState::new(seed));
        sym_top_eigs(&gram(&s), b)
            .into_iter()
            .map(|l| l.max(0.0) / k as f64)
            .collect()
    };
    Ok(Spectrum {
        uncentered: eigs(false),
        centered: eigs(true),
        predicted_spike: predicted_spike(&act, k, b) / k as f64,
    })
}

#[derive(Debug, Serialize)]
pub struct TableRow {
    pub activation: &'static str,
    pub optimizer: &'static str,
    pub s1: f64,
    pub s2: f64,
    pub eta_w: f64,
    pub eta_b: f64,
    pub eta_c: f64,
    /// `None` when the pair has no prescription.
    pub note: Option<String>,
}

/// Concrete prescriptions at one scale: `N` in the proportional regime
/// (`K = 2N`), `K` in the K-only regime (`N = 64`).
pub fn table_report(regime: &str, scale: usize, eta0: f64) -> Result<Vec<TableRow>, String> {
    check("scale", scale, 1 << 20)?;
    if !(eta0 > 0.0 && eta0.is_finite()) {
        return Err(format!("eta0 must be positive, got {eta0}"));
    }
    let regime = match regime {
        "proportional" => ScalingRegime::Proportional { kappa: 2.0, rho: 5.0, beta: 0.1 },
        "k_only" => ScalingRegime::KOnly { n: 64, p: 640, beta: 0.1 },
        other => return Err(format!("unknown regime '{other}' (proportional, k_only)")),
    };
    let dims = dims_for(&regime, scale);
    let base = BaseRates::new(eta0);
    let mut rows = Vec::new();
    for (aname, act) in [("ReLU^p", Activation::relu(1)), ("softmax", Activation::softmax())] {
        for (oname, opt) in [("SGD", OptimizerKind::Sgd), ("Adam", OptimizerKind::Adam)] {
            let row = match prescription(&regime, &act, opt, &dims, &base, false) {
                Ok(p) => TableRow {
                    activation: aname,
                    optimizer: oname,
                    s1: p.s1,
                    s2: p.s2,
                    eta_w: p.lr.w,
                    eta_b: p.lr.b,
                    eta_c: p.lr.c,
                    note: None,
                },
                Err(e) => TableRow {
                    activation: aname,
                    optimizer: oname,
                    s1: f64::NAN,
                    s2: f64::NAN,
                    eta_w: f64::NAN,
                    eta_b: f64::NAN,
                    eta_c: f64::NAN,
                    note: Some(e.to_string()),
                },
            };
            rows.push(row);
        }
    }
    Ok(rows)
}

fn js_err(e: String) -> JsError {
    JsError::new(&e)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("demo values serialize")
}

#[wasm_bindgen]
pub fn energy_trace(
    activation: &str,
    centered: bool,
    n: usize,
    k: usize,
    dt: f64,
    steps: usize,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    energy_report(activation, centered, n, k, dt, steps, seed as u64).map_err(js_err)
}

/// JSON `{uncentered, centered, predicted_spike}`.
#[wasm_bindgen]
pub fn gram_spectrum(activation: &str, k: usize, b: usize, n: usize, seed: u32) -> Result<String, JsError> {
    spectrum_report(activation, k, b, n, seed as u64).map(|s| to_json(&s)).map_err(js_err)
}

/// JSON array of rows; non-finite entries become `null`.
#[wasm_bindgen]
pub fn prescription_table(regime: &str, scale: usize, eta0: f64) -> Result<String, JsError> {
    table_report(regime, scale, eta0).map(|r| to_json(&r)).map_err(js_err)
}
