//! Closed-form random-matrix predictions and their Monte-Carlo estimators.
//!
//! Each draw uses its own derived random stream, so estimates do not depend
//! on whether draws run in parallel.

use serde::Serialize;

use crate::gradients::sgd_update_decomposition;
use crate::linalg::{gemm, Matrix};
use crate::model::{forward, Activation, InputMap, ModelState};
use crate::optim::LearningRates;
use crate::parameterization::{dims_for, Dims, ScalingRegime};
use crate::rng::{sample_gaussian, RngState};

/// Runs `f` once per draw with stream `rng.derive(draw)` and returns the
/// results in draw order.
pub fn map_draws<T, F>(rng: &RngState, draws: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut RngState) -> T + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..draws)
            .into_par_iter()
            .map(|d| f(&mut rng.derive(d as u64)))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..draws).map(|d| f(&mut rng.derive(d as u64))).collect()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `E tr((WᵀW)²) = KN(K+N+1)` for standard Gaussian `W ∈ ℝ^{K×N}`.
pub fn expected_trace_wtw_squared(k: usize, n: usize) -> f64 {
    let (k, n) = (k as u128, n as u128);
    (k * n * (k + n + 1)) as f64
}

pub fn mc_trace_wtw_squared(k: usize, n: usize, draws: usize, rng: &RngState) -> f64 {
    mean(&map_draws(rng, draws, |r| {
        let w = sample_gaussian(r, k, n, 1.0);
        gemm(&w, &w, true, false).frobenius_sq()
    }))
}

/// `E‖F‖²/(NB) = s1² s2² v_g K(K+N+1)` for a linear model at init.
pub fn init_output_variance_linear(dims: &Dims, s1: f64, s2: f64, v_g: f64) -> f64 {
    let (k, n) = (dims.k as f64, dims.n as f64);
    s1 * s1 * s2 * s2 * v_g * k * (k + n + 1.0)
}

/// Variance of `tanh(x)` for `x ~ N(0, 1)`, pooled from `samples` draws.
pub fn measure_tanh_variance(samples: usize, rng: &mut RngState) -> f64 {
    let mut acc = 0.0;
    for _ in 0..samples {
        acc += rng.normal().tanh().powi(2);
    }
    acc / samples as f64
}

/// Monte-Carlo `E‖F‖²/(NB)` for a bias-free linear model with standard
/// Gaussian weights and inputs; returns `(estimate, measured v_g)`.
pub fn mc_init_output_variance(
    dims: &Dims,
    s1: f64,
    s2: f64,
    draws: usize,
    rng: &RngState,
) -> (f64, f64) {
    let per_draw = map_draws(rng, draws, |r| {
        let mut m = ModelState::zeros(dims.k, dims.n, s1, s2, Activation::Linear, false);
        m.w = sample_gaussian(r, dims.k, dims.n, 1.0);
        let x = sample_gaussian(r, dims.n, dims.b, 1.0);
        let t = forward(&m, &x, &x);
        let g2 = t.g.frobenius_sq();
        (t.f.frobenius_sq() / (dims.n * dims.b) as f64, g2)
    });
    let est = mean(&per_draw.iter().map(|p| p.0).collect::<Vec<_>>());
    let v_g = per_draw.iter().map(|p| p.1).sum::<f64>() / (draws * dims.n * dims.b) as f64;
    (est, v_g)
}

/// `E tr((ZᵀZ)³)` for `K` i.i.d. rows `z ~ N(0, Σ)`, from `t_j = tr Σʲ`.
pub fn wishart_trace_cubed(t1: f64, t2: f64, t3: f64, k: usize) -> f64 {
    let k = k as f64;
    k * t1.powi(3) + 3.0 * k * (k + 1.0) * t1 * t2 + (k.powi(3) + 3.0 * k * k + 4.0 * k) * t3
}

/// `tr Σ, tr Σ², tr Σ³`.
pub fn power_traces(sigma: &Matrix) -> (f64, f64, f64) {
    let s2 = gemm(sigma, sigma, false, false);
    let s3 = gemm(&s2, sigma, false, false);
    (sigma.trace(), s2.trace(), s3.trace())
}

/// Monte-Carlo `E tr((ZᵀZ)³)` with rows `z = A ξ`, so `Σ = AAᵀ`.
pub fn mc_wishart_trace_cubed(factor: &Matrix, k: usize, draws: usize, rng: &RngState) -> f64 {
    mean(&map_draws(rng, draws, |r| {
        let xi = sample_gaussian(r, k, factor.cols(), 1.0);
        let z = gemm(&xi, factor, false, true);
        let w = gemm(&z, &z, true, false);
        let w2 = gemm(&w, &w, false, false);
        gemm(&w2, &w, false, false).trace()
    }))
}

/// Marchenko–Pastur moments `m1..m4` at aspect ratio `ρ_B`.
pub fn mp_moments(rho_b: f64) -> [f64; 4] {
    let a = rho_b;
    [
        1.0,
        1.0 + a,
        1.0 + 3.0 * a + a * a,
        1.0 + 6.0 * a + 6.0 * a * a + a * a * a,
    ]
}

/// Monte-Carlo `tr(Σ_Gʲ)/(B v_gʲ)`, `j = 1..4`, with `Σ_G = GᵀG/N` and
/// `G = tanh(X)`; `v_g` is measured from the same draws.
pub fn mc_mp_moments(n: usize, b: usize, draws: usize, rng: &RngState) -> [f64; 4] {
    let per_draw = map_draws(rng, draws, |r| {
        let g = sample_gaussian(r, n, b, 1.0).map(f64::tanh);
        let mut s = gemm(&g, &g, true, false);
        s.scale_inplace(1.0 / n as f64);
        let s2 = gemm(&s, &s, false, false);
        let s3 = gemm(&s2, &s, false, false);
        let s4 = gemm(&s2, &s2, false, false);
        (g.frobenius_sq(), [s.trace(), s2.trace(), s3.trace(), s4.trace()])
    });
    let v_g = per_draw.iter().map(|p| p.0).sum::<f64>() / (draws * n * b) as f64;
    let mut out = [0.0; 4];
    for (j, o) in out.iter_mut().enumerate() {
        let t = per_draw.iter().map(|p| p.1[j]).sum::<f64>() / draws as f64;
        *o = t / (b as f64 * v_g.powi(j as i32 + 1));
    }
    out
}

/// Mean-induced spike of the raw Gram matrix `SᵀS` at init: `KBm²` for
/// elementwise σ, `B/K` for softmax.
pub fn predicted_spike(activation: &Activation, k: usize, b: usize) -> f64 {
    match activation.gaussian_mean() {
        Some(m) => (k * b) as f64 * m * m,
        None => b as f64 / k as f64,
    }
}

pub fn mc_activation_mean(activation: &Activation, samples: usize, rng: &mut RngState) -> f64 {
    (0..samples).map(|_| activation.scalar(rng.normal())).sum::<f64>() / samples as f64
}

/// Hidden activations `σ(s1 W X)` with `s1 = 1/√N`, `X ~ N(0, I)`, zero
/// bias, identity input map: preactivations are standard normal.
pub fn init_hidden_activations(
    activation: Activation,
    centered: bool,
    n: usize,
    k: usize,
    b: usize,
    rng: &mut RngState,
) -> Matrix {
    let mut m = ModelState::zeros(k, n, 1.0 / (n as f64).sqrt(), 1.0, activation, centered);
    m.w = sample_gaussian(rng, k, n, 1.0);
    m.input_map = InputMap::Identity;
    let x = sample_gaussian(rng, n, b, 1.0);
    let t = forward(&m, &x, &x);
    t.s_out(centered)
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentPrediction {
    pub name: String,
    pub predicted: f64,
    pub estimated: f64,
    pub samples: usize,
    pub relative_error: f64,
    pub tolerance: f64,
}

impl MomentPrediction {
    pub fn new(name: impl Into<String>, predicted: f64, estimated: f64, samples: usize, tolerance: f64) -> Self {
        MomentPrediction {
            name: name.into(),
            predicted,
            estimated,
            samples,
            relative_error: (estimated - predicted).abs() / predicted.abs(),
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.relative_error < self.tolerance
    }
}

/// Per-entry RMS of `ΔZ` and `ΔF` terms at init under the linear/SGD
/// proportional prescription, at each `N` of `scales`.
pub fn update_rms_across_scales(
    regime: &ScalingRegime,
    scales: &[usize],
    eta0: f64,
    rng: &RngState,
) -> Vec<[f64; 6]> {
    scales
        .iter()
        .map(|&n| {
            let d = dims_for(regime, n);
            let mut r = rng.derive(n as u64);
            let s1 = 1.0 / (d.n as f64).sqrt();
            let s2 = 1.0 / (d.k as f64).sqrt();
            let mut m = ModelState::gaussian(&mut r, d.k, d.n, s1, s2, Activation::Linear, false);
            m.b = vec![0.0; d.k];
            m.c = vec![0.0; d.n];
            let x = sample_gaussian(&mut r, d.n, d.b, 1.0);
            let y = sample_gaussian(&mut r, d.n, d.b, 1.0);
            let t = forward(&m, &x, &y);
            let lr = LearningRates {
                w: eta0 * d.k as f64,
                b: 0.0,
                c: 0.0,
            };
            let u = sgd_update_decomposition(&m, &t, &lr).rms();
            [u.dz1, u.dz2, u.df11, u.df12, u.df21, u.df22]
        })
        .collect()
}

/// The full closed-form/Monte-Carlo table run by `oracle-check`.
pub fn oracle_suite(seed: u64) -> Vec<MomentPrediction> {
    let root = RngState::new(seed);
    let mut out = Vec::new();

    let (k, n) = (64, 32);
    out.push(MomentPrediction::new(
        "trace (W^T W)^2, K=64 N=32",
        expected_trace_wtw_squared(k, n),
        mc_trace_wtw_squared(k, n, 500, &root.derive(1)),
        500,
        0.03,
    ));

    let dims = Dims { n: 64, k: 128, p: 32, b: 32 };
    let (s1, s2) = (1.0 / 8.0, 1.0 / (128f64).sqrt());
    let (est, v_g) = mc_init_output_variance(&dims, s1, s2, 200, &root.derive(2));
    out.push(MomentPrediction::new(
        "init output variance, linear N=64 K=128 B=32",
        init_output_variance_linear(&dims, s1, s2, v_g),
        est,
        200,
        0.05,
    ));

    let mut r = root.derive(3);
    let factor = sample_gaussian(&mut r, 5, 5, 1.0 / (5f64).sqrt());
    let sigma = gemm(&factor, &factor, false, true);
    let (t1, t2, t3) = power_traces(&sigma);
    out.push(MomentPrediction::new(
        "Wishart tr((Z^T Z)^3), B=5 K=7",
        wishart_trace_cubed(t1, t2, t3, 7),
        mc_wishart_trace_cubed(&factor, 7, 2000, &root.derive(4)),
        2000,
        0.05,
    ));

    let (n, b) = (512, 128);
    let mp = mp_moments(b as f64 / n as f64);
    let est = mc_mp_moments(n, b, 50, &root.derive(5));
    for j in 0..3 {
        out.push(MomentPrediction::new(
            format!("MP moment m{} at rho_B=0.25", j + 1),
            mp[j],
            est[j],
            50,
            0.05,
        ));
    }

    let act = Activation::relu(1);
    let mut r = root.derive(6);
    out.push(MomentPrediction::new(
        "ReLU1 Gaussian mean m",
        act.gaussian_mean().expect("closed form"),
        mc_activation_mean(&act, 1_000_000, &mut r),
        1_000_000,
        0.01,
    ));
    let s = init_hidden_activations(act, false, 256, 512, 128, &mut root.derive(7));
    out.push(MomentPrediction::new(
        "ReLU1 spike lambda_max(S^T S), K=512 B=128",
        predicted_spike(&act, 512, 128),
        crate::diagnostics::gram_spike_bulk(&s).lambda_max_raw,
        1,
        0.10,
    ));

    let regime = ScalingRegime::Proportional {
        kappa: 3.0,
        rho: 10.0,
        beta: 0.1,
    };
    let rms = update_rms_across_scales(&regime, &[64, 256], 0.01, &root.derive(8));
    let names = ["dZ1", "dZ2", "dF11", "dF12", "dF21", "dF22"];
    for (i, name) in names.iter().enumerate() {
        out.push(MomentPrediction::new(
            format!("{name} rms ratio N=256 vs N=64 (scale-free)"),
            1.0,
            rms[1][i] / rms[0][i],
            2,
            0.25,
        ));
    }
    out
}
