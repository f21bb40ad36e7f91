use serde::{Deserialize, Serialize};

use crate::gradients::LossGradients;
use crate::linalg::Matrix;
use crate::model::ModelState;

/// Learning rates for the three parameter groups.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub w: f64,
    pub b: f64,
    pub c: f64,
}

impl LearningRates {
    pub fn uniform(eta: f64) -> Self {
        LearningRates { w: eta, b: eta, c: eta }
    }

    fn check(&self) {
        assert!(
            self.w >= 0.0 && self.b >= 0.0 && self.c >= 0.0,
            "learning rates must be non-negative: {self:?}"
        );
    }
}

fn check_shapes(model: &ModelState, grads: &LossGradients) {
    assert_eq!(model.w.shape(), grads.w.shape(), "weight gradient shape");
    assert_eq!(model.b.len(), grads.b.len(), "bias gradient length");
    assert_eq!(model.c.len(), grads.c.len(), "output bias gradient length");
}

pub fn sgd_step(model: &mut ModelState, grads: &LossGradients, lr: &LearningRates) {
    lr.check();
    check_shapes(model, grads);
    model.w.axpy(-lr.w, &grads.w);
    for (p, g) in model.b.iter_mut().zip(&grads.b) {
        *p -= lr.b * g;
    }
    for (p, g) in model.c.iter_mut().zip(&grads.c) {
        *p -= lr.c * g;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Apply `CU` instead of the raw update `U` to centered models.
    pub project_update: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            project_update: false,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Updates the moving averages with `grad` and writes the step into `out`.
    fn step(&mut self, cfg: &AdamConfig, t: u64, eta: f64, grad: &[f64], out: &mut [f64]) {
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        for (((m, v), &g), u) in self.m.iter_mut().zip(&mut self.v).zip(grad).zip(out) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *u = -eta * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// Adam moment buffers for `W`, `b`, `c`.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    w: Moments,
    b: Moments,
    c: Moments,
}

impl AdamState {
    pub fn new(model: &ModelState, config: AdamConfig) -> Self {
        AdamState {
            config,
            t: 0,
            w: Moments::zeros(model.w.len()),
            b: Moments::zeros(model.b.len()),
            c: Moments::zeros(model.c.len()),
        }
    }

    /// Second-moment buffer of `W`, row-major.
    pub fn v_w(&self) -> &[f64] {
        &self.w.v
    }
}

/// The update applied by one Adam step.
#[derive(Clone, Debug)]
pub struct AdamUpdate {
    /// Raw `U` for `W`, before any projection.
    pub w: Matrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

pub fn adam_step(
    model: &mut ModelState,
    grads: &LossGradients,
    state: &mut AdamState,
    lr: &LearningRates,
) -> AdamUpdate {
    lr.check();
    check_shapes(model, grads);
    state.t += 1;
    let cfg = state.config;
    let (k, n) = model.w.shape();
    let mut uw = Matrix::zeros(k, n);
    state.w.step(&cfg, state.t, lr.w, grads.w.as_slice(), uw.as_mut_slice());
    let mut ub = vec![0.0; model.b.len()];
    state.b.step(&cfg, state.t, lr.b, &grads.b, &mut ub);
    let mut uc = vec![0.0; model.c.len()];
    state.c.step(&cfg, state.t, lr.c, &grads.c, &mut uc);

    if cfg.project_update && model.centered {
        model.w.axpy(1.0, &uw.center_columns());
    } else {
        model.w.axpy(1.0, &uw);
    }
    for (p, u) in model.b.iter_mut().zip(&ub) {
        *p += u;
    }
    for (p, u) in model.c.iter_mut().zip(&uc) {
        *p += u;
    }
    AdamUpdate { w: uw, b: ub, c: uc }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradients::{loss_gradients, sgd_update_decomposition};
    use crate::linalg::gemm;
    use crate::model::{forward, outputs, Activation};
    use crate::rng::{sample_gaussian, RngState};

    fn fixture(act: Activation, centered: bool) -> (ModelState, Matrix, Matrix) {
        let mut rng = RngState::new(21);
        let m = ModelState::gaussian(&mut rng, 8, 5, 0.5, 0.4, act, centered);
        let x = sample_gaussian(&mut rng, 5, 6, 1.0);
        let y = sample_gaussian(&mut rng, 5, 6, 1.0);
        (m, x, y)
    }

    #[test]
    fn zero_gradient_sgd_is_identity() {
        let (mut m, _, _) = fixture(Activation::relu(1), false);
        let before = m.clone();
        let g = LossGradients {
            w: Matrix::zeros(8, 5),
            w1: Matrix::zeros(8, 5),
            w2: Matrix::zeros(8, 5),
            b: vec![0.0; 8],
            c: vec![0.0; 5],
        };
        sgd_step(&mut m, &g, &LearningRates::uniform(0.5));
        assert_eq!(m, before);
    }

    #[test]
    fn unit_rate_subtracts_gradient() {
        let mut m = ModelState::zeros(3, 3, 1.0, 1.0, Activation::Linear, false);
        m.w = Matrix::filled(3, 3, 2.0);
        let g = LossGradients {
            w: Matrix::identity(3),
            w1: Matrix::identity(3),
            w2: Matrix::zeros(3, 3),
            b: vec![0.0; 3],
            c: vec![0.0; 3],
        };
        sgd_step(&mut m, &g, &LearningRates { w: 1.0, b: 0.0, c: 0.0 });
        assert_eq!(m.w[(0, 0)], 1.0);
        assert_eq!(m.w[(0, 1)], 2.0);
    }

    #[test]
    fn sgd_step_reproduces_predicted_preactivation_change() {
        let (m, x, y) = fixture(Activation::Linear, false);
        let t = forward(&m, &x, &y);
        let lr = LearningRates::uniform(1e-6);
        let d = sgd_update_decomposition(&m, &t, &lr);
        let mut moved = m.clone();
        sgd_step(&mut moved, &loss_gradients(&m, &t), &lr);
        let t2 = forward(&moved, &x, &y);
        let mut predicted = d.dz1.add(&d.dz2);
        predicted.add_col_broadcast(&d.db);
        assert!(t2.z.sub(&t.z).max_abs_diff(&predicted) < 1e-10);
    }

    #[test]
    fn first_adam_step_has_magnitude_eta() {
        let (mut m, _, _) = fixture(Activation::Linear, false);
        let mut g = loss_gradients(&m, &forward(&m, &Matrix::filled(5, 2, 0.3), &Matrix::zeros(5, 2)));
        g.w = Matrix::filled(8, 5, 0.02);
        let mut st = AdamState::new(&m, AdamConfig::default());
        let u = adam_step(&mut m, &g, &mut st, &LearningRates::uniform(0.01));
        for &v in u.w.as_slice() {
            assert!((v + 0.01 * 0.02 / (0.02 + 1e-8)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_adam_never_moves() {
        let (mut m, _, _) = fixture(Activation::relu(2), true);
        let before = m.clone();
        let g = LossGradients {
            w: Matrix::zeros(8, 5),
            w1: Matrix::zeros(8, 5),
            w2: Matrix::zeros(8, 5),
            b: vec![0.0; 8],
            c: vec![0.0; 5],
        };
        let mut st = AdamState::new(&m, AdamConfig::default());
        for _ in 0..10 {
            adam_step(&mut m, &g, &mut st, &LearningRates::uniform(0.1));
        }
        assert_eq!(m, before);
    }

    fn adam_run(c0: f64, steps: usize) -> Vec<Matrix> {
        let (mut m, x, y) = fixture(Activation::relu(1), false);
        let mut st = AdamState::new(&m, AdamConfig::default());
        let lr = LearningRates::uniform(1e-3);
        let mut out = Vec::new();
        for _ in 0..steps {
            let t = forward(&m, &x, &y);
            let mut g = loss_gradients(&m, &t);
            g.w.scale_inplace(c0);
            g.b.iter_mut().for_each(|v| *v *= c0);
            g.c.iter_mut().for_each(|v| *v *= c0);
            out.push(adam_step(&mut m, &g, &mut st, &lr).w);
        }
        out
    }

    /// Cauchy–Schwarz bound on `|m̂|/√v̂` after `t` steps.
    fn ratio_bound(cfg: &AdamConfig, t: i32) -> f64 {
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        (0..t)
            .map(|age| {
                let w = (1.0 - cfg.beta1) * cfg.beta1.powi(age) / bc1;
                let u = (1.0 - cfg.beta2) * cfg.beta2.powi(age) / bc2;
                w * w / u
            })
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn adam_updates_track_eta() {
        // |U| ≈ η entrywise is a heuristic; the hard bound is Cauchy–Schwarz.
        let eta = 1e-3;
        let cfg = AdamConfig::default();
        let mut ratios = Vec::new();
        for (t, u) in adam_run(1.0, 100).iter().enumerate() {
            let bound = ratio_bound(&cfg, t as i32 + 1);
            assert!(u.max_abs() <= eta * bound * (1.0 + 1e-12));
            ratios.extend(u.as_slice().iter().map(|v| v.abs() / eta));
        }
        ratios.sort_by(f64::total_cmp);
        assert!(ratios[ratios.len() / 2] <= 1.0);
    }

    #[test]
    fn adam_is_gradient_scale_invariant() {
        let base = adam_run(1.0, 50);
        for c0 in [10.0, 1000.0] {
            let scaled = adam_run(c0, 50);
            let worst = base
                .iter()
                .zip(&scaled)
                .map(|(a, b)| a.max_abs_diff(b))
                .fold(0.0, f64::max);
            assert!(worst < 1e-6, "c0={c0}: {worst}");
        }
    }

    #[test]
    fn centered_network_sees_projected_update() {
        let (m, x, y) = fixture(Activation::relu(1), true);
        let g = loss_gradients(&m, &forward(&m, &x, &y));
        let lr = LearningRates::uniform(0.05);
        let mut raw = m.clone();
        let mut st = AdamState::new(&raw, AdamConfig::default());
        adam_step(&mut raw, &g, &mut st, &lr);
        let mut proj = m.clone();
        let mut st2 = AdamState::new(
            &proj,
            AdamConfig {
                project_update: true,
                ..AdamConfig::default()
            },
        );
        adam_step(&mut proj, &g, &mut st2, &lr);
        assert!(outputs(&raw, &x).max_abs_diff(&outputs(&proj, &x)) < 1e-10);
        // The raw update generally carries a nonzero column mean.
        assert!(raw.w.sub(&proj.w).max_abs() > 0.0);
    }

    #[test]
    fn centered_sgd_stays_on_centered_subspace() {
        let mut rng = RngState::new(2);
        let mut m = ModelState::gaussian(&mut rng, 10, 6, 0.4, 0.3, Activation::relu(1), true);
        m.w = m.w.center_columns();
        let x = sample_gaussian(&mut rng, 6, 8, 1.0);
        let lr = LearningRates::uniform(0.05);
        for _ in 0..100 {
            let t = forward(&m, &x, &x);
            let g = loss_gradients(&m, &t);
            sgd_step(&mut m, &g, &lr);
        }
        let ones = Matrix::filled(1, 10, 1.0);
        assert!(gemm(&ones, &m.w, false, false).max_abs() < 1e-10);
    }
}
