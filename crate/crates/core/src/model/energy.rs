//! Effective energy and the continuous-time dynamics it drives.
//!
//! ```text
//! E(x) = −L_h[h] + (1/s2) Σ g(x_i)(x_i − c_i) − L_x,   h = s1 W̃ g(x) + b̃
//! ```
//!
//! with `L_x = (1/s2) Σ G(x_i)`, `G' = g`, and `L_h` chosen so `σ = s1 ∂L_h/∂h`.
//! Along `ẋ = −x + s2 W̃ᵀ σ_C(h) + c` one has `∂E/∂x_i = −g'(x_i) ẋ_i / s2`,
//! so `E` never increases for monotone `g`.

use super::{centering_matrix_apply_vec, log_sum_exp, outputs, Activation, ModelState};
use crate::linalg::{matvec, Matrix};

fn hidden_field(model: &ModelState, x: &[f64], w_eff: &Matrix) -> Vec<f64> {
    let g: Vec<f64> = x.iter().map(|&v| model.input_map.apply(v)).collect();
    let mut h = matvec(w_eff, &g, false);
    for (hv, bv) in h.iter_mut().zip(model.effective_bias()) {
        *hv = model.s1 * *hv + bv;
    }
    h
}

fn hidden_lagrangian(model: &ModelState, h: &[f64]) -> f64 {
    match model.activation {
        Activation::Softmax { beta } => log_sum_exp(h, beta) / model.s1,
        act => h.iter().map(|&v| act.scalar_antiderivative(v)).sum::<f64>() / model.s1,
    }
}

pub fn effective_energy(model: &ModelState, x: &[f64]) -> f64 {
    assert_eq!(x.len(), model.visible(), "state has wrong dimension");
    let w_eff = model.effective_weights();
    let h = hidden_field(model, x, &w_eff);
    let gmap = model.input_map;
    let coupling: f64 = x
        .iter()
        .zip(&model.c)
        .map(|(&xi, &ci)| gmap.apply(xi) * (xi - ci))
        .sum();
    let lx: f64 = x.iter().map(|&xi| gmap.antiderivative(xi)).sum();
    -hidden_lagrangian(model, &h) + (coupling - lx) / model.s2
}

/// Velocity `−x + s2 W̃ᵀ σ_C(h) + c`.
pub fn velocity(model: &ModelState, x: &[f64]) -> Vec<f64> {
    let w_eff = model.effective_weights();
    let h = hidden_field(model, x, &w_eff);
    let mut s = match model.activation {
        Activation::Softmax { beta } => super::softmax(&h, beta),
        act => h.iter().map(|&v| act.scalar(v)).collect(),
    };
    if model.centered {
        s = centering_matrix_apply_vec(&s);
    }
    let back = matvec(&w_eff, &s, true);
    x.iter()
        .zip(back)
        .zip(&model.c)
        .map(|((&xi, bi), &ci)| -xi + model.s2 * bi + ci)
        .collect()
}

/// One explicit Euler step. `dt = 1` gives the network map `f(x)`.
pub fn dynamics_step(model: &ModelState, x: &[f64], dt: f64) -> Vec<f64> {
    assert!((0.0..=1.0).contains(&dt), "dt must lie in [0, 1], got {dt}");
    let v = velocity(model, x);
    x.iter().zip(v).map(|(&xi, vi)| xi + dt * vi).collect()
}

/// Euler step applied to every column of `X`.
pub fn dynamics_step_batch(model: &ModelState, x: &Matrix, dt: f64) -> Matrix {
    assert!((0.0..=1.0).contains(&dt), "dt must lie in [0, 1], got {dt}");
    let f = outputs(model, x);
    x.zip_map(&f, |xi, fi| xi + dt * (fi - xi))
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    /// `steps + 1` states, starting with `x0`.
    pub states: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
}

impl Trajectory {
    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory is never empty")
    }
}

pub fn run_dynamics(model: &ModelState, x0: &[f64], dt: f64, steps: usize) -> Trajectory {
    assert!(steps >= 1, "need at least one step");
    let mut states = Vec::with_capacity(steps + 1);
    let mut energies = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    energies.push(effective_energy(model, &x));
    states.push(x.clone());
    for _ in 0..steps {
        x = dynamics_step(model, &x, dt);
        energies.push(effective_energy(model, &x));
        states.push(x.clone());
    }
    Trajectory { states, energies }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{InputMap, ModelState};
    use crate::rng::{gaussian_vec, RngState};

    fn model(act: Activation, centered: bool, seed: u64) -> ModelState {
        let (k, n) = (12, 6);
        let mut rng = RngState::new(seed);
        ModelState::gaussian(
            &mut rng,
            k,
            n,
            1.0 / (n as f64).sqrt(),
            1.0 / (k as f64).sqrt(),
            act,
            centered,
        )
    }

    #[test]
    fn zero_state_softmax_energy() {
        let mut m = model(Activation::Softmax { beta: 2.0 }, false, 1);
        m.b = vec![0.0; 12];
        m.c = vec![0.0; 6];
        let e = effective_energy(&m, &[0.0; 6]);
        let want = -(12f64).ln() / (2.0 * m.s1);
        assert!((e - want).abs() < 1e-12);
        m.s1 = 1.0;
        assert!((effective_energy(&m, &[0.0; 6]) + (12f64).ln() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn lagrangians_generate_activations() {
        let m = model(Activation::relu(2), false, 2);
        let h = [0.3, -0.2, 1.1];
        for (i, &hi) in h.iter().enumerate() {
            let eps = 1e-6;
            let mut hp = h;
            let mut hm = h;
            hp[i] += eps;
            hm[i] -= eps;
            let fd = (hidden_lagrangian(&m, &hp) - hidden_lagrangian(&m, &hm)) / (2.0 * eps);
            assert!((m.s1 * fd - m.activation.scalar(hi)).abs() < 1e-6);
        }
        let sm = model(Activation::softmax(), false, 3);
        let sig = crate::model::softmax(&h, 1.0);
        for i in 0..3 {
            let eps = 1e-6;
            let mut hp = h;
            let mut hm = h;
            hp[i] += eps;
            hm[i] -= eps;
            let fd = (hidden_lagrangian(&sm, &hp) - hidden_lagrangian(&sm, &hm)) / (2.0 * eps);
            assert!((sm.s1 * fd - sig[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn gradient_along_velocity_matches_analytic() {
        for act in [Activation::Linear, Activation::relu(1), Activation::softmax()] {
            for centered in [false, true] {
                let m = model(act, centered, 4);
                let x = gaussian_vec(&mut RngState::new(9), 6, 1.0);
                let v = velocity(&m, &x);
                let eps = 1e-5;
                let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
                let xm: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - eps * b).collect();
                let fd = (effective_energy(&m, &xp) - effective_energy(&m, &xm)) / (2.0 * eps);
                let analytic: f64 = x
                    .iter()
                    .zip(&v)
                    .map(|(&xi, &vi)| -m.input_map.derivative(xi) * vi * vi / m.s2)
                    .sum();
                assert!(
                    (fd - analytic).abs() < 1e-6 * analytic.abs().max(1e-3),
                    "{act:?} {centered}: {fd} vs {analytic}"
                );
            }
        }
    }

    #[test]
    fn centered_energy_ignores_column_shifts() {
        let m = model(Activation::relu(1), true, 5);
        let mut shifted = m.clone();
        for a in 0..12 {
            shifted.w.row_mut(a)[3] -= 2.0;
        }
        let x = gaussian_vec(&mut RngState::new(1), 6, 1.0);
        assert!((effective_energy(&m, &x) - effective_energy(&shifted, &x)).abs() < 1e-12);
    }

    #[test]
    fn unit_step_is_the_network_map() {
        let m = model(Activation::relu(1), true, 6);
        let x = gaussian_vec(&mut RngState::new(2), 6, 1.0);
        let f = outputs(&m, &Matrix::column(&x));
        let step = dynamics_step(&m, &x, 1.0);
        for i in 0..6 {
            assert!((f[(i, 0)] - step[i]).abs() < 1e-12);
        }
        let traj = run_dynamics(&m, &x, 1.0, 1);
        assert_eq!(traj.last(), &step[..]);
        assert_eq!(dynamics_step(&m, &x, 0.0), x);
        let batch = dynamics_step_batch(&m, &Matrix::column(&x), 1.0);
        assert!(batch.max_abs_diff(&f) < 1e-15);
    }

    #[test]
    fn fixed_point_stays_put() {
        let mut m = model(Activation::Linear, false, 7);
        m.w = Matrix::zeros(12, 6);
        let c = m.c.clone();
        for dt in [0.1, 0.5, 1.0] {
            let x = dynamics_step(&m, &c, dt);
            assert!(x.iter().zip(&c).all(|(a, b)| (a - b).abs() < 1e-15));
        }
    }

    #[test]
    fn zero_weights_relax_geometrically() {
        let mut m = model(Activation::relu(1), false, 8);
        m.w = Matrix::zeros(12, 6);
        let x0 = gaussian_vec(&mut RngState::new(3), 6, 2.0);
        let dt = 0.2;
        let traj = run_dynamics(&m, &x0, dt, 10);
        for (t, x) in traj.states.iter().enumerate() {
            for i in 0..6 {
                let want = m.c[i] + (1.0 - dt).powi(t as i32) * (x0[i] - m.c[i]);
                assert!((x[i] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn small_step_dynamics_descend() {
        for act in [Activation::relu(1), Activation::softmax()] {
            for centered in [false, true] {
                let m = model(act, centered, 9);
                let mut rng = RngState::new(10);
                for _ in 0..5 {
                    let x0 = gaussian_vec(&mut rng, 6, 1.0);
                    let e = run_dynamics(&m, &x0, 0.01, 100).energies;
                    assert!(e.windows(2).all(|w| w[1] <= w[0] + 1e-10));
                }
            }
        }
    }

    #[test]
    fn identity_input_map_energy_consistent() {
        let mut m = model(Activation::Linear, false, 11);
        m.input_map = InputMap::Identity;
        let x = gaussian_vec(&mut RngState::new(4), 6, 1.0);
        let v = velocity(&m, &x);
        let eps = 1e-5;
        let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
        let xm: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - eps * b).collect();
        let fd = (effective_energy(&m, &xp) - effective_energy(&m, &xm)) / (2.0 * eps);
        let analytic: f64 = -v.iter().map(|vi| vi * vi).sum::<f64>() / m.s2;
        assert!((fd - analytic).abs() < 1e-6 * analytic.abs().max(1e-3));
    }
}
