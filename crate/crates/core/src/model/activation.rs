use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;

/// Hidden-layer nonlinearity σ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Linear,
    /// `C_p · max(z, 0)^p`.
    #[serde(rename = "relu")]
    ReluP { p: u32 },
    /// Column-wise `softmax(beta · z)`.
    Softmax { beta: f64 },
}

/// `(2p-1)!!` in exact integer arithmetic.
pub fn double_factorial_odd(p: u32) -> u128 {
    (1..=p as u128).map(|i| 2 * i - 1).product()
}

/// The ReLU^p normalizing constant, `C_p² = (2p-1)!! / 2`.
pub fn relu_constant(p: u32) -> f64 {
    assert!(p >= 1, "ReLU power must be at least 1");
    (double_factorial_odd(p) as f64 / 2.0).sqrt()
}

/// `E|z|^p` for `z ~ N(0, 1)`.
fn abs_gaussian_moment(p: u32) -> f64 {
    // E|z|^p = (p-1)!! * sqrt(2/pi) for odd p, (p-1)!! for even p.
    let df: f64 = (1..p).rev().step_by(2).map(|i| i as f64).product();
    if p % 2 == 1 {
        df * (2.0 / std::f64::consts::PI).sqrt()
    } else {
        df
    }
}

impl Activation {
    pub fn relu(p: u32) -> Self {
        Activation::ReluP { p }
    }

    pub fn softmax() -> Self {
        Activation::Softmax { beta: 1.0 }
    }

    pub fn is_elementwise(&self) -> bool {
        !matches!(self, Activation::Softmax { .. })
    }

    pub fn name(&self) -> String {
        match self {
            Activation::Linear => "linear".into(),
            Activation::ReluP { p } => format!("relu{p}"),
            Activation::Softmax { beta } if *beta == 1.0 => "softmax".into(),
            Activation::Softmax { beta } => format!("softmax(beta={beta})"),
        }
    }

    /// σ(z) for elementwise activations.
    #[inline]
    pub fn scalar(&self, z: f64) -> f64 {
        match *self {
            Activation::Linear => z,
            Activation::ReluP { p } => {
                if z > 0.0 {
                    relu_constant(p) * z.powi(p as i32)
                } else {
                    0.0
                }
            }
            Activation::Softmax { .. } => panic!("softmax is not elementwise"),
        }
    }

    /// σ'(z) for elementwise activations.
    #[inline]
    pub fn scalar_derivative(&self, z: f64) -> f64 {
        match *self {
            Activation::Linear => 1.0,
            Activation::ReluP { p } => {
                if z > 0.0 {
                    relu_constant(p) * p as f64 * z.powi(p as i32 - 1)
                } else {
                    0.0
                }
            }
            Activation::Softmax { .. } => panic!("softmax is not elementwise"),
        }
    }

    /// Neuron-wise antiderivative Φ with Φ' = σ.
    pub fn scalar_antiderivative(&self, z: f64) -> f64 {
        match *self {
            Activation::Linear => 0.5 * z * z,
            Activation::ReluP { p } => {
                if z > 0.0 {
                    relu_constant(p) * z.powi(p as i32 + 1) / (p as f64 + 1.0)
                } else {
                    0.0
                }
            }
            Activation::Softmax { .. } => panic!("softmax is not elementwise"),
        }
    }

    /// `E[σ(z)]` for `z ~ N(0, 1)`, when it has a closed form.
    pub fn gaussian_mean(&self) -> Option<f64> {
        match *self {
            Activation::Linear => Some(0.0),
            Activation::ReluP { p } => Some(relu_constant(p) * 0.5 * abs_gaussian_moment(p)),
            Activation::Softmax { .. } => None,
        }
    }

    /// `E[σ(z)²]` for `z ~ N(0, 1)`.
    pub fn gaussian_second_moment(&self) -> Option<f64> {
        match *self {
            Activation::Linear => Some(1.0),
            Activation::ReluP { p } => {
                let c2 = relu_constant(p).powi(2);
                Some(c2 * 0.5 * double_factorial_odd(p) as f64)
            }
            Activation::Softmax { .. } => None,
        }
    }

    /// Applies σ column by column. Softmax subtracts each column's maximum
    /// before exponentiating.
    pub fn apply(&self, z: &Matrix) -> Matrix {
        match *self {
            Activation::Softmax { beta } => {
                let mut s = z.clone();
                for c in 0..z.cols() {
                    let col = softmax(&z.col(c), beta);
                    s.set_col(c, &col);
                }
                s
            }
            _ => z.map(|x| self.scalar(x)),
        }
    }

    /// Elementwise derivative matrix `S'`; `None` for softmax.
    pub fn derivative(&self, z: &Matrix) -> Option<Matrix> {
        if self.is_elementwise() {
            Some(z.map(|x| self.scalar_derivative(x)))
        } else {
            None
        }
    }
}

/// `softmax(beta · z)` with max subtraction.
pub fn softmax(z: &[f64], beta: f64) -> Vec<f64> {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(beta * x));
    let mut e: Vec<f64> = z.iter().map(|&x| (beta * x - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    for x in &mut e {
        *x /= sum;
    }
    e
}

/// `(1/beta) log Σ exp(beta z)`, computed stably.
pub fn log_sum_exp(z: &[f64], beta: f64) -> f64 {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(beta * x));
    let sum: f64 = z.iter().map(|&x| (beta * x - max).exp()).sum();
    (max + sum.ln()) / beta
}

/// Softmax Jacobian-vector product `J v` with `J = beta (diag σ - σσᵀ)`,
/// where `sigma` is the softmax output.
#[inline]
pub fn softmax_jvp(sigma: &[f64], v: &[f64], beta: f64, out: &mut [f64]) {
    let sv: f64 = sigma.iter().zip(v).map(|(s, x)| s * x).sum();
    for ((o, &s), &x) in out.iter_mut().zip(sigma).zip(v) {
        *o = beta * s * (x - sv);
    }
}

/// Column-wise activation Jacobian applied to `v`: `S' ⊙ v` for elementwise
/// activations, `J_μ v_μ` per column for softmax.
pub fn jacobian_apply(
    activation: &Activation,
    s: &Matrix,
    s_prime: Option<&Matrix>,
    v: &Matrix,
) -> Matrix {
    match (activation, s_prime) {
        (Activation::Softmax { beta }, _) => {
            let (k, b) = v.shape();
            let mut out = Matrix::zeros(k, b);
            let mut buf = vec![0.0; k];
            for c in 0..b {
                softmax_jvp(&s.col(c), &v.col(c), *beta, &mut buf);
                out.set_col(c, &buf);
            }
            out
        }
        (_, Some(sp)) => sp.hadamard(v),
        (_, None) => panic!("elementwise activation without S'"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    #[test]
    fn relu_constants_follow_double_factorial() {
        assert_eq!(double_factorial_odd(1), 1);
        assert_eq!(double_factorial_odd(2), 3);
        assert_eq!(double_factorial_odd(3), 15);
        assert_eq!(double_factorial_odd(10), 654_729_075);
        assert!((relu_constant(1).powi(2) - 0.5).abs() < 1e-15);
        assert!((relu_constant(2).powi(2) - 1.5).abs() < 1e-15);
        assert!((relu_constant(3).powi(2) - 7.5).abs() < 1e-15);
    }

    #[test]
    fn relu_moments_match_monte_carlo() {
        let mut rng = RngState::new(77);
        let n = 1_000_000;
        let z: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        for p in 1..=3 {
            let act = Activation::relu(p);
            let m1 = z.iter().map(|&x| act.scalar(x)).sum::<f64>() / n as f64;
            let m2 = z.iter().map(|&x| act.scalar(x).powi(2)).sum::<f64>() / n as f64;
            let want1 = act.gaussian_mean().unwrap();
            let want2 = act.gaussian_second_moment().unwrap();
            assert!((m1 / want1 - 1.0).abs() < 0.01, "p={p}: mean {m1} vs {want1}");
            assert!((m2 / want2 - 1.0).abs() < 0.02, "p={p}: E[σ²] {m2} vs {want2}");
        }
        // p = 1: m = C_1 / sqrt(2π) = (1/√2)(1/√(2π))
        let m = Activation::relu(1).gaussian_mean().unwrap();
        assert!((m - (0.5f64).sqrt() / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn softmax_columns_sum_to_one_and_survive_large_logits() {
        let z = Matrix::from_rows(&[&[1000.0, -3.0], &[999.0, 0.5], &[-1000.0, 2.0]]);
        let s = Activation::softmax().apply(&z);
        assert!(s.is_finite());
        for c in s.col_sums() {
            assert!((c - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn softmax_jacobian_annihilates_ones() {
        let sigma = softmax(&[0.3, -1.2, 2.0, 0.0, 0.7], 1.0);
        let k = sigma.len();
        // Materialize J column by column through the JVP.
        let mut jac = Matrix::zeros(k, k);
        let mut out = vec![0.0; k];
        for j in 0..k {
            let mut e = vec![0.0; k];
            e[j] = 1.0;
            softmax_jvp(&sigma, &e, 1.0, &mut out);
            jac.set_col(j, &out);
        }
        for r in jac.row_sums() {
            assert!(r.abs() < 1e-14);
        }
        for c in jac.col_sums() {
            assert!(c.abs() < 1e-14);
        }
        let norm2: f64 = sigma.iter().map(|s| s * s).sum();
        assert!((jac.trace() - (1.0 - norm2)).abs() < 1e-12);
        // tr(CJC) = tr(J) because CJ = JC = J
        let cj = jac.center_columns().transpose().center_columns();
        assert!((cj.trace() - jac.trace()).abs() < 1e-12);
    }

    #[test]
    fn antiderivatives_differentiate_to_activation() {
        for act in [Activation::Linear, Activation::relu(1), Activation::relu(3)] {
            for &z in &[-1.3, 0.2, 0.9, 2.5] {
                let h = 1e-6;
                let fd = (act.scalar_antiderivative(z + h) - act.scalar_antiderivative(z - h))
                    / (2.0 * h);
                assert!((fd - act.scalar(z)).abs() < 1e-6, "{act:?} at {z}");
            }
        }
    }
}
