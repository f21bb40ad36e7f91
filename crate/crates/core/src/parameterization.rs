//! Scale prescriptions: how `s1`, `s2` and the weight learning rate depend on
//! `N` and `K` so that hyperparameters tuned at one scale transfer to others.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Activation;
use crate::optim::LearningRates;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub k: usize,
    pub p: usize,
    pub b: usize,
}

impl Dims {
    pub fn kappa(&self) -> f64 {
        self.k as f64 / self.n as f64
    }
    pub fn rho(&self) -> f64 {
        self.p as f64 / self.n as f64
    }
    pub fn beta(&self) -> f64 {
        self.b as f64 / self.p as f64
    }
    pub fn rho_b(&self) -> f64 {
        self.b as f64 / self.n as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalingRegime {
    /// `K = κN`, `P = ρN`, `B = βP`, scanned over `N`.
    Proportional { kappa: f64, rho: f64, beta: f64 },
    /// `N`, `P` fixed, scanned over `K`.
    KOnly { n: usize, p: usize, beta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Ceiling that forgives binary representation error in products such as
/// `0.1 × 1280`.
fn ceil_count(x: f64) -> usize {
    (x * (1.0 - 1e-12)).ceil().max(0.0) as usize
}

/// Dimensions at scale `scale`, which is `N` for the proportional regime
/// and `K` for the K-only regime.
pub fn dims_for(regime: &ScalingRegime, scale: usize) -> Dims {
    assert!(scale >= 1, "scale must be at least 1");
    let (n, k, p, beta) = match *regime {
        ScalingRegime::Proportional { kappa, rho, beta } => {
            assert!(kappa > 0.0 && rho > 0.0 && beta > 0.0, "ratios must be positive");
            (scale, ceil_count(kappa * scale as f64), ceil_count(rho * scale as f64), beta)
        }
        ScalingRegime::KOnly { n, p, beta } => {
            assert!(n >= 1 && p >= 1 && beta > 0.0, "invalid K-only regime");
            (n, scale, p, beta)
        }
    };
    let b = ceil_count(beta * p as f64).clamp(1, p);
    Dims { n, k, p, b }
}

/// `coeff · N^n_exp · K^k_exp`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerLaw {
    pub coeff: f64,
    pub n_exp: f64,
    pub k_exp: f64,
}

impl PowerLaw {
    const fn new(n_exp: f64, k_exp: f64) -> Self {
        PowerLaw { coeff: 1.0, n_exp, k_exp }
    }

    pub fn eval(&self, dims: &Dims) -> f64 {
        self.coeff * (dims.n as f64).powf(self.n_exp) * (dims.k as f64).powf(self.k_exp)
    }
}

/// Which prescription produced a [`Prescription`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Row {
    ProportionalElementwiseSgd,
    ProportionalElementwiseAdam,
    ProportionalSoftmaxAdam,
    KOnlyElementwiseSgd,
    KOnlyElementwiseAdam,
    KOnlySoftmaxAdam,
    /// Softmax with SGD, only reachable through the explicit override.
    SoftmaxSgdOverride,
}

/// Symbolic scaling rule; `eta_w` multiplies `η₀`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rule {
    pub row: Row,
    pub s1: PowerLaw,
    pub s2: PowerLaw,
    pub eta_w: PowerLaw,
}

pub fn rule(
    regime: &ScalingRegime,
    activation: &Activation,
    optimizer: OptimizerKind,
    override_softmax_sgd: bool,
) -> Result<Rule> {
    use OptimizerKind::*;
    let proportional = matches!(regime, ScalingRegime::Proportional { .. });
    let softmax = !activation.is_elementwise();
    let s1 = PowerLaw::new(-0.5, 0.0);
    let one = PowerLaw::new(0.0, 0.0);
    let k = PowerLaw::new(0.0, 1.0);
    let (row, s2, eta_w) = match (proportional, softmax, optimizer) {
        (true, false, Sgd) => (Row::ProportionalElementwiseSgd, PowerLaw::new(0.0, -0.5), k),
        (true, false, Adam) => (Row::ProportionalElementwiseAdam, PowerLaw::new(0.0, -0.5), one),
        (true, true, Adam) => (Row::ProportionalSoftmaxAdam, PowerLaw::new(0.0, 0.5), one),
        (false, false, Sgd) => (Row::KOnlyElementwiseSgd, PowerLaw::new(0.0, -1.0), k),
        (false, false, Adam) => (Row::KOnlyElementwiseAdam, PowerLaw::new(0.0, -1.0), one),
        (false, true, Adam) => (Row::KOnlySoftmaxAdam, one, one),
        (_, true, Sgd) if !override_softmax_sgd => return Err(Error::SoftmaxSgdRefused),
        (true, true, Sgd) => (Row::SoftmaxSgdOverride, PowerLaw::new(0.0, 0.5), k),
        (false, true, Sgd) => (Row::SoftmaxSgdOverride, PowerLaw::new(0.5, 0.0), k),
    };
    Ok(Rule { row, s1, s2, eta_w })
}

/// Base learning rates and the order-one constants of the prescription.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseRates {
    pub eta0: f64,
    /// Defaults to `eta0`.
    pub eta_b0: Option<f64>,
    /// Defaults to `eta0`.
    pub eta_c0: Option<f64>,
    pub s1_0: f64,
    pub s2_0: f64,
}

impl BaseRates {
    pub fn new(eta0: f64) -> Self {
        BaseRates {
            eta0,
            eta_b0: None,
            eta_c0: None,
            s1_0: 1.0,
            s2_0: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prescription {
    pub s1: f64,
    pub s2: f64,
    pub lr: LearningRates,
    pub row: Row,
}

pub fn prescription(
    regime: &ScalingRegime,
    activation: &Activation,
    optimizer: OptimizerKind,
    dims: &Dims,
    base: &BaseRates,
    override_softmax_sgd: bool,
) -> Result<Prescription> {
    let r = rule(regime, activation, optimizer, override_softmax_sgd)?;
    Ok(Prescription {
        s1: base.s1_0 * r.s1.eval(dims),
        s2: base.s2_0 * r.s2.eval(dims),
        lr: LearningRates {
            w: base.eta0 * r.eta_w.eval(dims),
            b: base.eta_b0.unwrap_or(base.eta0),
            c: base.eta_c0.unwrap_or(base.eta0),
        },
        row: r.row,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-15 * b.abs()
    }

    const PROP: ScalingRegime = ScalingRegime::Proportional {
        kappa: 3.0,
        rho: 10.0,
        beta: 0.1,
    };
    const KONLY: ScalingRegime = ScalingRegime::KOnly {
        n: 128,
        p: 256,
        beta: 0.1,
    };

    #[test]
    fn dims_examples() {
        assert_eq!(dims_for(&PROP, 128), Dims { n: 128, k: 384, p: 1280, b: 128 });
        let fig4 = ScalingRegime::Proportional {
            kappa: 2.0,
            rho: 5.0,
            beta: 0.1,
        };
        assert_eq!(dims_for(&fig4, 256), Dims { n: 256, k: 512, p: 1280, b: 128 });
        assert_eq!(dims_for(&KONLY, 1024), Dims { n: 128, k: 1024, p: 256, b: 26 });
        let tiny = ScalingRegime::Proportional {
            kappa: 1.0,
            rho: 1.0,
            beta: 0.01,
        };
        assert_eq!(dims_for(&tiny, 3).b, 1);
    }

    #[test]
    fn table_rows_symbolically() {
        use OptimizerKind::*;
        let relu = Activation::relu(1);
        let sm = Activation::softmax();
        // (regime, activation, optimizer) → (s1, s2, ηW/η0) as (N-exp, K-exp).
        let table: [(ScalingRegime, Activation, OptimizerKind, [(f64, f64); 3]); 6] = [
            (PROP, relu, Sgd, [(-0.5, 0.0), (0.0, -0.5), (0.0, 1.0)]),
            (PROP, relu, Adam, [(-0.5, 0.0), (0.0, -0.5), (0.0, 0.0)]),
            (PROP, sm, Adam, [(-0.5, 0.0), (0.0, 0.5), (0.0, 0.0)]),
            (KONLY, relu, Sgd, [(-0.5, 0.0), (0.0, -1.0), (0.0, 1.0)]),
            (KONLY, relu, Adam, [(-0.5, 0.0), (0.0, -1.0), (0.0, 0.0)]),
            (KONLY, sm, Adam, [(-0.5, 0.0), (0.0, 0.0), (0.0, 0.0)]),
        ];
        for (regime, act, opt, want) in table {
            for a in [act, Activation::Linear, Activation::relu(3)] {
                if a.is_elementwise() != act.is_elementwise() {
                    continue;
                }
                let r = rule(&regime, &a, opt, false).unwrap();
                let got = [r.s1, r.s2, r.eta_w].map(|p| (p.n_exp, p.k_exp));
                assert_eq!(got, want, "{regime:?} {a:?} {opt:?}");
                assert!([r.s1, r.s2, r.eta_w].iter().all(|p| p.coeff == 1.0));
            }
        }
    }

    #[test]
    fn concrete_values() {
        let regime = ScalingRegime::Proportional {
            kappa: 3.0,
            rho: 10.0,
            beta: 0.1,
        };
        let dims = dims_for(&regime, 512);
        assert_eq!(dims.k, 1536);
        let p = prescription(
            &regime,
            &Activation::relu(1),
            OptimizerKind::Sgd,
            &dims,
            &BaseRates::new(0.005),
            false,
        )
        .unwrap();
        assert!(close(p.s1, 1.0 / 512f64.sqrt()));
        assert!(close(p.s2, 1.0 / 1536f64.sqrt()));
        assert!((p.lr.w - 7.68).abs() < 1e-12);
        assert_eq!((p.lr.b, p.lr.c), (0.005, 0.005));

        let p = prescription(
            &regime,
            &Activation::softmax(),
            OptimizerKind::Adam,
            &dims,
            &BaseRates::new(0.08),
            false,
        )
        .unwrap();
        assert_eq!(p.lr.w, 0.08);
        assert!(close(p.s2, 1536f64.sqrt()));

        let d = dims_for(&KONLY, 4096);
        let p = prescription(
            &KONLY,
            &Activation::softmax(),
            OptimizerKind::Adam,
            &d,
            &BaseRates::new(0.01),
            false,
        )
        .unwrap();
        assert_eq!(p.s2, 1.0);
    }

    #[test]
    fn softmax_sgd_is_refused_without_override() {
        let d = dims_for(&PROP, 64);
        let err = prescription(
            &PROP,
            &Activation::softmax(),
            OptimizerKind::Sgd,
            &d,
            &BaseRates::new(0.01),
            false,
        )
        .unwrap_err();
        assert!(matches!(err, Error::SoftmaxSgdRefused));
        assert!(err.to_string().contains("row amplification"));
        let p = prescription(
            &PROP,
            &Activation::softmax(),
            OptimizerKind::Sgd,
            &d,
            &BaseRates::new(0.01),
            true,
        )
        .unwrap();
        assert_eq!(p.row, Row::SoftmaxSgdOverride);
        assert!((p.lr.w - 0.01 * d.k as f64).abs() < 1e-15);
        assert!(close(p.s2, (d.k as f64).sqrt()));
    }

    #[test]
    fn order_one_constants_scale_through() {
        let d = dims_for(&PROP, 64);
        let mut base = BaseRates::new(0.1);
        base.s1_0 = 2.0;
        base.s2_0 = 0.5;
        base.eta_b0 = Some(0.0);
        let p = prescription(&PROP, &Activation::Linear, OptimizerKind::Adam, &d, &base, false).unwrap();
        assert!(close(p.s1, 2.0 / 8.0));
        assert!(close(p.s2, 0.5 / (d.k as f64).sqrt()));
        assert_eq!(p.lr.b, 0.0);
        assert_eq!(p.lr.c, 0.1);
    }
}
