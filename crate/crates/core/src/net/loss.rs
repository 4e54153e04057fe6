//! Regression losses compared for quality fine-tuning, and cross-entropy for
//! the distortion-classification head. Every loss is mean-reduced.

use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use super::NetError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    Mae,
    Mape,
    Msle,
    Logcosh,
    Huber,
    CrossEntropy,
}

impl LossKind {
    pub const REGRESSION: [LossKind; 6] =
        [LossKind::Mse, LossKind::Mae, LossKind::Mape, LossKind::Msle, LossKind::Logcosh, LossKind::Huber];

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
            LossKind::Mape => "mape",
            LossKind::Msle => "msle",
            LossKind::Logcosh => "logcosh",
            LossKind::Huber => "huber",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = NetError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [LossKind::CrossEntropy]
            .into_iter()
            .chain(LossKind::REGRESSION)
            .find(|k| k.name() == s)
            .ok_or_else(|| NetError::InvalidSpec(format!("unknown loss '{s}'")))
    }
}

fn default_delta() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    #[serde(default = "default_delta")]
    pub huber_delta: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self { kind, huber_delta: 1.0 }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if !(self.huber_delta > 0.0) {
            return Err(NetError::InvalidSpec(format!("huber delta {} must be positive", self.huber_delta)));
        }
        Ok(())
    }
}

/// `ln cosh x` without overflow.
fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Loss value and its gradient with respect to `predicted`.
///
/// Regression losses average over every element. Cross-entropy expects
/// probabilities (softmax output) in `predicted` and a target distribution
/// in `target`, both `[classes]` or `[batch, classes]`, and averages over rows.
pub fn loss_value_and_grad<T: Scalar>(
    spec: &LossSpec,
    predicted: &Tensor<T>,
    target: &Tensor<T>,
) -> Result<(f64, Tensor<T>), NetError> {
    spec.validate()?;
    if predicted.shape() != target.shape() {
        return Err(NetError::Shape(format!(
            "predicted {:?} vs target {:?}",
            predicted.shape(),
            target.shape()
        )));
    }
    if predicted.is_empty() {
        return Err(NetError::Shape("empty loss input".into()));
    }
    let n = predicted.len() as f64;
    let pairs = predicted.data().iter().zip(target.data()).map(|(p, t)| (p.as_f64(), t.as_f64()));
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(predicted.len());
    match spec.kind {
        LossKind::Mse => {
            for (p, t) in pairs {
                total += (t - p).powi(2);
                grad.push(2.0 * (p - t) / n);
            }
        }
        LossKind::Mae => {
            for (p, t) in pairs {
                total += (t - p).abs();
                grad.push(sign(p - t) / n);
            }
        }
        LossKind::Mape => {
            for (p, t) in pairs {
                if t == 0.0 {
                    return Err(NetError::MapeZeroTarget);
                }
                total += ((t - p) / t).abs();
                grad.push(sign(p - t) / t.abs() / n);
            }
        }
        LossKind::Msle => {
            for (p, t) in pairs {
                if p <= -1.0 || t <= -1.0 {
                    return Err(NetError::MsleDomain);
                }
                let d = (t + 1.0).ln() - (p + 1.0).ln();
                total += d * d;
                grad.push(-2.0 * d / (p + 1.0) / n);
            }
        }
        LossKind::Logcosh => {
            for (p, t) in pairs {
                total += ln_cosh(p - t);
                grad.push((p - t).tanh() / n);
            }
        }
        LossKind::Huber => {
            let delta = spec.huber_delta;
            for (p, t) in pairs {
                let e = t - p;
                if e.abs() <= delta {
                    total += 0.5 * e * e;
                    grad.push((p - t) / n);
                } else {
                    total += delta * e.abs() - 0.5 * delta * delta;
                    grad.push(delta * sign(p - t) / n);
                }
            }
        }
        LossKind::CrossEntropy => {
            let rows = match predicted.shape() {
                [_] => 1.0,
                [b, _] => *b as f64,
                other => return Err(NetError::Shape(format!("cross-entropy expects 1-D or 2-D, got {other:?}"))),
            };
            const FLOOR: f64 = 1e-12;
            for (p, t) in pairs {
                let q = p.max(FLOOR);
                total -= t * q.ln();
                grad.push(if p > FLOOR { -t / p / rows } else { 0.0 });
            }
            return Ok((total / rows, Tensor::from_f64_slice(predicted.shape().to_vec(), &grad)));
        }
    }
    Ok((total / n, Tensor::from_f64_slice(predicted.shape().to_vec(), &grad)))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
