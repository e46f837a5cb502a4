//! Scalar loss families and their first two derivatives with respect to the
//! model output.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFamily {
    /// `(f - y)^2`
    Square,
    /// Binary cross-entropy on a logit, labels in `{0, 1}`.
    LogisticBce,
}

/// `(loss, d loss / df, d^2 loss / df^2)` at a single point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossDerivatives {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl LossFamily {
    pub fn name(self) -> &'static str {
        match self {
            LossFamily::Square => "square",
            LossFamily::LogisticBce => "logistic_bce",
        }
    }

    pub fn check_label(self, y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(Error::NonFinite("label".into()));
        }
        if self == LossFamily::LogisticBce && y != 0.0 && y != 1.0 {
            return Err(Error::InvalidLabel {
                label: y,
                family: self.name(),
            });
        }
        Ok(())
    }

    pub fn derivatives(self, f: f64, y: f64) -> Result<LossDerivatives> {
        if !f.is_finite() {
            return Err(Error::NonFinite("model output".into()));
        }
        self.check_label(y)?;
        Ok(self.derivatives_unchecked(f, y))
    }

    /// Same as [`derivatives`](Self::derivatives) for inputs already validated.
    #[inline]
    pub(crate) fn derivatives_unchecked(self, f: f64, y: f64) -> LossDerivatives {
        match self {
            LossFamily::Square => {
                let r = f - y;
                LossDerivatives {
                    value: r * r,
                    d1: 2.0 * r,
                    d2: 2.0,
                }
            }
            LossFamily::LogisticBce => {
                let p = sigmoid(f);
                LossDerivatives {
                    value: softplus(f) - y * f,
                    d1: p - y,
                    d2: p * (1.0 - p),
                }
            }
        }
    }

    /// Hard prediction for accuracy metrics: logit sign for BCE, nearest of
    /// `{0, 1}` for squared loss.
    pub fn predict(self, f: f64) -> f64 {
        let threshold = match self {
            LossFamily::Square => 0.5,
            LossFamily::LogisticBce => 0.0,
        };
        if f >= threshold {
            1.0
        } else {
            0.0
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}
