//! Hard Bernoulli masks drawn through the Gumbel-max trick, with the
//! straight-through factor used on the backward pass.

use rand::Rng;
use rand_distr::{Distribution, Gumbel};

use crate::loss::sigmoid;
use crate::{Error, Result};

/// Keep probabilities are clamped to this distance from `{0, 1}` before the
/// `1 / (s (1 - s))` factor is formed.
pub const LOGIT_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSample {
    /// Hard mask, every entry exactly 0.0 or 1.0.
    pub m: Vec<f64>,
    /// `logit(s_i) + g1 - g0`; `m_i = 1` iff this is `>= 0`.
    pub soft_logits: Vec<f64>,
    pub temperature: f64,
}

impl MaskSample {
    /// The mask used when sparsity is disabled.
    pub fn all_ones(n: usize) -> Self {
        Self {
            m: vec![1.0; n],
            soft_logits: vec![f64::INFINITY; n],
            temperature: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.m.iter().filter(|&&v| v == 1.0).count()
    }

    /// `d sigma(soft_i / temperature) / d s_i` with the logit derivative
    /// clamped; zero when `s_i` sits exactly on `{0, 1}`.
    pub fn straight_through_factor(&self, i: usize, s_i: f64) -> f64 {
        if s_i <= 0.0 || s_i >= 1.0 || !self.soft_logits[i].is_finite() {
            return 0.0;
        }
        let p = sigmoid(self.soft_logits[i] / self.temperature);
        let s = s_i.clamp(LOGIT_CLAMP, 1.0 - LOGIT_CLAMP);
        p * (1.0 - p) / self.temperature / (s * (1.0 - s))
    }
}

/// `m_i = 1[log(s_i / (1 - s_i)) + g1 - g0 >= 0]` with independent standard
/// Gumbel `g0, g1`. Two draws are consumed per coordinate even on the
/// boundary, so the stream stays aligned whatever `s` is.
pub fn sample_mask<R: Rng + ?Sized>(s: &[f64], temperature: f64, rng: &mut R) -> Result<MaskSample> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::param(format!("temperature must be positive, got {temperature}")));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("keep probabilities".into()));
    }
    let gumbel = Gumbel::new(0.0, 1.0).expect("standard Gumbel parameters are valid");
    let mut m = Vec::with_capacity(s.len());
    let mut soft = Vec::with_capacity(s.len());
    for &si in s {
        let g0 = gumbel.sample(rng);
        let g1 = gumbel.sample(rng);
        let z = if si >= 1.0 {
            f64::INFINITY
        } else if si <= 0.0 {
            f64::NEG_INFINITY
        } else {
            si.ln() - (-si).ln_1p() + g1 - g0
        };
        m.push(if z >= 0.0 { 1.0 } else { 0.0 });
        soft.push(z);
    }
    Ok(MaskSample {
        m,
        soft_logits: soft,
        temperature,
    })
}
