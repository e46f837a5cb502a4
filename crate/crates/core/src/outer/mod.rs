//! Outer loop: learns per-sample weights `w` and keep probabilities `s` so
//! that a model trained on the reweighted training set minimises a robust
//! risk on the validation set.

mod adam;
mod export;
mod hypergrad;
mod mask;
mod projection;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use export::{parse_weight_records, write_weight_records, WeightFileHeader, WeightRecord};
pub use hypergrad::{contraction, hypergrad_s, hypergrad_w, Contraction};
pub use mask::{sample_mask, MaskSample, LOGIT_CLAMP};
pub use projection::{project_capped_box_simplex, project_nonneg};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::inner::{self, InnerConfig};
use crate::loss::LossFamily;
use crate::model::{self, ModelSpec};
use crate::risks::{self, AnnotatedDataset, RiskSpec};
use crate::seed::derive_seed;
use crate::{Error, Result};

const MASK_STREAM: u64 = 0x6d61_736b;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuterConfig {
    pub iterations: usize,
    pub lr_w: f64,
    pub lr_s: f64,
    pub risk: RiskSpec,
    pub temperature: f64,
    pub sparsity_enabled: bool,
    pub seed: u64,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            lr_w: 0.25,
            lr_s: 0.05,
            risk: RiskSpec::erm(),
            temperature: 1.0,
            sparsity_enabled: true,
            seed: 0,
        }
    }
}

impl OuterConfig {
    /// `iterations = 0` is accepted and means "return the initialisation".
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lr_w", self.lr_w), ("lr_s", self.lr_s), ("temperature", self.temperature)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        self.risk.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReweightState {
    pub w: Vec<f64>,
    pub s: Vec<f64>,
    pub budget: f64,
    pub adam_w: AdamState,
    pub adam_s: AdamState,
}

impl ReweightState {
    /// `w = 1`, `s = budget / n` (or `s = 1` when sparsity is off).
    pub fn init(n: usize, budget: f64, sparsity_enabled: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("training set is empty"));
        }
        let s0 = if sparsity_enabled {
            if !(budget > 0.0 && budget <= n as f64) {
                return Err(Error::param(format!("budget must lie in (0, {n}], got {budget}")));
            }
            budget / n as f64
        } else {
            1.0
        };
        Ok(Self {
            w: vec![1.0; n],
            s: vec![s0; n],
            budget: if sparsity_enabled { budget } else { n as f64 },
            adam_w: AdamState::new(n),
            adam_s: AdamState::new(n),
        })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// `w ⪰ 0`, `0 ⪯ s ⪯ 1`, `sum(s) <= budget + 1e-9`.
    pub fn is_feasible(&self) -> bool {
        self.w.iter().all(|&v| v >= 0.0)
            && self.s.iter().all(|&v| (0.0..=1.0).contains(&v))
            && self.s.iter().sum::<f64>() <= self.budget + 1e-9
    }

    /// Fraction of `s_i` within 0.1 of 0 or 1.
    pub fn s_saturation(&self) -> f64 {
        let sat = self.s.iter().filter(|&&v| v <= 0.1 || v >= 0.9).count();
        sat as f64 / self.s.len() as f64
    }

    /// `1[s_i >= 0.5]`.
    pub fn threshold_mask(&self) -> Vec<f64> {
        self.s.iter().map(|&v| if v >= 0.5 { 1.0 } else { 0.0 }).collect()
    }
}

/// `w / mean(w)`; returned unchanged when the mean is zero.
pub fn mean_normalized(w: &[f64]) -> Vec<f64> {
    let mean = w.iter().sum::<f64>() / w.len().max(1) as f64;
    if mean > 0.0 {
        w.iter().map(|v| v / mean).collect()
    } else {
        w.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub val_risk: f64,
    pub val_accuracy: f64,
    pub inner_loss: f64,
    pub w_mean: f64,
    pub w_std: f64,
    pub w_min: f64,
    pub w_max: f64,
    pub w_norm: f64,
    pub s_sum: f64,
    pub s_saturation: f64,
    pub mask_kept: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoresetEntry {
    pub index: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapleOutput {
    pub state: ReweightState,
    /// Samples with `s_i >= 0.5` and their weights.
    pub coreset: Vec<CoresetEntry>,
    pub threshold_mask: Vec<f64>,
    /// One draw from the final `s`, recorded next to the thresholded mask.
    pub sampled_mask: Vec<f64>,
    pub history: Vec<IterationRecord>,
}

impl MapleOutput {
    /// Effective weights of the output set, `w ∘ 1[s >= 0.5]`.
    pub fn effective_weights(&self) -> Vec<f64> {
        self.state.w.iter().zip(&self.threshold_mask).map(|(w, m)| w * m).collect()
    }

    pub fn records(&self) -> Vec<WeightRecord> {
        (0..self.state.len())
            .map(|i| WeightRecord {
                index: i,
                w: self.state.w[i],
                s: self.state.s[i],
                m: self.threshold_mask[i] == 1.0,
            })
            .collect()
    }
}

/// Classification accuracy of `theta` on `data`.
pub fn accuracy(
    data: &AnnotatedDataset,
    model: &ModelSpec,
    params: &model::ParamVector,
    family: LossFamily,
) -> Result<f64> {
    let f = model::forward(model, params, data.batch())?;
    let hits = f
        .iter()
        .zip(data.batch().labels())
        .filter(|(&fi, &y)| family.predict(fi) == y)
        .count();
    Ok(hits as f64 / data.len() as f64)
}

fn stats(w: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let min = w.iter().copied().fold(f64::INFINITY, f64::min);
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    (mean, var.sqrt(), min, max, norm)
}

pub fn run_maple(
    data_tr: &AnnotatedDataset,
    data_v: &AnnotatedDataset,
    model: &ModelSpec,
    family: LossFamily,
    inner_cfg: &InnerConfig,
    outer_cfg: &OuterConfig,
    budget: f64,
) -> Result<MapleOutput> {
    run_maple_observed(data_tr, data_v, model, family, inner_cfg, outer_cfg, budget, |_, _| {})
}

/// [`run_maple`] with a callback invoked after every outer iteration.
#[allow(clippy::too_many_arguments)]
pub fn run_maple_observed<F>(
    data_tr: &AnnotatedDataset,
    data_v: &AnnotatedDataset,
    model: &ModelSpec,
    family: LossFamily,
    inner_cfg: &InnerConfig,
    outer_cfg: &OuterConfig,
    budget: f64,
    mut observer: F,
) -> Result<MapleOutput>
where
    F: FnMut(usize, &ReweightState),
{
    outer_cfg.validate()?;
    inner_cfg.validate()?;
    model.validate()?;
    if data_tr.batch().dim() != data_v.batch().dim() {
        return Err(Error::dims(format!(
            "training data has {} features, validation {}",
            data_tr.batch().dim(),
            data_v.batch().dim()
        )));
    }
    let n = data_tr.len();
    let sparse = outer_cfg.sparsity_enabled;
    let mut state = ReweightState::init(n, budget, sparse)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(outer_cfg.seed, MASK_STREAM));
    let mut history = Vec::with_capacity(outer_cfg.iterations);

    for it in 0..outer_cfg.iterations {
        let mask = if sparse {
            sample_mask(&state.s, outer_cfg.temperature, &mut rng)?
        } else {
            MaskSample::all_ones(n)
        };
        let effective: Vec<f64> = state.w.iter().zip(&mask.m).map(|(w, m)| w * m).collect();
        let result = inner::train_weighted_erm(data_tr, &effective, model, family, inner_cfg)?;

        let (val_risk, val_grad) =
            risks::risk_value_and_grad(&outer_cfg.risk, data_v, model, &result.theta_t, family)?;
        let val_accuracy = accuracy(data_v, model, &result.theta_t, family)?;
        let c = contraction(
            &result.theta_tm1,
            data_tr,
            &val_grad,
            result.last_batch.as_deref(),
            model,
            family,
        )?;

        // dR/dw = -eta * g; eta is folded into the outer step size
        let grad_w: Vec<f64> = c.grad_w(Some(&mask))?.iter().map(|g| -g).collect();
        if sparse {
            let grad_s: Vec<f64> = c.grad_s(&state, &mask)?.iter().map(|g| -g).collect();
            state.adam_s.step(&mut state.s, &grad_s, outer_cfg.lr_s);
            state.s = project_capped_box_simplex(&state.s, state.budget)?;
        }
        state.adam_w.step(&mut state.w, &grad_w, outer_cfg.lr_w);
        state.w = project_nonneg(&state.w);
        if state.w.iter().chain(&state.s).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("outer state at iteration {it}")));
        }

        let (w_mean, w_std, w_min, w_max, w_norm) = stats(&state.w);
        history.push(IterationRecord {
            iteration: it,
            val_risk,
            val_accuracy,
            inner_loss: result.loss_trace.last().copied().unwrap_or(f64::NAN),
            w_mean,
            w_std,
            w_min,
            w_max,
            w_norm,
            s_sum: state.s.iter().sum(),
            s_saturation: state.s_saturation(),
            mask_kept: mask.kept(),
        });
        observer(it, &state);
    }

    let threshold_mask = state.threshold_mask();
    let sampled_mask = if sparse {
        sample_mask(&state.s, outer_cfg.temperature, &mut rng)?.m
    } else {
        vec![1.0; n]
    };
    let coreset = threshold_mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m == 1.0)
        .map(|(i, _)| CoresetEntry {
            index: i,
            weight: state.w[i],
        })
        .collect();
    Ok(MapleOutput {
        state,
        coreset,
        threshold_mask,
        sampled_mask,
        history,
    })
}
