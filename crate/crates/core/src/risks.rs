//! Out-of-distribution risk functionals `R(D, theta)` and their gradients.
//!
//! Every risk is evaluated from per-sample outputs `f_i` and the loss
//! derivatives at `f_i`. The gradient is always of the form
//! `sum_i c_i * grad_theta f_i`, so evaluation returns the coefficients `c_i`
//! and a single reverse pass through the model finishes the job.

use serde::{Deserialize, Serialize};

use crate::loss::LossFamily;
use crate::model::{self, Batch, ModelSpec, ParamVector};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskKind {
    Erm,
    Irmv1,
    Rex,
    GroupDro,
    Cvar,
}

/// Which risk to use and its scalar hyperparameters. `lambda` only matters
/// for IRMv1 and REx; `alpha` only for CVaR.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSpec {
    pub kind: RiskKind,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    0.2
}

impl RiskSpec {
    pub fn erm() -> Self {
        Self {
            kind: RiskKind::Erm,
            lambda: 0.0,
            alpha: default_alpha(),
        }
    }

    pub fn irmv1(lambda: f64) -> Self {
        Self {
            kind: RiskKind::Irmv1,
            lambda,
            ..Self::erm()
        }
    }

    pub fn rex(lambda: f64) -> Self {
        Self {
            kind: RiskKind::Rex,
            lambda,
            ..Self::erm()
        }
    }

    pub fn group_dro() -> Self {
        Self {
            kind: RiskKind::GroupDro,
            ..Self::erm()
        }
    }

    pub fn cvar(alpha: f64) -> Self {
        Self {
            kind: RiskKind::Cvar,
            alpha,
            ..Self::erm()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if self.kind == RiskKind::Cvar {
            check_alpha(self.alpha)?;
        }
        Ok(())
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("alpha must lie in (0, 1], got {alpha}")))
    }
}

/// A batch with optional environment labels, group labels, and per-sample
/// weights. Labels are contiguous from zero and every label is used.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedDataset {
    batch: Batch,
    env_ids: Option<Vec<usize>>,
    group_ids: Option<Vec<usize>>,
    weights: Option<Vec<f64>>,
}

fn check_ids(ids: &[usize], n: usize, kind: &'static str) -> Result<usize> {
    if ids.len() != n {
        return Err(Error::dims(format!("{} {kind} ids for {n} samples", ids.len())));
    }
    let count = ids.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; count];
    for &id in ids {
        seen[id] = true;
    }
    match seen.iter().position(|s| !s) {
        Some(id) => Err(Error::EmptyPartition { kind, id }),
        None => Ok(count),
    }
}

impl AnnotatedDataset {
    pub fn new(batch: Batch) -> Self {
        Self {
            batch,
            env_ids: None,
            group_ids: None,
            weights: None,
        }
    }

    pub fn with_envs(mut self, ids: Vec<usize>) -> Result<Self> {
        check_ids(&ids, self.len(), "environment")?;
        self.env_ids = Some(ids);
        Ok(self)
    }

    pub fn with_groups(mut self, ids: Vec<usize>) -> Result<Self> {
        check_ids(&ids, self.len(), "group")?;
        self.group_ids = Some(ids);
        Ok(self)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::dims(format!("{} weights for {} samples", weights.len(), self.len())));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::param("sample weights must be finite and nonnegative"));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    /// Same samples with group labels removed.
    pub fn without_groups(&self) -> Self {
        Self {
            group_ids: None,
            ..self.clone()
        }
    }

    pub fn batch(&self) -> &Batch {
        &self.batch
    }

    pub fn len(&self) -> usize {
        self.batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch.is_empty()
    }

    pub fn env_ids(&self) -> Option<&[usize]> {
        self.env_ids.as_deref()
    }

    pub fn group_ids(&self) -> Option<&[usize]> {
        self.group_ids.as_deref()
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn num_envs(&self) -> usize {
        self.env_ids.as_ref().map_or(0, |ids| ids.iter().max().map_or(0, |m| m + 1))
    }

    pub fn num_groups(&self) -> usize {
        self.group_ids.as_ref().map_or(0, |ids| ids.iter().max().map_or(0, |m| m + 1))
    }

    #[inline]
    fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    /// Subset of rows, keeping every annotation. Ids are not renumbered, so
    /// the subset must still use each id at least once.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let pick = |v: &Vec<usize>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let mut out = Self::new(self.batch.select(idx)?);
        if let Some(e) = &self.env_ids {
            out = out.with_envs(pick(e))?;
        }
        if let Some(g) = &self.group_ids {
            out = out.with_groups(pick(g))?;
        }
        if let Some(w) = &self.weights {
            out = out.with_weights(idx.iter().map(|&i| w[i]).collect())?;
        }
        Ok(out)
    }
}

fn partition(ids: &[usize]) -> Vec<Vec<usize>> {
    let count = ids.iter().max().map_or(0, |m| m + 1);
    let mut parts = vec![Vec::new(); count];
    for (i, &id) in ids.iter().enumerate() {
        parts[id].push(i);
    }
    parts
}

/// Risk value plus the coefficients `c_i` of `grad R = sum_i c_i grad f_i`.
pub(crate) struct RiskEval {
    pub value: f64,
    pub coef: Vec<f64>,
}

pub(crate) fn evaluate(
    spec: &RiskSpec,
    data: &AnnotatedDataset,
    outputs: &[f64],
    family: LossFamily,
) -> Result<RiskEval> {
    spec.validate()?;
    let n = data.len();
    let labels = data.batch().labels();
    let derivs = outputs
        .iter()
        .zip(labels)
        .map(|(&f, &y)| family.derivatives(f, y))
        .collect::<Result<Vec<_>>>()?;
    let mut coef = vec![0.0; n];

    let value = match spec.kind {
        RiskKind::Erm => {
            let mut total = 0.0;
            for (i, d) in derivs.iter().enumerate() {
                let w = data.weight(i);
                total += w * d.value;
                coef[i] = w * d.d1 / n as f64;
            }
            total / n as f64
        }
        RiskKind::Irmv1 => {
            let envs = data.env_ids().ok_or(Error::MissingAnnotation("environment ids"))?;
            let mut total = 0.0;
            for members in partition(envs) {
                let ne = members.len() as f64;
                let (mut loss, mut dummy) = (0.0, 0.0);
                for &i in &members {
                    let w = data.weight(i);
                    loss += w * derivs[i].value;
                    dummy += w * derivs[i].d1 * outputs[i];
                }
                loss /= ne;
                dummy /= ne;
                total += loss + spec.lambda * dummy * dummy;
                for &i in &members {
                    let d = &derivs[i];
                    let dummy_grad = d.d2 * outputs[i] + d.d1;
                    coef[i] = data.weight(i) / ne * (d.d1 + 2.0 * spec.lambda * dummy * dummy_grad);
                }
            }
            total
        }
        RiskKind::Rex => {
            let envs = data.env_ids().ok_or(Error::MissingAnnotation("environment ids"))?;
            let parts = partition(envs);
            let losses: Vec<f64> = parts
                .iter()
                .map(|m| m.iter().map(|&i| data.weight(i) * derivs[i].value).sum::<f64>() / m.len() as f64)
                .collect();
            let e = losses.len() as f64;
            let mean = losses.iter().sum::<f64>() / e;
            let var = losses.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / e;
            for (members, &loss) in parts.iter().zip(&losses) {
                let scale = 1.0 + spec.lambda * 2.0 / e * (loss - mean);
                let ne = members.len() as f64;
                for &i in members {
                    coef[i] = scale * data.weight(i) * derivs[i].d1 / ne;
                }
            }
            losses.iter().sum::<f64>() + spec.lambda * var
        }
        RiskKind::GroupDro => {
            let groups = data.group_ids().ok_or(Error::MissingAnnotation("group ids"))?;
            let parts = partition(groups);
            let mut worst = (0, f64::NEG_INFINITY);
            for (g, members) in parts.iter().enumerate() {
                let loss = members.iter().map(|&i| data.weight(i) * derivs[i].value).sum::<f64>()
                    / members.len() as f64;
                // strict comparison keeps the lowest id on ties
                if loss > worst.1 {
                    worst = (g, loss);
                }
            }
            let members = &parts[worst.0];
            for &i in members {
                coef[i] = data.weight(i) * derivs[i].d1 / members.len() as f64;
            }
            worst.1
        }
        RiskKind::Cvar => {
            let losses: Vec<f64> = derivs.iter().enumerate().map(|(i, d)| data.weight(i) * d.value).collect();
            let q = cvar_sup_weights(&losses, spec.alpha)?;
            for (i, d) in derivs.iter().enumerate() {
                coef[i] = q[i] * data.weight(i) * d.d1;
            }
            q.iter().zip(&losses).map(|(a, b)| a * b).sum()
        }
    };
    Ok(RiskEval { value, coef })
}

pub fn risk_value(
    spec: &RiskSpec,
    data: &AnnotatedDataset,
    model: &ModelSpec,
    params: &ParamVector,
    family: LossFamily,
) -> Result<f64> {
    let f = model::forward(model, params, data.batch())?;
    Ok(evaluate(spec, data, &f, family)?.value)
}

pub fn risk_grad(
    spec: &RiskSpec,
    data: &AnnotatedDataset,
    model: &ModelSpec,
    params: &ParamVector,
    family: LossFamily,
) -> Result<Vec<f64>> {
    Ok(risk_value_and_grad(spec, data, model, params, family)?.1)
}

pub fn risk_value_and_grad(
    spec: &RiskSpec,
    data: &AnnotatedDataset,
    model: &ModelSpec,
    params: &ParamVector,
    family: LossFamily,
) -> Result<(f64, Vec<f64>)> {
    let x = data.batch().features();
    let tr = model::checked_trace(model, params, x)?;
    let eval = evaluate(spec, data, &tr.output, family)?;
    let grad = model::weighted_output_grad(model, params, x, &tr, &eval.coef);
    Ok((eval.value, grad))
}

/// Maximiser of `sum_i w_i l_i` over `{w >= 0, |w|_inf <= 1/(alpha n), |w|_1 = 1}`.
///
/// The `floor(alpha n)` largest losses get the cap `1/(alpha n)`, the next one
/// gets whatever mass is left. Ties go to the lower index.
pub fn cvar_sup_weights(losses: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    let n = losses.len();
    if n == 0 {
        return Err(Error::param("cvar needs at least one loss"));
    }
    if losses.iter().any(|l| l.is_nan()) {
        return Err(Error::NonFinite("losses".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| losses[b].total_cmp(&losses[a]).then(a.cmp(&b)));

    let scaled = alpha * n as f64;
    let cap = 1.0 / scaled;
    let full = (scaled.floor() as usize).min(n);
    let mut weights = vec![0.0; n];
    for &i in &order[..full] {
        weights[i] = cap;
    }
    if full < n {
        let rest = (1.0 - full as f64 * cap).max(0.0);
        weights[order[full]] = rest;
    }
    Ok(weights)
}
