//! Validation-size sweep of the gap between the validation risk and a
//! held-out estimate of the population risk at the reweighted solution.

use std::io::Write;

use serde::Serialize;

use super::config::RunConfig;
use super::run::run_maple_on;
use crate::inner;
use crate::risks;
use crate::seed::derive_seed;
use crate::{Error, Result};

const SWEEP_STREAM: u64 = 0x5e3e;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapSample {
    pub repeat: usize,
    pub seed: u64,
    pub n_val: usize,
    pub val_risk: f64,
    pub holdout_risk: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub n_val: usize,
    pub mean_gap: f64,
    /// Sample standard deviation across repeats; zero for a single repeat.
    pub std_gap: f64,
    pub repeats: usize,
    pub single_seed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub samples: Vec<GapSample>,
    /// Least-squares slope of `ln mean_gap` against `ln n_val`.
    pub slope: Option<f64>,
    /// Fraction of repeats where the gap at the largest `n_val` is below the
    /// gap at the smallest.
    pub paired_fraction: Option<f64>,
}

/// Least-squares slope of `ln y` on `ln x`. Needs two distinct positive `x`
/// and positive `y`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

/// One gap measurement: reweighting with `n_val` validation samples, then
/// the outer risk of the weighted-ERM solution on validation versus on
/// `holdout_factor * n_val` fresh draws.
fn gap_sample(config: &RunConfig, n_val: usize, repeat: usize, seed: u64) -> Result<GapSample> {
    let cfg = config.with_seed(seed);
    let mut cfg = cfg;
    cfg.dataset = cfg.dataset.with_n_val(n_val);
    let data_cfg = cfg.dataset_config();
    let splits = data_cfg.generate()?;
    let holdout = data_cfg.holdout(n_val * cfg.sweep.holdout_factor)?;
    let (out, _) = run_maple_on(&cfg, &splits)?;
    let model = cfg.model.spec(splits.train.batch().dim());
    let family = cfg.model.loss;
    let theta = inner::train_weighted_erm(
        &splits.train,
        &out.effective_weights(),
        &model,
        family,
        &cfg.inner_config(),
    )?
    .theta_t;
    let risk = &cfg.outer.risk;
    let val_risk = risks::risk_value(risk, &splits.val, &model, &theta, family)?;
    let holdout_risk = risks::risk_value(risk, &holdout, &model, &theta, family)?;
    Ok(GapSample {
        repeat,
        seed,
        n_val,
        val_risk,
        holdout_risk,
        gap: (val_risk - holdout_risk).abs(),
    })
}

pub fn sweep_generalization_gap(config: &RunConfig) -> Result<SweepReport> {
    let sweep = &config.sweep;
    if sweep.n_vals.is_empty() || sweep.repeats == 0 || sweep.holdout_factor == 0 {
        return Err(Error::Config {
            field: "sweep".into(),
            msg: "needs at least one n_val, one repeat and a positive holdout_factor".into(),
        });
    }
    let mut samples = Vec::new();
    for repeat in 0..sweep.repeats {
        let seed = derive_seed(derive_seed(config.seed, SWEEP_STREAM), repeat as u64);
        for &n_val in &sweep.n_vals {
            samples.push(gap_sample(config, n_val, repeat, seed)?);
        }
    }
    let rows: Vec<SweepRow> = sweep
        .n_vals
        .iter()
        .map(|&n_val| {
            let gaps: Vec<f64> = samples.iter().filter(|s| s.n_val == n_val).map(|s| s.gap).collect();
            let r = gaps.len() as f64;
            let mean = gaps.iter().sum::<f64>() / r;
            let std = if gaps.len() > 1 {
                (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
            } else {
                0.0
            };
            SweepRow {
                n_val,
                mean_gap: mean,
                std_gap: std,
                repeats: gaps.len(),
                single_seed: gaps.len() == 1,
            }
        })
        .collect();
    let x: Vec<f64> = rows.iter().map(|r| r.n_val as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.mean_gap).collect();
    let slope = log_log_slope(&x, &y);

    let lo = sweep.n_vals.iter().min().copied();
    let hi = sweep.n_vals.iter().max().copied();
    let paired_fraction = match (lo, hi) {
        (Some(lo), Some(hi)) if lo != hi => {
            let gap_at = |rep: usize, n: usize| samples.iter().find(|s| s.repeat == rep && s.n_val == n).map(|s| s.gap);
            let wins = (0..sweep.repeats)
                .filter(|&rep| matches!((gap_at(rep, hi), gap_at(rep, lo)), (Some(h), Some(l)) if h < l))
                .count();
            Some(wins as f64 / sweep.repeats as f64)
        }
        _ => None,
    };
    Ok(SweepReport {
        rows,
        samples,
        slope,
        paired_fraction,
    })
}

/// Writes the summary table and the per-repeat samples as CSV.
pub fn write_sweep<W: Write, V: Write>(summary: W, raw: V, report: &SweepReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(summary);
    for row in &report.rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_writer(raw);
    for s in &report.samples {
        w.serialize(s).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
