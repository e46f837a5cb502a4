//! Brute-force references and finite-difference helpers shared by the
//! integration tests.
#![allow(dead_code)]

use maple_core::model::{forward, per_sample_loss_grads, per_sample_output_grads};
use maple_core::risks::{risk_value, risk_value_and_grad, AnnotatedDataset, RiskSpec};
use maple_core::{Batch, LossFamily, Matrix, ModelSpec, ParamVector};
use rand::Rng;

/// Largest value of `sum_i w_i l_i` over the vertices of
/// `{0 <= w <= 1/(alpha n), sum w = 1}`.
pub fn cvar_by_vertices(losses: &[f64], alpha: f64) -> f64 {
    let n = losses.len();
    let cap = 1.0 / (alpha * n as f64);
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << n) {
        let at_cap: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let used = at_cap.len() as f64 * cap;
        let base: f64 = at_cap.iter().map(|&i| cap * losses[i]).sum();
        if (used - 1.0).abs() <= 1e-12 {
            best = best.max(base);
        }
        let rest = 1.0 - used;
        if rest < -1e-12 || rest > cap + 1e-12 {
            continue;
        }
        for j in (0..n).filter(|j| mask >> j & 1 == 0) {
            best = best.max(base + rest * losses[j]);
        }
    }
    best
}

/// Euclidean projection onto `{0 <= x <= 1, sum x <= budget}` by enumerating
/// every KKT active set.
pub fn project_by_active_sets(s: &[f64], budget: f64) -> Vec<f64> {
    let n = s.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        // per coordinate: 0 = at zero, 1 = at one, 2 = free
        let state: Vec<usize> = (0..n).map(|i| code / 3usize.pow(i as u32) % 3).collect();
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let ones = state.iter().filter(|&&v| v == 1).count() as f64;
        let mut candidates = vec![0.0];
        if !free.is_empty() {
            let tau = (free.iter().map(|&i| s[i]).sum::<f64>() + ones - budget) / free.len() as f64;
            if tau > 0.0 {
                candidates.push(tau);
            }
        }
        for tau in candidates {
            let x: Vec<f64> = (0..n)
                .map(|i| match state[i] {
                    0 => 0.0,
                    1 => 1.0,
                    _ => s[i] - tau,
                })
                .collect();
            let feasible = x.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)) && x.iter().sum::<f64>() <= budget + 1e-12;
            if !feasible {
                continue;
            }
            let obj: f64 = x.iter().zip(s).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().is_none_or(|(b, _)| obj < *b - 1e-15) {
                best = Some((obj, x));
            }
        }
    }
    best.expect("the box always holds a feasible point").1
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn random_params<R: Rng>(rng: &mut R, spec: &ModelSpec, scale: f64) -> ParamVector {
    ParamVector::new((0..spec.param_count()).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

pub fn random_labels<R: Rng>(rng: &mut R, n: usize, family: LossFamily) -> Vec<f64> {
    (0..n)
        .map(|_| match family {
            LossFamily::Square => rng.random_range(-1.0..1.0),
            LossFamily::LogisticBce => f64::from(u8::from(rng.random_bool(0.5))),
        })
        .collect()
}

fn shifted(p: &ParamVector, j: usize, h: f64) -> ParamVector {
    let mut v = p.as_slice().to_vec();
    v[j] += h;
    ParamVector::new(v).unwrap()
}

/// Norm-wise relative error `|a - b| / max(|b|, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(floor)
}

/// Central differences of `f` along every parameter coordinate.
pub fn fd_grad(p: &ParamVector, h: f64, f: impl Fn(&ParamVector) -> f64) -> Vec<f64> {
    (0..p.len())
        .map(|j| (f(&shifted(p, j, h)) - f(&shifted(p, j, -h))) / (2.0 * h))
        .collect()
}

/// Worst relative error over samples of per-sample loss and output gradients.
pub fn per_sample_gradient_error(spec: &ModelSpec, params: &ParamVector, batch: &Batch, family: LossFamily) -> f64 {
    let h = 1e-6;
    let (_, loss_grads) = per_sample_loss_grads(spec, params, batch, family).unwrap();
    let out_grads = per_sample_output_grads(spec, params, batch).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..batch.len() {
        let single = batch.select(&[i]).unwrap();
        let out = |p: &ParamVector| forward(spec, p, &single).unwrap()[0];
        let loss = |p: &ParamVector| family.derivatives(out(p), single.labels()[0]).unwrap().value;
        worst = worst.max(rel_err(&fd_grad(params, h, out), out_grads.row(i), 1e-6));
        worst = worst.max(rel_err(&fd_grad(params, h, loss), loss_grads.row(i), 1e-6));
    }
    worst
}

/// Relative error of the analytic risk gradient against central differences.
pub fn risk_gradient_error(
    risk: &RiskSpec,
    data: &AnnotatedDataset,
    spec: &ModelSpec,
    params: &ParamVector,
    family: LossFamily,
) -> f64 {
    let (_, grad) = risk_value_and_grad(risk, data, spec, params, family).unwrap();
    let fd = fd_grad(params, 1e-6, |p| risk_value(risk, data, spec, p, family).unwrap());
    rel_err(&fd, &grad, 1e-6)
}
