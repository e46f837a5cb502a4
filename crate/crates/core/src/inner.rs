//! Inner problem: weighted ERM training, plus an exact weighted
//! least-squares solver for the linear checks.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::loss::LossFamily;
use crate::model::{self, Matrix, ModelSpec, ParamVector};
use crate::risks::AnnotatedDataset;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerOptimizer {
    #[default]
    Gd,
    Sgd,
}

/// Mini-batch size: `"full"` or a positive integer in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "BatchSizeRepr", into = "BatchSizeRepr")]
pub enum BatchSize {
    #[default]
    Full,
    Size(usize),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BatchSizeRepr {
    Size(usize),
    Name(String),
}

impl TryFrom<BatchSizeRepr> for BatchSize {
    type Error = String;

    fn try_from(r: BatchSizeRepr) -> std::result::Result<Self, String> {
        match r {
            BatchSizeRepr::Size(0) => Err("batch size must be positive".into()),
            BatchSizeRepr::Size(n) => Ok(BatchSize::Size(n)),
            BatchSizeRepr::Name(s) if s == "full" => Ok(BatchSize::Full),
            BatchSizeRepr::Name(s) => Err(format!("expected \"full\" or an integer, got {s:?}")),
        }
    }
}

impl From<BatchSize> for BatchSizeRepr {
    fn from(b: BatchSize) -> Self {
        match b {
            BatchSize::Full => BatchSizeRepr::Name("full".into()),
            BatchSize::Size(n) => BatchSizeRepr::Size(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerConfig {
    pub steps: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub optimizer: InnerOptimizer,
    #[serde(default)]
    pub batch_size: BatchSize,
    #[serde(default)]
    pub init_seed: u64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            learning_rate: 0.1,
            weight_decay: 0.1,
            optimizer: InnerOptimizer::Gd,
            batch_size: BatchSize::Full,
            init_seed: 0,
        }
    }
}

impl InnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::param("inner steps must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::param("inner learning rate must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::param("weight decay must be nonnegative"));
        }
        if self.batch_size == BatchSize::Size(0) {
            return Err(Error::param("batch size must be positive"));
        }
        Ok(())
    }
}

/// Final and penultimate iterates of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub theta_t: ParamVector,
    pub theta_tm1: ParamVector,
    /// Objective at each iterate before its update (mini-batch objective for SGD).
    pub loss_trace: Vec<f64>,
    /// Sample indices of the final update's mini-batch; `None` for full batch.
    pub last_batch: Option<Vec<usize>>,
}

impl TrainResult {
    /// Normaliser of the final update's data term: `|B|` for SGD, `n` for GD.
    pub fn last_batch_scale(&self, n: usize) -> usize {
        self.last_batch.as_ref().map_or(n, Vec::len)
    }
}

/// Mini-batch order for SGD: reshuffled each epoch from a seeded stream.
struct BatchSchedule {
    n: usize,
    size: Option<usize>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl BatchSchedule {
    fn new(n: usize, cfg: &InnerConfig) -> Self {
        let size = match (cfg.optimizer, cfg.batch_size) {
            (InnerOptimizer::Sgd, BatchSize::Size(b)) if b < n => Some(b),
            _ => None,
        };
        Self {
            n,
            size,
            rng: ChaCha8Rng::seed_from_u64(cfg.init_seed ^ SHUFFLE_STREAM),
            order: Vec::new(),
            cursor: n,
        }
    }

    fn next(&mut self) -> Option<Vec<usize>> {
        let size = self.size?;
        if self.cursor >= self.n {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + size).min(self.n);
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        Some(batch)
    }
}

const SHUFFLE_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

/// Data term `(1/scale) sum_{i in rows} w_i l_i` and its gradient. Rows with
/// zero weight are skipped entirely.
pub(crate) fn weighted_data_term(
    data: &AnnotatedDataset,
    weights: &[f64],
    model: &ModelSpec,
    family: LossFamily,
    params: &ParamVector,
    rows: Option<&[usize]>,
) -> Result<(f64, Vec<f64>)> {
    let n = data.len();
    let scale = rows.map_or(n, <[usize]>::len) as f64;
    let active: Vec<usize> = match rows {
        Some(r) => r.iter().copied().filter(|&i| weights[i] != 0.0).collect(),
        None => (0..n).filter(|&i| weights[i] != 0.0).collect(),
    };
    if active.is_empty() {
        return Ok((0.0, vec![0.0; params.len()]));
    }
    let owned;
    let x: &Matrix = if active.len() == n {
        data.batch().features()
    } else {
        owned = data.batch().features().select_rows(&active);
        &owned
    };
    let labels = data.batch().labels();
    let tr = model::checked_trace(model, params, x)?;
    let mut loss = 0.0;
    let mut coef = Vec::with_capacity(active.len());
    for (&f, &i) in tr.output.iter().zip(&active) {
        let d = family.derivatives(f, labels[i])?;
        loss += weights[i] * d.value;
        coef.push(weights[i] * d.d1 / scale);
    }
    let grad = model::weighted_output_grad(model, params, x, &tr, &coef);
    Ok((loss / scale, grad))
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::dims(format!("{} weights for {n} samples", weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::param("effective weights must be finite and nonnegative"));
    }
    Ok(())
}

/// Objective value at `params` and the iterate after one update on `rows`
/// (`None` = full batch).
pub fn inner_step(
    data: &AnnotatedDataset,
    weights: &[f64],
    model: &ModelSpec,
    family: LossFamily,
    cfg: &InnerConfig,
    params: &ParamVector,
    rows: Option<&[usize]>,
) -> Result<(f64, ParamVector)> {
    check_weights(weights, data.len())?;
    let (data_loss, mut grad) = weighted_data_term(data, weights, model, family, params, rows)?;
    let theta = params.as_slice();
    let mut sq = 0.0;
    for (g, &t) in grad.iter_mut().zip(theta) {
        *g += cfg.weight_decay * t;
        sq += t * t;
    }
    let objective = data_loss + 0.5 * cfg.weight_decay * sq;
    let next: Vec<f64> = theta
        .iter()
        .zip(&grad)
        .map(|(t, g)| t - cfg.learning_rate * g)
        .collect();
    Ok((objective, ParamVector::from_raw(next)))
}

/// Runs `cfg.steps` updates of (stochastic) gradient descent on
/// `(1/n) sum_i w_i l_i(theta) + weight_decay |theta|^2 / 2` from a fresh
/// initialisation seeded by `cfg.init_seed`.
pub fn train_weighted_erm(
    data: &AnnotatedDataset,
    effective_weights: &[f64],
    model: &ModelSpec,
    family: LossFamily,
    cfg: &InnerConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    model.validate()?;
    check_weights(effective_weights, data.len())?;
    if model.input_dim != data.batch().dim() {
        return Err(Error::dims(format!(
            "model expects {} features, data has {}",
            model.input_dim,
            data.batch().dim()
        )));
    }

    let mut schedule = BatchSchedule::new(data.len(), cfg);
    let mut theta = model.init_params(cfg.init_seed);
    let mut previous = theta.clone();
    let mut loss_trace = Vec::with_capacity(cfg.steps);
    let mut last_batch = None;
    for step in 0..cfg.steps {
        let rows = schedule.next();
        let (loss, next) = inner_step(data, effective_weights, model, family, cfg, &theta, rows.as_deref())?;
        if !loss.is_finite() || next.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        loss_trace.push(loss);
        previous = std::mem::replace(&mut theta, next);
        last_batch = rows;
    }
    Ok(TrainResult {
        theta_t: theta,
        theta_tm1: previous,
        loss_trace,
        last_batch,
    })
}

/// `argmin_theta sum_i w_i (y_i - x_i^T theta)^2 + ridge |theta|^2`, solved by
/// a QR factorisation of the row-scaled design (augmented with
/// `sqrt(ridge) I` when `ridge > 0`).
pub fn solve_weighted_least_squares(
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    ridge: f64,
) -> Result<ParamVector> {
    let (n, d) = (x.rows(), x.cols());
    if y.len() != n || w.len() != n {
        return Err(Error::dims(format!(
            "design has {n} rows, targets {} and weights {}",
            y.len(),
            w.len()
        )));
    }
    if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::param("weights must be finite and nonnegative"));
    }
    if !(w.iter().sum::<f64>() > 0.0) {
        return Err(Error::param("weights must have a positive sum"));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::param("ridge must be nonnegative"));
    }
    let extra = if ridge > 0.0 { d } else { 0 };
    let rows = n + extra;
    if rows < d {
        return Err(Error::Singular(format!("{n} samples cannot determine {d} coefficients")));
    }
    let mut a = DMatrix::<f64>::zeros(rows, d);
    let mut b = DVector::<f64>::zeros(rows);
    for i in 0..n {
        let s = w[i].sqrt();
        for (j, v) in x.row(i).iter().enumerate() {
            a[(i, j)] = s * v;
        }
        b[i] = s * y[i];
    }
    for j in 0..extra {
        a[(n + j, j)] = ridge.sqrt();
    }
    let qr = a.qr();
    let r = qr.r();
    let largest = (0..d).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if (0..d).any(|j| r[(j, j)].abs() <= 1e-12 * largest.max(f64::MIN_POSITIVE)) {
        return Err(Error::Singular("weighted design matrix is rank deficient".into()));
    }
    let qtb = qr.q().transpose() * b;
    let theta = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Singular("triangular solve failed".into()))?;
    ParamVector::new(theta.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Batch;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn dataset(rows: &[Vec<f64>], y: &[f64]) -> AnnotatedDataset {
        AnnotatedDataset::new(Batch::new(Matrix::from_rows(rows).unwrap(), y.to_vec()).unwrap())
    }

    fn cfg(steps: usize, lr: f64) -> InnerConfig {
        InnerConfig {
            steps,
            learning_rate: lr,
            weight_decay: 0.0,
            ..InnerConfig::default()
        }
    }

    #[test]
    fn one_dimensional_quadratic_by_hand() {
        let d = dataset(&[vec![1.0]], &[1.0]);
        let r = train_weighted_erm(&d, &[1.0], &ModelSpec::linear(1), LossFamily::Square, &cfg(2, 0.25)).unwrap();
        assert_eq!(r.theta_tm1.as_slice(), &[0.5]);
        assert_eq!(r.theta_t.as_slice(), &[0.75]);
        assert_eq!(r.loss_trace, vec![1.0, 0.25]);
    }

    #[test]
    fn zero_weights_leave_init_untouched() {
        let d = dataset(&[vec![1.0, 2.0], vec![-1.0, 0.5]], &[1.0, 0.0]);
        let spec = ModelSpec::mlp(2, vec![3], crate::Activation::Tanh);
        let c = InnerConfig { init_seed: 11, ..cfg(5, 0.5) };
        let r = train_weighted_erm(&d, &[0.0, 0.0], &spec, LossFamily::LogisticBce, &c).unwrap();
        assert_eq!(r.theta_t, spec.init_params(11));
    }

    #[test]
    fn penultimate_iterate_is_one_step_back() {
        let d = dataset(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.3, -0.7]], &[1.0, 0.0, 1.0]);
        let spec = ModelSpec::mlp(2, vec![4], crate::Activation::Relu);
        let c = InnerConfig { weight_decay: 0.1, init_seed: 3, ..cfg(7, 0.3) };
        let w = [0.5, 2.0, 1.0];
        let r = train_weighted_erm(&d, &w, &spec, LossFamily::LogisticBce, &c).unwrap();
        let (_, again) = inner_step(&d, &w, &spec, LossFamily::LogisticBce, &c, &r.theta_tm1, None).unwrap();
        assert_eq!(again, r.theta_t);
        assert_eq!(r, train_weighted_erm(&d, &w, &spec, LossFamily::LogisticBce, &c).unwrap());
    }

    #[test]
    fn sgd_records_last_batch() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0, 1.0]).collect();
        let y: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let d = dataset(&rows, &y);
        let c = InnerConfig {
            optimizer: InnerOptimizer::Sgd,
            batch_size: BatchSize::Size(3),
            ..cfg(5, 0.1)
        };
        let w = vec![1.0; 10];
        let r = train_weighted_erm(&d, &w, &ModelSpec::logistic(2), LossFamily::LogisticBce, &c).unwrap();
        let batch = r.last_batch.clone().unwrap();
        assert!(!batch.is_empty() && batch.len() <= 3);
        let (_, again) = inner_step(&d, &w, &ModelSpec::logistic(2), LossFamily::LogisticBce, &c, &r.theta_tm1, Some(&batch)).unwrap();
        assert_eq!(again, r.theta_t);
    }

    #[test]
    fn divergence_reports_step() {
        let d = dataset(&[vec![1e3]], &[1.0]);
        let err = train_weighted_erm(&d, &[1.0], &ModelSpec::linear(1), LossFamily::Square, &cfg(500, 10.0)).unwrap_err();
        assert!(matches!(err, Error::Diverged { step, .. } if step > 0));
    }

    #[test]
    fn gd_converges_to_least_squares_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rows: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] - 2.0 * r[2] + rng.random_range(-0.3..0.3)).collect();
        let w: Vec<f64> = (0..40).map(|_| rng.random_range(0.2..2.0)).collect();
        let d = dataset(&rows, &y);
        let r = train_weighted_erm(&d, &w, &ModelSpec::linear(3), LossFamily::Square, &cfg(20_000, 0.2)).unwrap();
        let exact = solve_weighted_least_squares(d.batch().features(), &y, &w, 0.0).unwrap();
        let objective = |t: &ParamVector| {
            let f = model::forward(&ModelSpec::linear(3), t, d.batch()).unwrap();
            f.iter().zip(&y).zip(&w).map(|((f, y), w)| w * (f - y) * (f - y)).sum::<f64>() / 40.0
        };
        assert!((objective(&r.theta_t) - objective(&exact)).abs() <= 1e-6);
    }

    #[test]
    fn wls_interpolates_exact_target() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 0.0], vec![-1.0, 0.5, 1.0], vec![3.0, 1.0, -2.0], vec![0.2, 0.1, 0.4]]).unwrap();
        let y: Vec<f64> = (0..4).map(|i| x.get(i, 0)).collect();
        let t = solve_weighted_least_squares(&x, &y, &[1.0; 4], 0.0).unwrap();
        for (got, want) in t.as_slice().iter().zip([1.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn wls_two_samples_by_hand() {
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let t = solve_weighted_least_squares(&x, &[1.0, 4.0], &[1.0, 1.0], 0.0).unwrap();
        assert_relative_eq!(t.as_slice()[0], 1.8, epsilon = 1e-14);
    }

    #[test]
    fn wls_singular_without_ridge() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap();
        assert!(matches!(
            solve_weighted_least_squares(&x, &[1.0, 2.0], &[1.0, 1.0], 0.0),
            Err(Error::Singular(_))
        ));
        assert!(solve_weighted_least_squares(&x, &[1.0, 2.0], &[1.0, 1.0], 0.1).is_ok());
        assert!(solve_weighted_least_squares(&x, &[1.0, 2.0], &[0.0, 0.0], 0.1).is_err());
    }

    #[test]
    fn wls_concentrated_weight_matches_gradient_descent() {
        // weight on one sample duplicated twice; ridge keeps the problem well-posed
        let x = Matrix::from_rows(&[vec![1.0, -0.5], vec![1.0, -0.5], vec![0.3, 2.0]]).unwrap();
        let y = [2.0, 2.0, -1.0];
        let w = [1.0, 1.0, 0.0];
        let ridge = 0.3;
        let t = solve_weighted_least_squares(&x, &y, &w, ridge).unwrap();
        let mut g = [0.0f64; 2];
        for _ in 0..20_000 {
            let mut grad = [2.0 * ridge * g[0], 2.0 * ridge * g[1]];
            for i in 0..3 {
                let r = x.get(i, 0) * g[0] + x.get(i, 1) * g[1] - y[i];
                grad[0] += 2.0 * w[i] * r * x.get(i, 0);
                grad[1] += 2.0 * w[i] * r * x.get(i, 1);
            }
            g[0] -= 0.05 * grad[0];
            g[1] -= 0.05 * grad[1];
        }
        assert!((t.as_slice()[0] - g[0]).abs() < 1e-8);
        assert!((t.as_slice()[1] - g[1]).abs() < 1e-8);
    }

    proptest::proptest! {
        #[test]
        fn wls_invariant_to_weight_scale(seed in 0u64..1000, c in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let x = Matrix::from_rows(&rows).unwrap();
            let y: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..12).map(|_| rng.random_range(0.1..3.0)).collect();
            let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
            let a = solve_weighted_least_squares(&x, &y, &w, 0.0).unwrap();
            let b = solve_weighted_least_squares(&x, &y, &scaled, 0.0).unwrap();
            for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
                proptest::prop_assert!((p - q).abs() <= 1e-10 * (1.0 + p.abs()));
            }
        }
    }
}
