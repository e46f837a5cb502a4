//! One-step truncated hypergradients.
//!
//! Both gradients share the per-sample contraction
//! `c_i = <grad R(D_v, theta_T), grad l_i(theta_{T-1})>`, computed in a single
//! forward-mode pass at `theta_{T-1}` so the per-sample gradient matrix is
//! never built.

use crate::inner::TrainResult;
use crate::loss::LossFamily;
use crate::model::{self, ModelSpec, ParamVector};
use crate::outer::mask::MaskSample;
use crate::outer::ReweightState;
use crate::risks::{self, AnnotatedDataset, RiskSpec};
use crate::{Error, Result};

/// Per-sample contraction and the normaliser of the final inner update.
/// Samples outside the final mini-batch have `c_i = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Contraction {
    pub values: Vec<f64>,
    pub scale: usize,
}

impl Contraction {
    /// `g_i = m_i c_i / scale`.
    pub fn grad_w(&self, mask: Option<&MaskSample>) -> Result<Vec<f64>> {
        let n = self.values.len();
        if let Some(m) = mask {
            if m.len() != n {
                return Err(Error::dims(format!("mask has {} entries for {n} samples", m.len())));
            }
        }
        let s = self.scale as f64;
        Ok((0..n)
            .map(|i| {
                let mi = mask.map_or(1.0, |m| m.m[i]);
                if mi == 0.0 {
                    0.0
                } else {
                    mi * self.values[i] / s
                }
            })
            .collect())
    }

    /// `g_i = w_i c_i / scale * d m_i / d s_i` through the straight-through path.
    pub fn grad_s(&self, state: &ReweightState, mask: &MaskSample) -> Result<Vec<f64>> {
        let n = self.values.len();
        if mask.len() != n || state.w.len() != n || state.s.len() != n {
            return Err(Error::dims(format!(
                "contraction has {n} entries, mask {}, state {}",
                mask.len(),
                state.w.len()
            )));
        }
        let s = self.scale as f64;
        Ok((0..n)
            .map(|i| {
                if state.w[i] == 0.0 {
                    return 0.0;
                }
                let st = mask.straight_through_factor(i, state.s[i]);
                state.w[i] * self.values[i] / s * st
            })
            .collect())
    }
}

/// `c_i = l'(f(x_i; theta_tm1), y_i) <grad f(x_i; theta_tm1), val_grad>` for
/// the rows of the final update.
pub fn contraction(
    theta_tm1: &ParamVector,
    data_tr: &AnnotatedDataset,
    val_grad: &[f64],
    last_batch: Option<&[usize]>,
    model: &ModelSpec,
    family: LossFamily,
) -> Result<Contraction> {
    if val_grad.len() != theta_tm1.len() {
        return Err(Error::dims(format!(
            "validation gradient has length {}, parameters {}",
            val_grad.len(),
            theta_tm1.len()
        )));
    }
    let n = data_tr.len();
    let mut values = vec![0.0; n];
    if val_grad.iter().all(|&g| g == 0.0) {
        return Ok(Contraction {
            values,
            scale: last_batch.map_or(n, <[usize]>::len),
        });
    }
    let owned;
    let (x, rows): (&model::Matrix, Vec<usize>) = match last_batch {
        Some(b) => {
            owned = data_tr.batch().features().select_rows(b);
            (&owned, b.to_vec())
        }
        None => (data_tr.batch().features(), (0..n).collect()),
    };
    let tr = model::checked_trace(model, theta_tm1, x)?;
    let jvp = model::output_jvp_traced(model, theta_tm1, x, &tr, val_grad);
    let labels = data_tr.batch().labels();
    for (k, &i) in rows.iter().enumerate() {
        let d = family.derivatives(tr.output[k], labels[i])?;
        values[i] = d.d1 * jvp[k];
    }
    Ok(Contraction {
        values,
        scale: rows.len(),
    })
}

fn contraction_for(
    result: &TrainResult,
    data_tr: &AnnotatedDataset,
    data_v: &AnnotatedDataset,
    risk: &RiskSpec,
    model: &ModelSpec,
    family: LossFamily,
) -> Result<Contraction> {
    if result.theta_t.len() != result.theta_tm1.len() {
        return Err(Error::dims(format!(
            "final iterate has length {}, penultimate {}",
            result.theta_t.len(),
            result.theta_tm1.len()
        )));
    }
    let val_grad = risks::risk_grad(risk, data_v, model, &result.theta_t, family)?;
    contraction(
        &result.theta_tm1,
        data_tr,
        &val_grad,
        result.last_batch.as_deref(),
        model,
        family,
    )
}

/// Hypergradient with respect to the sample weights, without the constant
/// `-eta` of the inner step (the caller folds it into the outer step size).
pub fn hypergrad_w(
    result: &TrainResult,
    data_tr: &AnnotatedDataset,
    data_v: &AnnotatedDataset,
    risk: &RiskSpec,
    model: &ModelSpec,
    family: LossFamily,
    mask: Option<&MaskSample>,
) -> Result<Vec<f64>> {
    contraction_for(result, data_tr, data_v, risk, model, family)?.grad_w(mask)
}

/// Hypergradient with respect to the keep probabilities, same scaling
/// convention as [`hypergrad_w`].
#[allow(clippy::too_many_arguments)]
pub fn hypergrad_s(
    result: &TrainResult,
    data_tr: &AnnotatedDataset,
    data_v: &AnnotatedDataset,
    risk: &RiskSpec,
    model: &ModelSpec,
    family: LossFamily,
    state: &ReweightState,
    mask: &MaskSample,
) -> Result<Vec<f64>> {
    contraction_for(result, data_tr, data_v, risk, model, family)?.grad_s(state, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inner::{inner_step, solve_weighted_least_squares, train_weighted_erm, InnerConfig};
    use crate::model::{Batch, Matrix};
    use crate::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(rows: &[Vec<f64>], y: &[f64]) -> AnnotatedDataset {
        AnnotatedDataset::new(Batch::new(Matrix::from_rows(rows).unwrap(), y.to_vec()).unwrap())
    }

    fn gd(steps: usize, lr: f64, wd: f64) -> InnerConfig {
        InnerConfig {
            steps,
            learning_rate: lr,
            weight_decay: wd,
            ..InnerConfig::default()
        }
    }

    /// `R(D_v, theta_T(w))` with `theta_{T-1}` frozen.
    #[allow(clippy::too_many_arguments)]
    fn truncated_risk(
        w: &[f64],
        theta_tm1: &ParamVector,
        tr: &AnnotatedDataset,
        va: &AnnotatedDataset,
        risk: &RiskSpec,
        model: &ModelSpec,
        family: LossFamily,
        cfg: &InnerConfig,
    ) -> f64 {
        let (_, theta) = inner_step(tr, w, model, family, cfg, theta_tm1, None).unwrap();
        risks::risk_value(risk, va, model, &theta, family).unwrap()
    }

    #[test]
    fn one_dimensional_quadratic_by_hand() {
        let tr = dataset(&[vec![1.0]], &[1.0]);
        let va = dataset(&[vec![1.0]], &[0.0]);
        let model = ModelSpec::linear(1);
        let cfg = gd(2, 0.25, 0.0);
        let res = train_weighted_erm(&tr, &[1.0], &model, LossFamily::Square, &cfg).unwrap();
        let g = hypergrad_w(&res, &tr, &va, &RiskSpec::erm(), &model, LossFamily::Square, None).unwrap();
        assert!((-cfg.learning_rate * g[0] - 0.375).abs() < 1e-15);

        let h = 1e-6;
        let r = |w: f64| truncated_risk(&[w], &res.theta_tm1, &tr, &va, &RiskSpec::erm(), &model, LossFamily::Square, &cfg);
        let fd = (r(1.0 + h) - r(1.0 - h)) / (2.0 * h);
        assert!((fd - 0.375).abs() < 1e-8);
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (AnnotatedDataset, AnnotatedDataset) {
        let mut make = |n: usize| {
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
            let y: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
            let envs: Vec<usize> = (0..n).map(|i| (i / 2) % 2).collect();
            dataset(&rows, &y).with_envs(envs).unwrap()
        };
        let tr = make(n);
        let va = make(n);
        (tr, va)
    }

    #[test]
    fn matches_finite_differences_through_last_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let models = [ModelSpec::logistic(3), ModelSpec::mlp(3, vec![4], Activation::Tanh)];
        for (k, risk) in [RiskSpec::erm(), RiskSpec::irmv1(2.0), RiskSpec::rex(1.0)].iter().enumerate() {
            for model in &models {
                let n = 6 + 2 * k;
                let (tr, va) = random_instance(&mut rng, n, 3);
                let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..2.0)).collect();
                let cfg = InnerConfig { init_seed: k as u64, ..gd(4, 0.3, 0.05) };
                let family = LossFamily::LogisticBce;
                let res = train_weighted_erm(&tr, &w, model, family, &cfg).unwrap();
                let g = hypergrad_w(&res, &tr, &va, risk, model, family, None).unwrap();
                let h = 1e-5;
                for i in 0..n {
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    wp[i] += h;
                    wm[i] -= h;
                    let fd = (truncated_risk(&wp, &res.theta_tm1, &tr, &va, risk, model, family, &cfg)
                        - truncated_risk(&wm, &res.theta_tm1, &tr, &va, risk, model, family, &cfg))
                        / (2.0 * h);
                    let an = -cfg.learning_rate * g[i];
                    assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn masked_samples_get_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (tr, va) = random_instance(&mut rng, 8, 2);
        let model = ModelSpec::logistic(2);
        let res = train_weighted_erm(&tr, &[1.0; 8], &model, LossFamily::LogisticBce, &gd(3, 0.5, 0.0)).unwrap();
        let mask = crate::outer::sample_mask(&[0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0], 1.0, &mut rng).unwrap();
        let full = hypergrad_w(&res, &tr, &va, &RiskSpec::erm(), &model, LossFamily::LogisticBce, None).unwrap();
        let g = hypergrad_w(&res, &tr, &va, &RiskSpec::erm(), &model, LossFamily::LogisticBce, Some(&mask)).unwrap();
        for i in 0..8 {
            if mask.m[i] == 0.0 {
                assert_eq!(g[i], 0.0);
            } else {
                assert_eq!(g[i], full[i]);
            }
        }
    }

    #[test]
    fn keep_probability_gradient_uses_straight_through_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (tr, va) = random_instance(&mut rng, 6, 2);
        let model = ModelSpec::logistic(2);
        let family = LossFamily::LogisticBce;
        let res = train_weighted_erm(&tr, &[1.0; 6], &model, family, &gd(3, 0.5, 0.0)).unwrap();
        let mut state = ReweightState::init(6, 3.0, true).unwrap();
        state.w = vec![0.5, 1.0, 2.0, 0.0, 1.0, 1.5];
        let mask = crate::outer::sample_mask(&state.s, 0.7, &mut rng).unwrap();
        let c = contraction_for(&res, &tr, &va, &RiskSpec::erm(), &model, family).unwrap();
        let gs = hypergrad_s(&res, &tr, &va, &RiskSpec::erm(), &model, family, &state, &mask).unwrap();
        for i in 0..6 {
            let want = state.w[i] * c.values[i] / 6.0 * mask.straight_through_factor(i, state.s[i]);
            assert!((gs[i] - want).abs() <= 1e-15 * want.abs().max(1.0));
        }
        assert_eq!(gs[3], 0.0);
    }

    #[test]
    fn mini_batch_rows_only() {
        use crate::inner::{BatchSize, InnerOptimizer};
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (tr, va) = random_instance(&mut rng, 10, 2);
        let model = ModelSpec::logistic(2);
        let cfg = InnerConfig {
            optimizer: InnerOptimizer::Sgd,
            batch_size: BatchSize::Size(4),
            ..gd(7, 0.3, 0.0)
        };
        let res = train_weighted_erm(&tr, &[1.0; 10], &model, LossFamily::LogisticBce, &cfg).unwrap();
        let batch = res.last_batch.clone().unwrap();
        let g = hypergrad_w(&res, &tr, &va, &RiskSpec::erm(), &model, LossFamily::LogisticBce, None).unwrap();
        for i in 0..10 {
            if !batch.contains(&i) {
                assert_eq!(g[i], 0.0);
            }
        }
        assert!(batch.iter().any(|&i| g[i] != 0.0));
    }

    #[test]
    fn agrees_in_direction_with_implicit_gradient() {
        // ridge least squares solved exactly; the implicit hypergradient is
        // taken by central differences of the closed-form solution
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let trials = 100;
        let mut agree = 0;
        for _ in 0..trials {
            let (n, d) = (10, 3);
            let truth: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut make = |n: usize, noise: f64| {
                let rows: Vec<Vec<f64>> =
                    (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
                let y: Vec<f64> = rows
                    .iter()
                    .map(|r| model::dot(r, &truth) + noise * rng.random_range(-1.0..1.0))
                    .collect();
                dataset(&rows, &y)
            };
            let tr = make(n, 1.0);
            let va = make(n, 0.0);
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
            let wd = 0.1;
            let model = ModelSpec::linear(d);
            let family = LossFamily::Square;
            // (1/n) sum w_i r_i^2 + wd/2 |theta|^2  <=>  sum w_i r_i^2 + (n wd / 2) |theta|^2
            let ridge = n as f64 * wd / 2.0;
            let val_risk = |w: &[f64]| {
                let theta =
                    solve_weighted_least_squares(tr.batch().features(), tr.batch().labels(), w, ridge).unwrap();
                risks::risk_value(&RiskSpec::erm(), &va, &model, &theta, family).unwrap()
            };
            let h = 1e-6;
            let implicit: Vec<f64> = (0..n)
                .map(|i| {
                    let mut wp = w.clone();
                    let mut wm = w.clone();
                    wp[i] += h;
                    wm[i] -= h;
                    (val_risk(&wp) - val_risk(&wm)) / (2.0 * h)
                })
                .collect();
            let cfg = gd(300, 0.3, wd);
            let res = train_weighted_erm(&tr, &w, &model, family, &cfg).unwrap();
            let g = hypergrad_w(&res, &tr, &va, &RiskSpec::erm(), &model, family, None).unwrap();
            let truncated: Vec<f64> = g.iter().map(|v| -cfg.learning_rate * v).collect();
            if model::dot(&truncated, &implicit) > 0.0 {
                agree += 1;
            }
        }
        assert!(agree as f64 >= 0.9 * trials as f64, "{agree}/{trials}");
    }
}
