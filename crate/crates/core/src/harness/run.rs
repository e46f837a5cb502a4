//! Single runs: baselines, the reweighting run, and weight-file evaluation.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::{inner_for_seed, Baseline, ModelFile, RunConfig};
use super::metrics::{
    split_metrics, write_history_csv, write_metrics_csv, write_metrics_jsonl, write_weight_histogram, HistoryRow,
    MethodMetrics,
};
use crate::data::{self, DatasetConfig, Splits};
use crate::inner::{self, InnerConfig};
use crate::loss::LossFamily;
use crate::model::{Batch, ModelSpec, ParamVector};
use crate::outer::{self, mean_normalized, MapleOutput, WeightFileHeader, WeightRecord};
use crate::risks::{self, AnnotatedDataset, RiskSpec};
use crate::{Error, Result};

/// Environment variable that, when set, is prepended to relative output
/// directories.
pub const OUTPUT_ROOT_ENV: &str = "MAPLE_OUTPUT_ROOT";

pub fn resolve_output_dir(dir: &str) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if !root.is_empty() => Path::new(&root).join(dir),
        _ => PathBuf::from(dir),
    }
}

/// `n / (G n_g)` for every sample, from group labels.
pub fn inverse_group_size_weights(groups: &[usize]) -> Vec<f64> {
    let k = groups.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; k];
    for &g in groups {
        counts[g] += 1;
    }
    let n = groups.len() as f64;
    groups.iter().map(|&g| n / (k as f64 * counts[g] as f64)).collect()
}

/// Gradient descent on `R(data, theta) + weight_decay |theta|^2 / 2` from the
/// configured initialisation.
pub fn train_risk_direct(
    data: &AnnotatedDataset,
    risk: &RiskSpec,
    model: &ModelSpec,
    family: LossFamily,
    cfg: &InnerConfig,
) -> Result<ParamVector> {
    cfg.validate()?;
    let mut theta = model.init_params(cfg.init_seed).into_inner();
    for step in 0..cfg.steps {
        let params = ParamVector::new(theta.clone())?;
        let (value, grad) = risks::risk_value_and_grad(risk, data, model, &params, family)?;
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value });
        }
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= cfg.learning_rate * (g + cfg.weight_decay * *t);
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { step, loss: value });
        }
    }
    ParamVector::new(theta)
}

/// IRMv1 by gradient descent: plain ERM for the warm-up steps, then the
/// penalised objective divided by `max(1, lambda)` so the step size stays
/// usable for large penalties.
pub fn train_irmv1_direct(
    data: &AnnotatedDataset,
    lambda: f64,
    warmup_fraction: f64,
    model: &ModelSpec,
    family: LossFamily,
    cfg: &InnerConfig,
) -> Result<ParamVector> {
    cfg.validate()?;
    let warmup = ((cfg.steps as f64 * warmup_fraction).round() as usize).min(cfg.steps);
    let erm = InnerConfig {
        steps: warmup.max(1),
        ..cfg.clone()
    };
    let mut theta = if warmup > 0 {
        train_risk_direct(data, &RiskSpec::erm(), model, family, &erm)?
    } else {
        model.init_params(cfg.init_seed)
    };
    let scale = lambda.max(1.0);
    let risk = RiskSpec::irmv1(lambda);
    let mut values = theta.clone().into_inner();
    for step in warmup..cfg.steps {
        let (value, grad) = risks::risk_value_and_grad(&risk, data, model, &theta, family)?;
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value });
        }
        for (t, g) in values.iter_mut().zip(&grad) {
            *t -= cfg.learning_rate * (g / scale + cfg.weight_decay * *t);
        }
        theta = ParamVector::new(values.clone()).map_err(|_| Error::Diverged { step, loss: value })?;
    }
    Ok(theta)
}

fn keep_columns(data: &AnnotatedDataset, features: crate::model::Matrix) -> Result<AnnotatedDataset> {
    let mut out = AnnotatedDataset::new(Batch::new(features, data.batch().labels().to_vec())?);
    if let Some(e) = data.env_ids() {
        out = out.with_envs(e.to_vec())?;
    }
    if let Some(g) = data.group_ids() {
        out = out.with_groups(g.to_vec())?;
    }
    Ok(out)
}

/// The splits restricted to the core latent block (undoing any entanglement).
pub fn core_only(config: &DatasetConfig, splits: &Splits) -> Result<Splits> {
    let (cols, mixing): (Vec<usize>, _) = match config {
        DatasetConfig::TwoEnv(c) => (c.core_columns(), data::two_env_mixing(c)?),
        DatasetConfig::Group(c) => ((0..c.core_dim).collect(), None),
        DatasetConfig::Toy2d { .. } => (vec![0], None),
    };
    let project = |d: &AnnotatedDataset| -> Result<AnnotatedDataset> {
        let latent = match &mixing {
            Some(m) => data::disentangle(d.batch().features(), m)?,
            None => d.batch().features().clone(),
        };
        keep_columns(d, latent.select_cols(&cols))
    };
    Ok(Splits {
        train: project(&splits.train)?,
        val: project(&splits.val)?,
        test: project(&splits.test)?,
    })
}

fn method_metrics(
    name: &str,
    splits: &Splits,
    model: &ModelSpec,
    theta: &ParamVector,
    family: LossFamily,
) -> Result<MethodMetrics> {
    Ok(MethodMetrics {
        method: name.into(),
        test: split_metrics(&splits.test, model, theta, family)?,
        val: split_metrics(&splits.val, model, theta, family)?,
    })
}

pub fn run_baseline(
    baseline: Baseline,
    config: &RunConfig,
    splits: &Splits,
) -> Result<MethodMetrics> {
    let family = config.model.loss;
    let inner = config.inner_config();
    let model = config.model.spec(splits.train.batch().dim());
    let n = splits.train.len();
    let need_groups = || {
        splits
            .train
            .group_ids()
            .ok_or(Error::MissingAnnotation("training group ids"))
    };
    let theta = match baseline {
        Baseline::Erm => inner::train_weighted_erm(&splits.train, &vec![1.0; n], &model, family, &inner)?.theta_t,
        Baseline::GroupOracleUpweight => {
            let w = inverse_group_size_weights(need_groups()?);
            inner::train_weighted_erm(&splits.train, &w, &model, family, &inner)?.theta_t
        }
        Baseline::Irmv1Direct => {
            let opts = &config.baseline_options;
            train_irmv1_direct(&splits.train, opts.irm_lambda, opts.irm_warmup_fraction, &model, family, &inner)?
        }
        Baseline::GroupDroDirect => {
            need_groups()?;
            train_risk_direct(&splits.train, &RiskSpec::group_dro(), &model, family, &inner)?
        }
        Baseline::OracleCore => {
            let core = core_only(&config.dataset_config(), splits)?;
            let model = config.model.spec(core.train.batch().dim());
            let theta = inner::train_weighted_erm(&core.train, &vec![1.0; n], &model, family, &inner)?.theta_t;
            return method_metrics(baseline.name(), &core, &model, &theta, family);
        }
    };
    method_metrics(baseline.name(), splits, &model, &theta, family)
}

/// Everything produced by one reweighting run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config_hash: String,
    pub metrics: Vec<MethodMetrics>,
    pub history: Vec<HistoryRow>,
    pub maple: Option<MapleOutput>,
    pub output_dir: Option<PathBuf>,
    pub wall_clock_secs: f64,
}

impl RunOutcome {
    pub fn method(&self, name: &str) -> Option<&MethodMetrics> {
        self.metrics.iter().find(|m| m.method == name)
    }
}

pub const MAPLE_METHOD: &str = "maple";

/// Runs the reweighting loop on generated splits. The outer loop only sees
/// the training split (without group labels) and the validation split.
pub fn run_maple_on(config: &RunConfig, splits: &Splits) -> Result<(MapleOutput, Vec<HistoryRow>)> {
    let family = config.model.loss;
    let model = config.model.spec(splits.train.batch().dim());
    let n = splits.train.len();
    let budget = config.outer.budget_fraction * n as f64;
    let hidden_train = splits.train.without_groups();
    let groups = splits.train.group_ids().map(<[usize]>::to_vec);
    let mut fractions = Vec::new();
    let out = outer::run_maple_observed(
        &hidden_train,
        &splits.val,
        &model,
        family,
        &config.inner_config(),
        &config.outer_config(),
        budget,
        |_, state| {
            let Some(g) = &groups else {
                fractions.push(Vec::new());
                return;
            };
            let k = g.iter().max().map_or(0, |m| m + 1);
            let mut mass = vec![0.0; k];
            for i in 0..state.len() {
                mass[g[i]] += state.w[i] * state.s[i];
            }
            let total: f64 = mass.iter().sum();
            fractions.push(mass.iter().map(|m| if total > 0.0 { m / total } else { 0.0 }).collect());
        },
    )?;
    let history = out
        .history
        .iter()
        .zip(fractions)
        .map(|(r, f)| HistoryRow {
            record: r.clone(),
            group_fraction: f,
        })
        .collect();
    Ok((out, history))
}

/// Group weight fractions at initialisation (`w = 1`, `s` constant), i.e.
/// the group size proportions.
pub fn initial_group_fractions(groups: &[usize]) -> Vec<f64> {
    let k = groups.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0.0; k];
    for &g in groups {
        counts[g] += 1.0;
    }
    counts.iter().map(|c| c / groups.len() as f64).collect()
}

/// Weighted training with fixed effective weights, evaluated on val/test.
pub fn evaluate_weights(
    name: &str,
    splits: &Splits,
    model: &ModelSpec,
    family: LossFamily,
    inner_cfg: &InnerConfig,
    effective: &[f64],
) -> Result<MethodMetrics> {
    let theta = inner::train_weighted_erm(&splits.train, effective, model, family, inner_cfg)?.theta_t;
    method_metrics(name, splits, model, &theta, family)
}

/// Baselines, then the reweighting run (skipped when `iterations = 0`).
pub fn run_in_memory(config: &RunConfig, splits: &Splits) -> Result<RunOutcome> {
    let start = Instant::now();
    let mut metrics = Vec::new();
    let mut baselines = config.baselines.clone();
    baselines.sort();
    baselines.dedup();
    for b in baselines {
        metrics.push(run_baseline(b, config, splits)?);
    }
    let (maple, history) = if config.outer.iterations > 0 {
        let (out, history) = run_maple_on(config, splits)?;
        let model = config.model.spec(splits.train.batch().dim());
        metrics.push(evaluate_weights(
            MAPLE_METHOD,
            splits,
            &model,
            config.model.loss,
            &config.inner_config(),
            &out.effective_weights(),
        )?);
        (Some(out), history)
    } else {
        (None, Vec::new())
    };
    Ok(RunOutcome {
        config_hash: config.hash(),
        metrics,
        history,
        maple,
        output_dir: None,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Weight file for a run: one record per training sample.
pub fn write_weights_file(path: &Path, config: &RunConfig, out: &MapleOutput) -> Result<()> {
    let mut header = WeightFileHeader::default();
    header.insert("config_hash", config.hash());
    header.insert("seed", config.seed.to_string());
    let mut records = out.records();
    if config.outer.report_normalized_weights {
        header.insert("normalized", "mean");
        let w: Vec<f64> = records.iter().map(|r| r.w).collect();
        for (r, v) in records.iter_mut().zip(mean_normalized(&w)) {
            r.w = v;
        }
    }
    outer::write_weight_records(&mut create(path)?, &header, &records)
}

/// Full run from a config: generates data, runs everything and writes
/// artifacts under `out_dir`.
pub fn run_experiment(config: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    let data_cfg = config.dataset_config();
    let splits = data_cfg.generate()?;
    let mut outcome = run_in_memory(config, &splits)?;

    fs::create_dir_all(out_dir)?;
    data::write_dataset_dir(&out_dir.join("data"), &data_cfg, &splits)?;
    let toml_text = toml::to_string(config).map_err(|e| Error::param(e.to_string()))?;
    fs::write(
        out_dir.join("config.toml"),
        format!("# config_hash={} seed={}\n{toml_text}", outcome.config_hash, config.seed),
    )?;
    write_metrics_csv(create(&out_dir.join("metrics.csv"))?, &outcome.metrics)?;
    write_metrics_jsonl(create(&out_dir.join("metrics.jsonl"))?, &outcome.history, &outcome.metrics)?;
    if let Some(maple) = &outcome.maple {
        write_history_csv(create(&out_dir.join("history.csv"))?, &outcome.history)?;
        write_weights_file(&out_dir.join("weights.txt"), config, maple)?;
        if let Some(g) = splits.train.group_ids() {
            write_weight_histogram(create(&out_dir.join("weight_hist.csv"))?, &maple.state.w, g, 20)?;
        }
    }
    let timing = serde_json::json!({
        "config_hash": outcome.config_hash,
        "seed": config.seed,
        "wall_clock_secs": outcome.wall_clock_secs,
    });
    fs::write(out_dir.join("timing.json"), format!("{timing:#}\n"))?;
    outcome.output_dir = Some(out_dir.to_path_buf());
    Ok(outcome)
}

/// Weighted training with weights read from a file, on a dataset directory.
/// The inner initialisation follows the seed recorded in the weight file, so
/// unit weights reproduce the ERM baseline of that run.
pub fn eval_weighted_erm(data_dir: &Path, weights_path: &Path, model_path: &Path) -> Result<MethodMetrics> {
    let (_, splits) = data::read_dataset_dir(data_dir)?;
    let (header, records) = outer::parse_weight_records(&fs::read_to_string(weights_path)?)?;
    let model_file = ModelFile::parse(&fs::read_to_string(model_path)?)?;
    let seed: u64 = match header.get("seed") {
        Some(s) => s.parse().map_err(|_| Error::Config {
            field: "weights.seed".into(),
            msg: format!("bad seed {s:?}"),
        })?,
        None => 0,
    };
    let effective = effective_weights(&records, splits.train.len())?;
    let model = model_file.model.spec(splits.train.batch().dim());
    let inner_cfg = inner_for_seed(&model_file.inner, seed);
    evaluate_weights("weighted_erm", &splits, &model, model_file.model.loss, &inner_cfg, &effective)
}

/// `w_i m_i` indexed by sample; records must cover `0..n` exactly.
pub fn effective_weights(records: &[WeightRecord], n: usize) -> Result<Vec<f64>> {
    if records.len() != n {
        return Err(Error::dims(format!("weight file has {} records for {n} training samples", records.len())));
    }
    let mut w = vec![f64::NAN; n];
    for r in records {
        if r.index >= n {
            return Err(Error::dims(format!("weight index {} out of range for {n} samples", r.index)));
        }
        w[r.index] = if r.m { r.w } else { 0.0 };
    }
    Ok(w)
}
