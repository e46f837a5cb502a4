//! Accuracy summaries and the metrics/history files.

use std::io::Write;

use serde::Serialize;

use crate::loss::LossFamily;
use crate::model::{self, ModelSpec, ParamVector};
use crate::outer::IterationRecord;
use crate::risks::AnnotatedDataset;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitMetrics {
    pub accuracy: f64,
    /// Minimum per-group accuracy; equals `accuracy` without group labels.
    pub worst_group_accuracy: f64,
    pub group_accuracy: Vec<f64>,
    pub env_accuracy: Vec<f64>,
    pub mean_loss: f64,
}

fn per_partition(ids: Option<&[usize]>, hits: &[bool]) -> Vec<f64> {
    let Some(ids) = ids else {
        return Vec::new();
    };
    let k = ids.iter().max().map_or(0, |m| m + 1);
    let mut right = vec![0usize; k];
    let mut total = vec![0usize; k];
    for (&g, &h) in ids.iter().zip(hits) {
        total[g] += 1;
        right[g] += usize::from(h);
    }
    right.iter().zip(&total).map(|(&r, &t)| r as f64 / t as f64).collect()
}

pub fn split_metrics(
    data: &AnnotatedDataset,
    model: &ModelSpec,
    params: &ParamVector,
    family: LossFamily,
) -> Result<SplitMetrics> {
    let f = model::forward(model, params, data.batch())?;
    let labels = data.batch().labels();
    let mut hits = Vec::with_capacity(f.len());
    let mut loss = 0.0;
    for (&fi, &y) in f.iter().zip(labels) {
        hits.push(family.predict(fi) == y);
        loss += family.derivatives(fi, y)?.value;
    }
    let accuracy = hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64;
    let group_accuracy = per_partition(data.group_ids(), &hits);
    let worst = group_accuracy.iter().copied().fold(accuracy, f64::min);
    Ok(SplitMetrics {
        accuracy,
        worst_group_accuracy: worst,
        group_accuracy,
        env_accuracy: per_partition(data.env_ids(), &hits),
        mean_loss: loss / f.len() as f64,
    })
}

/// Final metrics of one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodMetrics {
    pub method: String,
    pub test: SplitMetrics,
    pub val: SplitMetrics,
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(";")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// One row per method. List-valued columns are `;`-separated.
pub fn write_metrics_csv<W: Write>(out: W, rows: &[MethodMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "test_accuracy",
        "test_worst_group_accuracy",
        "test_group_accuracy",
        "test_env_accuracy",
        "test_mean_loss",
        "val_accuracy",
        "val_worst_group_accuracy",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            format!("{:.6}", r.test.accuracy),
            format!("{:.6}", r.test.worst_group_accuracy),
            join(&r.test.group_accuracy),
            join(&r.test.env_accuracy),
            format!("{:.6}", r.test.mean_loss),
            format!("{:.6}", r.val.accuracy),
            format!("{:.6}", r.val.worst_group_accuracy),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-iteration record plus the training group weight fractions
/// `sum_{i in g} w_i s_i / sum_i w_i s_i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryRow {
    #[serde(flatten)]
    pub record: IterationRecord,
    pub group_fraction: Vec<f64>,
}

pub fn write_history_csv<W: Write>(out: W, rows: &[HistoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let groups = rows.first().map_or(0, |r| r.group_fraction.len());
    let mut header: Vec<String> = [
        "outer_iter",
        "val_risk",
        "val_accuracy",
        "inner_loss",
        "w_mean",
        "w_std",
        "w_min",
        "w_max",
        "w_norm",
        "s_sum",
        "s_saturation",
        "mask_kept",
    ]
    .map(String::from)
    .to_vec();
    header.extend((0..groups).map(|g| format!("group_fraction_{g}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let h = &r.record;
        let mut rec = vec![
            h.iteration.to_string(),
            format!("{:.9}", h.val_risk),
            format!("{:.6}", h.val_accuracy),
            format!("{:.9}", h.inner_loss),
            format!("{:.6}", h.w_mean),
            format!("{:.6}", h.w_std),
            format!("{:.6}", h.w_min),
            format!("{:.6}", h.w_max),
            format!("{:.6}", h.w_norm),
            format!("{:.6}", h.s_sum),
            format!("{:.6}", h.s_saturation),
            h.mask_kept.to_string(),
        ];
        rec.extend(r.group_fraction.iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Line-delimited JSON: one `history` record per iteration, then one
/// `final` record per method.
pub fn write_metrics_jsonl<W: Write>(mut out: W, history: &[HistoryRow], rows: &[MethodMetrics]) -> Result<()> {
    #[derive(Serialize)]
    #[serde(tag = "type", rename_all = "snake_case")]
    enum Line<'a> {
        History(&'a HistoryRow),
        Final(&'a MethodMetrics),
    }
    let ser = |e: serde_json::Error| Error::Io(std::io::Error::other(e.to_string()));
    for h in history {
        writeln!(out, "{}", serde_json::to_string(&Line::History(h)).map_err(ser)?)?;
    }
    for r in rows {
        writeln!(out, "{}", serde_json::to_string(&Line::Final(r)).map_err(ser)?)?;
    }
    Ok(())
}

/// Per-group histogram of final weights: `group,bin_lo,bin_hi,count`.
pub fn write_weight_histogram<W: Write>(out: W, weights: &[f64], groups: &[usize], bins: usize) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "bin_lo", "bin_hi", "count"]).map_err(csv_err)?;
    let max = weights.iter().copied().fold(0.0, f64::max);
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 };
    let k = groups.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![vec![0usize; bins]; k];
    for (&wi, &g) in weights.iter().zip(groups) {
        let b = ((wi / width) as usize).min(bins - 1);
        counts[g][b] += 1;
    }
    for (g, row) in counts.iter().enumerate() {
        for (b, c) in row.iter().enumerate() {
            w.write_record([
                g.to_string(),
                format!("{:.6}", b as f64 * width),
                format!("{:.6}", (b + 1) as f64 * width),
                c.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Batch, Matrix};

    #[test]
    fn worst_group_never_exceeds_average() {
        let x = Matrix::from_rows(&[vec![1.0], vec![-1.0], vec![1.0], vec![-1.0]]).unwrap();
        let data = AnnotatedDataset::new(Batch::new(x, vec![1.0, 0.0, 0.0, 0.0]).unwrap())
            .with_groups(vec![0, 0, 1, 1])
            .unwrap();
        let spec = ModelSpec::logistic(1);
        let m = split_metrics(&data, &spec, &ParamVector::new(vec![1.0]).unwrap(), LossFamily::LogisticBce).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.group_accuracy, vec![1.0, 0.5]);
        assert_eq!(m.worst_group_accuracy, 0.5);
        assert!(m.env_accuracy.is_empty());
    }
}
