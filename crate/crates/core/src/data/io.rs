//! Columnar dataset files: one CSV per split with header
//! `x0,...,x{d-1},label,env_id,group_id` (empty id cells when a split has no
//! such annotation) plus a `meta.json` holding the generating config.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetConfig, Splits};
use crate::model::{Batch, Matrix};
use crate::risks::AnnotatedDataset;
use crate::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub config: DatasetConfig,
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(line, e.to_string())
}

pub fn write_dataset_csv<W: Write>(out: W, data: &AnnotatedDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = data.batch().dim();
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.extend(["label", "env_id", "group_id"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    let x = data.batch().features();
    let labels = data.batch().labels();
    let id = |ids: Option<&[usize]>, i: usize| ids.map_or_else(String::new, |v| v[i].to_string());
    for i in 0..data.len() {
        let mut rec: Vec<String> = x.row(i).iter().map(|v| v.to_string()).collect();
        rec.push(labels[i].to_string());
        rec.push(id(data.env_ids(), i));
        rec.push(id(data.group_ids(), i));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_id(cell: &str, line: usize, what: &str) -> Result<Option<usize>> {
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse()
        .map(Some)
        .map_err(|_| Error::parse(line, format!("bad {what} {cell:?}")))
}

/// Parses one split. Id columns must be either filled on every row or empty
/// on every row.
pub fn parse_dataset_csv(text: &str) -> Result<AnnotatedDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_err)?.clone();
    let cols: Vec<&str> = header.iter().collect();
    let k = cols.len();
    if k < 4 || cols[k - 3] != "label" || cols[k - 2] != "env_id" || cols[k - 1] != "group_id" {
        return Err(Error::parse(1, "header must end with label,env_id,group_id"));
    }
    let d = k - 3;
    for (j, c) in cols[..d].iter().enumerate() {
        if *c != format!("x{j}") {
            return Err(Error::parse(1, format!("feature column {j} is named {c:?}")));
        }
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut envs: Vec<Option<usize>> = Vec::new();
    let mut groups: Vec<Option<usize>> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != k {
            return Err(Error::parse(line, format!("expected {k} fields, found {}", rec.len())));
        }
        for cell in rec.iter().take(d) {
            let v: f64 = cell.parse().map_err(|_| Error::parse(line, format!("bad feature {cell:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(line, "non-finite feature"));
            }
            features.push(v);
        }
        let y: f64 = rec[d].parse().map_err(|_| Error::parse(line, format!("bad label {:?}", &rec[d])))?;
        if !y.is_finite() {
            return Err(Error::parse(line, "non-finite label"));
        }
        labels.push(y);
        envs.push(parse_id(&rec[d + 1], line, "env_id")?);
        groups.push(parse_id(&rec[d + 2], line, "group_id")?);
    }
    if labels.is_empty() {
        return Err(Error::parse(1, "dataset has no rows"));
    }
    let n = labels.len();
    let mut data = AnnotatedDataset::new(Batch::new(Matrix::new(n, d, features)?, labels)?);
    if let Some(ids) = all_or_none(&envs, "env_id")? {
        data = data.with_envs(ids)?;
    }
    if let Some(ids) = all_or_none(&groups, "group_id")? {
        data = data.with_groups(ids)?;
    }
    Ok(data)
}

fn all_or_none(ids: &[Option<usize>], what: &str) -> Result<Option<Vec<usize>>> {
    match ids.iter().filter(|v| v.is_some()).count() {
        0 => Ok(None),
        c if c == ids.len() => Ok(Some(ids.iter().map(|v| v.unwrap_or_default()).collect())),
        _ => Err(Error::parse(0, format!("{what} is missing on some rows"))),
    }
}

const SPLITS: [&str; 3] = ["train", "val", "test"];

pub fn write_dataset_dir(dir: &Path, config: &DatasetConfig, splits: &Splits) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, data) in SPLITS.iter().zip([&splits.train, &splits.val, &splits.test]) {
        let file = fs::File::create(dir.join(format!("{name}.csv")))?;
        write_dataset_csv(std::io::BufWriter::new(file), data)?;
    }
    let meta = DatasetMeta {
        format_version: DATASET_FORMAT_VERSION,
        config: *config,
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::param(e.to_string()))?;
    fs::write(dir.join("meta.json"), json + "\n")?;
    Ok(())
}

/// Reads the three split files and the metadata record.
pub fn read_dataset_dir(dir: &Path) -> Result<(DatasetMeta, Splits)> {
    let meta_text = fs::read_to_string(dir.join("meta.json"))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text).map_err(|e| Error::Config {
        field: "meta.json".into(),
        msg: e.to_string(),
    })?;
    if meta.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Config {
            field: "format_version".into(),
            msg: format!("unsupported version {}", meta.format_version),
        });
    }
    let read = |name: &str| -> Result<AnnotatedDataset> {
        parse_dataset_csv(&fs::read_to_string(dir.join(format!("{name}.csv")))?)
    };
    let splits = Splits {
        train: read("train")?,
        val: read("val")?,
        test: read("test")?,
    };
    Ok((meta, splits))
}
