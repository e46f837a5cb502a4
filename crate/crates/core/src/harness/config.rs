//! TOML run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::DatasetConfig;
use crate::inner::InnerConfig;
use crate::loss::LossFamily;
use crate::model::{Activation, ModelKind, ModelSpec};
use crate::outer::OuterConfig;
use crate::risks::RiskSpec;
use crate::seed::derive_seed;
use crate::{Error, Result};

/// Comparison methods trained next to the reweighting run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// Unweighted training.
    Erm,
    /// Training weights `n / (G n_g)` from the (otherwise hidden) training
    /// group labels.
    GroupOracleUpweight,
    /// IRMv1 objective minimised directly on the training environments.
    Irmv1Direct,
    /// Worst-group objective minimised directly on the training groups.
    GroupDroDirect,
    /// Unweighted training on the core latent block only.
    OracleCore,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::Erm => "erm",
            Baseline::GroupOracleUpweight => "group_oracle_upweight",
            Baseline::Irmv1Direct => "irmv1_direct",
            Baseline::GroupDroDirect => "group_dro_direct",
            Baseline::OracleCore => "oracle_core",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_loss")]
    pub loss: LossFamily,
}

fn default_loss() -> LossFamily {
    LossFamily::LogisticBce
}

impl ModelSection {
    pub fn spec(&self, input_dim: usize) -> ModelSpec {
        ModelSpec {
            kind: self.kind,
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OuterSection {
    pub iterations: usize,
    pub lr_w: f64,
    pub lr_s: f64,
    pub risk: RiskSpec,
    pub temperature: f64,
    pub sparsity_enabled: bool,
    /// Budget `K` as a fraction of the training set size.
    pub budget_fraction: f64,
    /// Report weights divided by their mean in the weight file.
    pub report_normalized_weights: bool,
}

impl Default for OuterSection {
    fn default() -> Self {
        let o = OuterConfig::default();
        Self {
            iterations: o.iterations,
            lr_w: o.lr_w,
            lr_s: o.lr_s,
            risk: o.risk,
            temperature: o.temperature,
            sparsity_enabled: false,
            budget_fraction: 0.8,
            report_normalized_weights: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub n_vals: Vec<usize>,
    pub repeats: usize,
    /// Held-out size as a multiple of `n_val`.
    pub holdout_factor: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            n_vals: vec![100, 400, 1600, 6400],
            repeats: 20,
            holdout_factor: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineOptions {
    /// Penalty weight of the IRMv1-direct baseline.
    pub irm_lambda: f64,
    /// Fraction of the inner steps run as plain ERM before the penalty is
    /// switched on.
    pub irm_warmup_fraction: f64,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self {
            irm_lambda: 1000.0,
            irm_warmup_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub baselines: Vec<Baseline>,
    pub dataset: DatasetConfig,
    pub model: ModelSection,
    #[serde(default)]
    pub inner: InnerConfig,
    #[serde(default)]
    pub outer: OuterSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub baseline_options: BaselineOptions,
}

fn default_output_dir() -> String {
    "maple-out".into()
}

const DATA_STREAM: u64 = 0xda7a;
const INNER_STREAM: u64 = 0x1e2e;
const OUTER_STREAM: u64 = 0x0e7e;

fn field(name: &str, err: Error) -> Error {
    match err {
        Error::Config { .. } => err,
        other => Error::Config {
            field: name.into(),
            msg: other.to_string(),
        },
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config {
            field: e.span().map_or_else(String::new, |s| format!("bytes {}..{}", s.start, s.end)),
            msg: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate().map_err(|e| field("dataset", e))?;
        self.inner.validate().map_err(|e| field("inner", e))?;
        if self.inner.init_seed != 0 {
            return Err(Error::Config {
                field: "inner.init_seed".into(),
                msg: "derived from the top-level seed; remove it".into(),
            });
        }
        self.outer_config().validate().map_err(|e| field("outer", e))?;
        let b = self.outer.budget_fraction;
        if !(b > 0.0 && b <= 1.0) {
            return Err(Error::Config {
                field: "outer.budget_fraction".into(),
                msg: format!("must lie in (0, 1], got {b}"),
            });
        }
        self.model.spec(1).validate().map_err(|e| field("model", e))?;
        if self.sweep.repeats == 0 || self.sweep.holdout_factor == 0 || self.sweep.n_vals.contains(&0) {
            return Err(Error::Config {
                field: "sweep".into(),
                msg: "repeats, holdout_factor and n_vals must be positive".into(),
            });
        }
        if !(self.baseline_options.irm_lambda >= 0.0) {
            return Err(Error::Config {
                field: "baseline_options.irm_lambda".into(),
                msg: "must be nonnegative".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.baseline_options.irm_warmup_fraction) {
            return Err(Error::Config {
                field: "baseline_options.irm_warmup_fraction".into(),
                msg: "must lie in [0, 1]".into(),
            });
        }
        Ok(())
    }

    /// Dataset config with its seed derived from the run seed.
    pub fn dataset_config(&self) -> DatasetConfig {
        self.dataset.with_seed(derive_seed(self.seed, DATA_STREAM))
    }

    pub fn inner_config(&self) -> InnerConfig {
        inner_for_seed(&self.inner, self.seed)
    }

    pub fn outer_config(&self) -> OuterConfig {
        OuterConfig {
            iterations: self.outer.iterations,
            lr_w: self.outer.lr_w,
            lr_s: self.outer.lr_s,
            risk: self.outer.risk,
            temperature: self.outer.temperature,
            sparsity_enabled: self.outer.sparsity_enabled,
            seed: derive_seed(self.seed, OUTER_STREAM),
        }
    }

    /// Hex SHA-256 of the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Copy of this config with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Inner config whose initialisation seed is derived from a run seed, so
/// every method trained under one run shares the same initial parameters.
pub fn inner_for_seed(inner: &InnerConfig, seed: u64) -> InnerConfig {
    InnerConfig {
        init_seed: derive_seed(seed, INNER_STREAM),
        ..inner.clone()
    }
}

/// `[model]` and optional `[inner]` tables read from any TOML file,
/// ignoring other tables, so a full run config can be reused.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ModelFile {
    pub model: ModelSection,
    #[serde(default)]
    pub inner: InnerConfig,
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self> {
        let f: ModelFile = toml::from_str(text).map_err(|e| Error::Config {
            field: "model".into(),
            msg: e.message().to_string(),
        })?;
        f.inner.validate().map_err(|e| field("inner", e))?;
        f.model.spec(1).validate().map_err(|e| field("model", e))?;
        Ok(f)
    }
}

/// Dataset config read either from a `[dataset]` table or from the top level
/// of the file.
pub fn parse_dataset_config(text: &str) -> Result<DatasetConfig> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config {
        field: "dataset".into(),
        msg: e.message().to_string(),
    })?;
    let value = match table.get("dataset") {
        Some(v) => v.clone(),
        None => toml::Value::Table(table),
    };
    let cfg: DatasetConfig = value.try_into().map_err(|e: toml::de::Error| Error::Config {
        field: "dataset".into(),
        msg: e.message().to_string(),
    })?;
    cfg.validate().map_err(|e| field("dataset", e))?;
    Ok(cfg)
}
