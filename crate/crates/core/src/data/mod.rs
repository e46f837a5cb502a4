//! Seeded synthetic distribution-shift datasets.
//!
//! All features are Gaussian clouds around `±margin` per latent coordinate
//! with fixed per-family noise; labels are `{0, 1}`.

mod io;
mod mixing;

pub use io::{
    parse_dataset_csv, read_dataset_dir, write_dataset_csv, write_dataset_dir, DatasetMeta, DATASET_FORMAT_VERSION,
};
pub use mixing::{disentangle, entangle, make_mixing, MixingMatrix};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::model::{Batch, Matrix};
use crate::risks::AnnotatedDataset;
use crate::seed::derive_seed;
use crate::{Error, Result};

/// Standard deviation of the two-environment feature clouds.
pub const TWO_ENV_NOISE: f64 = 0.5;
/// Standard deviation of the attribute cloud in the group task.
pub const GROUP_ATTRIBUTE_NOISE: f64 = 0.25;
/// Standard deviation of each toy coordinate.
pub const TOY_NOISE: f64 = 0.5;

const TRAIN_STREAM: u64 = 1;
const VAL_STREAM: u64 = 2;
const TEST_STREAM: u64 = 3;
const MIXING_STREAM: u64 = 4;
const HOLDOUT_STREAM: u64 = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: AnnotatedDataset,
    pub val: AnnotatedDataset,
    pub test: AnnotatedDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoEnvConfig {
    pub n_train_per_env: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub train_corrs: (f64, f64),
    pub test_corr: f64,
    pub label_noise: f64,
    pub core_dim: usize,
    pub spurious_dim: usize,
    pub core_margin: f64,
    pub entangle: bool,
    pub seed: u64,
}

impl Default for TwoEnvConfig {
    fn default() -> Self {
        Self {
            n_train_per_env: 1000,
            n_val: 500,
            n_test: 2000,
            train_corrs: (0.9, 0.8),
            test_corr: 0.1,
            label_noise: 0.25,
            core_dim: 2,
            spurious_dim: 2,
            core_margin: 1.0,
            entangle: false,
            seed: 0,
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!("{name} must lie in (0, 1), got {p}")))
    }
}

fn check_count(name: &str, n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::param(format!("{name} must be positive")))
    } else {
        Ok(())
    }
}

impl TwoEnvConfig {
    pub fn validate(&self) -> Result<()> {
        check_count("n_train_per_env", self.n_train_per_env)?;
        check_count("n_val", self.n_val)?;
        check_count("n_test", self.n_test)?;
        check_count("core_dim", self.core_dim)?;
        check_count("spurious_dim", self.spurious_dim)?;
        check_prob("train_corrs.0", self.train_corrs.0)?;
        check_prob("train_corrs.1", self.train_corrs.1)?;
        check_prob("test_corr", self.test_corr)?;
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::param(format!("label_noise must lie in [0, 0.5), got {}", self.label_noise)));
        }
        if !(self.core_margin > 0.0 && self.core_margin.is_finite()) {
            return Err(Error::param("core_margin must be positive"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.core_dim + self.spurious_dim
    }

    /// Column indices of the core block (before any entanglement).
    pub fn core_columns(&self) -> Vec<usize> {
        (0..self.core_dim).collect()
    }
}

fn cloud<R: Rng>(rng: &mut R, sign: f64, margin: f64, noise: f64, dim: usize, out: &mut Vec<f64>) {
    for _ in 0..dim {
        let e: f64 = rng.sample(StandardNormal);
        out.push(sign * margin + noise * e);
    }
}

fn pm(bit: bool) -> f64 {
    if bit {
        1.0
    } else {
        -1.0
    }
}

struct Rows {
    features: Vec<f64>,
    labels: Vec<f64>,
    envs: Vec<usize>,
    groups: Vec<usize>,
}

impl Rows {
    fn new() -> Self {
        Self {
            features: Vec::new(),
            labels: Vec::new(),
            envs: Vec::new(),
            groups: Vec::new(),
        }
    }

    fn finish(self, dim: usize, mixing: Option<&MixingMatrix>, envs: bool) -> Result<AnnotatedDataset> {
        let n = self.labels.len();
        let mut x = Matrix::new(n, dim, self.features)?;
        if let Some(m) = mixing {
            x = entangle(&x, m)?;
        }
        let mut data = AnnotatedDataset::new(Batch::new(x, self.labels)?);
        if envs {
            data = data.with_envs(self.envs)?;
        }
        // small splits or extreme correlations can leave a cell empty; group
        // ids must be contiguous, so they are dropped in that case
        let mut seen = [false; 4];
        for &g in &self.groups {
            seen[g] = true;
        }
        if seen.iter().all(|&s| s) {
            data = data.with_groups(self.groups)?;
        }
        Ok(data)
    }
}

fn two_env_sample(cfg: &TwoEnvConfig, rng: &mut ChaCha8Rng, corr: f64, env: usize, rows: &mut Rows) {
    let clean = rng.random_bool(0.5);
    let y = clean ^ rng.random_bool(cfg.label_noise);
    let a = if rng.random_bool(corr) { y } else { !y };
    cloud(rng, pm(clean), cfg.core_margin, TWO_ENV_NOISE, cfg.core_dim, &mut rows.features);
    cloud(rng, pm(a), cfg.core_margin, TWO_ENV_NOISE, cfg.spurious_dim, &mut rows.features);
    rows.labels.push(f64::from(u8::from(y)));
    rows.envs.push(env);
    rows.groups.push(2 * usize::from(y) + usize::from(a));
}

/// The entangling map used by [`gen_two_env`], if any.
pub fn two_env_mixing(cfg: &TwoEnvConfig) -> Result<Option<MixingMatrix>> {
    if cfg.entangle {
        Ok(Some(make_mixing(cfg.dim(), derive_seed(cfg.seed, MIXING_STREAM))?))
    } else {
        Ok(None)
    }
}

fn two_env_val_rows(cfg: &TwoEnvConfig, n: usize, stream: u64) -> Rows {
    let corrs = [cfg.train_corrs.0, cfg.train_corrs.1];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream));
    let mut rows = Rows::new();
    for i in 0..n {
        let env = i % 2;
        two_env_sample(cfg, &mut rng, corrs[env], env, &mut rows);
    }
    rows
}

/// Two training environments with spurious/label agreement `train_corrs`,
/// an in-distribution validation split (alternating environments) and a
/// test split with agreement `test_corr`. Group ids are `2 y + a` where `a`
/// is the spurious bit; a split missing one of the four cells has none.
pub fn gen_two_env(cfg: &TwoEnvConfig) -> Result<Splits> {
    cfg.validate()?;
    let mixing = two_env_mixing(cfg)?;
    let corrs = [cfg.train_corrs.0, cfg.train_corrs.1];

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TRAIN_STREAM));
    let mut train = Rows::new();
    for (env, &corr) in corrs.iter().enumerate() {
        for _ in 0..cfg.n_train_per_env {
            two_env_sample(cfg, &mut rng, corr, env, &mut train);
        }
    }

    let val = two_env_val_rows(cfg, cfg.n_val, VAL_STREAM);

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TEST_STREAM));
    let mut test = Rows::new();
    for _ in 0..cfg.n_test {
        two_env_sample(cfg, &mut rng, cfg.test_corr, 0, &mut test);
    }

    let dim = cfg.dim();
    // a single-sample validation split only covers one environment
    let val_envs = cfg.n_val >= 2;
    Ok(Splits {
        train: train.finish(dim, mixing.as_ref(), true)?,
        val: val.finish(dim, mixing.as_ref(), val_envs)?,
        test: test.finish(dim, mixing.as_ref(), true)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Fraction of training samples whose attribute matches the label.
    pub majority_fraction: f64,
    /// Standard deviation of the core cloud.
    pub noise_scale: f64,
    pub core_dim: usize,
    pub attribute_dim: usize,
    pub seed: u64,
}

impl Default for GroupConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_val: 400,
            n_test: 2000,
            majority_fraction: 0.9,
            noise_scale: 1.0,
            core_dim: 2,
            attribute_dim: 2,
            seed: 0,
        }
    }
}

impl GroupConfig {
    pub fn validate(&self) -> Result<()> {
        check_count("n_train", self.n_train)?;
        check_count("n_val", self.n_val)?;
        check_count("n_test", self.n_test)?;
        check_count("core_dim", self.core_dim)?;
        check_count("attribute_dim", self.attribute_dim)?;
        if !(self.majority_fraction >= 0.5 && self.majority_fraction < 1.0) {
            return Err(Error::param(format!(
                "majority_fraction must lie in [0.5, 1), got {}",
                self.majority_fraction
            )));
        }
        if !(self.noise_scale > 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::param("noise_scale must be positive"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.core_dim + self.attribute_dim
    }
}

/// Group sizes for `n` samples, indexed by `2 y + a`. Minority cells
/// (`y != a`) get `floor((1 - majority) n / 2)` each, majority cells split
/// the rest.
pub fn skewed_group_sizes(n: usize, majority_fraction: f64) -> [usize; 4] {
    let minority = ((1.0 - majority_fraction) * n as f64 / 2.0 + 1e-9).floor() as usize;
    let rest = n - 2 * minority;
    [rest - rest / 2, minority, minority, rest / 2]
}

fn balanced_group_sizes(n: usize) -> [usize; 4] {
    let base = n / 4;
    let extra = n % 4;
    let mut out = [base; 4];
    for slot in out.iter_mut().take(extra) {
        *slot += 1;
    }
    out
}

fn group_split(cfg: &GroupConfig, sizes: [usize; 4], stream: u64) -> Result<AnnotatedDataset> {
    if let Some(g) = sizes.iter().position(|&c| c == 0) {
        return Err(Error::EmptyPartition { kind: "group", id: g });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream));
    let mut rows = Rows::new();
    for (g, &count) in sizes.iter().enumerate() {
        let (y, a) = (g / 2 == 1, g % 2 == 1);
        for _ in 0..count {
            cloud(&mut rng, pm(y), 1.0, cfg.noise_scale, cfg.core_dim, &mut rows.features);
            cloud(&mut rng, pm(a), 1.0, GROUP_ATTRIBUTE_NOISE, cfg.attribute_dim, &mut rows.features);
            rows.labels.push(f64::from(u8::from(y)));
            rows.groups.push(g);
        }
    }
    rows.finish(cfg.dim(), None, false)
}

/// Label × attribute groups, skewed in train and balanced in validation and
/// test. Every split carries group ids; callers hide the training ones.
pub fn gen_group(cfg: &GroupConfig) -> Result<Splits> {
    cfg.validate()?;
    Ok(Splits {
        train: group_split(cfg, skewed_group_sizes(cfg.n_train, cfg.majority_fraction), TRAIN_STREAM)?,
        val: group_split(cfg, balanced_group_sizes(cfg.n_val), VAL_STREAM)?,
        test: group_split(cfg, balanced_group_sizes(cfg.n_test), TEST_STREAM)?,
    })
}

/// Two-dimensional toy: `x1` is centred on `2y - 1`, `x2` on `2a - 1` where
/// the spurious bit `a` agrees with `y` with probability `corr`.
pub fn gen_toy_2d(n: usize, corr: f64, seed: u64) -> Result<AnnotatedDataset> {
    check_count("n", n)?;
    if !(0.0..=1.0).contains(&corr) {
        return Err(Error::param(format!("corr must lie in [0, 1], got {corr}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TRAIN_STREAM));
    let mut rows = Rows::new();
    for _ in 0..n {
        let y = rng.random_bool(0.5);
        let a = if rng.random_bool(corr) { y } else { !y };
        cloud(&mut rng, pm(y), 1.0, TOY_NOISE, 1, &mut rows.features);
        cloud(&mut rng, pm(a), 1.0, TOY_NOISE, 1, &mut rows.features);
        rows.labels.push(f64::from(u8::from(y)));
        rows.groups.push(2 * usize::from(y) + usize::from(a));
    }
    rows.finish(2, None, false)
}

/// Fraction of samples whose spurious bit (`group_id % 2`) matches the label.
pub fn spurious_agreement(data: &AnnotatedDataset) -> Option<f64> {
    let groups = data.group_ids()?;
    let agree = groups.iter().filter(|&&g| g / 2 == g % 2).count();
    Some(agree as f64 / groups.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    TwoEnv(TwoEnvConfig),
    Group(GroupConfig),
    Toy2d {
        n: usize,
        corr: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            DatasetConfig::TwoEnv(c) => c.validate(),
            DatasetConfig::Group(c) => c.validate(),
            DatasetConfig::Toy2d { n, corr, .. } => {
                check_count("n", *n)?;
                if (0.0..=1.0).contains(corr) {
                    Ok(())
                } else {
                    Err(Error::param("corr must lie in [0, 1]"))
                }
            }
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            DatasetConfig::TwoEnv(c) => c.seed,
            DatasetConfig::Group(c) => c.seed,
            DatasetConfig::Toy2d { seed, .. } => *seed,
        }
    }

    pub fn with_seed(mut self, new_seed: u64) -> Self {
        match &mut self {
            DatasetConfig::TwoEnv(c) => c.seed = new_seed,
            DatasetConfig::Group(c) => c.seed = new_seed,
            DatasetConfig::Toy2d { seed, .. } => *seed = new_seed,
        }
        self
    }

    /// Same config with `n` validation samples. The toy has one size for
    /// all splits.
    pub fn with_n_val(mut self, n: usize) -> Self {
        match &mut self {
            DatasetConfig::TwoEnv(c) => c.n_val = n,
            DatasetConfig::Group(c) => c.n_val = n,
            DatasetConfig::Toy2d { n: size, .. } => *size = n,
        }
        self
    }

    /// `n` fresh draws from the validation distribution, independent of
    /// every split produced by [`generate`](Self::generate).
    pub fn holdout(&self, n: usize) -> Result<AnnotatedDataset> {
        self.validate()?;
        match self {
            DatasetConfig::TwoEnv(c) => {
                let mixing = two_env_mixing(c)?;
                two_env_val_rows(c, n, HOLDOUT_STREAM).finish(c.dim(), mixing.as_ref(), n >= 2)
            }
            DatasetConfig::Group(c) => group_split(c, balanced_group_sizes(n), HOLDOUT_STREAM),
            DatasetConfig::Toy2d { corr, seed, .. } => gen_toy_2d(n, *corr, derive_seed(*seed, HOLDOUT_STREAM)),
        }
    }

    /// Generates all splits. The toy has a single distribution, so its
    /// validation and test splits are independent draws of the same law.
    pub fn generate(&self) -> Result<Splits> {
        match self {
            DatasetConfig::TwoEnv(c) => gen_two_env(c),
            DatasetConfig::Group(c) => gen_group(c),
            DatasetConfig::Toy2d { n, corr, seed } => Ok(Splits {
                train: gen_toy_2d(*n, *corr, *seed)?,
                val: gen_toy_2d(*n, *corr, derive_seed(*seed, VAL_STREAM))?,
                test: gen_toy_2d(*n, *corr, derive_seed(*seed, TEST_STREAM))?,
            }),
        }
    }
}
