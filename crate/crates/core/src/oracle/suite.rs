//! Seeded battery of exact checks over random joints and mixings.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    closed_form_weight, conditional_entropy, optimal_debiased_predictor, population_wls, random_joint, sample_joint,
    weighted_moments, Conditioning, WeightTable,
};
use crate::data::make_mixing;
use crate::inner::solve_weighted_least_squares;
use crate::seed::derive_seed;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    pub trials: usize,
    /// Replace the closed-form weight with `w = 1` (negative control).
    pub inject_uniform_weight: bool,
    /// Samples for the finite-sample regression check; 0 skips it.
    pub finite_samples: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 100,
            inject_uniform_weight: false,
            finite_samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub seed: u64,
    pub trials: usize,
    pub checks: Vec<CheckResult>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "oracle suite: seed {} trials {}", self.seed, self.trials)?;
        writeln!(f, "{:<28} {:>12} {:>10}  status", "check", "max_error", "tol")?;
        for c in &self.checks {
            let status = if c.passed() { "PASS" } else { "FAIL" };
            writeln!(f, "{:<28} {:>12.3e} {:>10.1e}  {status}", c.name, c.max_error, c.tolerance)?;
        }
        Ok(())
    }
}

struct Tracker(Vec<CheckResult>);

impl Tracker {
    fn record(&mut self, name: &'static str, tolerance: f64, err: f64) {
        // NaN must fail
        let err = if err.is_nan() { f64::INFINITY } else { err };
        match self.0.iter_mut().find(|c| c.name == name) {
            Some(c) => c.max_error = c.max_error.max(err),
            None => self.0.push(CheckResult {
                name,
                max_error: err,
                tolerance,
            }),
        }
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Trial 0 is always the minimal `2 x 2 x 2` case; the rest draw
/// `|Z_c|, |Z_s|` from `{2, 3}`.
pub fn oracle_suite(opts: &SuiteOptions) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut t = Tracker(Vec::new());
    for trial in 0..opts.trials {
        let (nc, ns) = if trial == 0 {
            (2, 2)
        } else {
            (rng.random_range(2..=3), rng.random_range(2..=3))
        };
        let joint = random_joint(&mut rng, 2, nc, ns)?;
        let mixing = make_mixing(joint.dim(), derive_seed(opts.seed, trial as u64))?;
        let weight = if opts.inject_uniform_weight {
            WeightTable::uniform(&joint)
        } else {
            closed_form_weight(&joint)?
        };

        t.record("mean_weight_is_one", 1e-12, (weight.mean(&joint) - 1.0).abs());
        let mom = weighted_moments(&joint, &weight, &mixing)?;
        t.record("preserves_p_y_zc", 1e-12, max_abs_diff(&mom.p_y_zc, &joint.marginal_y_zc()));
        t.record("preserves_p_zs", 1e-12, max_abs_diff(&mom.p_zs, &joint.marginal_zs()));

        let mut indep = 0.0f64;
        for (y, c, s) in joint.cells() {
            let pw = joint.prob(y, c, s) * weight.get(&joint, y, c, s);
            let prod = mom.p_y_zc[y * joint.nc() + c] * mom.p_zs[s];
            indep = indep.max((pw - prod).abs());
        }
        t.record("spurious_independent", 1e-12, indep);
        t.record("cov_core_spurious_zero", 1e-12, mom.cov_core_spurious.amax());
        let dc = joint.core_dim();
        let mut cross_err = 0.0f64;
        for k in dc..joint.dim() {
            cross_err = cross_err.max((mom.cross_z[k] - mom.mean_z[k] * mom.mean_y).abs());
        }
        t.record("cross_moment_factorizes", 1e-12, cross_err);

        let fit = population_wls(&joint, &weight, &mixing, false)?;
        let bar = optimal_debiased_predictor(&joint, &mixing)?;
        t.record("spurious_block_zero", 1e-8, fit.spurious_block().iter().fold(0.0, |m, v| m.max(v.abs())));
        t.record(
            "core_matches_debiased",
            1e-8,
            max_abs_diff(fit.core_block(), bar.theta_bar_c.as_slice())
                .max(max_abs_diff(fit.theta_x.as_slice(), bar.theta_bar.as_slice())),
        );

        let h_both = conditional_entropy(&joint, Some(&weight), Conditioning::Both)?;
        let h_core_w = conditional_entropy(&joint, Some(&weight), Conditioning::Core)?;
        let h_core = conditional_entropy(&joint, None, Conditioning::Core)?;
        t.record("entropy_unbiased", 1e-12, (h_both - h_core_w).abs());
        t.record("entropy_core_preserving", 1e-12, (h_core_w - h_core).abs());
    }

    if opts.finite_samples > 0 {
        let joint = random_joint(&mut rng, 2, 2, 2)?;
        let mixing = make_mixing(joint.dim(), derive_seed(opts.seed, u64::MAX))?;
        let weight = if opts.inject_uniform_weight {
            WeightTable::uniform(&joint)
        } else {
            closed_form_weight(&joint)?
        };
        let (x, y, w) = sample_joint(&joint, &mixing, &weight, opts.finite_samples, derive_seed(opts.seed, 7))?;
        let theta_x = solve_weighted_least_squares(&x, &y, &w, 0.0)?;
        // pull back to latent coordinates: theta_z = S^T theta_x
        let s = mixing.s();
        let d = joint.dim();
        let mut spurious = 0.0f64;
        for k in joint.core_dim()..d {
            let v: f64 = (0..d).map(|r| s.get(r, k) * theta_x.as_slice()[r]).sum();
            spurious = spurious.max(v.abs());
        }
        t.record("finite_sample_spurious", 0.05, spurious);
    }

    Ok(OracleReport {
        seed: opts.seed,
        trials: opts.trials,
        checks: t.0,
    })
}
