//! Exact computations over finite joint laws `P(y, z_c, z_s)` with real
//! embeddings for every category, observed through an invertible linear map
//! `x = S [z_c; z_s]`.

mod io;
mod suite;

pub use io::{parse_joint, write_joint};
pub use suite::{oracle_suite, CheckResult, OracleReport, SuiteOptions};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::MixingMatrix;
use crate::model::Matrix;
use crate::{Error, Result};

/// Tolerance on the total probability mass.
pub const MASS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    y_values: Vec<f64>,
    zc_values: Vec<Vec<f64>>,
    zs_values: Vec<Vec<f64>>,
    /// `p[(y * |Z_c| + c) * |Z_s| + s]`.
    p: Vec<f64>,
}

fn embedding_dim(values: &[Vec<f64>], what: &str) -> Result<usize> {
    let d = values.first().map(Vec::len).ok_or_else(|| Error::param(format!("{what} has no categories")))?;
    if d == 0 || values.iter().any(|v| v.len() != d) {
        return Err(Error::dims(format!("{what} embeddings must share a positive dimension")));
    }
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} embeddings")));
    }
    Ok(d)
}

impl DiscreteJoint {
    /// Probabilities must be nonnegative and sum to one within
    /// [`MASS_TOLERANCE`]. Zero cells are representable so that files
    /// violating strict positivity can be loaded and rejected downstream.
    pub fn new(y_values: Vec<f64>, zc_values: Vec<Vec<f64>>, zs_values: Vec<Vec<f64>>, p: Vec<f64>) -> Result<Self> {
        if y_values.is_empty() || y_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("label values must be finite and non-empty"));
        }
        embedding_dim(&zc_values, "core")?;
        embedding_dim(&zs_values, "spurious")?;
        let cells = y_values.len() * zc_values.len() * zs_values.len();
        if p.len() != cells {
            return Err(Error::dims(format!("{} probabilities for {cells} cells", p.len())));
        }
        if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::param("probabilities must be finite and nonnegative"));
        }
        let mass: f64 = p.iter().sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::param(format!("probabilities sum to {mass}, not 1")));
        }
        Ok(Self {
            y_values,
            zc_values,
            zs_values,
            p,
        })
    }

    pub fn ny(&self) -> usize {
        self.y_values.len()
    }

    pub fn nc(&self) -> usize {
        self.zc_values.len()
    }

    pub fn ns(&self) -> usize {
        self.zs_values.len()
    }

    pub fn core_dim(&self) -> usize {
        self.zc_values[0].len()
    }

    pub fn spurious_dim(&self) -> usize {
        self.zs_values[0].len()
    }

    /// Dimension of `z = [z_c; z_s]`.
    pub fn dim(&self) -> usize {
        self.core_dim() + self.spurious_dim()
    }

    pub fn y_values(&self) -> &[f64] {
        &self.y_values
    }

    pub fn zc_values(&self) -> &[Vec<f64>] {
        &self.zc_values
    }

    pub fn zs_values(&self) -> &[Vec<f64>] {
        &self.zs_values
    }

    pub fn probs(&self) -> &[f64] {
        &self.p
    }

    pub fn index(&self, y: usize, c: usize, s: usize) -> usize {
        (y * self.nc() + c) * self.ns() + s
    }

    pub fn prob(&self, y: usize, c: usize, s: usize) -> f64 {
        self.p[self.index(y, c, s)]
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.p.iter().all(|&v| v > 0.0)
    }

    /// All `(y, c, s)` index triples in storage order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let (nc, ns) = (self.nc(), self.ns());
        (0..self.ny()).flat_map(move |y| (0..nc).flat_map(move |c| (0..ns).map(move |s| (y, c, s))))
    }

    /// `[z_c; z_s]` for a cell.
    pub fn z(&self, c: usize, s: usize) -> Vec<f64> {
        let mut z = self.zc_values[c].clone();
        z.extend_from_slice(&self.zs_values[s]);
        z
    }

    /// A joint with probabilities `p * w` (must already be normalised).
    pub fn reweighted(&self, weight: &WeightTable) -> Result<Self> {
        let p = self.p.iter().zip(&weight.w).map(|(p, w)| p * w).collect();
        Self::new(self.y_values.clone(), self.zc_values.clone(), self.zs_values.clone(), p)
    }

    /// `P(y, z_c)` indexed `y * |Z_c| + c`.
    pub fn marginal_y_zc(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.ny() * self.nc()];
        for (y, c, s) in self.cells() {
            out[y * self.nc() + c] += self.prob(y, c, s);
        }
        out
    }

    pub fn marginal_zs(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.ns()];
        for (y, c, s) in self.cells() {
            out[s] += self.prob(y, c, s);
        }
        out
    }
}

/// One positive weight per cell of a [`DiscreteJoint`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTable {
    pub w: Vec<f64>,
}

impl WeightTable {
    pub fn uniform(joint: &DiscreteJoint) -> Self {
        Self {
            w: vec![1.0; joint.p.len()],
        }
    }

    /// `E_P[w] = sum p w`.
    pub fn mean(&self, joint: &DiscreteJoint) -> f64 {
        joint.p.iter().zip(&self.w).map(|(p, w)| p * w).sum()
    }

    pub fn get(&self, joint: &DiscreteJoint, y: usize, c: usize, s: usize) -> f64 {
        self.w[joint.index(y, c, s)]
    }
}

/// `w(y, z_c, z_s) = P(y, z_c) P(z_s) / P(y, z_c, z_s)`.
pub fn closed_form_weight(joint: &DiscreteJoint) -> Result<WeightTable> {
    if let Some(k) = joint.p.iter().position(|&v| v <= 0.0) {
        return Err(Error::param(format!(
            "cell {k} has zero probability; the weight needs a strictly positive joint"
        )));
    }
    let pyc = joint.marginal_y_zc();
    let ps = joint.marginal_zs();
    let w = joint
        .cells()
        .map(|(y, c, s)| pyc[y * joint.nc() + c] * ps[s] / joint.prob(y, c, s))
        .collect();
    Ok(WeightTable { w })
}

fn check_weight(joint: &DiscreteJoint, weight: &WeightTable) -> Result<()> {
    if weight.w.len() != joint.p.len() {
        return Err(Error::dims(format!("{} weights for {} cells", weight.w.len(), joint.p.len())));
    }
    if weight.w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::param("weights must be finite and nonnegative"));
    }
    Ok(())
}

/// Exact moments of the weighted law `P_w = w P`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMoments {
    /// `E_w[z z^T]`.
    pub second_moment_z: DMatrix<f64>,
    /// `E_w[z y]`.
    pub cross_z: DVector<f64>,
    /// `E_w[x x^T] = S E_w[z z^T] S^T`.
    pub second_moment_x: DMatrix<f64>,
    /// `E_w[x y] = S E_w[z y]`.
    pub cross_x: DVector<f64>,
    pub mean_z: DVector<f64>,
    pub mean_y: f64,
    /// `Cov_w(z_c, z_s)`, `d_c x d_s`.
    pub cov_core_spurious: DMatrix<f64>,
    pub p_y_zc: Vec<f64>,
    pub p_zs: Vec<f64>,
    pub mean_weight: f64,
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn check_mixing(joint: &DiscreteJoint, mixing: &MixingMatrix) -> Result<()> {
    if mixing.dim() != joint.dim() {
        return Err(Error::dims(format!(
            "mixing is {0}x{0}, latent dimension is {1}",
            mixing.dim(),
            joint.dim()
        )));
    }
    Ok(())
}

pub fn weighted_moments(joint: &DiscreteJoint, weight: &WeightTable, mixing: &MixingMatrix) -> Result<WeightedMoments> {
    check_weight(joint, weight)?;
    check_mixing(joint, mixing)?;
    let d = joint.dim();
    let dc = joint.core_dim();
    let mut m2 = DMatrix::zeros(d, d);
    let mut cross = DVector::zeros(d);
    let mut mean = DVector::zeros(d);
    let mut mean_y = 0.0;
    let mut p_y_zc = vec![0.0; joint.ny() * joint.nc()];
    let mut p_zs = vec![0.0; joint.ns()];
    for (y, c, s) in joint.cells() {
        let pw = joint.prob(y, c, s) * weight.get(joint, y, c, s);
        let z = DVector::from_vec(joint.z(c, s));
        let yv = joint.y_values[y];
        m2 += pw * &z * z.transpose();
        cross += pw * yv * &z;
        mean += pw * &z;
        mean_y += pw * yv;
        p_y_zc[y * joint.nc() + c] += pw;
        p_zs[s] += pw;
    }
    let mean_weight = weight.mean(joint);
    // covariance relative to the (possibly unnormalised) weighted mass
    let mass = mean_weight;
    let full_cov = &m2 / mass - (&mean / mass) * (&mean / mass).transpose();
    let cov_core_spurious = full_cov.view((0, dc), (dc, d - dc)).into_owned();
    let s = to_na(mixing.s());
    Ok(WeightedMoments {
        second_moment_x: &s * &m2 * s.transpose(),
        cross_x: &s * &cross,
        second_moment_z: m2,
        cross_z: cross,
        mean_z: mean,
        mean_y,
        cov_core_spurious,
        p_y_zc,
        p_zs,
        mean_weight,
    })
}

/// Population weighted least-squares fit, expressed in observed and latent
/// coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationFit {
    pub theta_x: DVector<f64>,
    /// `S^T theta_x`: coefficients on `[z_c; z_s]`.
    pub theta_z: DVector<f64>,
    pub intercept: Option<f64>,
    core_dim: usize,
}

impl PopulationFit {
    pub fn core_block(&self) -> &[f64] {
        &self.theta_z.as_slice()[..self.core_dim]
    }

    pub fn spurious_block(&self) -> &[f64] {
        &self.theta_z.as_slice()[self.core_dim..]
    }
}

fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    let sv = a.singular_values();
    if sv.min() <= 1e-12 * sv.max().max(1e-300) {
        return Err(Error::Singular(format!("{what} is singular")));
    }
    lu.solve(b).ok_or_else(|| Error::Singular(format!("{what} is singular")))
}

/// `argmin_theta E_w[(y - theta^T x)^2]` (plus an intercept if requested),
/// solved in observed coordinates and pulled back to latent ones.
pub fn population_wls(
    joint: &DiscreteJoint,
    weight: &WeightTable,
    mixing: &MixingMatrix,
    intercept: bool,
) -> Result<PopulationFit> {
    let mom = weighted_moments(joint, weight, mixing)?;
    let s = to_na(mixing.s());
    let d = joint.dim();
    let (theta_x, b) = if intercept {
        let mean_x = &s * &mom.mean_z;
        let mut a = DMatrix::zeros(d + 1, d + 1);
        a.view_mut((0, 0), (d, d)).copy_from(&mom.second_moment_x);
        a.view_mut((0, d), (d, 1)).copy_from(&mean_x);
        a.view_mut((d, 0), (1, d)).copy_from(&mean_x.transpose());
        a[(d, d)] = mom.mean_weight;
        let mut rhs = DVector::zeros(d + 1);
        rhs.rows_mut(0, d).copy_from(&mom.cross_x);
        rhs[d] = mom.mean_y;
        let sol = solve_spd(&a, &rhs, "weighted second moment")?;
        (sol.rows(0, d).into_owned(), Some(sol[d]))
    } else {
        (solve_spd(&mom.second_moment_x, &mom.cross_x, "weighted second moment")?, None)
    };
    Ok(PopulationFit {
        theta_z: s.transpose() * &theta_x,
        theta_x,
        intercept: b,
        core_dim: joint.core_dim(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebiasedPredictor {
    /// `T^T [theta_bar_c; 0]`.
    pub theta_bar: DVector<f64>,
    pub theta_bar_c: DVector<f64>,
}

/// Least-squares regression of `y` on `z_c` alone under `P`, embedded in
/// observed coordinates.
pub fn optimal_debiased_predictor(joint: &DiscreteJoint, mixing: &MixingMatrix) -> Result<DebiasedPredictor> {
    check_mixing(joint, mixing)?;
    let dc = joint.core_dim();
    let mut m2 = DMatrix::zeros(dc, dc);
    let mut cross = DVector::zeros(dc);
    for (y, c, s) in joint.cells() {
        let p = joint.prob(y, c, s);
        let zc = DVector::from_column_slice(&joint.zc_values[c]);
        m2 += p * &zc * zc.transpose();
        cross += p * joint.y_values[y] * &zc;
    }
    let theta_bar_c = solve_spd(&m2, &cross, "core second moment")?;
    let mut padded = DVector::zeros(joint.dim());
    padded.rows_mut(0, dc).copy_from(&theta_bar_c);
    let t = to_na(mixing.t());
    Ok(DebiasedPredictor {
        theta_bar: t.transpose() * padded,
        theta_bar_c,
    })
}

/// Which latents the label entropy is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    Nothing,
    Core,
    Spurious,
    Both,
}

/// `H[Y | conditioning]` in nats under `P` or under `P_w` when a weight is
/// given. Cells with zero mass contribute nothing.
pub fn conditional_entropy(
    joint: &DiscreteJoint,
    weight: Option<&WeightTable>,
    cond: Conditioning,
) -> Result<f64> {
    let mass: Vec<f64> = match weight {
        Some(w) => {
            check_weight(joint, w)?;
            joint.p.iter().zip(&w.w).map(|(p, w)| p * w).collect()
        }
        None => joint.p.clone(),
    };
    let total: f64 = mass.iter().sum();
    let key = |c: usize, s: usize| match cond {
        Conditioning::Nothing => 0,
        Conditioning::Core => c,
        Conditioning::Spurious => s,
        Conditioning::Both => c * joint.ns() + s,
    };
    let keys = joint.nc() * joint.ns();
    let mut joint_mass = vec![0.0; joint.ny() * keys];
    let mut cond_mass = vec![0.0; keys];
    for (y, c, s) in joint.cells() {
        let m = mass[joint.index(y, c, s)] / total;
        joint_mass[y * keys + key(c, s)] += m;
        cond_mass[key(c, s)] += m;
    }
    let mut h = 0.0;
    for y in 0..joint.ny() {
        for k in 0..keys {
            let pj = joint_mass[y * keys + k];
            if pj > 0.0 {
                h -= pj * (pj / cond_mass[k]).ln();
            }
        }
    }
    Ok(h)
}

/// A random strictly positive joint with `y in {-1, +1}`-style labels (for
/// `ny = 2`), Gaussian core embeddings, and spurious embeddings centred under
/// `P(z_s)` so the weighted second moment is exactly block diagonal.
pub fn random_joint(rng: &mut impl Rng, ny: usize, nc: usize, ns: usize) -> Result<DiscreteJoint> {
    if ny < 2 || nc < 1 || ns < 2 {
        return Err(Error::param("need at least two labels, one core and two spurious categories"));
    }
    let cells = ny * nc * ns;
    let raw: Vec<f64> = (0..cells).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|v| v / total).collect();
    // absorb rounding so the mass is 1 to the last bit
    let drift = 1.0 - p.iter().sum::<f64>();
    p[0] += drift;

    let y_values: Vec<f64> = if ny == 2 {
        vec![-1.0, 1.0]
    } else {
        (0..ny).map(|_| rng.sample(StandardNormal)).collect()
    };
    let dc = nc.min(2);
    let zc_values: Vec<Vec<f64>> = (0..nc)
        .map(|_| (0..dc).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let ds = ns - 1;
    let mut zs_values: Vec<Vec<f64>> = (0..ns)
        .map(|_| (0..ds).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let tmp = DiscreteJoint::new(y_values.clone(), zc_values.clone(), zs_values.clone(), p.clone())?;
    let ps = tmp.marginal_zs();
    for j in 0..ds {
        let mean: f64 = zs_values.iter().zip(&ps).map(|(v, p)| v[j] * p).sum();
        for v in &mut zs_values {
            v[j] -= mean;
        }
    }
    DiscreteJoint::new(y_values, zc_values, zs_values, p)
}

/// `n` i.i.d. draws: observed features `x = S z`, labels, and the per-sample
/// weight `w(y_i, z_i)`.
pub fn sample_joint(
    joint: &DiscreteJoint,
    mixing: &MixingMatrix,
    weight: &WeightTable,
    n: usize,
    seed: u64,
) -> Result<(Matrix, Vec<f64>, Vec<f64>)> {
    check_weight(joint, weight)?;
    check_mixing(joint, mixing)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cdf: Vec<f64> = joint
        .p
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    let cells: Vec<(usize, usize, usize)> = joint.cells().collect();
    let d = joint.dim();
    let mut z = Matrix::zeros(n, d);
    let mut y = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        let u: f64 = rng.random::<f64>() * cdf[cdf.len() - 1];
        let k = cdf.partition_point(|&c| c <= u).min(cells.len() - 1);
        let (yi, c, s) = cells[k];
        z.row_mut(i).copy_from_slice(&joint.z(c, s));
        y.push(joint.y_values[yi]);
        w.push(weight.w[k]);
    }
    Ok((crate::data::entangle(&z, mixing)?, y, w))
}
