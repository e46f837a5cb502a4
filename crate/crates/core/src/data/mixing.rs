use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::model::Matrix;
use crate::{Error, Result};

/// Invertible linear map `x = S z` and its inverse `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    s: Matrix,
    t: Matrix,
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_na(m: &DMatrix<f64>) -> Matrix {
    let mut out = Matrix::zeros(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.row_mut(i)[j] = m[(i, j)];
        }
    }
    out
}

fn inverse_error(s: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    let d = s.nrows();
    (t * s - DMatrix::<f64>::identity(d, d)).abs().max()
}

impl MixingMatrix {
    pub fn identity(dim: usize) -> Self {
        let id = from_na(&DMatrix::identity(dim, dim));
        Self { s: id.clone(), t: id }
    }

    /// Wraps a given square `S`, computing and checking its inverse.
    pub fn from_matrix(s: Matrix) -> Result<Self> {
        if s.rows() != s.cols() {
            return Err(Error::dims(format!("mixing matrix is {}x{}", s.rows(), s.cols())));
        }
        let sn = to_na(&s);
        let t = sn
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("mixing matrix is not invertible".into()))?;
        if inverse_error(&sn, &t) > 1e-8 {
            return Err(Error::Singular("mixing matrix is too ill-conditioned".into()));
        }
        Ok(Self { s, t: from_na(&t) })
    }

    pub fn dim(&self) -> usize {
        self.s.rows()
    }

    pub fn s(&self) -> &Matrix {
        &self.s
    }

    pub fn t(&self) -> &Matrix {
        &self.t
    }
}

/// Random rotation times a diagonal scaling with entries in `[1, 3]`, so the
/// condition number is at most 3.
pub fn make_mixing(dim: usize, seed: u64) -> Result<MixingMatrix> {
    if dim == 0 {
        return Err(Error::param("mixing dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let g = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.sample(StandardNormal));
        let qr = g.qr();
        let r = qr.r();
        if (0..dim).any(|i| r[(i, i)].abs() < 1e-6) {
            continue;
        }
        let mut q = qr.q();
        // sign fix makes the rotation Haar-distributed
        for j in 0..dim {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        let scale = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(dim, |_, _| rng.random_range(1.0..=3.0)));
        let s = q * scale;
        if let Ok(m) = MixingMatrix::from_matrix(from_na(&s)) {
            return Ok(m);
        }
    }
}

/// `X = Z S^T`, i.e. `x_i = S z_i` row by row.
pub fn entangle(z: &Matrix, mixing: &MixingMatrix) -> Result<Matrix> {
    apply(z, &mixing.s)
}

/// `Z = X T^T`, the inverse of [`entangle`].
pub fn disentangle(x: &Matrix, mixing: &MixingMatrix) -> Result<Matrix> {
    apply(x, &mixing.t)
}

fn apply(z: &Matrix, m: &Matrix) -> Result<Matrix> {
    if z.cols() != m.cols() {
        return Err(Error::dims(format!("data has {} columns, mixing is {}x{}", z.cols(), m.rows(), m.cols())));
    }
    let mut out = Matrix::zeros(z.rows(), m.rows());
    for i in 0..z.rows() {
        let zi = z.row(i);
        let oi = out.row_mut(i);
        for (r, o) in oi.iter_mut().enumerate() {
            *o = crate::model::dot(m.row(r), zi);
        }
    }
    Ok(out)
}
