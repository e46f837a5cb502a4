//! Small differentiable models with a scalar output.
//!
//! Every model exposes the same three derivative primitives: the output
//! itself, per-sample gradients of the output (and of a loss) with respect to
//! the flat parameter vector, and forward-mode directional derivatives. Those
//! are the only derivatives the risks and the hypergradient need.
//!
//! Parameter layout for an MLP with layer widths `d -> h1 -> ... -> hk -> 1`:
//! for each layer in order, the row-major weight matrix `(out, in)` followed
//! by the bias vector `(out)`. Linear and logistic models have no bias; their
//! parameter vector is just the coefficient vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::loss::LossFamily;
use crate::{Error, Result};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::dims(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn select_cols(&self, cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for i in 0..self.rows {
            let r = self.row(i);
            data.extend(cols.iter().map(|&j| r[j]));
        }
        Matrix {
            rows: self.rows,
            cols: cols.len(),
            data,
        }
    }
}

/// Features and scalar labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    features: Matrix,
    labels: Vec<f64>,
}

impl Batch {
    pub fn new(features: Matrix, labels: Vec<f64>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::param("batch must contain at least one sample"));
        }
        if labels.len() != features.rows() {
            return Err(Error::dims(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if features.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features".into()));
        }
        if labels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("labels".into()));
        }
        Ok(Self { features, labels })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn select(&self, idx: &[usize]) -> Result<Batch> {
        Batch::new(
            self.features.select_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    /// The ReLU subgradient at zero is zero.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Architecture descriptor. Output dimension is always one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy)]
struct LayerShape {
    input: usize,
    output: usize,
    weights: usize,
    bias: usize,
}

impl ModelSpec {
    pub fn linear(input_dim: usize) -> Self {
        Self {
            kind: ModelKind::Linear,
            input_dim,
            hidden_dims: Vec::new(),
            activation: Activation::Relu,
        }
    }

    pub fn logistic(input_dim: usize) -> Self {
        Self {
            kind: ModelKind::Logistic,
            ..Self::linear(input_dim)
        }
    }

    pub fn mlp(input_dim: usize, hidden_dims: Vec<usize>, activation: Activation) -> Self {
        Self {
            kind: ModelKind::Mlp,
            input_dim,
            hidden_dims,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::param("input_dim must be positive"));
        }
        match self.kind {
            ModelKind::Linear | ModelKind::Logistic if !self.hidden_dims.is_empty() => Err(
                Error::param("linear and logistic models take no hidden layers"),
            ),
            ModelKind::Mlp if self.hidden_dims.is_empty() => {
                Err(Error::param("an MLP needs at least one hidden layer"))
            }
            _ if self.hidden_dims.contains(&0) => {
                Err(Error::param("hidden layer widths must be positive"))
            }
            _ => Ok(()),
        }
    }

    fn layers(&self) -> Vec<LayerShape> {
        let mut widths = vec![self.input_dim];
        widths.extend_from_slice(&self.hidden_dims);
        widths.push(1);
        let mut offset = 0;
        widths
            .windows(2)
            .map(|w| {
                let shape = LayerShape {
                    input: w[0],
                    output: w[1],
                    weights: offset,
                    bias: offset + w[0] * w[1],
                };
                offset = shape.bias + w[1];
                shape
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::Linear | ModelKind::Logistic => self.input_dim,
            ModelKind::Mlp => self
                .layers()
                .iter()
                .map(|l| l.output * (l.input + 1))
                .sum(),
        }
    }

    /// Linear and logistic models start at zero; MLP weights and biases are
    /// drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut values = vec![0.0; self.param_count()];
        if self.kind == ModelKind::Mlp {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for layer in self.layers() {
                let bound = 1.0 / (layer.input as f64).sqrt();
                for v in &mut values[layer.weights..layer.bias + layer.output] {
                    *v = rng.random_range(-bound..bound);
                }
            }
        }
        ParamVector(values)
    }

    fn check(&self, params: &ParamVector, x: &Matrix) -> Result<()> {
        self.validate()?;
        if params.len() != self.param_count() {
            return Err(Error::dims(format!(
                "model expects {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        if x.cols() != self.input_dim {
            return Err(Error::dims(format!(
                "model expects {} features, batch has {}",
                self.input_dim,
                x.cols()
            )));
        }
        Ok(())
    }
}

/// Flat parameter vector; all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Skips the finiteness check; callers that may produce non-finite
    /// values check them themselves.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Activations recorded by a forward pass, reused by backprop.
pub(crate) struct Trace {
    /// Per hidden layer: pre-activations, `n x width` row-major.
    pre: Vec<Vec<f64>>,
    /// Per hidden layer: activations, same shape as `pre`.
    act: Vec<Vec<f64>>,
    pub(crate) output: Vec<f64>,
}

pub(crate) fn trace(spec: &ModelSpec, params: &ParamVector, x: &Matrix) -> Trace {
    let theta = params.as_slice();
    let n = x.rows();
    match spec.kind {
        ModelKind::Linear | ModelKind::Logistic => Trace {
            pre: Vec::new(),
            act: Vec::new(),
            output: (0..n).map(|i| dot(x.row(i), theta)).collect(),
        },
        ModelKind::Mlp => {
            let layers = spec.layers();
            let (hidden, last) = layers.split_at(layers.len() - 1);
            let mut pre = Vec::with_capacity(hidden.len());
            let mut act: Vec<Vec<f64>> = Vec::with_capacity(hidden.len());
            for layer in hidden {
                let input: &[f64] = act.last().map_or(x.as_slice(), Vec::as_slice);
                let w = &theta[layer.weights..layer.bias];
                let b = &theta[layer.bias..layer.bias + layer.output];
                let mut z = vec![0.0; n * layer.output];
                for i in 0..n {
                    let a_in = &input[i * layer.input..(i + 1) * layer.input];
                    let z_row = &mut z[i * layer.output..(i + 1) * layer.output];
                    for (j, zj) in z_row.iter_mut().enumerate() {
                        *zj = b[j] + dot(&w[j * layer.input..(j + 1) * layer.input], a_in);
                    }
                }
                let a: Vec<f64> = z.iter().map(|&v| spec.activation.apply(v)).collect();
                pre.push(z);
                act.push(a);
            }
            let out = last[0];
            let w = &theta[out.weights..out.bias];
            let b = theta[out.bias];
            let a_last = act.last().expect("mlp has a hidden layer");
            let output = (0..n)
                .map(|i| b + dot(w, &a_last[i * out.input..(i + 1) * out.input]))
                .collect();
            Trace { pre, act, output }
        }
    }
}

/// Reusable buffers for per-sample reverse passes.
struct Backprop<'a> {
    spec: &'a ModelSpec,
    theta: &'a [f64],
    layers: Vec<LayerShape>,
    delta: Vec<Vec<f64>>,
}

impl<'a> Backprop<'a> {
    fn new(spec: &'a ModelSpec, params: &'a ParamVector) -> Self {
        let layers = if spec.kind == ModelKind::Mlp {
            spec.layers()
        } else {
            Vec::new()
        };
        let delta = spec.hidden_dims.iter().map(|&h| vec![0.0; h]).collect();
        Self {
            spec,
            theta: params.as_slice(),
            layers,
            delta,
        }
    }

    /// Adds `coef * grad_theta f(x_i)` into `out`.
    fn accumulate(&mut self, x: &Matrix, tr: &Trace, i: usize, coef: f64, out: &mut [f64]) {
        if coef == 0.0 {
            return;
        }
        let xi = x.row(i);
        if self.layers.is_empty() {
            axpy(coef, xi, out);
            return;
        }
        let k = self.layers.len() - 1;
        let last = self.layers[k];
        let w_out = &self.theta[last.weights..last.bias];
        let a_k = &tr.act[k - 1][i * last.input..(i + 1) * last.input];
        axpy(coef, a_k, &mut out[last.weights..last.bias]);
        out[last.bias] += coef;

        let z_k = &tr.pre[k - 1][i * last.input..(i + 1) * last.input];
        for (j, d) in self.delta[k - 1].iter_mut().enumerate() {
            *d = coef * w_out[j] * self.spec.activation.derivative(z_k[j], a_k[j]);
        }
        for l in (0..k).rev() {
            let layer = self.layers[l];
            let input: &[f64] = if l == 0 {
                xi
            } else {
                &tr.act[l - 1][i * layer.input..(i + 1) * layer.input]
            };
            let (before, rest) = self.delta.split_at_mut(l);
            let delta = &rest[0];
            for (j, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    axpy(
                        d,
                        input,
                        &mut out[layer.weights + j * layer.input..layer.weights + (j + 1) * layer.input],
                    );
                    out[layer.bias + j] += d;
                }
            }
            if l > 0 {
                let w = &self.theta[layer.weights..layer.bias];
                let z_prev = &tr.pre[l - 1][i * layer.input..(i + 1) * layer.input];
                let prev = &mut before[l - 1];
                prev.iter_mut().for_each(|v| *v = 0.0);
                for (j, &d) in delta.iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, &w[j * layer.input..(j + 1) * layer.input], prev);
                    }
                }
                for (m, v) in prev.iter_mut().enumerate() {
                    *v *= self.spec.activation.derivative(z_prev[m], input[m]);
                }
            }
        }
    }
}

/// `sum_i coef_i * grad_theta f(x_i)`.
pub(crate) fn weighted_output_grad(
    spec: &ModelSpec,
    params: &ParamVector,
    x: &Matrix,
    tr: &Trace,
    coef: &[f64],
) -> Vec<f64> {
    let mut out = vec![0.0; params.len()];
    let mut bp = Backprop::new(spec, params);
    for (i, &c) in coef.iter().enumerate() {
        bp.accumulate(x, tr, i, c, &mut out);
    }
    out
}

/// Directional derivatives `<grad_theta f(x_i), direction>` for every sample
/// via one forward-mode pass.
pub(crate) fn output_jvp_traced(
    spec: &ModelSpec,
    params: &ParamVector,
    x: &Matrix,
    tr: &Trace,
    direction: &[f64],
) -> Vec<f64> {
    let n = x.rows();
    if spec.kind != ModelKind::Mlp {
        return (0..n).map(|i| dot(x.row(i), direction)).collect();
    }
    let theta = params.as_slice();
    let layers = spec.layers();
    let k = layers.len() - 1;
    let mut result = Vec::with_capacity(n);
    let mut tangents: Vec<Vec<f64>> = spec.hidden_dims.iter().map(|&h| vec![0.0; h]).collect();
    for i in 0..n {
        for l in 0..k {
            let layer = layers[l];
            let w = &theta[layer.weights..layer.bias];
            let dw = &direction[layer.weights..layer.bias];
            let db = &direction[layer.bias..layer.bias + layer.output];
            let (before, rest) = tangents.split_at_mut(l);
            let tangent = &mut rest[0];
            let input: &[f64] = if l == 0 {
                x.row(i)
            } else {
                &tr.act[l - 1][i * layer.input..(i + 1) * layer.input]
            };
            let z = &tr.pre[l][i * layer.output..(i + 1) * layer.output];
            let a = &tr.act[l][i * layer.output..(i + 1) * layer.output];
            for j in 0..layer.output {
                let row = j * layer.input..(j + 1) * layer.input;
                let mut dz = db[j] + dot(&dw[row.clone()], input);
                if l > 0 {
                    dz += dot(&w[row], &before[l - 1]);
                }
                tangent[j] = spec.activation.derivative(z[j], a[j]) * dz;
            }
        }
        let last = layers[k];
        let a_k = &tr.act[k - 1][i * last.input..(i + 1) * last.input];
        let df = direction[last.bias]
            + dot(&direction[last.weights..last.bias], a_k)
            + dot(&theta[last.weights..last.bias], &tangents[k - 1]);
        result.push(df);
    }
    result
}

pub(crate) fn checked_trace(spec: &ModelSpec, params: &ParamVector, x: &Matrix) -> Result<Trace> {
    spec.check(params, x)?;
    Ok(trace(spec, params, x))
}

/// Per-sample model outputs.
pub fn forward(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<Vec<f64>> {
    Ok(checked_trace(spec, params, batch.features())?.output)
}

/// Per-sample losses and the `n x |theta|` matrix whose row `i` is
/// `grad_theta loss(f(x_i), y_i)`.
pub fn per_sample_loss_grads(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
    family: LossFamily,
) -> Result<(Vec<f64>, Matrix)> {
    spec.check(params, batch.features())?;
    let x = batch.features();
    let tr = trace(spec, params, x);
    let mut losses = Vec::with_capacity(batch.len());
    let mut grads = Matrix::zeros(batch.len(), params.len());
    let mut bp = Backprop::new(spec, params);
    for (i, (&f, &y)) in tr.output.iter().zip(batch.labels()).enumerate() {
        let d = family.derivatives(f, y)?;
        losses.push(d.value);
        bp.accumulate(x, &tr, i, d.d1, grads.row_mut(i));
    }
    Ok((losses, grads))
}

/// The `n x |theta|` matrix whose row `i` is `grad_theta f(x_i)`.
pub fn per_sample_output_grads(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
) -> Result<Matrix> {
    spec.check(params, batch.features())?;
    let x = batch.features();
    let tr = trace(spec, params, x);
    let mut grads = Matrix::zeros(batch.len(), params.len());
    let mut bp = Backprop::new(spec, params);
    for i in 0..batch.len() {
        bp.accumulate(x, &tr, i, 1.0, grads.row_mut(i));
    }
    Ok(grads)
}

/// `<grad_theta f(x_i), direction>` for every sample, without materialising
/// the per-sample gradient matrix.
pub fn output_jvp(
    spec: &ModelSpec,
    params: &ParamVector,
    batch: &Batch,
    direction: &[f64],
) -> Result<Vec<f64>> {
    spec.check(params, batch.features())?;
    if direction.len() != params.len() {
        return Err(Error::dims(format!(
            "direction has length {}, parameters {}",
            direction.len(),
            params.len()
        )));
    }
    let tr = trace(spec, params, batch.features());
    Ok(output_jvp_traced(spec, params, batch.features(), &tr, direction))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: &[Vec<f64>], labels: &[f64]) -> Batch {
        Batch::new(Matrix::from_rows(rows).unwrap(), labels.to_vec()).unwrap()
    }

    #[test]
    fn linear_picks_first_coordinate() {
        let spec = ModelSpec::linear(2);
        let p = ParamVector::new(vec![1.0, 0.0]).unwrap();
        let f = forward(&spec, &p, &batch(&[vec![3.0, 5.0]], &[0.0])).unwrap();
        assert_eq!(f, vec![3.0]);
        let f = forward(&spec, &ParamVector::zeros(2), &batch(&[vec![3.0, 5.0]], &[0.0])).unwrap();
        assert_eq!(f, vec![0.0]);
    }

    #[test]
    fn mlp_hand_forward() {
        // W1 = [[1, -1], [0.5, 0.5]], b1 = [0.1, -0.2], w2 = [2, -3], b2 = 0.3
        // x = (1, 1): z1 = (0.1, 0.8) -> relu -> (0.1, 0.8); f = 0.2 - 2.4 + 0.3 = -1.9
        let spec = ModelSpec::mlp(2, vec![2], Activation::Relu);
        assert_eq!(spec.param_count(), 9);
        let p = ParamVector::new(vec![1.0, -1.0, 0.5, 0.5, 0.1, -0.2, 2.0, -3.0, 0.3]).unwrap();
        let f = forward(&spec, &p, &batch(&[vec![1.0, 1.0]], &[0.0])).unwrap();
        assert!((f[0] + 1.9).abs() < 1e-15);
    }

    #[test]
    fn linear_square_loss_gradients() {
        let spec = ModelSpec::linear(2);
        let b = batch(&[vec![1.0, 0.0]], &[0.0]);
        let (l, g) = per_sample_loss_grads(&spec, &ParamVector::zeros(2), &b, LossFamily::Square).unwrap();
        assert_eq!(l, vec![0.0]);
        assert_eq!(g.row(0), &[0.0, 0.0]);

        let b = batch(&[vec![1.0, 0.0]], &[1.0]);
        let (l, g) = per_sample_loss_grads(&spec, &ParamVector::zeros(2), &b, LossFamily::Square).unwrap();
        assert_eq!(l, vec![1.0]);
        assert_eq!(g.row(0), &[-2.0, 0.0]);
    }

    #[test]
    fn linear_output_gradient_is_input() {
        for spec in [ModelSpec::linear(2), ModelSpec::logistic(2)] {
            let g = per_sample_output_grads(&spec, &ParamVector::new(vec![0.3, -2.0]).unwrap(), &batch(&[vec![3.0, 5.0]], &[1.0]))
                .unwrap();
            assert_eq!(g.row(0), &[3.0, 5.0]);
        }
    }

    #[test]
    fn dimension_mismatches_are_errors() {
        let spec = ModelSpec::linear(3);
        let b = batch(&[vec![1.0, 2.0]], &[0.0]);
        assert!(matches!(forward(&spec, &ParamVector::zeros(3), &b), Err(Error::DimensionMismatch(_))));
        let spec = ModelSpec::linear(2);
        assert!(matches!(forward(&spec, &ParamVector::zeros(3), &b), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn spec_validation() {
        assert!(ModelSpec::mlp(2, vec![], Activation::Relu).validate().is_err());
        assert!(ModelSpec::mlp(2, vec![0], Activation::Relu).validate().is_err());
        let mut lin = ModelSpec::linear(2);
        lin.hidden_dims = vec![3];
        assert!(lin.validate().is_err());
    }

    #[test]
    fn batch_rejects_bad_input() {
        assert!(Batch::new(Matrix::zeros(0, 2), vec![]).is_err());
        assert!(Batch::new(Matrix::new(1, 1, vec![f64::NAN]).unwrap(), vec![0.0]).is_err());
        assert!(ParamVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn init_is_seeded_and_scaled() {
        let spec = ModelSpec::mlp(4, vec![16], Activation::Tanh);
        let a = spec.init_params(3);
        assert_eq!(a, spec.init_params(3));
        assert_ne!(a, spec.init_params(4));
        assert!(a.as_slice()[..64].iter().all(|v| v.abs() <= 0.5));
        assert_eq!(ModelSpec::logistic(3).init_params(9), ParamVector::zeros(3));
    }
}
