//! Minimal dense double-precision math: vectors, matrices, affine layers,
//! the few nonlinear ops the fusion layer needs, a reverse-mode tape and a
//! central-difference gradient checker.

mod gradcheck;
mod io;
mod ops;
mod tape;

pub use gradcheck::{finite_difference_check, relative_error, FdReport, DEFAULT_FD_EPS};
pub use io::{read_tensors, write_tensors, NamedTensor, WEIGHT_FILE_MAGIC, WEIGHT_FILE_VERSION};
pub use ops::{concat, hadamard, relu, softmax};
pub use tape::{Gradients, Tape, Var};

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Dense column vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector(pub Vec<f64>);

impl Vector {
    pub fn zeros(n: usize) -> Self {
        Vector(vec![0.0; n])
    }

    pub fn filled(n: usize, value: f64) -> Self {
        Vector(vec![value; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for Vector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl From<&[f64]> for Vector {
    fn from(v: &[f64]) -> Self {
        Vector(v.to_vec())
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("matrix", (rows, cols), data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.cols {
            return Err(Error::shape("matvec", self.shape(), x.len()));
        }
        Ok(Vector(
            (0..self.rows).map(|r| dot(self.row(r), x)).collect(),
        ))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", self.shape(), other.shape()));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                for c in 0..other.cols {
                    out.data[r * other.cols + c] += a * other.get(k, c);
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Matrix,
    pub bias: Vector,
}

impl Affine {
    pub fn new(weight: Matrix, bias: Vector) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape("affine", weight.shape(), bias.len()));
        }
        Ok(Affine { weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Affine {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: Vector::zeros(out_dim),
        }
    }

    pub fn identity(n: usize) -> Self {
        Affine {
            weight: Matrix::identity(n),
            bias: Vector::zeros(n),
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, rng: &mut SeededRng) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.uniform(-limit, limit))
            .collect();
        Affine {
            weight: Matrix {
                rows: out_dim,
                cols: in_dim,
                data,
            },
            bias: Vector::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.data.len() + self.bias.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vector> {
        if x.len() != self.in_dim() {
            return Err(Error::shape("affine_forward", self.weight.shape(), x.len()));
        }
        let out = (0..self.out_dim())
            .map(|r| self.bias[r] + dot(self.weight.row(r), x))
            .collect();
        Ok(Vector(out))
    }
}

/// Stack of affine layers with ReLU between consecutive layers and no
/// activation on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Affine>,
}

impl Mlp {
    pub fn new(layers: Vec<Affine>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("mlp needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::shape(
                    "mlp",
                    pair[0].weight.shape(),
                    pair[1].weight.shape(),
                ));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn single(layer: Affine) -> Self {
        Mlp {
            layers: vec![layer],
        }
    }

    /// `depth` layers mapping `in_dim -> hidden -> ... -> out_dim`.
    pub fn glorot(dims: &[usize], rng: &mut SeededRng) -> Self {
        assert!(dims.len() >= 2, "mlp dims need input and output");
        Mlp {
            layers: dims
                .windows(2)
                .map(|w| Affine::glorot(w[0], w[1], rng))
                .collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Affine::param_count).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vector> {
        let last = self.layers.len() - 1;
        let mut h = self.layers[0].forward(x)?;
        if last > 0 {
            h = relu(&h);
        }
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            h = layer.forward(&h)?;
            if i < last {
                h = relu(&h);
            }
        }
        Ok(h)
    }

    pub fn zero_out(&mut self) {
        for layer in &mut self.layers {
            layer.weight.data.fill(0.0);
            layer.bias.0.fill(0.0);
        }
    }
}
