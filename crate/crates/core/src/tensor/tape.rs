//! Reverse-mode differentiation over whole vectors.
//!
//! Every recorded node stores its forward value. Nodes are appended in
//! evaluation order, so inputs always precede the node that consumes them and
//! a single reverse sweep over the node list computes all adjoints.

use super::{ops, Affine, Matrix, Vector};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine { w: Var, b: Var, x: Var },
    Softmax(Var),
    Hadamard(Var, Var),
    Concat(Vec<Var>),
    Relu(Var),
    Add(Var, Var),
    SumSquares(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<&Node> {
        self.nodes
            .get(v.0)
            .ok_or_else(|| Error::Invariant(format!("var {} not on this tape", v.0)))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    /// Vector leaf (shape `n x 1`).
    pub fn leaf(&mut self, x: &[f64]) -> Var {
        self.push(x.to_vec(), x.len(), 1, Op::Leaf)
    }

    pub fn leaf_matrix(&mut self, m: &Matrix) -> Var {
        self.push(m.data().to_vec(), m.rows(), m.cols(), Op::Leaf)
    }

    /// Registers an affine layer's parameters as leaves, returning `(w, b)`.
    pub fn param(&mut self, layer: &Affine) -> (Var, Var) {
        let w = self.leaf_matrix(&layer.weight);
        let b = self.leaf(&layer.bias);
        (w, b)
    }

    fn vector_len(&self, v: Var, op: &'static str) -> Result<usize> {
        let n = self.check(v)?;
        if n.cols != 1 {
            return Err(Error::shape(op, "vector", (n.rows, n.cols)));
        }
        Ok(n.rows)
    }

    pub fn affine(&mut self, w: Var, b: Var, x: Var) -> Result<Var> {
        let (rows, cols) = {
            let n = self.check(w)?;
            (n.rows, n.cols)
        };
        let xl = self.vector_len(x, "affine")?;
        let bl = self.vector_len(b, "affine")?;
        if xl != cols || bl != rows {
            return Err(Error::shape("affine", (rows, cols), (xl, bl)));
        }
        let (wv, bv, xv) = (self.value(w), self.value(b), self.value(x));
        let out = (0..rows)
            .map(|r| {
                bv[r]
                    + wv[r * cols..(r + 1) * cols]
                        .iter()
                        .zip(xv)
                        .map(|(a, c)| a * c)
                        .sum::<f64>()
            })
            .collect();
        Ok(self.push(out, rows, 1, Op::Affine { w, b, x }))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.vector_len(x, "softmax")?;
        let y = ops::softmax(self.value(x))?;
        let n = y.len();
        Ok(self.push(y.0, n, 1, Op::Softmax(x)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.vector_len(a, "hadamard")?;
        self.vector_len(b, "hadamard")?;
        let y = ops::hadamard(self.value(a), self.value(b))?;
        let n = y.len();
        Ok(self.push(y.0, n, 1, Op::Hadamard(a, b)))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            self.vector_len(p, "concat")?;
            out.extend_from_slice(self.value(p));
        }
        let n = out.len();
        Ok(self.push(out, n, 1, Op::Concat(parts.to_vec())))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.vector_len(x, "relu")?;
        let y = ops::relu(self.value(x));
        let n = y.len();
        Ok(self.push(y.0, n, 1, Op::Relu(x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let la = self.vector_len(a, "add")?;
        let lb = self.vector_len(b, "add")?;
        if la != lb {
            return Err(Error::shape("add", la, lb));
        }
        let y: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(y, la, 1, Op::Add(a, b)))
    }

    /// Scalar `Σ x_i²` as a length-1 vector.
    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        self.vector_len(x, "sum_squares")?;
        let s = self.value(x).iter().map(|v| v * v).sum();
        Ok(self.push(vec![s], 1, 1, Op::SumSquares(x)))
    }

    /// Gradients of `seedᵀ · output` with respect to every node on the tape.
    pub fn backward(&self, output: Var, seed: &[f64]) -> Result<Gradients> {
        let out = self.check(output)?;
        if seed.len() != out.value.len() {
            return Err(Error::shape("backward", out.value.len(), seed.len()));
        }
        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        grads[output.0].copy_from_slice(seed);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let gy = std::mem::take(&mut grads[idx]);
            if gy.iter().all(|&g| g == 0.0) {
                grads[idx] = gy;
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Affine { w, b, x } => {
                    let cols = self.nodes[w.0].cols;
                    let wv = &self.nodes[w.0].value;
                    let xv = &self.nodes[x.0].value;
                    for (r, &g) in gy.iter().enumerate() {
                        grads[b.0][r] += g;
                        let gw = &mut grads[w.0][r * cols..(r + 1) * cols];
                        for (gwc, &xc) in gw.iter_mut().zip(xv) {
                            *gwc += g * xc;
                        }
                    }
                    let gx = &mut grads[x.0];
                    for (r, &g) in gy.iter().enumerate() {
                        for (c, gxc) in gx.iter_mut().enumerate() {
                            *gxc += wv[r * cols + c] * g;
                        }
                    }
                }
                Op::Softmax(x) => {
                    let s = &node.value;
                    let inner: f64 = gy.iter().zip(s).map(|(g, y)| g * y).sum();
                    for (i, gx) in grads[x.0].iter_mut().enumerate() {
                        *gx += s[i] * (gy[i] - inner);
                    }
                }
                Op::Hadamard(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    for i in 0..gy.len() {
                        grads[a.0][i] += gy[i] * bv[i];
                        grads[b.0][i] += gy[i] * av[i];
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        for i in 0..n {
                            grads[p.0][i] += gy[off + i];
                        }
                        off += n;
                    }
                }
                Op::Relu(x) => {
                    let xv = &self.nodes[x.0].value;
                    for i in 0..gy.len() {
                        if xv[i] > 0.0 {
                            grads[x.0][i] += gy[i];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for i in 0..gy.len() {
                        grads[a.0][i] += gy[i];
                        grads[b.0][i] += gy[i];
                    }
                }
                Op::SumSquares(x) => {
                    let xv = &self.nodes[x.0].value;
                    for (gx, &v) in grads[x.0].iter_mut().zip(xv) {
                        *gx += 2.0 * v * gy[0];
                    }
                }
            }
            grads[idx] = gy;
        }
        Ok(Gradients { grads })
    }
}

/// Adjoints for every node of one backward sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> &[f64] {
        &self.grads[v.0]
    }

    pub fn vector(&self, v: Var) -> Vector {
        Vector(self.grads[v.0].clone())
    }
}
