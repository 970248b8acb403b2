use super::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
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
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Silu(Var),
    Tanh(Var),
    LayerNorm { x: Var, eps: f64 },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Mean(Var),
    SumSq(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations in evaluation order; nodes are therefore already
/// topologically sorted and `backward` walks them in reverse.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every recorded node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not
    /// influence the root.
    pub fn get_or_zeros(&self, v: Var, like: &[usize]) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(delta),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(value.is_finite(), "non-finite value produced by {op:?}");
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds a length-`n` bias to every row of a `rows x n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tx.shape().len() != 2 || tb.len() != tx.cols() {
            return Err(shape_err("add_bias", tx, tb));
        }
        let mut out = tx.clone();
        let n = tx.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += tb.data()[i % n];
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    /// `x @ w + b`: the affine map used by every dense layer.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(out, Op::Relu(x))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * sigmoid(v));
        self.push(out, Op::Silu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        self.push(out, Op::Tanh(x))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape().len() != 2 {
            return Err(Error::Shape {
                op: "layer_norm",
                left: tx.shape().to_vec(),
                right: vec![],
            });
        }
        let mut out = tx.clone();
        let n = tx.cols() as f64;
        for r in 0..tx.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
        Ok(self.push(out, Op::LayerNorm { x, eps }))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::domain("concat of nothing"))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 2 || t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(*first), t));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.shape().len() != 2 || start >= end || end > tx.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                left: tx.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let rows = tx.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&tx.row(r)[start..end]);
        }
        let out = Tensor::new(vec![rows, end - start], data)?;
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    /// Mean over every element, as a scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    /// Sum of squares over every element, as a scalar.
    pub fn sum_sq(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v * v).sum();
        self.push(Tensor::scalar(s), Op::SumSq(x))
    }

    /// Mean squared error between two equally shaped values.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let n = self.value(d).len().max(1) as f64;
        let s = self.sum_sq(d);
        Ok(self.scale(s, 1.0 / n))
    }

    /// Reverse-mode sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::domain(format!(
                "backward needs a scalar root, got shape {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::new(rv.shape().to_vec(), vec![1.0])?);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    let mut da = vec![0.0; m * k];
                    gemm(false, true, m, n, k, g.data(), tb.data(), &mut da);
                    let mut db = vec![0.0; k * n];
                    gemm(true, false, k, m, n, ta.data(), g.data(), &mut db);
                    accumulate(&mut grads[a.0], Tensor::new(vec![m, k], da)?);
                    accumulate(&mut grads[b.0], Tensor::new(vec![k, n], db)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[a.0], g.clone());
                    accumulate(&mut grads[b.0], g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ga: Vec<f64> = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads[a.0], Tensor::new(g.shape().to_vec(), ga)?);
                    accumulate(&mut grads[b.0], Tensor::new(g.shape().to_vec(), gb)?);
                }
                Op::AddBias(x, b) => {
                    let tb = self.value(*b);
                    let n = tb.len();
                    let mut gb = vec![0.0; n];
                    for (j, v) in g.data().iter().enumerate() {
                        gb[j % n] += v;
                    }
                    accumulate(&mut grads[b.0], Tensor::new(tb.shape().to_vec(), gb)?);
                    accumulate(&mut grads[x.0], g.clone());
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    accumulate(&mut grads[x.0], g.map(|v| v * c));
                }
                Op::Relu(x) => {
                    let tx = self.value(*x);
                    let d = g.data().iter().zip(tx.data()).map(|(gv, &xv)| if xv > 0.0 { *gv } else { 0.0 }).collect();
                    accumulate(&mut grads[x.0], Tensor::new(g.shape().to_vec(), d)?);
                }
                Op::Silu(x) => {
                    let tx = self.value(*x);
                    let d = g
                        .data()
                        .iter()
                        .zip(tx.data())
                        .map(|(gv, &xv)| {
                            let s = sigmoid(xv);
                            gv * s * (1.0 + xv * (1.0 - s))
                        })
                        .collect();
                    accumulate(&mut grads[x.0], Tensor::new(g.shape().to_vec(), d)?);
                }
                Op::Tanh(x) => {
                    let ty = &node.value;
                    let d = g.data().iter().zip(ty.data()).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect();
                    accumulate(&mut grads[x.0], Tensor::new(g.shape().to_vec(), d)?);
                }
                Op::LayerNorm { x, eps } => {
                    let tx = self.value(*x);
                    let ty = &node.value;
                    let cols = tx.cols();
                    let n = cols as f64;
                    let mut d = vec![0.0; tx.len()];
                    for r in 0..tx.rows() {
                        let xr = tx.row(r);
                        let mean = xr.iter().sum::<f64>() / n;
                        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + eps).sqrt();
                        let yr = ty.row(r);
                        let gr = g.row(r);
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for j in 0..cols {
                            d[r * cols + j] = inv * (gr[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                    accumulate(&mut grads[x.0], Tensor::new(tx.shape().to_vec(), d)?);
                }
                Op::ConcatCols(parts) => {
                    let rows = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        accumulate(&mut grads[p.0], Tensor::new(vec![rows, w], d)?);
                        offset += w;
                    }
                }
                Op::SliceCols { x, start } => {
                    let tx = self.value(*x);
                    let (rows, cols) = (tx.rows(), tx.cols());
                    let w = g.cols();
                    let mut d = vec![0.0; rows * cols];
                    for r in 0..rows {
                        d[r * cols + start..r * cols + start + w].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads[x.0], Tensor::new(vec![rows, cols], d)?);
                }
                Op::Mean(x) => {
                    let tx = self.value(*x);
                    let gv = g.data()[0] / tx.len().max(1) as f64;
                    accumulate(&mut grads[x.0], Tensor::filled(tx.shape(), gv));
                }
                Op::SumSq(x) => {
                    let tx = self.value(*x);
                    let gv = g.data()[0];
                    accumulate(&mut grads[x.0], tx.map(|v| 2.0 * gv * v));
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn relu_kills_negative_inputs() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![-0.5, -2.0, -1e-9]).unwrap());
        let y = tape.relu(x);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_graph_has_zero_gradients() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::filled(&[2, 2], 0.7));
        let zero = tape.leaf(Tensor::zeros(&[2, 2]));
        let prod = tape.mul(w, zero).unwrap();
        let loss = tape.sum_sq(prod);
        assert_eq!(tape.value(loss).item().unwrap(), 0.0);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(w).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.backward(x), Err(Error::Domain(_))));
    }

    #[test]
    fn concat_then_slice_round_trips_gradients() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let b = tape.leaf(Tensor::matrix(2, 1, vec![5.0, 6.0]).unwrap());
        let c = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let s = tape.slice_cols(c, 1, 3).unwrap();
        assert_eq!(tape.value(s).data(), &[2.0, 5.0, 4.0, 6.0]);
        let loss = tape.sum_sq(s);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[0.0, 4.0, 0.0, 8.0]);
        assert_eq!(g.get(b).unwrap().data(), &[10.0, 12.0]);
    }

    #[test]
    fn add_bias_rejects_wrong_width() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2]));
        assert!(matches!(tape.add_bias(x, b), Err(Error::Shape { .. })));
    }
}
