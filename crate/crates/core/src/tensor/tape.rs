use std::collections::HashMap;

use super::{matrix_dims, Gradients, ModelParams, Tensor};
use crate::error::{Error, Result};

/// Layer-norm stabilizer added to the population variance.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before logs.
pub const BCE_CLAMP: f64 = 1e-12;

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// The operation kinds reachable through [`Tape::apply`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    MatMul,
    Add,
    ElementwiseMul,
    SoftmaxRows,
    LayerNorm,
    Gelu,
    Sigmoid,
    EmbeddingLookup,
    ConcatRows,
    MeanRows,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Softmax { x: Var },
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Gelu { x: Var },
    Sigmoid { x: Var },
    Embedding { table: Var, ids: Vec<usize> },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var> },
    MeanRows { x: Var },
    Transpose { x: Var },
    SliceCols { x: Var, start: usize },
    SelectRows { x: Var, rows: Vec<usize> },
    Reshape { x: Var },
    Sum { x: Var },
    Bce { probs: Var, targets: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

impl Node {
    fn dims(&self) -> (usize, usize) {
        matrix_dims(&self.shape)
    }
}

/// Append-only record of a forward computation.
///
/// Inputs of a node always precede it, so the reverse sweep in
/// [`Tape::backward`] visits every node after all of its consumers.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    fn finish(
        &mut self,
        kind: &'static str,
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Op,
    ) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { kind });
        }
        Ok(self.push(shape, value, op))
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    /// A leaf that does not receive a gradient entry.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf)
    }

    /// A named trainable leaf. Registering the same name twice returns the
    /// existing handle, so gradients from every use site accumulate.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Var {
        if let Some(v) = self.param_index.get(name) {
            return *v;
        }
        let v = self.constant(t);
        self.params.push((name.to_string(), v));
        self.param_index.insert(name.to_string(), v);
        v
    }

    /// Registers every tensor of `params`.
    pub fn bind(&mut self, params: &ModelParams) {
        for (name, t) in params.iter() {
            self.param(name, t);
        }
    }

    pub fn param_var(&self, name: &str) -> Result<Var> {
        self.param_index
            .get(name)
            .copied()
            .ok_or_else(|| Error::contract(format!("parameter {name} is not bound on the tape")))
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn data(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn value(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape node holds a valid tensor")
    }

    /// Dispatches one of the named operation kinds. `EmbeddingLookup` takes
    /// the table and a tensor of integer-valued row indices.
    pub fn apply(&mut self, kind: OpKind, operands: &[Var]) -> Result<Var> {
        let arity = match kind {
            OpKind::MatMul | OpKind::Add | OpKind::ElementwiseMul | OpKind::EmbeddingLookup => 2,
            OpKind::ConcatRows => operands.len().max(1),
            _ => 1,
        };
        if operands.len() != arity {
            return Err(Error::contract(format!(
                "{kind:?} expects {arity} operand(s), got {}",
                operands.len()
            )));
        }
        match kind {
            OpKind::MatMul => self.matmul(operands[0], operands[1]),
            OpKind::Add => self.add(operands[0], operands[1]),
            OpKind::ElementwiseMul => self.mul(operands[0], operands[1]),
            OpKind::SoftmaxRows => self.softmax_rows(operands[0]),
            OpKind::LayerNorm => self.layer_norm(operands[0]),
            OpKind::Gelu => self.gelu(operands[0]),
            OpKind::Sigmoid => self.sigmoid(operands[0]),
            OpKind::EmbeddingLookup => {
                let ids = self
                    .data(operands[1])
                    .iter()
                    .map(|&v| {
                        if v >= 0.0 && v.fract() == 0.0 {
                            Ok(v as usize)
                        } else {
                            Err(Error::contract(format!(
                                "embedding index {v} is not a row id"
                            )))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                self.embedding(operands[0], &ids)
            }
            OpKind::ConcatRows => self.concat_rows(operands),
            OpKind::MeanRows => self.mean_rows(operands[0]),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (an, bn) = (self.node(a), self.node(b));
        let ((m, k), (k2, n)) = (an.dims(), bn.dims());
        if an.shape.len() > 2 || bn.shape.len() > 2 || k != k2 {
            return Err(Error::Dimension {
                kind: "matmul",
                shapes: vec![an.shape.clone(), bn.shape.clone()],
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &an.value[i * k..(i + 1) * k];
            let dst = &mut out[i * n..(i + 1) * n];
            for (p, &av) in row.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = &bn.value[p * n..(p + 1) * n];
                for (d, &bv) in dst.iter_mut().zip(brow) {
                    *d += av * bv;
                }
            }
        }
        self.finish("matmul", vec![m, n], out, Op::MatMul { a, b })
    }

    /// `b` either matches `a` exactly or is a single row broadcast over the
    /// rows of `a`.
    fn broadcast_check(&self, kind: &'static str, a: Var, b: Var) -> Result<bool> {
        let (an, bn) = (self.node(a), self.node(b));
        if an.shape == bn.shape {
            return Ok(false);
        }
        let ((_, ac), (br, bc)) = (an.dims(), bn.dims());
        if br == 1 && bc == ac {
            Ok(true)
        } else {
            Err(Error::Dimension {
                kind,
                shapes: vec![an.shape.clone(), bn.shape.clone()],
            })
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("add", a, b)?;
        let (an, bn) = (self.node(a), self.node(b));
        let cols = bn.value.len();
        let out = an
            .value
            .iter()
            .enumerate()
            .map(|(i, x)| x + bn.value[i % cols])
            .collect();
        let shape = an.shape.clone();
        self.finish("add", shape, out, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("elementwise_mul", a, b)?;
        let (an, bn) = (self.node(a), self.node(b));
        let cols = bn.value.len();
        let out = an
            .value
            .iter()
            .enumerate()
            .map(|(i, x)| x * bn.value[i % cols])
            .collect();
        let shape = an.shape.clone();
        self.finish("elementwise_mul", shape, out, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let n = self.node(x);
        let out = n.value.iter().map(|v| v * factor).collect();
        let shape = n.shape.clone();
        self.finish("scale", shape, out, Op::Scale { x, factor })
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.masked_softmax_rows(x, None)
    }

    /// Row softmax where columns with `mask[j] == false` receive exactly zero
    /// weight. Every row must keep at least one column.
    pub fn masked_softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let n = self.node(x);
        let (rows, cols) = n.dims();
        if let Some(m) = mask {
            if m.len() != cols {
                return Err(Error::Dimension {
                    kind: "softmax_rows",
                    shapes: vec![n.shape.clone(), vec![m.len()]],
                });
            }
            if !m.iter().any(|&keep| keep) {
                return Err(Error::contract("softmax_rows: every column is masked"));
            }
        }
        let keep = |j: usize| mask.is_none_or(|m| m[j]);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let src = &n.value[r * cols..(r + 1) * cols];
            let max = (0..cols)
                .filter(|&j| keep(j))
                .map(|j| src[j])
                .fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[r * cols..(r + 1) * cols];
            let mut total = 0.0;
            for j in 0..cols {
                if keep(j) {
                    dst[j] = (src[j] - max).exp();
                    total += dst[j];
                }
            }
            for v in dst.iter_mut() {
                *v /= total;
            }
        }
        let shape = n.shape.clone();
        self.finish("softmax_rows", shape, out, Op::Softmax { x })
    }

    /// Normalizes each row to zero mean and unit population variance.
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let n = self.node(x);
        let (rows, cols) = n.dims();
        let mut out = vec![0.0; rows * cols];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let src = &n.value[r * cols..(r + 1) * cols];
            let mean = src.iter().sum::<f64>() / cols as f64;
            let var = src.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (d, v) in out[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                *d = (v - mean) * s;
            }
            inv_std.push(s);
        }
        let shape = n.shape.clone();
        self.finish("layer_norm", shape, out, Op::LayerNorm { x, inv_std })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let n = self.node(x);
        let out = n
            .value
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_K * (v + GELU_C * v * v * v)).tanh()))
            .collect();
        let shape = n.shape.clone();
        self.finish("gelu", shape, out, Op::Gelu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let n = self.node(x);
        let out = n.value.iter().map(|&v| sigmoid(v)).collect();
        let shape = n.shape.clone();
        self.finish("sigmoid", shape, out, Op::Sigmoid { x })
    }

    /// Gathers rows of `table` in the order given by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let n = self.node(table);
        let (rows, cols) = n.dims();
        if ids.is_empty() {
            return Err(Error::contract("embedding_lookup needs at least one id"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::Dimension {
                kind: "embedding_lookup",
                shapes: vec![n.shape.clone(), vec![bad]],
            });
        }
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            out.extend_from_slice(&n.value[i * cols..(i + 1) * cols]);
        }
        self.finish(
            "embedding_lookup",
            vec![ids.len(), cols],
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat_rows needs at least one operand"));
        }
        let cols = self.node(parts[0]).dims().1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let n = self.node(p);
            let (r, c) = n.dims();
            if c != cols {
                return Err(Error::Dimension {
                    kind: "concat_rows",
                    shapes: parts.iter().map(|&p| self.shape(p).to_vec()).collect(),
                });
            }
            rows += r;
            out.extend_from_slice(&n.value);
        }
        self.finish(
            "concat_rows",
            vec![rows, cols],
            out,
            Op::ConcatRows {
                parts: parts.to_vec(),
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols needs at least one operand"));
        }
        let rows = self.node(parts[0]).dims().0;
        let dims: Vec<(usize, usize)> = parts.iter().map(|&p| self.node(p).dims()).collect();
        if dims.iter().any(|&(r, _)| r != rows) {
            return Err(Error::Dimension {
                kind: "concat_cols",
                shapes: parts.iter().map(|&p| self.shape(p).to_vec()).collect(),
            });
        }
        let cols: usize = dims.iter().map(|d| d.1).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for (&p, &(_, c)) in parts.iter().zip(&dims) {
                out.extend_from_slice(&self.node(p).value[r * c..(r + 1) * c]);
            }
        }
        self.finish(
            "concat_cols",
            vec![rows, cols],
            out,
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        )
    }

    /// Column-wise mean over rows, giving a single row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let n = self.node(x);
        let (rows, cols) = n.dims();
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (o, v) in out.iter_mut().zip(&n.value[r * cols..(r + 1) * cols]) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= rows as f64;
        }
        self.finish("mean_rows", vec![1, cols], out, Op::MeanRows { x })
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let n = self.node(x);
        let (rows, cols) = n.dims();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = n.value[r * cols + c];
            }
        }
        self.finish("transpose", vec![cols, rows], out, Op::Transpose { x })
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.node(x);
        let (rows, cols) = n.dims();
        if len == 0 || start + len > cols {
            return Err(Error::Dimension {
                kind: "slice_cols",
                shapes: vec![n.shape.clone(), vec![start, len]],
            });
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&n.value[r * cols + start..r * cols + start + len]);
        }
        self.finish(
            "slice_cols",
            vec![rows, len],
            out,
            Op::SliceCols { x, start },
        )
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let n = self.node(x);
        let (nrows, cols) = n.dims();
        if rows.is_empty() || rows.iter().any(|&r| r >= nrows) {
            return Err(Error::Dimension {
                kind: "select_rows",
                shapes: vec![n.shape.clone(), rows.to_vec()],
            });
        }
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            out.extend_from_slice(&n.value[r * cols..(r + 1) * cols]);
        }
        self.finish(
            "select_rows",
            vec![rows.len(), cols],
            out,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n = self.node(x);
        if shape.is_empty()
            || shape.contains(&0)
            || shape.iter().product::<usize>() != n.value.len()
        {
            return Err(Error::Dimension {
                kind: "reshape",
                shapes: vec![n.shape.clone(), shape.to_vec()],
            });
        }
        let out = n.value.clone();
        self.finish("reshape", shape.to_vec(), out, Op::Reshape { x })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.node(x).value.iter().sum();
        self.finish("sum", vec![1], vec![total], Op::Sum { x })
    }

    /// Mean over rows of the summed per-label binary cross-entropy.
    /// `targets` is row-major with the same shape as `probs`.
    pub fn bce(&mut self, probs: Var, targets: &[f64]) -> Result<Var> {
        let n = self.node(probs);
        if n.value.len() != targets.len() {
            return Err(Error::Dimension {
                kind: "bce_loss",
                shapes: vec![n.shape.clone(), vec![targets.len()]],
            });
        }
        let rows = n.dims().0;
        let total: f64 = n
            .value
            .iter()
            .zip(targets)
            .map(|(&p, &y)| {
                let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                y * p.ln() + (1.0 - y) * (1.0 - p).ln()
            })
            .sum();
        self.finish(
            "bce_loss",
            vec![1],
            vec![-total / rows as f64],
            Op::Bce {
                probs,
                targets: targets.to_vec(),
            },
        )
    }

    /// Reverse sweep from a scalar. Returns a gradient for every registered
    /// parameter; parameters the scalar does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.node(loss);
        if root.value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar, got shape {:?}",
                root.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(i, node, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let mut out = Gradients::new();
        for (name, v) in &self.params {
            let shape = self.node(*v).shape.clone();
            let data = grads
                .get(v.0)
                .and_then(|g| g.clone())
                .unwrap_or_else(|| vec![0.0; self.node(*v).value.len()]);
            out.insert(name.clone(), Tensor::new(shape, data)?);
        }
        Ok(out)
    }

    fn propagate(
        &self,
        at: usize,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        macro_rules! slot {
            ($v:expr) => {
                grad_slot(&self.nodes, grads, at, $v)
            };
        }

        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (an, bn) = (self.node(*a), self.node(*b));
                let ((m, k), (_, n)) = (an.dims(), bn.dims());
                let ga = slot!(*a)?;
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &bn.value[p * n..(p + 1) * n];
                        ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
                let gb = slot!(*b)?;
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let av = an.value[i * k + p];
                        if av == 0.0 {
                            continue;
                        }
                        for (d, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *d += av * gv;
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                let cols = self.node(*b).value.len();
                let ga = slot!(*a)?;
                for (d, gv) in ga.iter_mut().zip(g) {
                    *d += gv;
                }
                let gb = slot!(*b)?;
                for (i, gv) in g.iter().enumerate() {
                    gb[i % cols] += gv;
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (&self.node(*a).value, &self.node(*b).value);
                let cols = bv.len();
                let ga = slot!(*a)?;
                for (i, gv) in g.iter().enumerate() {
                    ga[i] += gv * bv[i % cols];
                }
                let gb = slot!(*b)?;
                for (i, gv) in g.iter().enumerate() {
                    gb[i % cols] += gv * av[i];
                }
            }
            Op::Scale { x, factor } => {
                let gx = slot!(*x)?;
                for (d, gv) in gx.iter_mut().zip(g) {
                    *d += gv * factor;
                }
            }
            Op::Softmax { x } => {
                let (rows, cols) = node.dims();
                let y = &node.value;
                let gx = slot!(*x)?;
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        gx[r * cols + j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LayerNorm { x, inv_std } => {
                let (rows, cols) = node.dims();
                let y = &node.value;
                let gx = slot!(*x)?;
                for r in 0..rows {
                    let yr = &y[r * cols..(r + 1) * cols];
                    let gr = &g[r * cols..(r + 1) * cols];
                    let mean_g = gr.iter().sum::<f64>() / cols as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                    for j in 0..cols {
                        gx[r * cols + j] += inv_std[r] * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
            }
            Op::Gelu { x } => {
                let xv = &self.node(*x).value;
                let gx = slot!(*x)?;
                for (i, gv) in g.iter().enumerate() {
                    let v = xv[i];
                    let t = (GELU_K * (v + GELU_C * v * v * v)).tanh();
                    let dt = (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * v * v);
                    gx[i] += gv * (0.5 * (1.0 + t) + 0.5 * v * dt);
                }
            }
            Op::Sigmoid { x } => {
                let y = &node.value;
                let gx = slot!(*x)?;
                for (i, gv) in g.iter().enumerate() {
                    gx[i] += gv * y[i] * (1.0 - y[i]);
                }
            }
            Op::Embedding { table, ids } => {
                let cols = node.dims().1;
                let gt = slot!(*table)?;
                for (r, &id) in ids.iter().enumerate() {
                    for c in 0..cols {
                        gt[id * cols + c] += g[r * cols + c];
                    }
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for p in parts {
                    let len = self.node(*p).value.len();
                    let gp = slot!(*p)?;
                    for (d, gv) in gp.iter_mut().zip(&g[offset..offset + len]) {
                        *d += gv;
                    }
                    offset += len;
                }
            }
            Op::ConcatCols { parts } => {
                let (rows, cols) = node.dims();
                let mut offset = 0;
                for p in parts {
                    let c = self.node(*p).dims().1;
                    let gp = slot!(*p)?;
                    for r in 0..rows {
                        for j in 0..c {
                            gp[r * c + j] += g[r * cols + offset + j];
                        }
                    }
                    offset += c;
                }
            }
            Op::MeanRows { x } => {
                let (rows, cols) = self.node(*x).dims();
                let gx = slot!(*x)?;
                for r in 0..rows {
                    for c in 0..cols {
                        gx[r * cols + c] += g[c] / rows as f64;
                    }
                }
            }
            Op::Transpose { x } => {
                let (rows, cols) = self.node(*x).dims();
                let gx = slot!(*x)?;
                for r in 0..rows {
                    for c in 0..cols {
                        gx[r * cols + c] += g[c * rows + r];
                    }
                }
            }
            Op::SliceCols { x, start } => {
                let (rows, len) = node.dims();
                let cols = self.node(*x).dims().1;
                let gx = slot!(*x)?;
                for r in 0..rows {
                    for j in 0..len {
                        gx[r * cols + start + j] += g[r * len + j];
                    }
                }
            }
            Op::SelectRows { x, rows } => {
                let cols = node.dims().1;
                let gx = slot!(*x)?;
                for (i, &r) in rows.iter().enumerate() {
                    for c in 0..cols {
                        gx[r * cols + c] += g[i * cols + c];
                    }
                }
            }
            Op::Reshape { x } => {
                let gx = slot!(*x)?;
                for (d, gv) in gx.iter_mut().zip(g) {
                    *d += gv;
                }
            }
            Op::Sum { x } => {
                let gx = slot!(*x)?;
                for d in gx.iter_mut() {
                    *d += g[0];
                }
            }
            Op::Bce { probs, targets } => {
                let pn = self.node(*probs);
                let rows = pn.dims().0 as f64;
                let pv = &pn.value;
                let gp = slot!(*probs)?;
                for (i, &y) in targets.iter().enumerate() {
                    let p = pv[i];
                    if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                        continue;
                    }
                    gp[i] += -g[0] * (y / p - (1.0 - y) / (1.0 - p)) / rows;
                }
            }
        }
        Ok(())
    }
}

fn grad_slot<'g>(
    nodes: &[Node],
    grads: &'g mut [Option<Vec<f64>>],
    at: usize,
    v: Var,
) -> Result<&'g mut Vec<f64>> {
    if v.0 >= at {
        return Err(Error::Internal(format!(
            "tape node {at} consumes later node {}",
            v.0
        )));
    }
    let len = nodes[v.0].value.len();
    Ok(grads[v.0].get_or_insert_with(|| vec![0.0; len]))
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_is_exact() {
        let mut tape = Tape::new();
        let a = tape.constant(&t(&[2, 3], &[1.5, -2.0, 0.25, 3.0, 7.0, -0.125]));
        let eye = tape.constant(&t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let out = tape.apply(OpKind::MatMul, &[a, eye]).unwrap();
        assert_eq!(tape.data(out), tape.data(a));
    }

    #[test]
    fn matmul_shape_mismatch_names_kind() {
        let mut tape = Tape::new();
        let a = tape.constant(&Tensor::zeros(&[2, 3]));
        let b = tape.constant(&Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
        assert!(err.to_string().contains("[2, 3]"), "{err}");
    }

    #[test]
    fn softmax_equal_logits_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[1, 3], &[0.0, 0.0, 0.0]));
        let y = tape.apply(OpKind::SoftmaxRows, &[x]).unwrap();
        for v in tape.data(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn masked_softmax_zero_weight() {
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[2, 3], &[1.0, 2.0, 50.0, -1.0, 0.5, 3.0]));
        let y = tape
            .masked_softmax_rows(x, Some(&[true, true, false]))
            .unwrap();
        let d = tape.data(y);
        assert_eq!(d[2], 0.0);
        assert_eq!(d[5], 0.0);
        assert!((d[0] + d[1] - 1.0).abs() < 1e-12);
        assert!(tape.masked_softmax_rows(x, Some(&[false; 3])).is_err());
    }

    #[test]
    fn layer_norm_hand_value() {
        // mean 2, population variance 2/3
        let mut tape = Tape::new();
        let x = tape.constant(&t(&[3], &[1.0, 2.0, 3.0]));
        let y = tape.apply(OpKind::LayerNorm, &[x]).unwrap();
        let s = 1.0 / (2.0f64 / 3.0 + 1e-5).sqrt();
        let d = tape.data(y);
        assert!((d[0] + s).abs() < 1e-12);
        assert!(d[1].abs() < 1e-12);
        assert!((d[2] - s).abs() < 1e-12);
        assert!((d[2] - 1.22474).abs() < 1e-5);
    }

    #[test]
    fn product_rule() {
        let mut tape = Tape::new();
        let x = tape.param("x", &Tensor::scalar(3.0));
        let y = tape.param("y", &Tensor::scalar(-4.0));
        let z = tape.mul(x, y).unwrap();
        let g = tape.backward(z).unwrap();
        assert_eq!(g.get("x").unwrap().data(), &[-4.0]);
        assert_eq!(g.get("y").unwrap().data(), &[3.0]);
    }

    #[test]
    fn gradient_of_summed_softmax_vanishes() {
        let mut tape = Tape::new();
        let z = tape.param(
            "z",
            &t(&[2, 4], &[0.3, -1.0, 2.0, 0.1, 5.0, 4.0, -3.0, 0.0]),
        );
        let s = tape.softmax_rows(z).unwrap();
        let l = tape.sum(s).unwrap();
        let g = tape.backward(l).unwrap();
        for v in g.get("z").unwrap().data() {
            assert!(v.abs() < 1e-15);
        }
    }

    #[test]
    fn unreached_params_get_zero_grads_and_uses_accumulate() {
        let mut tape = Tape::new();
        let a = tape.param("a", &Tensor::scalar(2.0));
        tape.param("unused", &t(&[2], &[1.0, 1.0]));
        let a_again = tape.param("a", &Tensor::scalar(99.0));
        assert_eq!(a, a_again);
        let sq = tape.mul(a, a_again).unwrap();
        let g = tape.backward(sq).unwrap();
        assert_eq!(g.get("a").unwrap().data(), &[4.0]);
        assert_eq!(g.get("unused").unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let a = tape.param("a", &Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(a), Err(Error::Contract(_))));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut tape = Tape::new();
        let a = tape.constant(&Tensor::scalar(1e308));
        let err = tape.scale(a, 10.0).unwrap_err();
        assert!(matches!(err, Error::NonFinite { kind: "scale" }));
    }

    #[test]
    fn bce_hand_values() {
        let mut tape = Tape::new();
        let p = tape.constant(&t(&[1, 2], &[0.9, 0.2]));
        let l = tape.bce(p, &[1.0, 0.0]).unwrap();
        let expected = -(0.9f64.ln() + 0.8f64.ln());
        assert!((tape.data(l)[0] - expected).abs() < 1e-15);
        assert!((tape.data(l)[0] - 0.32850).abs() < 1e-5);
    }

    #[test]
    fn embedding_via_apply_rejects_fractional_ids() {
        let mut tape = Tape::new();
        let table = tape.constant(&Tensor::zeros(&[4, 2]));
        let ids = tape.constant(&t(&[2], &[1.0, 2.5]));
        assert!(tape.apply(OpKind::EmbeddingLookup, &[table, ids]).is_err());
        let ids = tape.constant(&t(&[2], &[3.0, 0.0]));
        let out = tape.apply(OpKind::EmbeddingLookup, &[table, ids]).unwrap();
        assert_eq!(tape.shape(out), &[2, 2]);
    }

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(
            rows in 1usize..5,
            vals in prop::collection::vec(-30.0f64..30.0, 1..40),
        ) {
            let cols = vals.len();
            let data: Vec<f64> = (0..rows).flat_map(|r| vals.iter().map(move |v| v * (r as f64 + 1.0) / 2.0)).collect();
            let mut tape = Tape::new();
            let x = tape.constant(&Tensor::new(vec![rows, cols], data).unwrap());
            let y = tape.softmax_rows(x).unwrap();
            for r in 0..rows {
                let row = &tape.data(y)[r * cols..(r + 1) * cols];
                prop_assert!(row.iter().all(|&v| v >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn layer_norm_standardizes(vals in prop::collection::vec(-100.0f64..100.0, 2..32)) {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assume!(var >= 1e-3);
            let mut tape = Tape::new();
            let x = tape.constant(&Tensor::new(vec![vals.len()], vals.clone()).unwrap());
            let y = tape.layer_norm(x).unwrap();
            let out = tape.data(y);
            let m = out.iter().sum::<f64>() / n;
            let v = out.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
            prop_assert!(m.abs() < 1e-9);
            // the stabilizer shrinks the variance to var / (var + eps)
            prop_assert!((v - var / (var + LAYER_NORM_EPS)).abs() < 1e-9);
            if var >= 10.0 {
                prop_assert!((v - 1.0).abs() < 1e-6);
            }
        }
    }
}
