use std::sync::{Arc, Mutex};

use crate::error::{CoreError, Result};

use super::tensor::{Tensor, Tracked};

/// Recorded operation. Fields are node ids of the inputs plus whatever
/// dimensions the backward rule needs. Values live on the nodes themselves.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Matmul { a: usize, b: usize, m: usize, k: usize, n: usize },
    AddRow { a: usize, bias: usize, rows: usize, cols: usize },
    MulCol { a: usize, col: usize, rows: usize, cols: usize },
    SumRows { a: usize, rows: usize, cols: usize },
    TakeCol { a: usize, col: usize, rows: usize, cols: usize },
    ConcatCols { parts: Vec<usize>, widths: Vec<usize>, rows: usize },
    ConcatRows { parts: Vec<usize>, heights: Vec<usize>, cols: usize },
    Sum(usize),
    Mean(usize),
    Square(usize),
    Sqrt(usize),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Silu(usize),
    LogSoftmaxRows { a: usize, rows: usize, cols: usize },
    TakePerRow { a: usize, idx: Vec<usize>, cols: usize },
    EmbedLookup { table: usize, idx: Vec<usize>, width: usize },
}

pub(crate) struct Node {
    pub op: Op,
    pub value: Vec<f64>,
    /// Saved activations some backward rules need (e.g. sigmoid for silu).
    pub aux: Vec<f64>,
}

pub(crate) struct TapeInner {
    pub nodes: Vec<Node>,
    pub consumed: bool,
}

impl TapeInner {
    pub fn push(&mut self, node: Node) -> usize {
        assert!(!self.consumed, "tape already consumed by backward; start a new tape");
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    /// Registers an untracked tensor as a constant leaf so an op that mixes
    /// tracked and untracked inputs can reference its value.
    pub fn intern_const(&mut self, t: &Tensor) -> usize {
        self.push(Node { op: Op::Leaf, value: t.data.clone(), aux: vec![] })
    }
}

/// Owner of one recorded computation. Cheap to clone handles out of via the
/// tensors it produces; consumed by the first backward pass.
pub struct Tape {
    pub(crate) inner: Arc<Mutex<TapeInner>>,
}

impl Tape {
    #[allow(clippy::new_without_default)]
    pub fn new() -> Tape {
        Tape { inner: Arc::new(Mutex::new(TapeInner { nodes: Vec::new(), consumed: false })) }
    }

    /// Copies a tensor onto the tape as a differentiable leaf.
    pub fn watch(&self, t: &Tensor) -> Tensor {
        let mut inner = self.inner.lock().unwrap();
        let node = inner.push(Node { op: Op::Leaf, value: t.data.clone(), aux: vec![] });
        Tensor {
            shape: t.shape.clone(),
            data: t.data.clone(),
            tracked: Some(Tracked { tape: Arc::clone(&self.inner), node }),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.inner.lock().unwrap().nodes.len()
    }

    /// Reverse pass from a single-element output. Returns one gradient per
    /// `wrt` entry, in order; a tracked tensor the output does not reach
    /// gets a zero gradient. Consumes the tape: a second backward errors and
    /// recording further ops panics.
    pub fn backward(&self, output: &Tensor, wrt: &[&Tensor]) -> Result<Vec<Tensor>> {
        let out_node = match &output.tracked {
            Some(tr) if Arc::ptr_eq(&tr.tape, &self.inner) => tr.node,
            _ => return Err(CoreError::NotOnTape),
        };
        if output.numel() != 1 {
            return Err(CoreError::NotScalar { shape: output.shape.clone() });
        }
        let mut wrt_nodes = Vec::with_capacity(wrt.len());
        for t in wrt {
            match &t.tracked {
                Some(tr) if Arc::ptr_eq(&tr.tape, &self.inner) => wrt_nodes.push(tr.node),
                _ => return Err(CoreError::NotOnTape),
            }
        }

        let mut inner = self.inner.lock().unwrap();
        if inner.consumed {
            return Err(CoreError::TapeConsumed);
        }
        inner.consumed = true;

        let grads = backward_pass(&inner.nodes, out_node);
        let out = wrt
            .iter()
            .zip(wrt_nodes)
            .map(|(t, node)| {
                let data = grads[node].clone().unwrap_or_else(|| vec![0.0; t.numel()]);
                Tensor::from_vec(t.shape().to_vec(), data)
            })
            .collect();
        Ok(out)
    }
}

fn grad_buf<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], id: usize) -> &'a mut [f64] {
    if grads[id].is_none() {
        grads[id] = Some(vec![0.0; nodes[id].value.len()]);
    }
    grads[id].as_mut().unwrap()
}

/// Single reverse sweep; each node's vector-Jacobian product is applied to
/// its inputs exactly once because nodes only reference earlier nodes.
fn backward_pass(nodes: &[Node], out: usize) -> Vec<Option<Vec<f64>>> {
    let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
    grads[out] = Some(vec![1.0]);

    for id in (0..=out).rev() {
        let Some(g) = grads[id].clone() else { continue };
        match &nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let ga = grad_buf(&mut grads, nodes, *a);
                for (gi, gv) in ga.iter_mut().zip(&g) {
                    *gi += gv;
                }
                let gb = grad_buf(&mut grads, nodes, *b);
                for (gi, gv) in gb.iter_mut().zip(&g) {
                    *gi += gv;
                }
            }
            Op::Sub(a, b) => {
                let ga = grad_buf(&mut grads, nodes, *a);
                for (gi, gv) in ga.iter_mut().zip(&g) {
                    *gi += gv;
                }
                let gb = grad_buf(&mut grads, nodes, *b);
                for (gi, gv) in gb.iter_mut().zip(&g) {
                    *gi -= gv;
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                {
                    let vb = &nodes[b].value;
                    let ga = grad_buf(&mut grads, nodes, a);
                    for i in 0..g.len() {
                        ga[i] += g[i] * vb[i];
                    }
                }
                let va = &nodes[a].value;
                let gb = grad_buf(&mut grads, nodes, b);
                for i in 0..g.len() {
                    gb[i] += g[i] * va[i];
                }
            }
            Op::Neg(a) => {
                let ga = grad_buf(&mut grads, nodes, *a);
                for (gi, gv) in ga.iter_mut().zip(&g) {
                    *gi -= gv;
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                let ga = grad_buf(&mut grads, nodes, *a);
                for (gi, gv) in ga.iter_mut().zip(&g) {
                    *gi += c * gv;
                }
            }
            Op::AddScalar(a) => {
                let ga = grad_buf(&mut grads, nodes, *a);
                for (gi, gv) in ga.iter_mut().zip(&g) {
                    *gi += gv;
                }
            }
            Op::Matmul { a, b, m, k, n } => {
                let (a, b, m, k, n) = (*a, *b, *m, *k, *n);
                {
                    // dA += G B^T
                    let vb = &nodes[b].value;
                    let ga = grad_buf(&mut grads, nodes, a);
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            let grow = &g[i * n..(i + 1) * n];
                            let brow = &vb[p * n..(p + 1) * n];
                            for j in 0..n {
                                s += grow[j] * brow[j];
                            }
                            ga[i * k + p] += s;
                        }
                    }
                }
                // dB += A^T G
                let va = &nodes[a].value;
                let gb = grad_buf(&mut grads, nodes, b);
                for i in 0..m {
                    let arow = &va[i * k..(i + 1) * k];
                    let grow = &g[i * n..(i + 1) * n];
                    for (p, &ap) in arow.iter().enumerate() {
                        if ap != 0.0 {
                            let brow = &mut gb[p * n..(p + 1) * n];
                            for j in 0..n {
                                brow[j] += ap * grow[j];
                            }
                        }
                    }
                }
            }
            Op::AddRow { a, bias, rows, cols } => {
                let (a, bias, rows, cols) = (*a, *bias, *rows, *cols);
                {
                    let ga = grad_buf(&mut grads, nodes, a);
                    for (gi, gv) in ga.iter_mut().zip(&g) {
                        *gi += gv;
                    }
                }
                let gb = grad_buf(&mut grads, nodes, bias);
                for i in 0..rows {
                    for j in 0..cols {
                        gb[j] += g[i * cols + j];
                    }
                }
            }
            Op::MulCol { a, col, rows, cols } => {
                let (a, col, rows, cols) = (*a, *col, *rows, *cols);
                {
                    let vc = &nodes[col].value;
                    let ga = grad_buf(&mut grads, nodes, a);
                    for i in 0..rows {
                        for j in 0..cols {
                            ga[i * cols + j] += g[i * cols + j] * vc[i];
                        }
                    }
                }
                let va = &nodes[a].value;
                let gc = grad_buf(&mut grads, nodes, col);
                for i in 0..rows {
                    let mut s = 0.0;
                    for j in 0..cols {
                        s += g[i * cols + j] * va[i * cols + j];
                    }
                    gc[i] += s;
                }
            }
            Op::SumRows { a, rows, cols } => {
                let ga = grad_buf(&mut grads, nodes, *a);
                for i in 0..*rows {
                    for j in 0..*cols {
                        ga[i * cols + j] += g[i];
                    }
                }
            }
            Op::TakeCol { a, col, rows, cols } => {
                let ga = grad_buf(&mut grads, nodes, *a);
                for i in 0..*rows {
                    ga[i * cols + col] += g[i];
                }
            }
            Op::ConcatCols { parts, widths, rows } => {
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (part, w) in parts.iter().zip(widths) {
                    let gp = grad_buf(&mut grads, nodes, *part);
                    for i in 0..*rows {
                        for j in 0..*w {
                            gp[i * w + j] += g[i * total + offset + j];
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows { parts, heights, cols } => {
                let mut offset = 0;
                for (part, h) in parts.iter().zip(heights) {
                    let gp = grad_buf(&mut grads, nodes, *part);
                    let len = h * cols;
                    for i in 0..len {
                        gp[i] += g[offset + i];
                    }
                    offset += len;
                }
            }
            Op::Sum(a) => {
                let ga = grad_buf(&mut grads, nodes, *a);
                for gi in ga.iter_mut() {
                    *gi += g[0];
                }
            }
            Op::Mean(a) => {
                let scale = 1.0 / nodes[*a].value.len() as f64;
                let ga = grad_buf(&mut grads, nodes, *a);
                for gi in ga.iter_mut() {
                    *gi += g[0] * scale;
                }
            }
            Op::Square(a) => {
                let a = *a;
                let va = &nodes[a].value;
                let ga = grad_buf(&mut grads, nodes, a);
                for i in 0..g.len() {
                    ga[i] += 2.0 * va[i] * g[i];
                }
            }
            Op::Sqrt(a) => {
                let y = &nodes[id].value;
                let ga = grad_buf(&mut grads, nodes, *a);
                for i in 0..g.len() {
                    ga[i] += g[i] / (2.0 * y[i]);
                }
            }
            Op::Exp(a) => {
                let y = &nodes[id].value;
                let ga = grad_buf(&mut grads, nodes, *a);
                for i in 0..g.len() {
                    ga[i] += g[i] * y[i];
                }
            }
            Op::Log(a) => {
                let a = *a;
                let va = &nodes[a].value;
                let ga = grad_buf(&mut grads, nodes, a);
                for i in 0..g.len() {
                    ga[i] += g[i] / va[i];
                }
            }
            Op::Tanh(a) => {
                let y = &nodes[id].value;
                let ga = grad_buf(&mut grads, nodes, *a);
                for i in 0..g.len() {
                    ga[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            }
            Op::Silu(a) => {
                let a = *a;
                let s = &nodes[id].aux;
                let va = &nodes[a].value;
                let ga = grad_buf(&mut grads, nodes, a);
                for i in 0..g.len() {
                    ga[i] += g[i] * s[i] * (1.0 + va[i] * (1.0 - s[i]));
                }
            }
            Op::LogSoftmaxRows { a, rows, cols } => {
                let y = &nodes[id].value;
                let ga = grad_buf(&mut grads, nodes, *a);
                for i in 0..*rows {
                    let grow = &g[i * cols..(i + 1) * cols];
                    let yrow = &y[i * cols..(i + 1) * cols];
                    let gsum: f64 = grow.iter().sum();
                    for j in 0..*cols {
                        ga[i * cols + j] += grow[j] - yrow[j].exp() * gsum;
                    }
                }
            }
            Op::TakePerRow { a, idx, cols } => {
                let ga = grad_buf(&mut grads, nodes, *a);
                for (i, &j) in idx.iter().enumerate() {
                    ga[i * cols + j] += g[i];
                }
            }
            Op::EmbedLookup { table, idx, width } => {
                let gt = grad_buf(&mut grads, nodes, *table);
                for (i, &row) in idx.iter().enumerate() {
                    for j in 0..*width {
                        gt[row * width + j] += g[i * width + j];
                    }
                }
            }
        }
    }
    grads
}
