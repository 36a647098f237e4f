use std::sync::Arc;

use super::tape::{Node, Op, TapeInner};
use super::tensor::{Tensor, Tracked};
use std::sync::Mutex;

fn untracked(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    Tensor::from_vec(shape, data)
}

fn record_unary(
    input: &Tensor,
    value: Vec<f64>,
    shape: Vec<usize>,
    aux: Vec<f64>,
    make: impl FnOnce(usize) -> Op,
) -> Tensor {
    match &input.tracked {
        None => untracked(shape, value),
        Some(tr) => {
            let node = {
                let mut inner = tr.tape.lock().unwrap();
                inner.push(Node { op: make(tr.node), value: value.clone(), aux })
            };
            Tensor {
                shape,
                data: value,
                tracked: Some(Tracked { tape: Arc::clone(&tr.tape), node }),
            }
        }
    }
}

fn shared_tape(parts: &[&Tensor]) -> Option<Arc<Mutex<TapeInner>>> {
    let mut tape: Option<Arc<Mutex<TapeInner>>> = None;
    for p in parts {
        if let Some(tr) = &p.tracked {
            match &tape {
                None => tape = Some(Arc::clone(&tr.tape)),
                Some(t) => {
                    assert!(Arc::ptr_eq(t, &tr.tape), "operands recorded on different tapes")
                }
            }
        }
    }
    tape
}

fn record_multi(
    parts: &[&Tensor],
    value: Vec<f64>,
    shape: Vec<usize>,
    aux: Vec<f64>,
    make: impl FnOnce(Vec<usize>) -> Op,
) -> Tensor {
    match shared_tape(parts) {
        None => untracked(shape, value),
        Some(tape) => {
            let node = {
                let mut inner = tape.lock().unwrap();
                let ids = parts
                    .iter()
                    .map(|p| match &p.tracked {
                        Some(tr) => tr.node,
                        None => inner.intern_const(p),
                    })
                    .collect();
                inner.push(Node { op: make(ids), value: value.clone(), aux })
            };
            Tensor { shape, data: value, tracked: Some(Tracked { tape, node }) }
        }
    }
}

fn record_binary(
    a: &Tensor,
    b: &Tensor,
    value: Vec<f64>,
    shape: Vec<usize>,
    make: impl FnOnce(usize, usize) -> Op,
) -> Tensor {
    record_multi(&[a, b], value, shape, vec![], |ids| make(ids[0], ids[1]))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tensor {
    fn assert_same_shape(&self, other: &Tensor, op: &str) {
        assert_eq!(
            self.shape, other.shape,
            "{op}: shape mismatch: {:?} vs {:?}",
            self.shape, other.shape
        );
    }

    fn assert_matrix(&self, op: &str) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "{op}: expected a matrix, got shape {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.assert_same_shape(other, "add");
        let value = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        record_binary(self, other, value, self.shape.clone(), Op::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.assert_same_shape(other, "sub");
        let value = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        record_binary(self, other, value, self.shape.clone(), Op::Sub)
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.assert_same_shape(other, "mul");
        let value = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        record_binary(self, other, value, self.shape.clone(), Op::Mul)
    }

    pub fn neg(&self) -> Tensor {
        let value = self.data.iter().map(|a| -a).collect();
        record_unary(self, value, self.shape.clone(), vec![], Op::Neg)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let value = self.data.iter().map(|a| c * a).collect();
        record_unary(self, value, self.shape.clone(), vec![], |a| Op::Scale(a, c))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let value = self.data.iter().map(|a| a + c).collect();
        record_unary(self, value, self.shape.clone(), vec![], Op::AddScalar)
    }

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (m, k) = self.assert_matrix("matmul lhs");
        let (k2, n) = other.assert_matrix("matmul rhs");
        assert_eq!(
            k, k2,
            "matmul: shape mismatch: {:?} vs {:?}",
            self.shape, other.shape
        );
        let mut value = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            let out = &mut value[i * n..(i + 1) * n];
            for (p, &ap) in arow.iter().enumerate() {
                if ap != 0.0 {
                    let brow = &other.data[p * n..(p + 1) * n];
                    for j in 0..n {
                        out[j] += ap * brow[j];
                    }
                }
            }
        }
        record_binary(self, other, value, vec![m, n], |a, b| Op::Matmul { a, b, m, k, n })
    }

    /// Adds a length-`n` bias to every row of an `[m,n]` matrix.
    pub fn add_row(&self, bias: &Tensor) -> Tensor {
        let (m, n) = self.assert_matrix("add_row");
        assert_eq!(
            bias.numel(),
            n,
            "add_row: shape mismatch: {:?} vs {:?}",
            self.shape,
            bias.shape
        );
        let mut value = self.data.clone();
        for i in 0..m {
            for j in 0..n {
                value[i * n + j] += bias.data[j];
            }
        }
        record_binary(self, bias, value, vec![m, n], |a, b| Op::AddRow {
            a,
            bias: b,
            rows: m,
            cols: n,
        })
    }

    /// Scales row `i` of an `[m,n]` matrix by `col[i]`.
    pub fn mul_col(&self, col: &Tensor) -> Tensor {
        let (m, n) = self.assert_matrix("mul_col");
        assert_eq!(
            col.numel(),
            m,
            "mul_col: shape mismatch: {:?} vs {:?}",
            self.shape,
            col.shape
        );
        let mut value = self.data.clone();
        for i in 0..m {
            for j in 0..n {
                value[i * n + j] *= col.data[i];
            }
        }
        record_binary(self, col, value, vec![m, n], |a, b| Op::MulCol {
            a,
            col: b,
            rows: m,
            cols: n,
        })
    }

    /// Row sums of an `[m,n]` matrix as an `[m,1]` column.
    pub fn sum_rows(&self) -> Tensor {
        let (m, n) = self.assert_matrix("sum_rows");
        let value = (0..m).map(|i| self.data[i * n..(i + 1) * n].iter().sum()).collect();
        record_unary(self, value, vec![m, 1], vec![], |a| Op::SumRows { a, rows: m, cols: n })
    }

    /// Column `c` of an `[m,n]` matrix as an `[m,1]` column.
    pub fn take_col(&self, c: usize) -> Tensor {
        let (m, n) = self.assert_matrix("take_col");
        assert!(c < n, "take_col: column {c} out of {n}");
        let value = (0..m).map(|i| self.data[i * n + c]).collect();
        record_unary(self, value, vec![m, 1], vec![], |a| Op::TakeCol {
            a,
            col: c,
            rows: m,
            cols: n,
        })
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_cols: no parts");
        let m = parts[0].assert_matrix("concat_cols").0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (pm, pn) = p.assert_matrix("concat_cols");
                assert_eq!(pm, m, "concat_cols: row mismatch: {pm} vs {m}");
                pn
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut value = vec![0.0; m * total];
        let mut offset = 0;
        for (p, w) in parts.iter().zip(&widths) {
            for i in 0..m {
                value[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&p.data[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        record_multi(parts, value, vec![m, total], vec![], |ids| Op::ConcatCols {
            parts: ids,
            widths,
            rows: m,
        })
    }

    /// Stacks matrices with equal column counts along rows.
    pub fn concat_rows(parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_rows: no parts");
        let n = parts[0].assert_matrix("concat_rows").1;
        let heights: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (pm, pn) = p.assert_matrix("concat_rows");
                assert_eq!(pn, n, "concat_rows: column mismatch: {pn} vs {n}");
                pm
            })
            .collect();
        let total: usize = heights.iter().sum();
        let mut value = Vec::with_capacity(total * n);
        for p in parts {
            value.extend_from_slice(&p.data);
        }
        record_multi(parts, value, vec![total, n], vec![], |ids| Op::ConcatRows {
            parts: ids,
            heights,
            cols: n,
        })
    }

    /// Full reduction to a scalar.
    pub fn sum(&self) -> Tensor {
        let value = vec![self.data.iter().sum()];
        record_unary(self, value, vec![], vec![], Op::Sum)
    }

    pub fn mean(&self) -> Tensor {
        assert!(self.numel() > 0, "mean of an empty tensor");
        let value = vec![self.data.iter().sum::<f64>() / self.numel() as f64];
        record_unary(self, value, vec![], vec![], Op::Mean)
    }

    pub fn square(&self) -> Tensor {
        let value = self.data.iter().map(|a| a * a).collect();
        record_unary(self, value, self.shape.clone(), vec![], Op::Square)
    }

    pub fn sqrt(&self) -> Tensor {
        let value = self.data.iter().map(|a| a.sqrt()).collect();
        record_unary(self, value, self.shape.clone(), vec![], Op::Sqrt)
    }

    pub fn exp(&self) -> Tensor {
        let value = self.data.iter().map(|a| a.exp()).collect();
        record_unary(self, value, self.shape.clone(), vec![], Op::Exp)
    }

    pub fn log(&self) -> Tensor {
        let value = self.data.iter().map(|a| a.ln()).collect();
        record_unary(self, value, self.shape.clone(), vec![], Op::Log)
    }

    pub fn tanh(&self) -> Tensor {
        let value = self.data.iter().map(|a| a.tanh()).collect();
        record_unary(self, value, self.shape.clone(), vec![], Op::Tanh)
    }

    pub fn silu(&self) -> Tensor {
        let aux: Vec<f64> = self.data.iter().map(|&a| sigmoid(a)).collect();
        let value = self.data.iter().zip(&aux).map(|(a, s)| a * s).collect();
        record_unary(self, value, self.shape.clone(), aux, Op::Silu)
    }

    /// Euclidean norm as a scalar; differentiable away from zero.
    pub fn norm(&self) -> Tensor {
        self.square().sum().sqrt()
    }

    /// Row-wise log-softmax of an `[m,n]` matrix, shift-stabilized.
    pub fn log_softmax_rows(&self) -> Tensor {
        let (m, n) = self.assert_matrix("log_softmax_rows");
        let mut value = vec![0.0; m * n];
        for i in 0..m {
            let row = &self.data[i * n..(i + 1) * n];
            let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
            for j in 0..n {
                value[i * n + j] = row[j] - lse;
            }
        }
        record_unary(self, value, vec![m, n], vec![], |a| Op::LogSoftmaxRows {
            a,
            rows: m,
            cols: n,
        })
    }

    /// Picks `self[i, idx[i]]` for each row, yielding shape `[m]`.
    pub fn take_per_row(&self, idx: &[usize]) -> Tensor {
        let (m, n) = self.assert_matrix("take_per_row");
        assert_eq!(idx.len(), m, "take_per_row: {} indices for {} rows", idx.len(), m);
        let value = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                assert!(j < n, "take_per_row: column {j} out of {n}");
                self.data[i * n + j]
            })
            .collect();
        let idx = idx.to_vec();
        record_unary(self, value, vec![m], vec![], |a| Op::TakePerRow { a, idx, cols: n })
    }

    /// Gathers rows of an embedding table `[v,w]`, yielding `[idx.len(), w]`.
    /// Gradients scatter-add back into the table.
    pub fn embed_lookup(&self, idx: &[usize]) -> Tensor {
        let (v, w) = self.assert_matrix("embed_lookup");
        let mut value = Vec::with_capacity(idx.len() * w);
        for &row in idx {
            assert!(row < v, "embed_lookup: row {row} out of {v}");
            value.extend_from_slice(&self.data[row * w..(row + 1) * w]);
        }
        let m = idx.len();
        let idx = idx.to_vec();
        record_unary(self, value, vec![m, w], vec![], |table| Op::EmbedLookup {
            table,
            idx,
            width: w,
        })
    }
}
