use std::fmt;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_distr::StandardNormal;

use super::tape::TapeInner;

/// Dense row-major f64 tensor. `data.len() == shape.iter().product()`
/// always; a scalar has the empty shape. A tensor produced by an op on a
/// tracked input carries a handle to the node recorded for it.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) tracked: Option<Tracked>,
}

#[derive(Clone)]
pub(crate) struct Tracked {
    pub tape: Arc<Mutex<TapeInner>>,
    pub node: usize,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor shape {:?} wants {} elements, got {}",
            shape,
            numel,
            data.len()
        );
        Tensor { shape, data, tracked: None }
    }

    /// Scalar with the empty shape.
    pub fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(vec![], vec![v])
    }

    /// Single-row matrix `[1, n]`; the canonical layout for one latent point.
    pub fn row(data: Vec<f64>) -> Tensor {
        let n = data.len();
        Tensor::from_vec(vec![1, n], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let numel = shape.iter().product();
        Tensor::from_vec(shape, vec![0.0; numel])
    }

    pub fn full(shape: Vec<usize>, v: f64) -> Tensor {
        let numel = shape.iter().product();
        Tensor::from_vec(shape, vec![v; numel])
    }

    /// Standard normal entries drawn in row-major order.
    pub fn randn<R: Rng>(shape: Vec<usize>, rng: &mut R) -> Tensor {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.sample(StandardNormal)).collect();
        Tensor::from_vec(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Rows of a matrix; a vector counts as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Columns of a matrix; a vector is one row wide.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn is_tracked(&self) -> bool {
        self.tracked.is_some()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same values, detached from any tape. Gradients do not flow past this.
    pub fn stop_gradient(&self) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.clone(), tracked: None }
    }

    /// Mutable access to raw storage; only meaningful off-tape.
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        assert!(self.tracked.is_none(), "cannot mutate a tracked tensor in place");
        &mut self.data
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let head: Vec<f64> = self.data.iter().take(8).copied().collect();
        let ellipsis = if self.data.len() > 8 { ", .." } else { "" };
        write!(
            f,
            "Tensor{{shape: {:?}, data: {:?}{}, tracked: {}}}",
            self.shape,
            head,
            ellipsis,
            self.tracked.is_some()
        )
    }
}
