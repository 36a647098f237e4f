//! Fully-connected backbone and the sinusoidal time embedding.

use rand::Rng;

use crate::autodiff::Tensor;

/// Feed-forward network with silu hidden layers and a linear head.
/// Parameters live in `params` as [w0, b0, w1, b1, ...]; forward passes
/// take the parameter slice explicitly so training can substitute
/// tape-watched copies without touching the stored weights.
#[derive(Debug, Clone)]
pub struct Mlp {
    widths: Vec<usize>,
    pub params: Vec<Tensor>,
}

impl Mlp {
    /// He-style initialization: weights N(0, 2/fan_in), zero biases.
    /// `widths` runs input width, hidden widths, output width.
    pub fn new<R: Rng>(widths: &[usize], rng: &mut R) -> Mlp {
        assert!(widths.len() >= 2, "mlp needs at least input and output widths, got {widths:?}");
        assert!(widths.iter().all(|&w| w > 0), "zero layer width in {widths:?}");
        let mut params = Vec::with_capacity(2 * (widths.len() - 1));
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            params.push(Tensor::randn(vec![fan_in, fan_out], rng).scale(std));
            params.push(Tensor::zeros(vec![fan_out]));
        }
        Mlp { widths: widths.to_vec(), params }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Forward pass under an explicit parameter slice laid out like
    /// `self.params`. Hidden layers are silu, the head is linear.
    pub fn forward(&self, x: &Tensor, params: &[&Tensor]) -> Tensor {
        assert_eq!(
            params.len(),
            self.params.len(),
            "mlp forward: {} parameter tensors expected, got {}",
            self.params.len(),
            params.len()
        );
        let layers = params.len() / 2;
        let mut h = x.clone();
        for l in 0..layers {
            h = h.matmul(params[2 * l]).add_row(params[2 * l + 1]);
            if l + 1 < layers {
                h = h.silu();
            }
        }
        h
    }
}

/// Sinusoidal embedding of integer schedule steps, shaped `[m, dim]` with
/// `dim` even: geometrically spaced frequencies from 1 down to 1e-4, sines
/// in the first half of each row, cosines in the second. Constant in the
/// autodiff sense: steps are data, not differentiable inputs.
pub fn time_embedding(ts: &[usize], dim: usize) -> Tensor {
    assert!(dim >= 2 && dim % 2 == 0, "time embedding width must be even and >= 2, got {dim}");
    let half = dim / 2;
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        for j in 0..half {
            let freq = if half == 1 {
                1.0
            } else {
                (10_000.0f64).powf(-(j as f64) / (half as f64 - 1.0))
            };
            data.push((t as f64 * freq).sin());
        }
        for j in 0..half {
            let freq = if half == 1 {
                1.0
            } else {
                (10_000.0f64).powf(-(j as f64) / (half as f64 - 1.0))
            };
            data.push((t as f64 * freq).cos());
        }
    }
    Tensor::from_vec(vec![ts.len(), dim], data)
}
