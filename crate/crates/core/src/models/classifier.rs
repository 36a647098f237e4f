//! Classifier over noised points at every schedule time.

use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{CoreError, Result};
use crate::models::mlp::{time_embedding, Mlp};

/// MLP classifier over [z | time embedding] emitting log-probabilities,
/// one column per class. Rows always exponentiate to 1 because the head
/// passes through a log-softmax.
#[derive(Debug, Clone)]
pub struct NoisedClassifier {
    pub mlp: Mlp,
    dim: usize,
    num_classes: usize,
    time_embed_dim: usize,
}

impl NoisedClassifier {
    pub fn new<R: Rng>(
        dim: usize,
        num_classes: usize,
        hidden: &[usize],
        time_embed_dim: usize,
        rng: &mut R,
    ) -> NoisedClassifier {
        let mut widths = vec![dim + time_embed_dim];
        widths.extend_from_slice(hidden);
        widths.push(num_classes);
        NoisedClassifier { mlp: Mlp::new(&widths, rng), dim, num_classes, time_embed_dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn time_embed_dim(&self) -> usize {
        self.time_embed_dim
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.mlp.params.iter().collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.mlp.params.iter_mut().collect()
    }

    /// `[m, C]` log-probabilities under an explicit parameter list.
    pub fn log_probs_with_params(
        &self,
        params: &[&Tensor],
        z: &Tensor,
        ts: &[usize],
    ) -> Result<Tensor> {
        assert_eq!(
            (z.rows(), z.cols()),
            (ts.len(), self.dim),
            "classifier eval: z is {:?} but {} steps and data width {} expected",
            z.shape(),
            ts.len(),
            self.dim
        );
        let temb = time_embedding(ts, self.time_embed_dim);
        let input = Tensor::concat_cols(&[z, &temb]);
        Ok(self.mlp.forward(&input, params).log_softmax_rows())
    }

    /// `[m, C]` log-probabilities at per-row steps.
    pub fn log_probs(&self, z: &Tensor, ts: &[usize]) -> Result<Tensor> {
        self.log_probs_with_params(&self.params(), z, ts)
    }

    /// Scalar log p_t(c | z) for a single row; the classifier-feedback
    /// guides differentiate through this.
    pub fn class_logp(&self, z: &Tensor, t: usize, class: usize) -> Result<Tensor> {
        if class >= self.num_classes {
            return Err(CoreError::UnknownClass { class, num_classes: self.num_classes });
        }
        assert_eq!(z.rows(), 1, "class_logp expects a single row, got {:?}", z.shape());
        Ok(self.log_probs(z, &[t])?.take_col(class).sum())
    }
}
