//! Noise predictor with class conditioning through an embedding table.

use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{CoreError, Result};
use crate::models::mlp::{time_embedding, Mlp};

/// MLP noise predictor over [z | time embedding | class embedding].
/// The embedding table has one row per class plus a leading null row;
/// evaluating with no class uses the null row, which IS the unconditional
/// model.
#[derive(Debug, Clone)]
pub struct EpsModel {
    pub mlp: Mlp,
    /// `[(num_classes + 1), class_embed_dim]`, row 0 is the null class.
    pub class_embed: Tensor,
    dim: usize,
    num_classes: usize,
    time_embed_dim: usize,
    class_embed_dim: usize,
}

impl EpsModel {
    pub fn new<R: Rng>(
        dim: usize,
        num_classes: usize,
        hidden: &[usize],
        time_embed_dim: usize,
        class_embed_dim: usize,
        rng: &mut R,
    ) -> EpsModel {
        let mut widths = vec![dim + time_embed_dim + class_embed_dim];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        let mlp = Mlp::new(&widths, rng);
        let class_embed =
            Tensor::randn(vec![num_classes + 1, class_embed_dim], rng).scale(0.1);
        EpsModel { mlp, class_embed, dim, num_classes, time_embed_dim, class_embed_dim }
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

    pub fn class_embed_dim(&self) -> usize {
        self.class_embed_dim
    }

    /// Canonical parameter order for optimizers and checkpoints: MLP
    /// tensors first, embedding table last.
    pub fn params(&self) -> Vec<&Tensor> {
        self.mlp.params.iter().chain(std::iter::once(&self.class_embed)).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.mlp.params.iter_mut().chain(std::iter::once(&mut self.class_embed)).collect()
    }

    fn check_classes(&self, classes: &[Option<usize>]) -> Result<()> {
        for c in classes.iter().flatten() {
            if *c >= self.num_classes {
                return Err(CoreError::UnknownClass { class: *c, num_classes: self.num_classes });
            }
        }
        Ok(())
    }

    /// Forward pass under an explicit parameter list in `params()` order.
    /// Training calls this with tape-watched copies; everyone else goes
    /// through `eval` / `eval_one`.
    pub fn eval_with_params(
        &self,
        params: &[&Tensor],
        z: &Tensor,
        ts: &[usize],
        classes: &[Option<usize>],
    ) -> Result<Tensor> {
        let rows = z.rows();
        assert_eq!(
            (rows, z.cols()),
            (ts.len(), self.dim),
            "eps eval: z is {:?} but {} steps and data width {} expected",
            z.shape(),
            ts.len(),
            self.dim
        );
        assert_eq!(ts.len(), classes.len(), "eps eval: {} steps vs {} classes", ts.len(), classes.len());
        self.check_classes(classes)?;
        let (mlp_params, embed) = params.split_at(self.mlp.num_params());
        let temb = time_embedding(ts, self.time_embed_dim);
        let idx: Vec<usize> = classes.iter().map(|c| c.map_or(0, |c| c + 1)).collect();
        let cemb = embed[0].embed_lookup(&idx);
        let input = Tensor::concat_cols(&[z, &temb, &cemb]);
        Ok(self.mlp.forward(&input, mlp_params))
    }

    /// Batched prediction with per-row steps and conditioning.
    pub fn eval(&self, z: &Tensor, ts: &[usize], classes: &[Option<usize>]) -> Result<Tensor> {
        self.eval_with_params(&self.params(), z, ts, classes)
    }

    /// Single-row convenience used by samplers and guides.
    pub fn eval_one(&self, z: &Tensor, t: usize, class: Option<usize>) -> Result<Tensor> {
        let rows = z.rows();
        self.eval(z, &vec![t; rows], &vec![class; rows])
    }
}
