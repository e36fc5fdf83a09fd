//! Small differentiable-model kernel: dense and LSTM layers with exact
//! reverse-mode gradients, Adam, and a seeded training loop.

pub mod adam;
pub mod checkpoint;
pub mod dense;
pub mod gradcheck;
pub mod init;
pub mod lstm;
pub mod tensor;
pub mod train;

pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use dense::{Activation, Dense, Mlp};
pub use lstm::Lstm;
pub use tensor::Tensor;
pub use train::{train_loop, EpochRecord, LossTerms, Objective, PlateauDecay, TrainConfig, TrainReport};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Parameter and input gradients from one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

/// Flat view of a model's trainable parameters. Gradients use the same layout.
pub trait Parameters {
    fn n_params(&self) -> usize;

    /// Appends parameters in canonical order.
    fn write_params(&self, out: &mut Vec<f64>);

    /// Consumes parameters from the front of `src` in canonical order.
    fn read_params(&mut self, src: &mut &[f64]);

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.write_params(&mut out);
        out
    }

    fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::ShapeMismatch {
                layer: "parameter vector".into(),
                expected: self.n_params(),
                found: flat.len(),
            });
        }
        if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {i}")));
        }
        let mut src = flat;
        self.read_params(&mut src);
        Ok(())
    }
}

/// Evaluates `f` for each item in parallel, each writing into its own
/// gradient buffer, then adds the buffers into `grad` in item order. The
/// fixed reduction order keeps results independent of thread scheduling.
pub fn ordered_grad_sum<T, R, F>(items: &[T], grad: &mut [f64], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T, &mut [f64]) -> Result<R> + Sync,
{
    let n = grad.len();
    let parts: Vec<(Vec<f64>, R)> = items
        .par_iter()
        .map(|item| {
            let mut g = vec![0.0; n];
            let r = f(item, &mut g)?;
            Ok((g, r))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(parts.len());
    for (g, r) in parts {
        tensor::axpy(1.0, &g, grad);
        out.push(r);
    }
    Ok(out)
}
