//! Mini-batch training loop with seeded shuffling and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::Parameters;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs without improvement before stopping; `None` disables early stopping.
    pub patience: Option<usize>,
    pub min_delta: f64,
    pub restore_best: bool,
    pub seed: u64,
    /// Learning-rate reduction when the monitored loss stalls.
    pub lr_decay: Option<PlateauDecay>,
}

/// Multiplies the learning rate by `factor` after `patience` epochs without
/// improvement, down to `min_lr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauDecay {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 32,
            learning_rate: 1e-3,
            patience: Some(25),
            min_delta: 1e-6,
            restore_best: true,
            seed: 0,
            lr_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.patience == Some(0) {
            return Err(Error::invalid("patience must be positive"));
        }
        if let Some(d) = self.lr_decay {
            if !(d.factor > 0.0 && d.factor < 1.0) || d.patience == 0 || !(d.min_lr >= 0.0) {
                return Err(Error::invalid("lr decay needs factor in (0, 1), positive patience and min_lr >= 0"));
            }
        }
        Ok(())
    }
}

/// Scalar loss with named sub-terms (e.g. data and physics parts).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    pub components: Vec<f64>,
}

/// A differentiable loss over an indexed dataset.
pub trait Objective<M> {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mean loss over `batch`; the mean gradient is added into `grad`.
    fn loss_and_grad(&self, model: &M, batch: &[usize], grad: &mut [f64]) -> Result<LossTerms>;

    /// Held-out loss used for early stopping, when available.
    fn validation_loss(&self, _model: &M) -> Result<Option<f64>> {
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub components: Vec<f64>,
    pub val_loss: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub stopped_early: bool,
}

pub fn train_loop<M, O>(model: &mut M, objective: &O, config: &TrainConfig) -> Result<TrainReport>
where
    M: Parameters,
    O: Objective<M> + ?Sized,
{
    config.validate()?;
    if objective.is_empty() {
        return Err(Error::Empty("training dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(model.n_params(), config.learning_rate);
    let mut params = model.params();
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..objective.len()).collect();

    let mut history = Vec::with_capacity(config.epochs);
    let mut best = (0, f64::INFINITY, params.clone());
    let mut stale = 0;
    let mut since_decay = 0;
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut components: Vec<f64> = Vec::new();
        for batch in order.chunks(config.batch_size) {
            grad.fill(0.0);
            let terms = objective.loss_and_grad(model, batch, &mut grad)?;
            if !terms.total.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            let w = batch.len() as f64;
            total += w * terms.total;
            components.resize(terms.components.len(), 0.0);
            for (c, v) in components.iter_mut().zip(&terms.components) {
                *c += w * v;
            }
            adam.step(&mut params, &grad)?;
            model.set_params(&params)?;
        }
        let n = objective.len() as f64;
        let train_loss = total / n;
        components.iter_mut().for_each(|c| *c /= n);
        let val_loss = objective.validation_loss(model)?;
        if let Some(v) = val_loss {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
            }
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            components,
            val_loss,
            learning_rate: adam.lr,
        });

        let monitored = val_loss.unwrap_or(train_loss);
        if monitored < best.1 - config.min_delta {
            best = (epoch, monitored, params.clone());
            stale = 0;
            since_decay = 0;
        } else {
            stale += 1;
            since_decay += 1;
            if let Some(d) = config.lr_decay {
                if since_decay >= d.patience && adam.lr > d.min_lr {
                    adam.lr = (adam.lr * d.factor).max(d.min_lr);
                    since_decay = 0;
                }
            }
            if config.patience.is_some_and(|p| stale >= p) {
                stopped_early = true;
                break;
            }
        }
    }

    if config.restore_best && best.1.is_finite() {
        model.set_params(&best.2)?;
    }
    Ok(TrainReport {
        history,
        best_epoch: best.0,
        best_loss: best.1,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    /// Linear regression `y = a x + b` on fixed points.
    struct Line {
        params: Vec<f64>,
    }

    impl Parameters for Line {
        fn n_params(&self) -> usize {
            2
        }
        fn write_params(&self, out: &mut Vec<f64>) {
            out.extend_from_slice(&self.params);
        }
        fn read_params(&mut self, src: &mut &[f64]) {
            self.params.copy_from_slice(&src[..2]);
            *src = &src[2..];
        }
    }

    struct LineData(Vec<(f64, f64)>);

    impl Objective<Line> for LineData {
        fn len(&self) -> usize {
            self.0.len()
        }
        fn loss_and_grad(&self, m: &Line, batch: &[usize], grad: &mut [f64]) -> Result<LossTerms> {
            let n = batch.len() as f64;
            let mut loss = 0.0;
            for &i in batch {
                let (x, y) = self.0[i];
                let r = m.params[0] * x + m.params[1] - y;
                loss += r * r / n;
                grad[0] += 2.0 * r * x / n;
                grad[1] += 2.0 * r / n;
            }
            Ok(LossTerms { total: loss, components: vec![loss] })
        }
    }

    fn line_data() -> LineData {
        LineData((0..50).map(|i| (i as f64 / 50.0, 3.0 * i as f64 / 50.0 - 1.0)).collect())
    }

    #[test]
    fn records_one_entry_per_epoch_and_is_deterministic() {
        let cfg = TrainConfig { epochs: 30, patience: None, seed: 4, ..Default::default() };
        let run = || {
            let mut m = Line { params: vec![0.0, 0.0] };
            train_loop(&mut m, &line_data(), &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.history.len(), 30);
        assert_eq!(a, b);
        assert!(a.history.last().unwrap().train_loss < a.history[0].train_loss);
    }

    /// Loss falls for 10 epochs then stays flat, independent of the model.
    struct Plateau {
        calls: Cell<usize>,
    }

    impl Objective<Line> for Plateau {
        fn len(&self) -> usize {
            4
        }
        fn loss_and_grad(&self, _: &Line, _: &[usize], _: &mut [f64]) -> Result<LossTerms> {
            let epoch = self.calls.get();
            self.calls.set(epoch + 1);
            let total = if epoch < 10 { 10.0 - epoch as f64 } else { 1.0 };
            Ok(LossTerms { total, components: vec![] })
        }
    }

    #[test]
    fn stops_after_patience_epochs_without_improvement() {
        let cfg = TrainConfig { epochs: 100, batch_size: 4, patience: Some(5), ..Default::default() };
        let mut m = Line { params: vec![0.0, 0.0] };
        let report = train_loop(&mut m, &Plateau { calls: Cell::new(0) }, &cfg).unwrap();
        assert!(report.stopped_early);
        assert!(report.history.len() <= 15, "ran {} epochs", report.history.len());
        assert_eq!(report.best_epoch, 9);
    }

    #[test]
    fn plateau_decay_lowers_learning_rate() {
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 4,
            patience: None,
            lr_decay: Some(PlateauDecay { factor: 0.5, patience: 3, min_lr: 2e-4 }),
            ..Default::default()
        };
        let mut m = Line { params: vec![0.0, 0.0] };
        let report = train_loop(&mut m, &Plateau { calls: Cell::new(0) }, &cfg).unwrap();
        let lrs: Vec<f64> = report.history.iter().map(|e| e.learning_rate).collect();
        assert_eq!(lrs[12], 1e-3);
        assert_eq!(lrs[13], 5e-4);
        assert_eq!(*lrs.last().unwrap(), 2e-4);
    }

    struct Empty;
    impl Objective<Line> for Empty {
        fn len(&self) -> usize {
            0
        }
        fn loss_and_grad(&self, _: &Line, _: &[usize], _: &mut [f64]) -> Result<LossTerms> {
            unreachable!()
        }
    }

    struct Exploding;
    impl Objective<Line> for Exploding {
        fn len(&self) -> usize {
            3
        }
        fn loss_and_grad(&self, _: &Line, _: &[usize], _: &mut [f64]) -> Result<LossTerms> {
            Ok(LossTerms { total: f64::INFINITY, components: vec![] })
        }
    }

    #[test]
    fn rejects_empty_data_and_non_finite_loss() {
        let mut m = Line { params: vec![0.0, 0.0] };
        let cfg = TrainConfig { epochs: 3, ..Default::default() };
        assert!(matches!(train_loop(&mut m, &Empty, &cfg), Err(Error::Empty(_))));
        assert!(matches!(train_loop(&mut m, &Exploding, &cfg), Err(Error::NonFinite(_))));
    }
}
