//! Mini-batch training loop shared by the encoder and both decoders.
//!
//! Items are processed one graph at a time; gradients of a batch are summed
//! into a [`ParamGrads`] buffer in a fixed order and averaged before one
//! optimizer step, so runs are reproducible from the seed alone.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nn::Train;
use crate::tensor::{lr_schedule, Graph, Optimizer, OptimizerKind, ParamGrads, ParamStore, Var};
use crate::ModelRng;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Halve the rate after epoch 3.
    pub anneal: bool,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
}

impl TrainConfig {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.anneal {
            lr_schedule(epoch, self.learning_rate)
        } else {
            self.learning_rate
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Outcome of one item's forward pass.
pub struct Step {
    pub loss: Var,
    /// Divisor turning the loss into the logged per-unit value (frames for
    /// the encoder, 1 for classifiers).
    pub units: f64,
    pub correct: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalStats {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: Option<f64>,
    pub dev: Option<EvalStats>,
}

impl EpochLog {
    pub fn line(&self) -> String {
        let mut s = format!("epoch={} lr={:e} train_loss={:.6}", self.epoch, self.lr, self.train_loss);
        if let Some(a) = self.train_accuracy {
            s.push_str(&format!(" train_acc={a:.4}"));
        }
        if let Some(d) = &self.dev {
            s.push_str(&format!(" dev_loss={:.6}", d.loss));
            if let Some(a) = d.accuracy {
                s.push_str(&format!(" dev_acc={a:.4}"));
            }
        }
        s
    }
}

/// Length-bucketed batches: items sorted by length (stable, ties by index)
/// then cut into consecutive groups.
pub fn bucket_batches(lengths: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.sort_by_key(|&i| (lengths[i], i));
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Evaluate `step` over `items` in eval mode, averaging per-unit loss.
pub fn evaluate<F>(store: &ParamStore, items: usize, step: &F) -> Result<EvalStats>
where
    F: for<'a> Fn(&mut Graph<'a>, usize, &mut Train<'_>) -> Result<Step>,
{
    if items == 0 {
        return Err(Error::EmptyData("evaluation set".into()));
    }
    let (mut loss, mut correct, mut counted) = (0.0, 0usize, 0usize);
    for i in 0..items {
        let mut g = Graph::frozen(store);
        let s = step(&mut g, i, &mut None)?;
        loss += g.value(s.loss).item() / s.units;
        if let Some(c) = s.correct {
            counted += 1;
            correct += c as usize;
        }
    }
    Ok(EvalStats {
        loss: loss / items as f64,
        accuracy: (counted > 0).then(|| correct as f64 / counted as f64),
    })
}

/// Runs `cfg.epochs` epochs. `lengths[i]` drives bucketing of item `i`;
/// `dev` is evaluated after every epoch when given.
pub fn fit<F, D>(
    store: &mut ParamStore,
    cfg: &TrainConfig,
    lengths: &[usize],
    rng: &mut ModelRng,
    step: F,
    mut dev: D,
) -> Result<Vec<EpochLog>>
where
    F: for<'a> Fn(&mut Graph<'a>, usize, &mut Train<'_>) -> Result<Step>,
    D: FnMut(&ParamStore) -> Result<Option<EvalStats>>,
{
    cfg.validate()?;
    if lengths.is_empty() {
        return Err(Error::EmptyData("training set".into()));
    }
    let mut batches = bucket_batches(lengths, cfg.batch_size);
    let mut opt = Optimizer::new(cfg.optimizer, store);
    let mut acc = ParamGrads::zeros_like(store);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        batches.shuffle(rng);
        let (mut total, mut correct, mut counted) = (0.0, 0usize, 0usize);
        for batch in &batches {
            acc.zero();
            for &i in batch {
                let g_store: &ParamStore = store;
                let mut g = Graph::with_params(g_store);
                let mut train: Train<'_> = Some(&mut *rng);
                let s = step(&mut g, i, &mut train)?;
                total += g.value(s.loss).item() / s.units;
                if let Some(c) = s.correct {
                    counted += 1;
                    correct += c as usize;
                }
                let grads = g.backward(s.loss)?;
                acc.accumulate(&grads, 1.0 / batch.len() as f64);
            }
            opt.step(store, &acc, lr)?;
        }
        let dev = dev(store)?;
        logs.push(EpochLog {
            epoch,
            lr,
            train_loss: total / lengths.len() as f64,
            train_accuracy: (counted > 0).then(|| correct as f64 / counted as f64),
            dev,
        });
    }
    Ok(logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn buckets_group_similar_lengths() {
        let b = bucket_batches(&[5, 1, 9, 2, 5, 7], 2);
        assert_eq!(b, vec![vec![1, 3], vec![0, 4], vec![5, 2]]);
    }

    #[test]
    fn annealed_schedule_over_five_epochs() {
        let cfg = TrainConfig {
            epochs: 5,
            learning_rate: 2e-4,
            anneal: true,
            batch_size: 8,
            optimizer: OptimizerKind::Adam,
        };
        let lrs: Vec<f64> = (1..=5).map(|e| cfg.lr_at(e)).collect();
        assert_eq!(lrs, vec![2e-4, 2e-4, 2e-4, 1e-4, 1e-4]);
        let flat = TrainConfig { anneal: false, ..cfg };
        assert!((1..=5).all(|e| flat.lr_at(e) == 2e-4));
    }

    #[test]
    fn fit_minimizes_a_quadratic_deterministically() {
        let run = || {
            let mut store = ParamStore::new();
            let w = store.add("w", Tensor::row(vec![3.0, -2.0]));
            let targets = [vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]];
            let cfg = TrainConfig {
                epochs: 60,
                learning_rate: 0.1,
                anneal: false,
                batch_size: 2,
                optimizer: OptimizerKind::Adam,
            };
            let mut rng = crate::seeded_rng(5);
            let logs = fit(
                &mut store,
                &cfg,
                &[1, 2, 3],
                &mut rng,
                |g, i, _| {
                    let p = g.param(w);
                    let t = g.constant(Tensor::row(targets[i].clone()))?;
                    let d = g.sub(p, t)?;
                    let sq = g.mul(d, d)?;
                    Ok(Step { loss: g.sum(sq)?, units: 1.0, correct: None })
                },
                |_| Ok(None),
            )
            .unwrap();
            (store.value(w).clone(), logs)
        };
        let (w1, logs) = run();
        let (w2, _) = run();
        assert_eq!(w1, w2);
        assert_eq!(logs.len(), 60);
        assert!(logs[59].train_loss < 1e-2 * logs[0].train_loss);
    }
}
