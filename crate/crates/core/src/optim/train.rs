use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{one_hot, predicted_class, sample_loss, LossInputs, LossKind};
use super::rmsprop::{OptimizerConfig, RmsProp};
use crate::data::batch_indices;
use crate::error::{Error, Result};
use crate::graph::{Model, ParameterSet};
use crate::tensor::Tensor;

/// Samples handled by one worker before partial gradients are summed. The
/// partition depends only on the batch, so the reduction order, and with it
/// every bit of the result, is independent of the thread count.
const GRADIENT_CHUNK: usize = 4;

/// Inputs, labels and optional teacher logits of a training or evaluation
/// set. `inputs` is batched: (N, ...sample shape).
#[derive(Debug, Clone, Copy)]
pub struct Samples<'a> {
    pub inputs: &'a Tensor,
    pub labels: &'a [usize],
    pub teacher_logits: Option<&'a Tensor>,
}

impl<'a> Samples<'a> {
    pub fn new(inputs: &'a Tensor, labels: &'a [usize]) -> Self {
        Samples {
            inputs,
            labels,
            teacher_logits: None,
        }
    }

    pub fn with_teacher(mut self, logits: &'a Tensor) -> Self {
        self.teacher_logits = Some(logits);
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.labels.len();
        let teacher_ok = self.teacher_logits.is_none_or(|t| t.batch_len() == n);
        if self.inputs.batch_len() != n || !teacher_ok {
            return Err(Error::ShapeMismatch {
                expected: vec![n],
                actual: vec![
                    self.inputs.batch_len(),
                    self.teacher_logits.map_or(n, Tensor::batch_len),
                ],
            });
        }
        Ok(())
    }

    fn loss_at(&self, kind: LossKind, index: usize, logits: &[f64]) -> Result<super::LossValue> {
        let l = one_hot(self.labels[index], logits.len());
        let p = self.teacher_logits.map(|t| t.sample(index));
        sample_loss(kind, &LossInputs { q: logits, p, l: &l })
    }
}

/// Early-stopping rule: at most `max_epochs`, and stop once the monitored
/// loss (validation if available, else training) has failed to improve by at
/// least `min_delta` for `patience` consecutive epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopRule {
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    /// Roll back to the parameters of the best monitored epoch when done.
    pub restore_best: bool,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            max_epochs: 100,
            patience: 10,
            min_delta: 1e-4,
            restore_best: false,
        }
    }
}

impl StopRule {
    pub fn epochs(max_epochs: usize) -> Self {
        StopRule {
            max_epochs,
            ..StopRule::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Percent.
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub diverged: bool,
    pub stopped_early: bool,
    /// Epoch with the lowest monitored loss (0 if none ran).
    pub best_epoch: usize,
}

impl TrainReport {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,train_acc,val_loss,val_acc";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch,
                r.train_loss,
                r.train_acc,
                opt(r.val_loss),
                opt(r.val_acc)
            );
        }
        out
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Everything a training run needs besides the model and the data.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub loss: LossKind,
    pub optimizer: OptimizerConfig,
    pub stop: StopRule,
    /// Per-layer flags; `None` trains every layer.
    pub trainable: Option<Vec<bool>>,
    /// Seeds the shuffling stream.
    pub seed: u64,
}

impl TrainOptions {
    pub fn new(loss: LossKind, optimizer: OptimizerConfig, stop: StopRule, seed: u64) -> Self {
        TrainOptions {
            loss,
            optimizer,
            stop,
            trainable: None,
            seed,
        }
    }
}

/// Mean loss and percent accuracy of `model` over `samples`.
pub fn evaluate(model: &Model, samples: &Samples<'_>, loss: LossKind) -> Result<(f64, f64)> {
    samples.check()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per_sample = (0..samples.len())
        .into_par_iter()
        .map(|i| {
            let logits = model.forward_sample(samples.inputs.sample(i))?;
            let v = samples.loss_at(loss, i, &logits)?;
            Ok((v.value, predicted_class(&logits) == samples.labels[i]))
        })
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = per_sample.iter().map(|(l, _)| l).sum();
    let correct = per_sample.iter().filter(|(_, c)| *c).count();
    let n = samples.len() as f64;
    Ok((total / n, 100.0 * correct as f64 / n))
}

/// Percent of samples whose highest logit is the true label.
pub fn accuracy(model: &Model, inputs: &Tensor, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let logits = model.forward(inputs)?;
    let correct = (0..labels.len())
        .filter(|&i| predicted_class(logits.sample(i)) == labels[i])
        .count();
    Ok(100.0 * correct as f64 / labels.len() as f64)
}

struct BatchResult {
    grads: ParameterSet,
    loss_sum: f64,
    correct: usize,
}

/// Batch-mean gradient of the loss with respect to the flagged layers.
pub fn batch_gradients(
    model: &Model,
    samples: &Samples<'_>,
    indices: &[usize],
    loss: LossKind,
    trainable: &[bool],
) -> Result<(ParameterSet, f64, usize)> {
    let partials = indices
        .par_chunks(GRADIENT_CHUNK)
        .map(|chunk| {
            let mut grads = model.params().zeros_like();
            let mut loss_sum = 0.0;
            let mut correct = 0;
            for &i in chunk {
                let trace = model.forward_trace(samples.inputs.sample(i))?;
                let logits = trace[trace.len() - 1].data();
                if !logits.iter().all(|v| v.is_finite()) {
                    return Err(Error::DivergentLoss("non-finite logits".into()));
                }
                let v = samples.loss_at(loss, i, logits)?;
                loss_sum += v.value;
                correct += usize::from(predicted_class(logits) == samples.labels[i]);
                model.backward_sample(&trace, &v.grad, trainable, &mut grads, false)?;
            }
            Ok(BatchResult {
                grads,
                loss_sum,
                correct,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut iter = partials.into_iter();
    let first = iter.next().ok_or(Error::EmptyDataset)?;
    let (mut grads, mut loss_sum, mut correct) = (first.grads, first.loss_sum, first.correct);
    for p in iter {
        grads.add_assign(&p.grads);
        loss_sum += p.loss_sum;
        correct += p.correct;
    }
    grads.scale(1.0 / indices.len() as f64);
    Ok((grads, loss_sum, correct))
}

/// Mini-batch RMSProp training.
///
/// Divergence (non-finite logits, a zero probability on the true class or a
/// non-finite gradient) ends the run with `diverged` set rather than an
/// error; the parameters are left as they were before the failing batch.
pub fn train(
    model: &mut Model,
    train_set: &Samples<'_>,
    val_set: Option<&Samples<'_>>,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    opts.optimizer.validate()?;
    train_set.check()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(v) = val_set {
        v.check()?;
    }
    let n_layers = model.spec().layers.len();
    let trainable = opts.trainable.clone().unwrap_or_else(|| vec![true; n_layers]);
    if trainable.len() != n_layers {
        return Err(Error::Config(format!(
            "{} trainable flags for {n_layers} layers",
            trainable.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut optimizer = RmsProp::new(opts.optimizer);
    let mut report = TrainReport::default();
    let mut best = f64::INFINITY;
    let mut best_params: Option<ParameterSet> = None;
    let mut stale = 0;

    for epoch in 1..=opts.stop.max_epochs {
        let batches = batch_indices(train_set.len(), opts.optimizer.batch_size, true, &mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let mut seen = 0;
        for batch in &batches {
            let step = batch_gradients(model, train_set, batch, opts.loss, &trainable).and_then(
                |(grads, l, c)| {
                    optimizer.step(model.params_mut(), &grads, &trainable)?;
                    Ok((l, c))
                },
            );
            match step {
                Ok((l, c)) => {
                    loss_sum += l;
                    correct += c;
                    seen += batch.len();
                }
                Err(Error::DivergentLoss(_) | Error::NonFiniteGradient { .. }) => {
                    log::warn!("training diverged in epoch {epoch}");
                    report.diverged = true;
                    report.epochs.push(EpochRecord {
                        epoch,
                        train_loss: f64::INFINITY,
                        train_acc: 100.0 * correct as f64 / seen.max(1) as f64,
                        val_loss: None,
                        val_acc: None,
                    });
                    return Ok(report);
                }
                Err(e) => return Err(e),
            }
        }
        let train_loss = loss_sum / seen as f64;
        let (val_loss, val_acc) = match val_set {
            Some(v) => match evaluate(model, v, opts.loss) {
                Ok((l, a)) => (Some(l), Some(a)),
                Err(Error::DivergentLoss(_)) => (Some(f64::INFINITY), None),
                Err(e) => return Err(e),
            },
            None => (None, None),
        };
        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            train_acc: 100.0 * correct as f64 / seen as f64,
            val_loss,
            val_acc,
        });
        let monitored = val_loss.unwrap_or(train_loss);
        if !monitored.is_finite() {
            report.diverged = true;
            return Ok(report);
        }
        log::debug!("epoch {epoch}: train {train_loss:.5} val {val_loss:?} acc {val_acc:?}");
        if monitored < best - opts.stop.min_delta {
            best = monitored;
            report.best_epoch = epoch;
            stale = 0;
            if opts.stop.restore_best {
                best_params = Some(model.params().clone());
            }
        } else {
            stale += 1;
            if stale >= opts.stop.patience {
                report.stopped_early = true;
                break;
            }
        }
    }
    if let Some(p) = best_params {
        *model.params_mut() = p;
    }
    Ok(report)
}
