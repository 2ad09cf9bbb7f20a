//! Adagrad training with length-bucketed batches and global-norm clipping.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::example::EncodedExample;
use crate::model::Summarizer;
use crate::params::{ModelParams, ParamGrads};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub init_acc: f64,
    /// Coverage loss weight.
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Stop once an epoch's mean loss falls below this.
    pub target_loss: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.15,
            init_acc: 0.1,
            lambda: 1.0,
            batch_size: 8,
            epochs: 500,
            seed: 1,
            clip_norm: Some(2.0),
            target_loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.init_acc > 0.0) {
            return Err(Error::Contract("lr and init_acc must be positive".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Contract("coverage weight must be nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Contract("batch size must be at least 1".into()));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::Contract("clip norm must be positive".into()));
        }
        Ok(())
    }
}

/// Per-element squared-gradient accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Adagrad {
    pub acc: BTreeMap<String, Vec<f64>>,
}

impl Adagrad {
    pub fn new(params: &ModelParams, init_acc: f64) -> Self {
        Adagrad {
            acc: params
                .iter()
                .map(|(k, t)| (k.clone(), vec![init_acc; t.numel()]))
                .collect(),
        }
    }

    /// `acc += g²; θ -= lr·g/√acc`. Checks every gradient before touching
    /// anything, so a rejected step leaves params and state unchanged.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ParamGrads, lr: f64) -> Result<()> {
        for (name, g) in grads {
            if let Some(index) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: name.clone(),
                    index,
                });
            }
            let acc = self.acc.get(name).ok_or_else(|| Error::MissingParam(name.clone()))?;
            if acc.len() != g.len() || params.get(name)?.numel() != g.len() {
                return Err(Error::dim("adagrad", &[acc.len()], &[g.len()]));
            }
        }
        for (name, g) in grads {
            let acc = self.acc.get_mut(name).expect("checked above");
            let theta = params.get_mut(name)?.data_mut();
            for ((t, a), &gi) in theta.iter_mut().zip(acc.iter_mut()).zip(g) {
                *a += gi * gi;
                *t -= lr * gi / a.sqrt();
            }
        }
        Ok(())
    }
}

pub fn global_norm(grads: &ParamGrads) -> f64 {
    grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads.values_mut() {
            for x in g.iter_mut() {
                *x *= k;
            }
        }
    }
    norm
}

/// Example indices grouped into batches of similar source length.
pub fn length_buckets(examples: &[EncodedExample], batch_size: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    idx.sort_by_key(|&i| (examples[i].len(), i));
    idx.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: u64,
    pub nll: f64,
    pub coverage: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochMetrics>,
    pub steps: u64,
    pub reached_target: bool,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub optimizer: Adagrad,
    pub step: u64,
}

impl Trainer {
    pub fn new(model: &Summarizer, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = Adagrad::new(&model.params, config.init_acc);
        Ok(Trainer {
            config,
            optimizer,
            step: 0,
        })
    }

    /// Mean loss and mean gradient over a batch.
    fn batch(&self, model: &Summarizer, examples: &[EncodedExample], batch: &[usize]) -> Result<(f64, f64, f64, ParamGrads)> {
        let k = 1.0 / batch.len() as f64;
        let mut total: Option<ParamGrads> = None;
        let (mut loss, mut nll, mut cov) = (0.0, 0.0, 0.0);
        for &i in batch {
            let (v, g) = model.loss_and_grads(&examples[i], self.config.lambda)?;
            loss += v.total * k;
            nll += v.nll * k;
            cov += v.coverage * k;
            match &mut total {
                None => {
                    let mut g = g;
                    g.values_mut().flatten().for_each(|x| *x *= k);
                    total = Some(g);
                }
                Some(acc) => {
                    for (name, gi) in g {
                        let a = acc.get_mut(&name).expect("same parameter set");
                        for (x, y) in a.iter_mut().zip(gi) {
                            *x += y * k;
                        }
                    }
                }
            }
        }
        Ok((loss, nll, cov, total.expect("batch is nonempty")))
    }

    /// Runs up to `config.epochs` epochs. `on_epoch` sees the model after
    /// every epoch and may persist it. On a non-finite loss or gradient the
    /// model is restored to the last epoch boundary and the error returned.
    pub fn train<F>(&mut self, model: &mut Summarizer, examples: &[EncodedExample], mut on_epoch: F) -> Result<TrainOutcome>
    where
        F: FnMut(&EpochMetrics, &Summarizer, &Trainer) -> Result<()>,
    {
        if examples.is_empty() {
            return Err(Error::Contract("training corpus is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut batches = length_buckets(examples, self.config.batch_size);
        let mut history = Vec::new();
        let mut reached = false;
        for epoch in 1..=self.config.epochs {
            let good_params = model.params.clone();
            let good_opt = self.optimizer.clone();
            let good_step = self.step;
            batches.shuffle(&mut rng);
            let (mut loss, mut nll, mut cov) = (0.0, 0.0, 0.0);
            let mut failure = None;
            for batch in &batches {
                let w = batch.len() as f64 / examples.len() as f64;
                let (l, n, c, mut grads) = self.batch(model, examples, batch)?;
                if !l.is_finite() {
                    failure = Some(Error::NonFiniteLoss {
                        epoch,
                        step: self.step,
                    });
                    break;
                }
                if let Some(max) = self.config.clip_norm {
                    clip_global_norm(&mut grads, max);
                }
                if let Err(e) = self.optimizer.step(&mut model.params, &grads, self.config.lr) {
                    failure = Some(e);
                    break;
                }
                self.step += 1;
                loss += l * w;
                nll += n * w;
                cov += c * w;
            }
            if let Some(e) = failure {
                log::error!("halting at epoch {epoch}: {e}; restoring last good parameters");
                model.params = good_params;
                self.optimizer = good_opt;
                self.step = good_step;
                return Err(e);
            }
            let m = EpochMetrics {
                epoch,
                step: self.step,
                nll,
                coverage: cov,
                loss,
            };
            log::info!(
                "epoch {} step {} nll {:.6} coverage {:.6} loss {:.6}",
                m.epoch,
                m.step,
                m.nll,
                m.coverage,
                m.loss
            );
            history.push(m);
            on_epoch(&m, model, self)?;
            if matches!(self.config.target_loss, Some(t) if loss < t) {
                reached = true;
                break;
            }
        }
        Ok(TrainOutcome {
            epochs: history,
            steps: self.step,
            reached_target: reached,
        })
    }
}
