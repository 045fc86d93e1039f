use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{Dropout, Example, LossMode};
use super::optim::{Adam, AdamConfig, LrSchedule};
use super::Model;
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Evaluate every this many steps (0 disables periodic evaluation).
    pub eval_every: usize,
    /// Restrict the training softmax to each position's allowed subset.
    pub masked_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            steps: 3000,
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            seed: 0,
            eval_every: 500,
            masked_loss: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainExample {
    pub input: Vec<u16>,
    pub target: Vec<u16>,
    pub ranges: Vec<Range<u32>>,
    pub loss_from: usize,
}

impl TrainExample {
    pub fn as_example(&self) -> Example<'_> {
        Example {
            input: &self.input,
            target: &self.target,
            ranges: &self.ranges,
            loss_from: self.loss_from,
        }
    }

    fn loss_tokens(&self) -> usize {
        self.target.len().saturating_sub(self.loss_from)
    }
}

/// Development metrics returned by the evaluation hook. `score` selects the
/// best checkpoint (lower is better).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub score: f64,
    pub dev_nll_coarse: Option<f64>,
    pub dev_fad_i: Option<f64>,
    pub dev_fad_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: usize,
    pub train_nll: f64,
    pub dev_nll_coarse: Option<f64>,
    pub dev_fad_i: Option<f64>,
    pub dev_fad_s: Option<f64>,
}

pub struct TrainOutcome {
    /// Mean training NLL of every step.
    pub losses: Vec<f64>,
    pub log: Vec<TrainLogRecord>,
    pub best_step: Option<usize>,
    pub best_params: Option<Vec<f32>>,
    pub optimizer: Adam,
}

/// Adam on the mean NLL of seeded mini-batches. `eval(model, step)` runs
/// every `eval_every` steps and after the last step.
pub fn train(
    model: &mut Model,
    data: &[TrainExample],
    cfg: &TrainConfig,
    mut eval: impl FnMut(&Model, usize) -> Result<Option<EvalMetrics>>,
) -> Result<TrainOutcome> {
    ensure!(!data.is_empty(), Precondition, "training data is empty");
    ensure!(cfg.batch_size > 0, Config, "batch_size must be positive");
    for ex in data {
        model.check_lengths(ex.input.len(), ex.target.len())?;
        ensure!(ex.ranges.len() == ex.target.len(), Shape, "ranges and target lengths differ");
    }
    let mode = if cfg.masked_loss { LossMode::Masked } else { LossMode::Full };
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut opt = Adam::new(model.params.len(), cfg.adam);
    let mut grad = vec![0.0f32; model.params.len()];
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut log = Vec::new();
    let (mut best_step, mut best_score, mut best_params) = (None, f64::INFINITY, None);
    let mut since_eval = Vec::new();
    let p_drop = model.net.cfg.dropout;

    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order = (0..data.len()).collect();
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let tokens: usize = batch.iter().map(|&i| data[i].loss_tokens()).sum();
        ensure!(tokens > 0, Precondition, "batch without loss positions");
        let weight = 1.0 / tokens as f32;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for &i in &batch {
            let ex = data[i].as_example();
            let mut drop = Dropout {
                p: p_drop,
                rng: &mut drop_rng,
            };
            let nll = model.net.loss_and_grad(&model.params, &mut grad, &ex, mode, weight, Some(&mut drop));
            total += nll[ex.loss_from..].iter().sum::<f64>();
        }
        let loss = total / tokens as f64;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite loss or gradient at step {step} (loss {loss})"
            )));
        }
        opt.step(&mut model.params, &mut grad, cfg.schedule.lr(step));
        ensure!(model.all_finite(), Training, "non-finite parameters after step {step}");
        model.step += 1;
        losses.push(loss);
        since_eval.push(loss);
        if step % 100 == 0 {
            log::debug!("step {step}: nll {loss:.4}");
        }

        if (cfg.eval_every > 0 && step % cfg.eval_every == 0) || step == cfg.steps {
            let train_nll = since_eval.iter().sum::<f64>() / since_eval.len() as f64;
            since_eval.clear();
            let metrics = eval(model, step)?;
            if let Some(m) = &metrics {
                if m.score < best_score {
                    best_score = m.score;
                    best_step = Some(step);
                    best_params = Some(model.params.clone());
                }
            }
            log.push(TrainLogRecord {
                step,
                train_nll,
                dev_nll_coarse: metrics.as_ref().and_then(|m| m.dev_nll_coarse),
                dev_fad_i: metrics.as_ref().and_then(|m| m.dev_fad_i),
                dev_fad_s: metrics.as_ref().and_then(|m| m.dev_fad_s),
            });
        }
    }
    Ok(TrainOutcome {
        losses,
        log,
        best_step,
        best_params,
        optimizer: opt,
    })
}
