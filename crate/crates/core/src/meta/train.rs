use std::sync::Arc;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::episode::{encode_episode, sample_episode};
use super::log::{LossRecord, Split};
use super::{
    inner_adapt, meta_step, MetaConfig, MetaOptState, MetaTask, Mode, Objective, TrainConfig,
};
use crate::corpus::{DialogueSample, EncodedSample, SplitCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::kg::{build_adjacency, AdjacencyTensor, KnowledgeGraph};
use crate::model::{batch_loss_grad, total_loss, Dims, ModelConfig, ModelParams};
use crate::tensor::{adam_update, AdamConfig, AdamState, Gradients, ParamSet};

/// Samples bound to the adjacency tensor they are grounded in.
#[derive(Debug, Clone)]
pub struct ModelBatch {
    pub samples: Vec<EncodedSample>,
    pub adjacency: Arc<AdjacencyTensor>,
}

/// Mean sequence loss of the dialogue model.
#[derive(Debug, Clone, Copy)]
pub struct ModelObjective {
    config: ModelConfig,
    dims: Dims,
}

impl ModelObjective {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            config: *params.config(),
            dims: params.dims(),
        }
    }
}

impl Objective for ModelObjective {
    type Batch = ModelBatch;

    fn loss_grad(&self, params: &ParamSet, batch: &ModelBatch) -> Result<(f64, Gradients)> {
        let model = ModelParams::from_tensors(self.config, self.dims, params.clone())?;
        let (total, grads) = batch_loss_grad(&batch.samples, &model, &batch.adjacency)?;
        Ok((total / batch.samples.len() as f64, grads))
    }
}

/// Mean per-token loss over `samples`.
pub fn evaluate_loss(
    samples: &[EncodedSample],
    params: &ModelParams,
    adj: &AdjacencyTensor,
) -> Result<f64> {
    let (total, tokens) = total_loss(samples, params, adj)?;
    if tokens == 0 {
        return Err(Error::Usage("no target tokens to evaluate".into()));
    }
    Ok(total / tokens as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FastAdaptLog {
    pub steps: usize,
    pub lr: f64,
    /// Mean sequence loss on the support set before adaptation.
    pub before: f64,
    pub after: f64,
}

/// Few-step SGD on a support set, as used for evaluation-time adaptation.
pub fn fast_adapt(
    params: &ModelParams,
    support: &[EncodedSample],
    adj: &AdjacencyTensor,
    steps: usize,
    lr: f64,
) -> Result<(ModelParams, FastAdaptLog)> {
    if support.is_empty() {
        return Err(Error::Usage("fast adaptation needs a nonempty support set".into()));
    }
    let batch = ModelBatch {
        samples: support.to_vec(),
        adjacency: Arc::new(adj.clone()),
    };
    let objective = ModelObjective::new(params);
    let mean = |p: &ModelParams| -> Result<f64> {
        Ok(total_loss(support, p, adj)?.0 / support.len() as f64)
    };
    let before = mean(params)?;
    let adapted = inner_adapt(&objective, params.tensors(), &batch, lr, steps)?;
    let adapted = params.with_tensors(adapted)?;
    let after = mean(&adapted)?;
    info!("fast adaptation: {steps} steps at lr {lr}, support loss {before:.6} -> {after:.6}");
    Ok((
        adapted,
        FastAdaptLog {
            steps,
            lr,
            before,
            after,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<LossRecord>,
    /// Optimizer (Adam) updates applied to the parameters.
    pub updates: usize,
    /// Final multiplier applied to every learning rate.
    pub rate_scale: f64,
}

struct Bucket<'a> {
    raw: Vec<&'a DialogueSample>,
    encoded: Vec<EncodedSample>,
    valid: Vec<EncodedSample>,
}

/// Plain or meta training over length buckets, with per-epoch validation.
pub fn train(
    mut params: ModelParams,
    data: &SplitCorpus,
    graph: &KnowledgeGraph,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    vocab.check_graph(graph)?;
    let adj = Arc::new(build_adjacency(graph));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let train_b = data.bucketed(&data.train);
    let valid_b = data.bucketed(&data.valid);
    let buckets: Vec<Bucket> = train_b
        .into_iter()
        .zip(valid_b)
        .map(|(t, v)| Bucket {
            encoded: t.iter().map(|s| vocab.encode(s)).collect(),
            raw: t,
            valid: v.iter().map(|s| vocab.encode(s)).collect(),
        })
        .collect();

    let objective = ModelObjective::new(&params);
    let mut adam = AdamState::new(AdamConfig::default());
    let mut meta_opt = MetaOptState::new();
    let mut log = Vec::new();
    let mut updates = 0;
    let mut scale = 1.0;
    let mut best = f64::INFINITY;
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        for (b, bucket) in buckets.iter().enumerate() {
            if bucket.raw.is_empty() {
                if epoch == 1 {
                    warn!("training bucket {b} is empty; skipped");
                }
                continue;
            }
            updates += match cfg.mode {
                Mode::Plain => plain_epoch(&mut params, bucket, &adj, cfg, scale, &mut adam, &mut rng)?,
                Mode::Adml | Mode::AdmlImproved => meta_epoch(
                    &objective,
                    &mut params,
                    bucket,
                    graph,
                    vocab,
                    &adj,
                    cfg,
                    scale,
                    &mut meta_opt,
                    &mut rng,
                    b,
                )?,
            };
        }

        let mut valid_total = 0.0;
        let mut valid_tokens = 0;
        for (b, bucket) in buckets.iter().enumerate() {
            if !bucket.encoded.is_empty() {
                let loss = evaluate_loss(&bucket.encoded, &params, &adj)?;
                log.push(record(epoch, b, Split::Train, cfg.mode, loss));
            }
            if !bucket.valid.is_empty() {
                let (total, tokens) = total_loss(&bucket.valid, &params, &adj)?;
                valid_total += total;
                valid_tokens += tokens;
                log.push(record(epoch, b, Split::Valid, cfg.mode, total / tokens as f64));
            }
        }
        if valid_tokens > 0 {
            let v = valid_total / valid_tokens as f64;
            info!("epoch {epoch}: validation loss {v:.6} (rate scale {scale})");
            if v < best {
                best = v;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    scale *= 0.5;
                    stale = 0;
                    info!("validation loss stalled; rates scaled to {scale}");
                }
            }
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        updates,
        rate_scale: scale,
    })
}

fn record(epoch: usize, bucket: usize, split: Split, mode: Mode, loss: f64) -> LossRecord {
    LossRecord {
        epoch,
        bucket,
        split,
        mode,
        loss,
        ppl: loss.exp(),
    }
}

fn plain_epoch(
    params: &mut ModelParams,
    bucket: &Bucket,
    adj: &AdjacencyTensor,
    cfg: &TrainConfig,
    scale: f64,
    adam: &mut AdamState,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    let n = bucket.encoded.len();
    let size = cfg.batch_size.min(n);
    let steps = cfg.steps_per_epoch.unwrap_or_else(|| n.div_ceil(size));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut cursor = 0;
    for _ in 0..steps {
        if cursor >= n {
            order.shuffle(rng);
            cursor = 0;
        }
        let end = (cursor + size).min(n);
        let batch: Vec<EncodedSample> = order[cursor..end]
            .iter()
            .map(|&i| bucket.encoded[i].clone())
            .collect();
        cursor = end;
        let (_, grads) = batch_loss_grad(&batch, params, adj)?;
        if !grads.is_finite() {
            return Err(Error::Numerical("non-finite gradient in plain training".into()));
        }
        adam_update(params.tensors_mut(), &grads, adam, cfg.lr * scale)?;
    }
    Ok(steps)
}

#[allow(clippy::too_many_arguments)]
fn meta_epoch(
    objective: &ModelObjective,
    params: &mut ModelParams,
    bucket: &Bucket,
    graph: &KnowledgeGraph,
    vocab: &Vocabulary,
    adj: &Arc<AdjacencyTensor>,
    cfg: &TrainConfig,
    scale: f64,
    opt: &mut MetaOptState,
    rng: &mut ChaCha8Rng,
    index: usize,
) -> Result<usize> {
    let mut meta = MetaConfig::from_train(cfg)?;
    meta.alpha1 *= scale;
    meta.alpha2 *= scale;
    meta.beta1 *= scale;
    meta.beta2 *= scale;
    let per_task = 2 * (cfg.support_size + cfg.query_size);
    let n = bucket.raw.len();
    let steps = cfg.steps_per_epoch.unwrap_or_else(|| n.div_ceil(cfg.num_task * per_task).max(1));
    if n < cfg.support_size + cfg.query_size {
        warn!("bucket {index}: {n} samples cannot fill a task; skipped");
        return Ok(0);
    }
    let samples: Vec<DialogueSample> = bucket.raw.iter().map(|s| (*s).clone()).collect();
    let hops = params.hops();
    let mut updates = 0;
    for _ in 0..steps {
        let mut tasks = Vec::with_capacity(cfg.num_task);
        let mut degraded = false;
        for _ in 0..cfg.num_task {
            match sample_episode(&samples, graph, hops, cfg, rng) {
                Ok(ep) => {
                    let enc = encode_episode(&ep, vocab, adj.clone());
                    tasks.push(MetaTask {
                        clean_support: ModelBatch {
                            samples: enc.clean_support,
                            adjacency: enc.base.clone(),
                        },
                        adv_support: ModelBatch {
                            samples: enc.adv_support,
                            adjacency: enc.mutated.clone(),
                        },
                        clean_query: ModelBatch {
                            samples: enc.clean_query,
                            adjacency: enc.base,
                        },
                        adv_query: ModelBatch {
                            samples: enc.adv_query,
                            adjacency: enc.mutated,
                        },
                    });
                }
                Err(Error::Sampling(msg)) => {
                    // No adversarial regime available here: clean-only task.
                    if !degraded {
                        warn!("bucket {index}: {msg}; using clean-only tasks");
                    }
                    degraded = true;
                    tasks.push(clean_task(bucket, cfg, adj, rng)?);
                }
                Err(e) => return Err(e),
            }
        }
        let mut step_cfg = meta;
        if degraded {
            step_cfg.adversarial = false;
        }
        meta_step(objective, params.tensors_mut(), &tasks, &step_cfg, opt)?;
        updates += if step_cfg.adversarial { 2 } else { 1 };
    }
    Ok(updates)
}

fn clean_task(
    bucket: &Bucket,
    cfg: &TrainConfig,
    adj: &Arc<AdjacencyTensor>,
    rng: &mut ChaCha8Rng,
) -> Result<MetaTask<ModelBatch>> {
    let n = bucket.encoded.len();
    let need = cfg.support_size + cfg.query_size;
    if n < need {
        return Err(Error::Sampling(format!(
            "bucket holds {n} samples, a task needs {need}"
        )));
    }
    let idx = rand::seq::index::sample(rng, n, need).into_vec();
    let pick = |r: &[usize]| ModelBatch {
        samples: r.iter().map(|&i| bucket.encoded[i].clone()).collect(),
        adjacency: adj.clone(),
    };
    let support = pick(&idx[..cfg.support_size]);
    let query = pick(&idx[cfg.support_size..]);
    Ok(MetaTask {
        adv_support: support.clone(),
        adv_query: query.clone(),
        clean_support: support,
        clean_query: query,
    })
}
