//! Plain training, adversarial meta-learning and fast adaptation.
//!
//! The optimization routines are written against [`Objective`], so the same
//! code drives the dialogue model and small analytic surrogates.

mod episode;
mod log;
mod train;

pub use episode::{
    encode_episode, eligible_samples, rewrite_response, sample_episode, EncodedEpisode, Episode,
};
pub use log::{export_loss_curves, parse_loss_curves, LossRecord, Split};
pub use train::{
    evaluate_loss, fast_adapt, train, FastAdaptLog, ModelBatch, ModelObjective, TrainOutcome,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::MutationKind;
use crate::tensor::{adam_update, AdamConfig, AdamState, Gradients, ParamSet};

pub const DEFAULT_RATE: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Plain,
    Adml,
    AdmlImproved,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Plain => "plain",
            Mode::Adml => "adml",
            Mode::AdmlImproved => "adml-improved",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Mode::Plain),
            "adml" => Ok(Mode::Adml),
            "adml-improved" => Ok(Mode::AdmlImproved),
            other => Err(Error::Config(format!(
                "mode: unknown value {other:?} (expected plain, adml or adml-improved)"
            ))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which query set each adapted snapshot is scored on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Clean-adapted on adversarial queries, adversarial-adapted on clean queries.
    #[default]
    Cross,
    /// Clean-adapted on clean queries, adversarial-adapted on adversarial queries.
    Straight,
}

fn rate() -> f64 {
    DEFAULT_RATE
}
fn one() -> usize {
    1
}
fn num_task() -> usize {
    4
}
fn support_size() -> usize {
    3
}
fn query_size() -> usize {
    4
}
fn epochs() -> usize {
    10
}
fn batch_size() -> usize {
    16
}
fn patience() -> usize {
    3
}
fn yes() -> bool {
    true
}
fn adapt_steps() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Inner rate on clean supports.
    #[serde(default = "rate")]
    pub alpha1: f64,
    /// Inner rate on adversarial supports.
    #[serde(default = "rate")]
    pub alpha2: f64,
    /// Meta rate for the gradient scored on adversarial queries (cross pairing).
    #[serde(default = "rate")]
    pub beta1: f64,
    /// Meta rate for the gradient scored on clean queries (cross pairing).
    #[serde(default = "rate")]
    pub beta2: f64,
    /// Adam rate for plain training.
    #[serde(default = "rate")]
    pub lr: f64,
    /// Inner gradient steps.
    #[serde(default = "one")]
    pub k: usize,
    #[serde(default = "num_task")]
    pub num_task: usize,
    #[serde(default = "support_size")]
    pub support_size: usize,
    #[serde(default = "query_size")]
    pub query_size: usize,
    #[serde(default = "epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub pairing: Pairing,
    /// Include the adversarial branch in meta steps.
    #[serde(default = "yes")]
    pub adversarial: bool,
    /// Minibatch size for plain training.
    #[serde(default = "batch_size")]
    pub batch_size: usize,
    /// Optimizer steps per bucket per epoch; derived from bucket size when absent.
    #[serde(default)]
    pub steps_per_epoch: Option<usize>,
    /// Epochs without validation improvement before all rates are halved.
    #[serde(default = "patience")]
    pub patience: usize,
    #[serde(default = "mutation_kind")]
    pub mutation_kind: MutationKind,
    /// Triple changes applied per adversarial episode.
    #[serde(default = "one")]
    pub mutations: usize,
    /// Gradient steps used by `fast_adapt` at evaluation time.
    #[serde(default = "adapt_steps")]
    pub adapt_steps: usize,
    #[serde(default = "rate")]
    pub adapt_lr: f64,
    #[serde(default)]
    pub seed: u64,
}

fn mutation_kind() -> MutationKind {
    MutationKind::TailSwap
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("lr", self.lr),
            ("adapt_lr", self.adapt_lr),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name}: must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("k", self.k),
            ("num_task", self.num_task),
            ("support_size", self.support_size),
            ("query_size", self.query_size),
            ("batch_size", self.batch_size),
            ("mutations", self.mutations),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name}: must be at least 1")));
            }
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::Config("steps_per_epoch: must be at least 1".into()));
        }
        Ok(())
    }
}

/// A differentiable loss over parameter snapshots.
pub trait Objective: Sync {
    type Batch: Sync;

    /// Mean loss over `batch` and its gradient.
    fn loss_grad(&self, params: &ParamSet, batch: &Self::Batch) -> Result<(f64, Gradients)>;
}

/// One task's four sample sets, already bound to their graphs.
#[derive(Debug, Clone)]
pub struct MetaTask<B> {
    pub clean_support: B,
    pub adv_support: B,
    pub clean_query: B,
    pub adv_query: B,
}

/// `k` plain gradient-descent steps. The input snapshot is not modified.
pub fn inner_adapt<O: Objective>(
    objective: &O,
    params: &ParamSet,
    batch: &O::Batch,
    lr: f64,
    steps: usize,
) -> Result<ParamSet> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("inner learning rate must be nonnegative, got {lr}")));
    }
    let mut out = params.clone();
    for _ in 0..steps {
        let (_, g) = objective.loss_grad(&out, batch)?;
        if !g.is_finite() {
            return Err(Error::Numerical("non-finite gradient during adaptation".into()));
        }
        out.add_scaled(&g, -lr)?;
    }
    Ok(out)
}

/// Rates and switches consumed by [`meta_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetaConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub k: usize,
    pub improved: bool,
    pub pairing: Pairing,
    pub adversarial: bool,
}

impl MetaConfig {
    pub fn from_train(cfg: &TrainConfig) -> Result<Self> {
        let improved = match cfg.mode {
            Mode::Adml => false,
            Mode::AdmlImproved => true,
            Mode::Plain => {
                return Err(Error::Usage("meta steps need mode adml or adml-improved".into()))
            }
        };
        Ok(Self {
            alpha1: cfg.alpha1,
            alpha2: cfg.alpha2,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            k: cfg.k,
            improved,
            pairing: cfg.pairing,
            adversarial: cfg.adversarial,
        })
    }
}

/// Adam moments for the two meta-gradients.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetaOptState {
    pub first: AdamState,
    pub second: AdamState,
}

impl MetaOptState {
    pub fn new() -> Self {
        Self {
            first: AdamState::new(AdamConfig::default()),
            second: AdamState::new(AdamConfig::default()),
        }
    }
}

/// Query losses seen during one meta step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetaStepStats {
    pub first_loss: f64,
    pub second_loss: f64,
}

struct TaskGrads {
    first: (f64, Gradients),
    second: Option<(f64, Gradients)>,
    next_base: Option<ParamSet>,
}

fn task_grads<O: Objective>(
    objective: &O,
    base: &ParamSet,
    task: &MetaTask<O::Batch>,
    cfg: &MetaConfig,
) -> Result<TaskGrads> {
    let clean = inner_adapt(objective, base, &task.clean_support, cfg.alpha1, cfg.k)?;
    if !cfg.adversarial {
        let first = objective.loss_grad(&clean, &task.clean_query)?;
        return Ok(TaskGrads {
            first,
            second: None,
            next_base: cfg.improved.then_some(clean),
        });
    }
    let adv = inner_adapt(objective, base, &task.adv_support, cfg.alpha2, cfg.k)?;
    let (first, second) = match cfg.pairing {
        Pairing::Cross => (
            objective.loss_grad(&clean, &task.adv_query)?,
            objective.loss_grad(&adv, &task.clean_query)?,
        ),
        Pairing::Straight => (
            objective.loss_grad(&clean, &task.clean_query)?,
            objective.loss_grad(&adv, &task.adv_query)?,
        ),
    };
    let next_base = if cfg.improved {
        // Both inner displacements applied to the shared starting point.
        let mut carry = clean;
        carry.add_scaled(&adv.difference(base)?, 1.0)?;
        Some(carry)
    } else {
        None
    };
    Ok(TaskGrads {
        first,
        second: Some(second),
        next_base,
    })
}

/// One first-order meta update over `tasks`.
///
/// Non-improved: every task adapts from `params` and tasks run in parallel.
/// Improved: tasks run in order and each adapts from the previous task's
/// adapted parameters. In both cases the summed meta-gradients are applied
/// to `params` by two Adam steps (rates `beta1`, then `beta2`).
pub fn meta_step<O: Objective>(
    objective: &O,
    params: &mut ParamSet,
    tasks: &[MetaTask<O::Batch>],
    cfg: &MetaConfig,
    opt: &mut MetaOptState,
) -> Result<MetaStepStats> {
    if tasks.is_empty() {
        return Err(Error::Usage("meta step needs at least one task".into()));
    }
    let per_task: Vec<TaskGrads> = if cfg.improved {
        let mut base = params.clone();
        let mut out = Vec::with_capacity(tasks.len());
        for task in tasks {
            let mut tg = task_grads(objective, &base, task, cfg)?;
            if let Some(next) = tg.next_base.take() {
                base = next;
            }
            out.push(tg);
        }
        out
    } else {
        tasks
            .par_iter()
            .map(|t| task_grads(objective, params, t, cfg))
            .collect::<Result<_>>()?
    };

    let mut stats = MetaStepStats::default();
    let mut g1 = Gradients::new();
    let mut g2 = Gradients::new();
    for tg in &per_task {
        stats.first_loss += tg.first.0;
        g1.accumulate(&tg.first.1);
        if let Some((l, g)) = &tg.second {
            stats.second_loss += l;
            g2.accumulate(g);
        }
    }
    if !g1.is_finite() || !g2.is_finite() {
        return Err(Error::Numerical("non-finite meta-gradient".into()));
    }
    adam_update(params, &g1, &mut opt.first, cfg.beta1)?;
    if cfg.adversarial {
        adam_update(params, &g2, &mut opt.second, cfg.beta2)?;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests;
