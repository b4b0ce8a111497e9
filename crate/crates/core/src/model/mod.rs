//! Knowledge-grounded seq2seq model with a copy gate over graph entities.
//!
//! A GRU encoder summarizes the context; the decoder GRU starts from that
//! summary. At each step the decoder state `d` drives
//!
//! * a controller softmax over `|W| + 1` classes: one per generic word plus a
//!   final "copy from graph" class whose probability is the gate `c`;
//! * a per-head relation distribution `R` (`|V| x |L|`, row softmax);
//! * a transition matrix `T[i, y] = sum_j R[i, j] * A[i, j, y]`;
//! * an entity distribution `k`, the normalized `s^T T^N` where `s` marks the
//!   entities named in the context.
//!
//! The output over the joint vocabulary is `[w ; c * k]`.

mod checkpoint;

pub use checkpoint::{Checkpoint, SeedLineage, CHECKPOINT_FORMAT_VERSION};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::EncodedSample;
use crate::error::{Error, Result};
use crate::kg::AdjacencyTensor;
use crate::tensor::{gru_step, Gradients, GruBlock, GruVars, ParamId, ParamSet, Tape, Tensor, Var};

pub const DEFAULT_HIDDEN: usize = 256;
pub const DEFAULT_HOPS: usize = 2;
pub const INIT_SCALE: f64 = 0.08;

/// Index of `<bos>` and `<eos>` in every vocabulary.
const BOS_ID: usize = 1;
const EOS_ID: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub embedding: usize,
    /// Reasoning hops through the transition matrix.
    pub hops: usize,
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            embedding: DEFAULT_HIDDEN,
            hops: DEFAULT_HOPS,
            init_scale: INIT_SCALE,
        }
    }
}

/// Sizes the parameters are bound to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub words: usize,
    pub entities: usize,
    pub relations: usize,
}

impl Dims {
    pub fn vocab(&self) -> usize {
        self.words + self.entities
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Ids {
    embedding: ParamId,
    encoder: [ParamId; 4],
    decoder: [ParamId; 4],
    controller_weights: ParamId,
    controller_bias: ParamId,
    relation_weights: ParamId,
    relation_bias: ParamId,
}

impl Ids {
    fn lookup(params: &ParamSet) -> Result<Self> {
        let get = |name: &str| {
            params
                .id_of(name)
                .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
        };
        let gru = |prefix: &str| -> Result<[ParamId; 4]> {
            Ok([
                get(&format!("{prefix}.input_weights"))?,
                get(&format!("{prefix}.state_weights"))?,
                get(&format!("{prefix}.input_bias"))?,
                get(&format!("{prefix}.state_bias"))?,
            ])
        };
        Ok(Self {
            embedding: get("embedding")?,
            encoder: gru("encoder")?,
            decoder: gru("decoder")?,
            controller_weights: get("controller.weights")?,
            controller_bias: get("controller.bias")?,
            relation_weights: get("relation.weights")?,
            relation_bias: get("relation.bias")?,
        })
    }
}

/// The full parameter snapshot. Cloning gives an independent copy.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    dims: Dims,
    tensors: ParamSet,
    ids: Ids,
}

impl ModelParams {
    /// Uniform initialization in `[-init_scale, init_scale]`.
    pub fn init(config: ModelConfig, dims: Dims, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = config.init_scale;
        let mut draw = |shape: &[usize]| {
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
            Tensor::new(shape.to_vec(), data).expect("shape")
        };
        let (h, e) = (config.hidden, config.embedding);
        let gru = |draw: &mut dyn FnMut(&[usize]) -> Tensor, input: usize| GruBlock {
            input_weights: draw(&[3 * h, input]),
            state_weights: draw(&[3 * h, h]),
            input_bias: draw(&[3 * h]),
            state_bias: draw(&[3 * h]),
        };
        let embedding = draw(&[dims.vocab(), e]);
        let encoder = gru(&mut draw, e);
        let decoder = gru(&mut draw, e);
        let ctrl_w = draw(&[dims.words + 1, h]);
        let ctrl_b = draw(&[dims.words + 1]);
        let rel_w = draw(&[dims.entities * dims.relations, h]);
        let rel_b = draw(&[dims.entities * dims.relations]);
        Self::assemble(config, dims, embedding, encoder, decoder, ctrl_w, ctrl_b, rel_w, rel_b)
    }

    /// All-zero parameters.
    pub fn zeros(config: ModelConfig, dims: Dims) -> Result<Self> {
        let (h, e) = (config.hidden, config.embedding);
        Self::assemble(
            config,
            dims,
            Tensor::zeros(&[dims.vocab(), e]),
            GruBlock::zeros(e, h),
            GruBlock::zeros(e, h),
            Tensor::zeros(&[dims.words + 1, h]),
            Tensor::zeros(&[dims.words + 1]),
            Tensor::zeros(&[dims.entities * dims.relations, h]),
            Tensor::zeros(&[dims.entities * dims.relations]),
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config: ModelConfig,
        dims: Dims,
        embedding: Tensor,
        encoder: GruBlock,
        decoder: GruBlock,
        ctrl_w: Tensor,
        ctrl_b: Tensor,
        rel_w: Tensor,
        rel_b: Tensor,
    ) -> Result<Self> {
        validate(&config, &dims)?;
        let mut tensors = ParamSet::new();
        tensors.push("embedding", embedding)?;
        encoder.register(&mut tensors, "encoder")?;
        decoder.register(&mut tensors, "decoder")?;
        tensors.push("controller.weights", ctrl_w)?;
        tensors.push("controller.bias", ctrl_b)?;
        tensors.push("relation.weights", rel_w)?;
        tensors.push("relation.bias", rel_b)?;
        Self::from_tensors(config, dims, tensors)
    }

    /// Rebinds a parameter set, checking every shape against `config` and `dims`.
    pub fn from_tensors(config: ModelConfig, dims: Dims, tensors: ParamSet) -> Result<Self> {
        validate(&config, &dims)?;
        let ids = Ids::lookup(&tensors)?;
        let (h, e) = (config.hidden, config.embedding);
        let expect = |id: ParamId, shape: &[usize]| {
            if tensors.get(id).shape() == shape {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    tensors.name(id),
                    tensors.get(id).shape(),
                    shape
                )))
            }
        };
        expect(ids.embedding, &[dims.vocab(), e])?;
        for block in [ids.encoder, ids.decoder] {
            expect(block[0], &[3 * h, e])?;
            expect(block[1], &[3 * h, h])?;
            expect(block[2], &[3 * h])?;
            expect(block[3], &[3 * h])?;
        }
        expect(ids.controller_weights, &[dims.words + 1, h])?;
        expect(ids.controller_bias, &[dims.words + 1])?;
        expect(ids.relation_weights, &[dims.entities * dims.relations, h])?;
        expect(ids.relation_bias, &[dims.entities * dims.relations])?;
        if tensors.len() != 13 {
            return Err(Error::Config(format!(
                "expected 13 parameter tensors, got {}",
                tensors.len()
            )));
        }
        Ok(Self {
            config,
            dims,
            tensors,
            ids,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn hops(&self) -> usize {
        self.config.hops
    }

    pub fn tensors(&self) -> &ParamSet {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut ParamSet {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> ParamSet {
        self.tensors
    }

    /// Same bindings, different values (layout must match).
    pub fn with_tensors(&self, tensors: ParamSet) -> Result<Self> {
        Self::from_tensors(self.config, self.dims, tensors)
    }

    pub fn set_hops(&mut self, hops: usize) -> Result<()> {
        if hops == 0 {
            return Err(Error::Config("hop count must be at least 1".into()));
        }
        self.config.hops = hops;
        Ok(())
    }

    pub fn controller_bias_id(&self) -> ParamId {
        self.ids.controller_bias
    }

    pub fn relation_bias_id(&self) -> ParamId {
        self.ids.relation_bias
    }

    pub fn relation_weights_id(&self) -> ParamId {
        self.ids.relation_weights
    }

    pub fn controller_weights_id(&self) -> ParamId {
        self.ids.controller_weights
    }

    fn check_adjacency(&self, adj: &AdjacencyTensor) -> Result<()> {
        if adj.num_entities() != self.dims.entities || adj.num_relations() != self.dims.relations
        {
            return Err(Error::Config(format!(
                "adjacency is {}x{}, model is bound to {} entities and {} relations",
                adj.num_entities(),
                adj.num_relations(),
                self.dims.entities,
                self.dims.relations
            )));
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.dims.vocab()) {
            Some(t) => Err(Error::Data(format!(
                "token id {t} outside vocabulary of size {}",
                self.dims.vocab()
            ))),
            None => Ok(()),
        }
    }
}

fn validate(config: &ModelConfig, dims: &Dims) -> Result<()> {
    if config.hops == 0 {
        return Err(Error::Config("hop count must be at least 1".into()));
    }
    if config.hidden == 0 || config.embedding == 0 {
        return Err(Error::Config("hidden and embedding sizes must be positive".into()));
    }
    if dims.words <= EOS_ID || dims.entities == 0 || dims.relations == 0 {
        return Err(Error::Config(format!(
            "model needs special tokens, at least one entity and one relation: {dims:?}"
        )));
    }
    Ok(())
}

/// Parameters placed on a tape.
struct Placed {
    embedding: Var,
    encoder: GruVars,
    decoder: GruVars,
    ctrl_w: Var,
    ctrl_b: Var,
    rel_w: Var,
    rel_b: Var,
}

impl Placed {
    fn new(tape: &mut Tape<'_>, p: &ModelParams) -> Self {
        let t = &p.tensors;
        Self {
            embedding: tape.param(p.ids.embedding, t.get(p.ids.embedding)),
            encoder: GruVars::from_params(tape, t, p.ids.encoder),
            decoder: GruVars::from_params(tape, t, p.ids.decoder),
            ctrl_w: tape.param(p.ids.controller_weights, t.get(p.ids.controller_weights)),
            ctrl_b: tape.param(p.ids.controller_bias, t.get(p.ids.controller_bias)),
            rel_w: tape.param(p.ids.relation_weights, t.get(p.ids.relation_weights)),
            rel_b: tape.param(p.ids.relation_bias, t.get(p.ids.relation_bias)),
        }
    }
}

/// Nodes produced by one decoder step.
#[derive(Debug, Clone, Copy)]
struct StepVars {
    state: Var,
    gate: Var,
    words: Var,
    relations: Var,
    entities: Var,
    output: Var,
    dead_end: bool,
}

fn encode_on(tape: &mut Tape<'_>, pl: &Placed, hidden: usize, tokens: &[usize]) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::Usage("cannot encode an empty token sequence".into()));
    }
    let mut state = tape.constant(Tensor::zeros(&[hidden]));
    for &tok in tokens {
        let x = tape.row(pl.embedding, tok)?;
        state = gru_step(tape, x, state, &pl.encoder)?;
    }
    Ok(state)
}

fn controller_on(tape: &mut Tape<'_>, pl: &Placed, dims: Dims, d: Var) -> Result<(Var, Var)> {
    let logits = tape.matvec(pl.ctrl_w, d)?;
    let logits = tape.add(logits, pl.ctrl_b)?;
    let probs = tape.softmax(logits)?;
    let words = tape.slice(probs, 0, dims.words)?;
    let gate = tape.slice(probs, dims.words, 1)?;
    Ok((gate, words))
}

fn relations_on(tape: &mut Tape<'_>, pl: &Placed, dims: Dims, d: Var) -> Result<Var> {
    let logits = tape.matvec(pl.rel_w, d)?;
    let logits = tape.add(logits, pl.rel_b)?;
    tape.row_softmax(logits, dims.relations)
}

fn hops_on(tape: &mut Tape<'_>, s: Var, transition: Var, hops: usize) -> Result<Var> {
    let mut mass = s;
    for _ in 0..hops {
        mass = tape.vecmat(mass, transition)?;
    }
    Ok(mass)
}

fn decode_on<'a>(
    tape: &mut Tape<'a>,
    pl: &Placed,
    params: &ModelParams,
    prev_token: usize,
    prev_state: Var,
    s: Var,
    adj: &'a AdjacencyTensor,
) -> Result<StepVars> {
    let dims = params.dims;
    let x = tape.row(pl.embedding, prev_token)?;
    let d = gru_step(tape, x, prev_state, &pl.decoder)?;
    let (gate, words) = controller_on(tape, pl, dims, d)?;
    let relations = relations_on(tape, pl, dims, d)?;
    let transition = tape.transition(relations, dims.entities, dims.relations, adj.ones())?;
    let raw = hops_on(tape, s, transition, params.config.hops)?;
    let (entities, dead_end) = tape.normalize(raw);
    let copied = tape.scale_by(entities, gate)?;
    let output = tape.concat(words, copied);
    Ok(StepVars {
        state: d,
        gate,
        words,
        relations,
        entities,
        output,
        dead_end,
    })
}

/// Per-step values exposed for inspection and metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeState {
    /// Decoder hidden state after the step.
    pub hidden: Tensor,
    /// Probability of copying from the graph.
    pub gate: f64,
    /// Generic-word probabilities (sum to `1 - gate`).
    pub words: Vec<f64>,
    /// Relation distribution per head, `[|V|, |L|]`.
    pub relations: Tensor,
    /// Entity distribution.
    pub entities: Vec<f64>,
    /// Distribution over the joint vocabulary.
    pub output: Vec<f64>,
    /// Set when no reasoning mass reached any entity and `entities` fell back to uniform.
    pub dead_end: bool,
}

fn read_step(tape: &Tape<'_>, step: &StepVars) -> DecodeState {
    DecodeState {
        hidden: tape.value(step.state).clone(),
        gate: tape.scalar(step.gate),
        words: tape.value(step.words).data().to_vec(),
        relations: tape.value(step.relations).clone(),
        entities: tape.value(step.entities).data().to_vec(),
        output: tape.value(step.output).data().to_vec(),
        dead_end: step.dead_end,
    }
}

/// Final encoder state for `tokens`, starting from zeros.
pub fn encode(tokens: &[usize], params: &ModelParams) -> Result<Tensor> {
    params.check_tokens(tokens)?;
    let mut tape = Tape::new();
    let pl = Placed::new(&mut tape, params);
    let out = encode_on(&mut tape, &pl, params.config.hidden, tokens)?;
    Ok(tape.value(out).clone())
}

fn check_hidden(params: &ModelParams, d: &Tensor) -> Result<()> {
    if d.len() != params.config.hidden {
        return Err(Error::Config(format!(
            "decoder state has {} entries, model hidden size is {}",
            d.len(),
            params.config.hidden
        )));
    }
    if !d.is_finite() {
        return Err(Error::Numerical("decoder state is not finite".into()));
    }
    Ok(())
}

/// Returns `(c, w)`: the copy-gate probability and the generic-word distribution.
pub fn controller_step(d: &Tensor, params: &ModelParams) -> Result<(f64, Vec<f64>)> {
    check_hidden(params, d)?;
    let mut tape = Tape::new();
    let pl = Placed::new(&mut tape, params);
    let dv = tape.constant(d.clone());
    let (gate, words) = controller_on(&mut tape, &pl, params.dims, dv)?;
    Ok((tape.scalar(gate), tape.value(words).data().to_vec()))
}

/// Row-stochastic `[|V|, |L|]` relation distribution.
pub fn relation_distribution(d: &Tensor, params: &ModelParams) -> Result<Tensor> {
    check_hidden(params, d)?;
    let mut tape = Tape::new();
    let pl = Placed::new(&mut tape, params);
    let dv = tape.constant(d.clone());
    let r = relations_on(&mut tape, &pl, params.dims, dv)?;
    Ok(tape.value(r).clone())
}

/// `T[i, y] = sum_j R[i, j] * A[i, j, y]`.
pub fn transition(relations: &Tensor, adj: &AdjacencyTensor) -> Result<Tensor> {
    let (v, l) = (adj.num_entities(), adj.num_relations());
    if relations.shape() != [v, l] {
        return Err(Error::Config(format!(
            "relation matrix {:?} does not match adjacency {v}x{l}x{v}",
            relations.shape()
        )));
    }
    let mut tape = Tape::new();
    let r = tape.constant(relations.clone());
    let t = tape.transition(r, v, l, adj.ones())?;
    Ok(tape.value(t).clone())
}

/// Unnormalized `s^T T^hops`.
pub fn multi_hop_mass(s: &[f64], transition: &Tensor, hops: usize) -> Result<Vec<f64>> {
    let n = s.len();
    if transition.shape() != [n, n] {
        return Err(Error::Config(format!(
            "transition {:?} does not match indicator of length {n}",
            transition.shape()
        )));
    }
    let mut tape = Tape::new();
    let sv = tape.constant(Tensor::vector(s.to_vec()));
    let tv = tape.constant(transition.clone());
    let raw = hops_on(&mut tape, sv, tv, hops)?;
    Ok(tape.value(raw).data().to_vec())
}

/// Entity distribution after `hops` reasoning steps, plus the dead-end flag.
pub fn multi_hop(s: &[f64], transition: &Tensor, hops: usize) -> Result<(Vec<f64>, bool)> {
    if hops == 0 {
        return Err(Error::Config("hop count must be at least 1".into()));
    }
    let raw = multi_hop_mass(s, transition, hops)?;
    let mut tape = Tape::new();
    let rv = tape.constant(Tensor::vector(raw));
    let (k, dead) = tape.normalize(rv);
    Ok((tape.value(k).data().to_vec(), dead))
}

/// One decoder step. The first call takes the encoder output as `prev_state`
/// and `<bos>` as `prev_token`.
pub fn decode_step(
    prev_token: usize,
    prev_state: &Tensor,
    entities_in_context: &[f64],
    adj: &AdjacencyTensor,
    params: &ModelParams,
) -> Result<DecodeState> {
    params.check_adjacency(adj)?;
    params.check_tokens(&[prev_token])?;
    check_hidden(params, prev_state)?;
    if entities_in_context.len() != params.dims.entities {
        return Err(Error::Config("entity indicator length mismatch".into()));
    }
    let mut tape = Tape::new();
    let pl = Placed::new(&mut tape, params);
    let h = tape.constant(prev_state.clone());
    let s = tape.constant(Tensor::vector(entities_in_context.to_vec()));
    let step = decode_on(&mut tape, &pl, params, prev_token, h, s, adj)?;
    Ok(read_step(&tape, &step))
}

/// Teacher-forced negative log-likelihood of the response, as a tape node.
fn sample_loss_on<'a>(
    tape: &mut Tape<'a>,
    pl: &Placed,
    params: &ModelParams,
    sample: &EncodedSample,
    adj: &'a AdjacencyTensor,
) -> Result<Var> {
    if sample.response.is_empty() {
        return Err(Error::Data("empty response".into()));
    }
    params.check_tokens(&sample.response)?;
    params.check_tokens(&sample.context)?;
    let mut state = encode_on(tape, pl, params.config.hidden, &sample.context)?;
    let s = tape.constant(Tensor::vector(sample.entities_in_context.clone()));
    let mut prev = BOS_ID;
    let mut terms = Vec::with_capacity(sample.response.len());
    for &target in &sample.response {
        let step = decode_on(tape, pl, params, prev, state, s, adj)?;
        terms.push(tape.neg_log(step.output, target)?);
        state = step.state;
        prev = target;
    }
    tape.add_n(&terms)
}

/// `-sum_t log o_t(y_t)` under teacher forcing.
pub fn sequence_loss(
    sample: &EncodedSample,
    params: &ModelParams,
    adj: &AdjacencyTensor,
) -> Result<f64> {
    params.check_adjacency(adj)?;
    let mut tape = Tape::new();
    let pl = Placed::new(&mut tape, params);
    let loss = sample_loss_on(&mut tape, &pl, params, sample, adj)?;
    Ok(tape.scalar(loss))
}

/// Loss and gradient of a single sample.
pub fn sample_loss_grad(
    sample: &EncodedSample,
    params: &ModelParams,
    adj: &AdjacencyTensor,
) -> Result<(f64, Gradients)> {
    params.check_adjacency(adj)?;
    let mut tape = Tape::new();
    let pl = Placed::new(&mut tape, params);
    let loss = sample_loss_on(&mut tape, &pl, params, sample, adj)?;
    let grads = tape.backward(loss)?;
    Ok((tape.scalar(loss), grads))
}

/// Summed loss over a batch and the gradient of the mean loss.
///
/// Samples are differentiated in parallel and reduced in input order, so
/// the result does not depend on scheduling.
pub fn batch_loss_grad(
    samples: &[EncodedSample],
    params: &ModelParams,
    adj: &AdjacencyTensor,
) -> Result<(f64, Gradients)> {
    if samples.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let parts: Vec<Result<(f64, Gradients)>> = samples
        .par_iter()
        .map(|s| sample_loss_grad(s, params, adj))
        .collect();
    let mut total = 0.0;
    let mut grads = Gradients::new();
    for part in parts {
        let (l, g) = part?;
        total += l;
        grads.accumulate(&g);
    }
    grads.scale(1.0 / samples.len() as f64);
    Ok((total, grads))
}

/// Summed teacher-forced loss and target-token count over `samples`.
pub fn total_loss(
    samples: &[EncodedSample],
    params: &ModelParams,
    adj: &AdjacencyTensor,
) -> Result<(f64, usize)> {
    let losses: Vec<Result<f64>> = samples
        .par_iter()
        .map(|s| sequence_loss(s, params, adj))
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok((total, samples.iter().map(|s| s.response.len()).sum()))
}

/// Teacher-forced per-step outputs for a sample.
pub fn teacher_forced_outputs(
    sample: &EncodedSample,
    params: &ModelParams,
    adj: &AdjacencyTensor,
) -> Result<Vec<DecodeState>> {
    params.check_adjacency(adj)?;
    params.check_tokens(&sample.response)?;
    params.check_tokens(&sample.context)?;
    let mut tape = Tape::new();
    let pl = Placed::new(&mut tape, params);
    let mut state = encode_on(&mut tape, &pl, params.config.hidden, &sample.context)?;
    let s = tape.constant(Tensor::vector(sample.entities_in_context.clone()));
    let mut prev = BOS_ID;
    let mut out = Vec::with_capacity(sample.response.len());
    for &target in &sample.response {
        let step = decode_on(&mut tape, &pl, params, prev, state, s, adj)?;
        out.push(read_step(&tape, &step));
        state = step.state;
        prev = target;
    }
    Ok(out)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding until `<eos>` or `max_len` tokens. The `<eos>` is not returned.
pub fn generate(
    context: &[usize],
    entities_in_context: &[f64],
    params: &ModelParams,
    adj: &AdjacencyTensor,
    max_len: usize,
) -> Result<Vec<usize>> {
    if max_len == 0 {
        return Err(Error::Usage("max_len must be at least 1".into()));
    }
    params.check_adjacency(adj)?;
    params.check_tokens(context)?;
    if entities_in_context.len() != params.dims.entities {
        return Err(Error::Config("entity indicator length mismatch".into()));
    }
    let mut tape = Tape::new();
    let pl = Placed::new(&mut tape, params);
    let mut state = encode_on(&mut tape, &pl, params.config.hidden, context)?;
    let s = tape.constant(Tensor::vector(entities_in_context.to_vec()));
    let mut prev = BOS_ID;
    let mut out = Vec::new();
    while out.len() < max_len {
        let step = decode_on(&mut tape, &pl, params, prev, state, s, adj)?;
        let next = argmax(tape.value(step.output).data());
        if next == EOS_ID {
            break;
        }
        out.push(next);
        state = step.state;
        prev = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
