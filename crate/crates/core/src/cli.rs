//! Command-line front end.
//!
//! Every command writes its outputs under `--out` together with a
//! `run_config.json` holding the fully merged configuration.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_vocab, corpus_to_string, load_corpus, split_and_bucket, synth_corpus, tokenize,
    write_atomic, write_synth, DialogueSample, GraphRegistry, SynthSpec,
};
use crate::error::{Error, Result};
use crate::kg::{build_adjacency, entity_indicator, KnowledgeGraph};
use crate::meta::{export_loss_curves, fast_adapt, train, Mode, TrainConfig};
use crate::metrics::MetricsReport;
use crate::model::{generate, Checkpoint, Dims, ModelConfig, ModelParams, SeedLineage};

pub const DEFAULT_MAX_LEN: usize = 20;

#[derive(Debug, Parser)]
#[command(name = "kdad", version, about = "Knowledge-grounded dialogue with fast adaptation to graph changes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic graph and dialogue corpus.
    Synth(Flags),
    /// Train a model (plain, adml or adml-improved).
    Train(Flags),
    /// Adapt a checkpoint to a support set grounded in a (mutated) graph.
    Adapt(Flags),
    /// Evaluate a checkpoint and write a metrics report.
    Eval(Flags),
    /// Generate responses for a file of contexts.
    Generate(Flags),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// plain, adml or adml-improved.
    #[arg(long)]
    pub mode: Option<String>,
    /// JSON-lines dialogue file.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Graph file; repeat for multi-graph corpora.
    #[arg(long)]
    pub graph: Vec<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hops: Option<usize>,
    /// Number of support samples used by `adapt` (default: all).
    #[arg(long)]
    pub support: Option<usize>,
    /// Adaptation steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Learning rate (plain training or adaptation).
    #[arg(long)]
    pub lr: Option<f64>,
}

/// Contents of a `--config` file. Every section is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub min_count: Option<usize>,
    #[serde(default)]
    pub max_len: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            Error::Config(format!("{}: field {}: {}", path.display(), e.path(), e.inner()))
        })
    }
}

/// Everything a command ran with, written next to its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub corpus: Option<PathBuf>,
    pub graphs: Vec<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub support: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hops: Option<usize>,
}

impl RunConfig {
    fn new(command: &str, flags: &Flags, seed: u64, out: &Path) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            corpus: flags.corpus.clone(),
            graphs: flags.graph.clone(),
            checkpoint: flags.checkpoint.clone(),
            out: out.to_path_buf(),
            synth: None,
            model: None,
            train: None,
            min_count: None,
            max_len: None,
            support: None,
            steps: None,
            lr: None,
            hops: None,
        }
    }

    fn write(&self) -> Result<()> {
        write_json(&self.out.join("run_config.json"), self)
    }

    fn value(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn require<'a, T>(v: &'a Option<T>, flag: &str, command: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::Usage(format!("{command} requires --{flag}")))
}

fn load_config(flags: &Flags) -> Result<FileConfig> {
    match &flags.config {
        Some(p) => FileConfig::load(p),
        None => Ok(FileConfig::default()),
    }
}

fn load_graphs(flags: &Flags, command: &str) -> Result<GraphRegistry> {
    if flags.graph.is_empty() {
        return Err(Error::Usage(format!("{command} requires --graph")));
    }
    let mut reg = GraphRegistry::new();
    for p in &flags.graph {
        let (id, g) = KnowledgeGraph::load(p)?;
        if reg.insert(id.clone(), g).is_some() {
            return Err(Error::Config(format!("graph id {id:?} given twice")));
        }
    }
    Ok(reg)
}

fn single_graph<'a>(reg: &'a GraphRegistry, command: &str) -> Result<&'a KnowledgeGraph> {
    if reg.len() != 1 {
        return Err(Error::Usage(format!(
            "{command} takes exactly one --graph, got {}",
            reg.len()
        )));
    }
    Ok(reg.values().next().expect("one graph"))
}

/// Parses `argv` and runs the selected command.
pub fn run<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| Error::Usage(e.to_string()))?;
    execute(cli.command)
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth(f) => cmd_synth(&f),
        Command::Train(f) => cmd_train(&f),
        Command::Adapt(f) => cmd_adapt(&f),
        Command::Eval(f) => cmd_eval(&f),
        Command::Generate(f) => cmd_generate(&f),
    }
}

fn cmd_synth(f: &Flags) -> Result<()> {
    let file = load_config(f)?;
    let out = require(&f.out, "out", "synth")?;
    let mut spec = file.synth.unwrap_or_default();
    if let Some(seed) = f.seed.or(file.seed) {
        spec.seed = seed;
    }
    if let Some(h) = f.hops {
        spec.hops = h;
    }
    let generated = synth_corpus(&spec)?;
    write_synth(&generated, &spec, out)?;
    let mut rc = RunConfig::new("synth", f, spec.seed, out);
    rc.synth = Some(spec);
    rc.write()?;
    info!("wrote {} samples to {}", generated.samples.len(), out.display());
    Ok(())
}

fn cmd_train(f: &Flags) -> Result<()> {
    let file = load_config(f)?;
    let out = require(&f.out, "out", "train")?;
    let corpus_path = require(&f.corpus, "corpus", "train")?;

    let mut cfg = file.train.clone().unwrap_or_default();
    let seed = f.seed.or(file.seed).unwrap_or(cfg.seed);
    cfg.seed = seed;
    if let Some(m) = &f.mode {
        cfg.mode = m.parse::<Mode>()?;
    }
    if let Some(e) = f.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = f.lr {
        cfg.lr = lr;
    }
    if let Some(s) = f.steps {
        cfg.k = s;
    }
    if let Some(s) = f.support {
        cfg.support_size = s;
    }
    cfg.validate()?;
    let graphs = load_graphs(f, "train")?;
    let graph = single_graph(&graphs, "train")?;
    let mut model_cfg = file.model.unwrap_or_default();
    if let Some(h) = f.hops {
        model_cfg.hops = h;
    }
    let min_count = file.min_count.unwrap_or(1);

    let samples = load_corpus(corpus_path, &graphs)?;
    let mut split_rng = ChaCha8Rng::seed_from_u64(seed);
    let split = split_and_bucket(&samples, &mut split_rng)?;
    let vocab = build_vocab(&split.train, graph, min_count)?;
    let dims = Dims {
        words: vocab.num_words(),
        entities: vocab.num_entities(),
        relations: graph.num_relations(),
    };
    let init_seed = seed.wrapping_add(1);
    let params = ModelParams::init(model_cfg, dims, init_seed)?;
    info!(
        "training {} on {} samples ({} parameters)",
        cfg.mode,
        split.train.len(),
        params.tensors().numel()
    );
    let outcome = train(params, &split, graph, &vocab, &cfg)?;

    let mut rc = RunConfig::new("train", f, seed, out);
    rc.model = Some(model_cfg);
    rc.train = Some(cfg.clone());
    rc.min_count = Some(min_count);
    let lineage = SeedLineage {
        init: init_seed,
        stages: vec![("split".into(), seed), ("train".into(), seed)],
    };
    let ck = Checkpoint::new(vocab, &outcome.params, lineage, rc.value()?)?;
    ck.save(&out.join("checkpoint.json"))?;
    write_json(&out.join("split.json"), &split.manifest)?;
    for (name, set) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
        write_atomic(&out.join(format!("{name}.jsonl")), corpus_to_string(set)?.as_bytes())?;
    }
    if outcome.log.is_empty() {
        warn!("no epochs run; loss curves not written");
    } else {
        export_loss_curves(&outcome.log, &out.join("loss.csv"))?;
        for b in 0..split.buckets.num_buckets() {
            let rows: Vec<_> = outcome.log.iter().filter(|r| r.bucket == b).cloned().collect();
            if !rows.is_empty() {
                export_loss_curves(&rows, &out.join(format!("loss_bucket{b}.csv")))?;
            }
        }
    }
    rc.write()
}

fn load_checkpoint(f: &Flags, command: &str) -> Result<(Checkpoint, ModelParams)> {
    let path = require(&f.checkpoint, "checkpoint", command)?;
    let ck = Checkpoint::load(path)?;
    let mut params = ck.model()?;
    if let Some(h) = f.hops {
        params.set_hops(h)?;
    }
    Ok((ck, params))
}

fn load_bound_corpus(
    f: &Flags,
    command: &str,
    ck: &Checkpoint,
) -> Result<(KnowledgeGraph, Vec<DialogueSample>)> {
    let corpus_path = require(&f.corpus, "corpus", command)?;
    let graphs = load_graphs(f, command)?;
    let graph = single_graph(&graphs, command)?.clone();
    ck.vocab.check_graph(&graph)?;
    if graph.num_relations() != ck.dims.relations {
        return Err(Error::Config(format!(
            "graph has {} relations, checkpoint expects {}",
            graph.num_relations(),
            ck.dims.relations
        )));
    }
    let samples = load_corpus(corpus_path, &graphs)?;
    Ok((graph, samples))
}

fn cmd_adapt(f: &Flags) -> Result<()> {
    let file = load_config(f)?;
    let out = require(&f.out, "out", "adapt")?;
    let (ck, params) = load_checkpoint(f, "adapt")?;
    let (graph, mut samples) = load_bound_corpus(f, "adapt", &ck)?;
    let cfg = file.train.unwrap_or_default();
    if let Some(n) = f.support {
        samples.truncate(n);
    }
    let steps = f.steps.unwrap_or(cfg.adapt_steps);
    let lr = f.lr.unwrap_or(cfg.adapt_lr);
    let support: Vec<_> = samples.iter().map(|s| ck.vocab.encode(s)).collect();
    let adj = build_adjacency(&graph);
    let (adapted, report) = fast_adapt(&params, &support, &adj, steps, lr)?;

    let seed = f.seed.or(file.seed).unwrap_or(0);
    let mut rc = RunConfig::new("adapt", f, seed, out);
    rc.support = f.support;
    rc.steps = Some(steps);
    rc.lr = Some(lr);
    rc.hops = f.hops;
    let mut lineage = ck.seeds.clone();
    lineage.stages.push(("adapt".into(), seed));
    Checkpoint::new(ck.vocab.clone(), &adapted, lineage, rc.value()?)?
        .save(&out.join("checkpoint.json"))?;
    write_json(&out.join("adapt_log.json"), &report)?;
    rc.write()
}

fn cmd_eval(f: &Flags) -> Result<()> {
    let file = load_config(f)?;
    let out = require(&f.out, "out", "eval")?;
    let (ck, params) = load_checkpoint(f, "eval")?;
    let (graph, samples) = load_bound_corpus(f, "eval", &ck)?;
    let max_len = file.max_len.unwrap_or(DEFAULT_MAX_LEN);
    let encoded: Vec<_> = samples.iter().map(|s| ck.vocab.encode(s)).collect();
    let adj = build_adjacency(&graph);
    let report = MetricsReport::evaluate(&params, &encoded, &adj, &ck.vocab, max_len)?;

    let mut rc = RunConfig::new("eval", f, f.seed.or(file.seed).unwrap_or(0), out);
    rc.max_len = Some(max_len);
    rc.hops = f.hops;
    write_json(&out.join("report.json"), &report)?;
    write_atomic(&out.join("report.txt"), report.to_table().as_bytes())?;
    print!("{}", report.to_table());
    rc.write()
}

#[derive(Debug, Deserialize)]
struct ContextLine {
    context: String,
    graph: String,
}

#[derive(Debug, Serialize)]
struct GeneratedLine<'a> {
    context: &'a str,
    response: String,
    graph: &'a str,
}

fn cmd_generate(f: &Flags) -> Result<()> {
    let file = load_config(f)?;
    let out = require(&f.out, "out", "generate")?;
    let (ck, params) = load_checkpoint(f, "generate")?;
    let path = require(&f.corpus, "corpus", "generate")?;
    let graphs = load_graphs(f, "generate")?;
    let graph = single_graph(&graphs, "generate")?;
    ck.vocab.check_graph(graph)?;
    let max_len = file.max_len.unwrap_or(DEFAULT_MAX_LEN);
    let adj = build_adjacency(graph);

    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = String::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.clone(),
            line: i + 1,
            msg,
        };
        let line: ContextLine = serde_json::from_str(raw).map_err(|e| parse_err(e.to_string()))?;
        if !graphs.contains_key(&line.graph) {
            return Err(parse_err(format!("unknown graph id {:?}", line.graph)));
        }
        let tokens = tokenize(&line.context, graph);
        let ids = ck.vocab.encode_context(&tokens);
        let s = entity_indicator(&tokens, graph);
        let reply = generate(&ids, &s, &params, &adj, max_len)?;
        lines.push_str(&serde_json::to_string(&GeneratedLine {
            context: &line.context,
            response: ck.vocab.decode(&reply).join(" "),
            graph: &line.graph,
        })?);
        lines.push('\n');
    }
    write_atomic(&out.join("generations.jsonl"), lines.as_bytes())?;
    let mut rc = RunConfig::new("generate", f, f.seed.or(file.seed).unwrap_or(0), out);
    rc.max_len = Some(max_len);
    rc.hops = f.hops;
    rc.write()
}
