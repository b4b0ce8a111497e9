//! Dialogue samples, ingestion, vocabulary, splitting and the synthetic
//! dynamic-graph corpus generator.

mod split;
mod synth;
mod vocab;

pub use split::{split_and_bucket, BucketBounds, SplitCorpus, SplitManifest, NUM_BUCKETS};
pub use synth::{synth_corpus, write_synth, SynthOutput, SynthSpec};
pub use vocab::{build_vocab, EncodedSample, Vocabulary, BOS, EOS, PAD, UNK};

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleTag {
    #[default]
    Clean,
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueSample {
    pub context: Vec<String>,
    pub response: Vec<String>,
    pub graph_id: String,
    pub tag: SampleTag,
}

impl DialogueSample {
    pub fn to_line(&self) -> CorpusLine {
        CorpusLine {
            context: self.context.join(" "),
            response: self.response.join(" "),
            graph: self.graph_id.clone(),
            tag: (self.tag != SampleTag::Clean).then_some(self.tag),
        }
    }
}

/// One JSON-lines record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusLine {
    pub context: String,
    pub response: String,
    pub graph: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<SampleTag>,
}

/// Graphs by id.
pub type GraphRegistry = BTreeMap<String, KnowledgeGraph>;

/// Whitespace tokenization followed by longest-match merging of spans that
/// spell an entity name (multi-word names are stored dash-joined).
pub fn tokenize(text: &str, graph: &KnowledgeGraph) -> Vec<String> {
    let raw: Vec<&str> = text.split_whitespace().collect();
    let max_span = graph
        .entities()
        .iter()
        .map(|e| e.split('-').count())
        .max()
        .unwrap_or(1);
    let mut out = Vec::with_capacity(raw.len());
    let mut i = 0;
    while i < raw.len() {
        let longest = (2..=max_span.min(raw.len() - i))
            .rev()
            .find(|&len| graph.entity_id(&raw[i..i + len].join("-")).is_some());
        match longest {
            Some(len) => {
                out.push(raw[i..i + len].join("-"));
                i += len;
            }
            None => {
                out.push(raw[i].to_string());
                i += 1;
            }
        }
    }
    out
}

pub fn parse_line(line: &CorpusLine, graphs: &GraphRegistry) -> Result<DialogueSample> {
    let graph = graphs
        .get(&line.graph)
        .ok_or_else(|| Error::Data(format!("unknown graph id {:?}", line.graph)))?;
    let response = tokenize(&line.response, graph);
    if response.is_empty() {
        return Err(Error::Data("empty response".into()));
    }
    Ok(DialogueSample {
        context: tokenize(&line.context, graph),
        response,
        graph_id: line.graph.clone(),
        tag: line.tag.unwrap_or_default(),
    })
}

/// Reads a JSON-lines corpus. Blank lines are skipped.
pub fn load_corpus(path: &Path, graphs: &GraphRegistry) -> Result<Vec<DialogueSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        let sample = parse_line(&parsed, graphs).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(sample);
    }
    Ok(out)
}

pub fn corpus_to_string(samples: &[DialogueSample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(&s.to_line())?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Entity tokens (per `graph`) that occur in `tokens`, deduplicated.
pub fn entity_set<'a, S: AsRef<str>>(tokens: &'a [S], graph: &KnowledgeGraph) -> HashSet<&'a str> {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| graph.entity_id(t).is_some())
        .collect()
}
