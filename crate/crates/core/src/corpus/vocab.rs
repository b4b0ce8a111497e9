use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::DialogueSample;
use crate::error::{Error, Result};
use crate::kg::KnowledgeGraph;

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";

const SPECIALS: [&str; 4] = [PAD, BOS, EOS, UNK];

/// Generic words `W` (specials first) followed by entity tokens.
///
/// Joint indices: word `i` is `i`, entity `v` is `|W| + v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    words: Vec<String>,
    entities: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    words: Vec<String>,
    entities: Vec<String>,
}

impl From<VocabFile> for Vocabulary {
    fn from(f: VocabFile) -> Self {
        Vocabulary::from_parts(f.words, f.entities)
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile {
            words: v.words,
            entities: v.entities,
        }
    }
}

impl Vocabulary {
    fn from_parts(words: Vec<String>, entities: Vec<String>) -> Self {
        let mut index = HashMap::with_capacity(words.len() + entities.len());
        for (i, w) in words.iter().chain(&entities).enumerate() {
            index.insert(w.clone(), i);
        }
        Self {
            words,
            entities,
            index,
        }
    }

    /// Specials + `words` (deduplicated, order kept) + the graph's entities.
    pub fn new(words: impl IntoIterator<Item = String>, graph: &KnowledgeGraph) -> Result<Self> {
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for w in words {
            if graph.entity_id(&w).is_some() {
                return Err(Error::Data(format!("word {w} collides with an entity")));
            }
            if !all.contains(&w) {
                all.push(w);
            }
        }
        Ok(Self::from_parts(all, graph.entities().to_vec()))
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn len(&self) -> usize {
        self.words.len() + self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index with out-of-vocabulary tokens mapped to `<unk>`.
    pub fn encode_token(&self, token: &str) -> usize {
        self.id(token).unwrap_or(self.unk())
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        if id < self.words.len() {
            Some(&self.words[id])
        } else {
            self.entities.get(id - self.words.len()).map(String::as_str)
        }
    }

    pub fn is_entity(&self, id: usize) -> bool {
        id >= self.words.len() && id < self.len()
    }

    pub fn pad(&self) -> usize {
        0
    }

    pub fn bos(&self) -> usize {
        1
    }

    pub fn eos(&self) -> usize {
        2
    }

    pub fn unk(&self) -> usize {
        3
    }

    /// Checks that the vocabulary's entity list is exactly the graph's.
    pub fn check_graph(&self, graph: &KnowledgeGraph) -> Result<()> {
        if self.entities == graph.entities() {
            Ok(())
        } else {
            Err(Error::Config(
                "vocabulary entities do not match the graph's entities".into(),
            ))
        }
    }

    /// Encodes a sample. The response gets a trailing `<eos>`.
    pub fn encode(&self, sample: &DialogueSample) -> EncodedSample {
        let context: Vec<usize> = sample.context.iter().map(|t| self.encode_token(t)).collect();
        let mut response: Vec<usize> =
            sample.response.iter().map(|t| self.encode_token(t)).collect();
        response.push(self.eos());
        EncodedSample::new(context, response, self)
    }

    pub fn encode_context(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.encode_token(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.token(i).unwrap_or(UNK).to_string())
            .collect()
    }
}

/// Words with frequency `>= min_count` (plus relation names), and every graph entity.
pub fn build_vocab(
    samples: &[DialogueSample],
    graph: &KnowledgeGraph,
    min_count: usize,
) -> Result<Vocabulary> {
    if samples.is_empty() {
        return Err(Error::Usage("cannot build a vocabulary from no samples".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in samples {
        for t in s.context.iter().chain(&s.response) {
            if graph.entity_id(t).is_none() && !SPECIALS.contains(&t.as_str()) {
                *counts.entry(t).or_default() += 1;
            }
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let words = kept
        .into_iter()
        .map(|(w, _)| w.to_string())
        .chain(
            graph
                .relations()
                .iter()
                .filter(|r| graph.entity_id(r).is_none())
                .cloned(),
        );
    Vocabulary::new(words, graph)
}

/// A sample mapped to joint-vocabulary indices.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSample {
    pub context: Vec<usize>,
    /// Response indices, ending in `<eos>`.
    pub response: Vec<usize>,
    /// Binary indicator of entities present in the context.
    pub entities_in_context: Vec<f64>,
}

impl EncodedSample {
    pub fn new(context: Vec<usize>, response: Vec<usize>, vocab: &Vocabulary) -> Self {
        let mut s = vec![0.0; vocab.num_entities()];
        for &id in &context {
            if vocab.is_entity(id) {
                s[id - vocab.num_words()] = 1.0;
            }
        }
        Self {
            context,
            response,
            entities_in_context: s,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SampleTag;
    use crate::kg::Triple;

    fn graph() -> KnowledgeGraph {
        KnowledgeGraph::new(
            vec!["alice".into(), "bob".into(), "carol".into()],
            vec!["likes".into()],
            [Triple::new(0, 0, 1)],
        )
        .unwrap()
    }

    fn sample(c: &str, r: &str) -> DialogueSample {
        DialogueSample {
            context: c.split_whitespace().map(String::from).collect(),
            response: r.split_whitespace().map(String::from).collect(),
            graph_id: "g".into(),
            tag: SampleTag::Clean,
        }
    }

    #[test]
    fn min_count_zero_keeps_everything() {
        let g = graph();
        let v = build_vocab(&[sample("who does alice like", "bob ok")], &g, 0).unwrap();
        for w in ["who", "does", "like", "ok", "likes"] {
            assert!(v.id(w).is_some(), "{w}");
            assert!(!v.is_entity(v.id(w).unwrap()));
        }
        assert_eq!(&v.words()[..4], &[PAD, BOS, EOS, UNK]);
    }

    #[test]
    fn rare_words_map_to_unk() {
        let g = graph();
        let samples = [sample("x y", "y"), sample("y", "z")];
        let v = build_vocab(&samples, &g, 2).unwrap();
        assert!(v.id("y").is_some());
        assert_eq!(v.encode_token("x"), v.unk());
    }

    #[test]
    fn unseen_entities_still_present() {
        let g = graph();
        let v = build_vocab(&[sample("hi", "hello")], &g, 0).unwrap();
        assert_eq!(v.num_entities(), 3);
        assert!(v.is_entity(v.id("carol").unwrap()));
    }

    #[test]
    fn encode_appends_eos_and_marks_entities() {
        let g = graph();
        let v = build_vocab(&[sample("does alice like carol", "bob")], &g, 0).unwrap();
        let e = v.encode(&sample("does alice like carol", "bob"));
        assert_eq!(*e.response.last().unwrap(), v.eos());
        assert_eq!(e.response.len(), 2);
        assert_eq!(e.entities_in_context, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn serde_roundtrip_rebuilds_index() {
        let g = graph();
        let v = build_vocab(&[sample("a b", "c")], &g, 0).unwrap();
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(v, back);
        assert_eq!(back.id("bob"), v.id("bob"));
    }
}
