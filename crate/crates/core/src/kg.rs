//! Knowledge graphs, their binary adjacency tensor, and single-triple
//! mutations used to build adversarial (dynamic-graph) samples.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `(head, relation, tail)` by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

/// Joins a possibly multi-word entity name into a single token.
pub fn entity_token(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join("-")
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    entities: Vec<String>,
    relations: Vec<String>,
    triples: BTreeSet<Triple>,
    entity_index: HashMap<String, usize>,
}

impl KnowledgeGraph {
    /// Builds a graph, joining multi-word entity names with dashes.
    pub fn new(
        entities: Vec<String>,
        relations: Vec<String>,
        triples: impl IntoIterator<Item = Triple>,
    ) -> Result<Self> {
        let entities: Vec<String> = entities.iter().map(|e| entity_token(e)).collect();
        let mut entity_index = HashMap::with_capacity(entities.len());
        for (i, e) in entities.iter().enumerate() {
            if e.is_empty() {
                return Err(Error::Data("empty entity name".into()));
            }
            if entity_index.insert(e.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate entity {e}")));
            }
        }
        let mut seen = BTreeSet::new();
        for r in &relations {
            if !seen.insert(r.as_str()) {
                return Err(Error::Data(format!("duplicate relation {r}")));
            }
        }
        let mut set = BTreeSet::new();
        for t in triples {
            if t.head >= entities.len() || t.tail >= entities.len() || t.relation >= relations.len()
            {
                return Err(Error::Data(format!(
                    "triple ({}, {}, {}) out of range for {} entities / {} relations",
                    t.head,
                    t.relation,
                    t.tail,
                    entities.len(),
                    relations.len()
                )));
            }
            if !set.insert(t) {
                return Err(Error::Data(format!(
                    "duplicate triple ({}, {}, {})",
                    t.head, t.relation, t.tail
                )));
            }
        }
        Ok(Self {
            entities,
            relations,
            triples: set,
            entity_index,
        })
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// Triples in ascending `(head, relation, tail)` order.
    pub fn triples(&self) -> impl ExactSizeIterator<Item = Triple> + '_ {
        self.triples.iter().copied()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.triples.contains(t)
    }

    pub fn entity_id(&self, token: &str) -> Option<usize> {
        self.entity_index.get(token).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r == name)
    }

    /// True when both graphs bind the same entity and relation inventories.
    pub fn same_schema(&self, other: &KnowledgeGraph) -> bool {
        self.entities == other.entities && self.relations == other.relations
    }

    /// Tails reachable from `head` through `relation`.
    pub fn tails(&self, head: usize, relation: usize) -> impl Iterator<Item = usize> + '_ {
        self.triples
            .range(Triple::new(head, relation, 0)..=Triple::new(head, relation, usize::MAX))
            .map(|t| t.tail)
    }

    /// Outgoing triples of `head`.
    pub fn outgoing(&self, head: usize) -> impl Iterator<Item = Triple> + '_ {
        self.triples
            .range(Triple::new(head, 0, 0)..=Triple::new(head, usize::MAX, usize::MAX))
            .copied()
    }

    fn with_triples(&self, triples: BTreeSet<Triple>) -> Self {
        Self {
            entities: self.entities.clone(),
            relations: self.relations.clone(),
            triples,
            entity_index: self.entity_index.clone(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<(Option<String>, Self)> {
        let file: GraphFile = serde_json::from_str(text)?;
        file.resolve()
    }

    /// Loads a graph file. The graph id is the file's `id` field, or the file
    /// stem when absent.
    pub fn load(path: &Path) -> Result<(String, Self)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let (id, graph) = Self::from_json_str(&text).map_err(|e| match e {
            Error::Json(j) => Error::Parse {
                path: path.to_path_buf(),
                line: j.line(),
                msg: j.to_string(),
            },
            other => other,
        })?;
        let id = id.unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        });
        Ok((id, graph))
    }

    pub fn to_file(&self, id: Option<&str>) -> GraphFile {
        GraphFile {
            id: id.map(str::to_owned),
            entities: self.entities.clone(),
            relations: self.relations.clone(),
            triples: self
                .triples
                .iter()
                .map(|t| {
                    [
                        self.entities[t.head].clone(),
                        self.relations[t.relation].clone(),
                        self.entities[t.tail].clone(),
                    ]
                })
                .collect(),
        }
    }
}

/// On-disk graph representation; triples reference names, not indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    pub triples: Vec<[String; 3]>,
}

impl GraphFile {
    pub fn resolve(self) -> Result<(Option<String>, KnowledgeGraph)> {
        let entities: Vec<String> = self.entities.iter().map(|e| entity_token(e)).collect();
        let ent: HashMap<&str, usize> = entities
            .iter()
            .enumerate()
            .map(|(i, e)| (e.as_str(), i))
            .collect();
        let rel: HashMap<&str, usize> = self
            .relations
            .iter()
            .enumerate()
            .map(|(i, r)| (r.as_str(), i))
            .collect();
        let mut triples = Vec::with_capacity(self.triples.len());
        for [h, r, t] in &self.triples {
            let lookup_ent = |name: &str| {
                ent.get(entity_token(name).as_str())
                    .copied()
                    .ok_or_else(|| Error::Data(format!("triple references unknown entity {name}")))
            };
            let head = lookup_ent(h)?;
            let tail = lookup_ent(t)?;
            let relation = *rel
                .get(r.as_str())
                .ok_or_else(|| Error::Data(format!("triple references unknown relation {r}")))?;
            triples.push(Triple::new(head, relation, tail));
        }
        let graph = KnowledgeGraph::new(entities.clone(), self.relations, triples)?;
        Ok((self.id, graph))
    }
}

/// Dense binary `[|V|, |L|, |V|]` tensor with `A[i, j, y] = 1` iff
/// `(i, j, y)` is a triple.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyTensor {
    num_entities: usize,
    num_relations: usize,
    bits: Vec<u8>,
    ones: Vec<(usize, usize, usize)>,
}

impl AdjacencyTensor {
    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn get(&self, head: usize, relation: usize, tail: usize) -> u8 {
        self.bits[(head * self.num_relations + relation) * self.num_entities + tail]
    }

    /// Flat row-major entries.
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// Coordinates of every one, in row-major order.
    pub fn ones(&self) -> &[(usize, usize, usize)] {
        &self.ones
    }

    pub fn count_ones(&self) -> usize {
        self.ones.len()
    }

    /// Reads the triple set back out of the tensor.
    pub fn to_triples(&self) -> BTreeSet<Triple> {
        let mut out = BTreeSet::new();
        for h in 0..self.num_entities {
            for r in 0..self.num_relations {
                for t in 0..self.num_entities {
                    if self.get(h, r, t) == 1 {
                        out.insert(Triple::new(h, r, t));
                    }
                }
            }
        }
        out
    }
}

pub fn build_adjacency(graph: &KnowledgeGraph) -> AdjacencyTensor {
    let (v, l) = (graph.num_entities(), graph.num_relations());
    let mut bits = vec![0u8; v * l * v];
    for t in graph.triples() {
        bits[(t.head * l + t.relation) * v + t.tail] = 1;
    }
    let ones = graph
        .triples()
        .map(|t| (t.head, t.relation, t.tail))
        .collect();
    AdjacencyTensor {
        num_entities: v,
        num_relations: l,
        bits,
        ones,
    }
}

/// Binary vector over entities: 1 where the entity's token occurs in `tokens`.
pub fn entity_indicator<S: AsRef<str>>(tokens: &[S], graph: &KnowledgeGraph) -> Vec<f64> {
    let mut s = vec![0.0; graph.num_entities()];
    for tok in tokens {
        if let Some(i) = graph.entity_id(tok.as_ref()) {
            s[i] = 1.0;
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MutationKind {
    /// Keep head and relation, move the edge to another tail.
    TailSwap,
    /// Keep head and tail, relabel the edge with another relation.
    RelationSwap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GraphMutation {
    pub removed: Triple,
    pub added: Triple,
    pub kind: MutationKind,
}

impl GraphMutation {
    pub fn apply(&self, graph: &KnowledgeGraph) -> Result<KnowledgeGraph> {
        if !graph.contains(&self.removed) {
            return Err(Error::Data("mutation removes a triple not in the graph".into()));
        }
        if graph.contains(&self.added) {
            return Err(Error::Data("mutation adds a triple already in the graph".into()));
        }
        let mut triples = graph.triples.clone();
        triples.remove(&self.removed);
        triples.insert(self.added);
        Ok(graph.with_triples(triples))
    }
}

fn candidates(graph: &KnowledgeGraph, t: Triple, kind: MutationKind) -> Vec<Triple> {
    match kind {
        MutationKind::TailSwap => (0..graph.num_entities())
            .filter(|&y| y != t.tail)
            .map(|y| Triple::new(t.head, t.relation, y))
            .filter(|c| !graph.contains(c))
            .collect(),
        MutationKind::RelationSwap => (0..graph.num_relations())
            .filter(|&r| r != t.relation)
            .map(|r| Triple::new(t.head, r, t.tail))
            .filter(|c| !graph.contains(c))
            .collect(),
    }
}

/// Whether `triple` admits at least one mutation of `kind`.
pub fn is_mutable(graph: &KnowledgeGraph, triple: Triple, kind: MutationKind) -> bool {
    !candidates(graph, triple, kind).is_empty()
}

/// Mutates `triple`, drawing the replacement uniformly among valid candidates.
pub fn mutate_triple<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    triple: Triple,
    rng: &mut R,
    kind: MutationKind,
) -> Result<(KnowledgeGraph, GraphMutation)> {
    if !graph.contains(&triple) {
        return Err(Error::Usage("cannot mutate a triple outside the graph".into()));
    }
    let cands = candidates(graph, triple, kind);
    if cands.is_empty() {
        return Err(Error::UnmutableGraph(format!(
            "no {kind:?} candidate for ({}, {}, {})",
            triple.head, triple.relation, triple.tail
        )));
    }
    let added = cands[rng.gen_range(0..cands.len())];
    let m = GraphMutation {
        removed: triple,
        added,
        kind,
    };
    Ok((m.apply(graph)?, m))
}

/// Replaces one uniformly chosen mutable triple.
pub fn mutate<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    rng: &mut R,
    kind: MutationKind,
) -> Result<(KnowledgeGraph, GraphMutation)> {
    if graph.num_triples() == 0 {
        return Err(Error::UnmutableGraph("graph has no triples".into()));
    }
    match kind {
        MutationKind::TailSwap if graph.num_entities() < 2 => {
            return Err(Error::UnmutableGraph("tail swap needs two entities".into()))
        }
        MutationKind::RelationSwap if graph.num_relations() < 2 => {
            return Err(Error::UnmutableGraph("relation swap needs two relations".into()))
        }
        _ => {}
    }
    let eligible: Vec<Triple> = graph
        .triples()
        .filter(|t| is_mutable(graph, *t, kind))
        .collect();
    if eligible.is_empty() {
        return Err(Error::UnmutableGraph(format!(
            "every triple is saturated for {kind:?}"
        )));
    }
    let chosen = eligible[rng.gen_range(0..eligible.len())];
    mutate_triple(graph, chosen, rng, kind)
}

/// Applies `count` successive single-triple mutations.
pub fn mutate_n<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    rng: &mut R,
    kind: MutationKind,
    count: usize,
) -> Result<(KnowledgeGraph, Vec<GraphMutation>)> {
    let mut g = graph.clone();
    let mut applied = Vec::with_capacity(count);
    for _ in 0..count {
        let (next, m) = mutate(&g, rng, kind)?;
        g = next;
        applied.push(m);
    }
    Ok((g, applied))
}
