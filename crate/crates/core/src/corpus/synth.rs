use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{corpus_to_string, write_atomic, DialogueSample, SampleTag};
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Triple};

const RELATION_NAMES: [&str; 9] = [
    "enemy", "friend", "servant", "sister", "mother", "rival", "teacher", "ally", "spouse",
];

fn default_contexts() -> Vec<String> {
    [
        "who is {path} ?",
        "tell me {path}",
        "do you know {path} ?",
        "i wonder about {path}",
    ]
    .map(String::from)
    .to_vec()
}

fn default_responses() -> Vec<String> {
    [
        "{t}",
        "{t} .",
        "it is {t}",
        "the answer is {t}",
        "i believe it is {t}",
        "i am sure it is {t}",
        "i am quite sure it is {t}",
        "i am quite sure that it is {t}",
    ]
    .map(String::from)
    .to_vec()
}

fn default_hops() -> usize {
    crate::model::DEFAULT_HOPS
}

fn default_graph_id() -> String {
    "synth".into()
}

/// Parameters of the synthetic dynamic-graph corpus.
///
/// Context templates use `{path}` for the relation path phrase; response
/// templates use `{t}` for the answer entity and are selected by the last
/// relation and the answer, so all samples that depend on one triple share a
/// response length (and hence a length bucket).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_triples: usize,
    pub n_samples: usize,
    pub hops: usize,
    pub context_templates: Vec<String>,
    pub response_templates: Vec<String>,
    pub graph_id: String,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_entities: 30,
            n_relations: 4,
            n_triples: 60,
            n_samples: 500,
            hops: default_hops(),
            context_templates: default_contexts(),
            response_templates: default_responses(),
            graph_id: default_graph_id(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub graph: KnowledgeGraph,
    pub samples: Vec<DialogueSample>,
}

fn entity_names(n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(2);
    (0..n).map(|i| format!("ent-{i:0width$}")).collect()
}

fn relation_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| match RELATION_NAMES.get(i) {
            Some(name) if n <= RELATION_NAMES.len() => name.to_string(),
            _ => format!("relation{i}"),
        })
        .collect()
}

/// `(head, relations)` paths on which every step has exactly one tail,
/// together with the endpoint.
fn determinate_paths(graph: &KnowledgeGraph, hops: usize) -> Vec<(usize, Vec<usize>, usize)> {
    fn walk(
        graph: &KnowledgeGraph,
        head: usize,
        node: usize,
        rels: &mut Vec<usize>,
        hops: usize,
        out: &mut Vec<(usize, Vec<usize>, usize)>,
    ) {
        if rels.len() == hops {
            out.push((head, rels.clone(), node));
            return;
        }
        for r in 0..graph.num_relations() {
            let mut tails = graph.tails(node, r);
            if let (Some(t), None) = (tails.next(), tails.next()) {
                rels.push(r);
                walk(graph, head, t, rels, hops, out);
                rels.pop();
            }
        }
    }
    let mut out = Vec::new();
    for h in 0..graph.num_entities() {
        walk(graph, h, h, &mut Vec::new(), hops, &mut out);
    }
    out
}

fn path_phrase(graph: &KnowledgeGraph, head: usize, rels: &[usize]) -> String {
    let mut phrase = graph.entities()[head].clone();
    for &r in rels {
        phrase = format!("the {} of {}", graph.relations()[r], phrase);
    }
    phrase
}

/// Random graph plus template dialogues whose answers follow a unique
/// `hops`-step relation path from the single entity named in the context.
pub fn synth_corpus(spec: &SynthSpec) -> Result<SynthOutput> {
    let (v, l) = (spec.n_entities, spec.n_relations);
    if v < 2 || l < 1 {
        return Err(Error::Config(
            "synthetic graph needs at least two entities and one relation".into(),
        ));
    }
    let capacity = v * l * (v - 1);
    if spec.n_triples > capacity {
        return Err(Error::Config(format!(
            "{} triples requested but only {capacity} fit {v} entities and {l} relations",
            spec.n_triples
        )));
    }
    if spec.hops == 0 {
        return Err(Error::Config("hops must be at least 1".into()));
    }
    if spec.context_templates.is_empty() || spec.response_templates.is_empty() {
        return Err(Error::Config("template lists must be nonempty".into()));
    }
    if spec.context_templates.iter().any(|t| !t.contains("{path}"))
        || spec.response_templates.iter().any(|t| !t.contains("{t}"))
    {
        return Err(Error::Config(
            "context templates need {path}, response templates need {t}".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Off-diagonal (head, relation, tail) cells enumerated row-major.
    let triples = sample_indices(&mut rng, capacity, spec.n_triples)
        .into_vec()
        .into_iter()
        .map(|idx| {
            let head = idx / (l * (v - 1));
            let rest = idx % (l * (v - 1));
            let relation = rest / (v - 1);
            let off = rest % (v - 1);
            let tail = if off >= head { off + 1 } else { off };
            Triple::new(head, relation, tail)
        });
    let graph = KnowledgeGraph::new(entity_names(v), relation_names(l), triples)?;

    let mut samples = Vec::with_capacity(spec.n_samples);
    if spec.n_samples > 0 {
        let paths = determinate_paths(&graph, spec.hops);
        if paths.is_empty() {
            return Err(Error::Config(format!(
                "graph has no unambiguous {}-hop path; add triples",
                spec.hops
            )));
        }
        for _ in 0..spec.n_samples {
            let (head, rels, answer) = &paths[rng.gen_range(0..paths.len())];
            let ctx = &spec.context_templates[rng.gen_range(0..spec.context_templates.len())];
            let last = *rels.last().expect("hops >= 1");
            let resp = &spec.response_templates[(last + answer) % spec.response_templates.len()];
            let context = ctx.replace("{path}", &path_phrase(&graph, *head, rels));
            let response = resp.replace("{t}", &graph.entities()[*answer]);
            samples.push(DialogueSample {
                context: context.split_whitespace().map(String::from).collect(),
                response: response.split_whitespace().map(String::from).collect(),
                graph_id: spec.graph_id.clone(),
                tag: SampleTag::Clean,
            });
        }
    }
    Ok(SynthOutput { graph, samples })
}

/// Writes `graph.json` and `corpus.jsonl` under `dir`.
pub fn write_synth(out: &SynthOutput, spec: &SynthSpec, dir: &Path) -> Result<()> {
    let graph_json = serde_json::to_string_pretty(&out.graph.to_file(Some(&spec.graph_id)))?;
    write_atomic(&dir.join("graph.json"), graph_json.as_bytes())?;
    write_atomic(
        &dir.join("corpus.jsonl"),
        corpus_to_string(&out.samples)?.as_bytes(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::build_adjacency;

    #[test]
    fn zero_samples_gives_graph_only() {
        let spec = SynthSpec {
            n_samples: 0,
            ..SynthSpec::default()
        };
        let out = synth_corpus(&spec).unwrap();
        assert!(out.samples.is_empty());
        assert_eq!(out.graph.num_triples(), spec.n_triples);
    }

    #[test]
    fn infeasible_triple_count_rejected() {
        let spec = SynthSpec {
            n_entities: 3,
            n_relations: 1,
            n_triples: 7,
            ..SynthSpec::default()
        };
        assert!(matches!(synth_corpus(&spec), Err(Error::Config(_))));
        let full = SynthSpec {
            n_triples: 6,
            n_samples: 0,
            ..spec
        };
        assert_eq!(synth_corpus(&full).unwrap().graph.num_triples(), 6);
    }

    #[test]
    fn responses_are_reachable_from_context() {
        for hops in 1..=2 {
            let spec = SynthSpec {
                hops,
                seed: 9,
                ..SynthSpec::default()
            };
            let out = synth_corpus(&spec).unwrap();
            let a = build_adjacency(&out.graph);
            for s in &out.samples {
                let ctx: Vec<usize> =
                    s.context.iter().filter_map(|t| out.graph.entity_id(t)).collect();
                let ans: Vec<usize> =
                    s.response.iter().filter_map(|t| out.graph.entity_id(t)).collect();
                assert_eq!(ctx.len(), 1);
                assert_eq!(ans.len(), 1);
                // frontier after exactly `hops` steps
                let mut frontier = vec![ctx[0]];
                for _ in 0..hops {
                    frontier = a
                        .ones()
                        .iter()
                        .filter(|(h, _, _)| frontier.contains(h))
                        .map(|(_, _, t)| *t)
                        .collect();
                }
                assert!(frontier.contains(&ans[0]));
            }
        }
    }

    #[test]
    fn same_seed_same_output() {
        let spec = SynthSpec {
            seed: 5,
            ..SynthSpec::default()
        };
        let a = synth_corpus(&spec).unwrap();
        let b = synth_corpus(&spec).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.graph, b.graph);
        let c = synth_corpus(&SynthSpec { seed: 6, ..spec }).unwrap();
        assert_ne!(a.samples, c.samples);
    }
}
