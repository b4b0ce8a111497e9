use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::Rng;

use super::TrainConfig;
use crate::corpus::{DialogueSample, EncodedSample, SampleTag, Vocabulary};
use crate::error::{Error, Result};
use crate::kg::{
    build_adjacency, is_mutable, mutate, mutate_triple, AdjacencyTensor, GraphMutation,
    KnowledgeGraph, MutationKind, Triple,
};

/// Clean and adversarial support/query sets sharing one graph regime.
#[derive(Debug, Clone)]
pub struct Episode {
    pub clean_support: Vec<DialogueSample>,
    pub adv_support: Vec<DialogueSample>,
    pub clean_query: Vec<DialogueSample>,
    pub adv_query: Vec<DialogueSample>,
    /// Applied mutations; the first one is the triple the adversarial samples depend on.
    pub mutations: Vec<GraphMutation>,
    pub mutated: KnowledgeGraph,
}

impl Episode {
    pub fn mutation(&self) -> &GraphMutation {
        &self.mutations[0]
    }
}

/// Entities reachable from `start` in exactly `steps` hops.
fn frontier(graph: &KnowledgeGraph, start: &BTreeSet<usize>, steps: usize) -> BTreeSet<usize> {
    let mut cur = start.clone();
    for _ in 0..steps {
        cur = cur
            .iter()
            .flat_map(|&h| graph.outgoing(h).map(|t| t.tail))
            .collect();
    }
    cur
}

fn depends_on(sample: &DialogueSample, graph: &KnowledgeGraph, triple: Triple, hops: usize) -> bool {
    let answer = &graph.entities()[triple.tail];
    if !sample.response.iter().any(|t| t == answer) {
        return false;
    }
    let named_relations: BTreeSet<usize> = sample
        .context
        .iter()
        .filter_map(|t| graph.relation_id(t))
        .collect();
    if !named_relations.is_empty() && !named_relations.contains(&triple.relation) {
        return false;
    }
    let start: BTreeSet<usize> = sample
        .context
        .iter()
        .filter_map(|t| graph.entity_id(t))
        .collect();
    frontier(graph, &start, hops.saturating_sub(1)).contains(&triple.head)
}

/// Indices of samples whose response depends on `triple`: the response names
/// its tail, a context entity reaches its head in `hops - 1` steps, and, when
/// the context names relations, the triple's relation is among them.
pub fn eligible_samples(
    samples: &[DialogueSample],
    graph: &KnowledgeGraph,
    triple: Triple,
    hops: usize,
) -> Vec<usize> {
    samples
        .iter()
        .enumerate()
        .filter(|(_, s)| depends_on(s, graph, triple, hops))
        .map(|(i, _)| i)
        .collect()
}

/// Response with the mutated triple's old entity (or relation) token replaced by the new one.
pub fn rewrite_response(
    sample: &DialogueSample,
    base: &KnowledgeGraph,
    mutation: &GraphMutation,
    graph_id: &str,
) -> DialogueSample {
    let (from, to) = match mutation.kind {
        MutationKind::TailSwap => (
            &base.entities()[mutation.removed.tail],
            &base.entities()[mutation.added.tail],
        ),
        MutationKind::RelationSwap => (
            &base.relations()[mutation.removed.relation],
            &base.relations()[mutation.added.relation],
        ),
    };
    DialogueSample {
        context: sample.context.clone(),
        response: sample
            .response
            .iter()
            .map(|t| if t == from { to.clone() } else { t.clone() })
            .collect(),
        graph_id: graph_id.to_string(),
        tag: SampleTag::Adversarial,
    }
}

/// Draws one mutation and the four sample sets of an episode.
///
/// The mutated triple is chosen uniformly among mutable triples with at least
/// `support_size + query_size` dependent samples. Adversarial supports and
/// queries are disjoint rewrites of those samples; clean supports and
/// queries are a disjoint draw from all of `samples`.
pub fn sample_episode<R: Rng + ?Sized>(
    samples: &[DialogueSample],
    graph: &KnowledgeGraph,
    hops: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Episode> {
    let need = cfg.support_size + cfg.query_size;
    if samples.len() < need {
        return Err(Error::Sampling(format!(
            "{} samples available, episode needs {need}",
            samples.len()
        )));
    }
    let candidates: Vec<(Triple, Vec<usize>)> = graph
        .triples()
        .filter(|t| is_mutable(graph, *t, cfg.mutation_kind))
        .map(|t| (t, eligible_samples(samples, graph, t, hops)))
        .filter(|(_, e)| e.len() >= need)
        .collect();
    if candidates.is_empty() {
        return Err(Error::Sampling(format!(
            "no mutable triple has {need} dependent samples"
        )));
    }
    let (triple, eligible) = &candidates[rng.gen_range(0..candidates.len())];
    let (mut mutated, first) = mutate_triple(graph, *triple, rng, cfg.mutation_kind)?;
    let mut mutations = vec![first];
    for _ in 1..cfg.mutations {
        let (next, m) = mutate(&mutated, rng, cfg.mutation_kind)?;
        mutated = next;
        mutations.push(m);
    }

    let graph_id = samples
        .first()
        .map(|s| format!("{}+mutated", s.graph_id))
        .unwrap_or_default();
    let adv: Vec<DialogueSample> = sample_indices(rng, eligible.len(), need)
        .into_iter()
        .map(|i| rewrite_response(&samples[eligible[i]], graph, &first, &graph_id))
        .collect();
    let clean: Vec<DialogueSample> = sample_indices(rng, samples.len(), need)
        .into_iter()
        .map(|i| samples[i].clone())
        .collect();
    let k = cfg.support_size;
    Ok(Episode {
        clean_support: clean[..k].to_vec(),
        clean_query: clean[k..].to_vec(),
        adv_support: adv[..k].to_vec(),
        adv_query: adv[k..].to_vec(),
        mutations,
        mutated,
    })
}

/// An episode mapped to vocabulary indices and adjacency tensors.
#[derive(Debug, Clone)]
pub struct EncodedEpisode {
    pub clean_support: Vec<EncodedSample>,
    pub adv_support: Vec<EncodedSample>,
    pub clean_query: Vec<EncodedSample>,
    pub adv_query: Vec<EncodedSample>,
    pub base: Arc<AdjacencyTensor>,
    pub mutated: Arc<AdjacencyTensor>,
}

pub fn encode_episode(
    episode: &Episode,
    vocab: &Vocabulary,
    base: Arc<AdjacencyTensor>,
) -> EncodedEpisode {
    let enc = |set: &[DialogueSample]| set.iter().map(|s| vocab.encode(s)).collect();
    EncodedEpisode {
        clean_support: enc(&episode.clean_support),
        adv_support: enc(&episode.adv_support),
        clean_query: enc(&episode.clean_query),
        adv_query: enc(&episode.adv_query),
        base,
        mutated: Arc::new(build_adjacency(&episode.mutated)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn graph() -> KnowledgeGraph {
        KnowledgeGraph::new(
            toks("Jin-Xi Feng-Ruozhao Nian-Shilan Su-Peisheng"),
            toks("enemy friend"),
            [Triple::new(0, 0, 1), Triple::new(3, 1, 0)],
        )
        .unwrap()
    }

    fn sample(c: &str, r: &str) -> DialogueSample {
        DialogueSample {
            context: toks(c),
            response: toks(r),
            graph_id: "g".into(),
            tag: SampleTag::Clean,
        }
    }

    fn seven() -> Vec<DialogueSample> {
        (0..7)
            .map(|i| sample(&format!("who is the enemy of Jin-Xi {i} ?"), "it is Feng-Ruozhao"))
            .collect()
    }

    #[test]
    fn exactly_seven_eligible_are_exhausted_disjointly() {
        let g = graph();
        let cfg = TrainConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = seven();
        let ep = sample_episode(&s, &g, 1, &cfg, &mut rng).unwrap();
        assert_eq!(ep.adv_support.len(), 3);
        assert_eq!(ep.adv_query.len(), 4);
        let mut contexts: Vec<_> = ep
            .adv_support
            .iter()
            .chain(&ep.adv_query)
            .map(|x| x.context.clone())
            .collect();
        contexts.sort();
        contexts.dedup();
        assert_eq!(contexts.len(), 7);
        let mut clean: Vec<_> = ep
            .clean_support
            .iter()
            .chain(&ep.clean_query)
            .map(|x| x.context.clone())
            .collect();
        clean.sort();
        clean.dedup();
        assert_eq!(clean.len(), 7);
    }

    #[test]
    fn tail_swap_rewrites_every_adversarial_response() {
        let g = graph();
        let cfg = TrainConfig::default();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ep = sample_episode(&seven(), &g, 1, &cfg, &mut rng).unwrap();
            let m = ep.mutation();
            assert_eq!(m.removed, Triple::new(0, 0, 1));
            let new_tail = &g.entities()[m.added.tail];
            for s in ep.adv_support.iter().chain(&ep.adv_query) {
                assert!(!s.response.iter().any(|t| t == "Feng-Ruozhao"));
                assert!(s.response.contains(new_tail));
                assert_eq!(s.tag, SampleTag::Adversarial);
            }
            for s in ep.clean_support.iter().chain(&ep.clean_query) {
                assert!(s.response.iter().any(|t| t == "Feng-Ruozhao"));
            }
            assert!(ep.mutated.contains(&m.added));
            assert!(!ep.mutated.contains(&m.removed));
        }
    }

    #[test]
    fn enemy_edge_rewrite_names_new_tail() {
        let g = graph();
        let m = GraphMutation {
            removed: Triple::new(0, 0, 1),
            added: Triple::new(0, 0, 2),
            kind: MutationKind::TailSwap,
        };
        let s = sample("who is the enemy of Jin-Xi ?", "Feng-Ruozhao of course , Feng-Ruozhao");
        let r = rewrite_response(&s, &g, &m, "g2");
        assert_eq!(r.response, toks("Nian-Shilan of course , Nian-Shilan"));
        assert_eq!(r.context, s.context);
    }

    #[test]
    fn too_few_eligible_is_sampling_error() {
        let g = graph();
        let mut s = seven();
        s.pop();
        s.push(sample("hello there", "hi"));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_episode(&s, &g, 1, &TrainConfig::default(), &mut rng).unwrap_err();
        assert!(matches!(err, Error::Sampling(_)), "{err}");
    }

    #[test]
    fn two_hop_eligibility_follows_paths() {
        let g = graph();
        // Su-Peisheng -friend-> Jin-Xi -enemy-> Feng-Ruozhao
        let s = sample("the enemy of the friend of Su-Peisheng", "Feng-Ruozhao");
        assert_eq!(eligible_samples(&[s.clone()], &g, Triple::new(0, 0, 1), 2), vec![0]);
        assert!(eligible_samples(&[s], &g, Triple::new(0, 0, 1), 1).is_empty());
    }
}
