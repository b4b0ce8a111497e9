use super::*;
use crate::kg::{build_adjacency, KnowledgeGraph, Triple};

fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn graph(v: usize, l: usize, triples: &[(usize, usize, usize)]) -> KnowledgeGraph {
    KnowledgeGraph::new(
        names("e", v),
        names("r", l),
        triples.iter().map(|&(h, r, t)| Triple::new(h, r, t)),
    )
    .unwrap()
}

fn small(words: usize, entities: usize, relations: usize, hops: usize, seed: u64) -> ModelParams {
    let cfg = ModelConfig {
        hidden: 8,
        embedding: 6,
        hops,
        init_scale: 0.5,
    };
    ModelParams::init(
        cfg,
        Dims {
            words,
            entities,
            relations,
        },
        seed,
    )
    .unwrap()
}

fn zero(words: usize, entities: usize, relations: usize) -> ModelParams {
    let cfg = ModelConfig {
        hidden: 4,
        embedding: 4,
        hops: 1,
        init_scale: INIT_SCALE,
    };
    ModelParams::zeros(
        cfg,
        Dims {
            words,
            entities,
            relations,
        },
    )
    .unwrap()
}

fn sample(context: Vec<usize>, response: Vec<usize>, entities: usize, words: usize) -> EncodedSample {
    let mut s = vec![0.0; entities];
    for &c in &context {
        if c >= words && c < words + entities {
            s[c - words] = 1.0;
        }
    }
    EncodedSample {
        context,
        response,
        entities_in_context: s,
    }
}

#[test]
fn default_hidden_is_256() {
    let c = ModelConfig::default();
    assert_eq!((c.hidden, c.embedding, c.hops), (256, 256, 2));
}

#[test]
fn zero_parameters_encode_to_zero() {
    let p = zero(6, 2, 1);
    let e = encode(&[4], &p).unwrap();
    assert!(e.data().iter().all(|&v| v == 0.0));
}

#[test]
fn empty_encode_is_usage_error() {
    let p = zero(6, 2, 1);
    assert!(matches!(encode(&[], &p), Err(Error::Usage(_))));
}

#[test]
fn token_order_matters() {
    let p = small(8, 3, 2, 1, 4);
    let a = encode(&[4, 5, 6], &p).unwrap();
    let b = encode(&[6, 5, 4], &p).unwrap();
    assert_ne!(a, b);
}

#[test]
fn zero_controller_is_uniform() {
    let p = zero(9, 2, 1);
    let (c, w) = controller_step(&Tensor::vector(vec![0.3, -0.2, 0.1, 0.9]), &p).unwrap();
    assert!((c - 0.1).abs() < 1e-15);
    assert!(w.iter().all(|x| (x - 0.1).abs() < 1e-15));
}

#[test]
fn large_copy_logit_saturates_the_gate() {
    let mut p = zero(9, 2, 1);
    let id = p.controller_bias_id();
    p.tensors_mut().get_mut(id).data_mut()[9] = 800.0;
    let (c, w) = controller_step(&Tensor::zeros(&[4]), &p).unwrap();
    assert!((c - 1.0).abs() < 1e-15);
    assert!(w.iter().sum::<f64>() < 1e-300);
}

#[test]
fn gate_and_words_sum_to_one() {
    for seed in 0..10 {
        let p = small(10, 4, 2, 1, seed);
        let d = encode(&[4, 11, 6], &p).unwrap();
        let (c, w) = controller_step(&d, &p).unwrap();
        assert!((c + w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn relation_rows_are_distributions() {
    let p = zero(5, 3, 4);
    let r = relation_distribution(&Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]), &p).unwrap();
    assert_eq!(r.shape(), &[3, 4]);
    assert!(r.data().iter().all(|&x| (x - 0.25).abs() < 1e-15));

    let p = small(5, 3, 1, 1, 1);
    let r = relation_distribution(&Tensor::vector(vec![0.5; 8]), &p).unwrap();
    assert!(r.data().iter().all(|&x| x == 1.0));

    let p = small(5, 4, 3, 1, 2);
    let r = relation_distribution(&Tensor::vector(vec![0.7, -0.1, 0.4, 0.0, 0.2, -0.9, 0.3, 0.5]), &p)
        .unwrap();
    for row in r.data().chunks(3) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn transition_examples() {
    let empty = build_adjacency(&graph(3, 1, &[]));
    let r = Tensor::matrix(3, 1, vec![1.0; 3]).unwrap();
    assert!(transition(&r, &empty).unwrap().data().iter().all(|&x| x == 0.0));

    let chain = build_adjacency(&graph(3, 1, &[(0, 0, 1), (1, 0, 2)]));
    let t = transition(&r, &chain).unwrap();
    let mut expect = vec![0.0; 9];
    expect[1] = 1.0;
    expect[5] = 1.0;
    assert_eq!(t.data(), expect.as_slice());

    let two = build_adjacency(&graph(3, 2, &[(0, 0, 1)]));
    let half = Tensor::matrix(3, 2, vec![0.5; 6]).unwrap();
    let t = transition(&half, &two).unwrap();
    assert_eq!(t.data()[1], 0.5);
    assert_eq!(t.data().iter().filter(|&&x| x != 0.0).count(), 1);

    assert!(matches!(transition(&r, &two), Err(Error::Config(_))));
}

#[test]
fn multi_hop_examples() {
    let chain = build_adjacency(&graph(3, 1, &[(0, 0, 1), (1, 0, 2)]));
    let t = transition(&Tensor::matrix(3, 1, vec![1.0; 3]).unwrap(), &chain).unwrap();
    let (k, dead) = multi_hop(&[1.0, 0.0, 0.0], &t, 2).unwrap();
    assert_eq!(k, vec![0.0, 0.0, 1.0]);
    assert!(!dead);

    let (k, dead) = multi_hop(&[0.0, 0.0, 0.0], &t, 1).unwrap();
    assert!(dead);
    assert!(k.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));

    let two = build_adjacency(&graph(3, 2, &[(0, 0, 1)]));
    let t = transition(&Tensor::matrix(3, 2, vec![0.5; 6]).unwrap(), &two).unwrap();
    assert_eq!(multi_hop_mass(&[1.0, 0.0, 0.0], &t, 1).unwrap(), vec![0.0, 0.5, 0.0]);
    let (k, _) = multi_hop(&[1.0, 0.0, 0.0], &t, 1).unwrap();
    assert_eq!(k, vec![0.0, 1.0, 0.0]);

    assert!(matches!(multi_hop(&[1.0, 0.0, 0.0], &t, 0), Err(Error::Config(_))));
}

#[test]
fn closed_gate_puts_no_mass_on_entities() {
    let words = 6;
    let mut p = small(words, 3, 1, 1, 3);
    let id = p.controller_bias_id();
    p.tensors_mut().get_mut(id).data_mut()[words] = -1e4;
    let adj = build_adjacency(&graph(3, 1, &[(0, 0, 1)]));
    let st = decode_step(1, &Tensor::zeros(&[8]), &[1.0, 0.0, 0.0], &adj, &p).unwrap();
    assert_eq!(st.gate, 0.0);
    assert!(st.output[words..].iter().all(|&x| x == 0.0));
}

#[test]
fn open_gate_copies_the_entity_distribution() {
    let words = 6;
    let mut p = small(words, 3, 1, 1, 3);
    let id = p.controller_bias_id();
    let bias = p.tensors_mut().get_mut(id).data_mut();
    for b in bias[..words].iter_mut() {
        *b = -1e4;
    }
    let adj = build_adjacency(&graph(3, 1, &[(0, 0, 1), (0, 0, 2)]));
    let st = decode_step(1, &Tensor::zeros(&[8]), &[1.0, 0.0, 0.0], &adj, &p).unwrap();
    assert_eq!(st.gate, 1.0);
    assert!(st.output[..words].iter().all(|&x| x == 0.0));
    assert_eq!(&st.output[words..], st.entities.as_slice());
    assert!((st.entities[1] - 0.5).abs() < 1e-15);
}

#[test]
fn decode_output_sums_to_one() {
    let adj = build_adjacency(&graph(4, 2, &[(0, 0, 1), (1, 1, 2), (2, 0, 3), (3, 1, 0)]));
    for seed in 0..20 {
        let p = small(7, 4, 2, 2, seed);
        let st = decode_step(
            (seed as usize) % 11,
            &Tensor::vector(vec![0.1 * seed as f64 % 0.9; 8]),
            &[1.0, 0.0, 1.0, 0.0],
            &adj,
            &p,
        )
        .unwrap();
        assert!((st.output.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(st.output.iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn certain_model_has_zero_loss() {
    let words = 5;
    let mut p = small(words, 2, 1, 1, 0);
    let id = p.controller_bias_id();
    p.tensors_mut().get_mut(id).data_mut()[EOS_ID] = 1e4;
    let adj = build_adjacency(&graph(2, 1, &[(0, 0, 1)]));
    let s = sample(vec![4], vec![EOS_ID], 2, words);
    assert_eq!(sequence_loss(&s, &p, &adj).unwrap(), 0.0);
}

#[test]
fn uniform_model_over_twenty_tokens() {
    // 19 words and one entity: every output probability is 1/20.
    let p = zero(19, 1, 1);
    let adj = build_adjacency(&graph(1, 1, &[]));
    let s = sample(vec![4, 5], vec![7, 19, EOS_ID], 1, 19);
    let loss = sequence_loss(&s, &p, &adj).unwrap();
    assert!((loss - 3.0 * 20f64.ln()).abs() < 1e-12);
}

#[test]
fn out_of_vocabulary_response_is_data_error() {
    let p = small(5, 2, 1, 1, 0);
    let adj = build_adjacency(&graph(2, 1, &[]));
    let s = sample(vec![4], vec![7, EOS_ID], 2, 5);
    assert!(matches!(sequence_loss(&s, &p, &adj), Err(Error::Data(_))));
}

#[test]
fn eos_heavy_model_generates_nothing() {
    let words = 5;
    let mut p = small(words, 2, 1, 1, 0);
    let id = p.controller_bias_id();
    p.tensors_mut().get_mut(id).data_mut()[EOS_ID] = 50.0;
    let adj = build_adjacency(&graph(2, 1, &[(0, 0, 1)]));
    assert!(generate(&[4], &[0.0, 0.0], &p, &adj, 10).unwrap().is_empty());
}

#[test]
fn max_len_caps_generation() {
    let words = 5;
    let mut p = small(words, 2, 1, 1, 0);
    let id = p.controller_bias_id();
    p.tensors_mut().get_mut(id).data_mut()[4] = 50.0;
    let adj = build_adjacency(&graph(2, 1, &[(0, 0, 1)]));
    assert_eq!(generate(&[4], &[0.0, 0.0], &p, &adj, 1).unwrap(), vec![4]);
    assert_eq!(generate(&[4], &[0.0, 0.0], &p, &adj, 3).unwrap(), vec![4, 4, 4]);
    assert!(matches!(generate(&[4], &[0.0, 0.0], &p, &adj, 0), Err(Error::Usage(_))));
}

#[test]
fn argmax_prefers_lowest_index_on_ties() {
    assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    assert_eq!(argmax(&[0.5, 0.5]), 0);
}

#[test]
fn batch_gradient_is_mean_of_sample_gradients() {
    let p = small(6, 3, 2, 2, 9);
    let adj = build_adjacency(&graph(3, 2, &[(0, 0, 1), (1, 1, 2)]));
    let a = sample(vec![6, 4], vec![8, EOS_ID], 3, 6);
    let b = sample(vec![5, 7], vec![4, 8, EOS_ID], 3, 6);
    let (total, g) = batch_loss_grad(&[a.clone(), b.clone()], &p, &adj).unwrap();
    let (la, ga) = sample_loss_grad(&a, &p, &adj).unwrap();
    let (lb, gb) = sample_loss_grad(&b, &p, &adj).unwrap();
    assert_eq!(total, la + lb);
    for (id, t) in g.iter() {
        let ea = ga.get(id).unwrap().data();
        let eb = gb.get(id).unwrap().data();
        for ((x, y), z) in t.data().iter().zip(ea).zip(eb) {
            assert!((x - 0.5 * (y + z)).abs() < 1e-14);
        }
    }
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    use crate::corpus::{build_vocab, DialogueSample, SampleTag};
    let g = graph(3, 2, &[(0, 0, 1)]);
    let samples = vec![DialogueSample {
        context: vec!["who".into(), "e0".into()],
        response: vec!["e1".into()],
        graph_id: "g".into(),
        tag: SampleTag::Clean,
    }];
    let vocab = build_vocab(&samples, &g, 0).unwrap();
    let cfg = ModelConfig {
        hidden: 5,
        embedding: 3,
        hops: 2,
        init_scale: INIT_SCALE,
    };
    let dims = Dims {
        words: vocab.num_words(),
        entities: 3,
        relations: 2,
    };
    let p = ModelParams::init(cfg, dims, 17).unwrap();
    let ck = Checkpoint::new(
        vocab,
        &p,
        SeedLineage {
            init: 17,
            stages: vec![("train".into(), 3)],
        },
        serde_json::json!({"note": "x"}),
    )
    .unwrap();
    let text = ck.to_json().unwrap();
    let back = Checkpoint::from_json(&text).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_json().unwrap(), text);
    let q = back.model().unwrap();
    for ((_, _, a), (_, _, b)) in p.tensors().iter().zip(q.tensors().iter()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}

#[test]
fn mismatched_tensors_are_rejected() {
    let p = small(6, 3, 2, 1, 0);
    let other = small(7, 3, 2, 1, 0);
    assert!(matches!(
        p.with_tensors(other.into_tensors()),
        Err(Error::Config(_))
    ));
}

#[test]
fn zero_hops_rejected() {
    let cfg = ModelConfig {
        hops: 0,
        ..ModelConfig::default()
    };
    let dims = Dims {
        words: 5,
        entities: 2,
        relations: 1,
    };
    assert!(matches!(ModelParams::zeros(cfg, dims), Err(Error::Config(_))));
}
