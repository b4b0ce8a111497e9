//! Evaluation metrics: BLEU, perplexity, distinct-n and keyword metrics.
//!
//! Ratios that would be `0/0` are reported as `None`.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedSample, Vocabulary};
use crate::error::{Error, Result};
use crate::kg::AdjacencyTensor;
use crate::model::{argmax, generate, teacher_forced_outputs, total_loss, ModelParams};

pub const BLEU_ORDER: usize = 4;
pub const BLEU_SMOOTHING: f64 = 1e-9;

fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus-level BLEU-4 with uniform weights and brevity penalty.
///
/// An order with no clipped matches contributes a precision of
/// `1e-9 / total` (or `1e-9` when there are no candidate n-grams).
pub fn bleu<T: AsRef<str>>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Usage("BLEU needs at least one candidate".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Usage(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    if references.iter().any(Vec::is_empty) {
        return Err(Error::Usage("BLEU references must be nonempty".into()));
    }
    let mut matched = [0usize; BLEU_ORDER];
    let mut total = [0usize; BLEU_ORDER];
    let (mut cand_len, mut ref_len) = (0, 0);
    for (c, r) in candidates.iter().zip(references) {
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=BLEU_ORDER {
            let rc = ngram_counts(r, n);
            for (g, k) in ngram_counts(c, n) {
                matched[n - 1] += k.min(rc.get(&g).copied().unwrap_or(0));
                total[n - 1] += k;
            }
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let log_p: f64 = (0..BLEU_ORDER)
        .map(|i| {
            let p = match (matched[i], total[i]) {
                (_, 0) => BLEU_SMOOTHING,
                (0, t) => BLEU_SMOOTHING / t as f64,
                (m, t) => m as f64 / t as f64,
            };
            p.ln() / BLEU_ORDER as f64
        })
        .sum();
    let bp = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(bp * log_p.exp())
}

/// `exp(total teacher-forced loss / total target tokens)`.
pub fn perplexity(
    params: &ModelParams,
    samples: &[EncodedSample],
    adj: &AdjacencyTensor,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Usage("perplexity needs at least one sample".into()));
    }
    let (loss, tokens) = total_loss(samples, params, adj)?;
    Ok((loss / tokens as f64).exp())
}

/// Unique n-grams over total n-grams across all candidates.
pub fn distinct_n<T: AsRef<str>>(candidates: &[Vec<T>], n: usize) -> Result<Option<f64>> {
    if n == 0 {
        return Err(Error::Usage("distinct-n needs n >= 1".into()));
    }
    let mut unique = BTreeSet::new();
    let mut total = 0usize;
    for c in candidates {
        if c.len() >= n {
            for w in c.windows(n) {
                unique.insert(w.iter().map(AsRef::as_ref).collect::<Vec<&str>>());
                total += 1;
            }
        }
    }
    Ok((total > 0).then(|| unique.len() as f64 / total as f64))
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Position-wise keyword scores under teacher forcing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PositionScores {
    pub kw_acc: Option<f64>,
    pub kw_generic_precision: Option<f64>,
    pub kw_generic_recall: Option<f64>,
}

/// Scores predicted tokens against references, one pair per position.
pub fn position_scores(
    pairs: impl IntoIterator<Item = (usize, usize)>,
    is_entity: impl Fn(usize) -> bool,
) -> PositionScores {
    let (mut ref_ent, mut exact, mut pred_ent, mut both) = (0, 0, 0, 0);
    for (pred, reference) in pairs {
        let (p, r) = (is_entity(pred), is_entity(reference));
        if r {
            ref_ent += 1;
            if pred == reference {
                exact += 1;
            }
        }
        if p {
            pred_ent += 1;
        }
        if p && r {
            both += 1;
        }
    }
    PositionScores {
        kw_acc: ratio(exact, ref_ent),
        kw_generic_precision: ratio(both, pred_ent),
        kw_generic_recall: ratio(both, ref_ent),
    }
}

/// Macro-averaged precision and recall of generated entity sets.
pub fn set_scores<'a>(
    pairs: impl IntoIterator<Item = (&'a BTreeSet<usize>, &'a BTreeSet<usize>)>,
) -> (Option<f64>, Option<f64>) {
    let (mut p_sum, mut p_n, mut r_sum, mut r_n) = (0.0, 0, 0.0, 0);
    for (generated, reference) in pairs {
        let hit = generated.intersection(reference).count();
        if let Some(p) = ratio(hit, generated.len()) {
            p_sum += p;
            p_n += 1;
        }
        if let Some(r) = ratio(hit, reference.len()) {
            r_sum += r;
            r_n += 1;
        }
    }
    (
        (p_n > 0).then(|| p_sum / p_n as f64),
        (r_n > 0).then(|| r_sum / r_n as f64),
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeywordScores {
    pub kw_acc: Option<f64>,
    pub kw_generic_precision: Option<f64>,
    pub kw_generic_recall: Option<f64>,
    pub generated_kw_precision: Option<f64>,
    pub generated_kw_recall: Option<f64>,
}

/// Free-running generations for every sample.
pub fn generate_all(
    params: &ModelParams,
    samples: &[EncodedSample],
    adj: &AdjacencyTensor,
    max_len: usize,
) -> Result<Vec<Vec<usize>>> {
    use rayon::prelude::*;
    samples
        .par_iter()
        .map(|s| generate(&s.context, &s.entities_in_context, params, adj, max_len))
        .collect()
}

fn entity_ids(tokens: &[usize], vocab: &Vocabulary) -> BTreeSet<usize> {
    tokens.iter().copied().filter(|&t| vocab.is_entity(t)).collect()
}

/// Teacher-forced position metrics plus set metrics over `generated`.
pub fn keyword_metrics(
    params: &ModelParams,
    samples: &[EncodedSample],
    adj: &AdjacencyTensor,
    vocab: &Vocabulary,
    generated: &[Vec<usize>],
) -> Result<KeywordScores> {
    use rayon::prelude::*;
    if samples.is_empty() {
        return Err(Error::Usage("keyword metrics need at least one sample".into()));
    }
    if generated.len() != samples.len() {
        return Err(Error::Usage("one generation per sample is required".into()));
    }
    let predictions: Vec<Vec<usize>> = samples
        .par_iter()
        .map(|s| -> Result<Vec<usize>> {
            Ok(teacher_forced_outputs(s, params, adj)?
                .iter()
                .map(|st| argmax(&st.output))
                .collect())
        })
        .collect::<Result<_>>()?;
    let pos = position_scores(
        predictions
            .iter()
            .zip(samples)
            .flat_map(|(p, s)| p.iter().copied().zip(s.response.iter().copied())),
        |t| vocab.is_entity(t),
    );
    let gen_sets: Vec<BTreeSet<usize>> = generated.iter().map(|g| entity_ids(g, vocab)).collect();
    let ref_sets: Vec<BTreeSet<usize>> =
        samples.iter().map(|s| entity_ids(&s.response, vocab)).collect();
    let (gp, gr) = set_scores(gen_sets.iter().zip(&ref_sets));
    Ok(KeywordScores {
        kw_acc: pos.kw_acc,
        kw_generic_precision: pos.kw_generic_precision,
        kw_generic_recall: pos.kw_generic_recall,
        generated_kw_precision: gp,
        generated_kw_recall: gr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub bleu: f64,
    pub ppl: f64,
    pub distinct_1: Option<f64>,
    pub distinct_2: Option<f64>,
    pub distinct_3: Option<f64>,
    pub distinct_4: Option<f64>,
    pub kw_acc: Option<f64>,
    pub kw_generic_precision: Option<f64>,
    pub kw_generic_recall: Option<f64>,
    pub generated_kw_precision: Option<f64>,
    pub generated_kw_recall: Option<f64>,
}

impl MetricsReport {
    /// Full evaluation of `params` on `samples`, generating up to `max_len` tokens.
    pub fn evaluate(
        params: &ModelParams,
        samples: &[EncodedSample],
        adj: &AdjacencyTensor,
        vocab: &Vocabulary,
        max_len: usize,
    ) -> Result<Self> {
        let generated = generate_all(params, samples, adj, max_len)?;
        let cands: Vec<Vec<String>> = generated.iter().map(|g| vocab.decode(g)).collect();
        let refs: Vec<Vec<String>> = samples
            .iter()
            .map(|s| vocab.decode(&s.response[..s.response.len() - 1]))
            .collect();
        let kw = keyword_metrics(params, samples, adj, vocab, &generated)?;
        Ok(Self {
            samples: samples.len(),
            bleu: bleu(&cands, &refs)?,
            ppl: perplexity(params, samples, adj)?,
            distinct_1: distinct_n(&cands, 1)?,
            distinct_2: distinct_n(&cands, 2)?,
            distinct_3: distinct_n(&cands, 3)?,
            distinct_4: distinct_n(&cands, 4)?,
            kw_acc: kw.kw_acc,
            kw_generic_precision: kw.kw_generic_precision,
            kw_generic_recall: kw.kw_generic_recall,
            generated_kw_precision: kw.generated_kw_precision,
            generated_kw_recall: kw.generated_kw_recall,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned two-row table: keyword columns, then generation-quality columns.
    pub fn to_table(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x));
        let rows = [
            vec![
                ("KW-Acc", fmt(self.kw_acc)),
                ("KW/Generic P", fmt(self.kw_generic_precision)),
                ("KW/Generic R", fmt(self.kw_generic_recall)),
                ("Generated-KW P", fmt(self.generated_kw_precision)),
                ("Generated-KW R", fmt(self.generated_kw_recall)),
            ],
            vec![
                ("BLEU", format!("{:.2}", 100.0 * self.bleu)),
                ("PPL", format!("{:.2}", self.ppl)),
                ("Dist-1", self.distinct_1.map_or("-".into(), |x| format!("{x:.3}"))),
                ("Dist-2", self.distinct_2.map_or("-".into(), |x| format!("{x:.3}"))),
                ("Dist-3", self.distinct_3.map_or("-".into(), |x| format!("{x:.3}"))),
                ("Dist-4", self.distinct_4.map_or("-".into(), |x| format!("{x:.3}"))),
            ],
        ];
        let mut out = String::new();
        for row in rows {
            let widths: Vec<usize> = row.iter().map(|(h, v)| h.len().max(v.len())).collect();
            let line = |cells: Vec<&str>| {
                cells
                    .iter()
                    .zip(&widths)
                    .map(|(c, w)| format!("{c:>w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
            };
            out.push_str(&line(row.iter().map(|(h, _)| *h).collect()));
            out.push('\n');
            out.push_str(&line(row.iter().map(|(_, v)| v.as_str()).collect()));
            out.push_str("\n\n");
        }
        out.push_str(&format!("samples: {}\n", self.samples));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identical_corpus_scores_one() {
        let c = vec![toks("the cat sat on the mat"), toks("a b c d e")];
        assert!((bleu(&c, &c).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_unigrams_score_near_zero() {
        let c = vec![toks("x y z w")];
        let r = vec![toks("a b c d")];
        assert!(bleu(&c, &r).unwrap() < 1e-8);
    }

    #[test]
    fn empty_candidates_rejected() {
        let empty: Vec<Vec<String>> = vec![];
        assert!(matches!(bleu(&empty, &empty), Err(Error::Usage(_))));
    }

    #[test]
    fn distinct_examples() {
        assert_eq!(distinct_n(&[toks("a b c")], 1).unwrap(), Some(1.0));
        assert_eq!(distinct_n(&[toks("a a"), toks("a a")], 1).unwrap(), Some(0.25));
        assert_eq!(distinct_n(&[toks("a b"), toks("c")], 3).unwrap(), None);
    }

    #[test]
    fn class_confusion_example() {
        // 0 is an entity, 1 and 2 are generic words.
        let pairs = [(0, 0), (1, 0), (2, 2)];
        let s = position_scores(pairs, |t| t == 0);
        assert_eq!(s.kw_generic_precision, Some(1.0));
        assert_eq!(s.kw_generic_recall, Some(0.5));
        assert_eq!(s.kw_acc, Some(0.5));
    }

    #[test]
    fn no_reference_entities_means_absent() {
        let s = position_scores([(1, 2), (2, 1)], |t| t == 0);
        assert_eq!(s.kw_acc, None);
        assert_eq!(s.kw_generic_recall, None);
        assert_eq!(s.kw_generic_precision, None);
    }

    #[test]
    fn equal_sets_give_perfect_generated_scores() {
        let a: BTreeSet<usize> = [7].into();
        assert_eq!(set_scores([(&a, &a)]), (Some(1.0), Some(1.0)));
        let empty = BTreeSet::new();
        assert_eq!(set_scores([(&empty, &empty)]), (None, None));
    }

    #[test]
    fn table_lists_every_column() {
        let r = MetricsReport {
            samples: 3,
            bleu: 0.2,
            ppl: 12.5,
            distinct_1: Some(0.5),
            distinct_2: Some(0.125),
            distinct_3: None,
            distinct_4: None,
            kw_acc: Some(0.4321),
            kw_generic_precision: None,
            kw_generic_recall: Some(1.0),
            generated_kw_precision: Some(0.75),
            generated_kw_recall: Some(0.25),
        };
        let t = r.to_table();
        for h in ["KW-Acc", "KW/Generic P", "Generated-KW R", "BLEU", "PPL", "Dist-4"] {
            assert!(t.contains(h), "{h}");
        }
        assert!(t.contains("43.21") && t.contains("0.125") && t.contains("12.50"));
    }
}
