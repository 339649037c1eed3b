//! TF-IDF ranking baseline over SMT-LIB tokens.

use std::collections::{BTreeMap, BTreeSet};

use crate::ranker::{RankedEntry, RankedList};
use crate::sygus::{InvariantCandidate, Problem};

/// Splits on whitespace and parentheses.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split(|c: char| c.is_whitespace() || c == '(' || c == ')')
        .filter(|t| !t.is_empty())
        .collect()
}

/// L2-normalised tf-idf vectors for `docs`, with smoothed idf
/// `ln((1 + n) / (1 + df)) + 1` computed over `docs` themselves.
pub fn tfidf_vectors(docs: &[&str]) -> Vec<BTreeMap<String, f64>> {
    let tokenized: Vec<Vec<&str>> = docs.iter().map(|d| tokenize(d)).collect();
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for toks in &tokenized {
        for t in toks.iter().copied().collect::<BTreeSet<_>>() {
            *df.entry(t).or_default() += 1;
        }
    }
    let n = docs.len() as f64;
    tokenized
        .iter()
        .map(|toks| {
            let mut tf: BTreeMap<String, f64> = BTreeMap::new();
            for t in toks {
                *tf.entry(t.to_string()).or_default() += 1.0;
            }
            for (t, w) in tf.iter_mut() {
                let idf = ((1.0 + n) / (1.0 + df[t.as_str()] as f64)).ln() + 1.0;
                *w *= idf;
            }
            let norm = tf.values().map(|w| w * w).sum::<f64>().sqrt();
            if norm > 0.0 {
                tf.values_mut().for_each(|w| *w /= norm);
            }
            tf
        })
        .collect()
}

fn sparse_dot(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum()
}

/// Ranks candidates by tf-idf cosine similarity to the problem text. The idf
/// corpus is the problem plus its candidates.
pub fn tfidf_rank(problem: &Problem, candidates: &[InvariantCandidate]) -> RankedList {
    let mut docs = vec![problem.raw_text.as_str()];
    docs.extend(candidates.iter().map(|c| c.raw_text.as_str()));
    let vecs = tfidf_vectors(&docs);
    let entries = candidates
        .iter()
        .zip(&vecs[1..])
        .map(|(c, v)| RankedEntry {
            candidate_id: c.id.clone(),
            generation_index: c.generation_index,
            score: sparse_dot(&vecs[0], v).clamp(0.0, 1.0),
        })
        .collect();
    RankedList::new(&problem.id, entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_parens() {
        assert_eq!(
            tokenize("(and (<= x 5)\n y)"),
            vec!["and", "<=", "x", "5", "y"]
        );
        assert!(tokenize("  ( ) ").is_empty());
    }

    #[test]
    fn vectors_are_normalised() {
        let v = tfidf_vectors(&["a b b", "b c", ""]);
        for d in &v[..2] {
            let n: f64 = d.values().map(|w| w * w).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert!(v[2].is_empty());
        // "a" is rarer than "b", so it carries more weight per occurrence
        let idf_a = (4.0f64 / 2.0).ln() + 1.0;
        let idf_b = (4.0f64 / 3.0).ln() + 1.0;
        let ratio = v[0]["b"] / v[0]["a"];
        assert!((ratio - 2.0 * idf_b / idf_a).abs() < 1e-12);
    }
}
