//! Generation quality metrics: corpus BLEU-4, a simplified METEOR,
//! target-word coverage, difficulty error, and grammaticality.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::grammar::Grammar;
use crate::corpus::vocab::{Vocabulary, WordId};
use crate::error::{Error, Result};
use crate::joint::sequence_difficulty;

/// Difficulty of a token sequence under a mastery vector (sum of 1 - s_w
/// over non-reserved tokens).
pub fn exercise_difficulty(tokens: &[WordId], mastery: &[f64]) -> f64 {
    sequence_difficulty(tokens, mastery)
}

fn ngram_counts(tokens: &[WordId], n: usize) -> HashMap<&[WordId], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-4 with add-one smoothed modified precisions and the standard
/// brevity penalty. Each candidate has a single reference.
pub fn bleu4(pairs: &[(Vec<WordId>, Vec<WordId>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Metric("BLEU over empty corpus".into()));
    }
    let mut log_p_sum = 0.0;
    for n in 1..=4 {
        let mut matched = 0usize;
        let mut total = 0usize;
        for (cand, reference) in pairs {
            let c = ngram_counts(cand, n);
            let r = ngram_counts(reference, n);
            for (gram, &count) in &c {
                total += count;
                matched += count.min(*r.get(gram).unwrap_or(&0));
            }
        }
        let p = (matched + 1) as f64 / (total + 1) as f64;
        log_p_sum += p.ln() / 4.0;
    }
    let c_len: usize = pairs.iter().map(|(c, _)| c.len()).sum();
    let r_len: usize = pairs.iter().map(|(_, r)| r.len()).sum();
    let bp = if c_len >= r_len || c_len == 0 {
        if c_len == 0 { 0.0 } else { 1.0 }
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    Ok(bp * log_p_sum.exp())
}

/// Simplified sentence METEOR: exact unigram alignment, harmonic mean
/// weighted toward recall, and the standard fragmentation penalty.
pub fn meteor_simplified(candidate: &[WordId], reference: &[WordId]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    // exact alignment: greedily match candidate tokens against unused
    // reference positions, preferring in-order positions to minimize chunks
    let mut used = vec![false; reference.len()];
    let mut alignment: Vec<Option<usize>> = Vec::with_capacity(candidate.len());
    let mut cursor = 0usize;
    for &w in candidate {
        let next = reference
            .iter()
            .enumerate()
            .position(|(j, &r)| !used[j] && r == w && j >= cursor)
            .or_else(|| reference.iter().enumerate().position(|(j, &r)| !used[j] && r == w));
        if let Some(j) = next {
            used[j] = true;
            alignment.push(Some(j));
            cursor = j + 1;
        } else {
            alignment.push(None);
        }
    }
    let m = alignment.iter().flatten().count() as f64;
    if m == 0.0 {
        return 0.0;
    }
    let p = m / candidate.len() as f64;
    let r = m / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    // chunks: maximal runs of matches that are contiguous in both sequences
    let mut chunks = 0usize;
    let mut prev: Option<usize> = None;
    for a in &alignment {
        match (a, prev) {
            (Some(j), Some(pj)) if *j == pj + 1 => {}
            (Some(_), _) => chunks += 1,
            (None, _) => {}
        }
        prev = *a;
    }
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    f_mean * (1.0 - penalty)
}

/// Mean simplified METEOR over a corpus.
pub fn meteor_corpus(pairs: &[(Vec<WordId>, Vec<WordId>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Metric("METEOR over empty corpus".into()));
    }
    Ok(pairs
        .iter()
        .map(|(c, r)| meteor_simplified(c, r))
        .sum::<f64>()
        / pairs.len() as f64)
}

/// Percentage of requested target words that appear in their decode. Items
/// with no targets are vacuously covered; an all-empty corpus scores 100.
pub fn kc_coverage(items: &[(Vec<WordId>, Vec<WordId>)]) -> f64 {
    let mut covered = 0usize;
    let mut total = 0usize;
    for (tokens, targets) in items {
        total += targets.len();
        covered += targets.iter().filter(|c| tokens.contains(c)).count();
    }
    if total == 0 {
        100.0
    } else {
        100.0 * covered as f64 / total as f64
    }
}

/// Mean absolute error between requested and realized difficulty.
pub fn d_mae(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Metric("D-MAE over empty corpus".into()));
    }
    Ok(pairs.iter().map(|(want, got)| (want - got).abs()).sum::<f64>() / pairs.len() as f64)
}

/// Percentage of decodes accepted by the grammar.
pub fn grammar_validity(
    decodes: &[Vec<WordId>],
    grammar: &Grammar,
    vocab: &Vocabulary,
) -> Result<f64> {
    if decodes.is_empty() {
        return Err(Error::Metric("grammar validity over empty corpus".into()));
    }
    let ok = decodes.iter().filter(|t| grammar.accepts(t, vocab)).count();
    Ok(100.0 * ok as f64 / decodes.len() as f64)
}

/// One generated exercise with everything needed to score it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenEvalItem {
    pub tokens: Vec<WordId>,
    pub reference: Vec<WordId>,
    pub targets: Vec<WordId>,
    pub requested_difficulty: f64,
    pub mastery: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerationReport {
    pub n: usize,
    pub bleu4: f64,
    pub meteor: f64,
    pub kc_coverage: f64,
    pub d_mae: f64,
    /// Only present when a grammar was supplied.
    pub grammar_validity: Option<f64>,
    /// Fraction of decodes whose exact token sequence occurs in the
    /// training corpus.
    pub seen_fraction: f64,
}

/// Score a batch of generations. `training_sentences` drives the
/// seen/unseen split; `grammar` enables the validity metric.
pub fn evaluate_generation(
    items: &[GenEvalItem],
    training_sentences: &HashSet<Vec<WordId>>,
    grammar: Option<(&Grammar, &Vocabulary)>,
) -> Result<GenerationReport> {
    if items.is_empty() {
        return Err(Error::Metric("no generations to evaluate".into()));
    }
    let pairs: Vec<(Vec<WordId>, Vec<WordId>)> = items
        .iter()
        .map(|i| (i.tokens.clone(), i.reference.clone()))
        .collect();
    let coverage_items: Vec<(Vec<WordId>, Vec<WordId>)> = items
        .iter()
        .map(|i| (i.tokens.clone(), i.targets.clone()))
        .collect();
    let d_pairs: Vec<(f64, f64)> = items
        .iter()
        .map(|i| {
            (
                i.requested_difficulty,
                exercise_difficulty(&i.tokens, &i.mastery),
            )
        })
        .collect();
    let seen = items
        .iter()
        .filter(|i| training_sentences.contains(&i.tokens))
        .count();
    let validity = match grammar {
        Some((g, v)) => {
            let decodes: Vec<Vec<WordId>> = items.iter().map(|i| i.tokens.clone()).collect();
            Some(grammar_validity(&decodes, g, v)?)
        }
        None => None,
    };
    Ok(GenerationReport {
        n: items.len(),
        bleu4: bleu4(&pairs)?,
        meteor: meteor_corpus(&pairs)?,
        kc_coverage: kc_coverage(&coverage_items),
        d_mae: d_mae(&d_pairs)?,
        grammar_validity: validity,
        seen_fraction: seen as f64 / items.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bleu_perfect_match_is_one() {
        let pairs = vec![(vec![4, 5, 6, 7, 8], vec![4, 5, 6, 7, 8])];
        assert!((bleu4(&pairs).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_hand_computed_partial_match() {
        // candidate [4,5,6,9], reference [4,5,6,7]
        // 1-grams: matched 3 of 4 -> (3+1)/(4+1) = 0.8
        // 2-grams: [45][56][69] matched 2 of 3 -> 3/4
        // 3-grams: [456][569] matched 1 of 2 -> 2/3
        // 4-grams: [4569] matched 0 of 1 -> 1/2
        // lengths equal -> BP = 1
        let pairs = vec![(vec![4, 5, 6, 9], vec![4, 5, 6, 7])];
        let expected = (0.8f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
        assert!((bleu4(&pairs).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn bleu_brevity_penalty() {
        // candidate shorter than reference: BP = exp(1 - r/c)
        let pairs = vec![(vec![4, 5], vec![4, 5, 6, 7])];
        // p1 = (2+1)/(2+1)=1; p2 = (1+1)/(1+1)=1; p3 = 1/1; p4 = 1/1
        let expected = (1.0f64 - 4.0 / 2.0).exp();
        assert!((bleu4(&pairs).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn meteor_perfect_and_disjoint() {
        assert!((meteor_simplified(&[4, 5, 6], &[4, 5, 6]) - (1.0 - 0.5 / 27.0)).abs() < 1e-12);
        assert_eq!(meteor_simplified(&[4, 5], &[6, 7]), 0.0);
        assert_eq!(meteor_simplified(&[], &[4]), 0.0);
    }

    #[test]
    fn meteor_hand_computed_reordering() {
        // candidate [5,4] vs reference [4,5]: m=2, P=R=1, F=1
        // alignment positions [1,0]: two chunks -> penalty = 0.5*(2/2)^3 = 0.5
        let got = meteor_simplified(&[5, 4], &[4, 5]);
        assert!((got - 0.5).abs() < 1e-12);
    }

    #[test]
    fn coverage_example() {
        // six targets across three decodes, five covered -> 83.33%
        let items = vec![
            (vec![4, 5, 6], vec![4, 5]),
            (vec![7, 8], vec![7, 9]),
            (vec![10, 11], vec![10, 11]),
        ];
        assert!((kc_coverage(&items) - 83.33333333333333).abs() < 1e-9);
        assert_eq!(kc_coverage(&[(vec![4], vec![])]), 100.0);
        assert_eq!(kc_coverage(&[]), 100.0);
    }

    #[test]
    fn d_mae_example() {
        let pairs = vec![(1.0, 1.5), (2.0, 1.0), (0.5, 0.5)];
        assert!((d_mae(&pairs).unwrap() - 0.5).abs() < 1e-12);
        assert!(d_mae(&[]).is_err());
    }

    #[test]
    fn validity_on_synthetic_grammar() {
        let g = Grammar::synthetic(10);
        let vocab = g.build_vocabulary().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        use rand::SeedableRng;
        let good = g.sample(&vocab, &mut rng);
        let mut bad = good.clone();
        bad.reverse();
        let pct = grammar_validity(&[good, bad], &g, &vocab).unwrap();
        assert_eq!(pct, 50.0);
    }

    #[test]
    fn report_assembles_and_flags_seen() {
        let items = vec![
            GenEvalItem {
                tokens: vec![4, 5],
                reference: vec![4, 5],
                targets: vec![4],
                requested_difficulty: 1.0,
                mastery: vec![0.5; 8],
            },
            GenEvalItem {
                tokens: vec![6, 7],
                reference: vec![6, 5],
                targets: vec![7],
                requested_difficulty: 1.0,
                mastery: vec![0.5; 8],
            },
        ];
        let mut train = HashSet::new();
        train.insert(vec![4, 5]);
        let report = evaluate_generation(&items, &train, None).unwrap();
        assert_eq!(report.n, 2);
        assert_eq!(report.kc_coverage, 100.0);
        assert_eq!(report.seen_fraction, 0.5);
        assert!(report.grammar_validity.is_none());
        assert!((report.d_mae - 0.0).abs() < 1e-12);
    }
}
