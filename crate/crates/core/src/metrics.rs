//! Copy-aware generation metrics: ROUGE-1/2/L, copy precision, novel
//! n-gram percentages, normalized Damerau-Levenshtein similarity, and
//! switch-probability bucket analysis.
//!
//! Everything here is a pure function over token slices; corpus-level
//! numbers are macro averages (mean of per-example scores).

use crate::decode::GeneratedRecord;
use crate::vocab::tokenize;
use std::collections::{HashMap, HashSet};

/// Precision / recall / F1 triple, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Rouge {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn ngram_counts<T: Eq + std::hash::Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// N-gram overlap with multiset clipping: each hypothesis n-gram matches at
/// most as many times as it occurs in the reference. Zero denominators give
/// zero scores.
pub fn rouge_n(hyp: &[String], reference: &[String], n: usize) -> Rouge {
    assert!(n >= 1, "n-gram order must be at least 1");
    let hyp_counts = ngram_counts(hyp, n);
    let ref_counts = ngram_counts(reference, n);
    let overlap: usize = hyp_counts
        .iter()
        .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
        .sum();
    let n_hyp: usize = hyp_counts.values().sum();
    let n_ref: usize = ref_counts.values().sum();
    let precision = if n_hyp > 0 { overlap as f64 / n_hyp as f64 } else { 0.0 };
    let recall = if n_ref > 0 { overlap as f64 / n_ref as f64 } else { 0.0 };
    Rouge { precision, recall, f1: f1(precision, recall) }
}

fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest-common-subsequence ROUGE over the whole token sequences (no
/// sentence splitting).
pub fn rouge_l(hyp: &[String], reference: &[String]) -> Rouge {
    let lcs = lcs_len(hyp, reference);
    let precision = if hyp.is_empty() { 0.0 } else { lcs as f64 / hyp.len() as f64 };
    let recall = if reference.is_empty() { 0.0 } else { lcs as f64 / reference.len() as f64 };
    Rouge { precision, recall, f1: f1(precision, recall) }
}

/// Source / reference / hypothesis token views for copy precision.
#[derive(Debug, Clone)]
pub struct EvalTriple {
    pub src_tokens: Vec<String>,
    pub ref_tokens: Vec<String>,
    pub hyp_tokens: Vec<String>,
}

/// Over hypothesis token occurrences whose type appears in the source, the
/// fraction whose type also appears in the reference. 0 when no hypothesis
/// token comes from the source.
pub fn copy_precision(triple: &EvalTriple) -> f64 {
    let src: HashSet<&str> = triple.src_tokens.iter().map(|s| s.as_str()).collect();
    let reference: HashSet<&str> = triple.ref_tokens.iter().map(|s| s.as_str()).collect();
    let mut candidates = 0usize;
    let mut correct = 0usize;
    for tok in &triple.hyp_tokens {
        if src.contains(tok.as_str()) {
            candidates += 1;
            if reference.contains(tok.as_str()) {
                correct += 1;
            }
        }
    }
    if candidates == 0 {
        0.0
    } else {
        correct as f64 / candidates as f64
    }
}

/// Percentage of summary n-gram occurrences that never occur contiguously
/// in the source. 0 when the summary is shorter than n.
pub fn novel_ngram_pct(src: &[String], summary: &[String], n: usize) -> f64 {
    assert!(n >= 1, "n-gram order must be at least 1");
    if summary.len() < n {
        return 0.0;
    }
    let src_grams: HashSet<&[String]> = if src.len() >= n {
        src.windows(n).collect()
    } else {
        HashSet::new()
    };
    let total = summary.len() - n + 1;
    let novel = summary
        .windows(n)
        .filter(|w| !src_grams.contains(*w))
        .count();
    100.0 * novel as f64 / total as f64
}

/// Damerau-Levenshtein distance in the optimal-string-alignment variant
/// (insert, delete, substitute, adjacent transposition; no substring
/// moves).
fn osa_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (la, lb) = (a.len(), b.len());
    let cols = lb + 1;
    let mut d = vec![0usize; (la + 1) * cols];
    for i in 0..=la {
        d[i * cols] = i;
    }
    for j in 0..=lb {
        d[j] = j;
    }
    for i in 1..=la {
        for j in 1..=lb {
            let cost = if a[i - 1] == b[j - 1] { 0 } else { 1 };
            let mut best = (d[(i - 1) * cols + j] + 1)
                .min(d[i * cols + j - 1] + 1)
                .min(d[(i - 1) * cols + j - 1] + cost);
            if i > 1 && j > 1 && a[i - 1] == b[j - 2] && a[i - 2] == b[j - 1] {
                best = best.min(d[(i - 2) * cols + j - 2] + 1);
            }
            d[i * cols + j] = best;
        }
    }
    d[la * cols + lb]
}

/// 100 x (1 - OSA distance / max(len_a, len_b, 1)).
pub fn dld_similarity<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    let denom = a.len().max(b.len()).max(1);
    100.0 * (1.0 - osa_distance(a, b) as f64 / denom as f64)
}

/// Precision and population share for the two switch buckets. A bucket with
/// no members reports its precision as absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketReport {
    /// Precision among tokens with p_copy above the threshold.
    pub copy_precision: Option<f64>,
    pub copy_share_pct: f64,
    /// Precision among the remaining (generation-dominated) tokens.
    pub gen_precision: Option<f64>,
    pub gen_share_pct: f64,
}

/// Split tokens into a copy bucket (`p_copy > threshold`) and a generation
/// bucket (the rest) and report per-bucket precision of the aligned
/// correctness flags. `p_copy` and `correct` must be index-aligned.
pub fn bucket_precision_by_pcopy(
    p_copy: &[f64],
    correct: &[bool],
    threshold: f64,
) -> BucketReport {
    assert_eq!(
        p_copy.len(),
        correct.len(),
        "p_copy and correctness flags must align"
    );
    let mut counts = [0usize; 2]; // [copy, gen]
    let mut hits = [0usize; 2];
    for (&p, &ok) in p_copy.iter().zip(correct) {
        let bucket = usize::from(p <= threshold);
        counts[bucket] += 1;
        if ok {
            hits[bucket] += 1;
        }
    }
    let total = p_copy.len();
    let share = |c: usize| {
        if total == 0 {
            0.0
        } else {
            100.0 * c as f64 / total as f64
        }
    };
    let precision = |c: usize, h: usize| {
        if c == 0 {
            None
        } else {
            Some(h as f64 / c as f64)
        }
    };
    BucketReport {
        copy_precision: precision(counts[0], hits[0]),
        copy_share_pct: share(counts[0]),
        gen_precision: precision(counts[1], hits[1]),
        gen_share_pct: share(counts[1]),
    }
}

/// Corpus-level scores for a generation file: macro averages of the
/// per-example metrics in the evaluate report's column order.
#[derive(Debug, Clone, Copy, Default)]
pub struct GenerationReport {
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    pub rouge_l_f: f64,
    pub copy_precision: f64,
    /// Novel n-gram percentages for n = 1..=4.
    pub novel_ngram: [f64; 4],
    pub avg_p_copy: f64,
    pub n_examples: usize,
}

/// Score decoded records against their references.
pub fn evaluate_generation(records: &[GeneratedRecord]) -> GenerationReport {
    let mut report = GenerationReport { n_examples: records.len(), ..Default::default() };
    if records.is_empty() {
        return report;
    }
    for rec in records {
        let src = tokenize(&rec.src);
        let reference = tokenize(&rec.tgt);
        let hyp = tokenize(&rec.hyp);
        report.rouge1_f += rouge_n(&hyp, &reference, 1).f1;
        report.rouge2_f += rouge_n(&hyp, &reference, 2).f1;
        report.rouge_l_f += rouge_l(&hyp, &reference).f1;
        report.copy_precision += copy_precision(&EvalTriple {
            src_tokens: src.clone(),
            ref_tokens: reference.clone(),
            hyp_tokens: hyp.clone(),
        });
        for (i, slot) in report.novel_ngram.iter_mut().enumerate() {
            *slot += novel_ngram_pct(&src, &hyp, i + 1);
        }
        report.avg_p_copy += rec.avg_p_copy;
    }
    let inv = 1.0 / records.len() as f64;
    report.rouge1_f *= inv;
    report.rouge2_f *= inv;
    report.rouge_l_f *= inv;
    report.copy_precision *= inv;
    for slot in report.novel_ngram.iter_mut() {
        *slot *= inv;
    }
    report.avg_p_copy *= inv;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tok(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn rouge1_matches_the_worked_example() {
        let r = rouge_n(&tok("the cat sat"), &tok("the cat"), 1);
        assert!((r.recall - 1.0).abs() < 1e-12);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.f1 - 0.8).abs() < 1e-12);
    }

    #[test]
    fn rouge2_counts_bigram_overlap() {
        let r = rouge_n(&tok("a b c"), &tok("a b d"), 2);
        assert!((r.precision - 0.5).abs() < 1e-12);
        assert!((r.recall - 0.5).abs() < 1e-12);
        assert!((r.f1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rouge_identity_and_disjoint_endpoints() {
        let s = tok("north wolves won again");
        for n in 1..=3 {
            assert!((rouge_n(&s, &s, n).f1 - 1.0).abs() < 1e-12);
        }
        let r = rouge_n(&tok("a b"), &tok("c d"), 1);
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        // Order above the sequence length: empty counts on both sides.
        let short = rouge_n(&tok("a"), &tok("a"), 3);
        assert_eq!(short.f1, 0.0);
    }

    #[test]
    fn rouge_counts_duplicates_with_clipping() {
        // hyp has "a" twice, ref once: only one counts.
        let r = rouge_n(&tok("a a b"), &tok("a b b"), 1);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rouge_l_matches_the_worked_example() {
        let r = rouge_l(&tok("a c b"), &tok("a b c"));
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-12);
        let same = rouge_l(&tok("x y z"), &tok("x y z"));
        assert!((same.f1 - 1.0).abs() < 1e-12);
        let empty = rouge_l(&[], &tok("x"));
        assert_eq!(empty.f1, 0.0);
    }

    /// Longest common subsequence by exhaustive subsequence enumeration.
    fn lcs_brute(a: &[u8], b: &[u8]) -> usize {
        let mut best = 0;
        for mask in 0u32..(1 << a.len()) {
            let sub: Vec<u8> = a
                .iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, &x)| x)
                .collect();
            // Is sub a subsequence of b?
            let mut it = b.iter();
            if sub.iter().all(|x| it.any(|y| y == x)) {
                best = best.max(sub.len());
            }
        }
        best
    }

    #[test]
    fn lcs_agrees_with_brute_force_enumeration() {
        let cases = [
            (vec![0u8, 1, 2, 1, 0], vec![1u8, 0, 1, 2]),
            (vec![2, 2, 2], vec![2, 2]),
            (vec![0, 1, 2], vec![3, 4, 5]),
            (vec![], vec![1, 2]),
            (vec![0, 1, 0, 1, 0, 1], vec![1, 0, 1, 0]),
        ];
        for (a, b) in cases {
            assert_eq!(lcs_len(&a, &b), lcs_brute(&a, &b), "a={a:?} b={b:?}");
        }
    }

    #[test]
    fn copy_precision_matches_the_worked_example() {
        let triple = EvalTriple {
            src_tokens: tok("a b"),
            ref_tokens: tok("a"),
            hyp_tokens: tok("a b"),
        };
        assert!((copy_precision(&triple) - 0.5).abs() < 1e-12);

        let all_shared = EvalTriple {
            src_tokens: tok("a b c"),
            ref_tokens: tok("a b"),
            hyp_tokens: tok("b a"),
        };
        assert!((copy_precision(&all_shared) - 1.0).abs() < 1e-12);

        let none = EvalTriple {
            src_tokens: tok("a b"),
            ref_tokens: tok("a"),
            hyp_tokens: tok("x y"),
        };
        assert_eq!(copy_precision(&none), 0.0);
    }

    #[test]
    fn novel_ngram_matches_the_worked_example() {
        let pct = novel_ngram_pct(&tok("a b c"), &tok("a b d"), 1);
        assert!((pct - 100.0 / 3.0).abs() < 1e-9);
        assert_eq!(novel_ngram_pct(&tok("a b c"), &tok("a b"), 1), 0.0);
        assert_eq!(novel_ngram_pct(&tok("a b"), &tok("x y"), 1), 100.0);
        // Summary shorter than n.
        assert_eq!(novel_ngram_pct(&tok("a b"), &tok("a"), 2), 0.0);
    }

    #[test]
    fn dld_matches_the_worked_example() {
        let a = tok("A B C");
        let b = tok("B A C");
        assert!((dld_similarity(&a, &b) - 100.0 * 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(dld_similarity(&a, &a), 100.0);
        assert_eq!(dld_similarity(&a, &[]), 0.0);
        assert_eq!(dld_similarity::<String>(&[], &[]), 100.0);
    }

    /// Naive exponential OSA recursion, for cross-checking the DP table.
    fn osa_brute(a: &[u8], b: &[u8]) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        let (la, lb) = (a.len(), b.len());
        let cost = usize::from(a[la - 1] != b[lb - 1]);
        let mut best = (osa_brute(&a[..la - 1], b) + 1)
            .min(osa_brute(a, &b[..lb - 1]) + 1)
            .min(osa_brute(&a[..la - 1], &b[..lb - 1]) + cost);
        if la > 1 && lb > 1 && a[la - 1] == b[lb - 2] && a[la - 2] == b[lb - 1] {
            best = best.min(osa_brute(&a[..la - 2], &b[..lb - 2]) + 1);
        }
        best
    }

    #[test]
    fn osa_distance_agrees_with_naive_recursion() {
        let cases = [
            (vec![1u8, 2, 3], vec![2u8, 1, 3]),
            (vec![1, 2, 3, 4], vec![1, 3, 2, 4]),
            (vec![1, 1, 2], vec![2, 1, 1]),
            (vec![1, 2], vec![3, 4, 5, 6]),
            (vec![1, 2, 3, 4, 5], vec![5, 4, 3, 2, 1]),
        ];
        for (a, b) in cases {
            assert_eq!(osa_distance(&a, &b), osa_brute(&a, &b), "a={a:?} b={b:?}");
        }
    }

    #[test]
    fn buckets_match_hand_aggregation() {
        let p = [0.9, 0.8, 0.2, 0.6];
        let ok = [true, false, true, true];
        let r = bucket_precision_by_pcopy(&p, &ok, 0.5);
        assert!((r.copy_precision.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.copy_share_pct - 75.0).abs() < 1e-12);
        assert!((r.gen_precision.unwrap() - 1.0).abs() < 1e-12);
        assert!((r.gen_share_pct - 25.0).abs() < 1e-12);
    }

    #[test]
    fn empty_bucket_reports_absent_precision() {
        let r = bucket_precision_by_pcopy(&[0.9, 0.9], &[true, true], 0.5);
        assert_eq!(r.copy_precision, Some(1.0));
        assert_eq!(r.copy_share_pct, 100.0);
        assert_eq!(r.gen_precision, None);
        assert_eq!(r.gen_share_pct, 0.0);

        let empty = bucket_precision_by_pcopy(&[], &[], 0.5);
        assert_eq!(empty.copy_precision, None);
        assert_eq!(empty.gen_precision, None);
    }

    #[test]
    fn evaluate_generation_averages_per_example_scores() {
        let records = vec![
            crate::decode::GeneratedRecord {
                src: "a b c".into(),
                tgt: "a b".into(),
                hyp: "a b".into(),
                avg_p_copy: 0.8,
            },
            crate::decode::GeneratedRecord {
                src: "x y".into(),
                tgt: "x".into(),
                hyp: "q".into(),
                avg_p_copy: 0.2,
            },
        ];
        let rep = evaluate_generation(&records);
        // First example is exact (R1 f1 = 1), second disjoint (0).
        assert!((rep.rouge1_f - 0.5).abs() < 1e-12);
        assert!((rep.avg_p_copy - 0.5).abs() < 1e-12);
        // Copy precision: example 1 -> 1.0; example 2 has no source token
        // in the hypothesis -> 0.
        assert!((rep.copy_precision - 0.5).abs() < 1e-12);
        // Novel unigrams: 0% and 100%.
        assert!((rep.novel_ngram[0] - 50.0).abs() < 1e-12);
        assert_eq!(rep.n_examples, 2);
    }

    fn token_vec() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec(
            proptest::sample::select(vec![
                "a".to_string(),
                "b".to_string(),
                "c".to_string(),
                "d".to_string(),
            ]),
            0..8,
        )
    }

    proptest! {
        #[test]
        fn rouge_swap_symmetry(a in token_vec(), b in token_vec(), n in 1usize..3) {
            let ab = rouge_n(&a, &b, n);
            let ba = rouge_n(&b, &a, n);
            prop_assert_eq!(ab.precision.to_bits(), ba.recall.to_bits());
            prop_assert_eq!(ab.f1.to_bits(), ba.f1.to_bits());
        }

        #[test]
        fn dld_is_symmetric_and_identity_only_at_equality(a in token_vec(), b in token_vec()) {
            let ab = dld_similarity(&a, &b);
            let ba = dld_similarity(&b, &a);
            prop_assert_eq!(ab.to_bits(), ba.to_bits());
            if ab == 100.0 {
                prop_assert_eq!(&a, &b);
            }
            if a == b {
                prop_assert_eq!(ab, 100.0);
            }
        }

        #[test]
        fn appending_a_source_token_never_raises_novel_unigrams(
            src in proptest::collection::vec(
                proptest::sample::select(vec!["a".to_string(), "b".to_string(), "c".to_string()]),
                1..6,
            ),
            summary in token_vec(),
            pick in 0usize..16,
        ) {
            let before = novel_ngram_pct(&src, &summary, 1);
            let mut extended = summary.clone();
            extended.push(src[pick % src.len()].clone());
            let after = novel_ngram_pct(&src, &extended, 1);
            prop_assert!(after <= before + 1e-12);
        }

        #[test]
        fn copy_precision_is_one_when_hyp_equals_ref(
            src in token_vec(), shared in token_vec()
        ) {
            let triple = EvalTriple {
                src_tokens: src.clone(),
                ref_tokens: shared.clone(),
                hyp_tokens: shared.clone(),
            };
            let cp = copy_precision(&triple);
            let any_from_src = shared.iter().any(|t| src.contains(t));
            if any_from_src {
                prop_assert_eq!(cp, 1.0);
            } else {
                prop_assert_eq!(cp, 0.0);
            }
        }
    }
}
