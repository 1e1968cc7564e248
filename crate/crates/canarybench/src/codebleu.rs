//! CodeBLEU similarity and the exact/fuzzy memorization predicates.
//!
//! Four components, combined with configurable weights (default 0.25 each):
//! n-gram BLEU, keyword-weighted BLEU, AST subtree match, and data-flow
//! (def-use edge) match. A generation counts as exact memorization when its
//! token sequence equals the reference, and as fuzzy memorization when the
//! combined score strictly exceeds the threshold tau (default 0.85).

use std::collections::{BTreeSet, HashMap, HashSet};
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parser::{self, Node, NodeKind};
use crate::token;

/// Smoothing constant added to n-gram precision numerators and denominators.
pub const SMOOTHING_EPS: f64 = 1e-9;
/// Unigram weight for grammar keywords in weighted BLEU.
pub const KEYWORD_WEIGHT: f64 = 5.0;
/// Maximum n-gram order.
pub const MAX_NGRAM: usize = 4;
/// Default fuzzy-match threshold.
pub const DEFAULT_TAU: f64 = 0.85;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CodeBleuWeights {
    pub bleu: f64,
    pub weighted: f64,
    pub ast: f64,
    pub dataflow: f64,
}

impl Default for CodeBleuWeights {
    fn default() -> Self {
        CodeBleuWeights { bleu: 0.25, weighted: 0.25, ast: 0.25, dataflow: 0.25 }
    }
}

impl CodeBleuWeights {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.bleu, self.weighted, self.ast, self.dataflow];
        if parts.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Metric("weights must be non-negative".into()));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Metric(format!("weights must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CodeBleuScore {
    pub bleu: f64,
    pub weighted_bleu: f64,
    pub ast_match: f64,
    pub dataflow_match: f64,
    pub combined: f64,
    /// False when the reference has no def-use edges; the data-flow component
    /// then defaults to 1.0 and its weight is redistributed proportionally
    /// over the other components, so the default cannot inflate `combined`.
    pub dataflow_defined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchKind {
    Exact,
    Fuzzy,
    None,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MatchResult {
    pub kind: MatchKind,
    pub score: CodeBleuScore,
    pub tau: f64,
}

// ---------------------------------------------------------------------------
// n-gram BLEU
// ---------------------------------------------------------------------------

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut counts: HashMap<&[&str], usize> = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Modified n-gram precision (clipped counts), add-eps smoothed, geometric
/// mean over orders 1..=4, times the brevity penalty `min(1, e^(1 - r/c))`.
pub fn ngram_bleu(candidate: &[&str], reference: &[&str]) -> Result<f64> {
    weighted_ngram_bleu_impl(candidate, reference, None)
}

/// Same as [`ngram_bleu`] but each matched unigram is weighted
/// [`KEYWORD_WEIGHT`] if it is a grammar keyword, 1 otherwise. The weights
/// enter both the numerator and denominator of the unigram precision.
pub fn weighted_ngram_bleu(
    candidate: &[&str],
    reference: &[&str],
    keywords: &HashSet<&str>,
) -> Result<f64> {
    weighted_ngram_bleu_impl(candidate, reference, Some(keywords))
}

fn unigram_weight(tok: &str, keywords: Option<&HashSet<&str>>) -> f64 {
    match keywords {
        Some(set) if set.contains(tok) => KEYWORD_WEIGHT,
        _ => 1.0,
    }
}

fn weighted_ngram_bleu_impl(
    candidate: &[&str],
    reference: &[&str],
    keywords: Option<&HashSet<&str>>,
) -> Result<f64> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::Metric("empty token sequence".into()));
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_NGRAM {
        let cand = ngram_counts(candidate, n);
        let refc = ngram_counts(reference, n);
        let mut num = 0.0;
        let mut den = 0.0;
        for (gram, &c) in &cand {
            let clipped = c.min(refc.get(gram).copied().unwrap_or(0));
            let w = if n == 1 { unigram_weight(gram[0], keywords) } else { 1.0 };
            num += w * clipped as f64;
            den += w * c as f64;
        }
        log_sum += ((num + SMOOTHING_EPS) / (den + SMOOTHING_EPS)).ln();
    }
    let precision = (log_sum / MAX_NGRAM as f64).exp();
    let r = reference.len() as f64;
    let c = candidate.len() as f64;
    let bp = (1.0 - r / c).exp().min(1.0);
    Ok((precision * bp).min(1.0))
}

// ---------------------------------------------------------------------------
// AST subtree match
// ---------------------------------------------------------------------------

/// Kinds whose `value` is an identifier and is therefore anonymized before
/// structural comparison.
fn anonymized(kind: NodeKind) -> bool {
    matches!(kind, NodeKind::Name | NodeKind::Attribute | NodeKind::Keyword | NodeKind::Param)
}

fn subtree_hash(node: &Node, out: &mut Vec<(u64, usize)>) -> (u64, usize) {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    node.kind.hash(&mut h);
    if !anonymized(node.kind) {
        node.value.hash(&mut h);
    }
    let mut height = 1;
    for c in &node.children {
        let (ch, cheight) = subtree_hash(c, out);
        ch.hash(&mut h);
        height = height.max(1 + cheight);
    }
    let digest = h.finish();
    out.push((digest, height));
    (digest, height)
}

/// Fraction of reference subtrees of height >= 2 (identifiers anonymized)
/// that occur anywhere in the candidate tree. When the reference has no
/// qualifying subtree, falls back to unigram node-kind overlap.
pub fn ast_match(candidate_text: &str, reference_text: &str) -> f64 {
    let cand_tree = parser::parse_tolerant(candidate_text);
    let ref_tree = parser::parse_tolerant(reference_text);

    let mut cand_hashes = Vec::new();
    subtree_hash(&cand_tree, &mut cand_hashes);
    let cand_set: HashSet<u64> = cand_hashes.iter().map(|(h, _)| *h).collect();

    let mut ref_hashes = Vec::new();
    subtree_hash(&ref_tree, &mut ref_hashes);
    let qualifying: Vec<u64> = ref_hashes
        .iter()
        .filter(|(_, height)| *height >= 2)
        .map(|(h, _)| *h)
        .collect();

    if qualifying.is_empty() {
        return node_kind_overlap(&cand_tree, &ref_tree);
    }
    let matched = qualifying.iter().filter(|h| cand_set.contains(h)).count();
    matched as f64 / qualifying.len() as f64
}

fn kind_counts(tree: &Node) -> HashMap<NodeKind, usize> {
    let mut counts = HashMap::new();
    tree.walk(&mut |n| *counts.entry(n.kind).or_insert(0) += 1);
    counts
}

fn node_kind_overlap(cand: &Node, reference: &Node) -> f64 {
    let cand_counts = kind_counts(cand);
    let ref_counts = kind_counts(reference);
    let total: usize = ref_counts.values().sum();
    if total == 0 {
        return 1.0;
    }
    let matched: usize = ref_counts
        .iter()
        .map(|(k, &c)| c.min(cand_counts.get(k).copied().unwrap_or(0)))
        .sum();
    matched as f64 / total as f64
}

// ---------------------------------------------------------------------------
// Data-flow match
// ---------------------------------------------------------------------------

/// Def-use edges with position-normalized variable names: variables are
/// renamed v0, v1, ... in order of first appearance, and each edge records
/// (ordinal of variable read, ordinal of variable written). Alpha-renaming
/// a snippet therefore leaves its edge set unchanged.
pub fn dataflow_edges(text: &str) -> BTreeSet<(u32, u32)> {
    let tree = parser::parse_tolerant(text);
    let mut ordinals: HashMap<String, u32> = HashMap::new();
    let mut edges = BTreeSet::new();
    collect_edges(&tree, &mut ordinals, &mut edges);
    edges
}

fn ordinal(ordinals: &mut HashMap<String, u32>, name: &str) -> u32 {
    let next = ordinals.len() as u32;
    *ordinals.entry(name.to_string()).or_insert(next)
}

fn names_in(node: &Node, out: &mut Vec<String>) {
    node.walk(&mut |n| {
        if n.kind == NodeKind::Name {
            if let Some(v) = &n.value {
                out.push(v.clone());
            }
        }
    });
}

fn flow_into(
    reads_node: &Node,
    write_ords: &[u32],
    ordinals: &mut HashMap<String, u32>,
    edges: &mut BTreeSet<(u32, u32)>,
) {
    let mut reads = Vec::new();
    names_in(reads_node, &mut reads);
    for r in &reads {
        let ro = ordinal(ordinals, r);
        for &wo in write_ords {
            edges.insert((ro, wo));
        }
    }
}

fn collect_edges(
    node: &Node,
    ordinals: &mut HashMap<String, u32>,
    edges: &mut BTreeSet<(u32, u32)>,
) {
    match node.kind {
        NodeKind::Assign => {
            // children: targets..., value (last)
            if let Some((value, targets)) = node.children.split_last() {
                let mut writes = Vec::new();
                for t in targets {
                    names_in(t, &mut writes);
                }
                let write_ords: Vec<u32> =
                    writes.iter().map(|w| ordinal(ordinals, w)).collect();
                flow_into(value, &write_ords, ordinals, edges);
                collect_edges(value, ordinals, edges);
            }
        }
        NodeKind::AugAssign => {
            if node.children.len() == 2 {
                let mut writes = Vec::new();
                names_in(&node.children[0], &mut writes);
                let write_ords: Vec<u32> =
                    writes.iter().map(|w| ordinal(ordinals, w)).collect();
                // The target is read as well as written.
                for &wo in &write_ords {
                    edges.insert((wo, wo));
                }
                flow_into(&node.children[1], &write_ords, ordinals, edges);
            }
        }
        NodeKind::AnnAssign => {
            // children: target, annotation, value?; the annotation is a type,
            // not data flow.
            let mut writes = Vec::new();
            if let Some(t) = node.children.first() {
                names_in(t, &mut writes);
            }
            let write_ords: Vec<u32> = writes.iter().map(|w| ordinal(ordinals, w)).collect();
            if node.children.len() >= 3 {
                flow_into(&node.children[2], &write_ords, ordinals, edges);
            }
        }
        NodeKind::CompFor => {
            // `for <target> in <iter>`: iter names flow into target names.
            if node.children.len() >= 2 {
                let mut writes = Vec::new();
                names_in(&node.children[0], &mut writes);
                let write_ords: Vec<u32> =
                    writes.iter().map(|w| ordinal(ordinals, w)).collect();
                flow_into(&node.children[1], &write_ords, ordinals, edges);
            }
        }
        _ => {
            // Register names in source order so ordinals stay positional,
            // then recurse into nested statements and expressions.
            if node.kind == NodeKind::Name {
                if let Some(v) = &node.value {
                    ordinal(ordinals, v);
                }
            }
            for c in &node.children {
                collect_edges(c, ordinals, edges);
            }
        }
    }
}

/// |edges(ref) ∩ edges(cand)| / |edges(ref)|. A reference with no edges
/// yields (1.0, false): the component is defaulted and flagged so the
/// combination can renormalize.
pub fn dataflow_match(candidate_text: &str, reference_text: &str) -> (f64, bool) {
    let ref_edges = dataflow_edges(reference_text);
    if ref_edges.is_empty() {
        return (1.0, false);
    }
    let cand_edges = dataflow_edges(candidate_text);
    let matched = ref_edges.intersection(&cand_edges).count();
    (matched as f64 / ref_edges.len() as f64, true)
}

// ---------------------------------------------------------------------------
// Combination and match predicates
// ---------------------------------------------------------------------------

pub fn keyword_set() -> HashSet<&'static str> {
    parser::PYTHON_KEYWORDS.iter().copied().collect()
}

/// Full CodeBLEU over two texts; tokens come from the harness tokenizer.
pub fn codebleu(
    candidate_text: &str,
    reference_text: &str,
    weights: &CodeBleuWeights,
) -> Result<CodeBleuScore> {
    weights.validate()?;
    let cand_tokens = token::tokenize(candidate_text);
    let ref_tokens = token::tokenize(reference_text);
    let keywords = keyword_set();

    let bleu = ngram_bleu(&cand_tokens, &ref_tokens)?;
    let weighted_bleu = weighted_ngram_bleu(&cand_tokens, &ref_tokens, &keywords)?;
    let ast = ast_match(candidate_text, reference_text);
    let (dataflow, dataflow_defined) = dataflow_match(candidate_text, reference_text);

    let combined = if dataflow_defined {
        weights.bleu * bleu + weights.weighted * weighted_bleu + weights.ast * ast
            + weights.dataflow * dataflow
    } else {
        let defined = weights.bleu + weights.weighted + weights.ast;
        if defined <= 0.0 {
            1.0
        } else {
            (weights.bleu * bleu + weights.weighted * weighted_bleu + weights.ast * ast) / defined
        }
    };

    Ok(CodeBleuScore {
        bleu,
        weighted_bleu,
        ast_match: ast,
        dataflow_match: dataflow,
        combined,
        dataflow_defined,
    })
}

/// Exact iff the harness token sequences are equal; else fuzzy iff the
/// combined score strictly exceeds tau; else none.
pub fn match_kind(
    candidate_text: &str,
    reference_text: &str,
    weights: &CodeBleuWeights,
    tau: f64,
) -> Result<MatchResult> {
    let score = codebleu(candidate_text, reference_text, weights)?;
    let exact = token::tokenize(candidate_text) == token::tokenize(reference_text);
    let kind = if exact {
        MatchKind::Exact
    } else if score.combined > tau {
        MatchKind::Fuzzy
    } else {
        MatchKind::None
    };
    Ok(MatchResult { kind, score, tau })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_sequences_score_one() {
        let toks = vec!["def", " ", "f", "(", ")", ":"];
        assert_eq!(ngram_bleu(&toks, &toks).unwrap(), 1.0);
        assert_eq!(weighted_ngram_bleu(&toks, &toks, &keyword_set()).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_vocabularies_hit_smoothing_floor() {
        let cand = vec!["a", "b", "c", "d", "e", "f"];
        let refr = vec!["u", "v", "w", "x", "y", "z"];
        let score = ngram_bleu(&cand, &refr).unwrap();
        assert!(score <= 4e-9, "score {score} above smoothing floor");
        assert!(score > 0.0);
    }

    #[test]
    fn empty_sequence_is_an_error() {
        assert!(ngram_bleu(&[], &["a"]).is_err());
        assert!(ngram_bleu(&["a"], &[]).is_err());
    }

    #[test]
    fn bleu_matches_hand_enumerated_ngram_counts() {
        // candidate "a a b c" vs reference "a b c d", hand counts:
        //   p1 = 3/4, p2 = 2/3, p3 = 1/2, p4 = 0/1, BP = 1
        let cand = vec!["a", "a", "b", "c"];
        let refr = vec!["a", "b", "c", "d"];
        let eps = SMOOTHING_EPS;
        let p1 = (3.0 + eps) / (4.0 + eps);
        let p2 = (2.0 + eps) / (3.0 + eps);
        let p3 = (1.0 + eps) / (2.0 + eps);
        let p4 = eps / (1.0 + eps);
        let expected = (p1 * p2 * p3 * p4).powf(0.25);
        let got = ngram_bleu(&cand, &refr).unwrap();
        assert!((got - expected).abs() < 1e-12, "got {got}, expected {expected}");
    }

    #[test]
    fn brevity_penalty_applies_to_short_candidates() {
        let cand = vec!["a", "b"];
        let refr = vec!["a", "b", "c", "d"];
        let got = ngram_bleu(&cand, &refr).unwrap();
        // p1 = 1, p2 = 1, p3 = p4 = eps/eps = 1; BP = e^(1 - 4/2)
        let expected = (1.0f64 - 4.0 / 2.0).exp();
        assert!((got - expected).abs() < 1e-9);
    }

    #[test]
    fn keyword_difference_scores_below_identifier_difference() {
        // The keyword slot and the identifier slot have identical n-gram
        // surroundings, so only the unigram weighting separates the scores.
        let keywords = keyword_set();
        let refr = vec!["m", "m", "if", "m", "m", "y", "m", "m"];
        let cand_kw = vec!["m", "m", "for", "m", "m", "y", "m", "m"]; // keyword differs
        let cand_id = vec!["m", "m", "if", "m", "m", "z", "m", "m"]; // identifier differs
        let s_kw = weighted_ngram_bleu(&cand_kw, &refr, &keywords).unwrap();
        let s_id = weighted_ngram_bleu(&cand_id, &refr, &keywords).unwrap();
        assert!(s_kw < s_id, "{s_kw} !< {s_id}");
    }

    #[test]
    fn weighted_unigram_precision_matches_hand_counts() {
        // 6-token pair differing in one identifier; keywords weigh 5.
        // cand = [if, x, :, return, y, ;], ref = [if, x, :, return, z, ;]
        // weighted p1 = (5+1+1+5+1)/(5+1+1+5+1+1) = 13/14 (plus smoothing)
        let cand = vec!["if", "x", ":", "return", "y", ";"];
        let refr = vec!["if", "x", ":", "return", "z", ";"];
        let keywords = keyword_set();
        let eps = SMOOTHING_EPS;
        let p1 = (13.0 + eps) / (14.0 + eps);
        // plain higher-order precisions: p2 = 3/5, p3 = 2/4, p4 = 1/3
        let p2 = (3.0 + eps) / (5.0 + eps);
        let p3 = (2.0 + eps) / (4.0 + eps);
        let p4 = (1.0 + eps) / (3.0 + eps);
        let expected = (p1 * p2 * p3 * p4).powf(0.25);
        let got = weighted_ngram_bleu(&cand, &refr, &keywords).unwrap();
        assert!((got - expected).abs() < 1e-12, "got {got}, expected {expected}");
    }

    #[test]
    fn ast_match_identical_code_is_one() {
        let src = "def f(x):\n    if x:\n        return g(x)\n    return 0";
        assert_eq!(ast_match(src, src), 1.0);
    }

    #[test]
    fn ast_match_branch_kind_differs() {
        let refr = "if x: y()";
        let cand = "while x: y()";
        let score = ast_match(cand, refr);
        assert!(score < 1.0, "branch subtree should not match: {score}");
        assert!(score > 0.0, "call subtree should match: {score}");
    }

    /// Brute-force oracle: enumerate reference subtrees of height >= 2 as
    /// anonymized trees and test containment by structural equality.
    fn ast_match_bruteforce(cand_text: &str, ref_text: &str) -> f64 {
        fn anonymize(node: &Node) -> Node {
            Node {
                kind: node.kind,
                value: if anonymized(node.kind) { None } else { node.value.clone() },
                children: node.children.iter().map(anonymize).collect(),
            }
        }
        fn subtrees(node: &Node, out: &mut Vec<Node>) {
            out.push(anonymize(node));
            for c in &node.children {
                subtrees(c, out);
            }
        }
        let mut cand_all = Vec::new();
        subtrees(&parser::parse_tolerant(cand_text), &mut cand_all);
        let mut ref_all = Vec::new();
        subtrees(&parser::parse_tolerant(ref_text), &mut ref_all);
        let qualifying: Vec<&Node> = ref_all.iter().filter(|n| n.height() >= 2).collect();
        if qualifying.is_empty() {
            return node_kind_overlap(
                &parser::parse_tolerant(cand_text),
                &parser::parse_tolerant(ref_text),
            );
        }
        let matched = qualifying.iter().filter(|r| cand_all.contains(r)).count();
        matched as f64 / qualifying.len() as f64
    }

    #[test]
    fn ast_match_agrees_with_bruteforce_enumeration() {
        let refr = "a = f(1)\nif a:\n    b = a + 2\nreturn b";
        let cands = [
            "a = f(1)\nif a:\n    b = a + 2\nreturn b",
            "a = f(1)\nwhile a:\n    b = a + 2\nreturn b",
            "x = g(2)\nreturn x",
            "completely(unrelated) + text",
        ];
        for cand in cands {
            let fast = ast_match(cand, refr);
            let slow = ast_match_bruteforce(cand, refr);
            assert!((fast - slow).abs() < 1e-12, "{cand}: {fast} vs {slow}");
        }
    }

    #[test]
    fn dataflow_identical_and_alpha_renamed_match() {
        let refr = "x = 1\ny = x + 2\nz = y";
        assert_eq!(dataflow_match(refr, refr), (1.0, true));
        let renamed = "q = 1\nr = q + 2\ns = r";
        assert_eq!(dataflow_match(renamed, refr), (1.0, true));
    }

    #[test]
    fn dataflow_half_match_hand_enumerated() {
        // ref "a=1; b=a; c=b" edges: (a->b), (b->c) = {(0,1),(1,2)}
        // cand "a=1; c=a" edges: {(0,1)}  -> 1 of 2 matched
        let (score, defined) = dataflow_match("a=1; c=a", "a=1; b=a; c=b");
        assert!(defined);
        assert!((score - 0.5).abs() < 1e-12, "got {score}");
    }

    #[test]
    fn dataflow_zero_edge_reference_is_flagged() {
        let (score, defined) = dataflow_match("x = 1", "# just a comment\n");
        assert_eq!(score, 1.0);
        assert!(!defined);
    }

    #[test]
    fn codebleu_identical_is_one_and_unrelated_below_tau() {
        let w = CodeBleuWeights::default();
        let src = "def add(a, b):\n    return a + b";
        let s = codebleu(src, src, &w).unwrap();
        assert_eq!(s.combined, 1.0);

        let other = "class Config:\n    timeout = 30\n    retries = 5";
        let s2 = codebleu(other, src, &w).unwrap();
        assert!(s2.combined < DEFAULT_TAU, "unrelated combined = {}", s2.combined);
    }

    #[test]
    fn combined_renormalizes_when_dataflow_undefined() {
        let w = CodeBleuWeights::default();
        // License-like text: no def-use edges in the reference.
        let refr = "# Permission is hereby granted\n# free of charge\n";
        let s = codebleu(refr, refr, &w).unwrap();
        assert!(!s.dataflow_defined);
        assert_eq!(s.combined, 1.0);
    }

    #[test]
    fn match_kind_exact_fuzzy_none() {
        let w = CodeBleuWeights::default();
        let refr = "x = compute(a, b)\ny = x + 1\nz = helper(y, x)\nreturn z";
        let exact = match_kind(refr, refr, &w, DEFAULT_TAU).unwrap();
        assert_eq!(exact.kind, MatchKind::Exact);
        assert_eq!(exact.score.combined, 1.0);

        let near = "x = compute(a, b)\ny = x + 2\nz = helper(y, x)\nreturn z";
        let fuzzy = match_kind(near, refr, &w, DEFAULT_TAU).unwrap();
        assert_eq!(fuzzy.kind, MatchKind::Fuzzy, "combined {}", fuzzy.score.combined);

        let far = "import os\nprint(os.path)";
        let none = match_kind(far, refr, &w, DEFAULT_TAU).unwrap();
        assert_eq!(none.kind, MatchKind::None);
    }

    #[test]
    fn combined_exactly_tau_is_not_fuzzy() {
        // Strict inequality: a score equal to tau must classify as None.
        let w = CodeBleuWeights::default();
        let refr = "x = f(a)\ny = x";
        let cand = "x = f(a)\ny = z";
        let score = codebleu(cand, refr, &w).unwrap();
        let at_tau = match_kind(cand, refr, &w, score.combined).unwrap();
        assert_eq!(at_tau.kind, MatchKind::None);
    }

    #[test]
    fn whitespace_difference_is_never_exact() {
        let w = CodeBleuWeights::default();
        let refr = "x = 1\ny = 2";
        let cand = "x  = 1\ny = 2";
        let m = match_kind(cand, refr, &w, DEFAULT_TAU).unwrap();
        assert_ne!(m.kind, MatchKind::Exact);
    }

    #[test]
    fn weight_linearity_bleu_only() {
        let w = CodeBleuWeights { bleu: 1.0, weighted: 0.0, ast: 0.0, dataflow: 0.0 };
        let refr = "for i in xs:\n    total += i";
        let cand = "for j in xs:\n    total += j * 2";
        let s = codebleu(cand, refr, &w).unwrap();
        assert!((s.combined - s.bleu).abs() < 1e-12);
    }

    #[test]
    fn statement_permutation_lowers_structural_components() {
        let refr = "a = 1\nb = a\nc = b";
        let perm = "c = b\na = 1\nb = a";
        let w = CodeBleuWeights::default();
        let s = codebleu(perm, refr, &w).unwrap();
        // Unigram counts are unchanged by permutation...
        let cand_tokens = token::tokenize(perm);
        let ref_tokens = token::tokenize(refr);
        let mut cand1: Vec<_> = cand_tokens.clone();
        let mut ref1: Vec<_> = ref_tokens.clone();
        cand1.sort_unstable();
        ref1.sort_unstable();
        assert_eq!(cand1, ref1);
        // ...but structure is not.
        assert!(
            s.ast_match < 1.0 || s.dataflow_match < 1.0,
            "ast {} dataflow {}",
            s.ast_match,
            s.dataflow_match
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn reflexivity_and_bounds(s in "[a-z0-9_ \n():=+,.]{1,120}") {
            let w = CodeBleuWeights::default();
            let score = codebleu(&s, &s, &w).unwrap();
            prop_assert!((score.combined - 1.0).abs() < 1e-12);
            for c in [score.bleu, score.weighted_bleu, score.ast_match, score.dataflow_match] {
                prop_assert!((0.0..=1.0).contains(&c));
            }
        }

        #[test]
        fn bounds_on_pairs(
            a in "[a-z0-9_ \n():=+,.]{1,80}",
            b in "[a-z0-9_ \n():=+,.]{1,80}",
        ) {
            let w = CodeBleuWeights::default();
            let score = codebleu(&a, &b, &w).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&score.combined));
        }
    }
}
