//! Data-extraction attack: prompt a model with benchmark prefixes, score the
//! sampled continuations against the true suffixes, and compare memorization
//! across model roles.
//!
//! A snippet counts as memorized when any of the sampled generations matches
//! (the best-of-n rule): exact if the truncated generation's token sequence
//! equals the suffix, fuzzy if its combined CodeBLEU exceeds tau. Prompts
//! that fail at the transport level are recorded and excluded from rate
//! denominators so transient API failures do not bias rates downward.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::codebleu::{self, CodeBleuScore, CodeBleuWeights, MatchKind};
use crate::corpus::SnippetRecord;
use crate::error::{Error, Result};
use crate::modelgw::{Gateway, GenerationParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RoleKind {
    Pretrained,
    BaseFt,
    DpFt { epsilon: f64 },
}

impl RoleKind {
    pub fn name(&self) -> String {
        match self {
            RoleKind::Pretrained => "pretrained".to_string(),
            RoleKind::BaseFt => "base_ft".to_string(),
            RoleKind::DpFt { epsilon } => format!("dp_eps_{epsilon}"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionRecord {
    pub snippet_id: String,
    pub role: String,
    pub kind: MatchKind,
    pub best_score: CodeBleuScore,
    pub best_sample_index: u32,
    /// Combined score of every sample, in sample order.
    pub all_scores: Vec<f64>,
    /// Truncated generation texts, in sample order.
    pub generations: Vec<String>,
    pub tau: f64,
}

impl ExtractionRecord {
    pub fn memorized(&self) -> bool {
        self.kind != MatchKind::None
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptError {
    pub snippet_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackReport {
    pub role: String,
    pub records: Vec<ExtractionRecord>,
    pub errors: Vec<PromptError>,
    /// "category/kind" -> rate over scored (non-error) snippets of that
    /// category; kind is Exact, Fuzzy or Total, and category "__all__"
    /// aggregates everything.
    pub rates: BTreeMap<String, f64>,
}

/// Prompt each benchmark snippet with its prefix, sample
/// `params.n_samples` continuations, truncate each to the suffix's token
/// length, and keep the best score. Returns scored records plus per-prompt
/// error entries.
pub fn run_extraction(
    benchmark: &[SnippetRecord],
    role: &str,
    gateway: &Gateway,
    params: &GenerationParams,
    weights: &CodeBleuWeights,
    tau: f64,
) -> Result<(Vec<ExtractionRecord>, Vec<PromptError>)> {
    let prompts: Vec<(String, String)> =
        benchmark.iter().map(|r| (r.id.clone(), r.prefix_text.clone())).collect();
    let outcomes = gateway.complete_batch(&prompts, params);

    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (record, outcome) in benchmark.iter().zip(outcomes) {
        let completions = match outcome {
            Ok(c) => c,
            Err(e) => {
                errors.push(PromptError { snippet_id: record.id.clone(), message: e.to_string() });
                continue;
            }
        };
        let suffix_len = record.suffix_tokens.len();
        let mut best: Option<(usize, MatchKind, CodeBleuScore)> = None;
        let mut all_scores = Vec::with_capacity(completions.len());
        let mut generations = Vec::with_capacity(completions.len());
        for (i, completion) in completions.iter().enumerate() {
            let truncated: Vec<&str> = completion
                .tokens
                .iter()
                .take(suffix_len)
                .map(String::as_str)
                .collect();
            let cand_text = truncated.concat();
            let (kind, score) = if truncated.is_empty() {
                (MatchKind::None, zero_score())
            } else {
                let m = codebleu::match_kind(&cand_text, &record.suffix_text, weights, tau)?;
                (m.kind, m.score)
            };
            all_scores.push(score.combined);
            generations.push(cand_text);
            let better = match &best {
                None => true,
                Some((_, best_kind, best_score)) => {
                    score.combined > best_score.combined
                        || (score.combined == best_score.combined
                            && kind == MatchKind::Exact
                            && *best_kind != MatchKind::Exact)
                }
            };
            if better {
                best = Some((i, kind, score));
            }
        }
        let (best_sample_index, kind, best_score) =
            best.expect("n_samples >= 1 guarantees a best sample");
        records.push(ExtractionRecord {
            snippet_id: record.id.clone(),
            role: role.to_string(),
            kind,
            best_score,
            best_sample_index: best_sample_index as u32,
            all_scores,
            generations,
            tau,
        });
    }
    Ok((records, errors))
}

fn zero_score() -> CodeBleuScore {
    CodeBleuScore {
        bleu: 0.0,
        weighted_bleu: 0.0,
        ast_match: 0.0,
        dataflow_match: 0.0,
        combined: 0.0,
        dataflow_defined: true,
    }
}

/// Per-category exact/fuzzy/total rates. Snippets with transport errors are
/// absent from `records` and therefore from both numerator and denominator.
pub fn extraction_rates(
    records: &[ExtractionRecord],
    benchmark: &[SnippetRecord],
) -> BTreeMap<String, f64> {
    let category_of: BTreeMap<&str, String> =
        benchmark.iter().map(|r| (r.id.as_str(), r.category.to_string())).collect();
    let mut denom: BTreeMap<String, usize> = BTreeMap::new();
    let mut exact: BTreeMap<String, usize> = BTreeMap::new();
    let mut fuzzy: BTreeMap<String, usize> = BTreeMap::new();
    for rec in records {
        let cat = category_of
            .get(rec.snippet_id.as_str())
            .cloned()
            .unwrap_or_else(|| "unknown".to_string());
        for key in [cat, "__all__".to_string()] {
            *denom.entry(key.clone()).or_insert(0) += 1;
            match rec.kind {
                MatchKind::Exact => *exact.entry(key).or_insert(0) += 1,
                MatchKind::Fuzzy => *fuzzy.entry(key).or_insert(0) += 1,
                MatchKind::None => {}
            }
        }
    }
    let mut rates = BTreeMap::new();
    for (cat, &d) in &denom {
        let e = exact.get(cat).copied().unwrap_or(0) as f64;
        let f = fuzzy.get(cat).copied().unwrap_or(0) as f64;
        let d = d as f64;
        rates.insert(format!("{cat}/Exact"), e / d);
        rates.insert(format!("{cat}/Fuzzy"), f / d);
        // Exact and fuzzy are mutually exclusive; the total is their sum.
        rates.insert(format!("{cat}/Total"), (e + f) / d);
    }
    rates
}

pub fn build_report(
    role: &str,
    records: Vec<ExtractionRecord>,
    errors: Vec<PromptError>,
    benchmark: &[SnippetRecord],
) -> AttackReport {
    let rates = extraction_rates(&records, benchmark);
    AttackReport { role: role.to_string(), records, errors, rates }
}

/// Drop every snippet the pretrained model already memorized, so what
/// remains is attributable to fine-tuning. Both runs must cover the same
/// benchmark.
pub fn filter_pretrained(
    records: &[ExtractionRecord],
    pretrained: &[ExtractionRecord],
) -> Result<Vec<ExtractionRecord>> {
    let ids: BTreeSet<&str> = records.iter().map(|r| r.snippet_id.as_str()).collect();
    let pre_ids: BTreeSet<&str> = pretrained.iter().map(|r| r.snippet_id.as_str()).collect();
    if ids != pre_ids {
        return Err(Error::Corpus(
            "benchmark mismatch: pretrained run covers different snippet ids".into(),
        ));
    }
    let memorized_by_pretrained: BTreeSet<&str> = pretrained
        .iter()
        .filter(|r| r.memorized())
        .map(|r| r.snippet_id.as_str())
        .collect();
    Ok(records
        .iter()
        .filter(|r| !memorized_by_pretrained.contains(r.snippet_id.as_str()))
        .cloned()
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transition {
    Kept,
    Mitigated,
    NewlyMemorized,
    /// Memorized by neither run; completes the partition of the benchmark.
    NeverMemorized,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordMatchReport {
    pub transitions: BTreeMap<String, Transition>,
    /// category -> relative reduction 1 - rate_dp / rate_base; None when the
    /// base rate is zero.
    pub reductions: BTreeMap<String, Option<f64>>,
}

/// Per-snippet transitions between a base run and a DP run, plus
/// per-category relative reductions.
pub fn record_match(
    base: &[ExtractionRecord],
    dp: &[ExtractionRecord],
    benchmark: &[SnippetRecord],
) -> Result<RecordMatchReport> {
    let base_ids: BTreeSet<&str> = base.iter().map(|r| r.snippet_id.as_str()).collect();
    let dp_ids: BTreeSet<&str> = dp.iter().map(|r| r.snippet_id.as_str()).collect();
    if base_ids != dp_ids {
        return Err(Error::Corpus("benchmark mismatch between base and dp runs".into()));
    }
    let base_mem: BTreeSet<&str> =
        base.iter().filter(|r| r.memorized()).map(|r| r.snippet_id.as_str()).collect();
    let dp_mem: BTreeSet<&str> =
        dp.iter().filter(|r| r.memorized()).map(|r| r.snippet_id.as_str()).collect();

    let mut transitions = BTreeMap::new();
    for id in &base_ids {
        let label = match (base_mem.contains(id), dp_mem.contains(id)) {
            (true, true) => Transition::Kept,
            (true, false) => Transition::Mitigated,
            (false, true) => Transition::NewlyMemorized,
            (false, false) => Transition::NeverMemorized,
        };
        transitions.insert(id.to_string(), label);
    }

    let category_of: BTreeMap<&str, String> =
        benchmark.iter().map(|r| (r.id.as_str(), r.category.to_string())).collect();
    let mut per_cat: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new(); // (n, base, dp)
    for id in &base_ids {
        let cat = category_of.get(id).cloned().unwrap_or_else(|| "unknown".to_string());
        let entry = per_cat.entry(cat).or_insert((0, 0, 0));
        entry.0 += 1;
        if base_mem.contains(id) {
            entry.1 += 1;
        }
        if dp_mem.contains(id) {
            entry.2 += 1;
        }
    }
    per_cat.insert(
        "__all__".to_string(),
        (base_ids.len(), base_mem.len(), dp_mem.len()),
    );
    let reductions = per_cat
        .into_iter()
        .map(|(cat, (n, b, d))| {
            let reduction = if b == 0 {
                None
            } else {
                let rate_base = b as f64 / n as f64;
                let rate_dp = d as f64 / n as f64;
                Some(1.0 - rate_dp / rate_base)
            };
            (cat, reduction)
        })
        .collect();

    Ok(RecordMatchReport { transitions, reductions })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryReport {
    /// (epoch, memorized snippet ids) per checkpoint, in epoch order.
    pub per_epoch_memorized: Vec<(usize, BTreeSet<String>)>,
    /// Jaccard similarity between consecutive epochs' memorized sets.
    pub jaccard: Vec<f64>,
    /// (epoch, snippet id, became memorized?) events, in epoch order.
    pub events: Vec<(usize, String, bool)>,
}

pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Run the extraction against each epoch checkpoint and measure how the
/// memorized set consolidates over fine-tuning.
pub fn trajectory(
    benchmark: &[SnippetRecord],
    checkpoints: &[(usize, &Gateway)],
    params: &GenerationParams,
    weights: &CodeBleuWeights,
    tau: f64,
) -> Result<TrajectoryReport> {
    if checkpoints.len() < 2 {
        return Err(Error::Config("trajectory needs at least 2 epoch checkpoints".into()));
    }
    let mut per_epoch = Vec::new();
    for (epoch, gateway) in checkpoints {
        let role = format!("epoch_{epoch}");
        let (records, _) = run_extraction(benchmark, &role, gateway, params, weights, tau)?;
        let memorized: BTreeSet<String> = records
            .iter()
            .filter(|r| r.memorized())
            .map(|r| r.snippet_id.clone())
            .collect();
        per_epoch.push((*epoch, memorized));
    }

    let mut jaccards = Vec::new();
    let mut events = Vec::new();
    for pair in per_epoch.windows(2) {
        let (_, prev) = &pair[0];
        let (epoch, curr) = &pair[1];
        jaccards.push(jaccard(prev, curr));
        for gained in curr.difference(prev) {
            events.push((*epoch, gained.clone(), true));
        }
        for lost in prev.difference(curr) {
            events.push((*epoch, lost.clone(), false));
        }
    }
    Ok(TrajectoryReport { per_epoch_memorized: per_epoch, jaccard: jaccards, events })
}
