//! Synthetic canary corpus generation.
//!
//! The acceptance experiments need a corpus where ground truth is known:
//! which snippets exist, how often each occurs in the train split, and how
//! compressible each is. This module writes a directory of Python-shaped
//! files with canaries planted at controlled frequencies. Canary-carrying
//! documents start with the canary's 100 tokens, so the first training
//! window always covers a canary occurrence completely.
//!
//! The generator pre-computes the same document-level shuffle that
//! `split_train_test` will perform and plants canaries only into documents
//! that will land in the train split, so the real pipeline (ingest, dedup,
//! split, bench) can run unmodified on the generated directory.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::analytics;
use crate::corpus::{Corpus, SnippetRecord, Split};
use crate::error::{Error, Result};
use crate::taxonomy::Classifier;
use crate::token;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CanaryGroup {
    /// Distinct canaries in this group.
    pub count: usize,
    /// Occurrences of each canary (one document per occurrence).
    pub frequency: usize,
    /// Repetitive (low gzip entropy) vs shuffled-unique content.
    pub low_entropy: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Tokens per canary; split 50/50 into prefix and suffix downstream.
    pub canary_tokens: usize,
    pub groups: Vec<CanaryGroup>,
    /// Background documents beyond the canary-carrying ones.
    pub background_docs: usize,
    /// Background lines appended after a canary inside its documents; keeps
    /// same-canary documents below the near-dedup threshold.
    pub filler_lines: usize,
    /// Lines per pure-background document.
    pub background_lines: usize,
    /// Train fraction the pipeline will use; needed to pre-compute the split.
    pub train_ratio: f64,
    /// Seed the pipeline will pass to split_train_test.
    pub split_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            canary_tokens: 100,
            groups: vec![
                CanaryGroup { count: 12, frequency: 1, low_entropy: false },
                CanaryGroup { count: 8, frequency: 8, low_entropy: false },
                CanaryGroup { count: 4, frequency: 32, low_entropy: false },
                CanaryGroup { count: 8, frequency: 4, low_entropy: true },
                CanaryGroup { count: 8, frequency: 4, low_entropy: false },
            ],
            background_docs: 132,
            filler_lines: 11,
            background_lines: 19,
            train_ratio: 0.8,
            split_seed: 42,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CanaryInfo {
    pub id: String,
    pub text: String,
    pub planted_frequency: usize,
    pub low_entropy: bool,
    /// Documents (relative paths) carrying one occurrence each.
    pub docs: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthOutput {
    pub files: Vec<(String, String)>,
    pub canaries: Vec<CanaryInfo>,
}

const CANARY_ID_POOL: usize = 48;
const BACKGROUND_ID_POOL: usize = 96;

fn canary_ident(rng: &mut ChaCha20Rng) -> String {
    format!("qz{}", rng.random_range(0..CANARY_ID_POOL))
}

fn background_ident(rng: &mut ChaCha20Rng) -> String {
    format!("bg{}", rng.random_range(0..BACKGROUND_ID_POOL))
}

fn code_line(rng: &mut ChaCha20Rng, ident: &mut impl FnMut(&mut ChaCha20Rng) -> String) -> String {
    match rng.random_range(0..4u32) {
        0 => format!(
            "{} = {}({}, {})\n",
            ident(rng),
            ident(rng),
            ident(rng),
            ident(rng)
        ),
        1 => format!("{} = {} + {}\n", ident(rng), ident(rng), ident(rng)),
        2 => format!(
            "{} = {}.{}({})\n",
            ident(rng),
            ident(rng),
            ident(rng),
            ident(rng)
        ),
        _ => format!("{}[{}] = {}\n", ident(rng), ident(rng), ident(rng)),
    }
}

/// Exactly `tokens` harness tokens of canary content. High-entropy canaries
/// are fresh random lines; low-entropy canaries cycle three lines, which
/// compresses well and repeats every context many times.
fn canary_text(rng: &mut ChaCha20Rng, tokens: usize, low_entropy: bool) -> String {
    let mut text = String::new();
    if low_entropy {
        let pattern: Vec<String> =
            (0..3).map(|_| code_line(rng, &mut canary_ident)).collect();
        let mut i = 0;
        while token::tokenize(&text).len() < tokens {
            text.push_str(&pattern[i % 3]);
            i += 1;
        }
    } else {
        while token::tokenize(&text).len() < tokens {
            text.push_str(&code_line(rng, &mut canary_ident));
        }
    }
    let toks = token::tokenize(&text);
    token::detokenize(&toks[..tokens])
}

/// Replicate the shuffle in `split_train_test` to learn which document
/// indices will land in the train split.
fn precompute_train_indices(n_docs: usize, ratio: f64, seed: u64) -> BTreeSet<usize> {
    let mut order: Vec<usize> = (0..n_docs).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(4);
    for i in (1..n_docs).rev() {
        let j = (rng.random::<u64>() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    let train_count = ((ratio * n_docs as f64).round() as usize).clamp(1, n_docs - 1);
    order[..train_count].iter().copied().collect()
}

/// Generate the corpus files and canary ground truth.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput> {
    if config.canary_tokens < 4 {
        return Err(Error::Config("canary_tokens too small".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    rng.set_stream(6);

    let occurrences: usize = config.groups.iter().map(|g| g.count * g.frequency).sum();
    let n_docs = occurrences + config.background_docs;
    let train_indices = precompute_train_indices(n_docs, config.train_ratio, config.split_seed);
    if train_indices.len() < occurrences {
        return Err(Error::Config(format!(
            "train split has {} documents but {} canary occurrences are requested",
            train_indices.len(),
            occurrences
        )));
    }

    // Canary payloads first, so the text stream drawn from the RNG does not
    // depend on document placement.
    let mut canaries = Vec::new();
    for (g_idx, group) in config.groups.iter().enumerate() {
        for c_idx in 0..group.count {
            let text = canary_text(&mut rng, config.canary_tokens, group.low_entropy);
            canaries.push(CanaryInfo {
                id: format!("canary_g{g_idx}_{c_idx}"),
                text,
                planted_frequency: group.frequency,
                low_entropy: group.low_entropy,
                docs: Vec::new(),
            });
        }
    }

    // Occurrence plan: canary occurrences fill train documents in document
    // order; everything else is background.
    let mut plan: Vec<Option<usize>> = vec![None; n_docs]; // canary index per doc
    let mut train_iter = train_indices.iter().copied();
    for (canary_idx, canary) in canaries.iter().enumerate() {
        for _ in 0..canary.planted_frequency {
            let doc_idx = train_iter.next().expect("checked above");
            plan[doc_idx] = Some(canary_idx);
        }
    }

    let mut files = Vec::with_capacity(n_docs);
    for (doc_idx, slot) in plan.iter().enumerate() {
        let name = format!("doc_{doc_idx:04}.py");
        let mut body = String::new();
        match slot {
            Some(canary_idx) => {
                body.push_str(&canaries[*canary_idx].text);
                if !body.ends_with('\n') {
                    body.push('\n');
                }
                for _ in 0..config.filler_lines {
                    body.push_str(&code_line(&mut rng, &mut background_ident));
                }
                canaries[*canary_idx].docs.push(name.clone());
            }
            None => {
                for _ in 0..config.background_lines {
                    body.push_str(&code_line(&mut rng, &mut background_ident));
                }
            }
        }
        files.push((name, body));
    }

    Ok(SynthOutput { files, canaries })
}

/// Write the generated files under `dir` and the canary ground truth next to
/// them as `canaries.json`.
pub fn write_corpus(output: &SynthOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, body) in &output.files {
        std::fs::write(dir.join(name), body)?;
    }
    let meta = serde_json::to_string_pretty(&output.canaries)?;
    std::fs::write(dir.join("canaries.json"), meta)?;
    Ok(())
}

pub fn load_canaries(dir: &Path) -> Result<Vec<CanaryInfo>> {
    let text = std::fs::read_to_string(dir.join("canaries.json"))?;
    Ok(serde_json::from_str(&text)?)
}

/// Benchmark records for the planted canaries: prefix = first half of the
/// canary tokens, suffix = second half, frequency recounted from the actual
/// train token streams (not the planted figure).
pub fn canary_benchmark(canaries: &[CanaryInfo], corpus: &Corpus) -> Result<Vec<SnippetRecord>> {
    let classifier = Classifier::with_defaults();
    let streams = corpus.split_token_streams(Split::Train);
    let mut records = Vec::new();
    for canary in canaries {
        let toks = token::tokenize(&canary.text);
        let half = toks.len() / 2;
        let prefix_text = token::detokenize(&toks[..half]);
        let suffix_text = token::detokenize(&toks[half..]);
        let prefix_tokens = corpus.vocab.encode(&prefix_text);
        let suffix_tokens = corpus.vocab.encode(&suffix_text);
        let mut frequency = 0u64;
        for (_, stream) in &streams {
            if stream.len() < suffix_tokens.len() {
                continue;
            }
            for start in 0..=stream.len() - suffix_tokens.len() {
                if stream[start..start + suffix_tokens.len()] == suffix_tokens[..] {
                    frequency += 1;
                }
            }
        }
        let source_doc = canary.docs.first().cloned().unwrap_or_default();
        let label = classifier.classify(&canary.text);
        let entropy = analytics::gzip_entropy(&suffix_text)?;
        records.push(SnippetRecord {
            id: canary.id.clone(),
            source_doc,
            offset: 0,
            prefix_tokens,
            suffix_tokens,
            prefix_text,
            suffix_text,
            category: label.category,
            subcategory: label.subcategory,
            frequency,
            entropy,
        });
    }
    Ok(records)
}
