//! Corpus ingestion, deduplication, splitting, and benchmark extraction.
//!
//! Documents are normalized once at ingest (CRLF to LF, trailing whitespace
//! stripped) and never rewritten again, so the token stream the model trains
//! on is the token stream the attack scores against. All sampling is driven
//! by explicit seeds and document order is lexicographic by path, which makes
//! every artifact this module produces byte-reproducible.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics;
use crate::error::{Error, Result};
use crate::taxonomy::{Category, Classifier, CodeSubcategory};
use crate::token::{self, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub path: String,
    pub text: String,
    /// Hex SHA-256 of the normalized text.
    pub content_hash: String,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub split: BTreeMap<String, Split>,
    pub tokenizer_id: String,
    pub vocab: Vocab,
}

impl Corpus {
    pub fn train_docs(&self) -> impl Iterator<Item = &Document> {
        self.documents.iter().filter(|d| self.split.get(&d.id) == Some(&Split::Train))
    }

    pub fn test_docs(&self) -> impl Iterator<Item = &Document> {
        self.documents.iter().filter(|d| self.split.get(&d.id) == Some(&Split::Test))
    }

    /// Token-id streams of the given split, in document order.
    pub fn split_token_streams(&self, split: Split) -> Vec<(String, Vec<u32>)> {
        self.documents
            .iter()
            .filter(|d| self.split.get(&d.id) == Some(&split))
            .map(|d| (d.id.clone(), self.vocab.encode(&d.text)))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Allowed extensions, dot included (e.g. ".py").
    pub extensions: Vec<String>,
    pub min_bytes: u64,
    pub max_bytes: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { extensions: vec![".py".into()], min_bytes: 1, max_bytes: 1 << 22 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub files_seen: usize,
    pub files_ingested: usize,
    pub skipped_filtered: usize,
    pub skipped_undecodable: usize,
    pub skipped_empty: usize,
    pub warnings: Vec<String>,
}

fn sha256_hex(data: &[u8]) -> String {
    let digest = Sha256::digest(data);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Walk `root`, apply the filters, normalize and ingest every decodable file.
/// Document order is lexicographic by relative path. Unreadable roots are
/// fatal; undecodable files are skipped and counted.
pub fn ingest_directory(root: &Path, filters: &FilterConfig) -> Result<(Corpus, IngestReport)> {
    if !root.is_dir() {
        return Err(Error::Corpus(format!("corpus root {} is not a directory", root.display())));
    }
    let mut report = IngestReport::default();
    let mut paths: Vec<std::path::PathBuf> = Vec::new();
    for entry in walkdir::WalkDir::new(root) {
        let entry = entry.map_err(|e| Error::Corpus(format!("walking corpus root: {e}")))?;
        if !entry.file_type().is_file() {
            continue;
        }
        report.files_seen += 1;
        let path = entry.path();
        let name = path.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
        let ext_ok = filters.extensions.iter().any(|e| name.ends_with(e.as_str()));
        let size = entry.metadata().map(|m| m.len()).unwrap_or(0);
        if !ext_ok || size < filters.min_bytes || size > filters.max_bytes {
            report.skipped_filtered += 1;
            continue;
        }
        paths.push(path.to_path_buf());
    }
    paths.sort();

    let mut documents = Vec::new();
    for path in paths {
        let bytes = std::fs::read(&path)?;
        let raw = match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(_) => {
                report.skipped_undecodable += 1;
                continue;
            }
        };
        let text = token::normalize(&raw);
        if text.trim().is_empty() {
            report.skipped_empty += 1;
            continue;
        }
        let rel = path.strip_prefix(root).unwrap_or(&path).to_string_lossy().replace('\\', "/");
        documents.push(Document {
            id: rel.clone(),
            path: rel,
            content_hash: sha256_hex(text.as_bytes()),
            text,
        });
    }
    report.files_ingested = documents.len();
    if documents.is_empty() {
        report.warnings.push("ingested zero documents".to_string());
    }

    let vocab = Vocab::from_texts(documents.iter().map(|d| d.text.as_str()));
    let split = documents.iter().map(|d| (d.id.clone(), Split::Train)).collect();
    let tokenizer_id = vocab.fingerprint();
    Ok((Corpus { documents, split, tokenizer_id, vocab }, report))
}

// ---------------------------------------------------------------------------
// Deduplication
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DedupParams {
    /// Number of MinHash functions (>= 64).
    pub num_hashes: usize,
    /// Token shingle width (>= 5).
    pub shingle_width: usize,
    pub jaccard_threshold: f64,
}

impl Default for DedupParams {
    fn default() -> Self {
        DedupParams { num_hashes: 128, shingle_width: 7, jaccard_threshold: 0.85 }
    }
}

/// Exact hashes plus MinHash signatures for every document.
pub struct DedupIndex {
    pub params: DedupParams,
    pub exact: BTreeMap<String, String>,
    pub signatures: Vec<Vec<u64>>,
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut hash = 0xcbf29ce484222325u64 ^ seed;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn shingle_hashes(text: &str, width: usize) -> Vec<u64> {
    let tokens = token::tokenize(text);
    if tokens.len() < width {
        // Short document: the whole token sequence is the only shingle.
        let mut buf = Vec::new();
        for t in &tokens {
            buf.extend_from_slice(t.as_bytes());
            buf.push(0xff);
        }
        return vec![fnv1a(&buf, 0)];
    }
    let mut out = Vec::with_capacity(tokens.len() - width + 1);
    for w in tokens.windows(width) {
        let mut buf = Vec::new();
        for t in w {
            buf.extend_from_slice(t.as_bytes());
            buf.push(0xff);
        }
        out.push(fnv1a(&buf, 0));
    }
    out.sort_unstable();
    out.dedup();
    out
}

fn minhash_signature(shingles: &[u64], num_hashes: usize) -> Vec<u64> {
    (0..num_hashes)
        .map(|j| {
            let key = splitmix64(j as u64);
            shingles.iter().map(|&s| splitmix64(s ^ key)).min().unwrap_or(u64::MAX)
        })
        .collect()
}

impl DedupIndex {
    pub fn build(corpus: &Corpus, params: DedupParams) -> Result<Self> {
        if params.num_hashes < 64 {
            return Err(Error::Config("dedup needs >= 64 hash functions".into()));
        }
        if params.shingle_width < 5 {
            return Err(Error::Config("dedup needs shingle width >= 5".into()));
        }
        if !(params.jaccard_threshold > 0.0 && params.jaccard_threshold < 1.0) {
            return Err(Error::Config("jaccard threshold must be in (0,1)".into()));
        }
        let mut exact = BTreeMap::new();
        for doc in &corpus.documents {
            exact.entry(doc.content_hash.clone()).or_insert_with(|| doc.id.clone());
        }
        let signatures = corpus
            .documents
            .iter()
            .map(|d| minhash_signature(&shingle_hashes(&d.text, params.shingle_width), params.num_hashes))
            .collect();
        Ok(DedupIndex { params, exact, signatures })
    }
}

pub fn estimated_jaccard(a: &[u64], b: &[u64]) -> f64 {
    let matches = a.iter().zip(b).filter(|(x, y)| x == y).count();
    matches as f64 / a.len().max(1) as f64
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DedupReport {
    pub exact_removed: usize,
    pub near_removed: usize,
}

/// Remove exact duplicates, then near-duplicates at or above the Jaccard
/// threshold. The earliest document in corpus order survives.
pub fn dedup(corpus: Corpus, index: &DedupIndex) -> (Corpus, DedupReport) {
    let mut report = DedupReport::default();
    let mut survivors: Vec<Document> = Vec::new();
    let mut survivor_sigs: Vec<&Vec<u64>> = Vec::new();
    let mut seen_hashes: BTreeMap<&str, ()> = BTreeMap::new();

    for (i, doc) in corpus.documents.iter().enumerate() {
        if seen_hashes.contains_key(doc.content_hash.as_str()) {
            report.exact_removed += 1;
            continue;
        }
        let sig = &index.signatures[i];
        let near_dup = survivor_sigs
            .iter()
            .any(|s| estimated_jaccard(sig, s) >= index.params.jaccard_threshold);
        if near_dup {
            report.near_removed += 1;
            continue;
        }
        seen_hashes.insert(doc.content_hash.as_str(), ());
        survivors.push(doc.clone());
        survivor_sigs.push(sig);
    }

    let split = survivors.iter().map(|d| (d.id.clone(), Split::Train)).collect();
    let corpus = Corpus {
        documents: survivors,
        split,
        tokenizer_id: corpus.tokenizer_id,
        vocab: corpus.vocab,
    };
    (corpus, report)
}

// ---------------------------------------------------------------------------
// Train/test split
// ---------------------------------------------------------------------------

/// Document-level split, deterministic for a given seed. The train fraction
/// is `ratio` rounded to the nearest document, clamped so both splits are
/// non-empty.
pub fn split_train_test(mut corpus: Corpus, ratio: f64, seed: u64) -> Result<Corpus> {
    let n = corpus.documents.len();
    if n < 2 {
        return Err(Error::Corpus(format!("cannot split a corpus of {n} document(s)")));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} not in (0,1)")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(4);
    for i in (1..n).rev() {
        let j = (rng.random::<u64>() % (i as u64 + 1)) as usize;
        order.swap(i, j);
    }
    let train_count = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut split = BTreeMap::new();
    for (rank, &idx) in order.iter().enumerate() {
        let label = if rank < train_count { Split::Train } else { Split::Test };
        split.insert(corpus.documents[idx].id.clone(), label);
    }
    corpus.split = split;
    Ok(corpus)
}

// ---------------------------------------------------------------------------
// Benchmark extraction
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnippetRecord {
    pub id: String,
    pub source_doc: String,
    /// Token offset of the window within its document.
    pub offset: usize,
    pub prefix_tokens: Vec<u32>,
    pub suffix_tokens: Vec<u32>,
    pub prefix_text: String,
    pub suffix_text: String,
    pub category: Category,
    pub subcategory: Option<CodeSubcategory>,
    /// Occurrences of the suffix token sequence in the train split.
    pub frequency: u64,
    /// gzip-entropy ratio of the suffix text.
    pub entropy: f64,
}

/// Extract up to `n` windows of `len` tokens uniformly at random from the
/// train split, split each 50/50 into prefix and suffix, and populate the
/// frequency and entropy fields. Duplicate (document, offset) pairs are
/// rejected; textually identical snippets from different positions are kept.
pub fn extract_benchmark(
    corpus: &Corpus,
    n: usize,
    len: usize,
    seed: u64,
) -> Result<(Vec<SnippetRecord>, Vec<String>)> {
    if len < 2 {
        return Err(Error::Config("window length must be >= 2".into()));
    }
    let mut warnings = Vec::new();
    let docs: Vec<(&Document, Vec<&str>)> = corpus
        .documents
        .iter()
        .filter(|d| corpus.split.get(&d.id) == Some(&Split::Train))
        .map(|d| (d, token::tokenize(&d.text)))
        .collect();
    if docs.is_empty() {
        return Err(Error::Corpus("train split is empty".into()));
    }

    // Window start positions per document.
    let counts: Vec<usize> = docs
        .iter()
        .map(|(_, toks)| toks.len().saturating_sub(len - 1))
        .collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        warnings.push(format!("no document has {len} tokens; benchmark is empty"));
        return Ok((Vec::new(), warnings));
    }
    let target = n.min(total);
    if target < n {
        warnings.push(format!("corpus supplies only {total} distinct windows, requested {n}"));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(5);
    let mut chosen: std::collections::BTreeSet<(usize, usize)> = std::collections::BTreeSet::new();
    if target * 4 >= total {
        // Dense request: enumerate and shuffle.
        let mut all: Vec<(usize, usize)> = Vec::with_capacity(total);
        for (doc_idx, &count) in counts.iter().enumerate() {
            for offset in 0..count {
                all.push((doc_idx, offset));
            }
        }
        for i in (1..all.len()).rev() {
            let j = (rng.random::<u64>() % (i as u64 + 1)) as usize;
            all.swap(i, j);
        }
        chosen.extend(all.into_iter().take(target));
    } else {
        while chosen.len() < target {
            let mut r = (rng.random::<u64>() % total as u64) as usize;
            let mut doc_idx = 0;
            for (i, &count) in counts.iter().enumerate() {
                if r < count {
                    doc_idx = i;
                    break;
                }
                r -= count;
            }
            chosen.insert((doc_idx, r));
        }
    }

    // Frequency counting: index train streams by the first two suffix tokens.
    let streams: Vec<Vec<u32>> =
        docs.iter().map(|(d, _)| corpus.vocab.encode(&d.text)).collect();
    let mut first_pair: HashMap<(u32, u32), Vec<(usize, usize)>> = HashMap::new();
    for (doc_idx, stream) in streams.iter().enumerate() {
        for (pos, pair) in stream.windows(2).enumerate() {
            first_pair.entry((pair[0], pair[1])).or_default().push((doc_idx, pos));
        }
    }
    let count_occurrences = |needle: &[u32]| -> u64 {
        if needle.len() < 2 {
            return 0;
        }
        let Some(candidates) = first_pair.get(&(needle[0], needle[1])) else {
            return 0;
        };
        candidates
            .iter()
            .filter(|(doc_idx, pos)| {
                let stream = &streams[*doc_idx];
                pos + needle.len() <= stream.len()
                    && &stream[*pos..pos + needle.len()] == needle
            })
            .count() as u64
    };

    let classifier = Classifier::with_defaults();
    let prefix_len = len / 2;
    let mut records = Vec::with_capacity(chosen.len());
    for (doc_idx, offset) in chosen {
        let (doc, toks) = &docs[doc_idx];
        let window = &toks[offset..offset + len];
        let prefix_text = token::detokenize(&window[..prefix_len]);
        let suffix_text = token::detokenize(&window[prefix_len..]);
        let prefix_tokens = streams[doc_idx][offset..offset + prefix_len].to_vec();
        let suffix_tokens = streams[doc_idx][offset + prefix_len..offset + len].to_vec();
        let window_text = format!("{prefix_text}{suffix_text}");
        let label = classifier.classify(&window_text);
        let frequency = count_occurrences(&suffix_tokens);
        let entropy = analytics::gzip_entropy(&suffix_text)?;
        records.push(SnippetRecord {
            id: format!("{}:{offset}", doc.id),
            source_doc: doc.id.clone(),
            offset,
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
    Ok((records, warnings))
}

// ---------------------------------------------------------------------------
// Training windows
// ---------------------------------------------------------------------------

/// Overlapping training windows over the train split: offsets at multiples
/// of `stride` while a full `seq_len` window fits; documents shorter than
/// `seq_len` contribute one window if they have at least `stride` tokens.
pub fn training_windows(corpus: &Corpus, seq_len: usize, stride: usize) -> Vec<Vec<u32>> {
    let mut windows = Vec::new();
    for (_, stream) in corpus.split_token_streams(Split::Train) {
        windows_of(&stream, seq_len, stride, &mut windows);
    }
    windows
}

fn windows_of(stream: &[u32], seq_len: usize, stride: usize, out: &mut Vec<Vec<u32>>) {
    let n = stream.len();
    if n < seq_len {
        if n >= stride && n >= 2 {
            out.push(stream.to_vec());
        }
        return;
    }
    let mut offset = 0;
    while offset + seq_len <= n {
        out.push(stream[offset..offset + seq_len].to_vec());
        offset += stride;
    }
}

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub path: String,
    pub sha256: String,
    pub n_tokens: usize,
    pub split: Split,
}

/// JSON Lines manifest: one row per document.
pub fn write_manifest(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = String::new();
    for doc in &corpus.documents {
        let row = ManifestRow {
            id: doc.id.clone(),
            path: doc.path.clone(),
            sha256: doc.content_hash.clone(),
            n_tokens: token::tokenize(&doc.text).len(),
            split: *corpus.split.get(&doc.id).unwrap_or(&Split::Train),
        };
        out.push_str(&serde_json::to_string(&row)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// JSON Lines benchmark file: one row per snippet, token arrays as integers.
pub fn write_benchmark(records: &[SnippetRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_benchmark(path: &Path) -> Result<Vec<SnippetRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn corpus_from(texts: &[(&str, &str)]) -> Corpus {
        let documents: Vec<Document> = texts
            .iter()
            .map(|(id, text)| Document {
                id: id.to_string(),
                path: id.to_string(),
                text: token::normalize(text),
                content_hash: sha256_hex(token::normalize(text).as_bytes()),
            })
            .collect();
        let vocab = Vocab::from_texts(documents.iter().map(|d| d.text.as_str()));
        let split = documents.iter().map(|d| (d.id.clone(), Split::Train)).collect();
        Corpus { documents, split, tokenizer_id: vocab.fingerprint(), vocab }
    }

    #[test]
    fn ingest_filters_by_extension_and_warns_on_empty() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.py"), "x = 1\n").unwrap();
        std::fs::write(dir.path().join("b.py"), "y = 2\n").unwrap();
        std::fs::write(dir.path().join("c.txt"), "not code").unwrap();
        let (corpus, report) =
            ingest_directory(dir.path(), &FilterConfig::default()).unwrap();
        assert_eq!(corpus.documents.len(), 2);
        assert_eq!(report.skipped_filtered, 1);
        assert_eq!(corpus.documents[0].id, "a.py"); // lexicographic

        let empty = tempfile::tempdir().unwrap();
        let (corpus, report) = ingest_directory(empty.path(), &FilterConfig::default()).unwrap();
        assert!(corpus.documents.is_empty());
        assert!(!report.warnings.is_empty());
    }

    #[test]
    fn ingest_skips_undecodable_and_normalizes() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("ok.py"), "a = 1  \r\nb = 2\r\n").unwrap();
        std::fs::write(dir.path().join("bad.py"), [0xffu8, 0xfe, 0x00, 0x41]).unwrap();
        let (corpus, report) = ingest_directory(dir.path(), &FilterConfig::default()).unwrap();
        assert_eq!(report.skipped_undecodable, 1);
        assert_eq!(corpus.documents.len(), 1);
        assert_eq!(corpus.documents[0].text, "a = 1\nb = 2\n");
    }

    #[test]
    fn missing_root_is_fatal() {
        assert!(ingest_directory(Path::new("/nonexistent/root"), &FilterConfig::default())
            .is_err());
    }

    #[test]
    fn exact_duplicates_collapse_to_first() {
        let corpus = corpus_from(&[
            ("a.py", "same = 1\ncontent = 2\n"),
            ("b.py", "same = 1\ncontent = 2\n"),
            ("c.py", "different = 3\n"),
        ]);
        let index = DedupIndex::build(&corpus, DedupParams::default()).unwrap();
        let (deduped, report) = dedup(corpus, &index);
        assert_eq!(report.exact_removed, 1);
        let ids: Vec<&str> = deduped.documents.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, vec!["a.py", "c.py"]);
    }

    #[test]
    fn near_duplicates_collapse_unrelated_survive() {
        // Two long documents differing in one token out of ~1000.
        let base: String = (0..200)
            .map(|i| format!("token{} alpha beta gamma delta\n", i))
            .collect();
        let mut variant = base.clone();
        variant = variant.replace("token7 ", "tokenX ");
        let unrelated: String = (0..200)
            .map(|i| format!("zeta{} omega psi chi phi\n", i * 13 + 7))
            .collect();
        let corpus = corpus_from(&[("a.py", &base), ("b.py", &variant), ("c.py", &unrelated)]);

        // Brute-force Jaccard on the pair confirms the fixture is past the
        // threshold.
        let sa = shingle_hashes(&corpus.documents[0].text, 7);
        let sb = shingle_hashes(&corpus.documents[1].text, 7);
        let inter = sa.iter().filter(|h| sb.binary_search(h).is_ok()).count();
        let union = sa.len() + sb.len() - inter;
        let true_jaccard = inter as f64 / union as f64;
        assert!(true_jaccard >= 0.85, "fixture too weak: {true_jaccard}");

        let index = DedupIndex::build(&corpus, DedupParams::default()).unwrap();
        let (deduped, report) = dedup(corpus, &index);
        assert_eq!(report.near_removed, 1);
        let ids: Vec<&str> = deduped.documents.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, vec!["a.py", "c.py"]);
    }

    #[test]
    fn dedup_is_idempotent() {
        let corpus = corpus_from(&[
            ("a.py", "same = 1\ncontent = 2\nmore = 3\nlines = 4\nhere = 5\n"),
            ("b.py", "same = 1\ncontent = 2\nmore = 3\nlines = 4\nhere = 5\n"),
            ("c.py", "other = 9\nstuff = 8\nentirely = 7\nnew = 6\nwords = 5\n"),
        ]);
        let index = DedupIndex::build(&corpus, DedupParams::default()).unwrap();
        let (once, _) = dedup(corpus, &index);
        let index2 = DedupIndex::build(&once, DedupParams::default()).unwrap();
        let (twice, report2) = dedup(once.clone(), &index2);
        assert_eq!(report2.exact_removed + report2.near_removed, 0);
        let a: Vec<&str> = once.documents.iter().map(|d| d.id.as_str()).collect();
        let b: Vec<&str> = twice.documents.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn split_is_deterministic_and_proportional() {
        let texts: Vec<(String, String)> =
            (0..10).map(|i| (format!("d{i}.py"), format!("x{} = {}\n", i, i))).collect();
        let refs: Vec<(&str, &str)> =
            texts.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let corpus = corpus_from(&refs);
        let split1 = split_train_test(corpus.clone(), 0.8, 7).unwrap();
        let split2 = split_train_test(corpus, 0.8, 7).unwrap();
        assert_eq!(split1.split, split2.split);
        assert_eq!(split1.train_docs().count(), 8);
        assert_eq!(split1.test_docs().count(), 2);
    }

    #[test]
    fn split_rejects_tiny_corpora() {
        let corpus = corpus_from(&[("only.py", "x = 1\n")]);
        assert!(split_train_test(corpus, 0.8, 0).is_err());
    }

    #[test]
    fn split_seed_42_matches_golden_fixture() {
        // 25 fixed documents; the assignment below was frozen on first run
        // and guards against accidental shuffle-order changes.
        let texts: Vec<(String, String)> =
            (0..25).map(|i| (format!("doc{i:02}.py"), format!("v{} = {}\n", i, i * 3))).collect();
        let refs: Vec<(&str, &str)> =
            texts.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let corpus = corpus_from(&refs);
        let split = split_train_test(corpus, 0.8, 42).unwrap();
        let test_ids: Vec<&str> = split
            .documents
            .iter()
            .filter(|d| split.split[&d.id] == Split::Test)
            .map(|d| d.id.as_str())
            .collect();
        let golden: Vec<&str> = GOLDEN_TEST_IDS.to_vec();
        assert_eq!(test_ids, golden);
    }

    // Frozen from the first run of split_train_test(seed=42) on the
    // 25-document fixture above.
    const GOLDEN_TEST_IDS: &[&str] =
        &["doc07.py", "doc08.py", "doc14.py", "doc15.py", "doc19.py"];

    #[test]
    fn window_rules_match_worked_examples() {
        let mk = |n: usize| (0..n as u32).collect::<Vec<u32>>();
        let mut out = Vec::new();
        windows_of(&mk(1024), 1024, 256, &mut out);
        assert_eq!(out.len(), 1);

        out.clear();
        windows_of(&mk(1281), 1024, 256, &mut out);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0][0], 0);
        assert_eq!(out[1][0], 256);

        out.clear();
        windows_of(&mk(2048), 1024, 256, &mut out);
        let offsets: Vec<u32> = out.iter().map(|w| w[0]).collect();
        assert_eq!(offsets, vec![0, 256, 512, 768, 1024]);

        // Short document: kept when >= stride tokens.
        out.clear();
        windows_of(&mk(300), 1024, 256, &mut out);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].len(), 300);
        out.clear();
        windows_of(&mk(100), 1024, 256, &mut out);
        assert!(out.is_empty());
    }

    #[test]
    fn benchmark_single_window_and_frequency() {
        // Document with exactly 100 tokens -> 1 snippet at offset 0.
        let line = "alpha beta = gamma(delta)\n";
        let text = line.repeat(10);
        let toks = token::tokenize(&text);
        assert!(toks.len() >= 100);
        let text = token::detokenize(&toks[..100]);
        assert_eq!(token::tokenize(&text).len(), 100);
        let corpus = corpus_from(&[("one.py", &text), ("two.py", "pad = 1\n")]);
        let (records, _) = extract_benchmark(&corpus, 3000, 100, 1).unwrap();
        let from_one: Vec<&SnippetRecord> =
            records.iter().filter(|r| r.source_doc == "one.py").collect();
        assert_eq!(from_one.len(), 1);
        assert_eq!(from_one[0].offset, 0);
        assert_eq!(from_one[0].prefix_tokens.len(), 50);
        assert_eq!(from_one[0].suffix_tokens.len(), 50);
        // The suffix of a line-repeating document recurs at each period.
        assert!(from_one[0].frequency >= 1);
        assert!(from_one[0].entropy > 0.0);
    }

    #[test]
    fn benchmark_draws_only_from_train_and_roundtrips_text() {
        let texts: Vec<(String, String)> = (0..6)
            .map(|i| {
                let body: String =
                    (0..40).map(|j| format!("v{}_{} = f{}({})\n", i, j, j, j)).collect();
                (format!("d{i}.py"), body)
            })
            .collect();
        let refs: Vec<(&str, &str)> =
            texts.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let corpus = split_train_test(corpus_from(&refs), 0.8, 3).unwrap();
        let (records, _) = extract_benchmark(&corpus, 50, 100, 9).unwrap();
        assert!(!records.is_empty());
        for r in &records {
            assert_eq!(corpus.split[&r.source_doc], Split::Train);
            // Tokenize/detokenize round trip: decoding ids reproduces text.
            assert_eq!(corpus.vocab.decode(&r.prefix_tokens), r.prefix_text);
            assert_eq!(corpus.vocab.decode(&r.suffix_tokens), r.suffix_text);
        }
    }

    #[test]
    fn benchmark_seeded_runs_are_byte_identical() {
        let texts: Vec<(String, String)> = (0..4)
            .map(|i| {
                let body: String =
                    (0..60).map(|j| format!("q{}_{} = g{}({})\n", i, j, j, j)).collect();
                (format!("d{i}.py"), body)
            })
            .collect();
        let refs: Vec<(&str, &str)> =
            texts.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let corpus = split_train_test(corpus_from(&refs), 0.8, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (r1, _) = extract_benchmark(&corpus, 40, 100, 77).unwrap();
        let (r2, _) = extract_benchmark(&corpus, 40, 100, 77).unwrap();
        let p1 = dir.path().join("b1.jsonl");
        let p2 = dir.path().join("b2.jsonl");
        write_benchmark(&r1, &p1).unwrap();
        write_benchmark(&r2, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let loaded = read_benchmark(&p1).unwrap();
        assert_eq!(loaded.len(), r1.len());
    }

    #[test]
    fn benchmark_requires_train_docs() {
        let mut corpus = corpus_from(&[("a.py", "x = 1\n"), ("b.py", "y = 2\n")]);
        corpus.split =
            corpus.documents.iter().map(|d| (d.id.clone(), Split::Test)).collect();
        assert!(extract_benchmark(&corpus, 10, 100, 0).is_err());
    }

    #[test]
    fn planted_suffix_frequency_counts_occurrences() {
        // One document repeats a distinctive 100-token block 3 times amid
        // filler; a window aligned at its start must report frequency 3.
        let block_line = "zq1 = zq2(zq3, zq4)\n"; // 13 tokens
        let mut block = String::new();
        while token::tokenize(&block).len() < 100 {
            block.push_str(block_line);
        }
        let block = token::detokenize(&token::tokenize(&block)[..100]);
        let filler: String = (0..50).map(|i| format!("pad{i} = {i}\n")).collect();
        let text = format!("{block}{filler}{block}{filler}{block}");
        let corpus = corpus_from(&[("big.py", &text), ("other.py", "safe = 0\n")]);
        let (records, _) = extract_benchmark(&corpus, 10_000, 100, 5).unwrap();
        let aligned = records
            .iter()
            .find(|r| r.source_doc == "big.py" && r.offset == 0)
            .expect("dense sampling covers offset 0");
        // Brute-force recount.
        let stream = corpus.vocab.encode(&corpus.documents[0].text);
        let needle = &aligned.suffix_tokens;
        let mut count = 0;
        for start in 0..=stream.len().saturating_sub(needle.len()) {
            if &stream[start..start + needle.len()] == needle.as_slice() {
                count += 1;
            }
        }
        assert_eq!(aligned.frequency, count);
        assert!(aligned.frequency >= 3);
    }

    #[test]
    fn paper_scale_corpus_ingests_quickly() {
        // One file of ~2.6M tokens must ingest (read, normalize, hash,
        // tokenize into the vocabulary) well under the 60 s budget.
        let dir = tempfile::tempdir().unwrap();
        let line = "value_a = helper_fn(arg_one, arg_two) + offset\n";
        let tokens_per_line = token::tokenize(line).len();
        let mut body = String::with_capacity(8 << 20);
        let repeats = 2_617_493 / tokens_per_line + 1;
        for i in 0..repeats {
            if i % 97 == 0 {
                body.push_str(&format!("marker_{i} = {i}\n"));
            }
            body.push_str(line);
        }
        assert!(token::tokenize(&body).len() >= 2_617_493);
        std::fs::write(dir.path().join("big.py"), &body).unwrap();
        let filters = FilterConfig { max_bytes: 64 << 20, ..FilterConfig::default() };
        let started = std::time::Instant::now();
        let (corpus, _) = ingest_directory(dir.path(), &filters).unwrap();
        let elapsed = started.elapsed().as_secs_f64();
        assert_eq!(corpus.documents.len(), 1);
        assert!(elapsed < 60.0, "paper-scale ingest took {elapsed:.1}s");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn dedup_idempotence_property(docs in proptest::collection::vec("[a-f ]{30,120}", 2..8)) {
            let texts: Vec<(String, String)> = docs
                .iter()
                .enumerate()
                .map(|(i, t)| (format!("d{i}.py"), format!("{t}\n")))
                .collect();
            let refs: Vec<(&str, &str)> =
                texts.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            let corpus = corpus_from(&refs);
            let index = DedupIndex::build(&corpus, DedupParams::default()).unwrap();
            let (once, _) = dedup(corpus, &index);
            let index2 = DedupIndex::build(&once, DedupParams::default()).unwrap();
            let (twice, report) = dedup(once.clone(), &index2);
            prop_assert_eq!(report.exact_removed + report.near_removed, 0);
            prop_assert_eq!(once.documents.len(), twice.documents.len());
        }
    }
}
