//! Pipeline orchestration: one run configuration file drives every
//! subcommand, and all outputs land under a fingerprinted directory so
//! reruns with a changed config never clobber earlier artifacts.
//!
//! Artifact layout under `<out_dir>/<fingerprint>/`:
//!
//! ```text
//! corpus/      manifest.jsonl, vocab.json, ingest_report.json
//! bench/       benchmark.jsonl, canaries.jsonl (synthetic corpora only)
//! runs/<role>/ model.json, epoch checkpoints, manifest.json, telemetry.json
//! attack/      <role>.json reports, generations/ (content-addressed texts)
//! report/      report.json + CSV tables (byte-stable across reruns)
//! telemetry.json   wall-clock aggregate; deliberately outside report/
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::accountant;
use crate::analytics::{self, Report};
use crate::attack::{self, AttackReport, RoleKind};
use crate::codebleu::CodeBleuWeights;
use crate::corpus::{self, Corpus, DedupParams, FilterConfig, SnippetRecord};
use crate::dpsgd::{self, DpOptions, PrivacySpec, Telemetry, TrainConfig};
use crate::error::{Error, Result};
use crate::modelgw::{EndpointKind, Gateway, GenerationParams, ModelEndpoint, ToyBackend};
use crate::synth::{self, SynthConfig};
use crate::taxonomy;
use crate::token::Vocab;
use crate::toylm::{ToyLm, ToyLmConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchParams {
    pub n: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowParams {
    pub seq_len: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub context: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyParams {
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    pub clip_norm: f64,
    #[serde(default)]
    pub noise_multiplier: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackParams {
    pub top_p: f64,
    pub temperature: f64,
    pub n_samples: usize,
    pub max_new_tokens: usize,
    pub tau: f64,
}

/// The single run-configuration file. Validated against
/// `docs/run_config.schema.json` semantics before any work starts; unknown
/// fields are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Input corpus directory; absent means the demo's synthetic corpus.
    #[serde(default)]
    pub corpus_dir: Option<PathBuf>,
    pub filters: FilterConfig,
    pub dedup: DedupParams,
    pub split_ratio: f64,
    pub benchmark: BenchParams,
    pub windows: WindowParams,
    pub model: ModelParams,
    pub train: TrainParams,
    pub privacy: PrivacyParams,
    pub attack: AttackParams,
    /// Remote completion endpoint; absent means the in-process toy model.
    #[serde(default)]
    pub endpoint: Option<ModelEndpoint>,
    /// JSONL file of functional-correctness tasks for `eval`.
    #[serde(default)]
    pub eval_tasks: Option<PathBuf>,
    pub pass_ks: Vec<usize>,
    /// Synthetic-corpus settings used when corpus_dir is absent.
    #[serde(default)]
    pub synth: Option<SynthConfig>,
    /// Average power draw for kWh derivation.
    #[serde(default)]
    pub watts: Option<f64>,
    #[serde(default)]
    pub checkpoint_every_epoch: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            out_dir: PathBuf::from("out"),
            corpus_dir: None,
            filters: FilterConfig::default(),
            dedup: DedupParams::default(),
            split_ratio: 0.8,
            benchmark: BenchParams { n: 3000, len: 100 },
            windows: WindowParams { seq_len: 1024, stride: 256 },
            model: ModelParams { context: 8, embed_dim: 32, hidden_dim: 64 },
            train: TrainParams { lr: 1e-4, batch_size: 32, weight_decay: 0.01, epochs: 6 },
            privacy: PrivacyParams {
                epsilons: vec![10.0, 1.0, 0.1],
                delta: None,
                clip_norm: 1.5,
                noise_multiplier: None,
            },
            attack: AttackParams {
                top_p: 0.95,
                temperature: 0.6,
                n_samples: 5,
                max_new_tokens: 50,
                tau: 0.85,
            },
            endpoint: None,
            eval_tasks: None,
            pass_ks: vec![1, 5, 10],
            synth: None,
            watts: None,
            checkpoint_every_epoch: false,
        }
    }
}

impl RunConfig {
    /// The bundled desk-scale recipe: synthetic canary corpus, small windows,
    /// and a learning rate at which six epochs visibly memorize the
    /// frequent canaries.
    pub fn demo() -> Self {
        RunConfig {
            benchmark: BenchParams { n: 200, len: 100 },
            windows: WindowParams { seq_len: 128, stride: 64 },
            train: TrainParams { lr: 0.03, batch_size: 32, weight_decay: 0.01, epochs: 6 },
            synth: Some(SynthConfig::default()),
            checkpoint_every_epoch: true,
            ..RunConfig::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::Config("split_ratio must be in (0,1)".into()));
        }
        if self.benchmark.len < 2 || self.benchmark.n == 0 {
            return Err(Error::Config("benchmark n and len must be positive".into()));
        }
        if self.windows.seq_len < 2 || self.windows.stride == 0 {
            return Err(Error::Config("window seq_len and stride must be positive".into()));
        }
        if self.train.lr <= 0.0 || self.train.batch_size == 0 || self.train.epochs == 0 {
            return Err(Error::Config("train lr, batch_size, epochs must be positive".into()));
        }
        for eps in &self.privacy.epsilons {
            if *eps <= 0.0 {
                return Err(Error::Config("epsilon values must be positive".into()));
            }
        }
        if !(self.attack.tau > 0.0 && self.attack.tau < 1.0) {
            return Err(Error::Config("tau must be in (0,1)".into()));
        }
        if let Some(endpoint) = &self.endpoint {
            endpoint.validate()?;
        }
        self.generation_params().validate()?;
        Ok(())
    }

    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            top_p: self.attack.top_p,
            temperature: self.attack.temperature,
            n_samples: self.attack.n_samples,
            max_new_tokens: self.attack.max_new_tokens,
            seed: derive_seed(self.seed, "attack"),
        }
    }

    /// Semantic fingerprint: everything except the output location, so the
    /// same experiment writes the same relative tree anywhere.
    pub fn fingerprint(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(self.fingerprint())
    }

    fn corpus_source(&self) -> PathBuf {
        match &self.corpus_dir {
            Some(dir) => dir.clone(),
            None => self.run_dir().join("synth_corpus"),
        }
    }
}

/// All randomness flows from the one master seed through named streams.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64 ^ master.rotate_left(31);
    for b in label.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn require(path: &Path, producer: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            producer: producer.to_string(),
        });
    }
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

/// Ingest + dedup + split; writes the corpus manifest and vocabulary.
/// For synthetic runs the corpus directory is generated first.
pub fn cmd_ingest(config: &RunConfig) -> Result<()> {
    let run_dir = config.run_dir();
    let source = config.corpus_source();
    if config.corpus_dir.is_none() {
        let synth_config = config.synth.clone().unwrap_or_default();
        let output = synth::generate(&synth_config)?;
        synth::write_corpus(&output, &source)?;
    }
    let (corpus, report) = corpus::ingest_directory(&source, &config.filters)?;
    let index = corpus::DedupIndex::build(&corpus, config.dedup.clone())?;
    let (corpus, dedup_report) = corpus::dedup(corpus, &index);
    let corpus = corpus::split_train_test(corpus, config.split_ratio, config.seed)?;

    if config.corpus_dir.is_none() {
        // The generator pre-computed this split; a drifted shuffle would
        // silently move canaries into the test split.
        let canaries = synth::load_canaries(&source)?;
        for canary in &canaries {
            for doc in &canary.docs {
                if corpus.split.get(doc) != Some(&corpus::Split::Train) {
                    return Err(Error::Corpus(format!(
                        "synthetic canary document {doc} left the train split"
                    )));
                }
            }
        }
    }

    let corpus_dir = run_dir.join("corpus");
    std::fs::create_dir_all(&corpus_dir)?;
    corpus::write_manifest(&corpus, &corpus_dir.join("manifest.jsonl"))?;
    corpus.vocab.save(&corpus_dir.join("vocab.json"))?;
    write_json(&report, &corpus_dir.join("ingest_report.json"))?;
    write_json(&dedup_report, &corpus_dir.join("dedup_report.json"))?;
    println!(
        "ingest: {} documents ({} train / {} test), vocab {}",
        corpus.documents.len(),
        corpus.train_docs().count(),
        corpus.test_docs().count(),
        corpus.vocab.len()
    );
    Ok(())
}

/// Rebuild the in-memory corpus from the source directory and the stored
/// split; verifies the manifest hashes so stale artifacts are caught.
fn load_corpus(config: &RunConfig) -> Result<Corpus> {
    let run_dir = config.run_dir();
    let manifest_path = run_dir.join("corpus/manifest.jsonl");
    require(&manifest_path, "ingest")?;
    let manifest_text = std::fs::read_to_string(&manifest_path)?;
    let rows: Vec<corpus::ManifestRow> = manifest_text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect::<Result<_>>()?;

    let (ingested, _) = corpus::ingest_directory(&config.corpus_source(), &config.filters)?;
    let by_id: BTreeMap<&str, &corpus::Document> =
        ingested.documents.iter().map(|d| (d.id.as_str(), d)).collect();

    let mut documents = Vec::with_capacity(rows.len());
    let mut split = BTreeMap::new();
    for row in &rows {
        let doc = by_id.get(row.id.as_str()).ok_or_else(|| {
            Error::Corpus(format!("manifest references missing document {}", row.id))
        })?;
        if doc.content_hash != row.sha256 {
            return Err(Error::Corpus(format!(
                "document {} changed since ingest (hash mismatch)",
                row.id
            )));
        }
        documents.push((*doc).clone());
        split.insert(row.id.clone(), row.split);
    }
    let vocab = Vocab::load(&run_dir.join("corpus/vocab.json"))?;
    let tokenizer_id = vocab.fingerprint();
    Ok(Corpus { documents, split, tokenizer_id, vocab })
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

pub fn cmd_bench(config: &RunConfig) -> Result<()> {
    let run_dir = config.run_dir();
    let corpus = load_corpus(config)?;
    let (records, warnings) = corpus::extract_benchmark(
        &corpus,
        config.benchmark.n,
        config.benchmark.len,
        derive_seed(config.seed, "bench"),
    )?;
    for w in &warnings {
        eprintln!("bench: {w}");
    }
    let bench_dir = run_dir.join("bench");
    std::fs::create_dir_all(&bench_dir)?;
    corpus::write_benchmark(&records, &bench_dir.join("benchmark.jsonl"))?;

    let rows: Vec<(String, taxonomy::CategoryLabel)> = {
        let classifier = taxonomy::Classifier::with_defaults();
        records
            .iter()
            .map(|r| {
                let text = format!("{}{}", r.prefix_text, r.suffix_text);
                (r.id.clone(), classifier.classify(&text))
            })
            .collect()
    };
    let file = std::fs::File::create(bench_dir.join("classification.csv"))?;
    taxonomy::write_classification_csv(file, &rows)?;

    // Ground-truth canary benchmark rides along for synthetic corpora.
    if config.corpus_dir.is_none() {
        let canaries = synth::load_canaries(&config.corpus_source())?;
        let canary_records = synth::canary_benchmark(&canaries, &corpus)?;
        corpus::write_benchmark(&canary_records, &bench_dir.join("canaries.jsonl"))?;
    }
    println!("bench: {} snippets", records.len());
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn roles(config: &RunConfig) -> Vec<RoleKind> {
    let mut roles = vec![RoleKind::Pretrained, RoleKind::BaseFt];
    for &eps in &config.privacy.epsilons {
        roles.push(RoleKind::DpFt { epsilon: eps });
    }
    roles
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    role: String,
    train: TrainConfig,
    final_epsilon: Option<(f64, f64)>,
    mean_clipped_fraction: Option<f64>,
    epochs: usize,
}

fn model_config(config: &RunConfig, vocab: &Vocab) -> ToyLmConfig {
    ToyLmConfig {
        vocab_size: vocab.len(),
        context: config.model.context,
        embed_dim: config.model.embed_dim,
        hidden_dim: config.model.hidden_dim,
        seed: derive_seed(config.seed, "init"),
    }
}

/// Train one role (or, with `only_eps` unset, every configured role).
/// `pretrained` is the untouched init model and is written without training.
pub fn cmd_train(config: &RunConfig, only_eps: Option<f64>) -> Result<()> {
    let run_dir = config.run_dir();
    let corpus = load_corpus(config)?;
    let windows =
        corpus::training_windows(&corpus, config.windows.seq_len, config.windows.stride);
    if windows.is_empty() {
        return Err(Error::Corpus("no training windows; corpus too small".into()));
    }
    let n = windows.len();
    let selected: Vec<RoleKind> = roles(config)
        .into_iter()
        .filter(|role| match (role, only_eps) {
            (_, None) => true,
            (RoleKind::DpFt { epsilon }, Some(target)) => (*epsilon - target).abs() < 1e-12,
            (RoleKind::Pretrained, Some(_)) => true, // cheap and always needed
            (RoleKind::BaseFt, Some(_)) => false,
        })
        .collect();

    for role in selected {
        let role_name = role.name();
        let role_dir = run_dir.join("runs").join(&role_name);
        std::fs::create_dir_all(&role_dir)?;
        let init = ToyLm::init(model_config(config, &corpus.vocab))?;

        match role {
            RoleKind::Pretrained => {
                init.save(&role_dir.join("model.json"))?;
                write_json(
                    &RunManifest {
                        role: role_name.clone(),
                        train: TrainConfig::default(),
                        final_epsilon: None,
                        mean_clipped_fraction: None,
                        epochs: 0,
                    },
                    &role_dir.join("manifest.json"),
                )?;
                println!("train[{role_name}]: stored untrained init model");
                continue;
            }
            RoleKind::BaseFt | RoleKind::DpFt { .. } => {}
        }

        let dp = match role {
            RoleKind::DpFt { epsilon } => {
                let opts = DpOptions {
                    epsilon,
                    delta: config.privacy.delta,
                    clip_norm: config.privacy.clip_norm,
                    noise_multiplier: config.privacy.noise_multiplier,
                };
                Some(PrivacySpec::resolve(&opts, n, config.train.batch_size, config.train.epochs)?)
            }
            _ => None,
        };
        let train_config = TrainConfig {
            lr: config.train.lr,
            batch_size: config.train.batch_size,
            weight_decay: config.train.weight_decay,
            epochs: config.train.epochs,
            seed: config.seed,
            dp,
            ..TrainConfig::default()
        };
        let checkpoint_dir = config.checkpoint_every_epoch.then(|| role_dir.join("checkpoints"));
        let output =
            dpsgd::train(init, &windows, &train_config, checkpoint_dir.as_deref())?;
        output.model.save(&role_dir.join("model.json"))?;

        let mean_clip = if output.clip_stats.is_empty() {
            None
        } else {
            Some(
                output.clip_stats.iter().map(|s| s.clipped_fraction).sum::<f64>()
                    / output.clip_stats.len() as f64,
            )
        };
        if !output.clip_stats.is_empty() {
            let mut w = csv::Writer::from_path(role_dir.join("clip_stats.csv"))?;
            w.write_record([
                "step",
                "batch_actual_size",
                "clipped_fraction",
                "mean_pre_clip_norm",
                "max_post_clip_norm",
            ])?;
            for s in &output.clip_stats {
                w.write_record([
                    s.step.to_string(),
                    s.batch_actual_size.to_string(),
                    format!("{:.6}", s.clipped_fraction),
                    format!("{:.6}", s.mean_pre_clip_norm),
                    format!("{:.6}", s.max_post_clip_norm),
                ])?;
            }
            w.flush()?;
        }
        let telemetry = match config.watts {
            Some(w) => output.telemetry.clone().with_power(w),
            None => output.telemetry.clone(),
        };
        write_json(&telemetry, &role_dir.join("telemetry.json"))?;
        write_json(
            &RunManifest {
                role: role_name.clone(),
                train: train_config,
                final_epsilon: output.final_epsilon,
                mean_clipped_fraction: mean_clip,
                epochs: config.train.epochs,
            },
            &role_dir.join("manifest.json"),
        )?;
        match output.final_epsilon {
            Some((eps, alpha)) => println!(
                "train[{role_name}]: done, accounted eps = {eps:.4} (alpha = {alpha:.2})"
            ),
            None => println!("train[{role_name}]: done"),
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// account
// ---------------------------------------------------------------------------

pub struct AccountArgs {
    pub q: f64,
    pub sigma: Option<f64>,
    pub target_eps: Option<f64>,
    pub steps: u64,
    pub delta: f64,
    pub curve_out: Option<PathBuf>,
}

/// Standalone accountant: epsilon for a given sigma, or sigma for a target
/// epsilon, plus the per-step RDP curve as CSV.
pub fn cmd_account(args: &AccountArgs) -> Result<()> {
    let sigma = match (args.sigma, args.target_eps) {
        (Some(sigma), None) => sigma,
        (None, Some(target)) => {
            let sigma = accountant::calibrate_sigma(target, args.delta, args.q, args.steps)?;
            println!("calibrated sigma = {sigma:.6}");
            sigma
        }
        _ => {
            return Err(Error::Config(
                "provide exactly one of --sigma or --target-eps".into(),
            ))
        }
    };
    let (eps, alpha) = accountant::epsilon(args.q, sigma, args.steps, args.delta)?;
    println!(
        "epsilon = {eps:.6} at delta = {} after {} steps (q = {}, sigma = {sigma:.6}, alpha = {alpha:.2})",
        args.delta, args.steps, args.q
    );
    if let Some(path) = &args.curve_out {
        let curve = accountant::rdp_curve(args.q, sigma, &accountant::default_orders())?;
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["alpha", "rdp_eps_per_step"])?;
        for (a, e) in curve.orders.iter().zip(&curve.eps_per_step) {
            w.write_record([format!("{a:.6}"), format!("{e:.6e}")])?;
        }
        w.flush()?;
        println!("rdp curve written to {}", path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// score
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct ScorePair {
    #[serde(default)]
    id: Option<String>,
    candidate: String,
    reference: String,
}

/// Score candidate/reference pairs (JSON Lines with `candidate` and
/// `reference` fields) and emit one CSV row of component scores per pair.
pub fn cmd_score(pairs_path: &Path, out: Option<&Path>, tau: f64) -> Result<()> {
    let text = std::fs::read_to_string(pairs_path)?;
    let weights = CodeBleuWeights::default();
    let mut writer: csv::Writer<Box<dyn std::io::Write>> = match out {
        Some(path) => csv::Writer::from_writer(Box::new(std::fs::File::create(path)?)),
        None => csv::Writer::from_writer(Box::new(std::io::stdout())),
    };
    writer.write_record([
        "id",
        "bleu",
        "weighted_bleu",
        "ast_match",
        "dataflow_match",
        "combined",
        "dataflow_defined",
        "match_kind",
    ])?;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let pair: ScorePair =
            serde_json::from_str(line).map_err(|e| Error::Config(format!("line {}: {e}", idx + 1)))?;
        let result = crate::codebleu::match_kind(&pair.candidate, &pair.reference, &weights, tau)?;
        let s = result.score;
        writer.write_record([
            pair.id.unwrap_or_else(|| (idx + 1).to_string()),
            format!("{:.6}", s.bleu),
            format!("{:.6}", s.weighted_bleu),
            format!("{:.6}", s.ast_match),
            format!("{:.6}", s.dataflow_match),
            format!("{:.6}", s.combined),
            s.dataflow_defined.to_string(),
            format!("{:?}", result.kind),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// attack
// ---------------------------------------------------------------------------

fn load_model_gateway(config: &RunConfig, role: &str, vocab: &Vocab) -> Result<Gateway> {
    if let Some(endpoint) = &config.endpoint {
        if endpoint.kind == EndpointKind::Remote {
            let audit = config.run_dir().join("attack").join(format!("{role}_audit.jsonl"));
            std::fs::create_dir_all(audit.parent().unwrap())?;
            return Ok(Gateway::Remote(crate::modelgw::RemoteClient::new(
                endpoint.clone(),
                Some(&audit),
            )?));
        }
    }
    let model_path = config.run_dir().join("runs").join(role).join("model.json");
    require(&model_path, "train")?;
    let model = ToyLm::load(&model_path)?;
    Ok(Gateway::Toy(ToyBackend::new(model, vocab.clone())))
}

fn attack_benchmark(config: &RunConfig) -> Result<Vec<SnippetRecord>> {
    let run_dir = config.run_dir();
    // Synthetic corpora attack the planted canaries plus the sampled
    // benchmark; real corpora use the sampled benchmark alone.
    let mut records = Vec::new();
    let canary_path = run_dir.join("bench/canaries.jsonl");
    if canary_path.exists() {
        records.extend(corpus::read_benchmark(&canary_path)?);
    }
    let bench_path = run_dir.join("bench/benchmark.jsonl");
    require(&bench_path, "bench")?;
    records.extend(corpus::read_benchmark(&bench_path)?);
    Ok(records)
}

pub fn cmd_attack(config: &RunConfig, only_role: Option<&str>) -> Result<()> {
    let run_dir = config.run_dir();
    let corpus = load_corpus(config)?;
    let benchmark = attack_benchmark(config)?;
    let params = config.generation_params();
    let weights = CodeBleuWeights::default();
    let attack_dir = run_dir.join("attack");
    std::fs::create_dir_all(&attack_dir)?;

    for role in roles(config) {
        let role_name = role.name();
        if let Some(only) = only_role {
            if only != role_name {
                continue;
            }
        }
        let gateway = load_model_gateway(config, &role_name, &corpus.vocab)?;
        let (records, errors) = attack::run_extraction(
            &benchmark,
            &role_name,
            &gateway,
            &params,
            &weights,
            config.attack.tau,
        )?;
        // Content-addressed generation store for audit.
        let gen_dir = attack_dir.join("generations");
        std::fs::create_dir_all(&gen_dir)?;
        for record in &records {
            for generation in &record.generations {
                let digest = Sha256::digest(generation.as_bytes());
                let name: String = digest.iter().take(8).map(|b| format!("{b:02x}")).collect();
                let path = gen_dir.join(format!("{name}.txt"));
                if !path.exists() {
                    std::fs::write(path, generation)?;
                }
            }
        }
        let report = attack::build_report(&role_name, records, errors, &benchmark);
        write_json(&report, &attack_dir.join(format!("{role_name}.json")))?;
        let memorized = report.records.iter().filter(|r| r.memorized()).count();
        println!(
            "attack[{role_name}]: {memorized}/{} memorized, {} errors",
            report.records.len(),
            report.errors.len()
        );

        // Consolidation trajectory for the base fine-tune, when its epoch
        // checkpoints exist.
        let ckpt_dir = run_dir.join("runs").join(&role_name).join("checkpoints");
        if role == RoleKind::BaseFt && ckpt_dir.is_dir() {
            let mut backends = Vec::new();
            for epoch in 0..config.train.epochs {
                let path = dpsgd::checkpoint_path(&ckpt_dir, epoch);
                if path.exists() {
                    let model = ToyLm::load(&path)?;
                    backends.push((epoch, Gateway::Toy(ToyBackend::new(model, corpus.vocab.clone()))));
                }
            }
            if backends.len() >= 2 {
                let refs: Vec<(usize, &Gateway)> =
                    backends.iter().map(|(e, g)| (*e, g)).collect();
                let trajectory = attack::trajectory(
                    &benchmark,
                    &refs,
                    &params,
                    &weights,
                    config.attack.tau,
                )?;
                write_json(
                    &trajectory,
                    &attack_dir.join(format!("{role_name}_trajectory.json")),
                )?;
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize, Default)]
struct EvalOutput {
    perplexity: BTreeMap<String, f64>,
    pass_at_k: BTreeMap<String, BTreeMap<String, f64>>,
}

pub fn cmd_eval(config: &RunConfig) -> Result<()> {
    let run_dir = config.run_dir();
    let corpus = load_corpus(config)?;
    let test_docs: Vec<Vec<u32>> = corpus
        .split_token_streams(corpus::Split::Test)
        .into_iter()
        .map(|(_, s)| s)
        .collect();
    let mut output = EvalOutput::default();

    for role in roles(config) {
        let role_name = role.name();
        let model_path = run_dir.join("runs").join(&role_name).join("model.json");
        require(&model_path, "train")?;
        let model = ToyLm::load(&model_path)?;
        let backend = ToyBackend::new(model, corpus.vocab.clone());
        let ppl = analytics::perplexity_eval(&test_docs, config.windows.seq_len, config.windows.stride, |w| {
            backend.logprobs_ids(w)
        })?;
        output.perplexity.insert(role_name.clone(), ppl);

        if let Some(tasks_path) = &config.eval_tasks {
            let tasks = analytics::load_tasks(tasks_path)?;
            let params = config.generation_params();
            let gateway = Gateway::Toy(backend);
            let eval = analytics::run_functional_eval(&tasks, &config.pass_ks, |task| {
                let completions = gateway.complete(&task.id, &task.prompt, &params)?;
                Ok(completions.into_iter().map(|c| c.text).collect())
            })?;
            output.pass_at_k.insert(role_name.clone(), eval.pass_at_k);
        }
    }
    write_json(&output, &run_dir.join("eval/eval.json"))?;
    for (role, ppl) in &output.perplexity {
        println!("eval[{role}]: perplexity {ppl:.3}");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn load_attack_report(run_dir: &Path, role: &str) -> Result<AttackReport> {
    let path = run_dir.join("attack").join(format!("{role}.json"));
    require(&path, "attack")?;
    Ok(serde_json::from_str(&std::fs::read_to_string(&path)?)?)
}

/// Aggregate everything present under the run directory into the final
/// bundle. Wall-clock telemetry goes to `telemetry.json` next to the bundle
/// (referenced from it), keeping `report/` byte-stable for a fixed seed.
pub fn cmd_report(config: &RunConfig) -> Result<()> {
    let run_dir = config.run_dir();
    let benchmark = attack_benchmark(config)?;
    let mut report = Report {
        schema_version: SCHEMA_VERSION,
        config_fingerprint: config.fingerprint(),
        seed: config.seed,
        ..Report::default()
    };

    // Category distribution over the benchmark.
    let labels: Vec<(taxonomy::Category, Option<taxonomy::CodeSubcategory>)> =
        benchmark.iter().map(|r| (r.category, r.subcategory)).collect();
    report.category_distribution = Some(taxonomy::category_distribution(&labels)?);

    // Attack rates, reductions, transitions, associations.
    let mut rates = BTreeMap::new();
    let mut reports_by_role: BTreeMap<String, AttackReport> = BTreeMap::new();
    for role in roles(config) {
        let role_name = role.name();
        if let Ok(attack_report) = load_attack_report(&run_dir, &role_name) {
            rates.insert(role_name.clone(), attack_report.rates.clone());
            reports_by_role.insert(role_name, attack_report);
        }
    }
    if !rates.is_empty() {
        report.extraction_rates = Some(rates);
    }

    if let (Some(base), Some(pre)) =
        (reports_by_role.get("base_ft"), reports_by_role.get("pretrained"))
    {
        let filtered_base = attack::filter_pretrained(&base.records, &pre.records)?;
        let mut reductions: BTreeMap<String, Option<f64>> = BTreeMap::new();
        for &eps in &config.privacy.epsilons {
            let role_name = RoleKind::DpFt { epsilon: eps }.name();
            if let Some(dp) = reports_by_role.get(&role_name) {
                let filtered_dp = attack::filter_pretrained(&dp.records, &pre.records)?;
                let matched = attack::record_match(&filtered_base, &filtered_dp, &benchmark)?;
                write_json(
                    &matched,
                    &run_dir.join("attack").join(format!("record_match_{role_name}.json")),
                )?;
                for (category, reduction) in matched.reductions {
                    reductions.insert(format!("{category}@eps={eps}"), reduction);
                }
            }
        }
        if !reductions.is_empty() {
            report.reductions = Some(reductions);
        }

        // Frequency/entropy association over the base run's outcomes.
        let memorized: BTreeSet<&str> = filtered_base
            .iter()
            .filter(|r| r.memorized())
            .map(|r| r.snippet_id.as_str())
            .collect();
        let scored: Vec<&SnippetRecord> = benchmark
            .iter()
            .filter(|r| filtered_base.iter().any(|f| f.snippet_id == r.id))
            .collect();
        let outcomes: Vec<bool> =
            scored.iter().map(|r| memorized.contains(r.id.as_str())).collect();
        let both_classes =
            outcomes.iter().any(|o| *o) && outcomes.iter().any(|o| !*o);
        if outcomes.len() >= 20 && both_classes {
            let freq: Vec<f64> =
                scored.iter().map(|r| (r.frequency as f64).ln_1p()).collect();
            let ent: Vec<f64> = scored.iter().map(|r| r.entropy).collect();
            report.associations = Some(analytics::logistic_association(
                &outcomes,
                &[("log1p_frequency".to_string(), freq), ("entropy".to_string(), ent)],
            )?);
        }
    }

    // Paired Wilcoxon across per-slice rates, role vs role.
    let mut wilcoxon = BTreeMap::new();
    if let Some(base) = reports_by_role.get("base_ft") {
        for &eps in &config.privacy.epsilons {
            let role_name = RoleKind::DpFt { epsilon: eps }.name();
            if let Some(dp) = reports_by_role.get(&role_name) {
                let pairs: Vec<(f64, f64)> = base
                    .rates
                    .iter()
                    .filter(|(k, _)| k.ends_with("/Total") && !k.starts_with("__all__"))
                    .filter_map(|(k, &b)| dp.rates.get(k).map(|&d| (b, d)))
                    .collect();
                if let Ok(result) = analytics::wilcoxon_signed_rank(&pairs) {
                    wilcoxon.insert(format!("base_ft_vs_{role_name}"), result);
                }
            }
        }
    }
    if !wilcoxon.is_empty() {
        report.wilcoxon = Some(wilcoxon);
    }

    // Per-role accounting and clipping summaries from the run manifests.
    let mut epsilons = BTreeMap::new();
    let mut clip_fractions = BTreeMap::new();
    for role in roles(config) {
        let manifest_path = run_dir.join("runs").join(role.name()).join("manifest.json");
        if let Ok(text) = std::fs::read_to_string(&manifest_path) {
            let manifest: RunManifest = serde_json::from_str(&text)?;
            if let Some(eps) = manifest.final_epsilon {
                epsilons.insert(role.name(), eps);
            }
            if let Some(frac) = manifest.mean_clipped_fraction {
                clip_fractions.insert(role.name(), frac);
            }
        }
    }
    if !epsilons.is_empty() {
        report.accounted_epsilon = Some(epsilons);
    }
    if !clip_fractions.is_empty() {
        report.clipped_fraction = Some(clip_fractions);
    }

    // Consolidation series from trajectories.
    let mut consolidation = BTreeMap::new();
    for role in roles(config) {
        let path = run_dir.join("attack").join(format!("{}_trajectory.json", role.name()));
        if let Ok(text) = std::fs::read_to_string(&path) {
            let trajectory: attack::TrajectoryReport = serde_json::from_str(&text)?;
            consolidation.insert(role.name(), trajectory.jaccard);
        }
    }
    if !consolidation.is_empty() {
        report.consolidation = Some(consolidation);
    }

    // Perplexity / pass@k from eval.
    let eval_path = run_dir.join("eval/eval.json");
    if eval_path.exists() {
        let eval: EvalOutput = serde_json::from_str(&std::fs::read_to_string(&eval_path)?)?;
        if !eval.perplexity.is_empty() {
            report.perplexity = Some(eval.perplexity);
        }
        if !eval.pass_at_k.is_empty() {
            report.pass_at_k = Some(eval.pass_at_k);
        }
    }

    // Wall-clock telemetry: aggregated outside the byte-compared bundle.
    let mut telemetry: BTreeMap<String, Telemetry> = BTreeMap::new();
    for role in roles(config) {
        let path = run_dir.join("runs").join(role.name()).join("telemetry.json");
        if let Ok(text) = std::fs::read_to_string(&path) {
            telemetry.insert(role.name(), serde_json::from_str(&text)?);
        }
    }
    if !telemetry.is_empty() {
        write_json(&telemetry, &run_dir.join("telemetry.json"))?;
        report.telemetry_ref = Some("../telemetry.json".to_string());
        if let (Some(base), Some(dp)) = (
            telemetry.get("base_ft"),
            config
                .privacy
                .epsilons
                .first()
                .and_then(|eps| telemetry.get(&RoleKind::DpFt { epsilon: *eps }.name())),
        ) {
            if base.total_time_s > 0.0 {
                println!(
                    "telemetry: dp/non-dp runtime ratio = {:.3}",
                    dp.total_time_s / base.total_time_s
                );
            }
        }
    }

    analytics::emit_report(&report, &run_dir.join("report"))?;
    println!("report: written to {}", run_dir.join("report").display());
    Ok(())
}

// ---------------------------------------------------------------------------
// demo
// ---------------------------------------------------------------------------

/// The bundled end-to-end recipe: ingest -> bench -> train (base + each
/// epsilon) -> attack (every role) -> eval -> report, on the synthetic
/// canary corpus.
pub fn cmd_demo(config: &RunConfig) -> Result<()> {
    cmd_ingest(config)?;
    cmd_bench(config)?;
    cmd_train(config, None)?;
    cmd_attack(config, None)?;
    cmd_eval(config)?;
    cmd_report(config)?;
    println!("demo: complete under {}", config.run_dir().display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_ignores_out_dir_but_tracks_semantics() {
        let a = RunConfig::demo();
        let mut b = RunConfig::demo();
        b.out_dir = PathBuf::from("/somewhere/else");
        assert_eq!(a.fingerprint(), b.fingerprint());
        let mut c = RunConfig::demo();
        c.seed = 43;
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let config = RunConfig::demo();
        let text = serde_json::to_string_pretty(&config).unwrap();
        let parsed: RunConfig = serde_json::from_str(&text).unwrap();
        parsed.validate().unwrap();
        assert_eq!(parsed.fingerprint(), config.fingerprint());

        let mut bad = RunConfig::demo();
        bad.split_ratio = 1.5;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let mut value = serde_json::to_value(RunConfig::demo()).unwrap();
        value["no_such_field"] = serde_json::json!(1);
        let result: std::result::Result<RunConfig, _> = serde_json::from_value(value);
        assert!(result.is_err());
    }

    #[test]
    fn derive_seed_streams_differ() {
        assert_ne!(derive_seed(42, "init"), derive_seed(42, "attack"));
        assert_ne!(derive_seed(42, "init"), derive_seed(43, "init"));
        assert_eq!(derive_seed(42, "bench"), derive_seed(42, "bench"));
    }
}
