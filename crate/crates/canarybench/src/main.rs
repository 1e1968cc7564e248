use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use canarybench::cli::{self, AccountArgs, RunConfig};
use canarybench::modelgw::{EndpointKind, ModelEndpoint};

/// Memorization measurement harness for code language models: build an
/// extraction benchmark from a corpus, train with and without DP-SGD, attack
/// every model with the benchmark prefixes, and report who leaked what.
#[derive(Parser)]
#[command(name = "canarybench", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Run configuration file (JSON). Defaults to the bundled demo recipe.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the model endpoint with a remote completions URL.
    #[arg(long)]
    endpoint: Option<String>,
    /// Restrict privacy levels to this epsilon.
    #[arg(long)]
    eps: Option<f64>,
    /// Average power draw in watts, for kWh derivation in telemetry.
    #[arg(long)]
    watts: Option<f64>,
    /// Write a checkpoint after every epoch (needed for trajectory analysis).
    #[arg(long)]
    checkpoint_every_epoch: bool,
}

impl CommonArgs {
    fn resolve(&self) -> canarybench::Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::demo(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if let Some(url) = &self.endpoint {
            config.endpoint = Some(ModelEndpoint {
                kind: EndpointKind::Remote,
                base_url: Some(url.clone()),
                model_name: "default".into(),
                auth_token_env: Some("CANARYBENCH_API_TOKEN".into()),
                max_in_flight: 4,
                timeout_s: 60,
                retry_max_attempts: 3,
                retry_backoff_base_s: 0.2,
            });
        }
        if let Some(eps) = self.eps {
            config.privacy.epsilons = vec![eps];
        }
        if let Some(watts) = self.watts {
            config.watts = Some(watts);
        }
        if self.checkpoint_every_epoch {
            config.checkpoint_every_epoch = true;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Ingest, deduplicate and split the corpus; write manifest + vocabulary.
    Ingest(CommonArgs),
    /// Extract the prefix/suffix benchmark from the train split.
    Bench(CommonArgs),
    /// Train the models: untouched init, base fine-tune, one DP run per epsilon.
    Train(CommonArgs),
    /// Privacy accounting: epsilon for a sigma, or sigma for a target epsilon.
    Account {
        /// Poisson sampling rate q = batch/N.
        #[arg(long)]
        q: f64,
        /// Noise multiplier; mutually exclusive with --target-eps.
        #[arg(long)]
        sigma: Option<f64>,
        /// Calibrate sigma for this epsilon instead.
        #[arg(long)]
        target_eps: Option<f64>,
        #[arg(long)]
        steps: u64,
        #[arg(long)]
        delta: f64,
        /// Write the per-step RDP curve as CSV here.
        #[arg(long)]
        curve_out: Option<PathBuf>,
    },
    /// Score candidate/reference pairs with CodeBLEU; one CSV row per pair.
    Score {
        /// JSON Lines file with `candidate` and `reference` fields per line.
        #[arg(long)]
        pairs: PathBuf,
        /// CSV output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fuzzy-match threshold.
        #[arg(long, default_value_t = 0.85)]
        tau: f64,
    },
    /// Run the data-extraction attack against every trained role.
    Attack {
        #[command(flatten)]
        common: CommonArgs,
        /// Attack only this role (e.g. base_ft, dp_eps_1).
        #[arg(long)]
        role: Option<String>,
    },
    /// Utility evaluation: test-split perplexity and optional pass@k tasks.
    Eval(CommonArgs),
    /// Aggregate all artifacts into the final report bundle.
    Report(CommonArgs),
    /// Full pipeline on the synthetic canary corpus.
    Demo(CommonArgs),
}

fn run() -> canarybench::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest(args) => cli::cmd_ingest(&args.resolve()?),
        Command::Bench(args) => cli::cmd_bench(&args.resolve()?),
        Command::Train(args) => {
            let eps = args.eps;
            cli::cmd_train(&args.resolve()?, eps)
        }
        Command::Account { q, sigma, target_eps, steps, delta, curve_out } => {
            cli::cmd_account(&AccountArgs { q, sigma, target_eps, steps, delta, curve_out })
        }
        Command::Score { pairs, out, tau } => cli::cmd_score(&pairs, out.as_deref(), tau),
        Command::Attack { common, role } => cli::cmd_attack(&common.resolve()?, role.as_deref()),
        Command::Eval(args) => cli::cmd_eval(&args.resolve()?),
        Command::Report(args) => cli::cmd_report(&args.resolve()?),
        Command::Demo(args) => cli::cmd_demo(&args.resolve()?),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
