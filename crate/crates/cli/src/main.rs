//! `kc`: command-line driver for corpus sampling, subtree extraction, SANN
//! training, KC discovery and inference, LLM enrichment and generation,
//! rating analysis, and configured pipeline runs.
//!
//! Exit codes: 0 success, 1 usage or configuration, 2 data, 3 upstream
//! service.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use kc_core::artifact::write_atomic;
use kc_core::ast::{normalized_subtrees, Language, DEFAULT_MAX_NODES, DEFAULT_MIN_NODES};
use kc_core::corpus::{
    last_incorrect_attempts, load_corpus, parse_jsonl, sample_submissions, write_jsonl, Corpus,
};
use kc_core::discovery::{
    discover, kc_targets, DiscoveryConfig, KcAssignment, KcInventory, SubtreeConfig, VaeModel,
};
use kc_core::evalkit::{self, WilcoxonMode};
use kc_core::genkit::{
    Completer, ExampleVariant, HttpCompleter, LlmConfig, LlmError, ReplayCompleter, Templates,
    TranscriptStore,
};
use kc_core::pipeline::{
    coverage_records, enrich_assignments, examples_from_records, generate_examples, run_pipeline,
    to_jsonl, to_pretty_json, EnrichedLabel, LabelRecord, LlmBatch, LlmContext, PipelineConfig,
    PipelineError, RunOptions, Stage, StubCompleter, SubtreeRecord,
};
use kc_core::sann::{train_sann, SannHyperParams, SannModel};
use kc_core::synth::{generate, SynthConfig};

#[derive(Parser)]
#[command(
    name = "kc",
    version,
    about = "Pattern-based KC discovery and KC-conditioned worked examples"
)]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus utilities.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
    /// Subtree utilities.
    Ast {
        #[command(subcommand)]
        command: AstCommand,
    },
    /// Attention network utilities.
    Sann {
        #[command(subcommand)]
        command: SannCommand,
    },
    /// Train the VAE on correct submissions and cluster a KC inventory.
    Discover(DiscoverArgs),
    /// Assign KC targets to one submission.
    Infer(InferArgs),
    /// Label every KC target of an assignment with the LLM.
    Enrich(EnrichArgs),
    /// Generate baseline and KC-conditioned worked examples.
    Generate(GenerateArgs),
    /// Summarize expert ratings of paired examples.
    Evaluate(EvaluateArgs),
    /// Run configured pipeline stages.
    Run(RunArgs),
    /// Write the bundled synthetic corpus.
    Synth(SynthArgs),
    /// Write the default prompt templates for editing.
    Templates {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Seeded sample of each student's last incorrect attempt.
    Sample {
        #[arg(long)]
        problem: String,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "in")]
        input: PathBuf,
        /// Problems file; defaults to problems.jsonl beside the input.
        #[arg(long)]
        problems: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum AstCommand {
    /// Normalized candidate subtrees of every submission.
    Extract {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        problems: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_NODES)]
        min_nodes: usize,
        #[arg(long, default_value_t = DEFAULT_MAX_NODES)]
        max_nodes: usize,
    },
}

#[derive(Subcommand)]
enum SannCommand {
    /// Train on extracted subtrees and correctness labels.
    Train {
        #[arg(long)]
        subtrees: PathBuf,
        /// JSONL with submission_id and is_correct; a corpus file works.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Training report; defaults to <out>.report.json.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    problems: Option<PathBuf>,
}

impl CorpusArgs {
    fn load(&self) -> Result<Corpus> {
        Ok(load_corpus(&self.corpus, self.problems.as_deref())?)
    }
}

#[derive(Args)]
struct DiscoverArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    sann: PathBuf,
    /// Seed for the VAE and K-means.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    /// VAE model path; defaults to <out> with extension .vae.
    #[arg(long)]
    vae_out: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    submission: String,
    #[arg(long)]
    sann: PathBuf,
    #[arg(long)]
    vae: PathBuf,
    #[arg(long)]
    inventory: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 5)]
    max_targets: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LlmModeArg {
    Http,
    Replay,
    Stub,
}

#[derive(Args)]
struct LlmArgs {
    #[arg(long, value_enum, default_value = "http")]
    llm: LlmModeArg,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    endpoint: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Transcript directory; defaults to a transcripts folder beside the output.
    #[arg(long)]
    transcripts: Option<PathBuf>,
    #[arg(long)]
    templates: Option<PathBuf>,
}

impl LlmArgs {
    fn config(&self) -> LlmConfig {
        let mut c = LlmConfig::default();
        if let Some(m) = &self.model {
            c.model = m.clone();
        }
        if let Some(e) = &self.endpoint {
            c.endpoint = e.clone();
        }
        if let Some(k) = &self.api_key_env {
            c.api_key_env = k.clone();
        }
        if let Some(p) = self.parallelism {
            c.parallelism = p;
        }
        c
    }

    fn templates(&self) -> Result<Templates> {
        Ok(match &self.templates {
            Some(dir) => Templates::load_dir(dir)?,
            None => Templates::default(),
        })
    }

    fn completer(&self, transcripts: &TranscriptStore) -> Result<Box<dyn Completer>> {
        Ok(match self.llm {
            LlmModeArg::Stub => Box::new(StubCompleter),
            LlmModeArg::Replay => Box::new(ReplayCompleter::new(transcripts.clone())),
            LlmModeArg::Http => Box::new(HttpCompleter::new(self.config())?),
        })
    }
}

#[derive(Args)]
struct EnrichArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// KcAssignment JSON, or JSONL of them.
    #[arg(long)]
    assignment: PathBuf,
    #[command(flatten)]
    llm: LlmArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Baseline,
    KcConditioned,
    Both,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    assignment: PathBuf,
    /// Labels from `kc enrich`; required for the conditioned variant.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    variant: VariantArg,
    #[command(flatten)]
    llm: LlmArgs,
    /// Output directory for examples.jsonl, pairs.jsonl and transcripts.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Approx,
    Auto,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    ratings: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    mode: ModeArg,
    #[arg(long)]
    out: PathBuf,
    /// Text table path; the table is always printed.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated stages; all six by default.
    #[arg(long, value_delimiter = ',')]
    stages: Vec<String>,
    /// Rerun stages whose outputs are already current.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    per_problem: usize,
    #[arg(long, default_value_t = 2019)]
    seed: u64,
}

/// Bad or missing arguments discovered after parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if let Some(p) = cause.downcast_ref::<PipelineError>() {
            return p.exit_code() as u8;
        }
        if let Some(l) = cause.downcast_ref::<LlmError>() {
            return match l {
                LlmError::Config(_) => 1,
                e if e.is_upstream() => 3,
                _ => 2,
            };
        }
    }
    2
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_pretty_json(value))
        .with_context(|| format!("writing {}", path.display()))
}

fn write_lines<T: serde::Serialize>(path: &Path, records: &[T]) -> Result<()> {
    write_atomic(path, &to_jsonl(records)).with_context(|| format!("writing {}", path.display()))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_jsonl(&text, &path.display().to_string())?)
}

/// A single JSON assignment or JSONL of them.
fn read_assignments(path: &Path) -> Result<Vec<KcAssignment>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(one) = serde_json::from_str::<KcAssignment>(&text) {
        return Ok(vec![one]);
    }
    Ok(parse_jsonl(&text, &path.display().to_string())?)
}

fn report_batch<T>(batch: &LlmBatch<T>) {
    for issue in &batch.issues {
        log::warn!("{}: {}", issue.subject, issue.message);
    }
    eprintln!(
        "{} of {} requests succeeded",
        batch.succeeded, batch.attempted
    );
}

fn cmd_corpus_sample(
    problem: &str,
    n: usize,
    seed: u64,
    input: &Path,
    problems: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let corpus = load_corpus(input, problems)?;
    let candidates = last_incorrect_attempts(&corpus, problem)?;
    let sample = sample_submissions(&candidates, n, seed)?;
    write_jsonl(out, &sample).with_context(|| format!("writing {}", out.display()))?;
    eprintln!(
        "sampled {} of {} candidates",
        sample.len(),
        candidates.len()
    );
    Ok(())
}

fn cmd_ast_extract(
    input: &Path,
    problems: Option<&Path>,
    out: &Path,
    min: usize,
    max: usize,
) -> Result<()> {
    if min == 0 || min > max {
        return Err(usage("need 1 <= --min-nodes <= --max-nodes"));
    }
    let corpus = load_corpus(input, problems)?;
    let mut records = Vec::new();
    let mut failed = 0;
    for s in &corpus.submissions {
        match normalized_subtrees(&s.code, Language::Java, min, max) {
            Ok(subs) => records.extend(subs.into_iter().map(|subtree| SubtreeRecord {
                submission_id: s.submission_id.clone(),
                subtree,
            })),
            Err(e) => {
                failed += 1;
                log::warn!("{}: {e}", s.submission_id);
            }
        }
    }
    write_lines(out, &records)?;
    eprintln!(
        "{} subtrees from {} submissions ({failed} unparsable)",
        records.len(),
        corpus.submissions.len()
    );
    Ok(())
}

fn cmd_sann_train(
    subtrees: &Path,
    labels: &Path,
    seed: u64,
    epochs: Option<usize>,
    out: &Path,
    report: Option<&Path>,
) -> Result<()> {
    let records: Vec<SubtreeRecord> = read_jsonl(subtrees)?;
    let label_records: Vec<LabelRecord> = read_jsonl(labels)?;
    let (_, examples) = examples_from_records(&records, &label_records)?;
    let mut hyper = SannHyperParams {
        seed,
        ..SannHyperParams::default()
    };
    if let Some(e) = epochs {
        hyper.epochs = e;
    }
    let (model, rep) = train_sann(&examples, &hyper)?;
    model.save(out)?;
    let report_path = report
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(format!("{}.report.json", out.display())));
    write_json(&report_path, &rep)?;
    eprintln!(
        "trained on {} examples; train accuracy {:.3}, holdout accuracy {}",
        rep.train_size,
        rep.train_accuracy,
        rep.holdout_accuracy
            .map_or("n/a".into(), |a| format!("{a:.3}"))
    );
    Ok(())
}

fn cmd_discover(a: &DiscoverArgs) -> Result<()> {
    let corpus = a.corpus.load()?;
    let sann = SannModel::load(&a.sann)?;
    let mut cfg = DiscoveryConfig {
        k: a.k,
        kmeans_seed: a.seed,
        ..DiscoveryConfig::default()
    };
    cfg.vae.seed = a.seed;
    let d = discover(&corpus, &sann, &cfg)?;
    d.inventory.save(&a.out)?;
    let vae_out = a
        .vae_out
        .clone()
        .unwrap_or_else(|| a.out.with_extension("vae"));
    d.vae.save(&vae_out)?;
    eprintln!(
        "{} centroids from {} context vectors ({} submissions skipped); VAE at {}",
        d.inventory.k,
        d.inputs.len(),
        d.skipped.len(),
        vae_out.display()
    );
    Ok(())
}

fn cmd_infer(a: &InferArgs) -> Result<()> {
    let corpus = a.corpus.load()?;
    let s = corpus
        .submission(&a.submission)
        .ok_or_else(|| usage(format!("submission {} not in corpus", a.submission)))?;
    let sann = SannModel::load(&a.sann)?;
    let vae = VaeModel::load(&a.vae)?;
    let inventory = KcInventory::load(&a.inventory)?;
    let cfg = SubtreeConfig {
        attention_threshold: a.threshold,
        max_targets: a.max_targets,
        ..SubtreeConfig::default()
    };
    let assignment = kc_targets(s, &sann, &vae, &inventory, &cfg)?;
    write_json(&a.out, &assignment)?;
    for t in &assignment.targets {
        println!(
            "kc {:>3}  attention {:.3}  {}",
            t.kc_id, t.supporter.attention, t.snippet
        );
    }
    Ok(())
}

fn transcript_store(llm: &LlmArgs, default: &Path) -> Result<TranscriptStore> {
    let dir = llm
        .transcripts
        .clone()
        .unwrap_or_else(|| default.to_path_buf());
    Ok(TranscriptStore::new(&dir)?)
}

fn cmd_enrich(a: &EnrichArgs) -> Result<()> {
    let corpus = a.corpus.load()?;
    let assignments = read_assignments(&a.assignment)?;
    let templates = a.llm.templates()?;
    let default_dir = a.out.parent().unwrap_or(Path::new(".")).join("transcripts");
    let store = transcript_store(&a.llm, &default_dir)?;
    let completer = a.llm.completer(&store)?;
    let config = a.llm.config();
    let ctx = LlmContext {
        completer: completer.as_ref(),
        templates: &templates,
        model: &config.model,
        transcripts: Some(&store),
        parallelism: config.parallelism,
    };
    let batch = enrich_assignments(&ctx, &corpus, &assignments).into_result(Stage::Enrich)?;
    report_batch(&batch);
    write_lines(&a.out, &batch.value)?;
    Ok(())
}

fn cmd_generate(a: &GenerateArgs) -> Result<()> {
    let corpus = a.corpus.load()?;
    let assignments = read_assignments(&a.assignment)?;
    let variants: &[ExampleVariant] = match a.variant {
        VariantArg::Baseline => &[ExampleVariant::Baseline],
        VariantArg::KcConditioned => &[ExampleVariant::KcConditioned],
        VariantArg::Both => &ExampleVariant::BOTH,
    };
    let labels: Vec<EnrichedLabel> = match &a.labels {
        Some(p) => read_jsonl(p)?,
        None if variants.contains(&ExampleVariant::KcConditioned) => {
            return Err(usage("--labels is required for KC-conditioned generation"))
        }
        None => Vec::new(),
    };
    let submissions = assignments
        .iter()
        .map(|x| {
            corpus
                .submission(&x.submission_id)
                .cloned()
                .ok_or_else(|| usage(format!("submission {} not in corpus", x.submission_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let templates = a.llm.templates()?;
    fs::create_dir_all(&a.out)?;
    let store = transcript_store(&a.llm, &a.out.join("transcripts"))?;
    let completer = a.llm.completer(&store)?;
    let config = a.llm.config();
    let ctx = LlmContext {
        completer: completer.as_ref(),
        templates: &templates,
        model: &config.model,
        transcripts: Some(&store),
        parallelism: config.parallelism,
    };
    let batch = generate_examples(&ctx, &corpus, &submissions, &assignments, &labels, variants)
        .into_result(Stage::Generate)?;
    report_batch(&batch);
    let (examples, pairs) = &batch.value;
    write_lines(&a.out.join("examples.jsonl"), examples)?;
    write_lines(&a.out.join("pairs.jsonl"), pairs)?;
    write_lines(&a.out.join("coverage.jsonl"), &coverage_records(examples)?)?;
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let scores = evalkit::load_scores(&a.ratings)?;
    let pairs = evalkit::load_pairs(&a.pairs)?;
    let mode = match a.mode {
        ModeArg::Exact => WilcoxonMode::Exact,
        ModeArg::Approx => WilcoxonMode::Approx,
        ModeArg::Auto => WilcoxonMode::Auto,
    };
    let summary = evalkit::evaluate(&scores, &pairs, mode)?;
    write_atomic(&a.out, summary.to_json().as_bytes())?;
    let table = summary.render_table();
    if let Some(t) = &a.table {
        write_atomic(t, table.as_bytes())?;
    }
    print!("{table}");
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let config = PipelineConfig::load(&a.config)?;
    let stages = if a.stages.is_empty() {
        Stage::ALL.to_vec()
    } else {
        a.stages
            .iter()
            .map(|s| s.trim().parse::<Stage>())
            .collect::<Result<Vec<_>, _>>()?
    };
    let manifest = run_pipeline(
        &config,
        &stages,
        &RunOptions {
            force: a.force,
            completer: None,
        },
    )?;
    for (stage, rec) in &manifest.stages {
        println!(
            "{stage:<9} {} outputs, {} issues, {} ms",
            rec.outputs.len(),
            rec.issues.len(),
            rec.elapsed_ms
        );
    }
    println!(
        "manifest: {}",
        kc_core::pipeline::manifest_path(&config.output_root, &manifest.run_id).display()
    );
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    if a.per_problem == 0 {
        return Err(usage("--per-problem must be at least 1"));
    }
    let synth = generate(&SynthConfig {
        per_problem: a.per_problem,
        seed: a.seed,
        ..SynthConfig::default()
    });
    fs::create_dir_all(&a.out)?;
    let problems: Vec<_> = synth.corpus.problems.values().cloned().collect();
    write_lines(&a.out.join("problems.jsonl"), &problems)?;
    write_lines(&a.out.join("submissions.jsonl"), &synth.corpus.submissions)?;
    eprintln!(
        "{} submissions over {} problems",
        synth.corpus.submissions.len(),
        problems.len()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Corpus {
            command:
                CorpusCommand::Sample {
                    problem,
                    n,
                    seed,
                    input,
                    problems,
                    out,
                },
        } => cmd_corpus_sample(&problem, n, seed, &input, problems.as_deref(), &out),
        Command::Ast {
            command:
                AstCommand::Extract {
                    input,
                    problems,
                    out,
                    min_nodes,
                    max_nodes,
                },
        } => cmd_ast_extract(&input, problems.as_deref(), &out, min_nodes, max_nodes),
        Command::Sann {
            command:
                SannCommand::Train {
                    subtrees,
                    labels,
                    seed,
                    epochs,
                    out,
                    report,
                },
        } => cmd_sann_train(&subtrees, &labels, seed, epochs, &out, report.as_deref()),
        Command::Discover(a) => cmd_discover(&a),
        Command::Infer(a) => cmd_infer(&a),
        Command::Enrich(a) => cmd_enrich(&a),
        Command::Generate(a) => cmd_generate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Templates { out } => {
            Templates::default().write_dir(&out)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
