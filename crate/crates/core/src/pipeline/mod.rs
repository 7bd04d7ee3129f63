//! Reproducible runs: configuration, stage sequencing, content-addressed
//! artifacts and run manifests.
//!
//! Every stage output is stored once as `<output_root>/artifacts/<sha256>.<ext>`
//! and referenced from `<output_root>/runs/<run_id>/manifest.json`. The run id
//! hashes the configuration and input contents, so rerunning a stage with an
//! unchanged configuration resumes the same run.

mod store;
mod stub;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use store::{sha256_hex, ArtifactRef, ArtifactStore};
pub use stub::StubCompleter;

use crate::artifact::{write_atomic, ArtifactError, TensorFile};
use crate::ast::{normalized_subtrees, Language, NormalizedSubtree};
use crate::corpus::{
    last_incorrect_attempts, load_corpus, parse_jsonl, sample_submissions, Corpus, CorpusError,
    Submission,
};
use crate::discovery::{
    discover, kc_targets, DiscoveryConfig, DiscoveryError, KcAssignment, KcInventory,
    SubtreeConfig, VaeHyperParams, VaeModel, VaeReport,
};
use crate::evalkit::{self, EvalError, ExamplePair, RubricScore, WilcoxonMode};
use crate::genkit::{
    build_enrichment_prompt, build_worked_example_prompt, complete_and_parse,
    kc_coverage_heuristic, parse_enrichment_response, parse_worked_example, Completer,
    CoverageTarget, ExampleVariant, GenkitError, HttpCompleter, KcLabel, LlmConfig, LlmError,
    PatternRef, ReplayCompleter, Templates, TranscriptStore, WorkedExample,
};
use crate::sann::{train_sann, LabeledExample, SannError, SannHyperParams, SannModel, TrainReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("stage {stage} needs the {artifact} artifact; run `{needs}` first")]
    MissingUpstream {
        stage: Stage,
        artifact: String,
        needs: Stage,
    },
    #[error("artifact {path} is corrupt: expected sha256 {expected}, found {found}")]
    Corrupt {
        path: String,
        expected: String,
        found: String,
    },
    #[error("stage {stage}: every request failed; first error: {source}")]
    Upstream {
        stage: Stage,
        #[source]
        source: LlmError,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Sann(#[from] SannError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    Genkit(#[from] GenkitError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl PipelineError {
    /// Process exit code: 1 usage or configuration, 2 data, 3 upstream
    /// service.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::MissingUpstream { .. } => 1,
            Self::Llm(e) | Self::Upstream { source: e, .. } if e.is_upstream() => 3,
            Self::Llm(LlmError::Config(_)) | Self::Upstream { .. } => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sample,
    Discover,
    Infer,
    Enrich,
    Generate,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Self::Sample,
        Self::Discover,
        Self::Infer,
        Self::Enrich,
        Self::Generate,
        Self::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sample => "sample",
            Self::Discover => "discover",
            Self::Infer => "infer",
            Self::Enrich => "enrich",
            Self::Generate => "generate",
            Self::Evaluate => "evaluate",
        }
    }

    /// Artifacts consumed, with the stage that produces each.
    pub fn needs(self) -> &'static [(&'static str, Stage)] {
        match self {
            Self::Sample | Self::Discover => &[],
            Self::Infer => &[
                ("sample", Self::Sample),
                ("sann", Self::Discover),
                ("vae", Self::Discover),
                ("inventory", Self::Discover),
            ],
            Self::Enrich => &[
                ("sample", Self::Sample),
                ("assignments", Self::Infer),
                ("inventory", Self::Discover),
            ],
            Self::Generate => &[
                ("sample", Self::Sample),
                ("assignments", Self::Infer),
                ("labels", Self::Enrich),
            ],
            Self::Evaluate => &[("examples", Self::Generate), ("pairs", Self::Generate)],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| PipelineError::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub per_problem: usize,
    /// Problems to sample; empty means every problem in the corpus.
    pub problems: Vec<String>,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            per_problem: 50,
            problems: Vec::new(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KmeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        let d = DiscoveryConfig::default();
        Self {
            k: d.k,
            seed: d.kmeans_seed,
            max_iters: d.kmeans_max_iters,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmMode {
    /// Live chat-completion endpoint.
    #[default]
    Http,
    /// Answer from stored transcripts only.
    Replay,
    /// Canned offline responses.
    Stub,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    pub mode: LlmMode,
    /// Transcript directory for replay; defaults to the run's own.
    pub replay_dir: Option<PathBuf>,
    #[serde(flatten)]
    pub client: LlmConfig,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateConfig {
    /// JSONL of rubric scores; without it only coverage is computed.
    pub ratings: Option<PathBuf>,
    pub wilcoxon: WilcoxonMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Submissions JSONL.
    pub corpus: PathBuf,
    /// Problems JSONL; defaults to `problems.jsonl` beside the corpus.
    pub problems: Option<PathBuf>,
    pub output_root: PathBuf,
    pub sample: SampleConfig,
    pub subtrees: SubtreeConfig,
    pub sann: SannHyperParams,
    pub vae: VaeHyperParams,
    pub kmeans: KmeansConfig,
    pub templates: Option<PathBuf>,
    pub llm: LlmSettings,
    pub evaluate: EvaluateConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::new(),
            problems: None,
            output_root: PathBuf::from("kc-out"),
            sample: SampleConfig::default(),
            subtrees: SubtreeConfig::default(),
            sann: SannHyperParams::default(),
            vae: VaeHyperParams::default(),
            kmeans: KmeansConfig::default(),
            templates: None,
            llm: LlmSettings::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a TOML config. Relative paths are resolved against the
    /// config file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.corpus);
        fix(&mut cfg.output_root);
        for p in [
            &mut cfg.problems,
            &mut cfg.templates,
            &mut cfg.llm.replay_dir,
            &mut cfg.evaluate.ratings,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.corpus.as_os_str().is_empty() {
            return bad("corpus path is required");
        }
        if self.sample.per_problem == 0 {
            return bad("sample.per_problem must be at least 1");
        }
        let st = &self.subtrees;
        if st.min_nodes == 0 || st.min_nodes > st.max_nodes {
            return bad("subtree bounds need 1 <= min_nodes <= max_nodes");
        }
        if !(0.0..=1.0).contains(&st.attention_threshold) {
            return bad("attention_threshold must lie in [0, 1]");
        }
        if st.max_targets == 0 {
            return bad("max_targets must be at least 1");
        }
        if self.kmeans.k == 0 {
            return bad("kmeans.k must be at least 1");
        }
        self.llm
            .client
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn discovery(&self) -> DiscoveryConfig {
        DiscoveryConfig {
            subtrees: self.subtrees.clone(),
            vae: self.vae.clone(),
            k: self.kmeans.k,
            kmeans_seed: self.kmeans.seed,
            kmeans_max_iters: self.kmeans.max_iters,
        }
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([
            ("sample".to_string(), self.sample.seed),
            ("sann".to_string(), self.sann.seed),
            ("vae".to_string(), self.vae.seed),
            ("kmeans".to_string(), self.kmeans.seed),
        ])
    }
}

/// Something a stage skipped or failed on without aborting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageIssue {
    pub subject: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs: BTreeMap<String, ArtifactRef>,
    pub outputs: BTreeMap<String, ArtifactRef>,
    pub started_at: String,
    pub elapsed_ms: u64,
    #[serde(default)]
    pub issues: Vec<StageIssue>,
    /// Request hashes of the LLM transcripts this stage produced.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transcripts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    /// Run-level inputs: corpus, problems, templates and ratings.
    pub inputs: BTreeMap<String, ArtifactRef>,
    pub stages: BTreeMap<Stage, StageRecord>,
}

impl RunManifest {
    pub fn output(&self, stage: Stage, name: &str) -> Option<&ArtifactRef> {
        self.stages.get(&stage)?.outputs.get(name)
    }
}

pub fn manifest_path(output_root: &Path, run_id: &str) -> PathBuf {
    output_root.join("runs").join(run_id).join("manifest.json")
}

pub fn load_manifest(path: &Path) -> Result<RunManifest, PipelineError> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

/// One extracted subtree, tagged with its submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtreeRecord {
    pub submission_id: String,
    #[serde(flatten)]
    pub subtree: NormalizedSubtree,
}

/// Correctness label of a submission. Corpus records parse as labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub submission_id: String,
    pub is_correct: bool,
}

/// Groups subtree records by submission, in first-appearance order, and
/// attaches labels. Submissions without a label are an error.
pub fn examples_from_records(
    subtrees: &[SubtreeRecord],
    labels: &[LabelRecord],
) -> Result<(Vec<String>, Vec<LabeledExample>), PipelineError> {
    let label_of: BTreeMap<&str, bool> = labels
        .iter()
        .map(|l| (l.submission_id.as_str(), l.is_correct))
        .collect();
    let mut ids: Vec<String> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<Vec<String>>> = BTreeMap::new();
    for r in subtrees {
        let g = groups.entry(&r.submission_id).or_default();
        if g.is_empty() {
            ids.push(r.submission_id.clone());
        }
        g.push(r.subtree.tokens.clone());
    }
    let mut examples = Vec::new();
    for id in &ids {
        let is_correct = *label_of
            .get(id.as_str())
            .ok_or_else(|| PipelineError::Config(format!("no label for submission {id}")))?;
        examples.push(LabeledExample {
            subtrees: groups.remove(id.as_str()).expect("grouped above"),
            is_correct,
        });
    }
    Ok((ids, examples))
}

/// A sampled submission's generated example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedExample {
    pub example_id: String,
    pub submission_id: String,
    pub example: WorkedExample,
    /// Supporting pattern of each KC target, aligned with
    /// `example.kc_targets`.
    #[serde(default)]
    pub patterns: Vec<Option<PatternRef>>,
}

pub fn example_id(submission_id: &str, variant: ExampleVariant) -> String {
    format!("{submission_id}:{}", variant.as_str())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichedLabel {
    pub submission_id: String,
    pub label: KcLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageRecord {
    pub example_id: String,
    pub submission_id: String,
    pub kc_ids: Vec<usize>,
    pub in_code: Vec<bool>,
    pub in_text: Vec<bool>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscoveryReport {
    pub sann: TrainReport,
    pub vae: VaeReport,
    pub kmeans_inertia: Vec<f64>,
    pub kmeans_converged: bool,
    pub n_inputs: usize,
    pub skipped: Vec<String>,
}

#[derive(Default)]
pub struct RunOptions<'a> {
    /// Rerun stages even when their recorded outputs are current.
    pub force: bool,
    /// Overrides the completer selected by `llm.mode`.
    pub completer: Option<&'a dyn Completer>,
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).expect("records serialize");
        buf.push(b'\n');
    }
    buf
}

fn from_jsonl<T: DeserializeOwned>(bytes: &[u8], name: &str) -> Result<Vec<T>, PipelineError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| PipelineError::Config(format!("{name} is not UTF-8: {e}")))?;
    Ok(parse_jsonl(text, name)?)
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("value serializes");
    v.push(b'\n');
    v
}

/// Applies `f` to every item on at most `bound` threads, keeping input
/// order in the result.
pub fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    bound: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..bound.max(1).min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| {
            m.into_inner()
                .expect("slot lock")
                .expect("every item processed")
        })
        .collect()
}

/// Last incorrect attempt per student for each problem, then a seeded
/// sample of at most `per_problem`. Problems without candidates are
/// reported, not fatal.
pub fn sample_corpus(
    corpus: &Corpus,
    cfg: &SampleConfig,
) -> Result<(Vec<Submission>, Vec<StageIssue>), PipelineError> {
    let problems: Vec<String> = if cfg.problems.is_empty() {
        corpus.problems.keys().cloned().collect()
    } else {
        cfg.problems.clone()
    };
    let mut out = Vec::new();
    let mut issues = Vec::new();
    for p in &problems {
        let candidates = last_incorrect_attempts(corpus, p)?;
        if candidates.is_empty() {
            issues.push(StageIssue {
                subject: p.clone(),
                message: "no incorrect attempts to sample".into(),
            });
            continue;
        }
        out.extend(sample_submissions(&candidates, cfg.per_problem, cfg.seed)?);
    }
    Ok((out, issues))
}

/// Candidate subtree token sequences of every submission, for SANN
/// training. Submissions that do not parse or have no candidates are
/// reported and left out.
pub fn labeled_examples(
    submissions: &[Submission],
    cfg: &SubtreeConfig,
) -> (Vec<LabeledExample>, Vec<StageIssue>) {
    let mut examples = Vec::new();
    let mut issues = Vec::new();
    for s in submissions {
        match normalized_subtrees(&s.code, Language::Java, cfg.min_nodes, cfg.max_nodes) {
            Ok(subs) if !subs.is_empty() => examples.push(LabeledExample {
                subtrees: subs.into_iter().map(|n| n.tokens).collect(),
                is_correct: s.is_correct,
            }),
            Ok(_) => issues.push(StageIssue {
                subject: s.submission_id.clone(),
                message: "no candidate subtrees".into(),
            }),
            Err(e) => issues.push(StageIssue {
                subject: s.submission_id.clone(),
                message: e.to_string(),
            }),
        }
    }
    (examples, issues)
}

/// Targets whose supporting pattern is attached, for the coverage check.
pub fn coverage_targets(generated: &GeneratedExample) -> Vec<CoverageTarget> {
    generated
        .example
        .kc_targets
        .iter()
        .enumerate()
        .map(|(i, label)| CoverageTarget {
            label: label.clone(),
            pattern: generated.patterns.get(i).cloned().flatten(),
        })
        .collect()
}

struct StageOutput {
    outputs: Vec<(&'static str, Vec<u8>, &'static str)>,
    issues: Vec<StageIssue>,
    transcripts: Vec<String>,
}

impl StageOutput {
    fn new(issues: Vec<StageIssue>) -> Self {
        Self {
            outputs: Vec::new(),
            issues,
            transcripts: Vec::new(),
        }
    }

    fn add(&mut self, name: &'static str, bytes: Vec<u8>, ext: &'static str) {
        self.outputs.push((name, bytes, ext));
    }
}

struct Runner<'a> {
    config: &'a PipelineConfig,
    store: ArtifactStore,
    corpus: Corpus,
    templates: Templates,
    completer_override: Option<&'a dyn Completer>,
}

impl<'a> Runner<'a> {
    fn transcripts(&self) -> Result<TranscriptStore, PipelineError> {
        Ok(TranscriptStore::new(
            &self.store.root().join("transcripts"),
        )?)
    }

    fn completer(&self) -> Result<Box<dyn Completer + 'a>, PipelineError> {
        if let Some(c) = self.completer_override {
            return Ok(Box::new(Borrowed(c)));
        }
        let llm = &self.config.llm;
        Ok(match llm.mode {
            LlmMode::Stub => Box::new(StubCompleter),
            LlmMode::Replay => {
                let dir = llm
                    .replay_dir
                    .clone()
                    .unwrap_or_else(|| self.store.root().join("transcripts"));
                Box::new(ReplayCompleter::new(TranscriptStore::new(&dir)?))
            }
            LlmMode::Http => Box::new(HttpCompleter::new(llm.client.clone())?),
        })
    }

    fn execute(
        &self,
        stage: Stage,
        inputs: &BTreeMap<String, ArtifactRef>,
    ) -> Result<StageOutput, PipelineError> {
        let read = |name: &str| self.store.read(&inputs[name]);
        match stage {
            Stage::Sample => {
                let (sample, issues) = sample_corpus(&self.corpus, &self.config.sample)?;
                let mut out = StageOutput::new(issues);
                out.add("sample", to_jsonl(&sample), "jsonl");
                Ok(out)
            }
            Stage::Discover => {
                let (examples, issues) =
                    labeled_examples(&self.corpus.submissions, &self.config.subtrees);
                let (sann, sann_report) = train_sann(&examples, &self.config.sann)?;
                let d = discover(&self.corpus, &sann, &self.config.discovery())?;
                let report = DiscoveryReport {
                    sann: sann_report,
                    vae: d.vae_report,
                    kmeans_inertia: d.kmeans.inertia_trace.clone(),
                    kmeans_converged: d.kmeans.converged,
                    n_inputs: d.inputs.len(),
                    skipped: d.skipped,
                };
                let mut out = StageOutput::new(issues);
                out.add("sann", sann.to_tensor_file().to_bytes(), "sann");
                out.add("vae", d.vae.to_tensor_file().to_bytes(), "vae");
                out.add("inventory", to_pretty_json(&d.inventory), "json");
                out.add("report", to_pretty_json(&report), "json");
                Ok(out)
            }
            Stage::Infer => {
                let sample: Vec<Submission> = from_jsonl(&read("sample")?, "sample")?;
                let sann = SannModel::from_tensor_file(&TensorFile::from_bytes(&read("sann")?)?)?;
                let vae = VaeModel::from_tensor_file(&TensorFile::from_bytes(&read("vae")?)?)?;
                let inventory: KcInventory = serde_json::from_slice(&read("inventory")?)?;
                inventory.validate()?;
                let mut assignments = Vec::new();
                let mut issues = Vec::new();
                for s in &sample {
                    match kc_targets(s, &sann, &vae, &inventory, &self.config.subtrees) {
                        Ok(a) => assignments.push(a),
                        Err(e) => issues.push(StageIssue {
                            subject: s.submission_id.clone(),
                            message: e.to_string(),
                        }),
                    }
                }
                let mut out = StageOutput::new(issues);
                out.add("assignments", to_jsonl(&assignments), "jsonl");
                Ok(out)
            }
            Stage::Enrich => self.enrich(inputs),
            Stage::Generate => self.generate(inputs),
            Stage::Evaluate => self.evaluate(inputs),
        }
    }

    fn llm_context<'c>(
        &'c self,
        completer: &'c dyn Completer,
        transcripts: &'c TranscriptStore,
    ) -> LlmContext<'c> {
        LlmContext {
            completer,
            templates: &self.templates,
            model: &self.config.llm.client.model,
            transcripts: Some(transcripts),
            parallelism: self.config.llm.client.parallelism,
        }
    }

    fn enrich(&self, inputs: &BTreeMap<String, ArtifactRef>) -> Result<StageOutput, PipelineError> {
        let assignments: Vec<KcAssignment> =
            from_jsonl(&self.store.read(&inputs["assignments"])?, "assignments")?;
        let mut inventory: KcInventory =
            serde_json::from_slice(&self.store.read(&inputs["inventory"])?)?;
        let completer = self.completer()?;
        let transcripts = self.transcripts()?;
        let done = enrich_assignments(
            &self.llm_context(completer.as_ref(), &transcripts),
            &self.corpus,
            &assignments,
        )
        .into_result(Stage::Enrich)?;
        for l in &done.value {
            inventory
                .kc_meta
                .entry(l.label.kc_id)
                .or_insert_with(|| l.label.meta());
        }
        inventory.validate()?;
        let mut out = StageOutput::new(done.issues);
        out.transcripts = done.transcripts;
        out.add("labels", to_jsonl(&done.value), "jsonl");
        out.add("inventory_enriched", to_pretty_json(&inventory), "json");
        Ok(out)
    }

    fn generate(
        &self,
        inputs: &BTreeMap<String, ArtifactRef>,
    ) -> Result<StageOutput, PipelineError> {
        let sample: Vec<Submission> = from_jsonl(&self.store.read(&inputs["sample"])?, "sample")?;
        let assignments: Vec<KcAssignment> =
            from_jsonl(&self.store.read(&inputs["assignments"])?, "assignments")?;
        let labels: Vec<EnrichedLabel> =
            from_jsonl(&self.store.read(&inputs["labels"])?, "labels")?;
        let completer = self.completer()?;
        let transcripts = self.transcripts()?;
        let done = generate_examples(
            &self.llm_context(completer.as_ref(), &transcripts),
            &self.corpus,
            &sample,
            &assignments,
            &labels,
            &ExampleVariant::BOTH,
        )
        .into_result(Stage::Generate)?;
        let (examples, pairs) = done.value;
        let mut out = StageOutput::new(done.issues);
        out.transcripts = done.transcripts;
        out.add("examples", to_jsonl(&examples), "jsonl");
        out.add("pairs", to_jsonl(&pairs), "jsonl");
        Ok(out)
    }

    fn evaluate(
        &self,
        inputs: &BTreeMap<String, ArtifactRef>,
    ) -> Result<StageOutput, PipelineError> {
        let examples: Vec<GeneratedExample> =
            from_jsonl(&self.store.read(&inputs["examples"])?, "examples")?;
        let pairs: Vec<ExamplePair> = from_jsonl(&self.store.read(&inputs["pairs"])?, "pairs")?;
        let mut out = StageOutput::new(Vec::new());
        out.add("coverage", to_jsonl(&coverage_records(&examples)?), "jsonl");
        if let Some(r) = inputs.get("ratings") {
            let scores: Vec<RubricScore> = from_jsonl(&self.store.read(r)?, "ratings")?;
            let summary = evalkit::evaluate(&scores, &pairs, self.config.evaluate.wilcoxon)?;
            out.add("summary", summary.to_json().into_bytes(), "json");
            out.add("summary_table", summary.render_table().into_bytes(), "txt");
        }
        Ok(out)
    }
}

/// What an LLM-backed stage needs besides its data.
pub struct LlmContext<'a> {
    pub completer: &'a dyn Completer,
    pub templates: &'a Templates,
    pub model: &'a str,
    pub transcripts: Option<&'a TranscriptStore>,
    pub parallelism: usize,
}

/// Result of a batch of LLM jobs. Failed jobs become issues.
#[derive(Debug)]
pub struct LlmBatch<T> {
    pub value: T,
    pub issues: Vec<StageIssue>,
    pub transcripts: Vec<String>,
    pub attempted: usize,
    /// First error, kept to report a batch in which every job failed.
    pub first_error: Option<LlmError>,
    pub succeeded: usize,
}

impl<T> LlmBatch<T> {
    /// Fails when jobs were attempted and none succeeded.
    pub fn into_result(self, stage: Stage) -> Result<Self, PipelineError> {
        if self.attempted > 0 && self.succeeded == 0 {
            let source = self.first_error.expect("failed jobs record an error");
            return Err(PipelineError::Upstream { stage, source });
        }
        Ok(self)
    }
}

struct Job<T> {
    subject: String,
    result: Result<T, LlmError>,
    transcripts: Vec<String>,
}

fn run_jobs<J: Sync, T: Send>(
    ctx: &LlmContext<'_>,
    jobs: &[J],
    f: impl Fn(
            &J,
        ) -> (
            String,
            Result<crate::genkit::PromptBundle, GenkitError>,
            Box<dyn Fn(&str) -> Result<T, GenkitError> + '_>,
        ) + Sync,
) -> Vec<Job<T>> {
    parallel_map(jobs, ctx.parallelism, |j| {
        let (subject, bundle, parse) = f(j);
        match bundle {
            Err(e) => Job {
                subject,
                result: Err(e.into()),
                transcripts: Vec::new(),
            },
            Ok(bundle) => {
                let (result, ts) = complete_and_parse(
                    ctx.completer,
                    ctx.templates,
                    ctx.model,
                    &bundle,
                    ctx.transcripts,
                    parse,
                );
                Job {
                    subject,
                    result,
                    transcripts: ts.into_iter().map(|t| t.request_hash).collect(),
                }
            }
        }
    })
}

/// Labels every (submission, KC target) pair of `assignments`, in order.
pub fn enrich_assignments(
    ctx: &LlmContext<'_>,
    corpus: &Corpus,
    assignments: &[KcAssignment],
) -> LlmBatch<Vec<EnrichedLabel>> {
    let mut issues = Vec::new();
    let mut jobs: Vec<(&Submission, usize, &str)> = Vec::new();
    for a in assignments {
        let Some(s) = corpus.submission(&a.submission_id) else {
            issues.push(StageIssue {
                subject: a.submission_id.clone(),
                message: "submission not in corpus".into(),
            });
            continue;
        };
        jobs.extend(a.targets.iter().map(|t| (s, t.kc_id, t.snippet.as_str())));
    }
    let done = run_jobs(ctx, &jobs, |&(s, kc_id, snippet)| {
        let problem = &corpus.problems[&s.problem_id];
        (
            format!("{}:kc{kc_id}", s.submission_id),
            build_enrichment_prompt(ctx.templates, problem, s, snippet, kc_id),
            Box::new(move |t: &str| parse_enrichment_response(t, kc_id)),
        )
    });
    let mut batch = LlmBatch {
        value: Vec::new(),
        issues,
        transcripts: Vec::new(),
        attempted: jobs.len(),
        first_error: None,
        succeeded: 0,
    };
    for ((s, _, _), job) in jobs.iter().zip(done) {
        batch.transcripts.extend(job.transcripts);
        match job.result {
            Ok(label) => {
                batch.succeeded += 1;
                batch.value.push(EnrichedLabel {
                    submission_id: s.submission_id.clone(),
                    label,
                });
            }
            Err(e) => {
                batch.issues.push(StageIssue {
                    subject: job.subject,
                    message: e.to_string(),
                });
                batch.first_error.get_or_insert(e);
            }
        }
    }
    batch
}

/// One prompt to send: submission, variant, KC targets and their patterns.
type GenerationJob<'a> = (
    &'a Submission,
    ExampleVariant,
    Vec<KcLabel>,
    Vec<Option<PatternRef>>,
);

/// Generates the requested variants for each submission. A conditioned
/// example needs at least one labelled KC target; submissions without one
/// get only the baseline and an issue. Pairs list submissions for which
/// both variants parsed.
pub fn generate_examples(
    ctx: &LlmContext<'_>,
    corpus: &Corpus,
    submissions: &[Submission],
    assignments: &[KcAssignment],
    labels: &[EnrichedLabel],
    variants: &[ExampleVariant],
) -> LlmBatch<(Vec<GeneratedExample>, Vec<ExamplePair>)> {
    let by_sub: BTreeMap<&str, &KcAssignment> = assignments
        .iter()
        .map(|a| (a.submission_id.as_str(), a))
        .collect();
    let label_of: BTreeMap<(&str, usize), &KcLabel> = labels
        .iter()
        .map(|l| ((l.submission_id.as_str(), l.label.kc_id), &l.label))
        .collect();

    let mut issues = Vec::new();
    let mut jobs: Vec<GenerationJob> = Vec::new();
    for s in submissions {
        if variants.contains(&ExampleVariant::Baseline) {
            jobs.push((s, ExampleVariant::Baseline, Vec::new(), Vec::new()));
        }
        if !variants.contains(&ExampleVariant::KcConditioned) {
            continue;
        }
        let mut ls = Vec::new();
        let mut ps = Vec::new();
        for t in by_sub
            .get(s.submission_id.as_str())
            .map_or(&[][..], |a| &a.targets[..])
        {
            if let Some(l) = label_of.get(&(s.submission_id.as_str(), t.kc_id)) {
                ls.push((*l).clone());
                ps.push(Some(PatternRef {
                    kind: t.supporter.subtree.kind.clone(),
                    tokens: t.supporter.subtree.tokens.clone(),
                }));
            }
        }
        if ls.is_empty() {
            issues.push(StageIssue {
                subject: s.submission_id.clone(),
                message: "no labelled KC targets; conditioned example skipped".into(),
            });
            continue;
        }
        jobs.push((s, ExampleVariant::KcConditioned, ls, ps));
    }
    let done = run_jobs(ctx, &jobs, |(s, variant, ls, _)| {
        let variant = *variant;
        let bundle = corpus
            .problems
            .get(&s.problem_id)
            .ok_or_else(|| GenkitError::Format(format!("unknown problem {}", s.problem_id)))
            .and_then(|p| build_worked_example_prompt(ctx.templates, p, s, variant, ls));
        (
            example_id(&s.submission_id, variant),
            bundle,
            Box::new(move |t: &str| parse_worked_example(t, variant, ls)),
        )
    });
    let mut batch = LlmBatch {
        value: (Vec::new(), Vec::new()),
        issues,
        transcripts: Vec::new(),
        attempted: jobs.len(),
        first_error: None,
        succeeded: 0,
    };
    for ((s, _, _, ps), job) in jobs.iter().zip(done) {
        batch.transcripts.extend(job.transcripts);
        match job.result {
            Ok(example) => {
                batch.succeeded += 1;
                batch.value.0.push(GeneratedExample {
                    example_id: job.subject,
                    submission_id: s.submission_id.clone(),
                    example,
                    patterns: ps.clone(),
                });
            }
            Err(e) => {
                batch.issues.push(StageIssue {
                    subject: job.subject,
                    message: e.to_string(),
                });
                batch.first_error.get_or_insert(e);
            }
        }
    }
    let have: std::collections::BTreeSet<&str> = batch
        .value
        .0
        .iter()
        .map(|e| e.example_id.as_str())
        .collect();
    let pairs: Vec<ExamplePair> = submissions
        .iter()
        .filter_map(|s| {
            let b = example_id(&s.submission_id, ExampleVariant::Baseline);
            let k = example_id(&s.submission_id, ExampleVariant::KcConditioned);
            (have.contains(b.as_str()) && have.contains(k.as_str())).then(|| ExamplePair {
                submission_id: s.submission_id.clone(),
                baseline: b,
                kc_conditioned: k,
            })
        })
        .collect();
    batch.value.1 = pairs;
    batch
}

/// Heuristic coverage of every KC-conditioned example.
pub fn coverage_records(
    examples: &[GeneratedExample],
) -> Result<Vec<CoverageRecord>, PipelineError> {
    let mut out = Vec::new();
    for g in examples
        .iter()
        .filter(|g| g.example.variant == ExampleVariant::KcConditioned)
    {
        let results = kc_coverage_heuristic(&g.example, &coverage_targets(g))?;
        out.push(CoverageRecord {
            example_id: g.example_id.clone(),
            submission_id: g.submission_id.clone(),
            kc_ids: g.example.kc_targets.iter().map(|l| l.kc_id).collect(),
            in_code: results.iter().map(|r| r.in_code).collect(),
            in_text: results.iter().map(|r| r.in_text).collect(),
        });
    }
    Ok(out)
}

struct Borrowed<'a>(&'a dyn Completer);

impl Completer for Borrowed<'_> {
    fn complete(&self, request: &crate::genkit::ChatRequest) -> Result<String, LlmError> {
        self.0.complete(request)
    }
}

fn snapshot_id(config: &PipelineConfig, inputs: &BTreeMap<String, ArtifactRef>) -> String {
    // paths do not affect results; input contents are hashed instead
    let mut c = config.clone();
    c.corpus = PathBuf::new();
    c.problems = None;
    c.output_root = PathBuf::new();
    c.templates = None;
    c.llm.replay_dir = None;
    c.evaluate.ratings = None;
    let hashes: BTreeMap<&String, &String> = inputs.iter().map(|(k, v)| (k, &v.sha256)).collect();
    let bytes = serde_json::to_vec(&(c, hashes)).expect("config serializes");
    sha256_hex(&bytes)[..16].to_string()
}

/// Runs `stages` in canonical order and returns the updated manifest.
///
/// A stage whose recorded inputs match and whose outputs are intact is
/// skipped unless `options.force` is set. Per-submission LLM failures are
/// recorded as issues; a stage fails only when every request fails.
pub fn run_pipeline(
    config: &PipelineConfig,
    stages: &[Stage],
    options: &RunOptions<'_>,
) -> Result<RunManifest, PipelineError> {
    config.validate()?;
    let problems_path = config
        .problems
        .clone()
        .unwrap_or_else(|| crate::corpus::sidecar_problems_path(&config.corpus));
    let corpus = load_corpus(&config.corpus, Some(&problems_path))?;
    let templates = match &config.templates {
        Some(dir) => Templates::load_dir(dir)?,
        None => Templates::default(),
    };
    let store = ArtifactStore::new(&config.output_root);
    let mut inputs = BTreeMap::new();
    inputs.insert(
        "corpus".to_string(),
        store.put(&std::fs::read(&config.corpus)?, "jsonl")?,
    );
    inputs.insert(
        "problems".to_string(),
        store.put(&std::fs::read(&problems_path)?, "jsonl")?,
    );
    inputs.insert(
        "templates".to_string(),
        store.put(&to_pretty_json(&templates), "json")?,
    );
    if let Some(r) = &config.evaluate.ratings {
        inputs.insert(
            "ratings".to_string(),
            store.put(&std::fs::read(r)?, "jsonl")?,
        );
    }
    let run_id = snapshot_id(config, &inputs);
    let mpath = manifest_path(&config.output_root, &run_id);
    let mut manifest = if mpath.exists() {
        load_manifest(&mpath)?
    } else {
        RunManifest {
            run_id: run_id.clone(),
            config: config.clone(),
            seeds: config.seeds(),
            inputs: inputs.clone(),
            stages: BTreeMap::new(),
        }
    };

    let runner = Runner {
        config,
        store,
        corpus,
        templates,
        completer_override: options.completer,
    };
    let mut order: Vec<Stage> = stages.to_vec();
    order.sort();
    order.dedup();
    for stage in order {
        let mut stage_inputs = BTreeMap::new();
        for &(name, producer) in stage.needs() {
            let r = manifest
                .output(producer, name)
                .filter(|r| runner.store.verify(r))
                .ok_or(PipelineError::MissingUpstream {
                    stage,
                    artifact: name.to_string(),
                    needs: producer,
                })?;
            stage_inputs.insert(name.to_string(), r.clone());
        }
        if stage == Stage::Evaluate {
            if let Some(r) = inputs.get("ratings") {
                stage_inputs.insert("ratings".to_string(), r.clone());
            }
        }
        if !options.force {
            if let Some(rec) = manifest.stages.get(&stage) {
                if rec.inputs == stage_inputs
                    && rec.outputs.values().all(|r| runner.store.verify(r))
                {
                    log::info!("stage {stage}: outputs current, skipping");
                    continue;
                }
            }
        }
        log::info!("stage {stage}: running");
        let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
        let clock = Instant::now();
        let out = runner.execute(stage, &stage_inputs)?;
        let mut outputs = BTreeMap::new();
        for (name, bytes, ext) in &out.outputs {
            outputs.insert(name.to_string(), runner.store.put(bytes, ext)?);
        }
        for issue in &out.issues {
            log::warn!("stage {stage}: {}: {}", issue.subject, issue.message);
        }
        manifest.stages.insert(
            stage,
            StageRecord {
                inputs: stage_inputs,
                outputs,
                started_at,
                elapsed_ms: clock.elapsed().as_millis() as u64,
                issues: out.issues,
                transcripts: out.transcripts,
            },
        );
        write_atomic(&mpath, &to_pretty_json(&manifest))?;
    }
    Ok(manifest)
}
