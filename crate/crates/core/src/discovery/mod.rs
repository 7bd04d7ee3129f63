//! KC discovery: context representations of high-attention subtrees, a VAE
//! latent space trained on correct submissions, K-means clustering into a
//! global inventory, and nearest-centroid assignment.

mod kmeans;
mod vae;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use kmeans::{kmeans_fit, nearest, squared_distance, KmeansFit};
pub use vae::{
    kl_to_standard_normal, train_vae, ElboTerms, VaeHyperParams, VaeModel, VaeParams, VaeReport,
};

use crate::artifact::ArtifactError;
use crate::ast::{normalized_subtrees, snippet_for_span, Language, SubtreeError};
use crate::corpus::{Corpus, Submission};
use crate::sann::{SannError, SannModel, ScoredSubtree};

pub const DEFAULT_K: usize = 50;
pub const DEFAULT_MAX_TARGETS: usize = 5;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("vector has dimension {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("no training inputs")]
    EmptyInputs,
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("latent dimension {0} is below 2")]
    LatentDim(usize),
    #[error("non-finite parameters after training")]
    NonFinite,
    #[error("{points} points cannot form {k} clusters")]
    TooFewPoints { points: usize, k: usize },
    #[error("only {distinct} distinct points for {k} clusters")]
    TooFewDistinct { distinct: usize, k: usize },
    #[error("invalid inventory: {0}")]
    Inventory(String),
    #[error("invalid KC label: {0}")]
    Label(String),
    #[error("submission {submission_id}: {source}")]
    Submission {
        submission_id: String,
        #[source]
        source: SubtreeError,
    },
    #[error("submission {0} has no candidate subtrees")]
    NoSubtrees(String),
    #[error(transparent)]
    Sann(#[from] SannError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// `encoding ‖ Σ a_j h_j / Σ a_j` over the neighbours, with a zero context
/// half when there are none.
pub fn context_representation(scored: &ScoredSubtree, neighbors: &[&ScoredSubtree]) -> Vec<f64> {
    let d = scored.encoding.len();
    let mut ctx = vec![0.0; d];
    let total: f64 = neighbors.iter().map(|n| n.attention).sum();
    if !neighbors.is_empty() && total > 0.0 {
        for n in neighbors {
            for (c, h) in ctx.iter_mut().zip(&n.encoding) {
                *c += n.attention * h;
            }
        }
        for c in &mut ctx {
            *c /= total;
        }
    }
    let mut out = scored.encoding.clone();
    out.extend(ctx);
    out
}

/// Context representation of every subtree in `selected`, each using the
/// others as neighbours.
pub fn context_representations(selected: &[ScoredSubtree]) -> Vec<Vec<f64>> {
    (0..selected.len())
        .map(|i| {
            let neighbors: Vec<&ScoredSubtree> = selected
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, s)| s)
                .collect();
            context_representation(&selected[i], &neighbors)
        })
        .collect()
}

/// Short name and one-sentence description of a KC.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KcMeta {
    pub label: String,
    pub description: String,
}

pub const MAX_DESCRIPTION_CHARS: usize = 300;

impl KcMeta {
    /// Label of 2 to 6 words; description of one sentence, at most 300
    /// characters, ending in its only period.
    pub fn new(label: &str, description: &str) -> Result<Self, DiscoveryError> {
        let label = label.split_whitespace().collect::<Vec<_>>().join(" ");
        let words = label.split(' ').filter(|w| !w.is_empty()).count();
        if !(2..=6).contains(&words) {
            return Err(DiscoveryError::Label(format!(
                "label {label:?} has {words} words, expected 2 to 6"
            )));
        }
        let description = description.trim().to_string();
        if description.chars().count() > MAX_DESCRIPTION_CHARS {
            return Err(DiscoveryError::Label(format!(
                "description longer than {MAX_DESCRIPTION_CHARS} characters"
            )));
        }
        if description.contains('\n') {
            return Err(DiscoveryError::Label(
                "description spans several lines".into(),
            ));
        }
        let periods = description.matches('.').count();
        if !description.ends_with('.') || periods != 1 {
            return Err(DiscoveryError::Label(
                "description must be one sentence ending in a period".into(),
            ));
        }
        Ok(Self { label, description })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub corpus_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub hyperparams: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KcInventory {
    pub k: usize,
    pub d_z: usize,
    pub centroids: Vec<Vec<f64>>,
    pub kc_meta: BTreeMap<usize, KcMeta>,
    pub provenance: Provenance,
}

impl KcInventory {
    pub fn new(centroids: Vec<Vec<f64>>, provenance: Provenance) -> Result<Self, DiscoveryError> {
        let inv = Self {
            k: centroids.len(),
            d_z: centroids.first().map_or(0, Vec::len),
            centroids,
            kc_meta: BTreeMap::new(),
            provenance,
        };
        inv.validate()?;
        Ok(inv)
    }

    pub fn validate(&self) -> Result<(), DiscoveryError> {
        let bad = |m: String| Err(DiscoveryError::Inventory(m));
        if self.k == 0 || self.centroids.len() != self.k {
            return bad(format!(
                "{} centroids for k = {}",
                self.centroids.len(),
                self.k
            ));
        }
        for (i, c) in self.centroids.iter().enumerate() {
            if c.len() != self.d_z {
                return bad(format!("centroid {i} has dimension {}", c.len()));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return bad(format!("centroid {i} is not finite"));
            }
            if self.centroids[..i].contains(c) {
                return bad(format!("centroid {i} duplicates an earlier centroid"));
            }
        }
        if let Some(id) = self.kc_meta.keys().find(|&&id| id >= self.k) {
            return bad(format!("metadata for unknown KC {id}"));
        }
        for m in self.kc_meta.values() {
            KcMeta::new(&m.label, &m.description)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), DiscoveryError> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DiscoveryError> {
        let inv: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        inv.validate()?;
        Ok(inv)
    }
}

/// Nearest centroid by squared Euclidean distance, ties to the smaller id.
pub fn assign_kc(inventory: &KcInventory, z: &[f64]) -> Result<usize, DiscoveryError> {
    if z.len() != inventory.d_z {
        return Err(DiscoveryError::Dimension {
            expected: inventory.d_z,
            found: z.len(),
        });
    }
    Ok(nearest(&inventory.centroids, z).0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KcTarget {
    pub kc_id: usize,
    pub supporter: ScoredSubtree,
    pub snippet: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KcAssignment {
    pub submission_id: String,
    pub targets: Vec<KcTarget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubtreeConfig {
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub attention_threshold: f64,
    pub max_targets: usize,
}

impl Default for SubtreeConfig {
    fn default() -> Self {
        Self {
            min_nodes: crate::ast::DEFAULT_MIN_NODES,
            max_nodes: crate::ast::DEFAULT_MAX_NODES,
            attention_threshold: DEFAULT_THRESHOLD,
            max_targets: DEFAULT_MAX_TARGETS,
        }
    }
}

/// High-attention subtrees of one submission, in source order.
pub fn high_attention_for(
    submission: &Submission,
    sann: &SannModel,
    cfg: &SubtreeConfig,
) -> Result<Vec<ScoredSubtree>, DiscoveryError> {
    let subs = normalized_subtrees(
        &submission.code,
        Language::Java,
        cfg.min_nodes,
        cfg.max_nodes,
    )
    .map_err(|source| DiscoveryError::Submission {
        submission_id: submission.submission_id.clone(),
        source,
    })?;
    if subs.is_empty() {
        return Err(DiscoveryError::NoSubtrees(submission.submission_id.clone()));
    }
    Ok(sann.high_attention_subtrees(&subs, cfg.attention_threshold)?)
}

/// Maps a submission's high-attention subtrees to KC ids. Targets are
/// deduplicated by KC (keeping the higher-attention supporter), ordered by
/// descending supporter attention with source position breaking ties, and
/// capped at `cfg.max_targets`.
pub fn kc_targets(
    submission: &Submission,
    sann: &SannModel,
    vae: &VaeModel,
    inventory: &KcInventory,
    cfg: &SubtreeConfig,
) -> Result<KcAssignment, DiscoveryError> {
    let selected = high_attention_for(submission, sann, cfg)?;
    let reprs = context_representations(&selected);
    let mut best: BTreeMap<usize, (ScoredSubtree, String)> = BTreeMap::new();
    for (s, x) in selected.into_iter().zip(reprs) {
        let kc = assign_kc(inventory, &vae.encode_latent(&x)?)?;
        if best
            .get(&kc)
            .is_some_and(|(b, _)| b.attention >= s.attention)
        {
            continue;
        }
        let snippet = snippet_for_span(s.subtree.span, &submission.code)
            .expect("span comes from this source");
        best.insert(kc, (s, snippet));
    }
    let mut targets: Vec<KcTarget> = best
        .into_iter()
        .map(|(kc_id, (supporter, snippet))| KcTarget {
            kc_id,
            supporter,
            snippet,
        })
        .collect();
    targets.sort_by(|a, b| {
        b.supporter
            .attention
            .total_cmp(&a.supporter.attention)
            .then(a.supporter.subtree.span.0.cmp(&b.supporter.subtree.span.0))
    });
    targets.truncate(cfg.max_targets.max(1));
    Ok(KcAssignment {
        submission_id: submission.submission_id.clone(),
        targets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscoveryConfig {
    pub subtrees: SubtreeConfig,
    pub vae: VaeHyperParams,
    pub k: usize,
    pub kmeans_seed: u64,
    pub kmeans_max_iters: usize,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        Self {
            subtrees: SubtreeConfig::default(),
            vae: VaeHyperParams::default(),
            k: DEFAULT_K,
            kmeans_seed: 0,
            kmeans_max_iters: 300,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Discovery {
    pub vae: VaeModel,
    pub vae_report: VaeReport,
    pub inventory: KcInventory,
    pub kmeans: KmeansFit,
    /// Context representations of the correct submissions, in corpus order.
    pub inputs: Vec<Vec<f64>>,
    pub skipped: Vec<String>,
}

/// Hex SHA-256 over the corpus problems and submissions as JSON lines.
pub fn corpus_hash(corpus: &Corpus) -> String {
    let mut h = Sha256::new();
    for p in corpus.problems.values() {
        h.update(serde_json::to_vec(p).expect("problem serializes"));
        h.update(b"\n");
    }
    for s in &corpus.submissions {
        h.update(serde_json::to_vec(s).expect("submission serializes"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Context representations of high-attention subtrees from every correct
/// submission. Submissions that fail to parse are skipped and reported.
pub fn correct_context_inputs(
    corpus: &Corpus,
    sann: &SannModel,
    cfg: &SubtreeConfig,
) -> Result<(Vec<Vec<f64>>, Vec<String>), DiscoveryError> {
    let mut inputs = Vec::new();
    let mut skipped = Vec::new();
    for s in corpus.submissions.iter().filter(|s| s.is_correct) {
        match high_attention_for(s, sann, cfg) {
            Ok(selected) => inputs.extend(context_representations(&selected)),
            Err(DiscoveryError::Submission { .. } | DiscoveryError::NoSubtrees(_)) => {
                log::warn!("skipping submission {} during discovery", s.submission_id);
                skipped.push(s.submission_id.clone());
            }
            Err(e) => return Err(e),
        }
    }
    Ok((inputs, skipped))
}

/// Trains the VAE on correct submissions and clusters the posterior means.
pub fn discover(
    corpus: &Corpus,
    sann: &SannModel,
    cfg: &DiscoveryConfig,
) -> Result<Discovery, DiscoveryError> {
    let (inputs, skipped) = correct_context_inputs(corpus, sann, &cfg.subtrees)?;
    let (vae, vae_report) = train_vae(&inputs, &cfg.vae)?;
    let latents = inputs
        .iter()
        .map(|x| vae.encode_latent(x))
        .collect::<Result<Vec<_>, _>>()?;
    let fit = kmeans_fit(&latents, cfg.k, cfg.kmeans_seed, cfg.kmeans_max_iters)?;
    let provenance = Provenance {
        corpus_hash: corpus_hash(corpus),
        seeds: BTreeMap::from([
            ("sann".to_string(), sann.hyper.seed),
            ("vae".to_string(), cfg.vae.seed),
            ("kmeans".to_string(), cfg.kmeans_seed),
        ]),
        hyperparams: serde_json::json!({
            "sann": sann.hyper,
            "discovery": cfg,
        }),
    };
    let inventory = KcInventory::new(fit.centroids.clone(), provenance)?;
    Ok(Discovery {
        vae,
        vae_report,
        inventory,
        kmeans: fit,
        inputs,
        skipped,
    })
}
