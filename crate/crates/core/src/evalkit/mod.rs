//! Expert-rating analysis: rubric records, baseline/KC-conditioned pairing,
//! inter-rater agreement and the per-item comparison table.

mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use stats::{
    cohen_kappa, holm_correct, wilcoxon_signed_rank, WilcoxonMode, WilcoxonResult, EXACT_MAX_N,
};

use crate::genkit::ExampleVariant;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no observations")]
    Empty,
    #[error("non-finite observation")]
    NonFinite,
    #[error("exact test limited to {EXACT_MAX_N} non-zero differences, got {0}")]
    ExactTooLarge(usize),
    #[error("p-value {0} outside [0, 1]")]
    PValue(f64),
    #[error("rating {example_id}/{rater_id}: {reason}")]
    Rating {
        example_id: String,
        rater_id: String,
        reason: String,
    },
    #[error("{0}")]
    Pairs(String),
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RubricItem {
    Formatting,
    ClearExplanations,
    Correctness,
    StepStructure,
    Relevance,
}

impl RubricItem {
    pub const ALL: [RubricItem; 5] = [
        Self::Formatting,
        Self::ClearExplanations,
        Self::Correctness,
        Self::StepStructure,
        Self::Relevance,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Formatting => "formatting",
            Self::ClearExplanations => "clear_explanations",
            Self::Correctness => "correctness",
            Self::StepStructure => "step_structure",
            Self::Relevance => "relevance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    Baseline,
    KcConditioned,
    #[serde(rename = "none")]
    Neither,
}

/// One rater's scores for one worked example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricScore {
    pub example_id: String,
    pub rater_id: String,
    pub items: BTreeMap<RubricItem, u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kc_coverage: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preference: Option<Preference>,
}

impl RubricScore {
    fn error(&self, reason: impl Into<String>) -> EvalError {
        EvalError::Rating {
            example_id: self.example_id.clone(),
            rater_id: self.rater_id.clone(),
            reason: reason.into(),
        }
    }

    /// Checks the item set and score range, and that `kc_coverage` is
    /// present exactly for KC-conditioned examples.
    pub fn validate(&self, variant: ExampleVariant) -> Result<(), EvalError> {
        for item in RubricItem::ALL {
            match self.items.get(&item) {
                None => return Err(self.error(format!("missing item {}", item.as_str()))),
                Some(&s) if s > 2 => {
                    return Err(self.error(format!("{} score {s} outside 0..=2", item.as_str())))
                }
                _ => {}
            }
        }
        match (variant, self.kc_coverage) {
            (ExampleVariant::KcConditioned, None) => Err(self.error("kc_coverage missing")),
            (ExampleVariant::Baseline, Some(_)) => {
                Err(self.error("kc_coverage on a baseline example"))
            }
            (_, Some(s)) if s > 2 => Err(self.error(format!("kc_coverage {s} outside 0..=2"))),
            _ => Ok(()),
        }
    }
}

/// Links the two generated examples of one submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamplePair {
    pub submission_id: String,
    pub baseline: String,
    pub kc_conditioned: String,
}

/// Both sides of one submission's comparison, scored by one rater.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatedPair {
    pub submission_id: String,
    pub rater_id: String,
    pub baseline: BTreeMap<RubricItem, u8>,
    pub kc_conditioned: BTreeMap<RubricItem, u8>,
    pub kc_coverage: u8,
    pub preference: Option<Preference>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PairedRatings {
    pub pairs: Vec<RatedPair>,
    /// Submissions without a rater who scored both sides.
    pub excluded: Vec<String>,
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, EvalError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line).map_err(|source| EvalError::Parse {
                path: path.display().to_string(),
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

pub fn load_scores(path: &Path) -> Result<Vec<RubricScore>, EvalError> {
    read_jsonl(path)
}

pub fn load_pairs(path: &Path) -> Result<Vec<ExamplePair>, EvalError> {
    read_jsonl(path)
}

/// Validates every score against its example's variant and pairs the two
/// sides of each submission. When several raters scored both sides, the
/// lexicographically first rater id is used; the preference is taken from
/// that rater's records.
pub fn pair_ratings(
    scores: &[RubricScore],
    pairs: &[ExamplePair],
) -> Result<PairedRatings, EvalError> {
    let mut variant_of: BTreeMap<&str, ExampleVariant> = BTreeMap::new();
    let mut seen_subs = BTreeSet::new();
    for p in pairs {
        if !seen_subs.insert(p.submission_id.as_str()) {
            return Err(EvalError::Pairs(format!(
                "submission {} paired twice",
                p.submission_id
            )));
        }
        for (id, v) in [
            (&p.baseline, ExampleVariant::Baseline),
            (&p.kc_conditioned, ExampleVariant::KcConditioned),
        ] {
            if variant_of.insert(id, v).is_some() {
                return Err(EvalError::Pairs(format!(
                    "example {id} appears in two pairs"
                )));
            }
        }
    }
    let mut by_key: BTreeMap<(&str, &str), &RubricScore> = BTreeMap::new();
    for s in scores {
        let variant = *variant_of
            .get(s.example_id.as_str())
            .ok_or_else(|| s.error("example not listed in the pairs file"))?;
        s.validate(variant)?;
        if by_key.insert((&s.example_id, &s.rater_id), s).is_some() {
            return Err(s.error("duplicate rating"));
        }
    }

    let mut out = PairedRatings::default();
    for p in pairs {
        let raters = |id: &str| -> BTreeSet<&str> {
            by_key
                .keys()
                .filter(|(e, _)| *e == id)
                .map(|(_, r)| *r)
                .collect()
        };
        let both = raters(&p.baseline);
        let rater = both
            .intersection(&raters(&p.kc_conditioned))
            .next()
            .copied();
        let Some(rater) = rater else {
            out.excluded.push(p.submission_id.clone());
            continue;
        };
        let b = by_key[&(p.baseline.as_str(), rater)];
        let k = by_key[&(p.kc_conditioned.as_str(), rater)];
        out.pairs.push(RatedPair {
            submission_id: p.submission_id.clone(),
            rater_id: rater.to_string(),
            baseline: b.items.clone(),
            kc_conditioned: k.items.clone(),
            kc_coverage: k.kc_coverage.expect("validated"),
            preference: k.preference.or(b.preference),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRow {
    pub item: RubricItem,
    pub baseline_mean: f64,
    pub kc_conditioned_mean: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub p_holm: f64,
    pub n_effective: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PreferenceTally {
    pub baseline: usize,
    pub kc_conditioned: usize,
    pub none: usize,
    pub missing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    /// Kappa over all item scores of the jointly rated examples.
    pub kappa: f64,
    pub n_ratings: usize,
    pub n_examples: usize,
    pub per_item: BTreeMap<RubricItem, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_pairs: usize,
    pub mode: WilcoxonMode,
    pub items: Vec<ItemRow>,
    pub preference: PreferenceTally,
    pub kc_coverage_mean: f64,
    pub agreement: Option<Agreement>,
    pub excluded: Vec<String>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-item means, Wilcoxon p-values and Holm-adjusted p-values across the
/// five items, plus preference tallies and mean KC coverage.
pub fn summarize(paired: &PairedRatings, mode: WilcoxonMode) -> Result<Summary, EvalError> {
    if paired.pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut items = Vec::new();
    for item in RubricItem::ALL {
        let b: Vec<f64> = paired
            .pairs
            .iter()
            .map(|p| f64::from(p.baseline[&item]))
            .collect();
        let k: Vec<f64> = paired
            .pairs
            .iter()
            .map(|p| f64::from(p.kc_conditioned[&item]))
            .collect();
        let w = wilcoxon_signed_rank(&b, &k, mode)?;
        items.push(ItemRow {
            item,
            baseline_mean: mean(&b),
            kc_conditioned_mean: mean(&k),
            statistic: w.statistic,
            p_value: w.p_value,
            p_holm: 0.0,
            n_effective: w.n_effective,
        });
    }
    let raw: Vec<f64> = items.iter().map(|r| r.p_value).collect();
    for (row, adj) in items.iter_mut().zip(holm_correct(&raw)?) {
        row.p_holm = adj;
    }
    let mut preference = PreferenceTally::default();
    for p in &paired.pairs {
        match p.preference {
            Some(Preference::Baseline) => preference.baseline += 1,
            Some(Preference::KcConditioned) => preference.kc_conditioned += 1,
            Some(Preference::Neither) => preference.none += 1,
            None => preference.missing += 1,
        }
    }
    let cov: Vec<f64> = paired
        .pairs
        .iter()
        .map(|p| f64::from(p.kc_coverage))
        .collect();
    Ok(Summary {
        n_pairs: paired.pairs.len(),
        mode,
        items,
        preference,
        kc_coverage_mean: mean(&cov),
        agreement: None,
        excluded: paired.excluded.clone(),
    })
}

/// Agreement on examples scored by two or more raters, using the two
/// lexicographically first raters of each. `None` when no example was
/// scored twice.
pub fn agreement(scores: &[RubricScore]) -> Result<Option<Agreement>, EvalError> {
    let mut by_example: BTreeMap<&str, BTreeMap<&str, &RubricScore>> = BTreeMap::new();
    for s in scores {
        by_example
            .entry(&s.example_id)
            .or_default()
            .insert(&s.rater_id, s);
    }
    let mut pooled = (Vec::new(), Vec::new());
    let mut per_item: BTreeMap<RubricItem, (Vec<u8>, Vec<u8>)> = BTreeMap::new();
    let mut n_examples = 0;
    for raters in by_example.values() {
        let mut it = raters.values();
        let (Some(a), Some(b)) = (it.next(), it.next()) else {
            continue;
        };
        n_examples += 1;
        for item in RubricItem::ALL {
            let (Some(&x), Some(&y)) = (a.items.get(&item), b.items.get(&item)) else {
                return Err(a.error(format!("missing item {}", item.as_str())));
            };
            pooled.0.push(x);
            pooled.1.push(y);
            let e = per_item.entry(item).or_default();
            e.0.push(x);
            e.1.push(y);
        }
    }
    if n_examples == 0 {
        return Ok(None);
    }
    let mut kappas = BTreeMap::new();
    for (item, (a, b)) in &per_item {
        kappas.insert(*item, cohen_kappa(a, b)?);
    }
    Ok(Some(Agreement {
        kappa: cohen_kappa(&pooled.0, &pooled.1)?,
        n_ratings: pooled.0.len(),
        n_examples,
        per_item: kappas,
    }))
}

/// Pairs, summarizes and attaches agreement in one step.
pub fn evaluate(
    scores: &[RubricScore],
    pairs: &[ExamplePair],
    mode: WilcoxonMode,
) -> Result<Summary, EvalError> {
    let paired = pair_ratings(scores, pairs)?;
    let mut summary = summarize(&paired, mode)?;
    summary.agreement = agreement(scores)?;
    Ok(summary)
}

impl Summary {
    /// Fixed-width text table: five item rows, then preference and
    /// coverage rows, then agreement.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<20} {:>8} {:>8} {:>8} {:>8} {:>4}",
            "item", "baseline", "kc_cond", "p", "p_holm", "n"
        );
        for r in &self.items {
            let _ = writeln!(
                s,
                "{:<20} {:>8.3} {:>8.3} {:>8.4} {:>8.4} {:>4}",
                r.item.as_str(),
                r.baseline_mean,
                r.kc_conditioned_mean,
                r.p_value,
                r.p_holm,
                r.n_effective
            );
        }
        let p = &self.preference;
        let _ = writeln!(
            s,
            "{:<20} baseline={} kc_conditioned={} none={} missing={}",
            "preference", p.baseline, p.kc_conditioned, p.none, p.missing
        );
        let _ = writeln!(s, "{:<20} {:>8.3}", "kc_coverage", self.kc_coverage_mean);
        match &self.agreement {
            Some(a) => {
                let _ = writeln!(
                    s,
                    "kappa {:.3} over {} ratings on {} examples; {} pairs, {} excluded",
                    a.kappa,
                    a.n_ratings,
                    a.n_examples,
                    self.n_pairs,
                    self.excluded.len()
                );
            }
            None => {
                let _ = writeln!(
                    s,
                    "no jointly rated examples; {} pairs, {} excluded",
                    self.n_pairs,
                    self.excluded.len()
                );
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes") + "\n"
    }
}
