//! Subtree attention network.
//!
//! Each subtree's tokens are embedded and averaged, then passed through one
//! dense tanh layer to give a fixed-length encoding `h_i`. A per-subtree
//! sigmoid attention `a_i = σ(w_a · h_i + b_a)` scores every subtree
//! independently (no normalization across subtrees). The submission vector is
//! the attention-weighted mean `Σ a_i h_i / Σ a_i`, and a logistic classifier
//! on it predicts correctness. Training minimizes binary cross-entropy with
//! plain mini-batch gradient descent.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{ArtifactError, Tensor, TensorFile};
use crate::ast::{NormalizedSubtree, Placeholder};
use crate::nn;

pub const OOV_TOKEN: &str = "<OOV>";
const MODEL_KIND: &str = "sann";

/// Initial attention bias. Pooling normalizes attention, so training only
/// shapes relative weights and the absolute level drifts downward; starting
/// near saturation keeps attended subtrees above the 0.5 threshold.
pub const ATTENTION_BIAS_INIT: f64 = 4.0;

#[derive(Debug, Error)]
pub enum SannError {
    #[error("empty token list")]
    EmptyTokens,
    #[error("empty subtree list")]
    EmptySubtrees,
    #[error("encoding has dimension {found}, model expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("training corpus needs both correct and incorrect examples")]
    SingleClass,
    #[error("training example {0} has no subtrees")]
    EmptyExample(usize),
    #[error("attention threshold {0} outside (0, 1)")]
    Threshold(f64),
    #[error("non-finite parameters after training")]
    NonFinite,
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SannHyperParams {
    pub d_emb: usize,
    pub d_enc: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Fraction of examples held out to report accuracy; never trained on.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for SannHyperParams {
    fn default() -> Self {
        Self {
            d_emb: 32,
            d_enc: 32,
            learning_rate: 0.05,
            epochs: 50,
            batch_size: 32,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Token to row index. Row 0 is the out-of-vocabulary token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// OOV, the placeholder classes, then every other token in sorted order.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut rest: BTreeSet<&str> = tokens.into_iter().collect();
        let mut list = vec![OOV_TOKEN.to_string()];
        for p in Placeholder::ALL {
            rest.remove(p.as_str());
            list.push(p.as_str().to_string());
        }
        rest.remove(OOV_TOKEN);
        list.extend(rest.into_iter().map(str::to_string));
        Self::from_list(list)
    }

    pub fn from_list(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.lookup(t.as_ref())).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SannParams {
    pub embeddings: Array2<f64>,
    pub enc_weight: Array2<f64>,
    pub enc_bias: Array1<f64>,
    pub attn_weight: Array1<f64>,
    pub attn_bias: f64,
    pub cls_weight: Array1<f64>,
    pub cls_bias: f64,
}

impl SannParams {
    pub fn init(vocab: usize, d_emb: usize, d_enc: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            embeddings: nn::normal_mat(vocab, d_emb, 1.0, &mut rng),
            enc_weight: nn::xavier(d_enc, d_emb, &mut rng),
            enc_bias: Array1::zeros(d_enc),
            attn_weight: nn::normal_vec(d_enc, 0.1, &mut rng),
            attn_bias: ATTENTION_BIAS_INIT,
            cls_weight: nn::normal_vec(d_enc, 1.0, &mut rng),
            cls_bias: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embeddings: Array2::zeros(self.embeddings.raw_dim()),
            enc_weight: Array2::zeros(self.enc_weight.raw_dim()),
            enc_bias: Array1::zeros(self.enc_bias.len()),
            attn_weight: Array1::zeros(self.attn_weight.len()),
            attn_bias: 0.0,
            cls_weight: Array1::zeros(self.cls_weight.len()),
            cls_bias: 0.0,
        }
    }

    /// All parameters in a fixed order: embeddings, encoder weight, encoder
    /// bias, attention weight, attention bias, classifier weight, classifier
    /// bias.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.embeddings
            .iter()
            .chain(self.enc_weight.iter())
            .chain(self.enc_bias.iter())
            .chain(self.attn_weight.iter())
            .chain(std::iter::once(&self.attn_bias))
            .chain(self.cls_weight.iter())
            .chain(std::iter::once(&self.cls_bias))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.embeddings
            .iter_mut()
            .chain(self.enc_weight.iter_mut())
            .chain(self.enc_bias.iter_mut())
            .chain(self.attn_weight.iter_mut())
            .chain(std::iter::once(&mut self.attn_bias))
            .chain(self.cls_weight.iter_mut())
            .chain(std::iter::once(&mut self.cls_bias))
    }

    pub fn len(&self) -> usize {
        self.values().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &Self) {
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += alpha * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSubtree {
    pub subtree: NormalizedSubtree,
    pub encoding: Vec<f64>,
    pub attention: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SannModel {
    pub vocab: Vocab,
    pub params: SannParams,
    pub hyper: SannHyperParams,
}

/// One labelled submission: the token sequences of its candidate subtrees.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub subtrees: Vec<Vec<String>>,
    pub is_correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-example loss over each epoch's mini-batches.
    pub loss_trace: Vec<f64>,
    pub train_accuracy: f64,
    pub holdout_accuracy: Option<f64>,
    pub train_size: usize,
    pub holdout_size: usize,
}

/// Intermediate values of one forward pass, kept for backprop.
struct Forward {
    means: Vec<Array1<f64>>,
    encodings: Vec<Array1<f64>>,
    attentions: Vec<f64>,
    pooled: Array1<f64>,
    logit: f64,
}

impl SannModel {
    pub fn new(vocab: Vocab, hyper: SannHyperParams) -> Self {
        let params = SannParams::init(vocab.len(), hyper.d_emb, hyper.d_enc, hyper.seed);
        Self {
            vocab,
            params,
            hyper,
        }
    }

    pub fn d_enc(&self) -> usize {
        self.params.enc_bias.len()
    }

    fn mean_embedding(&self, ids: &[usize]) -> Array1<f64> {
        let mut m = Array1::zeros(self.params.embeddings.ncols());
        for &id in ids {
            m += &self.params.embeddings.row(id);
        }
        m / ids.len() as f64
    }

    fn encode_ids(&self, ids: &[usize]) -> (Array1<f64>, Array1<f64>) {
        let m = self.mean_embedding(ids);
        let h = (self.params.enc_weight.dot(&m) + &self.params.enc_bias).mapv(f64::tanh);
        (m, h)
    }

    fn attention_logit(&self, h: ArrayView1<f64>) -> f64 {
        self.params.attn_weight.dot(&h) + self.params.attn_bias
    }

    /// Fixed-length encoding of a token sequence: `tanh(W · mean(E[t]) + b)`.
    pub fn encode_subtree<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Array1<f64>, SannError> {
        if tokens.is_empty() {
            return Err(SannError::EmptyTokens);
        }
        Ok(self.encode_ids(&self.vocab.ids(tokens)).1)
    }

    pub fn attention_weight(&self, encoding: ArrayView1<f64>) -> Result<f64, SannError> {
        if encoding.len() != self.d_enc() {
            return Err(SannError::Dimension {
                expected: self.d_enc(),
                found: encoding.len(),
            });
        }
        Ok(nn::sigmoid(self.attention_logit(encoding)))
    }

    fn forward(&self, example: &[Vec<usize>]) -> Forward {
        let mut means = Vec::with_capacity(example.len());
        let mut encodings = Vec::with_capacity(example.len());
        let mut attentions = Vec::with_capacity(example.len());
        let mut pooled = Array1::zeros(self.d_enc());
        let mut total = 0.0;
        for ids in example {
            let (m, h) = self.encode_ids(ids);
            let a = nn::sigmoid(self.attention_logit(h.view()));
            pooled.scaled_add(a, &h);
            total += a;
            means.push(m);
            encodings.push(h);
            attentions.push(a);
        }
        pooled /= total;
        let logit = self.params.cls_weight.dot(&pooled) + self.params.cls_bias;
        Forward {
            means,
            encodings,
            attentions,
            pooled,
            logit,
        }
    }

    /// Probability that the submission is correct, plus every subtree's
    /// encoding and attention in input order.
    pub fn predict_correctness(
        &self,
        subtrees: &[NormalizedSubtree],
    ) -> Result<(f64, Vec<ScoredSubtree>), SannError> {
        if subtrees.is_empty() {
            return Err(SannError::EmptySubtrees);
        }
        if subtrees.iter().any(|s| s.tokens.is_empty()) {
            return Err(SannError::EmptyTokens);
        }
        let ids: Vec<Vec<usize>> = subtrees.iter().map(|s| self.vocab.ids(&s.tokens)).collect();
        let fwd = self.forward(&ids);
        let scored = subtrees
            .iter()
            .zip(fwd.encodings)
            .zip(fwd.attentions)
            .map(|((s, h), a)| ScoredSubtree {
                subtree: s.clone(),
                encoding: h.to_vec(),
                attention: a,
            })
            .collect();
        Ok((nn::sigmoid(fwd.logit), scored))
    }

    /// Subtrees with attention at or above `threshold`, in source order. When
    /// none qualify the single highest-attention subtree is returned.
    pub fn high_attention_subtrees(
        &self,
        subtrees: &[NormalizedSubtree],
        threshold: f64,
    ) -> Result<Vec<ScoredSubtree>, SannError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(SannError::Threshold(threshold));
        }
        if subtrees.is_empty() {
            return Ok(Vec::new());
        }
        let (_, scored) = self.predict_correctness(subtrees)?;
        Ok(select_high_attention(scored, threshold))
    }

    /// Loss and gradient for one example.
    fn example_grad(&self, example: &[Vec<usize>], target: f64, grad: &mut SannParams) -> f64 {
        let p = &self.params;
        let fwd = self.forward(example);
        let loss = nn::bce_with_logit(fwd.logit, target);
        let dlogit = nn::sigmoid(fwd.logit) - target;
        grad.cls_weight.scaled_add(dlogit, &fwd.pooled);
        grad.cls_bias += dlogit;
        let dpooled = &p.cls_weight * dlogit;
        let total: f64 = fwd.attentions.iter().sum();
        for (i, ids) in example.iter().enumerate() {
            let h = &fwd.encodings[i];
            let a = fwd.attentions[i];
            // d pooled / d a_i = (h_i - pooled) / Σa
            let da = dpooled.dot(&(h - &fwd.pooled)) / total;
            let ds = da * a * (1.0 - a);
            grad.attn_weight.scaled_add(ds, h);
            grad.attn_bias += ds;
            let dh = &dpooled * (a / total) + &p.attn_weight * ds;
            let du = dh * &h.mapv(|v| 1.0 - v * v);
            grad.enc_weight += &du
                .view()
                .insert_axis(Axis(1))
                .dot(&fwd.means[i].view().insert_axis(Axis(0)));
            grad.enc_bias += &du;
            let dm = p.enc_weight.t().dot(&du) / ids.len() as f64;
            for &id in ids {
                let mut row = grad.embeddings.row_mut(id);
                row += &dm;
            }
        }
        loss
    }

    /// Mean loss and gradient over a batch of `(subtree ids, label)` pairs.
    pub fn batch_loss_and_grad(&self, batch: &[(&[Vec<usize>], bool)]) -> (f64, SannParams) {
        let mut grad = self.params.zeros_like();
        let mut loss = 0.0;
        for (ex, label) in batch {
            loss += self.example_grad(ex, if *label { 1.0 } else { 0.0 }, &mut grad);
        }
        let n = batch.len() as f64;
        for g in grad.values_mut() {
            *g /= n;
        }
        (loss / n, grad)
    }

    pub fn batch_loss(&self, batch: &[(&[Vec<usize>], bool)]) -> f64 {
        batch
            .iter()
            .map(|(ex, label)| {
                nn::bce_with_logit(self.forward(ex).logit, if *label { 1.0 } else { 0.0 })
            })
            .sum::<f64>()
            / batch.len() as f64
    }

    fn accuracy(&self, data: &[(Vec<Vec<usize>>, bool)]) -> f64 {
        if data.is_empty() {
            return f64::NAN;
        }
        let hits = data
            .iter()
            .filter(|(ex, label)| (self.forward(ex).logit >= 0.0) == *label)
            .count();
        hits as f64 / data.len() as f64
    }

    pub fn checksum(&self) -> String {
        nn::checksum(self.params.values())
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let p = &self.params;
        let (v, e) = p.embeddings.dim();
        let d = p.enc_bias.len();
        TensorFile {
            model: MODEL_KIND.into(),
            meta: serde_json::to_value(&self.hyper).expect("hyperparams serialize"),
            vocab: self.vocab.tokens().to_vec(),
            tensors: vec![
                Tensor::from_f64("embeddings", &[v, e], p.embeddings.iter()),
                Tensor::from_f64("enc_weight", &[d, e], p.enc_weight.iter()),
                Tensor::from_f64("enc_bias", &[d], p.enc_bias.iter()),
                Tensor::from_f64("attn_weight", &[d], p.attn_weight.iter()),
                Tensor::from_f64("attn_bias", &[1], [p.attn_bias].iter()),
                Tensor::from_f64("cls_weight", &[d], p.cls_weight.iter()),
                Tensor::from_f64("cls_bias", &[1], [p.cls_bias].iter()),
            ],
        }
    }

    pub fn from_tensor_file(file: &TensorFile) -> Result<Self, SannError> {
        file.expect_model(MODEL_KIND)?;
        let hyper: SannHyperParams =
            serde_json::from_value(file.meta.clone()).map_err(ArtifactError::Header)?;
        let vocab = Vocab::from_list(file.vocab.clone());
        let (v, e, d) = (vocab.len(), hyper.d_emb, hyper.d_enc);
        let mat = |name: &str, r: usize, c: usize| -> Result<Array2<f64>, SannError> {
            let t = file.tensor(name, &[r, c])?;
            Ok(Array2::from_shape_vec((r, c), t.to_f64()).expect("shape checked"))
        };
        let vec = |name: &str, n: usize| -> Result<Array1<f64>, SannError> {
            Ok(Array1::from(file.tensor(name, &[n])?.to_f64()))
        };
        let params = SannParams {
            embeddings: mat("embeddings", v, e)?,
            enc_weight: mat("enc_weight", d, e)?,
            enc_bias: vec("enc_bias", d)?,
            attn_weight: vec("attn_weight", d)?,
            attn_bias: vec("attn_bias", 1)?[0],
            cls_weight: vec("cls_weight", d)?,
            cls_bias: vec("cls_bias", 1)?[0],
        };
        Ok(Self {
            vocab,
            params,
            hyper,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), SannError> {
        Ok(self.to_tensor_file().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, SannError> {
        Self::from_tensor_file(&TensorFile::load(path)?)
    }
}

/// Threshold selection with single-best fallback; output in source order.
pub fn select_high_attention(scored: Vec<ScoredSubtree>, threshold: f64) -> Vec<ScoredSubtree> {
    if scored.is_empty() {
        return scored;
    }
    let mut keep: Vec<ScoredSubtree> = if scored.iter().any(|s| s.attention >= threshold) {
        scored
            .into_iter()
            .filter(|s| s.attention >= threshold)
            .collect()
    } else {
        let best = scored.iter().enumerate().fold(0, |best, (i, s)| {
            if s.attention > scored[best].attention {
                i
            } else {
                best
            }
        });
        vec![scored.into_iter().nth(best).expect("index in range")]
    };
    keep.sort_by_key(|s| s.subtree.span.0);
    keep
}

/// Splits indices into (train, holdout) with a seeded shuffle.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5b11);
    idx.shuffle(&mut rng);
    let hold = ((n as f64) * fraction).round() as usize;
    let hold = hold.min(n.saturating_sub(1));
    let holdout = idx[..hold].to_vec();
    let train = idx[hold..].to_vec();
    (train, holdout)
}

/// Trains a model on `examples`, holding out `hyper.holdout_fraction` of them
/// for the accuracy report. Deterministic given `hyper.seed`.
pub fn train_sann(
    examples: &[LabeledExample],
    hyper: &SannHyperParams,
) -> Result<(SannModel, TrainReport), SannError> {
    if let Some(i) = examples
        .iter()
        .position(|e| e.subtrees.is_empty() || e.subtrees.iter().any(Vec::is_empty))
    {
        return Err(SannError::EmptyExample(i));
    }
    let positives = examples.iter().filter(|e| e.is_correct).count();
    if positives == 0 || positives == examples.len() {
        return Err(SannError::SingleClass);
    }
    let (train_idx, hold_idx) = holdout_split(examples.len(), hyper.holdout_fraction, hyper.seed);
    let vocab = Vocab::build(
        train_idx
            .iter()
            .flat_map(|&i| examples[i].subtrees.iter().flatten().map(String::as_str)),
    );
    let mut model = SannModel::new(vocab, hyper.clone());
    let encode = |idx: &[usize]| -> Vec<(Vec<Vec<usize>>, bool)> {
        idx.iter()
            .map(|&i| {
                let e = &examples[i];
                (
                    e.subtrees.iter().map(|t| model.vocab.ids(t)).collect(),
                    e.is_correct,
                )
            })
            .collect()
    };
    let train = encode(&train_idx);
    let holdout = encode(&hold_idx);

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut loss_trace = Vec::with_capacity(hyper.epochs);
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(hyper.batch_size.max(1)) {
            let batch: Vec<(&[Vec<usize>], bool)> = chunk
                .iter()
                .map(|&i| (train[i].0.as_slice(), train[i].1))
                .collect();
            let (loss, grad) = model.batch_loss_and_grad(&batch);
            epoch_loss += loss * chunk.len() as f64;
            model.params.add_scaled(-hyper.learning_rate, &grad);
        }
        loss_trace.push(epoch_loss / train.len() as f64);
    }
    // the in-memory model matches what a saved artifact reloads to
    nn::round_to_f32(model.params.values_mut());
    if !model.params.is_finite() {
        return Err(SannError::NonFinite);
    }
    let report = TrainReport {
        loss_trace,
        train_accuracy: model.accuracy(&train),
        holdout_accuracy: (!holdout.is_empty()).then(|| model.accuracy(&holdout)),
        train_size: train.len(),
        holdout_size: holdout.len(),
    };
    Ok((model, report))
}
