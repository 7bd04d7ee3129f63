//! Variational autoencoder over context representations.
//!
//! Encoder: `h = tanh(W1 x + b1)`, `μ = Wμ h + bμ`, `log σ² = Wv h + bv`.
//! Decoder: `g = tanh(W3 z + b3)`, `x̂ = W4 g + b4`. The per-sample loss is
//! the negative ELBO `‖x̂ − x‖² + β·KL(N(μ, σ²) ‖ N(0, I))` with
//! `z = μ + σ ⊙ ε`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::DiscoveryError;
use crate::artifact::{ArtifactError, Tensor, TensorFile};
use crate::nn;

const MODEL_KIND: &str = "vae";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeHyperParams {
    pub d_z: usize,
    pub hidden: usize,
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for VaeHyperParams {
    fn default() -> Self {
        Self {
            d_z: 16,
            hidden: 64,
            beta: 1.0,
            learning_rate: 0.01,
            epochs: 50,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeParams {
    pub enc_w: Array2<f64>,
    pub enc_b: Array1<f64>,
    pub mu_w: Array2<f64>,
    pub mu_b: Array1<f64>,
    pub logvar_w: Array2<f64>,
    pub logvar_b: Array1<f64>,
    pub dec_w: Array2<f64>,
    pub dec_b: Array1<f64>,
    pub out_w: Array2<f64>,
    pub out_b: Array1<f64>,
}

impl VaeParams {
    pub fn init(d_in: usize, hidden: usize, d_z: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            enc_w: nn::xavier(hidden, d_in, &mut rng),
            enc_b: Array1::zeros(hidden),
            mu_w: nn::xavier(d_z, hidden, &mut rng),
            mu_b: Array1::zeros(d_z),
            logvar_w: nn::xavier(d_z, hidden, &mut rng) * 0.1,
            logvar_b: Array1::zeros(d_z),
            dec_w: nn::xavier(hidden, d_z, &mut rng),
            dec_b: Array1::zeros(hidden),
            out_w: nn::xavier(d_in, hidden, &mut rng),
            out_b: Array1::zeros(d_in),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<f64>| Array1::zeros(a.len());
        Self {
            enc_w: z2(&self.enc_w),
            enc_b: z1(&self.enc_b),
            mu_w: z2(&self.mu_w),
            mu_b: z1(&self.mu_b),
            logvar_w: z2(&self.logvar_w),
            logvar_b: z1(&self.logvar_b),
            dec_w: z2(&self.dec_w),
            dec_b: z1(&self.dec_b),
            out_w: z2(&self.out_w),
            out_b: z1(&self.out_b),
        }
    }

    /// Every scalar parameter in a fixed order.
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.enc_w
            .iter()
            .chain(self.enc_b.iter())
            .chain(self.mu_w.iter())
            .chain(self.mu_b.iter())
            .chain(self.logvar_w.iter())
            .chain(self.logvar_b.iter())
            .chain(self.dec_w.iter())
            .chain(self.dec_b.iter())
            .chain(self.out_w.iter())
            .chain(self.out_b.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.enc_w
            .iter_mut()
            .chain(self.enc_b.iter_mut())
            .chain(self.mu_w.iter_mut())
            .chain(self.mu_b.iter_mut())
            .chain(self.logvar_w.iter_mut())
            .chain(self.logvar_b.iter_mut())
            .chain(self.dec_w.iter_mut())
            .chain(self.dec_b.iter_mut())
            .chain(self.out_w.iter_mut())
            .chain(self.out_b.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.values().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_scaled(&mut self, alpha: f64, other: &Self) {
        for (p, g) in self.values_mut().zip(other.values()) {
            *p += alpha * g;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}

/// Loss terms for one sample or averaged over a set.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ElboTerms {
    pub recon: f64,
    pub kl: f64,
    /// `−(recon + β·kl)`.
    pub elbo: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeReport {
    /// Per-sample mean ELBO over the training inputs after each epoch,
    /// evaluated at the posterior mean.
    pub elbo_trace: Vec<f64>,
    pub recon_trace: Vec<f64>,
    pub kl_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub d_in: usize,
    pub params: VaeParams,
    pub hyper: VaeHyperParams,
}

struct Forward {
    h: Array1<f64>,
    mu: Array1<f64>,
    logvar: Array1<f64>,
    z: Array1<f64>,
    g: Array1<f64>,
    xhat: Array1<f64>,
}

/// `KL(N(μ, diag(exp(logvar))) ‖ N(0, I))`.
pub fn kl_to_standard_normal(mu: ArrayView1<f64>, logvar: ArrayView1<f64>) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar.iter())
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    a.view()
        .insert_axis(Axis(1))
        .dot(&b.view().insert_axis(Axis(0)))
}

impl VaeModel {
    pub fn new(d_in: usize, hyper: VaeHyperParams) -> Self {
        Self {
            d_in,
            params: VaeParams::init(d_in, hyper.hidden, hyper.d_z, hyper.seed),
            hyper,
        }
    }

    pub fn d_z(&self) -> usize {
        self.params.mu_b.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), DiscoveryError> {
        if x.len() != self.d_in {
            return Err(DiscoveryError::Dimension {
                expected: self.d_in,
                found: x.len(),
            });
        }
        Ok(())
    }

    fn forward(&self, x: ArrayView1<f64>, eps: ArrayView1<f64>) -> Forward {
        let p = &self.params;
        let h = (p.enc_w.dot(&x) + &p.enc_b).mapv(f64::tanh);
        let mu = p.mu_w.dot(&h) + &p.mu_b;
        let logvar = p.logvar_w.dot(&h) + &p.logvar_b;
        let z = &mu + &(logvar.mapv(|v| (0.5 * v).exp()) * eps);
        let g = (p.dec_w.dot(&z) + &p.dec_b).mapv(f64::tanh);
        let xhat = p.out_w.dot(&g) + &p.out_b;
        Forward {
            h,
            mu,
            logvar,
            z,
            g,
            xhat,
        }
    }

    fn terms(&self, x: ArrayView1<f64>, f: &Forward) -> ElboTerms {
        let recon = (&f.xhat - &x).mapv(|d| d * d).sum();
        let kl = kl_to_standard_normal(f.mu.view(), f.logvar.view());
        ElboTerms {
            recon,
            kl,
            elbo: -(recon + self.hyper.beta * kl),
        }
    }

    /// Posterior mean `μ(x)`.
    pub fn encode_latent(&self, x: &[f64]) -> Result<Vec<f64>, DiscoveryError> {
        self.check_dim(x)?;
        let p = &self.params;
        let h = (p.enc_w.dot(&ArrayView1::from(x)) + &p.enc_b).mapv(f64::tanh);
        Ok((p.mu_w.dot(&h) + &p.mu_b).to_vec())
    }

    /// ELBO terms of one sample for a fixed noise vector `eps`.
    pub fn sample_terms(&self, x: &[f64], eps: &[f64]) -> Result<ElboTerms, DiscoveryError> {
        self.check_dim(x)?;
        if eps.len() != self.d_z() {
            return Err(DiscoveryError::Dimension {
                expected: self.d_z(),
                found: eps.len(),
            });
        }
        let x = ArrayView1::from(x);
        Ok(self.terms(x, &self.forward(x, ArrayView1::from(eps))))
    }

    /// Per-sample mean ELBO terms over `inputs`, evaluated at the posterior
    /// mean (`ε = 0`).
    pub fn evaluate(&self, inputs: &[Vec<f64>]) -> Result<ElboTerms, DiscoveryError> {
        if inputs.is_empty() {
            return Err(DiscoveryError::EmptyInputs);
        }
        let zero = Array1::zeros(self.d_z());
        let mut acc = ElboTerms::default();
        for x in inputs {
            self.check_dim(x)?;
            let x = ArrayView1::from(x);
            let t = self.terms(x, &self.forward(x, zero.view()));
            acc.recon += t.recon;
            acc.kl += t.kl;
            acc.elbo += t.elbo;
        }
        let n = inputs.len() as f64;
        Ok(ElboTerms {
            recon: acc.recon / n,
            kl: acc.kl / n,
            elbo: acc.elbo / n,
        })
    }

    /// Adds the gradient of the per-sample loss `−ELBO` into `grad` and
    /// returns the loss.
    fn sample_grad(&self, x: ArrayView1<f64>, eps: ArrayView1<f64>, grad: &mut VaeParams) -> f64 {
        let p = &self.params;
        let beta = self.hyper.beta;
        let f = self.forward(x, eps);
        let t = self.terms(x, &f);
        let dxhat = (&f.xhat - &x) * 2.0;
        grad.out_w += &outer(&dxhat, &f.g);
        grad.out_b += &dxhat;
        let dg = p.out_w.t().dot(&dxhat) * f.g.mapv(|v| 1.0 - v * v);
        grad.dec_w += &outer(&dg, &f.z);
        grad.dec_b += &dg;
        let dz = p.dec_w.t().dot(&dg);
        let sigma = f.logvar.mapv(|v| (0.5 * v).exp());
        let dmu = &dz + &(&f.mu * beta);
        let dlogvar = &dz * &eps * &sigma * 0.5 + f.logvar.mapv(|v| 0.5 * beta * (v.exp() - 1.0));
        grad.mu_w += &outer(&dmu, &f.h);
        grad.mu_b += &dmu;
        grad.logvar_w += &outer(&dlogvar, &f.h);
        grad.logvar_b += &dlogvar;
        let dh = (p.mu_w.t().dot(&dmu) + p.logvar_w.t().dot(&dlogvar)) * f.h.mapv(|v| 1.0 - v * v);
        grad.enc_w += &outer(&dh, &x.to_owned());
        grad.enc_b += &dh;
        -t.elbo
    }

    /// Mean `−ELBO` and its gradient over a batch of `(x, ε)` pairs.
    pub fn batch_loss_and_grad(&self, batch: &[(&[f64], &[f64])]) -> (f64, VaeParams) {
        let mut grad = self.params.zeros_like();
        let mut loss = 0.0;
        for (x, eps) in batch {
            loss += self.sample_grad(ArrayView1::from(*x), ArrayView1::from(*eps), &mut grad);
        }
        let n = batch.len() as f64;
        for g in grad.values_mut() {
            *g /= n;
        }
        (loss / n, grad)
    }

    pub fn batch_loss(&self, batch: &[(&[f64], &[f64])]) -> f64 {
        batch
            .iter()
            .map(|(x, eps)| {
                let x = ArrayView1::from(*x);
                -self.terms(x, &self.forward(x, ArrayView1::from(*eps))).elbo
            })
            .sum::<f64>()
            / batch.len() as f64
    }

    pub fn checksum(&self) -> String {
        nn::checksum(self.params.values())
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let p = &self.params;
        let t2 =
            |name: &str, a: &Array2<f64>| Tensor::from_f64(name, &[a.nrows(), a.ncols()], a.iter());
        let t1 = |name: &str, a: &Array1<f64>| Tensor::from_f64(name, &[a.len()], a.iter());
        let mut meta = serde_json::to_value(&self.hyper).expect("hyperparams serialize");
        meta["d_in"] = self.d_in.into();
        TensorFile {
            model: MODEL_KIND.into(),
            meta,
            vocab: Vec::new(),
            tensors: vec![
                t2("enc_w", &p.enc_w),
                t1("enc_b", &p.enc_b),
                t2("mu_w", &p.mu_w),
                t1("mu_b", &p.mu_b),
                t2("logvar_w", &p.logvar_w),
                t1("logvar_b", &p.logvar_b),
                t2("dec_w", &p.dec_w),
                t1("dec_b", &p.dec_b),
                t2("out_w", &p.out_w),
                t1("out_b", &p.out_b),
            ],
        }
    }

    pub fn from_tensor_file(file: &TensorFile) -> Result<Self, DiscoveryError> {
        file.expect_model(MODEL_KIND)?;
        let hyper: VaeHyperParams =
            serde_json::from_value(file.meta.clone()).map_err(ArtifactError::Header)?;
        let d_in = file.meta["d_in"].as_u64().ok_or_else(|| {
            DiscoveryError::Artifact(ArtifactError::MissingTensor("meta.d_in".into()))
        })? as usize;
        let (h, z) = (hyper.hidden, hyper.d_z);
        let mat = |name: &str, r: usize, c: usize| -> Result<Array2<f64>, DiscoveryError> {
            let t = file.tensor(name, &[r, c])?;
            Ok(Array2::from_shape_vec((r, c), t.to_f64()).expect("shape checked"))
        };
        let vec = |name: &str, n: usize| -> Result<Array1<f64>, DiscoveryError> {
            Ok(Array1::from(file.tensor(name, &[n])?.to_f64()))
        };
        let params = VaeParams {
            enc_w: mat("enc_w", h, d_in)?,
            enc_b: vec("enc_b", h)?,
            mu_w: mat("mu_w", z, h)?,
            mu_b: vec("mu_b", z)?,
            logvar_w: mat("logvar_w", z, h)?,
            logvar_b: vec("logvar_b", z)?,
            dec_w: mat("dec_w", h, z)?,
            dec_b: vec("dec_b", h)?,
            out_w: mat("out_w", d_in, h)?,
            out_b: vec("out_b", d_in)?,
        };
        Ok(Self {
            d_in,
            params,
            hyper,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DiscoveryError> {
        Ok(self.to_tensor_file().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, DiscoveryError> {
        Self::from_tensor_file(&TensorFile::load(path)?)
    }
}

/// Trains a VAE by reparameterized mini-batch gradient descent. Noise is
/// drawn from a seeded generator, so training is deterministic given
/// `hyper.seed`.
pub fn train_vae(
    inputs: &[Vec<f64>],
    hyper: &VaeHyperParams,
) -> Result<(VaeModel, VaeReport), DiscoveryError> {
    let d_in = inputs.first().ok_or(DiscoveryError::EmptyInputs)?.len();
    if hyper.d_z < 2 {
        return Err(DiscoveryError::LatentDim(hyper.d_z));
    }
    for x in inputs {
        if x.len() != d_in {
            return Err(DiscoveryError::Dimension {
                expected: d_in,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(DiscoveryError::NonFiniteInput);
        }
    }
    let mut model = VaeModel::new(d_in, hyper.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut report = VaeReport {
        elbo_trace: Vec::with_capacity(hyper.epochs),
        recon_trace: Vec::with_capacity(hyper.epochs),
        kl_trace: Vec::with_capacity(hyper.epochs),
    };
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size.max(1)) {
            let noise: Vec<Vec<f64>> = chunk
                .iter()
                .map(|_| {
                    (0..hyper.d_z)
                        .map(|_| StandardNormal.sample(&mut rng))
                        .collect()
                })
                .collect();
            let batch: Vec<(&[f64], &[f64])> = chunk
                .iter()
                .zip(&noise)
                .map(|(&i, e)| (inputs[i].as_slice(), e.as_slice()))
                .collect();
            let (_, grad) = model.batch_loss_and_grad(&batch);
            model.params.add_scaled(-hyper.learning_rate, &grad);
        }
        if !model.params.is_finite() {
            return Err(DiscoveryError::NonFinite);
        }
        let t = model.evaluate(inputs)?;
        report.elbo_trace.push(t.elbo);
        report.recon_trace.push(t.recon);
        report.kl_trace.push(t.kl);
    }
    nn::round_to_f32(model.params.values_mut());
    Ok((model, report))
}
