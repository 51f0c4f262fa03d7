//! End-to-end model: selection, masked autoencoder, representation matching
//! and a classification head, with the composite loss and training loop.

mod checkpoint;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry, CHECKPOINT_VERSION};
pub use optim::Adam;
pub use train::{train, EpochReport, TrainingReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ata::{self, AtaConfig};
use crate::controller::PidConfig;
use crate::dgfs::{self, Selection, SelectionState};
use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::gumbel::GumbelSample;
use crate::params::{fan_in_uniform, Bound, ParamStore};
use crate::rml::{self, AlignMode, Alignment};

/// BCE clamps predictions to `[PROB_EPS, 1 - PROB_EPS]`.
pub const PROB_EPS: f64 = 1e-7;

pub const LOG_PI: &str = "dgfs.log_pi";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub ata: AtaConfig,
    /// Hidden width of the prediction head.
    pub head_hidden: usize,
}

impl ModelConfig {
    pub fn new(n_features: usize) -> Self {
        let ata = AtaConfig::new(n_features);
        Self { ata, head_hidden: 2 * ata.latent_dim }
    }

    pub fn n_features(&self) -> usize {
        self.ata.n_features
    }

    pub fn latent_dim(&self) -> usize {
        self.ata.latent_dim
    }

    pub fn validate(&self) -> Result<()> {
        self.ata.validate()?;
        if self.head_hidden == 0 {
            return Err(Error::Config("head_hidden must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the alignment loss.
    pub beta1: f64,
    /// Weight of the reconstruction loss.
    pub beta2: f64,
    /// Sparsity weight inside the prediction loss.
    pub alpha: f64,
    pub learning_rate: f64,
    /// Step size for the selection logits.
    pub selection_learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub pid: PidConfig,
    pub align_mode: AlignMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta1: 0.1,
            beta2: 0.1,
            alpha: 0.01,
            learning_rate: 1e-3,
            selection_learning_rate: 3e-2,
            batch_size: 64,
            epochs: 50,
            seed: 0,
            pid: PidConfig::default(),
            align_mode: AlignMode::OneMinusCosine,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2), ("alpha", self.alpha)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        for (name, v) in [("learning_rate", self.learning_rate), ("selection_learning_rate", self.selection_learning_rate)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.pid.validate()
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights { beta1: self.beta1, beta2: self.beta2, alpha: self.alpha, align_mode: self.align_mode }
    }
}

/// Coefficients of the composite loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub alpha: f64,
    pub align_mode: AlignMode,
}

impl Default for LossWeights {
    fn default() -> Self {
        TrainConfig::default().weights()
    }
}

/// Trainable state plus everything needed to run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    /// Temperature in effect after the last controller update.
    pub tau: f64,
    pub feature_names: Vec<String>,
    pub optimizer: Option<Adam>,
}

impl ModelParams {
    /// Fresh parameters. Selection logits start at zero.
    pub fn init(config: ModelConfig, tau: f64, feature_names: Vec<String>, seed: u64) -> Result<Self> {
        config.validate()?;
        let n = config.n_features();
        if feature_names.len() != n {
            return Err(Error::Config(format!("{} feature names for {n} features", feature_names.len())));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        store.insert(LOG_PI, Tensor::zeros(&[n]));
        ata::init_params(&mut store, &mut rng, &config.ata);
        let d = config.latent_dim();
        rml::init_params(&mut store, &mut rng, n, d);
        let h = config.head_hidden;
        store.insert("head.w1", fan_in_uniform(&mut rng, &[h, 2 * d], 2 * d));
        store.insert("head.b1", Tensor::zeros(&[h]));
        store.insert("head.w2", fan_in_uniform(&mut rng, &[1, h], h));
        store.insert("head.b2", Tensor::zeros(&[1]));
        Ok(Self { config, store, tau, feature_names, optimizer: None })
    }

    pub fn log_pi(&self) -> &[f64] {
        self.store.get(LOG_PI).map(Tensor::data).unwrap_or(&[])
    }

    /// Deterministic selection at the current temperature.
    pub fn selection(&self) -> Result<SelectionState> {
        dgfs::selection_from_logits(self.log_pi(), self.tau, None)
    }

    /// Softmax of the selection logits (unit temperature).
    pub fn importance(&self) -> Vec<f64> {
        let l = self.log_pi();
        let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub y_hat: Var,
    pub selection: Selection,
    pub x_masked: Var,
    pub z_s: Var,
    pub z_r: Var,
    pub x_hat: Var,
    pub recon_loss: Var,
}

/// Forward pass over a batch `x[B×N]`.
///
/// With `anchor = Some(p0)` the mask uses the first-order surrogate around
/// `p0` instead of the straight-through estimator; values agree at `p == p0`.
pub fn forward(
    g: &mut Graph,
    p: &Bound,
    cfg: &ModelConfig,
    x: Var,
    tau: f64,
    noise: &GumbelSample,
    anchor: Option<&[f64]>,
) -> Result<Forward> {
    let shape = g.shape(x);
    if shape.len() != 2 || shape[1] != cfg.n_features() {
        return Err(Error::shape("forward", shape, &[cfg.n_features()]));
    }
    if !g.value(x).all_finite() {
        return Err(Error::Numerical("input contains non-finite values".into()));
    }
    let selection = dgfs::compute_selection(g, p.var(LOG_PI)?, tau, noise)?;
    if selection.state.support.is_empty() {
        return Err(Error::Selection("empty support".into()));
    }
    let x_masked = match anchor {
        Some(a) => dgfs::surrogate_mask(g, x, &selection, a)?,
        None => dgfs::straight_through_mask(g, x, &selection)?,
    };
    // The reconstruction target uses the hard mask as a constant so that the
    // selection logits are trained only through what the encoder reads.
    let target = dgfs::apply_mask(g, x, &selection.state)?;
    let out = ata::forward(g, p, &cfg.ata, x_masked, target, &selection.state.mask, &selection.state.support)?;
    let z_s = rml::project_zs(g, p, x_masked)?;
    let r = rml::final_representation(g, p, z_s, out.z_r)?;
    let h = g.linear(r, p.var("head.w1")?, Some(p.var("head.b1")?))?;
    let h = g.relu(h);
    let logit = g.linear(h, p.var("head.w2")?, Some(p.var("head.b2")?))?;
    let b = g.shape(logit)[0];
    let logit = g.reshape(logit, &[b])?;
    let y_hat = g.sigmoid(logit);
    Ok(Forward { y_hat, selection, x_masked, z_s, z_r: out.z_r, x_hat: out.x_hat, recon_loss: out.recon_loss })
}

/// Mean binary cross-entropy with clamped predictions.
pub fn bce(g: &mut Graph, y: Var, y_hat: Var) -> Result<Var> {
    if g.shape(y) != g.shape(y_hat) {
        return Err(Error::shape("bce", g.shape(y), g.shape(y_hat)));
    }
    if g.value(y).data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Validation("labels must be 0 or 1".into()));
    }
    let q = g.clamp(y_hat, PROB_EPS, 1.0 - PROB_EPS);
    let log_q = g.log(q);
    let one_minus_q = g.neg(q);
    let one_minus_q = g.add_scalar(one_minus_q, 1.0);
    let log_1q = g.log(one_minus_q);
    let one_minus_y = g.neg(y);
    let one_minus_y = g.add_scalar(one_minus_y, 1.0);
    let a = g.mul(y, log_q)?;
    let b = g.mul(one_minus_y, log_1q)?;
    let s = g.add(a, b)?;
    let m = g.mean(s);
    Ok(g.neg(m))
}

/// Individual loss components and their weighted total.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub bce: Var,
    pub sparsity: Var,
    /// `bce + sparsity`.
    pub pred: Var,
    pub align: Var,
    pub recon: Var,
    pub total: Var,
    pub degenerate_rows: usize,
}

/// `L_pred + β1·L_align + β2·L_recon`, where `L_pred` is BCE plus the
/// sparsity term.
pub fn total_loss(g: &mut Graph, fwd: &Forward, y: Var, w: &LossWeights) -> Result<LossTerms> {
    let bce = bce(g, y, fwd.y_hat)?;
    let sparsity = dgfs::sparsity_penalty(g, fwd.selection.p, w.alpha);
    let pred = g.add(bce, sparsity)?;
    let Alignment { loss: align, degenerate_rows } = rml::align_loss(g, fwd.z_s, fwd.z_r, w.align_mode)?;
    let a = g.scale(align, w.beta1);
    let r = g.scale(fwd.recon_loss, w.beta2);
    let total = g.add(pred, a)?;
    let total = g.add(total, r)?;
    Ok(LossTerms { bce, sparsity, pred, align, recon: fwd.recon_loss, total, degenerate_rows })
}

/// Inference output for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub selection: SelectionState,
}

/// Latents and reconstruction for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub z_s: Tensor,
    pub z_r: Tensor,
    pub x_hat: Tensor,
}

const INFER_CHUNK: usize = 512;

fn infer<F: FnMut(&Graph, &Forward)>(params: &ModelParams, x: &Tensor, mut f: F) -> Result<SelectionState> {
    let n = params.config.n_features();
    if x.ndim() != 2 || x.shape()[1] != n {
        return Err(Error::shape("predict", x.shape(), &[n]));
    }
    let noise = GumbelSample::zeros(&[n]);
    let mut state = None;
    for rows in x.data().chunks(INFER_CHUNK * n) {
        let mut g = Graph::new();
        let p = params.store.bind(&mut g, false);
        let xv = g.constant(Tensor::new(vec![rows.len() / n, n], rows.to_vec())?);
        let fwd = forward(&mut g, &p, &params.config, xv, params.tau, &noise, None)?;
        f(&g, &fwd);
        state.get_or_insert(fwd.selection.state);
    }
    state.ok_or_else(|| Error::Validation("no samples".into()))
}

/// Deterministic prediction with zero Gumbel noise.
pub fn predict(params: &ModelParams, x: &Tensor) -> Result<Prediction> {
    let mut probabilities = Vec::with_capacity(x.shape().first().copied().unwrap_or(0));
    let selection = infer(params, x, |g, fwd| probabilities.extend_from_slice(g.value(fwd.y_hat).data()))?;
    Ok(Prediction { probabilities, selection })
}

/// Deterministic `z_s`, `z_r` and `x_hat` for every row of `x`.
pub fn embed(params: &ModelParams, x: &Tensor) -> Result<Embedding> {
    let (mut zs, mut zr, mut xh) = (Vec::new(), Vec::new(), Vec::new());
    infer(params, x, |g, fwd| {
        zs.extend_from_slice(g.value(fwd.z_s).data());
        zr.extend_from_slice(g.value(fwd.z_r).data());
        xh.extend_from_slice(g.value(fwd.x_hat).data());
    })?;
    let b = x.shape()[0];
    let d = params.config.latent_dim();
    Ok(Embedding {
        z_s: Tensor::new(vec![b, d], zs)?,
        z_r: Tensor::new(vec![b, d], zr)?,
        x_hat: Tensor::new(vec![b, params.config.n_features()], xh)?,
    })
}
