use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{forward, total_loss, Adam, ModelConfig, ModelParams, TrainConfig, LOG_PI};
use crate::controller::{error_signal, PidState, PidStep};
use crate::diff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::gumbel::sample_gumbel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub pred_loss: f64,
    pub align_loss: f64,
    pub recon_loss: f64,
    pub total: f64,
    /// Temperature after this epoch's controller update.
    pub tau: f64,
    /// Size of the deterministic support at `tau`.
    pub support_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub seed: u64,
    pub n_samples: usize,
    pub n_features: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epochs: Vec<EpochReport>,
    pub tau_trajectory: Vec<PidStep>,
    pub final_support: Vec<usize>,
    pub final_probabilities: Vec<f64>,
    /// Batches whose alignment loss met a zero-norm representation.
    pub degenerate_alignment_rows: usize,
}

impl TrainingReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// `epoch,error,tau_unclamped,tau`, starting with the initial temperature
    /// at epoch 0.
    pub fn tau_csv(&self) -> String {
        let mut s = String::from("epoch,error,tau_unclamped,tau\n");
        let tau0 = self.train.pid.tau0.clamp(self.train.pid.tau_min, self.train.pid.tau_max);
        let _ = writeln!(s, "0,,{tau0},{tau0}");
        for st in &self.tau_trajectory {
            let _ = writeln!(s, "{},{},{},{}", st.t + 1, st.error, st.tau_unclamped, st.tau);
        }
        s
    }

    pub fn write_tau_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.tau_csv())?;
        Ok(())
    }
}

fn check_inputs(x: &Tensor, y: &[f64], n_features: usize) -> Result<usize> {
    if x.ndim() != 2 || x.shape()[1] != n_features {
        return Err(Error::shape("train", x.shape(), &[n_features]));
    }
    let n = x.shape()[0];
    if y.len() != n {
        return Err(Error::Validation(format!("{} labels for {n} samples", y.len())));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Validation("labels must be 0 or 1".into()));
    }
    let positives = y.iter().filter(|&&v| v == 1.0).count();
    if positives == 0 || positives == n {
        return Err(Error::Validation("training data must contain both classes".into()));
    }
    if !x.all_finite() {
        return Err(Error::Validation("training features contain non-finite values".into()));
    }
    Ok(n)
}

/// Mini-batch Adam training with one temperature update per epoch.
pub fn train(
    x: &Tensor,
    y: &[f64],
    feature_names: &[String],
    model: ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainingReport)> {
    model.validate()?;
    cfg.validate()?;
    let n_features = model.n_features();
    let n = check_inputs(x, y, n_features)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pid = PidState::new(cfg.pid)?;
    let mut params = ModelParams::init(model, pid.tau, feature_names.to_vec(), rng.random())?;
    let mut adam = Adam::new(cfg.learning_rate, &params.store);
    adam.set_learning_rate(&params.store, LOG_PI, cfg.selection_learning_rate)?;
    let weights = cfg.weights();

    let mut order: Vec<usize> = (0..n).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut degenerate = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut pred, mut align, mut recon, mut total) = (0.0, 0.0, 0.0, 0.0);
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let mut xb = Vec::with_capacity(idx.len() * n_features);
            for &i in idx {
                xb.extend_from_slice(&x.data()[i * n_features..(i + 1) * n_features]);
            }
            let yb: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let noise = sample_gumbel(&[n_features], rng.random())?;

            let mut g = Graph::new();
            let bound = params.store.bind(&mut g, true);
            let xv = g.constant(Tensor::new(vec![idx.len(), n_features], xb)?);
            let yv = g.constant(Tensor::vector(yb));
            let fwd = forward(&mut g, &bound, &params.config, xv, pid.tau, &noise, None)?;
            let terms = total_loss(&mut g, &fwd, yv, &weights)?;
            let loss = g.value(terms.total).item();
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("loss became {loss} in epoch {epoch}")));
            }
            pred += g.value(terms.pred).item();
            align += g.value(terms.align).item();
            recon += g.value(terms.recon).item();
            total += loss;
            degenerate += terms.degenerate_rows;
            batches += 1;
            g.backward(terms.total)?;
            let grads = bound.gradients(&g);
            adam.step(&mut params.store, &grads)?;
        }
        let k = batches as f64;
        let (pred, align) = (pred / k, align / k);
        let tau = pid.update_tau(error_signal(pred, align))?;
        params.tau = tau;
        let support_size = params.selection()?.support.len();
        log::info!("epoch {epoch}: loss {:.5} tau {tau:.4} |S| {support_size}", total / k);
        epochs.push(EpochReport {
            epoch,
            pred_loss: pred,
            align_loss: align,
            recon_loss: recon / k,
            total: total / k,
            tau,
            support_size,
        });
    }

    let final_state = params.selection()?;
    params.optimizer = Some(adam);
    let report = TrainingReport {
        seed: cfg.seed,
        n_samples: n,
        n_features,
        model,
        train: *cfg,
        epochs,
        tau_trajectory: pid.history,
        final_support: final_state.support,
        final_probabilities: final_state.probabilities,
        degenerate_alignment_rows: degenerate,
    };
    Ok((params, report))
}
