//! Gumbel noise and the temperature-controlled Gumbel-Softmax relaxation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Uniform draws are clamped to `(UNIFORM_EPS, 1 - UNIFORM_EPS)` before the
/// double-log transform.
pub const UNIFORM_EPS: f64 = 1e-12;

/// Maps a uniform draw to a standard Gumbel variate, `-ln(-ln u)`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(UNIFORM_EPS, 1.0 - UNIFORM_EPS);
    -(-u.ln()).ln()
}

/// I.i.d. Gumbel(0, 1) noise together with the seed that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct GumbelSample {
    pub noise: Tensor,
    pub seed: Option<u64>,
}

impl GumbelSample {
    /// All-zero noise, used for deterministic inference.
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            noise: Tensor::zeros(shape),
            seed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.noise.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noise.is_empty()
    }
}

pub fn sample_gumbel(shape: &[usize], seed: u64) -> Result<GumbelSample> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::Parameter(format!("cannot sample noise of shape {shape:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| gumbel_from_uniform(rng.random::<f64>())).collect();
    Ok(GumbelSample {
        noise: Tensor::new(shape.to_vec(), data)?,
        seed: Some(seed),
    })
}

/// `softmax((log_pi + g) / tau)` over the single axis of `log_pi`.
///
/// The noise enters as a constant, so gradients reach `log_pi` only.
pub fn gumbel_softmax(g: &mut Graph, log_pi: Var, noise: &GumbelSample, tau: f64) -> Result<Var> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Parameter(format!("temperature must be positive, got {tau}")));
    }
    if g.shape(log_pi).len() != 1 {
        return Err(Error::shape("gumbel_softmax", g.shape(log_pi), noise.noise.shape()));
    }
    if !g.value(log_pi).all_finite() {
        return Err(Error::Parameter("log_pi must be finite".into()));
    }
    let n = g.constant(noise.noise.clone());
    let perturbed = g.add(log_pi, n)?;
    if g.shape(perturbed) != noise.noise.shape() {
        return Err(Error::shape("gumbel_softmax", g.shape(log_pi), noise.noise.shape()));
    }
    let scaled = g.scale(perturbed, 1.0 / tau);
    g.softmax(scaled, 0)
}

/// Index maximising `log_pi + g`; ties go to the lowest index.
pub fn hard_limit_argmax(log_pi: &[f64], noise: &GumbelSample) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, (l, n)) in log_pi.iter().zip(noise.noise.data()).enumerate() {
        let v = l + n;
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// First index of the maximum of `values`.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}
