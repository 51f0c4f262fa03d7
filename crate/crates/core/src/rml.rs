//! Representation matching between the selected inputs and the autoencoder
//! latent.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{fan_in_uniform, Bound, ParamStore};

/// How the alignment loss is derived from the row-wise cosine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    /// `1 − cos`, minimised at perfect alignment.
    #[default]
    OneMinusCosine,
    /// Raw cosine similarity.
    Cosine,
}

/// Alignment loss and the number of rows whose cosine was undefined.
#[derive(Clone, Copy, Debug)]
pub struct Alignment {
    pub loss: Var,
    pub degenerate_rows: usize,
}

/// Adds `rml.*` parameters for `n_features` inputs and latent size `d`.
pub fn init_params<R: Rng>(store: &mut ParamStore, rng: &mut R, n_features: usize, d: usize) {
    store.insert("rml.proj", fan_in_uniform(rng, &[d, n_features], n_features));
    store.insert("rml.add.w", fan_in_uniform(rng, &[d, 2 * d], 2 * d));
    store.insert("rml.add.b", Tensor::zeros(&[d]));
    store.insert("rml.sub.w", fan_in_uniform(rng, &[d, d], d));
    store.insert("rml.sub.b", Tensor::zeros(&[d]));
}

/// `z_s = x_masked · Pᵀ`.
pub fn project_zs(g: &mut Graph, p: &Bound, x_masked: Var) -> Result<Var> {
    g.linear(x_masked, p.var("rml.proj")?, None)
}

fn same_shape(g: &Graph, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(op, g.shape(a), g.shape(b)));
    }
    Ok(())
}

/// Gated sum: `σ(W₁[z_s; z_r] + b₁) ⊙ (z_s + z_r)`.
pub fn r_add(g: &mut Graph, p: &Bound, z_s: Var, z_r: Var) -> Result<Var> {
    same_shape(g, "r_add", z_s, z_r)?;
    let axis = g.shape(z_s).len() - 1;
    let cat = g.concat(&[z_s, z_r], axis)?;
    let gate = g.linear(cat, p.var("rml.add.w")?, Some(p.var("rml.add.b")?))?;
    let gate = g.sigmoid(gate);
    let sum = g.add(z_s, z_r)?;
    g.mul(gate, sum)
}

/// Difference channel: `ReLU(W₂(z_r − z_s) + b₂)`.
pub fn r_sub(g: &mut Graph, p: &Bound, z_s: Var, z_r: Var) -> Result<Var> {
    same_shape(g, "r_sub", z_s, z_r)?;
    let diff = g.sub(z_r, z_s)?;
    let y = g.linear(diff, p.var("rml.sub.w")?, Some(p.var("rml.sub.b")?))?;
    Ok(g.relu(y))
}

/// `[r_add; r_sub]` along the last axis.
pub fn final_representation(g: &mut Graph, p: &Bound, z_s: Var, z_r: Var) -> Result<Var> {
    let a = r_add(g, p, z_s, z_r)?;
    let s = r_sub(g, p, z_s, z_r)?;
    let axis = g.shape(a).len() - 1;
    g.concat(&[a, s], axis)
}

/// Row-averaged alignment loss. Rows where either side has (near) zero norm
/// count as cosine 0 and are reported.
pub fn align_loss(g: &mut Graph, z_s: Var, z_r: Var, mode: AlignMode) -> Result<Alignment> {
    same_shape(g, "align_loss", z_s, z_r)?;
    let (a, b) = if g.shape(z_s).len() == 1 {
        let d = g.shape(z_s)[0];
        (g.reshape(z_s, &[1, d])?, g.reshape(z_r, &[1, d])?)
    } else {
        (z_s, z_r)
    };
    let (cos, degenerate_rows) = g.row_cosine(a, b)?;
    if degenerate_rows > 0 {
        log::warn!("{degenerate_rows} row(s) with zero-norm representation in alignment loss");
    }
    let mean = g.mean(cos);
    let loss = match mode {
        AlignMode::OneMinusCosine => {
            let neg = g.neg(mean);
            g.add_scalar(neg, 1.0)
        }
        AlignMode::Cosine => mean,
    };
    Ok(Alignment { loss, degenerate_rows })
}
