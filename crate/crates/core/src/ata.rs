//! Attentive transformer autoencoder.
//!
//! Tokens are features. The encoder turns every selected feature into a
//! token (its value times a per-feature value vector, plus a per-feature
//! identity embedding), runs self-attention restricted to the support,
//! mean-pools the tokens and maps the result to the latent `z_r`. The
//! decoder expands `z_r` into one token per feature using learned queries,
//! runs unmasked self-attention and reads every feature back out with its
//! own linear head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{fan_in_uniform, Bound, ParamStore};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtaConfig {
    pub n_features: usize,
    /// Dimension of `z_r`.
    pub latent_dim: usize,
    /// Token width inside the transformer layers.
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub ff_dim: usize,
}

impl AtaConfig {
    pub fn new(n_features: usize) -> Self {
        Self {
            n_features,
            latent_dim: 16,
            embed_dim: 16,
            n_heads: 4,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            ff_dim: 64,
        }
    }

    /// Per-head key dimension.
    pub fn d_k(&self) -> usize {
        self.embed_dim / self.n_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_features", self.n_features),
            ("latent_dim", self.latent_dim),
            ("embed_dim", self.embed_dim),
            ("n_heads", self.n_heads),
            ("n_encoder_layers", self.n_encoder_layers),
            ("n_decoder_layers", self.n_decoder_layers),
            ("ff_dim", self.ff_dim),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        Ok(())
    }
}

/// Latent, reconstruction and reconstruction loss of one pass.
#[derive(Clone, Copy, Debug)]
pub struct AtaOutput {
    pub z_r: Var,
    pub x_hat: Var,
    pub recon_loss: Var,
}

// ---- attention ----

/// Attention weights `softmax(Q Kᵀ / sqrt(d_k))` and output `weights · V`.
///
/// Accepts `[m×d_k], [n×d_k], [n×d_v]` or the same with a leading batch axis.
pub fn attention_with_weights(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let (qs, ks, vs) = (g.shape(q).to_vec(), g.shape(k).to_vec(), g.shape(v).to_vec());
    let nd = qs.len();
    let consistent = (nd == 2 || nd == 3)
        && ks.len() == nd
        && vs.len() == nd
        && qs[nd - 1] == ks[nd - 1]
        && ks[nd - 2] == vs[nd - 2]
        && (nd == 2 || (qs[0] == ks[0] && ks[0] == vs[0]));
    if !consistent {
        return Err(Error::shape("attention", &qs, &ks));
    }
    let scale = 1.0 / (qs[nd - 1] as f64).sqrt();
    let scores = if nd == 2 { g.matmul_nt(q, k)? } else { g.bmm_nt(q, k)? };
    let scores = g.scale(scores, scale);
    let weights = g.softmax(scores, nd - 1)?;
    let out = if nd == 2 { g.matmul(weights, v)? } else { g.bmm(weights, v)? };
    Ok((out, weights))
}

pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var> {
    Ok(attention_with_weights(g, q, k, v)?.0)
}

/// Attention over the tokens in `support` only. The output has one row per
/// support entry, in the order given.
pub fn masked_attention(g: &mut Graph, q: Var, k: Var, v: Var, support: &[usize]) -> Result<Var> {
    if support.is_empty() {
        return Err(Error::Selection("empty support".into()));
    }
    let axis = g.shape(q).len().checked_sub(2).ok_or_else(|| Error::shape("masked_attention", g.shape(q), &[]))?;
    let qs = g.gather(q, axis, support)?;
    let ks = g.gather(k, axis, support)?;
    let vs = g.gather(v, axis, support)?;
    attention(g, qs, ks, vs)
}

// ---- parameters ----

fn init_layer<R: Rng>(store: &mut ParamStore, rng: &mut R, prefix: &str, cfg: &AtaConfig) {
    let e = cfg.embed_dim;
    for w in ["wq", "wk", "wv", "wo"] {
        store.insert(format!("{prefix}.{w}"), fan_in_uniform(rng, &[e, e], e));
        store.insert(format!("{prefix}.b{}", &w[1..]), Tensor::zeros(&[e]));
    }
    store.insert(format!("{prefix}.ln1.g"), Tensor::filled(&[e], 1.0));
    store.insert(format!("{prefix}.ln1.b"), Tensor::zeros(&[e]));
    store.insert(format!("{prefix}.ff1.w"), fan_in_uniform(rng, &[cfg.ff_dim, e], e));
    store.insert(format!("{prefix}.ff1.b"), Tensor::zeros(&[cfg.ff_dim]));
    store.insert(format!("{prefix}.ff2.w"), fan_in_uniform(rng, &[e, cfg.ff_dim], cfg.ff_dim));
    store.insert(format!("{prefix}.ff2.b"), Tensor::zeros(&[e]));
    store.insert(format!("{prefix}.ln2.g"), Tensor::filled(&[e], 1.0));
    store.insert(format!("{prefix}.ln2.b"), Tensor::zeros(&[e]));
}

/// Adds freshly initialised encoder and decoder parameters under `ata.`.
pub fn init_params<R: Rng>(store: &mut ParamStore, rng: &mut R, cfg: &AtaConfig) {
    let (n, e, d) = (cfg.n_features, cfg.embed_dim, cfg.latent_dim);
    store.insert("ata.enc.value", fan_in_uniform(rng, &[n, e], 1));
    store.insert("ata.enc.embed", fan_in_uniform(rng, &[n, e], e));
    for l in 0..cfg.n_encoder_layers {
        init_layer(store, rng, &format!("ata.enc.{l}"), cfg);
    }
    store.insert("ata.enc.out.w", fan_in_uniform(rng, &[d, e], e));
    store.insert("ata.enc.out.b", Tensor::zeros(&[d]));

    store.insert("ata.dec.in.w", fan_in_uniform(rng, &[e, d], d));
    store.insert("ata.dec.in.b", Tensor::zeros(&[e]));
    store.insert("ata.dec.query", fan_in_uniform(rng, &[n, e], e));
    for l in 0..cfg.n_decoder_layers {
        init_layer(store, rng, &format!("ata.dec.{l}"), cfg);
    }
    store.insert("ata.dec.head.w", fan_in_uniform(rng, &[n, e], e));
    store.insert("ata.dec.head.b", Tensor::zeros(&[n]));
}

// ---- transformer blocks ----

fn split_heads(g: &mut Graph, x: Var, heads: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (b, t, e) = (s[0], s[1], s[2]);
    let x = g.reshape(x, &[b, t, heads, e / heads])?;
    let x = g.permute(x, &[0, 2, 1, 3])?;
    g.reshape(x, &[b * heads, t, e / heads])
}

fn merge_heads(g: &mut Graph, x: Var, batch: usize, heads: usize) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (t, dk) = (s[1], s[2]);
    let x = g.reshape(x, &[batch, heads, t, dk])?;
    let x = g.permute(x, &[0, 2, 1, 3])?;
    g.reshape(x, &[batch, t, heads * dk])
}

/// Multi-head self-attention over the token axis of `h[B×T×E]`.
fn self_attention(g: &mut Graph, p: &Bound, prefix: &str, h: Var, heads: usize) -> Result<Var> {
    let batch = g.shape(h)[0];
    let proj = |g: &mut Graph, w: &str| -> Result<Var> {
        let y = g.linear(h, p.var(&format!("{prefix}.w{w}"))?, Some(p.var(&format!("{prefix}.b{w}"))?))?;
        split_heads(g, y, heads)
    };
    let q = proj(g, "q")?;
    let k = proj(g, "k")?;
    let v = proj(g, "v")?;
    let o = attention(g, q, k, v)?;
    let o = merge_heads(g, o, batch, heads)?;
    g.linear(o, p.var(&format!("{prefix}.wo"))?, Some(p.var(&format!("{prefix}.bo"))?))
}

fn norm_affine(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let n = g.layer_norm(x, LN_EPS);
    let s = g.mul(n, p.var(&format!("{name}.g"))?)?;
    g.add(s, p.var(&format!("{name}.b"))?)
}

/// Post-norm transformer layer: attention and feed-forward sublayers, each
/// with a residual connection followed by layer normalisation.
fn transformer_layer(g: &mut Graph, p: &Bound, prefix: &str, h: Var, heads: usize) -> Result<Var> {
    let a = self_attention(g, p, prefix, h, heads)?;
    let h = g.add(h, a)?;
    let h = norm_affine(g, p, &format!("{prefix}.ln1"), h)?;
    let f = g.linear(h, p.var(&format!("{prefix}.ff1.w"))?, Some(p.var(&format!("{prefix}.ff1.b"))?))?;
    let f = g.relu(f);
    let f = g.linear(f, p.var(&format!("{prefix}.ff2.w"))?, Some(p.var(&format!("{prefix}.ff2.b"))?))?;
    let h = g.add(h, f)?;
    norm_affine(g, p, &format!("{prefix}.ln2"), h)
}

fn as_batch(g: &mut Graph, x: Var) -> Result<(Var, bool)> {
    match g.shape(x).len() {
        1 => {
            let n = g.shape(x)[0];
            Ok((g.reshape(x, &[1, n])?, true))
        }
        2 => Ok((x, false)),
        _ => Err(Error::shape("ata", g.shape(x), &[])),
    }
}

fn unbatch(g: &mut Graph, x: Var, single: bool) -> Result<Var> {
    if single {
        let n = g.shape(x)[1];
        g.reshape(x, &[n])
    } else {
        Ok(x)
    }
}

/// Encodes masked inputs `[B×N]` (or `[N]`) into `z_r` `[B×d]` (or `[d]`).
///
/// Only the columns in `support` are read, so coordinates outside it have
/// no influence on the output.
pub fn encode(g: &mut Graph, p: &Bound, cfg: &AtaConfig, x_masked: Var, support: &[usize]) -> Result<Var> {
    if support.is_empty() {
        return Err(Error::Selection("empty support".into()));
    }
    let (x, single) = as_batch(g, x_masked)?;
    if g.shape(x)[1] != cfg.n_features {
        return Err(Error::shape("encode", g.shape(x), &[cfg.n_features]));
    }
    let e = cfg.embed_dim;
    let xs = g.gather(x, 1, support)?;
    let xs = g.expand(xs, 2, e)?;
    let value = g.gather(p.var("ata.enc.value")?, 0, support)?;
    let embed = g.gather(p.var("ata.enc.embed")?, 0, support)?;
    let tokens = g.mul(xs, value)?;
    let mut h = g.add(tokens, embed)?;
    for l in 0..cfg.n_encoder_layers {
        h = transformer_layer(g, p, &format!("ata.enc.{l}"), h, cfg.n_heads)?;
    }
    let pooled = g.mean_axis(h, 1)?;
    let z = g.linear(pooled, p.var("ata.enc.out.w")?, Some(p.var("ata.enc.out.b")?))?;
    unbatch(g, z, single)
}

/// Decodes `z_r` into a reconstruction over all `N` features.
pub fn decode(g: &mut Graph, p: &Bound, cfg: &AtaConfig, z_r: Var) -> Result<Var> {
    let (z, single) = as_batch(g, z_r)?;
    if g.shape(z)[1] != cfg.latent_dim {
        return Err(Error::shape("decode", g.shape(z), &[cfg.latent_dim]));
    }
    let t = g.linear(z, p.var("ata.dec.in.w")?, Some(p.var("ata.dec.in.b")?))?;
    let t = g.expand(t, 1, cfg.n_features)?;
    let mut h = g.add(t, p.var("ata.dec.query")?)?;
    for l in 0..cfg.n_decoder_layers {
        h = transformer_layer(g, p, &format!("ata.dec.{l}"), h, cfg.n_heads)?;
    }
    let y = g.mul(h, p.var("ata.dec.head.w")?)?;
    let y = g.sum_axis(y, 2)?;
    let y = g.add(y, p.var("ata.dec.head.b")?)?;
    unbatch(g, y, single)
}

/// Frobenius norm of `target − x_hat`.
pub fn reconstruction_loss(g: &mut Graph, target: Var, x_hat: Var) -> Result<Var> {
    if g.shape(target) != g.shape(x_hat) {
        return Err(Error::shape("reconstruction_loss", g.shape(target), g.shape(x_hat)));
    }
    let d = g.sub(target, x_hat)?;
    Ok(g.frobenius_norm(d))
}

/// Encode, decode and score the reconstruction on the support coordinates.
///
/// `target` is the masked input the decoder should reproduce. It usually has
/// the same value as `x_masked` but may carry a different gradient path.
pub fn forward(
    g: &mut Graph,
    p: &Bound,
    cfg: &AtaConfig,
    x_masked: Var,
    target: Var,
    mask: &[f64],
    support: &[usize],
) -> Result<AtaOutput> {
    let z_r = encode(g, p, cfg, x_masked, support)?;
    let x_hat = decode(g, p, cfg, z_r)?;
    let m = g.constant(Tensor::vector(mask.to_vec()));
    let masked_hat = g.mul(x_hat, m)?;
    let recon_loss = reconstruction_loss(g, target, masked_hat)?;
    Ok(AtaOutput { z_r, x_hat, recon_loss })
}
