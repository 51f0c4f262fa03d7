//! Dynamic gating feature selection.
//!
//! Per-feature logits are relaxed with Gumbel-Softmax into a probability
//! vector `p`. The support is the smallest set of features whose mass
//! reaches [`SUPPORT_MASS`], admitted in descending-`p` order with ties
//! going to the lowest index. Inputs are multiplied by the resulting hard
//! mask, so unselected coordinates reach nothing downstream and receive an
//! exactly zero gradient.

use serde::{Deserialize, Serialize};

use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::gumbel::{gumbel_softmax, sample_gumbel, GumbelSample};

/// Cumulative probability the support must reach.
pub const SUPPORT_MASS: f64 = 0.5;

/// Value-level outcome of a selection. Immutable once computed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    pub tau: f64,
    /// Relaxed selection probabilities; sums to one.
    pub probabilities: Vec<f64>,
    /// Binary indicator of the support.
    pub mask: Vec<f64>,
    /// Selected indices in ascending order.
    pub support: Vec<usize>,
}

impl SelectionState {
    pub fn from_probabilities(probabilities: Vec<f64>, tau: f64) -> Self {
        let support = select_support(&probabilities);
        let mut mask = vec![0.0; probabilities.len()];
        for &i in &support {
            mask[i] = 1.0;
        }
        Self {
            tau,
            probabilities,
            mask,
            support,
        }
    }

    pub fn n_features(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_selected(&self, i: usize) -> bool {
        self.mask.get(i).is_some_and(|&m| m == 1.0)
    }

    /// Selected mass, summed in admission order.
    pub fn support_mass(&self) -> f64 {
        descending_order(&self.probabilities)
            .into_iter()
            .filter(|i| self.is_selected(*i))
            .map(|i| self.probabilities[i])
            .sum()
    }
}

/// A selection whose probabilities are still attached to the graph.
#[derive(Clone, Debug)]
pub struct Selection {
    pub state: SelectionState,
    pub p: Var,
}

/// Indices sorted by descending value, ties by ascending index.
pub fn descending_order(p: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    order
}

/// Smallest prefix of the descending order whose mass reaches
/// [`SUPPORT_MASS`], returned in ascending index order.
pub fn select_support(p: &[f64]) -> Vec<usize> {
    let mut support = Vec::new();
    let mut mass = 0.0;
    for i in descending_order(p) {
        support.push(i);
        mass += p[i];
        if mass >= SUPPORT_MASS {
            break;
        }
    }
    support.sort_unstable();
    support
}

/// Relaxes `log_pi` with `noise` at temperature `tau` and thresholds the
/// result into a support.
pub fn compute_selection(g: &mut Graph, log_pi: Var, tau: f64, noise: &GumbelSample) -> Result<Selection> {
    if g.shape(log_pi).first().copied().unwrap_or(0) == 0 {
        return Err(Error::Parameter("selection needs at least one feature".into()));
    }
    let p = gumbel_softmax(g, log_pi, noise, tau)?;
    let state = SelectionState::from_probabilities(g.value(p).data().to_vec(), tau);
    Ok(Selection { state, p })
}

/// Value-only selection. `seed = None` uses zero noise, which is the
/// deterministic inference-time selection `softmax(log_pi / tau)`.
pub fn selection_from_logits(log_pi: &[f64], tau: f64, seed: Option<u64>) -> Result<SelectionState> {
    let noise = match seed {
        Some(s) => sample_gumbel(&[log_pi.len()], s)?,
        None => GumbelSample::zeros(&[log_pi.len().max(1)]),
    };
    let mut g = Graph::new();
    let l = g.constant(Tensor::vector(log_pi.to_vec()));
    Ok(compute_selection(&mut g, l, tau, &noise)?.state)
}

fn check_last_dim(g: &Graph, x: Var, n: usize) -> Result<()> {
    match g.shape(x).last() {
        Some(&d) if d == n => Ok(()),
        _ => Err(Error::shape("mask", g.shape(x), &[n])),
    }
}

/// `x ⊙ m` with the mask held constant.
pub fn apply_mask(g: &mut Graph, x: Var, state: &SelectionState) -> Result<Var> {
    check_last_dim(g, x, state.n_features())?;
    let m = g.constant(Tensor::vector(state.mask.clone()));
    g.mul(x, m)
}

/// Hard mask forward, `p ⊙ m` backward: the value equals
/// [`apply_mask`] while `log_pi` receives gradient through the selected
/// coordinates.
pub fn straight_through_mask(g: &mut Graph, x: Var, sel: &Selection) -> Result<Var> {
    check_last_dim(g, x, sel.state.n_features())?;
    let m = g.constant(Tensor::vector(sel.state.mask.clone()));
    let soft = g.mul(sel.p, m)?;
    let st = g.straight_through(Tensor::vector(sel.state.mask.clone()), soft)?;
    g.mul(x, st)
}

/// First-order surrogate of [`straight_through_mask`]: the mask value is
/// `m + (p - anchor) ⊙ m`. At `p == anchor` its exact derivative equals the
/// straight-through gradient, which makes the latter checkable with finite
/// differences.
pub fn surrogate_mask(g: &mut Graph, x: Var, sel: &Selection, anchor: &[f64]) -> Result<Var> {
    check_last_dim(g, x, sel.state.n_features())?;
    if anchor.len() != sel.state.n_features() {
        return Err(Error::shape("surrogate_mask", &[anchor.len()], &[sel.state.n_features()]));
    }
    let m = g.constant(Tensor::vector(sel.state.mask.clone()));
    let a = g.constant(Tensor::vector(anchor.to_vec()));
    let delta = g.sub(sel.p, a)?;
    let delta = g.mul(delta, m)?;
    let mask = g.add(m, delta)?;
    g.mul(x, mask)
}

/// `alpha · (1 − H(p) / ln N)`: zero for uniform `p`, `alpha` for one-hot.
pub fn sparsity_penalty(g: &mut Graph, p: Var, alpha: f64) -> Var {
    let n = g.value(p).len();
    if n <= 1 {
        return g.constant(Tensor::scalar(alpha));
    }
    let h = g.entropy(p);
    let scaled = g.scale(h, -alpha / (n as f64).ln());
    g.add_scalar(scaled, alpha)
}

/// JSON export of a selected support.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportExport {
    pub support: Vec<usize>,
    pub probabilities: Vec<f64>,
    pub feature_names: Vec<String>,
}

impl SupportExport {
    pub fn new(state: &SelectionState, feature_names: &[String]) -> Self {
        Self {
            support: state.support.clone(),
            probabilities: state.probabilities.clone(),
            feature_names: feature_names.to_vec(),
        }
    }
}
