//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any fails. Pass a substring as the first
//! argument to run only matching criteria.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use deepselective::analysis::{self, AnalysisOptions};
use deepselective::ata::{self, AtaConfig};
use deepselective::controller::{PidConfig, PidGains, PidState};
use deepselective::data::{generate_synthetic, Dataset, Split, SyntheticSpec};
use deepselective::diff::{check_gradients, Graph, Tensor, Var};
use deepselective::gumbel::{argmax, gumbel_softmax, hard_limit_argmax, sample_gumbel};
use deepselective::model::{self, LossWeights, ModelConfig, ModelParams, TrainConfig, LOG_PI};
use deepselective::params::{Bound, ParamStore};
use deepselective::rml::{self, AlignMode};
use deepselective::{dgfs, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<String, String>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
fn off_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = r.random_range(0.2..2.0);
            if r.random::<bool>() { v } else { -v }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond { Ok(()) } else { Err(msg()) }
}

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        ata: AtaConfig { n_features: 6, latent_dim: 4, embed_dim: 4, n_heads: 1, n_encoder_layers: 1, n_decoder_layers: 1, ff_dim: 8 },
        head_hidden: 5,
    }
}

fn tiny_params(seed: u64) -> ModelParams {
    let names = (0..6).map(|i| format!("f{i}")).collect();
    let mut p = ModelParams::init(tiny_model_config(), 1.0, names, seed).unwrap();
    let mut r = rng(seed ^ 0xabcd);
    for v in p.store.get_mut(LOG_PI).unwrap().data_mut() {
        *v = r.random_range(-1.5..1.5);
    }
    p
}

type Scalar = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

/// Weighted sum so that every output element gets a distinct cotangent.
fn weighted(g: &mut Graph, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = g.constant(Tensor::new(shape, (0..n).map(|i| ((i as f64) * 0.7 + 0.3).sin()).collect())?);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn op_cases(r: &mut ChaCha8Rng) -> Vec<(&'static str, Scalar, Vec<Tensor>)> {
    let mut v: Vec<(&'static str, Scalar, Vec<Tensor>)> = Vec::new();
    macro_rules! case {
        ($name:expr, $pts:expr, |$g:ident, $x:ident| $body:expr) => {
            v.push(($name, Box::new(move |$g: &mut Graph, $x: &[Var]| -> Result<Var> { let y = $body; weighted($g, y) }), $pts));
        };
    }
    case!("add", vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4], -1.0, 1.0)], |g, x| g.add(x[0], x[1])?);
    case!("sub", vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)], |g, x| g.sub(x[0], x[1])?);
    case!("mul", vec![uniform(r, &[2, 3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)], |g, x| g.mul(x[0], x[1])?);
    case!("div", vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], 0.5, 2.0)], |g, x| g.div(x[0], x[1])?);
    case!("scale", vec![uniform(r, &[5], -1.0, 1.0)], |g, x| g.scale(x[0], -1.7));
    case!("neg", vec![uniform(r, &[5], -1.0, 1.0)], |g, x| g.neg(x[0]));
    case!("add_scalar", vec![uniform(r, &[5], -1.0, 1.0)], |g, x| g.add_scalar(x[0], 0.4));
    case!("sigmoid", vec![uniform(r, &[6], -3.0, 3.0)], |g, x| g.sigmoid(x[0]));
    case!("relu", vec![off_zero(r, &[6])], |g, x| g.relu(x[0]));
    case!("tanh", vec![uniform(r, &[6], -2.0, 2.0)], |g, x| g.tanh(x[0]));
    case!("exp", vec![uniform(r, &[6], -2.0, 2.0)], |g, x| g.exp(x[0]));
    case!("log", vec![uniform(r, &[6], 0.3, 3.0)], |g, x| g.log(x[0]));
    case!("sqrt", vec![uniform(r, &[6], 0.3, 3.0)], |g, x| g.sqrt(x[0]));
    case!("square", vec![uniform(r, &[6], -2.0, 2.0)], |g, x| g.square(x[0]));
    case!("clamp", vec![off_zero(r, &[8])], |g, x| g.clamp(x[0], -0.1, 0.1));
    case!("matmul", vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 2], -1.0, 1.0)], |g, x| g.matmul(x[0], x[1])?);
    case!("matmul_nt", vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[2, 4], -1.0, 1.0)], |g, x| g.matmul_nt(x[0], x[1])?);
    case!("bmm", vec![uniform(r, &[2, 3, 4], -1.0, 1.0), uniform(r, &[2, 4, 2], -1.0, 1.0)], |g, x| g.bmm(x[0], x[1])?);
    case!("bmm_nt", vec![uniform(r, &[2, 3, 4], -1.0, 1.0), uniform(r, &[2, 2, 4], -1.0, 1.0)], |g, x| g.bmm_nt(x[0], x[1])?);
    case!(
        "linear",
        vec![uniform(r, &[2, 3, 4], -1.0, 1.0), uniform(r, &[5, 4], -1.0, 1.0), uniform(r, &[5], -1.0, 1.0)],
        |g, x| g.linear(x[0], x[1], Some(x[2]))?
    );
    case!("softmax", vec![uniform(r, &[3, 5], -2.0, 2.0)], |g, x| g.softmax(x[0], 1)?);
    case!("softmax_axis0", vec![uniform(r, &[3, 5], -2.0, 2.0)], |g, x| g.softmax(x[0], 0)?);
    case!("layer_norm", vec![uniform(r, &[3, 5], -2.0, 2.0)], |g, x| g.layer_norm(x[0], 1e-5));
    case!("sum", vec![uniform(r, &[3, 5], -1.0, 1.0)], |g, x| g.sum(x[0]));
    case!("mean", vec![uniform(r, &[3, 5], -1.0, 1.0)], |g, x| g.mean(x[0]));
    case!("sum_axis", vec![uniform(r, &[2, 3, 4], -1.0, 1.0)], |g, x| g.sum_axis(x[0], 1)?);
    case!("mean_axis", vec![uniform(r, &[2, 3, 4], -1.0, 1.0)], |g, x| g.mean_axis(x[0], 2)?);
    case!("l2_norm", vec![uniform(r, &[3, 5], -1.0, 1.0)], |g, x| g.l2_norm(x[0]));
    case!("frobenius_norm", vec![uniform(r, &[3, 5], -1.0, 1.0)], |g, x| g.frobenius_norm(x[0]));
    case!("entropy", vec![uniform(r, &[6], 0.05, 1.0)], |g, x| g.entropy(x[0]));
    case!(
        "row_cosine",
        vec![uniform(r, &[4, 3], -1.0, 1.0), uniform(r, &[4, 3], -1.0, 1.0)],
        |g, x| g.row_cosine(x[0], x[1])?.0
    );
    case!("reshape", vec![uniform(r, &[2, 6], -1.0, 1.0)], |g, x| g.reshape(x[0], &[3, 4])?);
    case!("permute", vec![uniform(r, &[2, 3, 4], -1.0, 1.0)], |g, x| g.permute(x[0], &[2, 0, 1])?);
    case!("transpose", vec![uniform(r, &[3, 4], -1.0, 1.0)], |g, x| g.transpose(x[0])?);
    case!("gather", vec![uniform(r, &[3, 5], -1.0, 1.0)], |g, x| g.gather(x[0], 1, &[4, 0, 2, 2])?);
    case!(
        "concat",
        vec![uniform(r, &[3, 2], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)],
        |g, x| g.concat(&[x[0], x[1]], 1)?
    );
    case!("expand", vec![uniform(r, &[3, 4], -1.0, 1.0)], |g, x| g.expand(x[0], 1, 5)?);
    // Module-level differentiable operations.
    let noise = sample_gumbel(&[6], 77).unwrap();
    case!("gumbel_softmax", vec![uniform(r, &[6], -1.0, 1.0)], |g, x| gumbel_softmax(g, x[0], &noise, 0.6)?);
    case!("sparsity_penalty", vec![uniform(r, &[6], -1.0, 1.0)], |g, x| {
        let p = g.softmax(x[0], 0)?;
        dgfs::sparsity_penalty(g, p, 0.3)
    });
    case!(
        "attention",
        vec![uniform(r, &[2, 3, 4], -1.0, 1.0), uniform(r, &[2, 5, 4], -1.0, 1.0), uniform(r, &[2, 5, 3], -1.0, 1.0)],
        |g, x| ata::attention(g, x[0], x[1], x[2])?
    );
    case!(
        "masked_attention",
        vec![uniform(r, &[6, 4], -1.0, 1.0), uniform(r, &[6, 4], -1.0, 1.0), uniform(r, &[6, 3], -1.0, 1.0)],
        |g, x| ata::masked_attention(g, x[0], x[1], x[2], &[0, 2, 5])?
    );
    case!(
        "bce",
        vec![uniform(r, &[5], 0.1, 0.9)],
        |g, x| {
            let y = g.constant(Tensor::vector(vec![1.0, 0.0, 0.0, 1.0, 1.0]));
            model::bce(g, y, x[0])?
        }
    );
    for mode in [AlignMode::OneMinusCosine, AlignMode::Cosine] {
        case!(
            if mode == AlignMode::Cosine { "align_loss_cosine" } else { "align_loss" },
            vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[3, 4], -1.0, 1.0)],
            |g, x| rml::align_loss(g, x[0], x[1], mode)?.loss
        );
    }
    v
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst: (f64, &str) = (0.0, "");
    let cases = op_cases(&mut r);
    let n_ops = cases.len();
    for (name, f, pts) in cases {
        let rep = check_gradients(|g, v| f(g, v), &pts).map_err(|e| format!("{name}: {e}"))?;
        if rep.worst() > worst.0 {
            worst = (rep.worst(), name);
        }
    }

    // Parameterised modules: every parameter and the input.
    let params = tiny_params(3);
    let mut composite = |label: &'static str, body: &dyn Fn(&mut Graph, &Bound, Var) -> Result<Var>| -> std::result::Result<(), String> {
        let x = uniform(&mut r, &[3, 6], -2.0, 2.0);
        let mut pts = vec![x];
        pts.extend(params.store.tensors().iter().cloned());
        let rep = check_gradients(
            |g, v| {
                let b = Bound::from_vars(&params.store, v[1..].to_vec());
                body(g, &b, v[0])
            },
            &pts,
        )
        .map_err(|e| format!("{label}: {e}"))?;
        if rep.worst() > worst.0 {
            worst = (rep.worst(), label);
        }
        Ok(())
    };
    let cfg = tiny_model_config();
    let state = dgfs::selection_from_logits(params.log_pi(), params.tau, Some(5)).unwrap();
    composite("ata_forward", &|g, b, x| {
        let xm = dgfs::apply_mask(g, x, &state)?;
        let out = ata::forward(g, b, &cfg.ata, xm, xm, &state.mask, &state.support)?;
        let z = weighted(g, out.z_r)?;
        g.add(out.recon_loss, z)
    })?;
    composite("rml", &|g, b, x| {
        let zs = rml::project_zs(g, b, x)?;
        let zr = g.tanh(zs);
        let zr = g.scale(zr, 0.8);
        let rep = rml::final_representation(g, b, zs, zr)?;
        weighted(g, rep)
    })?;
    let noise = sample_gumbel(&[6], 13).unwrap();
    let anchor = dgfs::selection_from_logits(params.log_pi(), params.tau, Some(13)).unwrap();
    let w = LossWeights { beta1: 0.4, beta2: 0.3, alpha: 0.2, align_mode: AlignMode::OneMinusCosine };
    composite("full_loss", &|g, b, x| {
        let fwd = model::forward(g, b, &cfg, x, params.tau, &noise, Some(&anchor.probabilities))?;
        let y = g.constant(Tensor::vector(vec![1.0, 0.0, 1.0]));
        Ok(model::total_loss(g, &fwd, y, &w)?.total)
    })?;
    let elapsed = start.elapsed();
    ensure(worst.0 < 1e-4, || format!("worst relative error {:.3e} in {}", worst.0, worst.1))?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!("{} ops + 3 composites, worst rel err {:.2e} ({}), {:.1}s", n_ops, worst.0, worst.1, elapsed.as_secs_f64()))
}

fn criterion_2() -> Outcome {
    let cfg = tiny_model_config();
    let mut r = rng(2);
    let mut checked = 0usize;
    let mut max_leak: f64 = 0.0;
    for i in 0..100u64 {
        let params = tiny_params(100 + i);
        let x = uniform(&mut r, &[4, 6], -2.0, 2.0);
        let noise = sample_gumbel(&[6], 1000 + i).unwrap();

        // ATA path alone, with the straight-through mask.
        let mut g = Graph::new();
        let b = params.store.bind(&mut g, true);
        let xv = g.leaf(x.clone());
        let sel = dgfs::compute_selection(&mut g, b.var(LOG_PI).unwrap(), params.tau, &noise).unwrap();
        let xm = dgfs::straight_through_mask(&mut g, xv, &sel).unwrap();
        let target = dgfs::apply_mask(&mut g, xv, &sel.state).unwrap();
        let out = ata::forward(&mut g, &b, &cfg.ata, xm, target, &sel.state.mask, &sel.state.support).unwrap();
        let z = weighted(&mut g, out.z_r).unwrap();
        let loss = g.add(out.recon_loss, z).unwrap();
        g.backward(loss).unwrap();
        let ga = g.grad_or_zeros(xv);
        let support_a = sel.state.support.clone();

        // Full model and loss.
        let mut g = Graph::new();
        let b = params.store.bind(&mut g, true);
        let xv = g.leaf(x.clone());
        let fwd = model::forward(&mut g, &b, &cfg, xv, params.tau, &noise, None).unwrap();
        let y = g.constant(Tensor::vector(vec![1.0, 0.0, 0.0, 1.0]));
        let t = model::total_loss(&mut g, &fwd, y, &LossWeights { alpha: 0.1, ..Default::default() }).unwrap();
        g.backward(t.total).unwrap();
        let gm = g.grad_or_zeros(xv);
        ensure(fwd.selection.state.support == support_a, || "support differs between paths".into())?;

        for (grad, path) in [(&ga, "ata"), (&gm, "model")] {
            for row in 0..4 {
                for j in (0..6).filter(|j| !support_a.contains(j)) {
                    let v = grad.data()[row * 6 + j].abs();
                    max_leak = max_leak.max(v);
                    ensure(v <= 1e-12, || format!("instance {i} {path}: dL/dx[{row},{j}] = {v:e}"))?;
                    checked += 1;
                }
            }
        }
    }
    ensure(checked > 0, || "no unselected coordinates were drawn".into())?;
    Ok(format!("100 instances, {checked} unselected gradients, max |grad| {max_leak:e}"))
}

fn criterion_3() -> Outcome {
    let mut r = rng(3);
    let mut worst_sum: f64 = 0.0;
    for trial in 0..1000u64 {
        let d = r.random_range(2..=20);
        let log_pi: Vec<f64> = (0..d).map(|_| r.random_range(-3.0..3.0)).collect();
        let noise = sample_gumbel(&[d], trial).unwrap();
        let mut g = Graph::new();
        let l = g.constant(Tensor::vector(log_pi.clone()));
        let z = gumbel_softmax(&mut g, l, &noise, 0.005).unwrap();
        let z = g.value(z).data().to_vec();
        let s: f64 = z.iter().sum();
        worst_sum = worst_sum.max((s - 1.0).abs());
        ensure((s - 1.0).abs() <= 1e-12, || format!("trial {trial}: sum {s}"))?;
        // Independent hard limit: argmax of log_pi + g computed here.
        let perturbed: Vec<f64> = log_pi.iter().zip(noise.noise.data()).map(|(a, b)| a + b).collect();
        let hard = perturbed.iter().enumerate().fold(0, |b, (i, v)| if *v > perturbed[b] { i } else { b });
        ensure(argmax(&z) == hard && hard == hard_limit_argmax(&log_pi, &noise), || format!("trial {trial}: argmax mismatch"))?;
    }
    Ok(format!("1000/1000 argmax agree, max |sum - 1| {worst_sum:e}"))
}

/// Exhaustive search: smallest subsets with mass >= 0.5; among them the
/// largest mass, then the lexicographically smallest index list.
fn support_oracle(p: &[f64]) -> Vec<usize> {
    let n = p.len();
    let mut best: Option<(usize, f64, Vec<usize>)> = None;
    for bits in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| bits & (1 << i) != 0).collect();
        let mut vals: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
        vals.sort_by(|a, b| b.total_cmp(a));
        let mass: f64 = vals.iter().sum();
        if mass < 0.5 {
            continue;
        }
        let better = match &best {
            None => true,
            Some((k, m, b)) => idx.len() < *k || (idx.len() == *k && (mass > *m || (mass == *m && idx < *b))),
        };
        if better {
            best = Some((idx.len(), mass, idx));
        }
    }
    best.unwrap().2
}

fn criterion_4() -> Outcome {
    let mut r = rng(4);
    let mut with_ties = 0;
    for case in 0..1000 {
        let n = r.random_range(1..=12);
        let p: Vec<f64> = if case % 2 == 0 {
            let raw: Vec<f64> = (0..n).map(|_| r.random::<f64>().powi(3)).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        } else {
            // Dyadic weights: exact sums and frequent ties.
            let mut counts: Vec<u32> = (0..n).map(|_| r.random_range(0..4)).collect();
            if counts.iter().all(|&c| c == 0) {
                counts[0] = 1;
            }
            let total: u32 = counts.iter().sum();
            let scale = total.next_power_of_two();
            counts[0] += scale - total;
            let unique: HashSet<u32> = counts.iter().copied().collect();
            if unique.len() < counts.len() {
                with_ties += 1;
            }
            counts.iter().map(|&c| c as f64 / scale as f64).collect()
        };
        let got = dgfs::select_support(&p);
        let want = support_oracle(&p);
        ensure(got == want, || format!("case {case}: p={p:?} got {got:?} want {want:?}"))?;
    }
    Ok(format!("1000/1000 match exhaustive search ({with_ties} with tied values)"))
}

fn criterion_5() -> Outcome {
    let gains = PidGains { kp: 0.05, ki: 0.001, kd: 0.01 };
    let tau0 = 1.0;
    let sequences: Vec<(&str, Vec<f64>)> = vec![
        ("constant", vec![0.4; 100]),
        ("decaying", (0..100).map(|t| 0.8 * (-(t as f64) / 20.0).exp()).collect()),
        ("oscillating", (0..100).map(|t| 0.5 + 0.3 * (t as f64 / 5.0).sin()).collect()),
    ];
    let mut worst: f64 = 0.0;
    for (name, e) in &sequences {
        let mut pid = PidState::new(PidConfig { tau0, gains, tau_min: 1e-9, tau_max: 1e9 }).unwrap();
        // Closed form of the unclamped recurrence with e_{-1} = 0:
        // tau_t = tau0 + kp Σe + ki ΣΣe + kd e_t.
        let (mut s1, mut s2) = (0.0, 0.0);
        for (t, &et) in e.iter().enumerate() {
            pid.update_tau(et).unwrap();
            s1 += et;
            s2 += s1;
            let expect = tau0 + gains.kp * s1 + gains.ki * s2 + gains.kd * et;
            let got = pid.history[t].tau_unclamped;
            worst = worst.max((got - expect).abs());
            ensure((got - expect).abs() <= 1e-12, || format!("{name} t={t}: {got} vs {expect}"))?;
        }
    }
    // Clamped run: pre-clamp value follows the step recurrence from the clamped tau.
    let cfg = PidConfig { tau0: 1.0, gains: PidGains { kp: 0.5, ki: 0.05, kd: 0.1 }, tau_min: 0.1, tau_max: 5.0 };
    let mut pid = PidState::new(cfg).unwrap();
    let (mut tau, mut integral, mut prev) = (1.0f64, 0.0, 0.0);
    for t in 0..100 {
        let et = 2.0 * ((t as f64) / 7.0).sin();
        pid.update_tau(et).unwrap();
        integral += et;
        let raw = tau + 0.5 * et + 0.05 * integral + 0.1 * (et - prev);
        prev = et;
        tau = raw.clamp(0.1, 5.0);
        ensure((pid.history[t].tau_unclamped - raw).abs() <= 1e-12 && pid.tau == tau, || format!("clamped t={t}"))?;
    }
    Ok(format!("3 sequences x 100 steps, max deviation {worst:e}; clamped run consistent"))
}

fn criterion_6() -> Outcome {
    let mut r = rng(6);
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let d = r.random_range(2..10);
        let mut store = ParamStore::new();
        rml::init_params(&mut store, &mut rng(600 + i), 3, d);
        let z = uniform(&mut r, &[2, d], -2.0, 2.0);
        let c = r.random_range(0.01..100.0);
        let mut g = Graph::new();
        let b = store.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let sub = rml::r_sub(&mut g, &b, zv, zv).unwrap();
        let zero = g.value(sub).data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let neg = g.neg(zv);
        let other = g.constant(uniform(&mut r, &[2, d], -2.0, 2.0));
        let scaled = g.scale(zv, c);
        let scaled_other = g.scale(other, c * 0.37 + 0.5);
        let l_same = rml::align_loss(&mut g, zv, zv, AlignMode::OneMinusCosine).unwrap().loss;
        let l_opp = rml::align_loss(&mut g, zv, neg, AlignMode::OneMinusCosine).unwrap().loss;
        let l_ab = rml::align_loss(&mut g, zv, other, AlignMode::OneMinusCosine).unwrap().loss;
        let l_scaled = rml::align_loss(&mut g, scaled, scaled_other, AlignMode::OneMinusCosine).unwrap().loss;
        let devs = [
            zero,
            g.value(l_same).item().abs(),
            (g.value(l_opp).item() - 2.0).abs(),
            (g.value(l_ab).item() - g.value(l_scaled).item()).abs(),
        ];
        for (k, dv) in devs.iter().enumerate() {
            worst = worst.max(*dv);
            ensure(*dv <= 1e-12, || format!("instance {i} identity {k}: deviation {dv:e}"))?;
        }
    }
    Ok(format!("100 instances, max deviation {worst:e}"))
}

fn brute_auroc(y: &[f64], s: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..y.len() {
        for j in 0..y.len() {
            if y[i] == 1.0 && y[j] == 0.0 {
                den += 1.0;
                num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
            }
        }
    }
    num / den
}

/// (precision, recall) at every distinct threshold, highest first.
fn pr_points(y: &[f64], s: &[f64]) -> Vec<(f64, f64)> {
    let mut th: Vec<f64> = s.to_vec();
    th.sort_by(|a, b| b.total_cmp(a));
    th.dedup();
    let pos = y.iter().filter(|&&v| v == 1.0).count() as f64;
    th.iter()
        .map(|&t| {
            let pred: Vec<usize> = (0..y.len()).filter(|&i| s[i] >= t).collect();
            let tp = pred.iter().filter(|&&i| y[i] == 1.0).count() as f64;
            (tp / pred.len() as f64, tp / pos)
        })
        .collect()
}

fn brute_auprc(y: &[f64], s: &[f64]) -> f64 {
    let mut prev_r = 0.0;
    let mut ap = 0.0;
    for (p, r) in pr_points(y, s) {
        ap += (r - prev_r) * p;
        prev_r = r;
    }
    ap
}

fn brute_min_se_pplus(y: &[f64], s: &[f64]) -> f64 {
    // A threshold of +inf predicts nothing and scores 0; -inf coincides with
    // the lowest distinct score.
    pr_points(y, s).into_iter().map(|(p, r)| p.min(r)).fold(0.0, f64::max)
}

fn criterion_7() -> Outcome {
    let mut r = rng(7);
    let mut worst: f64 = 0.0;
    for case in 0..500 {
        let n = r.random_range(2..=12);
        let mut y: Vec<f64> = (0..n).map(|_| r.random_range(0..2) as f64).collect();
        y[0] = 1.0;
        y[1] = 0.0;
        let coarse = case % 2 == 0;
        let s: Vec<f64> = (0..n).map(|_| if coarse { r.random_range(0..4) as f64 / 4.0 } else { r.random::<f64>() }).collect();
        let pairs = [
            (analysis::auroc(&y, &s).unwrap(), brute_auroc(&y, &s), "auroc"),
            (analysis::auprc(&y, &s).unwrap(), brute_auprc(&y, &s), "auprc"),
            (analysis::min_se_pplus(&y, &s).unwrap(), brute_min_se_pplus(&y, &s), "min_se_pplus"),
        ];
        for (got, want, name) in pairs {
            worst = worst.max((got - want).abs());
            ensure((got - want).abs() <= 1e-12, || format!("case {case} {name}: {got} vs {want} (y={y:?}, s={s:?})"))?;
        }
    }
    Ok(format!("500 cases x 3 metrics, max deviation {worst:e}"))
}

fn criterion_8() -> Outcome {
    let mut r = rng(8);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let (kx, ky) = (r.random_range(2..=6), r.random_range(2..=6));
        let counts: Vec<Vec<usize>> = (0..kx).map(|_| (0..ky).map(|_| r.random_range(0..12)).collect()).collect();
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for (a, row) in counts.iter().enumerate() {
            for (b, &c) in row.iter().enumerate() {
                for _ in 0..c {
                    xs.push(a as f64);
                    ys.push(b as f64);
                }
            }
        }
        let total = xs.len() as f64;
        if total == 0.0 {
            continue;
        }
        let px: Vec<f64> = counts.iter().map(|row| row.iter().sum::<usize>() as f64 / total).collect();
        let py: Vec<f64> = (0..ky).map(|b| counts.iter().map(|row| row[b]).sum::<usize>() as f64 / total).collect();
        let mut direct = 0.0;
        for a in 0..kx {
            for b in 0..ky {
                let pxy = counts[a][b] as f64 / total;
                if pxy > 0.0 {
                    direct += pxy * (pxy / (px[a] * py[b])).ln();
                }
            }
        }
        let est = analysis::mutual_information(&xs, &ys, 16).unwrap().value;
        worst = worst.max((est - direct).abs());
        ensure((est - direct).abs() <= 1e-9, || format!("case {case}: {est} vs {direct}"))?;
    }
    // Product table: exactly independent.
    let (cx, cy) = ([3usize, 1, 4], [2usize, 5]);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (a, &ca) in cx.iter().enumerate() {
        for (b, &cb) in cy.iter().enumerate() {
            for _ in 0..ca * cb {
                xs.push(a as f64);
                ys.push(b as f64);
            }
        }
    }
    let indep = analysis::mutual_information(&xs, &ys, 16).unwrap().value;
    ensure(indep.abs() <= 1e-12, || format!("independent joint gave {indep:e}"))?;
    Ok(format!("200 random joints, max deviation {worst:e}; independent joint {indep:e}"))
}

fn recovery_model_config() -> ModelConfig {
    let d = 16;
    ModelConfig {
        ata: AtaConfig { n_features: 64, latent_dim: d, embed_dim: d, n_heads: 2, n_encoder_layers: 1, n_decoder_layers: 1, ff_dim: 2 * d },
        head_hidden: 2 * d,
    }
}

fn recovery_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 40,
        batch_size: 64,
        learning_rate: 1e-3,
        selection_learning_rate: 0.03,
        alpha: 0.1,
        beta1: 0.1,
        beta2: 0.1,
        seed,
        ..Default::default()
    }
}

struct RecoveryRun {
    seed: u64,
    recalled: usize,
    support: Vec<usize>,
    auroc: f64,
    mi_gap: f64,
    ds: Dataset,
    secs: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn recovery_runs() -> std::result::Result<Vec<RecoveryRun>, String> {
    let mut runs = Vec::new();
    for seed in 0..5u64 {
        let t = Instant::now();
        let ds = generate_synthetic(&SyntheticSpec { seed, ..Default::default() }).map_err(|e| e.to_string())?;
        let (xtr, ytr) = ds.subset(Split::Train).map_err(|e| e.to_string())?;
        let (xte, yte) = ds.subset(Split::Test).map_err(|e| e.to_string())?;
        let (params, _) =
            model::train(&xtr, &ytr, &ds.feature_names, recovery_model_config(), &recovery_train_config(seed)).map_err(|e| e.to_string())?;
        let metrics = analysis::evaluate(&params, &xte, &yte, 0.5).map_err(|e| e.to_string())?;
        let opts = AnalysisOptions { informative: ds.informative.clone(), ..Default::default() };
        let report = analysis::analyze(&params, &xte, &yte, &opts).map_err(|e| e.to_string())?;
        let rec = report.recovery.ok_or("no recovery summary")?;
        let run = RecoveryRun {
            seed,
            recalled: rec.recovered.len(),
            support: report.support.clone(),
            auroc: metrics.auroc,
            mi_gap: rec.mean_mi_informative_zr - rec.mean_mi_nuisance_zr,
            ds,
            secs: t.elapsed().as_secs_f64(),
        };
        println!(
            "    seed {}: recall {}/8, |S| {}, test AUROC {:.4}, MI gap {:.4}, {:.0}s",
            run.seed, run.recalled, run.support.len(), run.auroc, run.mi_gap, run.secs
        );
        runs.push(run);
    }
    Ok(runs)
}

fn criterion_9(runs: &[RecoveryRun]) -> Outcome {
    let total: f64 = runs.iter().map(|r| r.secs).sum();
    let recall = median(runs.iter().map(|r| r.recalled as f64).collect());
    let auroc = median(runs.iter().map(|r| r.auroc).collect());
    let gap = median(runs.iter().map(|r| r.mi_gap).collect());
    let summary = format!("median recall {recall}/8, median AUROC {auroc:.4}, median MI gap {gap:.4}, {total:.0}s");
    ensure(recall >= 6.0 && auroc >= 0.90 && gap > 0.0 && total < 900.0, || summary.clone())?;
    Ok(summary)
}

fn criterion_10(runs: &[RecoveryRun]) -> Outcome {
    let mut worst_inf: f64 = 0.0;
    let mut worst_frac: f64 = 1.0;
    for run in runs {
        let inf = run.ds.informative.clone().unwrap();
        let sig =
            analysis::feature_significance(&run.ds.features, &run.ds.labels, &run.ds.feature_names, &run.support).map_err(|e| e.to_string())?;
        for &i in inf.iter().filter(|i| run.support.contains(i)) {
            worst_inf = worst_inf.max(sig[i].p);
            ensure(sig[i].p < 0.01, || format!("seed {}: informative {} has p = {:.3e}", run.seed, i, sig[i].p))?;
        }
        let nuis: Vec<_> = sig.iter().filter(|s| !inf.contains(&s.index)).collect();
        let frac = nuis.iter().filter(|s| s.p > 0.01).count() as f64 / nuis.len() as f64;
        worst_frac = worst_frac.min(frac);
        ensure(frac >= 0.9, || format!("seed {}: only {:.1}% nuisance with p > 0.01", run.seed, 100.0 * frac))?;
    }
    Ok(format!("max recovered-informative p {worst_inf:.2e}, min nuisance fraction p > 0.01 {:.1}%", 100.0 * worst_frac))
}

fn criterion_11() -> Outcome {
    let ds = generate_synthetic(&SyntheticSpec { n_features: 12, n_informative: 3, n_samples: 300, seed: 11, ..Default::default() })
        .map_err(|e| e.to_string())?;
    let (x, y) = ds.subset(Split::Train).map_err(|e| e.to_string())?;
    let mc = ModelConfig {
        ata: AtaConfig { n_features: 12, latent_dim: 4, embed_dim: 4, n_heads: 2, n_encoder_layers: 1, n_decoder_layers: 1, ff_dim: 8 },
        head_hidden: 8,
    };
    let cfg = TrainConfig { epochs: 4, batch_size: 32, seed: 99, ..Default::default() };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut artifacts = Vec::new();
    for run in 0..2 {
        let (params, report) = model::train(&x, &y, &ds.feature_names, mc, &cfg).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("run{run}.json"));
        model::save_checkpoint(&params, &path).map_err(|e| e.to_string())?;
        let json = std::fs::read(&path).map_err(|e| e.to_string())?;
        let bin = std::fs::read(path.with_extension("bin")).map_err(|e| e.to_string())?;
        // The manifest names its data file; compare with the name normalised.
        let json = String::from_utf8(json).unwrap().replace(&format!("run{run}.bin"), "run.bin");
        artifacts.push((report.to_json().map_err(|e| e.to_string())?, json, bin));
    }
    let (a, b) = (&artifacts[0], &artifacts[1]);
    ensure(a.0 == b.0, || "training reports differ".into())?;
    ensure(a.1 == b.1 && a.2 == b.2, || "checkpoints differ".into())?;
    Ok(format!("reports ({} B) and checkpoints ({} B values) bit-identical", a.0.len(), a.2.len()))
}

fn main() {
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |name: &str| filter.as_deref().is_none_or(|f| name.contains(f));
    let mut results: Vec<(String, Outcome)> = Vec::new();
    let mut run = |name: &str, f: &dyn Fn() -> Outcome| {
        if wanted(name) {
            let out = f();
            match &out {
                Ok(msg) => println!("PASS  {name}: {msg}"),
                Err(msg) => println!("FAIL  {name}: {msg}"),
            }
            results.push((name.to_string(), out));
        }
    };
    run("01 gradient suite", &criterion_1);
    run("02 no leakage", &criterion_2);
    run("03 gumbel-softmax limit", &criterion_3);
    run("04 support oracle", &criterion_4);
    run("05 pid exactness", &criterion_5);
    run("06 rml algebra", &criterion_6);
    run("07 metric oracles", &criterion_7);
    run("08 mi oracle", &criterion_8);
    if wanted("09 synthetic recovery") || wanted("10 t-test separation") {
        match recovery_runs() {
            Ok(runs) => {
                run("09 synthetic recovery", &|| criterion_9(&runs));
                run("10 t-test separation", &|| criterion_10(&runs));
            }
            Err(e) => {
                run("09 synthetic recovery", &|| Err(e.clone()));
                run("10 t-test separation", &|| Err(e.clone()));
            }
        }
    }
    run("11 determinism", &criterion_11);
    let failed = results.iter().filter(|(_, r)| r.is_err()).count();
    println!("acceptance: {} passed, {} failed", results.len() - failed, failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
