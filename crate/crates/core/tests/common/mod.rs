//! Independent reference computations shared by the integration tests and
//! the acceptance runner.
#![allow(dead_code)]

use ivrl_core::agents::{Agent, AgentConfig, AgentVariant, DqnAgent, DqnLearner, Family, Hyper, SacLearner};
use ivrl_core::envs::Environment;
use ivrl_core::envs::{exact_q, ChainMdp};
use ivrl_core::nn::{loss_backward, MlpParams};
use ivrl_core::replay::{Action, MaskedTransition, Transition};
use ivrl_core::rng::{rng_for, streams};
use ivrl_core::uncertainty::VarPrediction;
use ivrl_core::weighting::{critic_loss, ivrl_loss, WeightScheme};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Plain nested-vector MLP evaluated one sample at a time.
#[derive(Debug, Clone)]
pub struct RefMlp {
    /// `(weights[out][in], bias[out])` per layer.
    pub layers: Vec<(Vec<Vec<f64>>, Vec<f64>)>,
}

impl RefMlp {
    pub fn from_params(p: &MlpParams) -> Self {
        let layers = (0..p.num_layers())
            .map(|l| {
                let w = p.weight(l).outer_iter().map(|r| r.to_vec()).collect();
                (w, p.bias(l).to_vec())
            })
            .collect();
        Self { layers }
    }

    /// Keeps only the listed output units of the last layer.
    pub fn select_outputs(&self, rows: &[usize]) -> Self {
        let mut out = self.clone();
        let (w, b) = out.layers.last_mut().unwrap();
        *w = rows.iter().map(|&r| w[r].clone()).collect();
        *b = rows.iter().map(|&r| b[r]).collect();
        out
    }

    /// Layer activations, input first and output last.
    pub fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let prev = acts.last().unwrap();
            let mut z = Vec::with_capacity(b.len());
            for (row, bias) in w.iter().zip(b) {
                let mut s = *bias;
                for (wi, xi) in row.iter().zip(prev) {
                    s += wi * xi;
                }
                z.push(if l == last { s } else { s.max(0.0) });
            }
            acts.push(z);
        }
        acts
    }

    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).pop().unwrap()
    }

    /// Parameter gradient (same shapes as `layers`) and input gradient.
    pub fn backward(&self, acts: &[Vec<f64>], d_out: &[f64]) -> (Vec<(Vec<Vec<f64>>, Vec<f64>)>, Vec<f64>) {
        let mut grads: Vec<(Vec<Vec<f64>>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|(w, b)| (vec![vec![0.0; w[0].len()]; w.len()], vec![0.0; b.len()]))
            .collect();
        let mut delta = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let input = &acts[l];
            let (w, _) = &self.layers[l];
            for o in 0..delta.len() {
                grads[l].1[o] += delta[o];
                for i in 0..input.len() {
                    grads[l].0[o][i] += delta[o] * input[i];
                }
            }
            let mut d_in = vec![0.0; input.len()];
            for o in 0..delta.len() {
                for i in 0..input.len() {
                    d_in[i] += w[o][i] * delta[o];
                }
            }
            if l > 0 {
                for i in 0..d_in.len() {
                    if input[i] <= 0.0 {
                        d_in[i] = 0.0;
                    }
                }
            }
            delta = d_in;
        }
        (grads, delta)
    }

    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for (w, b) in &mut self.layers {
            for row in w.iter_mut() {
                for x in row.iter_mut() {
                    *x = *it.next().unwrap();
                }
            }
            for x in b.iter_mut() {
                *x = *it.next().unwrap();
            }
        }
    }
}

pub fn flatten(layers: &[(Vec<Vec<f64>>, Vec<f64>)]) -> Vec<f64> {
    let mut v = Vec::new();
    for (w, b) in layers {
        for row in w {
            v.extend_from_slice(row);
        }
        v.extend_from_slice(b);
    }
    v
}

pub fn add_into(acc: &mut [(Vec<Vec<f64>>, Vec<f64>)], g: &[(Vec<Vec<f64>>, Vec<f64>)]) {
    for ((aw, ab), (gw, gb)) in acc.iter_mut().zip(g) {
        for (ar, gr) in aw.iter_mut().zip(gw) {
            for (a, x) in ar.iter_mut().zip(gr) {
                *a += x;
            }
        }
        for (a, x) in ab.iter_mut().zip(gb) {
            *a += x;
        }
    }
}

/// Textbook Adam with bias correction.
pub struct RefAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl RefAdam {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64) {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        self.t += 1;
        for i in 0..p.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = self.m[i] / (1.0 - b1.powi(self.t));
            let vh = self.v[i] / (1.0 - b2.powi(self.t));
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
}

fn soft(target: &mut RefMlp, source: &RefMlp, tau: f64) {
    let s = source.flat();
    let t: Vec<f64> = target
        .flat()
        .iter()
        .zip(&s)
        .map(|(t, s)| (1.0 - tau) * t + tau * s)
        .collect();
    target.set_flat(&t);
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Pins the variance head (output `row`) of a value net to the floor.
pub fn floor_variance_row(p: &mut MlpParams, row: usize) {
    let last = p.num_layers() - 1;
    let fan_in = p.widths()[last];
    p.weight_slice_mut(last)[row * fan_in..(row + 1) * fan_in].fill(0.0);
    p.bias_mut(last)[row] = -800.0;
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

// ---------------------------------------------------------------- gradients

pub struct GradCheck {
    pub nets: usize,
    pub max_rel_err: f64,
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Central finite differences (step 1e-5) against `loss_backward` for a
/// squared-error loss on randomized small nets. Draws whose pre-activations
/// sit within 1e-3 of a ReLU kink are redrawn, since the loss is not
/// differentiable there.
pub fn gradient_check(nets: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < nets {
        let depth = rng.gen_range(1..=3);
        let mut widths = vec![rng.gen_range(1..=4)];
        for _ in 1..depth {
            widths.push(rng.gen_range(2..=6));
        }
        widths.push(rng.gen_range(1..=3));
        let params = MlpParams::init_uniform(&widths, &mut rng).unwrap();
        let batch = rng.gen_range(1..=6);
        let x = Array2::from_shape_fn((batch, widths[0]), |_| rng.gen_range(-2.0..2.0));
        let y = Array2::from_shape_fn((batch, *widths.last().unwrap()), |_| rng.gen_range(-1.0..1.0));
        let reference = RefMlp::from_params(&params);
        let near_kink = x.outer_iter().any(|row| {
            let mut a = row.to_vec();
            for (w, b) in &reference.layers[..reference.layers.len() - 1] {
                let z: Vec<f64> = w
                    .iter()
                    .zip(b)
                    .map(|(r, bb)| bb + r.iter().zip(&a).map(|(p, q)| p * q).sum::<f64>())
                    .collect();
                if z.iter().any(|v| v.abs() < 1e-3) {
                    return true;
                }
                a = z.iter().map(|v| v.max(0.0)).collect();
            }
            false
        });
        if near_kink {
            continue;
        }
        let sq = |out: &Array2<f64>| {
            let r = out - &y;
            let n = out.nrows() as f64;
            (r.mapv(|v| v * v).sum() / n, r.mapv(|v| 2.0 * v / n))
        };
        let (_, grads) = loss_backward(&params, &x, sq).unwrap();
        let value = |p: &MlpParams| {
            let out = p.forward_batch(&x).unwrap();
            let r = out - &y;
            r.mapv(|v| v * v).sum() / x.nrows() as f64
        };
        let mut probe = params.clone();
        for i in 0..params.len() {
            let orig = probe.as_slice()[i];
            probe.as_mut_slice()[i] = orig + h;
            let up = value(&probe);
            probe.as_mut_slice()[i] = orig - h;
            let down = value(&probe);
            probe.as_mut_slice()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(grads.as_slice()[i], fd, 1e-6));
        }
        done += 1;
    }
    GradCheck {
        nets,
        max_rel_err: worst,
    }
}

// --------------------------------------------------------------- reductions

/// `ivrl_loss` with λ = 0 and equal target variances against the plain mean
/// squared error, over random batches. Returns the largest absolute gap.
pub fn ivrl_mse_gap(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let k = rng.gen_range(1..40);
        let mus = uniform_vec(&mut rng, k, -3.0, 3.0);
        let ys = uniform_vec(&mut rng, k, -3.0, 3.0);
        let var = rng.gen_range(1e-3..10.0);
        let xi = rng.gen_range(1e-3..5.0);
        let preds: Vec<VarPrediction> = mus.iter().map(|&m| VarPrediction::new(m, 1.0).unwrap()).collect();
        let got = ivrl_loss(&preds, &ys, &vec![var; k], 0.99, xi, 0.0).unwrap();
        let mse = mus.iter().zip(&ys).map(|(m, y)| (m - y) * (m - y)).sum::<f64>() / k as f64;
        worst = worst.max((got - mse).abs());
    }
    worst
}

fn random_batch(
    rng: &mut ChaCha8Rng,
    k: usize,
    ds: usize,
    action: impl Fn(&mut ChaCha8Rng) -> Action,
) -> Vec<MaskedTransition> {
    (0..k)
        .map(|i| MaskedTransition {
            s: uniform_vec(rng, ds, -1.0, 1.0),
            a: action(rng),
            r: rng.gen_range(-1.0..1.0),
            s_next: uniform_vec(rng, ds, -1.0, 1.0),
            done: i % 5 == 4,
            mask: vec![true],
        })
        .collect()
}

pub struct Reduction {
    /// Largest difference between library and reference parameters.
    pub gap: f64,
    /// Largest parameter change made by the reference (the smaller of actor
    /// and critic for SAC).
    pub moved: f64,
}

/// One DQN step computed sample by sample: target `r + γ max_a' Q̄(s', a')`,
/// mean squared TD error, Adam, soft target update.
fn reference_dqn_step(
    online: &mut RefMlp,
    target: &mut RefMlp,
    adam: &mut RefAdam,
    batch: &[MaskedTransition],
    hyper: &Hyper,
) {
    let k = batch.len() as f64;
    let mut acc: Vec<_> = online
        .backward(
            &online.forward(&batch[0].s),
            &vec![0.0; online.layers.last().unwrap().1.len()],
        )
        .0;
    for layer in acc.iter_mut() {
        layer.0.iter_mut().for_each(|r| r.fill(0.0));
        layer.1.fill(0.0);
    }
    for t in batch {
        let q_next = target.output(&t.s_next);
        let best = q_next.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let y = t.r + if t.done { 0.0 } else { hyper.gamma * best };
        let acts = online.forward(&t.s);
        let a = t.a.index().unwrap();
        let mut d = vec![0.0; acts.last().unwrap().len()];
        d[a] = 2.0 * (acts.last().unwrap()[a] - y) / k;
        add_into(&mut acc, &online.backward(&acts, &d).0);
    }
    let mut p = online.flat();
    adam.step(&mut p, &flatten(&acc), hyper.lr);
    online.set_flat(&p);
    soft(target, online, hyper.tau);
}

/// Runs `steps` updates of a one-member DQN-family learner (λ = 0, no prior,
/// variance heads pinned to the floor) next to the straight-line reference.
/// Returns the largest parameter difference over online and target nets.
pub fn dqn_reduction_gap(variant_name: &str, seed: u64, steps: usize) -> Reduction {
    let mut variant = AgentVariant::preset(variant_name).unwrap();
    assert_eq!(variant.family, Family::Dqn);
    variant.ensemble_size = 1;
    variant.lambda = 0.0;
    variant.delta_rpf = 0.0;
    variant.mask_prob = 1.0;
    let mut hyper = Hyper::defaults(Family::Dqn);
    hyper.hidden = vec![6, 5];
    hyper.lr = 0.01;
    hyper.gamma = 0.9;
    hyper.tau = 0.1;
    let (ds, na) = (3, 2);
    let mut learner = DqnLearner::new(variant.clone(), hyper.clone(), ds, na, seed).unwrap();
    let variance = variant.critic == ivrl_core::agents::CriticKind::Variance;
    if variance {
        for r in na..2 * na {
            floor_variance_row(&mut learner.ens.members[0].trainable, r);
            floor_variance_row(&mut learner.ens.targets[0], r);
        }
    }
    let mean_rows: Vec<usize> = (0..na).collect();
    let mut online = RefMlp::from_params(&learner.ens.members[0].trainable).select_outputs(&mean_rows);
    let mut target = RefMlp::from_params(&learner.ens.targets[0]).select_outputs(&mean_rows);
    let mut adam = RefAdam::new(online.flat().len());
    let start = online.flat();
    let var_rows_before = RefMlp::from_params(&learner.ens.members[0].trainable);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let batch = random_batch(&mut rng, 16, ds, |r| Action::Discrete(r.gen_range(0..na)));
        let refs: Vec<&MaskedTransition> = batch.iter().collect();
        learner.update(&refs).unwrap();
        reference_dqn_step(&mut online, &mut target, &mut adam, &batch, &hyper);
        let lib_online = RefMlp::from_params(&learner.ens.members[0].trainable).select_outputs(&mean_rows);
        let lib_target = RefMlp::from_params(&learner.ens.targets[0]).select_outputs(&mean_rows);
        worst = worst.max(max_abs_diff(&lib_online.flat(), &online.flat()));
        worst = worst.max(max_abs_diff(&lib_target.flat(), &target.flat()));
    }
    if variance {
        // With λ = 0 nothing trains the variance head.
        let rows: Vec<usize> = (na..2 * na).collect();
        let after = RefMlp::from_params(&learner.ens.members[0].trainable).select_outputs(&rows);
        let last = after.layers.len() - 1;
        let before = var_rows_before.select_outputs(&rows);
        worst = worst.max(max_abs_diff(
            &flatten(&after.layers[last..]),
            &flatten(&before.layers[last..]),
        ));
    }
    Reduction {
        gap: worst,
        moved: max_abs_diff(&start, &online.flat()),
    }
}

struct RefSac {
    policy: RefMlp,
    critics: [RefMlp; 2],
    targets: [RefMlp; 2],
    log_alpha: f64,
    policy_adam: RefAdam,
    critic_adam: [RefAdam; 2],
    alpha_adam: RefAdam,
}

struct Squashed {
    a: Vec<f64>,
    log_pi: f64,
    std: Vec<f64>,
    free: Vec<bool>,
}

fn squash(out: &[f64], eps: &[f64]) -> Squashed {
    let d = eps.len();
    let mut s = Squashed {
        a: vec![0.0; d],
        log_pi: 0.0,
        std: vec![0.0; d],
        free: vec![true; d],
    };
    for i in 0..d {
        let raw = out[d + i];
        let ls = raw.clamp(-20.0, 2.0);
        s.free[i] = ls == raw;
        s.std[i] = ls.exp();
        let u = out[i] + s.std[i] * eps[i];
        let a = u.tanh();
        s.a[i] = a;
        s.log_pi += -0.5 * eps[i] * eps[i] - ls - 0.5 * (2.0 * std::f64::consts::PI).ln() - (1.0 - a * a + 1e-6).ln();
    }
    s
}

fn zero_like(net: &RefMlp) -> Vec<(Vec<Vec<f64>>, Vec<f64>)> {
    net.layers
        .iter()
        .map(|(w, b)| (vec![vec![0.0; w[0].len()]; w.len()], vec![0.0; b.len()]))
        .collect()
}

fn cat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).cloned().collect()
}

/// One SAC step written out sample by sample for a single member with
/// uniform weights: soft Bellman targets from the target twins, mean squared
/// critic errors, reparameterised actor loss on the smaller twin, and the
/// entropy-coefficient loss `-ln α · mean(log π - dim A)`.
fn reference_sac_step(
    r: &mut RefSac,
    batch: &[MaskedTransition],
    eps_next: &[Vec<f64>],
    eps_cur: &[Vec<f64>],
    hyper: &Hyper,
    low: &[f64],
    high: &[f64],
) {
    let m = batch.len();
    let w = 1.0 / m as f64;
    let da = low.len();
    let ds = batch[0].s.len();
    let alpha = r.log_alpha.exp();
    let mut critic_g = [zero_like(&r.critics[0]), zero_like(&r.critics[1])];
    let mut policy_g = zero_like(&r.policy);
    let mut log_pi_sum = 0.0;
    for (k, t) in batch.iter().enumerate() {
        let nxt = squash(&r.policy.output(&t.s_next), &eps_next[k]);
        let xn = cat(&t.s_next, &nxt.a);
        let q0 = r.targets[0].output(&xn)[0];
        let q1 = r.targets[1].output(&xn)[0];
        let y = t.r
            + if t.done {
                0.0
            } else {
                hyper.gamma * (q0.min(q1) - alpha * nxt.log_pi)
            };

        let stored: Vec<f64> =
            t.a.vector()
                .unwrap()
                .iter()
                .zip(low.iter().zip(high))
                .map(|(x, (l, h))| (2.0 * (x - l) / (h - l) - 1.0).clamp(-1.0, 1.0))
                .collect();
        let x = cat(&t.s, &stored);
        for twin in 0..2 {
            let acts = r.critics[twin].forward(&x);
            let q = acts.last().unwrap()[0];
            let mut d = vec![0.0; acts.last().unwrap().len()];
            d[0] = 2.0 * w * (q - y);
            add_into(&mut critic_g[twin], &r.critics[twin].backward(&acts, &d).0);
        }

        let pol_acts = r.policy.forward(&t.s);
        let cur = squash(pol_acts.last().unwrap(), &eps_cur[k]);
        log_pi_sum += cur.log_pi;
        let xc = cat(&t.s, &cur.a);
        let acts0 = r.critics[0].forward(&xc);
        let acts1 = r.critics[1].forward(&xc);
        let (qa0, qa1) = (acts0.last().unwrap()[0], acts1.last().unwrap()[0]);
        let (net, acts) = if qa1 < qa0 {
            (&r.critics[1], &acts1)
        } else {
            (&r.critics[0], &acts0)
        };
        let mut unit = vec![0.0; acts.last().unwrap().len()];
        unit[0] = 1.0;
        let dq_dx = net.backward(acts, &unit).1;
        let mut d_out = vec![0.0; 2 * da];
        for i in 0..da {
            let a = cur.a[i];
            let one_minus = 1.0 - a * a;
            let dlogpi_du = 2.0 * a * one_minus / (one_minus + 1e-6);
            let du = w * alpha * dlogpi_du - w * dq_dx[ds + i] * one_minus;
            d_out[i] = du;
            if cur.free[i] {
                d_out[da + i] = -w * alpha + du * cur.std[i] * eps_cur[k][i];
            }
        }
        add_into(&mut policy_g, &r.policy.backward(&pol_acts, &d_out).0);
    }
    let alpha_g = -(log_pi_sum / m as f64 - da as f64);
    let mut la = [r.log_alpha];
    r.alpha_adam.step(&mut la, &[alpha_g], hyper.alpha_lr);
    r.log_alpha = la[0];
    let mut p = r.policy.flat();
    r.policy_adam.step(&mut p, &flatten(&policy_g), hyper.actor_lr);
    r.policy.set_flat(&p);
    for twin in 0..2 {
        let mut p = r.critics[twin].flat();
        r.critic_adam[twin].step(&mut p, &flatten(&critic_g[twin]), hyper.lr);
        r.critics[twin].set_flat(&p);
        let src = r.critics[twin].clone();
        soft(&mut r.targets[twin], &src, hyper.tau);
    }
}

/// Runs `steps` updates of a one-member SAC-family learner (λ = 0, variance
/// heads pinned to the floor so inverse-variance weights are uniform) next
/// to the straight-line reference, with identical update noise. Returns the
/// largest difference over every parameter and ln α.
pub fn sac_reduction_gap(variant_name: &str, seed: u64, steps: usize) -> Reduction {
    let mut variant = AgentVariant::preset(variant_name).unwrap();
    assert_eq!(variant.family, Family::Sac);
    variant.ensemble_size = 1;
    variant.lambda = 0.0;
    variant.exploration = ivrl_core::agents::Exploration::Policy;
    let mut hyper = Hyper::defaults(Family::Sac);
    hyper.hidden = vec![6, 5];
    hyper.lr = 0.01;
    hyper.actor_lr = 0.005;
    hyper.alpha_lr = 0.02;
    hyper.gamma = 0.9;
    hyper.tau = 0.1;
    hyper.initial_alpha = 0.7;
    let (low, high) = (vec![-2.0, 0.0], vec![2.0, 1.0]);
    let (ds, da) = (3, 2);
    let mut learner = SacLearner::new(variant.clone(), hyper.clone(), ds, low.clone(), high.clone(), seed).unwrap();
    let variance = variant.critic == ivrl_core::agents::CriticKind::Variance;
    let rows: Vec<usize> = vec![0];
    {
        let mem = &mut learner.members[0];
        if variance {
            for twin in 0..2 {
                floor_variance_row(&mut mem.critics[twin], 1);
                floor_variance_row(&mut mem.targets[twin], 1);
            }
        }
    }
    let mem = &learner.members[0];
    let pick = |p: &MlpParams| RefMlp::from_params(p).select_outputs(&rows);
    let mut reference = RefSac {
        policy: RefMlp::from_params(&mem.policy),
        critics: [pick(&mem.critics[0]), pick(&mem.critics[1])],
        targets: [pick(&mem.targets[0]), pick(&mem.targets[1])],
        log_alpha: mem.log_alpha,
        policy_adam: RefAdam::new(mem.policy.len()),
        critic_adam: [
            RefAdam::new(pick(&mem.critics[0]).flat().len()),
            RefAdam::new(pick(&mem.critics[1]).flat().len()),
        ],
        alpha_adam: RefAdam::new(1),
    };
    let start = [reference.policy.flat(), reference.critics[0].flat()];
    let mut noise = rng_for(seed, streams::UPDATE_NOISE, 0);
    let mut draw = |m: usize| -> Vec<Vec<f64>> {
        (0..m)
            .map(|_| (0..da).map(|_| noise.sample(StandardNormal)).collect())
            .collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ac);
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        let batch = random_batch(&mut rng, 12, ds, |r| {
            Action::Continuous(vec![r.gen_range(-2.0..2.0), r.gen_range(0.0..1.0)])
        });
        let refs: Vec<&MaskedTransition> = batch.iter().collect();
        learner.update(&refs).unwrap();
        let eps_next = draw(batch.len());
        let eps_cur = draw(batch.len());
        reference_sac_step(&mut reference, &batch, &eps_next, &eps_cur, &hyper, &low, &high);
        let mem = &learner.members[0];
        worst = worst.max(max_abs_diff(
            &RefMlp::from_params(&mem.policy).flat(),
            &reference.policy.flat(),
        ));
        for twin in 0..2 {
            worst = worst.max(max_abs_diff(
                &pick(&mem.critics[twin]).flat(),
                &reference.critics[twin].flat(),
            ));
            worst = worst.max(max_abs_diff(
                &pick(&mem.targets[twin]).flat(),
                &reference.targets[twin].flat(),
            ));
        }
        worst = worst.max((mem.log_alpha - reference.log_alpha).abs());
    }
    Reduction {
        gap: worst,
        moved: max_abs_diff(&start[0], &reference.policy.flat())
            .min(max_abs_diff(&start[1], &reference.critics[0].flat())),
    }
}

// -------------------------------------------------------------- convergence

pub struct ChainResult {
    pub steps: usize,
    pub sup_err: f64,
}

/// Ensemble-mean Q on every chain state against value iteration.
pub fn chain_q_error(agent: &DqnAgent, mdp: &ChainMdp, q_star: &[[f64; 2]]) -> f64 {
    let learner = agent.learner();
    let n = learner.ens.len();
    let mut worst: f64 = 0.0;
    for s in 0..mdp.len() {
        let x = mdp.one_hot(s);
        let mut mean = [0.0; 2];
        for j in 0..n {
            let q = learner.values(j, &x).unwrap();
            mean[0] += q[0] / n as f64;
            mean[1] += q[1] / n as f64;
        }
        for a in 0..2 {
            worst = worst.max((mean[a] - q_star[s][a]).abs());
        }
    }
    worst
}

/// Chain-MDP agent settings used by the convergence checks. Every variant
/// explores ε-greedily here so that all state-action pairs keep being
/// visited; the check is about the learning rule, not exploration.
pub fn chain_agent_config(variant: &str, gamma: f64) -> AgentConfig {
    let mut cfg = AgentConfig::preset(variant).unwrap();
    cfg.variant.exploration = ivrl_core::agents::Exploration::EpsilonGreedy;
    cfg.hyper.gamma = gamma;
    cfg.hyper.hidden = vec![32, 32];
    cfg.hyper.lr = 1e-3;
    cfg.hyper.tau = 0.01;
    cfg.hyper.batch_size = 32;
    cfg.hyper.warmup = 200;
    cfg.hyper.epsilon_decay = 0.995;
    cfg.hyper.epsilon_min = 0.3;
    if let WeightScheme::Biv { .. } = cfg.variant.weighting {
        cfg.variant.lambda = 1.0;
    }
    cfg
}

/// Trains on the 5-state chain for at most `max_steps` steps and reports the
/// final sup-norm error of the learned ensemble-mean Q against Q*.
pub fn chain_convergence(cfg: &AgentConfig, seed: u64, max_steps: usize) -> ChainResult {
    let mut mdp = ChainMdp::new(vec![0.0, 0.0, 0.0, 0.0, 1.0], cfg.hyper.gamma, 0.0, 10).unwrap();
    let q_star = exact_q(&mdp, 1e-12);
    let spec = mdp.spec().clone();
    let mut agent = DqnAgent::new(cfg.clone(), &spec, seed).unwrap();
    let mut steps = 0;
    let mut episode = 0;
    while steps < max_steps {
        agent.begin_episode(episode);
        let mut s = mdp.reset(seed.wrapping_mul(1000) + episode as u64);
        loop {
            let a = agent.act(&s).unwrap();
            let out = mdp.step(&a).unwrap();
            steps += 1;
            agent
                .observe(Transition {
                    s,
                    a,
                    r: out.reward,
                    s_next: out.state.clone(),
                    done: out.done,
                })
                .unwrap();
            if out.done || out.truncated || steps >= max_steps {
                break;
            }
            s = out.state;
        }
        episode += 1;
    }
    ChainResult {
        steps,
        sup_err: chain_q_error(&agent, &mdp, &q_star),
    }
}

// ------------------------------------------------------------- attenuation

/// Gradient descent on σ² alone, using the library's loss-attenuation
/// gradient, for a fixed residual `r`. Returns the relative error to `r²`.
pub fn la_stationarity(residual: f64) -> f64 {
    let target = residual * residual;
    let lr = 0.5 * target * target;
    let mut s2 = 1.0;
    for _ in 0..2_000_000 {
        let loss = critic_loss(&[residual], Some(&[s2]), &[0.0], &[1.0], 1.0).unwrap();
        let g = loss.d_sigma2[0];
        s2 = (s2 - lr * g).max(1e-6);
        if g.abs() * lr < 1e-14 * s2 {
            break;
        }
    }
    (s2 - target).abs() / target
}
