//! SAC family: SAC, EnsembleSAC, SunriseSAC, IV-SAC and their ablations.
//!
//! Policies emit a squashed Gaussian over actions in `[-1, 1]^d`; the agent
//! maps them affinely onto the environment's box. Each ensemble member owns a
//! policy, a twin pair of critics with target copies, and its own entropy
//! coefficient.

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{
    actor_weights, argmax, critic_weights, uniform_index, Agent, AgentConfig, AgentVariant, CriticKind,
    DiagAccumulator, Exploration, Hyper, MemberDiag, UpdateDiagnostics, VarianceSource,
};
use crate::envs::{ActionSpace, EnvSpec};
use crate::nn::{adam_step, stack_rows, AdamState, Grads, MlpParams, Tape};
use crate::replay::{mask_indices, Action, MaskedTransition, ReplayBuffer, Transition};
use crate::rng::{rng_for, streams, RunRng};
use crate::uncertainty::{
    init_value_net, mean_and_population_variance, mixture_moments, raw_to_variance, raw_to_variance_grad, soft_update,
    HeadLayout,
};
use crate::weighting::critic_loss;
use crate::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Added inside `ln(1 - a² + ·)` in the tanh change of variables.
pub const TANH_EPS: f64 = 1e-6;

/// Reparameterised draws `a = tanh(μ + σ ε)` for a batch of states.
#[derive(Debug, Clone)]
pub struct SquashedSample {
    pub action: Array2<f64>,
    pub log_pi: Vec<f64>,
    pub std: Array2<f64>,
    pub eps: Array2<f64>,
    /// Whether each raw log-std lay inside the clamp range (and so receives gradient).
    pub log_std_free: Array2<bool>,
}

impl SquashedSample {
    /// `out` holds `[mean | raw log-std]` per row.
    pub fn from_output(out: &Array2<f64>, eps: Array2<f64>) -> Self {
        let d = eps.ncols();
        let (m, _) = out.dim();
        let mut action = Array2::zeros((m, d));
        let mut std = Array2::zeros((m, d));
        let mut log_std_free = Array2::from_elem((m, d), true);
        let mut log_pi = vec![0.0; m];
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        for k in 0..m {
            for i in 0..d {
                let raw = out[[k, d + i]];
                let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                log_std_free[[k, i]] = raw == ls;
                let sd = ls.exp();
                let e = eps[[k, i]];
                let a = (out[[k, i]] + sd * e).tanh();
                action[[k, i]] = a;
                std[[k, i]] = sd;
                log_pi[k] += -0.5 * e * e - ls - half_ln_2pi - (1.0 - a * a + TANH_EPS).ln();
            }
        }
        Self {
            action,
            log_pi,
            std,
            eps,
            log_std_free,
        }
    }

    /// Gradient with respect to the policy output `[mean | raw log-std]`
    /// given `dL/d log π` per row and `dL/da`.
    pub fn output_grad(&self, d_log_pi: &[f64], d_action: &Array2<f64>) -> Array2<f64> {
        let (m, d) = self.action.dim();
        let mut g = Array2::zeros((m, 2 * d));
        for k in 0..m {
            for i in 0..d {
                let a = self.action[[k, i]];
                let one_minus = 1.0 - a * a;
                let dlogpi_du = 2.0 * a * one_minus / (one_minus + TANH_EPS);
                let du = d_log_pi[k] * dlogpi_du + d_action[[k, i]] * one_minus;
                g[[k, i]] = du;
                if self.log_std_free[[k, i]] {
                    g[[k, d + i]] = -d_log_pi[k] + du * self.std[[k, i]] * self.eps[[k, i]];
                }
            }
        }
        g
    }
}

/// Index of the candidate with the highest `mean + λ std`; the first on ties.
pub fn ucb_select(means: &[f64], stds: &[f64], lambda_ucb: f64) -> usize {
    let scores: Vec<f64> = means.iter().zip(stds).map(|(m, s)| m + lambda_ucb * s).collect();
    argmax(&scores)
}

#[derive(Debug, Clone)]
pub struct SacMember {
    pub policy: MlpParams,
    pub policy_opt: AdamState,
    pub critics: [MlpParams; 2],
    pub critic_opts: [AdamState; 2],
    pub targets: [MlpParams; 2],
    pub log_alpha: f64,
    pub alpha_opt: AdamState,
}

/// Policies, critics and the IV-SAC update; owns no replay data.
#[derive(Debug, Clone)]
pub struct SacLearner {
    pub members: Vec<SacMember>,
    pub variant: AgentVariant,
    pub hyper: Hyper,
    state_dim: usize,
    action_dim: usize,
    layout: HeadLayout,
    low: Vec<f64>,
    high: Vec<f64>,
    noise_rng: RunRng,
}

fn concat_cols(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    concatenate![Axis(1), a.view(), b.view()]
}

fn gaussian(rng: &mut RunRng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

impl SacLearner {
    /// `low`/`high` bound the environment actions the replay buffer stores.
    pub fn new(
        variant: AgentVariant,
        hyper: Hyper,
        state_dim: usize,
        low: Vec<f64>,
        high: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        let action_dim = low.len();
        if action_dim == 0 || high.len() != action_dim || low.iter().zip(&high).any(|(l, h)| !(h > l)) {
            return Err(Error::config("SAC needs a non-empty action box with low < high"));
        }
        let layout = HeadLayout {
            actions: 1,
            variance: variant.critic == CriticKind::Variance,
        };
        let mut policy_widths = vec![state_dim];
        policy_widths.extend_from_slice(&hyper.hidden);
        policy_widths.push(2 * action_dim);
        let alpha0 = if hyper.initial_alpha > 0.0 {
            hyper.initial_alpha
        } else {
            1.0
        };
        let members = (0..variant.ensemble_size as u64)
            .map(|j| {
                let mut rng = rng_for(seed, streams::NET_INIT, j);
                let policy = MlpParams::init_uniform(&policy_widths, &mut rng)?;
                let c0 = init_value_net(state_dim + action_dim, &hyper.hidden, layout, &mut rng)?;
                let c1 = init_value_net(state_dim + action_dim, &hyper.hidden, layout, &mut rng)?;
                Ok(SacMember {
                    policy_opt: AdamState::for_params(&policy),
                    policy,
                    critic_opts: [AdamState::for_params(&c0), AdamState::for_params(&c1)],
                    targets: [c0.clone(), c1.clone()],
                    critics: [c0, c1],
                    log_alpha: alpha0.ln(),
                    alpha_opt: AdamState::new(1),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            members,
            variant,
            hyper,
            state_dim,
            action_dim,
            layout,
            low,
            high,
            noise_rng: rng_for(seed, streams::UPDATE_NOISE, 0),
        })
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn alpha(&self, j: usize) -> f64 {
        self.hyper
            .fixed_alpha
            .unwrap_or_else(|| self.members[j].log_alpha.exp())
    }

    pub fn target_entropy(&self) -> f64 {
        -(self.action_dim as f64)
    }

    /// Environment action for a squashed action in `[-1, 1]^d`.
    pub fn to_env(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(x, (l, h))| (l + 0.5 * (x + 1.0) * (h - l)).clamp(*l, *h))
            .collect()
    }

    /// Squashed action for a stored environment action.
    pub fn from_env(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(x, (l, h))| (2.0 * (x - l) / (h - l) - 1.0).clamp(-1.0, 1.0))
            .collect()
    }

    /// `a ~ π_j(·|s)` in squashed coordinates.
    pub fn sample_action<R: Rng + ?Sized>(&self, j: usize, state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let out = self.members[j].policy.forward(state)?;
        let d = self.action_dim;
        Ok((0..d)
            .map(|i| {
                let ls = out[d + i].clamp(LOG_STD_MIN, LOG_STD_MAX);
                let e: f64 = rng.sample(StandardNormal);
                (out[i] + ls.exp() * e).tanh()
            })
            .collect())
    }

    /// `tanh` of the policy mean of member `j`.
    pub fn mean_action(&self, j: usize, state: &[f64]) -> Result<Vec<f64>> {
        let out = self.members[j].policy.forward(state)?;
        Ok(out[..self.action_dim].iter().map(|m| m.tanh()).collect())
    }

    /// First-twin critic mean of every member at `(s, a)`.
    pub fn critic_means(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let mut x = state.to_vec();
        x.extend_from_slice(action);
        self.members.iter().map(|m| Ok(m.critics[0].forward(&x)?[0])).collect()
    }

    /// UCB choice among one sampled action per policy member.
    pub fn ucb_action<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let candidates = (0..self.members.len())
            .map(|j| self.sample_action(j, state, rng))
            .collect::<Result<Vec<_>>>()?;
        let mut means = Vec::with_capacity(candidates.len());
        let mut stds = Vec::with_capacity(candidates.len());
        for c in &candidates {
            let (m, v) = mean_and_population_variance(&self.critic_means(state, c)?);
            means.push(m);
            stds.push(v.sqrt());
        }
        let best = ucb_select(&means, &stds, self.variant.lambda_ucb);
        Ok(candidates.into_iter().nth(best).expect("candidate index"))
    }

    /// Average of the members' mean actions, in environment units.
    pub fn test_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        let mut avg = vec![0.0; self.action_dim];
        for j in 0..self.members.len() {
            for (s, a) in avg.iter_mut().zip(self.mean_action(j, state)?) {
                *s += a;
            }
        }
        let n = self.members.len() as f64;
        avg.iter_mut().for_each(|x| *x /= n);
        Ok(self.to_env(&avg))
    }

    /// σ² at `x` across members, using `own` for member `j`'s network.
    fn ensemble_variance(
        &self,
        j: usize,
        own: &Array2<f64>,
        x: &Array2<f64>,
        pick: impl Fn(&SacMember) -> &MlpParams,
    ) -> Result<Option<Vec<f64>>> {
        let source = self.variant.variance_source();
        if source == VarianceSource::None {
            return Ok(None);
        }
        let n = self.members.len();
        let mut outs = Vec::with_capacity(n);
        for (l, m) in self.members.iter().enumerate() {
            if l == j {
                outs.push(None);
            } else {
                outs.push(Some(pick(m).forward_batch(x)?));
            }
        }
        let rows = x.nrows();
        let mut mus = vec![0.0; n];
        let mut vars = vec![0.0; n];
        let mut result = Vec::with_capacity(rows);
        for k in 0..rows {
            for l in 0..n {
                let o = outs[l].as_ref().unwrap_or(own);
                mus[l] = o[[k, 0]];
                if source == VarianceSource::Mixture {
                    vars[l] = raw_to_variance(o[[k, 1]]);
                }
            }
            result.push(match source {
                VarianceSource::Mixture => mixture_moments(&mus, &vars).1,
                _ => mean_and_population_variance(&mus).1,
            });
        }
        Ok(Some(result))
    }

    /// One update of every member on its masked part of `batch`.
    ///
    /// For each member the update noise is drawn as the next-state action noise
    /// followed by the current-state action noise, each `rows × action_dim`.
    pub fn update(&mut self, batch: &[&MaskedTransition]) -> Result<UpdateDiagnostics> {
        let mut acc = DiagAccumulator::default();
        let mut updated = 0;
        for j in 0..self.members.len() {
            let idx = mask_indices(batch, j);
            if idx.is_empty() {
                continue;
            }
            let diag = self.update_member(j, batch, &idx)?;
            acc.push(diag);
            updated += 1;
        }
        Ok(acc.finish(updated))
    }

    fn update_member(&mut self, j: usize, batch: &[&MaskedTransition], idx: &[usize]) -> Result<MemberDiag> {
        let (ds, da, m) = (self.state_dim, self.action_dim, idx.len());
        let gamma = self.hyper.gamma;
        let variance_heads = self.layout.variance;
        let s = stack_rows(idx.iter().map(|&k| batch[k].s.as_slice()), ds);
        let s_next = stack_rows(idx.iter().map(|&k| batch[k].s_next.as_slice()), ds);
        let stored: Vec<Vec<f64>> = idx
            .iter()
            .map(|&k| {
                batch[k]
                    .a
                    .vector()
                    .filter(|v| v.len() == da)
                    .map(|v| self.from_env(v))
                    .ok_or_else(|| Error::config("SAC batch holds an invalid continuous action"))
            })
            .collect::<Result<_>>()?;
        let a = stack_rows(stored.iter().map(|v| v.as_slice()), da);
        let eps_next = gaussian(&mut self.noise_rng, m, da);
        let eps_cur = gaussian(&mut self.noise_rng, m, da);
        let alpha = self.alpha(j);
        let member = &self.members[j];

        // Entropy-regularised targets from member j's policy and target twins.
        let next = SquashedSample::from_output(&member.policy.forward_batch(&s_next)?, eps_next);
        let x_next = concat_cols(&s_next, &next.action);
        let t0 = member.targets[0].forward_batch(&x_next)?;
        let t1 = member.targets[1].forward_batch(&x_next)?;
        let targets: Vec<f64> = idx
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let t = batch[k];
                let soft_v = t0[[i, 0]].min(t1[[i, 0]]) - alpha * next.log_pi[i];
                t.r + if t.done { 0.0 } else { gamma * soft_v }
            })
            .collect();
        let var_bar = self.ensemble_variance(j, &t0, &x_next, |mm| &mm.targets[0])?;

        // Fresh actions from member j's policy for the actor objective.
        let pol_tape = member.policy.forward_tape(&s)?;
        let cur = SquashedSample::from_output(pol_tape.output(), eps_cur);
        let x_cur = concat_cols(&s, &cur.action);
        let qa = [
            member.critics[0].forward_tape(&x_cur)?,
            member.critics[1].forward_tape(&x_cur)?,
        ];
        let var_hat = self.ensemble_variance(j, qa[0].output(), &x_cur, |mm| &mm.critics[0])?;

        // Critic twins.
        let scheme = &self.variant.weighting;
        let cw = critic_weights(scheme, var_bar.as_deref().unwrap_or(&[]), gamma, m)?;
        let x = concat_cols(&s, &a);
        let mut critic_grads = Vec::with_capacity(2);
        let mut loss_terms = Vec::with_capacity(2);
        for twin in 0..2 {
            let tape = member.critics[twin].forward_tape(&x)?;
            let out = tape.output();
            let mus: Vec<f64> = out.column(0).to_vec();
            let sigma2s: Vec<f64> = if variance_heads {
                out.column(1).iter().map(|&r| raw_to_variance(r)).collect()
            } else {
                Vec::new()
            };
            let loss = critic_loss(
                &mus,
                variance_heads.then_some(sigma2s.as_slice()),
                &targets,
                &cw.weights,
                self.variant.lambda,
            )?;
            let mut d_out = Array2::zeros(out.dim());
            for i in 0..m {
                d_out[[i, 0]] = loss.d_mu[i];
                if variance_heads {
                    d_out[[i, 1]] = loss.d_sigma2[i] * raw_to_variance_grad(out[[i, 1]]);
                }
            }
            critic_grads.push(member.critics[twin].backward(&tape, &d_out)?.0);
            loss_terms.push(loss);
        }

        // Actor.
        let aw = actor_weights(scheme, var_hat.as_deref().unwrap_or(&[]), m)?;
        let (_, policy_grads) = actor_gradient(member, &pol_tape, &cur, &qa, &aw.weights, alpha, ds)?;

        // Entropy coefficient: d/d ln α of -ln α · mean(log π + H̄).
        let alpha_grad = if self.hyper.fixed_alpha.is_none() {
            let h = self.target_entropy();
            Some(-cur.log_pi.iter().map(|lp| lp + h).sum::<f64>() / m as f64)
        } else {
            None
        };

        for g in critic_grads.iter().chain(std::iter::once(&policy_grads)) {
            if !g.is_finite() {
                return Err(Error::numerical(format!("non-finite SAC gradient for member {j}")));
            }
        }
        let (lr, actor_lr, alpha_lr, tau) = (self.hyper.lr, self.hyper.actor_lr, self.hyper.alpha_lr, self.hyper.tau);
        let member = &mut self.members[j];
        if let Some(g) = alpha_grad {
            let mut la = [member.log_alpha];
            member.alpha_opt.update(&mut la, &[g], alpha_lr)?;
            member.log_alpha = la[0];
        }
        adam_step(&mut member.policy, &policy_grads, &mut member.policy_opt, actor_lr)?;
        for twin in 0..2 {
            adam_step(
                &mut member.critics[twin],
                &critic_grads[twin],
                &mut member.critic_opts[twin],
                lr,
            )?;
            soft_update(&mut member.targets[twin], &member.critics[twin], tau)?;
        }

        let half = |f: fn(&crate::weighting::CriticLoss) -> f64| 0.5 * (f(&loss_terms[0]) + f(&loss_terms[1]));
        Ok(MemberDiag {
            variances: var_bar,
            xi_critic: cw.xi,
            xi_actor: aw.xi,
            ebs: cw.ebs,
            mebs: cw.mebs,
            loss_biv: half(|l| l.weighted),
            loss_la: if variance_heads {
                half(|l| l.attenuation)
            } else {
                f64::NAN
            },
        })
    }
}

/// Value and policy gradient of `Σ_k w_k (α log π_k - min(Q1, Q2)(s_k, ã_k))`.
///
/// `qa` are the member's critic tapes at `[s | ã]`; the action gradient of the
/// smaller twin flows back through the squashing into the policy output.
fn actor_gradient(
    member: &crate::agents::SacMember,
    pol_tape: &Tape,
    cur: &SquashedSample,
    qa: &[Tape; 2],
    weights: &[f64],
    alpha: f64,
    state_dim: usize,
) -> Result<(f64, Grads)> {
    let m = weights.len();
    let da = cur.action.ncols();
    let mut pick = [Array2::zeros(qa[0].output().dim()), Array2::zeros(qa[1].output().dim())];
    let mut loss = 0.0;
    for k in 0..m {
        let (q0, q1) = (qa[0].output()[[k, 0]], qa[1].output()[[k, 0]]);
        let twin = usize::from(q1 < q0);
        pick[twin][[k, 0]] = 1.0;
        loss += weights[k] * (alpha * cur.log_pi[k] - q0.min(q1));
    }
    let dq0 = member.critics[0].backward(&qa[0], &pick[0])?.1;
    let dq1 = member.critics[1].backward(&qa[1], &pick[1])?.1;
    let dq_da = dq0.slice(s![.., state_dim..]).to_owned() + dq1.slice(s![.., state_dim..]);
    let mut d_action = Array2::zeros((m, da));
    let mut d_log_pi = vec![0.0; m];
    for k in 0..m {
        d_log_pi[k] = weights[k] * alpha;
        for i in 0..da {
            d_action[[k, i]] = -weights[k] * dq_da[[k, i]];
        }
    }
    let d_out = cur.output_grad(&d_log_pi, &d_action);
    let (grads, _) = member.policy.backward(pol_tape, &d_out)?;
    Ok((loss, grads))
}

/// SAC-family agent: learner, replay buffer and exploration state.
#[derive(Debug, Clone)]
pub struct SacAgent {
    learner: SacLearner,
    replay: ReplayBuffer,
    explore_rng: RunRng,
    episode_member: usize,
}

impl SacAgent {
    pub fn new(cfg: AgentConfig, spec: &EnvSpec, seed: u64) -> Result<Self> {
        let ActionSpace::Box { low, high } = &spec.action_space else {
            return Err(Error::config("SAC agents need a continuous action space"));
        };
        let replay = ReplayBuffer::new(cfg.hyper.buffer_capacity, rng_for(seed, streams::REPLAY, 0))?;
        Ok(Self {
            learner: SacLearner::new(cfg.variant, cfg.hyper, spec.state_dim, low.clone(), high.clone(), seed)?,
            replay,
            explore_rng: rng_for(seed, streams::EXPLORATION, 0),
            episode_member: 0,
        })
    }

    pub fn learner(&self) -> &SacLearner {
        &self.learner
    }
}

impl Agent for SacAgent {
    fn begin_episode(&mut self, _episode: usize) {
        self.episode_member = uniform_index(&mut self.explore_rng, self.learner.members.len());
    }

    fn act(&mut self, state: &[f64]) -> Result<Action> {
        let a = if self.replay.len() < self.learner.hyper.warmup {
            (0..self.learner.action_dim)
                .map(|_| self.explore_rng.gen_range(-1.0..=1.0))
                .collect()
        } else {
            match self.learner.variant.exploration {
                Exploration::Ucb => self.learner.ucb_action(state, &mut self.explore_rng)?,
                _ => self
                    .learner
                    .sample_action(self.episode_member, state, &mut self.explore_rng)?,
            }
        };
        Ok(Action::Continuous(self.learner.to_env(&a)))
    }

    fn act_test(&mut self, state: &[f64]) -> Result<Action> {
        Ok(Action::Continuous(self.learner.test_action(state)?))
    }

    fn observe(&mut self, transition: Transition) -> Result<Option<UpdateDiagnostics>> {
        let n = self.learner.members.len();
        self.replay.push(transition, self.learner.variant.mask_prob, n)?;
        if self.replay.len() < self.learner.hyper.warmup.max(1) {
            return Ok(None);
        }
        let Some(batch) = self.replay.sample(self.learner.hyper.batch_size) else {
            return Ok(None);
        };
        self.learner.update(&batch).map(Some)
    }
}
