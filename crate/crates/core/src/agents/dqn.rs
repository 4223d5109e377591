//! DQN family: plain DQN, BootstrapDQN with randomized priors, IV-DQN and
//! their ablations.

use ndarray::{s, Array2};
use rand::Rng;

use super::{
    argmax, critic_weights, uniform_index, Agent, AgentConfig, AgentVariant, CriticKind, DiagAccumulator, Exploration,
    Hyper, MemberDiag, UpdateDiagnostics, VarianceSource,
};
use crate::envs::EnvSpec;
use crate::nn::{adam_step, stack_rows};
use crate::replay::{mask_indices, Action, MaskedTransition, ReplayBuffer, Transition};
use crate::rng::{rng_for, streams, RunRng};
use crate::uncertainty::{
    mean_and_population_variance, mixture_moments, raw_to_variance, raw_to_variance_grad, EnsembleState, HeadLayout,
    PriorPair,
};
use crate::weighting::critic_loss;
use crate::{Error, Result};

/// Greedy action of one member on its prior-augmented values.
pub fn greedy_action(pair: &PriorPair, state: &[f64]) -> Result<usize> {
    Ok(argmax(&member_values(pair, state)?))
}

fn member_values(pair: &PriorPair, state: &[f64]) -> Result<Vec<f64>> {
    let a = pair.layout.actions;
    let mut q = pair.trainable.forward(state)?;
    q.truncate(a);
    if pair.delta_rpf != 0.0 {
        for (v, p) in q.iter_mut().zip(pair.prior().forward(state)?) {
            *v += pair.delta_rpf * p;
        }
    }
    Ok(q)
}

/// Most frequent vote; ties broken uniformly at random.
pub fn plurality_vote<R: Rng + ?Sized>(votes: &[usize], n_actions: usize, rng: &mut R) -> usize {
    let mut counts = vec![0usize; n_actions];
    for &v in votes {
        counts[v] += 1;
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    let tied: Vec<usize> = (0..n_actions).filter(|&a| counts[a] == best).collect();
    tied[uniform_index(rng, tied.len())]
}

/// Ensemble of Q-networks and the update rule; owns no replay data.
#[derive(Debug, Clone)]
pub struct DqnLearner {
    pub ens: EnsembleState,
    pub variant: AgentVariant,
    pub hyper: Hyper,
    state_dim: usize,
    n_actions: usize,
}

impl DqnLearner {
    pub fn new(variant: AgentVariant, hyper: Hyper, state_dim: usize, n_actions: usize, seed: u64) -> Result<Self> {
        let layout = HeadLayout {
            actions: n_actions,
            variance: variant.critic == CriticKind::Variance,
        };
        let members = (0..variant.ensemble_size)
            .map(|j| {
                let mut net_rng = rng_for(seed, streams::NET_INIT, j as u64);
                let mut prior_rng = rng_for(seed, streams::PRIOR_INIT, j as u64);
                PriorPair::new(
                    state_dim,
                    &hyper.hidden,
                    layout,
                    variant.delta_rpf,
                    &mut net_rng,
                    &mut prior_rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ens: EnsembleState::new(members)?,
            variant,
            hyper,
            state_dim,
            n_actions,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Prior-augmented action values of member `j`.
    pub fn values(&self, j: usize, state: &[f64]) -> Result<Vec<f64>> {
        member_values(&self.ens.members[j], state)
    }

    pub fn greedy(&self, j: usize, state: &[f64]) -> Result<usize> {
        greedy_action(&self.ens.members[j], state)
    }

    /// One gradient step for every member on its masked part of `batch`.
    pub fn update(&mut self, batch: &[&MaskedTransition]) -> Result<UpdateDiagnostics> {
        if batch.is_empty() {
            return Ok(UpdateDiagnostics::empty());
        }
        let (d, na, n) = (self.state_dim, self.n_actions, self.ens.len());
        let delta = self.variant.delta_rpf;
        let variance_heads = self.variant.critic == CriticKind::Variance;
        let gamma = self.hyper.gamma;

        // Target-network means (with priors) and variances at s' for every member.
        let s_next = stack_rows(batch.iter().map(|t| t.s_next.as_slice()), d);
        let mut next_mu = Vec::with_capacity(n);
        let mut next_var = Vec::with_capacity(n);
        for l in 0..n {
            let out = self.ens.targets[l].forward_batch(&s_next)?;
            let mut mu = out.slice(s![.., ..na]).to_owned();
            if delta != 0.0 {
                mu.scaled_add(delta, &self.ens.members[l].prior().forward_batch(&s_next)?);
            }
            next_mu.push(mu);
            if variance_heads {
                next_var.push(out.slice(s![.., na..]).mapv(raw_to_variance));
            }
        }

        let source = self.variant.variance_source();
        let mut acc = DiagAccumulator::default();
        let mut updated = 0;
        let mut mus_l = vec![0.0; n];
        let mut vars_l = vec![0.0; n];
        for j in 0..n {
            let idx = mask_indices(batch, j);
            if idx.is_empty() {
                continue;
            }
            let mut targets = Vec::with_capacity(idx.len());
            let mut variances = Vec::with_capacity(idx.len());
            for &k in &idx {
                let t = batch[k];
                let row = next_mu[j].row(k);
                let a_next = argmax(row.as_slice().expect("contiguous row"));
                let bootstrap = if t.done { 0.0 } else { gamma * row[a_next] };
                targets.push(t.r + bootstrap);
                match source {
                    VarianceSource::Mixture => {
                        for l in 0..n {
                            mus_l[l] = next_mu[l][[k, a_next]];
                            vars_l[l] = next_var[l][[k, a_next]];
                        }
                        variances.push(mixture_moments(&mus_l, &vars_l).1);
                    }
                    VarianceSource::Sampled => {
                        for l in 0..n {
                            mus_l[l] = next_mu[l][[k, a_next]];
                        }
                        variances.push(mean_and_population_variance(&mus_l).1);
                    }
                    VarianceSource::None => {}
                }
            }
            let weights = critic_weights(&self.variant.weighting, &variances, gamma, idx.len())?;

            let member = &self.ens.members[j];
            let s_sub = stack_rows(idx.iter().map(|&k| batch[k].s.as_slice()), d);
            let tape = member.trainable.forward_tape(&s_sub)?;
            let prior_out = if delta != 0.0 {
                Some(member.prior().forward_batch(&s_sub)?)
            } else {
                None
            };
            let out = tape.output();
            let mut actions = Vec::with_capacity(idx.len());
            let mut mus = Vec::with_capacity(idx.len());
            let mut sigma2s = Vec::with_capacity(idx.len());
            for (i, &k) in idx.iter().enumerate() {
                let a = batch[k]
                    .a
                    .index()
                    .filter(|&a| a < na)
                    .ok_or_else(|| Error::config("DQN batch holds an invalid discrete action"))?;
                actions.push(a);
                let prior = prior_out.as_ref().map_or(0.0, |p| delta * p[[i, a]]);
                mus.push(out[[i, a]] + prior);
                if variance_heads {
                    sigma2s.push(raw_to_variance(out[[i, na + a]]));
                }
            }
            let lambda = self.variant.lambda;
            let loss = critic_loss(
                &mus,
                variance_heads.then_some(sigma2s.as_slice()),
                &targets,
                &weights.weights,
                lambda,
            )?;
            let mut d_out = Array2::zeros(out.dim());
            for (i, &a) in actions.iter().enumerate() {
                d_out[[i, a]] = loss.d_mu[i];
                if variance_heads {
                    d_out[[i, na + a]] = loss.d_sigma2[i] * raw_to_variance_grad(out[[i, na + a]]);
                }
            }
            let (grads, _) = member.trainable.backward(&tape, &d_out)?;
            if !grads.is_finite() {
                return Err(Error::numerical(format!("non-finite gradient for member {j}")));
            }
            adam_step(
                &mut self.ens.members[j].trainable,
                &grads,
                &mut self.ens.optims[j],
                self.hyper.lr,
            )?;
            self.ens.soft_update_member(j, self.hyper.tau)?;

            acc.push(MemberDiag {
                variances: (source != VarianceSource::None).then_some(variances),
                xi_critic: weights.xi,
                xi_actor: f64::NAN,
                ebs: weights.ebs,
                mebs: weights.mebs,
                loss_biv: loss.weighted,
                loss_la: if variance_heads { loss.attenuation } else { f64::NAN },
            });
            updated += 1;
        }
        Ok(acc.finish(updated))
    }
}

/// DQN-family agent: learner, replay buffer and exploration state.
#[derive(Debug, Clone)]
pub struct DqnAgent {
    learner: DqnLearner,
    replay: ReplayBuffer,
    explore_rng: RunRng,
    tie_rng: RunRng,
    episode_member: usize,
    epsilon: f64,
}

impl DqnAgent {
    pub fn new(cfg: AgentConfig, spec: &EnvSpec, seed: u64) -> Result<Self> {
        let n_actions = spec
            .action_space
            .num_actions()
            .ok_or_else(|| Error::config("DQN agents need a discrete action space"))?;
        let replay = ReplayBuffer::new(cfg.hyper.buffer_capacity, rng_for(seed, streams::REPLAY, 0))?;
        let epsilon = cfg.hyper.epsilon_start;
        Ok(Self {
            learner: DqnLearner::new(cfg.variant, cfg.hyper, spec.state_dim, n_actions, seed)?,
            replay,
            explore_rng: rng_for(seed, streams::EXPLORATION, 0),
            tie_rng: rng_for(seed, streams::TIE_BREAK, 0),
            episode_member: 0,
            epsilon,
        })
    }

    pub fn learner(&self) -> &DqnLearner {
        &self.learner
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn episode_member(&self) -> usize {
        self.episode_member
    }
}

impl Agent for DqnAgent {
    fn begin_episode(&mut self, episode: usize) {
        let h = &self.learner.hyper;
        self.epsilon = (h.epsilon_start * h.epsilon_decay.powi(episode as i32)).max(h.epsilon_min);
        self.episode_member = uniform_index(&mut self.explore_rng, self.learner.ens.len());
    }

    fn act(&mut self, state: &[f64]) -> Result<Action> {
        let a = match self.learner.variant.exploration {
            Exploration::EpsilonGreedy => {
                if self.explore_rng.gen::<f64>() < self.epsilon {
                    self.explore_rng.gen_range(0..self.learner.n_actions)
                } else {
                    self.learner.greedy(self.episode_member, state)?
                }
            }
            _ => self.learner.greedy(self.episode_member, state)?,
        };
        Ok(Action::Discrete(a))
    }

    fn act_test(&mut self, state: &[f64]) -> Result<Action> {
        let votes = (0..self.learner.ens.len())
            .map(|j| self.learner.greedy(j, state))
            .collect::<Result<Vec<_>>>()?;
        Ok(Action::Discrete(plurality_vote(
            &votes,
            self.learner.n_actions,
            &mut self.tie_rng,
        )))
    }

    fn observe(&mut self, transition: Transition) -> Result<Option<UpdateDiagnostics>> {
        let n = self.learner.ens.len();
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
