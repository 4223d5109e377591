use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

use super::{check_max_steps, ActionSpace, EnvSpec, Environment, EpisodeClock, StepResult};
use crate::replay::Action;
use crate::rng::RunRng;
use crate::{Error, Result};

/// Deterministic chain of `L` states with one-hot observations.
///
/// Action 0 moves left (staying at 0), action 1 moves right. Acting in state
/// `s` pays `rewards[s]` (plus optional Gaussian noise); any action in the
/// last state ends the episode.
#[derive(Debug, Clone)]
pub struct ChainMdp {
    spec: EnvSpec,
    rewards: Vec<f64>,
    gamma: f64,
    noise_std: f64,
    state: usize,
    clock: EpisodeClock,
    rng: RunRng,
}

impl ChainMdp {
    pub fn new(rewards: Vec<f64>, gamma: f64, noise_std: f64, max_steps: usize) -> Result<Self> {
        check_max_steps(max_steps)?;
        let length = rewards.len();
        if length < 2 {
            return Err(Error::config("chain needs at least 2 states"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::config(format!("chain gamma must lie in [0, 1), got {gamma}")));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::config(format!("noise_std must be >= 0, got {noise_std}")));
        }
        Ok(Self {
            spec: EnvSpec {
                name: "chain",
                state_dim: length,
                action_space: ActionSpace::Discrete(2),
                max_steps,
                solve_threshold: None,
                obs_offset: vec![0.0; length],
                obs_scale: vec![1.0; length],
            },
            rewards,
            gamma,
            noise_std,
            state: 0,
            clock: EpisodeClock::default(),
            rng: RunRng::seed_from_u64(0),
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        v[s] = 1.0;
        v
    }

    /// `(next state, terminal)` after taking `a` in `s`.
    pub fn transition(&self, s: usize, a: usize) -> (usize, bool) {
        let last = self.len() - 1;
        if s == last {
            (s, true)
        } else if a == 1 {
            (s + 1, false)
        } else {
            (s.saturating_sub(1), false)
        }
    }
}

impl Environment for ChainMdp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = RunRng::seed_from_u64(seed);
        self.state = 0;
        self.clock.reset();
        self.one_hot(0)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        self.spec.action_space.check(action)?;
        let a = action.index().unwrap_or(0);
        let mut reward = self.rewards[self.state];
        if self.noise_std > 0.0 {
            reward += Normal::new(0.0, self.noise_std)
                .expect("validated noise scale")
                .sample(&mut self.rng);
        }
        let (next, done) = self.transition(self.state, a);
        self.state = next;
        let truncated = self.clock.tick(done, self.spec.max_steps)?;
        Ok(StepResult {
            state: self.one_hot(next),
            reward,
            done,
            truncated,
        })
    }
}

/// Optimal action values by value iteration, to sup-norm `tolerance`.
/// Row `s` holds `[Q(s, left), Q(s, right)]`.
pub fn exact_q(mdp: &ChainMdp, tolerance: f64) -> Vec<[f64; 2]> {
    let n = mdp.len();
    let mut q = vec![[0.0f64; 2]; n];
    loop {
        let mut delta: f64 = 0.0;
        let v: Vec<f64> = q.iter().map(|row| row[0].max(row[1])).collect();
        for s in 0..n {
            for a in 0..2 {
                let (next, done) = mdp.transition(s, a);
                let updated = mdp.rewards[s] + if done { 0.0 } else { mdp.gamma * v[next] };
                delta = delta.max((updated - q[s][a]).abs());
                q[s][a] = updated;
            }
        }
        if delta <= tolerance {
            return q;
        }
    }
}
