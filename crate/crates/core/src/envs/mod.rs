//! Seeded control environments.
//!
//! Physics is deterministic given state and action; reward noise and initial
//! states come from an rng reseeded on every [`Environment::reset`].

mod cartpole;
mod chain;
mod mountain_car;
mod pendulum;

use serde::{Deserialize, Serialize};

pub use cartpole::CartPoleNoise;
pub use chain::{exact_q, ChainMdp};
pub use mountain_car::MountainCar;
pub use pendulum::Pendulum;

use crate::replay::Action;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Box { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    pub fn dim(&self) -> usize {
        match self {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Box { low, .. } => low.len(),
        }
    }

    pub fn num_actions(&self) -> Option<usize> {
        match self {
            ActionSpace::Discrete(n) => Some(*n),
            ActionSpace::Box { .. } => None,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete(_))
    }

    pub fn check(&self, action: &Action) -> Result<()> {
        match (self, action) {
            (ActionSpace::Discrete(n), Action::Discrete(a)) if a < n => Ok(()),
            (ActionSpace::Box { low, .. }, Action::Continuous(v))
                if v.len() == low.len() && v.iter().all(|x| x.is_finite()) =>
            {
                Ok(())
            }
            _ => Err(Error::config(format!("action {action:?} is outside {self:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub state_dim: usize,
    pub action_space: ActionSpace,
    pub max_steps: usize,
    /// Windowed return at which the task counts as solved.
    pub solve_threshold: Option<f64>,
    /// Observations are presented to agents as `(s - obs_offset) / obs_scale`.
    pub obs_offset: Vec<f64>,
    pub obs_scale: Vec<f64>,
}

impl EnvSpec {
    pub fn normalize(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.obs_offset.iter().zip(&self.obs_scale))
            .map(|(x, (o, c))| (x - o) / c)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub state: Vec<f64>,
    pub reward: f64,
    /// True termination: the next state has no future value.
    pub done: bool,
    /// Cut by the episode step cap.
    pub truncated: bool,
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;
    /// Starts a new episode; the same seed always yields the same start state.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &Action) -> Result<StepResult>;
}

/// Tracks the step cap shared by all environments.
#[derive(Debug, Clone, Default)]
pub(crate) struct EpisodeClock {
    steps: usize,
    finished: bool,
}

impl EpisodeClock {
    pub(crate) fn reset(&mut self) {
        self.steps = 0;
        self.finished = false;
    }

    pub(crate) fn tick(&mut self, done: bool, max_steps: usize) -> Result<bool> {
        if self.finished {
            return Err(Error::config("step called on a finished episode; reset first"));
        }
        self.steps += 1;
        let truncated = !done && self.steps >= max_steps;
        self.finished = done || truncated;
        Ok(truncated)
    }
}

fn default_cartpole_noise() -> f64 {
    1.0
}
fn default_cartpole_steps() -> usize {
    1000
}
fn default_short_steps() -> usize {
    200
}
fn default_chain_length() -> usize {
    5
}
fn default_chain_gamma() -> f64 {
    0.9
}
fn default_chain_steps() -> usize {
    10
}

/// Environment selection as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    CartpoleNoise {
        #[serde(default = "default_cartpole_noise")]
        noise_std: f64,
        #[serde(default = "default_cartpole_steps")]
        max_steps: usize,
    },
    MountainCar {
        #[serde(default = "default_short_steps")]
        max_steps: usize,
    },
    Pendulum {
        #[serde(default = "default_short_steps")]
        max_steps: usize,
    },
    Chain {
        #[serde(default = "default_chain_length")]
        length: usize,
        /// Reward for acting in each state; defaults to 1 in the last state only.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rewards: Option<Vec<f64>>,
        #[serde(default = "default_chain_gamma")]
        gamma: f64,
        #[serde(default)]
        noise_std: f64,
        #[serde(default = "default_chain_steps")]
        max_steps: usize,
    },
}

impl EnvConfig {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvConfig::CartpoleNoise { noise_std, max_steps } => Box::new(CartPoleNoise::new(*noise_std, *max_steps)?),
            EnvConfig::MountainCar { max_steps } => Box::new(MountainCar::new(*max_steps)?),
            EnvConfig::Pendulum { max_steps } => Box::new(Pendulum::new(*max_steps)?),
            EnvConfig::Chain {
                length,
                rewards,
                gamma,
                noise_std,
                max_steps,
            } => {
                let rewards = match rewards {
                    Some(r) => r.clone(),
                    None => {
                        let mut r = vec![0.0; *length];
                        if let Some(last) = r.last_mut() {
                            *last = 1.0;
                        }
                        r
                    }
                };
                if rewards.len() != *length {
                    return Err(Error::config(format!(
                        "chain reward table has {} entries for {} states",
                        rewards.len(),
                        length
                    )));
                }
                Box::new(ChainMdp::new(rewards, *gamma, *noise_std, *max_steps)?)
            }
        })
    }

    /// Family name used to pick agent defaults.
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::CartpoleNoise { .. } => "cartpole_noise",
            EnvConfig::MountainCar { .. } => "mountain_car",
            EnvConfig::Pendulum { .. } => "pendulum",
            EnvConfig::Chain { .. } => "chain",
        }
    }
}

pub(crate) fn check_max_steps(max_steps: usize) -> Result<()> {
    if max_steps == 0 {
        return Err(Error::config("max_steps must be positive"));
    }
    Ok(())
}
