//! Experiment configuration files.
//!
//! ```toml
//! [env]
//! name = "cartpole_noise"
//! noise_std = 1.0
//!
//! [agent]
//! variant = "iv_dqn"
//! lambda = 5.0
//! mebs_ratio = 0.5
//!
//! [run]
//! env_seeds = [0, 1]
//! net_seeds = [0, 1]
//! max_episodes = 400
//! ```
//!
//! Every `[agent]` key except `variant` is optional and overrides the
//! variant's default. Unknown keys anywhere are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{AgentConfig, Family};
use crate::envs::EnvConfig;
use crate::weighting::{WeightScheme, XiSolver};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub agent: AgentSection,
    #[serde(default)]
    pub run: RunSection,
}

/// Variant name plus optional hyperparameter overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    pub variant: String,
    pub ensemble_size: Option<usize>,
    pub hidden: Option<Vec<usize>>,
    pub lr: Option<f64>,
    pub actor_lr: Option<f64>,
    pub alpha_lr: Option<f64>,
    pub gamma: Option<f64>,
    pub tau: Option<f64>,
    pub batch_size: Option<usize>,
    pub epsilon_start: Option<f64>,
    pub epsilon_min: Option<f64>,
    pub epsilon_decay: Option<f64>,
    pub warmup: Option<usize>,
    pub buffer_capacity: Option<usize>,
    pub initial_alpha: Option<f64>,
    pub fixed_alpha: Option<f64>,
    pub mask_prob: Option<f64>,
    pub delta_rpf: Option<f64>,
    pub lambda: Option<f64>,
    pub mebs_ratio: Option<f64>,
    pub fixed_xi: Option<f64>,
    pub xi_solver: Option<XiSolver>,
    pub lambda_ucb: Option<f64>,
    pub sunrise_temperature: Option<f64>,
    pub uwac_beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub env_seeds: Vec<u64>,
    pub net_seeds: Vec<u64>,
    /// Episode budget per run; defaults per environment.
    pub max_episodes: Option<usize>,
    /// Environment-step budget per run.
    pub max_steps: Option<u64>,
    /// End a run once its windowed return first reaches the solve threshold.
    pub stop_when_solved: bool,
    pub window: usize,
    /// Overrides the environment's solve threshold.
    pub solve_threshold: Option<f64>,
    /// Evaluation episodes with test-time actions after training.
    pub eval_episodes: usize,
    /// Run seed pairs on the rayon thread pool.
    pub parallel: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            env_seeds: vec![0],
            net_seeds: vec![0],
            max_episodes: None,
            max_steps: None,
            stop_when_solved: false,
            window: 100,
            solve_threshold: None,
            eval_episodes: 0,
            parallel: true,
        }
    }
}

/// Fully specified run plan written next to the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunPlan {
    pub env_seeds: Vec<u64>,
    pub net_seeds: Vec<u64>,
    pub max_episodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
    pub stop_when_solved: bool,
    pub window: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve_threshold: Option<f64>,
    pub eval_episodes: usize,
    pub parallel: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub run: RunPlan,
}

impl ResolvedConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("cannot serialise resolved config: {e}")))
    }
}

/// Default episode budget per environment.
pub fn default_max_episodes(env: &EnvConfig) -> usize {
    match env {
        EnvConfig::CartpoleNoise { .. } => 400,
        EnvConfig::MountainCar { .. } => 500,
        EnvConfig::Pendulum { .. } => 500,
        EnvConfig::Chain { .. } => 5000,
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("invalid experiment config: {e}")))
    }

    pub fn from_value(value: toml::Value) -> Result<Self> {
        value
            .try_into()
            .map_err(|e| Error::config(format!("invalid experiment config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Applies defaults and overrides and validates everything.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let agent = self.agent.resolve()?;
        let env = self.env.build()?;
        agent.validate(env.spec())?;
        let run = &self.run;
        if run.env_seeds.is_empty() || run.net_seeds.is_empty() {
            return Err(Error::config("run.env_seeds and run.net_seeds must be non-empty"));
        }
        if run.window == 0 {
            return Err(Error::config("run.window must be at least 1"));
        }
        let max_episodes = run.max_episodes.unwrap_or_else(|| default_max_episodes(&self.env));
        if max_episodes == 0 {
            return Err(Error::config("run.max_episodes must be at least 1"));
        }
        if run.max_steps == Some(0) {
            return Err(Error::config("run.max_steps must be at least 1"));
        }
        let solve_threshold = run.solve_threshold.or(env.spec().solve_threshold);
        if run.stop_when_solved && solve_threshold.is_none() {
            return Err(Error::config("run.stop_when_solved needs a solve threshold"));
        }
        Ok(ResolvedConfig {
            env: self.env.clone(),
            agent,
            run: RunPlan {
                env_seeds: run.env_seeds.clone(),
                net_seeds: run.net_seeds.clone(),
                max_episodes,
                max_steps: run.max_steps,
                stop_when_solved: run.stop_when_solved,
                window: run.window,
                solve_threshold,
                eval_episodes: run.eval_episodes,
                parallel: run.parallel,
            },
        })
    }
}

impl AgentSection {
    pub fn resolve(&self) -> Result<AgentConfig> {
        let mut cfg = AgentConfig::preset(&self.variant)?;
        let v = &mut cfg.variant;
        let h = &mut cfg.hyper;
        macro_rules! set {
            ($($field:ident => $dst:expr),* $(,)?) => {
                $(if let Some(x) = self.$field.clone() { $dst = x; })*
            };
        }
        set!(
            ensemble_size => v.ensemble_size,
            mask_prob => v.mask_prob,
            delta_rpf => v.delta_rpf,
            lambda => v.lambda,
            lambda_ucb => v.lambda_ucb,
            hidden => h.hidden,
            lr => h.lr,
            actor_lr => h.actor_lr,
            alpha_lr => h.alpha_lr,
            gamma => h.gamma,
            tau => h.tau,
            batch_size => h.batch_size,
            epsilon_start => h.epsilon_start,
            epsilon_min => h.epsilon_min,
            epsilon_decay => h.epsilon_decay,
            warmup => h.warmup,
            buffer_capacity => h.buffer_capacity,
            initial_alpha => h.initial_alpha,
        );
        if self.fixed_alpha.is_some() {
            h.fixed_alpha = self.fixed_alpha;
        }
        let name = &self.variant;
        let scheme = format!("{:?}", v.weighting);
        let misplaced = |key: &str| {
            Err(Error::config(format!(
                "agent.{key} does not apply to variant {name:?} (weighting {scheme})"
            )))
        };
        match &mut v.weighting {
            WeightScheme::Biv {
                mebs_ratio,
                fixed_xi,
                solver,
            } => {
                if let Some(r) = self.mebs_ratio {
                    *mebs_ratio = r;
                }
                if self.fixed_xi.is_some() {
                    *fixed_xi = self.fixed_xi;
                }
                if let Some(s) = self.xi_solver {
                    *solver = s;
                }
                if self.sunrise_temperature.is_some() {
                    return misplaced("sunrise_temperature");
                }
                if self.uwac_beta.is_some() {
                    return misplaced("uwac_beta");
                }
            }
            other => {
                for (key, set) in [
                    ("mebs_ratio", self.mebs_ratio.is_some()),
                    ("fixed_xi", self.fixed_xi.is_some()),
                    ("xi_solver", self.xi_solver.is_some()),
                ] {
                    if set {
                        return misplaced(key);
                    }
                }
                match other {
                    WeightScheme::Sunrise { temperature } => {
                        if let Some(t) = self.sunrise_temperature {
                            *temperature = t;
                        }
                        if self.uwac_beta.is_some() {
                            return misplaced("uwac_beta");
                        }
                    }
                    WeightScheme::Uwac { beta } => {
                        if let Some(b) = self.uwac_beta {
                            *beta = b;
                        }
                        if self.sunrise_temperature.is_some() {
                            return misplaced("sunrise_temperature");
                        }
                    }
                    _ => {
                        if self.sunrise_temperature.is_some() {
                            return misplaced("sunrise_temperature");
                        }
                        if self.uwac_beta.is_some() {
                            return misplaced("uwac_beta");
                        }
                    }
                }
            }
        }
        if v.family == Family::Dqn
            && (self.actor_lr.is_some() || self.alpha_lr.is_some() || self.initial_alpha.is_some())
        {
            return Err(Error::config(format!(
                "actor_lr, alpha_lr and initial_alpha apply to SAC variants only, not {name:?}"
            )));
        }
        Ok(cfg)
    }
}
