//! DQN and SAC agent families.
//!
//! Every named algorithm is an [`AgentVariant`]: a choice of ensemble size,
//! critic kind (point or variance network), weighting scheme, loss-attenuation
//! weight and exploration rule. [`AgentVariant::preset`] lists them.

mod dqn;
mod sac;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dqn::{greedy_action, plurality_vote, DqnAgent, DqnLearner};
pub use sac::{ucb_select, SacAgent, SacLearner, SacMember, SquashedSample};

use crate::envs::{ActionSpace, EnvSpec};
use crate::replay::{Action, Transition};
use crate::weighting::{SchemeWeights, WeightScheme, XiSolver};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Dqn,
    Sac,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticKind {
    /// One output per action value.
    Point,
    /// Mean and variance heads trained with loss attenuation.
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exploration {
    /// DQN: random action with a per-episode decaying probability.
    EpsilonGreedy,
    /// Follow one uniformly drawn member for a whole episode.
    Thompson,
    /// SAC: every policy proposes an action, the best UCB score wins.
    Ucb,
    /// SAC: sample from the (single) policy.
    Policy,
}

/// How σ²_Q̄ is estimated from the target ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceSource {
    /// Gaussian mixture over variance networks (a single network's own head when N = 1).
    Mixture,
    /// Population variance of point-network means.
    Sampled,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentVariant {
    pub name: String,
    pub family: Family,
    pub ensemble_size: usize,
    pub critic: CriticKind,
    pub weighting: WeightScheme,
    /// Loss-attenuation weight λ.
    pub lambda: f64,
    pub exploration: Exploration,
    pub lambda_ucb: f64,
    pub delta_rpf: f64,
    pub mask_prob: f64,
}

pub const DQN_VARIANTS: &[&str] = &[
    "dqn",
    "bootstrap_dqn",
    "sunrise_dqn",
    "iv_dqn",
    "biv_bootstrap_dqn",
    "l2_var_ensemble_dqn",
    "biv_var_network_dqn",
    "l2_var_network_dqn",
];

pub const SAC_VARIANTS: &[&str] = &[
    "sac",
    "ensemble_sac",
    "sunrise_sac",
    "iv_sac",
    "biv_ensemble_sac",
    "l2_var_ensemble_sac",
    "biv_var_network_sac",
    "l2_var_network_sac",
    "uwac_var_ensemble_sac",
    "sunrise_var_ensemble_sac",
];

impl AgentVariant {
    /// Structural definition of a named algorithm with default hyperparameters.
    pub fn preset(name: &str) -> Result<Self> {
        use CriticKind::*;
        use Exploration::*;
        let biv = |ratio: f64| WeightScheme::Biv {
            mebs_ratio: ratio,
            fixed_xi: None,
            solver: XiSolver::Bisection,
        };
        let (family, n, critic, weighting, lambda, exploration, rpf) = match name {
            "dqn" => (Family::Dqn, 1, Point, WeightScheme::Uniform, 0.0, EpsilonGreedy, false),
            "bootstrap_dqn" => (Family::Dqn, 5, Point, WeightScheme::Uniform, 0.0, Thompson, true),
            "sunrise_dqn" => (
                Family::Dqn,
                5,
                Point,
                WeightScheme::Sunrise { temperature: 20.0 },
                0.0,
                Thompson,
                true,
            ),
            "iv_dqn" => (Family::Dqn, 5, Variance, biv(0.5), 5.0, Thompson, true),
            "biv_bootstrap_dqn" => (Family::Dqn, 5, Point, biv(0.5), 0.0, Thompson, true),
            "l2_var_ensemble_dqn" => (Family::Dqn, 5, Variance, WeightScheme::Uniform, 5.0, Thompson, true),
            "biv_var_network_dqn" => (Family::Dqn, 1, Variance, biv(0.5), 5.0, EpsilonGreedy, false),
            "l2_var_network_dqn" => (
                Family::Dqn,
                1,
                Variance,
                WeightScheme::Uniform,
                5.0,
                EpsilonGreedy,
                false,
            ),
            "sac" => (Family::Sac, 1, Point, WeightScheme::Uniform, 0.0, Policy, false),
            "ensemble_sac" => (Family::Sac, 5, Point, WeightScheme::Uniform, 0.0, Ucb, false),
            "sunrise_sac" => (
                Family::Sac,
                5,
                Point,
                WeightScheme::Sunrise { temperature: 20.0 },
                0.0,
                Ucb,
                false,
            ),
            "iv_sac" => (Family::Sac, 5, Variance, biv(0.9), 5.0, Ucb, false),
            "biv_ensemble_sac" => (Family::Sac, 5, Point, biv(0.9), 0.0, Ucb, false),
            "l2_var_ensemble_sac" => (Family::Sac, 5, Variance, WeightScheme::Uniform, 5.0, Ucb, false),
            "biv_var_network_sac" => (Family::Sac, 1, Variance, biv(0.9), 5.0, Policy, false),
            "l2_var_network_sac" => (Family::Sac, 1, Variance, WeightScheme::Uniform, 5.0, Policy, false),
            "uwac_var_ensemble_sac" => (
                Family::Sac,
                5,
                Variance,
                WeightScheme::Uwac { beta: 1.6 },
                5.0,
                Ucb,
                false,
            ),
            "sunrise_var_ensemble_sac" => (
                Family::Sac,
                5,
                Variance,
                WeightScheme::Sunrise { temperature: 20.0 },
                5.0,
                Ucb,
                false,
            ),
            other => {
                return Err(Error::config(format!(
                    "unknown agent variant {other:?}; known: {}, {}",
                    DQN_VARIANTS.join(", "),
                    SAC_VARIANTS.join(", ")
                )))
            }
        };
        let ensemble = n > 1;
        Ok(Self {
            name: name.to_string(),
            family,
            ensemble_size: n,
            critic,
            weighting,
            lambda,
            exploration,
            lambda_ucb: if exploration == Ucb { 1.0 } else { 0.0 },
            delta_rpf: if rpf { 1.0 } else { 0.0 },
            mask_prob: if ensemble && family == Family::Dqn { 0.5 } else { 1.0 },
        })
    }

    pub fn variance_source(&self) -> VarianceSource {
        match (self.critic, self.ensemble_size) {
            (CriticKind::Variance, _) => VarianceSource::Mixture,
            (CriticKind::Point, n) if n >= 2 => VarianceSource::Sampled,
            _ => VarianceSource::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::config(format!("agent {:?}: {msg}", self.name)));
        if self.ensemble_size == 0 {
            return fail("ensemble_size must be at least 1".into());
        }
        self.weighting.validate()?;
        if self.weighting.uses_variance() && self.variance_source() == VarianceSource::None {
            return fail("variance-based weighting needs variance critics or an ensemble".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.lambda > 0.0 && self.critic != CriticKind::Variance {
            return fail("loss attenuation (lambda > 0) needs variance critics".into());
        }
        if !(self.mask_prob > 0.0 && self.mask_prob <= 1.0) {
            return fail(format!("mask_prob must lie in (0, 1], got {}", self.mask_prob));
        }
        if !(self.delta_rpf >= 0.0 && self.delta_rpf.is_finite()) {
            return fail(format!("delta_rpf must be finite and >= 0, got {}", self.delta_rpf));
        }
        if !(self.lambda_ucb >= 0.0 && self.lambda_ucb.is_finite()) {
            return fail(format!("lambda_ucb must be finite and >= 0, got {}", self.lambda_ucb));
        }
        match (self.family, self.exploration) {
            (Family::Dqn, Exploration::Ucb | Exploration::Policy) => {
                return fail("DQN agents explore with epsilon_greedy or thompson".into())
            }
            (Family::Sac, Exploration::EpsilonGreedy | Exploration::Thompson) => {
                return fail("SAC agents explore with ucb or policy".into())
            }
            _ => {}
        }
        if matches!(self.exploration, Exploration::Ucb | Exploration::Thompson) && self.ensemble_size < 2 {
            return fail("ucb and thompson exploration need an ensemble (ensemble_size >= 2)".into());
        }
        if self.family == Family::Sac && self.delta_rpf != 0.0 {
            return fail("randomized priors are only used by the DQN family".into());
        }
        Ok(())
    }
}

/// Optimisation and exploration settings shared by both families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    pub hidden: Vec<usize>,
    /// DQN learning rate, SAC critic learning rate.
    pub lr: f64,
    pub actor_lr: f64,
    pub alpha_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub epsilon_start: f64,
    pub epsilon_min: f64,
    /// Multiplicative decay of ε per episode.
    pub epsilon_decay: f64,
    /// Transitions collected before the first update.
    pub warmup: usize,
    pub buffer_capacity: usize,
    pub initial_alpha: f64,
    /// Constant entropy coefficient instead of automatic tuning.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_alpha: Option<f64>,
}

impl Hyper {
    pub fn defaults(family: Family) -> Self {
        match family {
            Family::Dqn => Self {
                hidden: vec![64, 64],
                lr: 0.001,
                actor_lr: 0.0,
                alpha_lr: 0.0,
                gamma: 0.99,
                tau: 0.005,
                batch_size: 64,
                epsilon_start: 1.0,
                epsilon_min: 0.01,
                epsilon_decay: 0.98,
                warmup: 1000,
                buffer_capacity: 100_000,
                initial_alpha: 0.0,
                fixed_alpha: None,
            },
            Family::Sac => Self {
                hidden: vec![64, 64],
                lr: 0.0003,
                actor_lr: 0.0003,
                alpha_lr: 0.0003,
                gamma: 0.99,
                tau: 0.005,
                batch_size: 128,
                epsilon_start: 0.0,
                epsilon_min: 0.0,
                epsilon_decay: 1.0,
                warmup: 1000,
                buffer_capacity: 100_000,
                initial_alpha: 1.0,
                fixed_alpha: None,
            },
        }
    }

    pub fn validate(&self, family: Family) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must be finite and > 0, got {v}")))
            }
        };
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config(format!(
                "hidden widths must be non-empty and positive, got {:?}",
                self.hidden
            )));
        }
        positive("lr", self.lr)?;
        if family == Family::Sac {
            positive("actor_lr", self.actor_lr)?;
            if self.fixed_alpha.is_none() {
                positive("alpha_lr", self.alpha_lr)?;
                positive("initial_alpha", self.initial_alpha)?;
            }
        }
        if let Some(a) = self.fixed_alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::config(format!("fixed_alpha must be finite and >= 0, got {a}")));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(Error::config("batch_size and buffer_capacity must be positive"));
        }
        for (name, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_min", self.epsilon_min),
            ("epsilon_decay", self.epsilon_decay),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// A named variant together with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub variant: AgentVariant,
    pub hyper: Hyper,
}

impl AgentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let variant = AgentVariant::preset(name)?;
        let hyper = Hyper::defaults(variant.family);
        Ok(Self { variant, hyper })
    }

    pub fn validate(&self, spec: &EnvSpec) -> Result<()> {
        self.variant.validate()?;
        self.hyper.validate(self.variant.family)?;
        match (self.variant.family, &spec.action_space) {
            (Family::Dqn, ActionSpace::Discrete(_)) | (Family::Sac, ActionSpace::Box { .. }) => Ok(()),
            (family, space) => Err(Error::config(format!(
                "{family:?} agents cannot act in {} (action space {space:?})",
                spec.name
            ))),
        }
    }
}

/// Summary of one update step across ensemble members.
///
/// Fields that do not apply to a variant are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateDiagnostics {
    /// Mean and median of σ²_Q̄ over the minibatch, averaged over members.
    pub var_mean: f64,
    pub var_median: f64,
    pub xi_critic: f64,
    pub xi_actor: f64,
    /// Realized effective batch size of the critic weights, averaged over members.
    pub ebs: f64,
    /// Smallest `EBS - MEBS` over the members of this update.
    pub min_ebs_margin: f64,
    /// Weighted squared-error part of the critic loss.
    pub loss_biv: f64,
    /// Loss-attenuation part of the critic loss (before λ).
    pub loss_la: f64,
    pub members_updated: usize,
}

impl UpdateDiagnostics {
    /// All fields NaN, zero members updated.
    pub fn empty() -> Self {
        Self {
            var_mean: f64::NAN,
            var_median: f64::NAN,
            xi_critic: f64::NAN,
            xi_actor: f64::NAN,
            ebs: f64::NAN,
            min_ebs_margin: f64::NAN,
            loss_biv: f64::NAN,
            loss_la: f64::NAN,
            members_updated: 0,
        }
    }
}

/// Per-member values averaged into [`UpdateDiagnostics`].
#[derive(Debug, Default)]
pub(crate) struct DiagAccumulator {
    var_mean: Vec<f64>,
    var_median: Vec<f64>,
    xi_critic: Vec<f64>,
    xi_actor: Vec<f64>,
    ebs: Vec<f64>,
    margin: Vec<f64>,
    loss_biv: Vec<f64>,
    loss_la: Vec<f64>,
}

pub(crate) struct MemberDiag {
    pub variances: Option<Vec<f64>>,
    pub xi_critic: f64,
    pub xi_actor: f64,
    pub ebs: f64,
    pub mebs: f64,
    pub loss_biv: f64,
    pub loss_la: f64,
}

fn mean_of(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub(crate) fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl DiagAccumulator {
    pub(crate) fn push(&mut self, m: MemberDiag) {
        if let Some(v) = &m.variances {
            self.var_mean.push(mean_of(v));
            self.var_median.push(median(v));
        }
        let keep = |dst: &mut Vec<f64>, x: f64| {
            if !x.is_nan() {
                dst.push(x)
            }
        };
        keep(&mut self.xi_critic, m.xi_critic);
        keep(&mut self.xi_actor, m.xi_actor);
        keep(&mut self.ebs, m.ebs);
        keep(&mut self.margin, m.ebs - m.mebs);
        keep(&mut self.loss_biv, m.loss_biv);
        keep(&mut self.loss_la, m.loss_la);
    }

    pub(crate) fn finish(self, members_updated: usize) -> UpdateDiagnostics {
        UpdateDiagnostics {
            var_mean: mean_of(&self.var_mean),
            var_median: mean_of(&self.var_median),
            xi_critic: mean_of(&self.xi_critic),
            xi_actor: mean_of(&self.xi_actor),
            ebs: mean_of(&self.ebs),
            min_ebs_margin: self.margin.iter().cloned().fold(f64::NAN, f64::min),
            loss_biv: mean_of(&self.loss_biv),
            loss_la: mean_of(&self.loss_la),
            members_updated,
        }
    }
}

/// The interface the experiment loop drives.
pub trait Agent: Send {
    /// Called before the first step of every training episode.
    fn begin_episode(&mut self, episode: usize);
    /// Exploratory action for a (normalised) state.
    fn act(&mut self, state: &[f64]) -> Result<Action>;
    /// Evaluation action: ensemble vote (DQN) or mean policy action (SAC).
    fn act_test(&mut self, state: &[f64]) -> Result<Action>;
    /// Stores a transition and runs an update once the warmup is over.
    fn observe(&mut self, transition: Transition) -> Result<Option<UpdateDiagnostics>>;
}

pub fn build_agent(cfg: &AgentConfig, spec: &EnvSpec, seed: u64) -> Result<Box<dyn Agent>> {
    cfg.validate(spec)?;
    Ok(match cfg.variant.family {
        Family::Dqn => Box::new(DqnAgent::new(cfg.clone(), spec, seed)?),
        Family::Sac => Box::new(SacAgent::new(cfg.clone(), spec, seed)?),
    })
}

/// Critic loss multipliers for a (masked) minibatch of target variances.
///
/// BIV weights use the discounted variances `γ² σ²_Q̄`, the comparison schemes
/// use σ²_Q̄ as is, uniform weighting ignores them.
pub(crate) fn critic_weights(scheme: &WeightScheme, variances: &[f64], gamma: f64, n: usize) -> Result<SchemeWeights> {
    match scheme {
        WeightScheme::Uniform => scheme.batch_weights(&vec![1.0; n]),
        WeightScheme::Biv { .. } => {
            let scaled: Vec<f64> = variances.iter().map(|v| gamma * gamma * v).collect();
            scheme.batch_weights(&scaled)
        }
        _ => scheme.batch_weights(variances),
    }
}

/// Actor loss multipliers from the critic's predictive variance σ²_Q̂.
pub(crate) fn actor_weights(scheme: &WeightScheme, variances: &[f64], n: usize) -> Result<SchemeWeights> {
    match scheme {
        WeightScheme::Uniform => scheme.batch_weights(&vec![1.0; n]),
        _ => scheme.batch_weights(variances),
    }
}

/// Index of the largest value; the first one on ties.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn uniform_index<R: Rng + ?Sized>(rng: &mut R, n: usize) -> usize {
    if n <= 1 {
        0
    } else {
        rng.gen_range(0..n)
    }
}
