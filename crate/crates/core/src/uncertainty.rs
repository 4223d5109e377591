//! Variance networks, randomized prior functions and ensemble variance estimators.
//!
//! A variance network emits a mean head and a raw variance head per output; the
//! raw head maps to a variance through `softplus(raw) + VARIANCE_FLOOR`. A frozen
//! prior network adds `delta_rpf * prior(x)` to the mean head only.

use rand::Rng;

use crate::nn::{self, AdamState, MlpParams};
use crate::{Error, Result};

/// Lower bound on every predicted variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Map a raw variance-head output to a variance.
pub fn raw_to_variance(raw: f64) -> f64 {
    nn::softplus(raw) + VARIANCE_FLOOR
}

/// d variance / d raw.
pub fn raw_to_variance_grad(raw: f64) -> f64 {
    nn::sigmoid(raw)
}

/// Raw-head bias giving an initial variance of about one.
pub fn unit_variance_bias() -> f64 {
    nn::softplus_inverse(1.0 - VARIANCE_FLOOR)
}

/// Mean and variance of a value estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarPrediction {
    pub mu: f64,
    pub sigma2: f64,
}

impl VarPrediction {
    pub fn new(mu: f64, sigma2: f64) -> Result<Self> {
        if !mu.is_finite() || !sigma2.is_finite() {
            return Err(Error::numerical(format!("non-finite prediction ({mu}, {sigma2})")));
        }
        if sigma2 < VARIANCE_FLOOR {
            return Err(Error::numerical(format!(
                "variance {sigma2} below floor {VARIANCE_FLOOR}"
            )));
        }
        Ok(Self { mu, sigma2 })
    }
}

/// How an ensemble member's output vector is laid out.
///
/// Discrete Q-networks emit `actions` means followed (for variance networks)
/// by `actions` raw variances. Continuous critics are the `actions == 1` case
/// with the action concatenated to the state input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadLayout {
    pub actions: usize,
    pub variance: bool,
}

impl HeadLayout {
    pub fn output_width(&self) -> usize {
        if self.variance {
            2 * self.actions
        } else {
            self.actions
        }
    }

    pub fn mean_index(&self, action: usize) -> usize {
        action
    }

    pub fn raw_variance_index(&self, action: usize) -> Option<usize> {
        self.variance.then_some(self.actions + action)
    }
}

/// Which action to read from a network.
#[derive(Debug, Clone, Copy)]
pub enum ActionInput<'a> {
    /// Discrete action: the network takes the state and emits one head per action.
    Index(usize),
    /// Continuous action: the network takes the state concatenated with the action.
    Vector(&'a [f64]),
}

/// A trainable network paired with a frozen randomized prior.
#[derive(Debug, Clone)]
pub struct PriorPair {
    pub trainable: MlpParams,
    prior: MlpParams,
    pub delta_rpf: f64,
    pub layout: HeadLayout,
}

impl PriorPair {
    /// `hidden` widths are shared by the trainable and prior networks. The
    /// prior emits means only.
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        layout: HeadLayout,
        delta_rpf: f64,
        trainable_rng: &mut R,
        prior_rng: &mut R,
    ) -> Result<Self> {
        if !(delta_rpf >= 0.0 && delta_rpf.is_finite()) {
            return Err(Error::config(format!(
                "prior scale must be finite and >= 0, got {delta_rpf}"
            )));
        }
        let trainable = init_value_net(input, hidden, layout, trainable_rng)?;
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(layout.actions);
        let prior = MlpParams::init_uniform(&widths, prior_rng)?;
        Ok(Self {
            trainable,
            prior,
            delta_rpf,
            layout,
        })
    }

    /// Assemble from explicit networks (prior must emit one mean per action).
    pub fn from_parts(trainable: MlpParams, prior: MlpParams, delta_rpf: f64, layout: HeadLayout) -> Result<Self> {
        if trainable.output_width() != layout.output_width() || prior.output_width() != layout.actions {
            return Err(Error::config(
                "trainable/prior output widths do not match the head layout",
            ));
        }
        if trainable.input_width() != prior.input_width() {
            return Err(Error::config("trainable and prior input widths differ"));
        }
        Ok(Self {
            trainable,
            prior,
            delta_rpf,
            layout,
        })
    }

    pub fn prior(&self) -> &MlpParams {
        &self.prior
    }
}

/// Randomly initialised value network whose variance heads (if any) start near one.
pub fn init_value_net<R: Rng + ?Sized>(
    input: usize,
    hidden: &[usize],
    layout: HeadLayout,
    rng: &mut R,
) -> Result<MlpParams> {
    let mut widths = vec![input];
    widths.extend_from_slice(hidden);
    widths.push(layout.output_width());
    let mut net = MlpParams::init_uniform(&widths, rng)?;
    if layout.variance {
        let last = net.num_layers() - 1;
        let b0 = unit_variance_bias();
        for a in 0..layout.actions {
            net.bias_mut(last)[layout.actions + a] = b0;
        }
    }
    Ok(net)
}

fn network_input(state: &[f64], action: ActionInput<'_>) -> (Vec<f64>, usize) {
    match action {
        ActionInput::Index(a) => (state.to_vec(), a),
        ActionInput::Vector(v) => {
            let mut x = state.to_vec();
            x.extend_from_slice(v);
            (x, 0)
        }
    }
}

/// Mean and variance of one variance network with its randomized prior.
pub fn var_net_predict(pair: &PriorPair, state: &[f64], action: ActionInput<'_>) -> Result<VarPrediction> {
    let raw_index = |a| {
        pair.layout
            .raw_variance_index(a)
            .ok_or_else(|| Error::config("var_net_predict requires a network with a variance head"))
    };
    let (x, a) = network_input(state, action);
    if a >= pair.layout.actions {
        return Err(Error::config(format!(
            "action {a} out of range ({} actions)",
            pair.layout.actions
        )));
    }
    let ri = raw_index(a)?;
    let out = pair.trainable.forward(&x)?;
    let mut mu = out[pair.layout.mean_index(a)];
    if pair.delta_rpf != 0.0 {
        mu += pair.delta_rpf * pair.prior.forward(&x)?[a];
    }
    VarPrediction::new(mu, raw_to_variance(out[ri]))
}

/// Heteroscedastic Gaussian negative log-likelihood (without constants):
/// `(1/K) Σ (μ - y)² / σ² + ln σ²`.
pub fn loss_attenuation(preds: &[VarPrediction], targets: &[f64]) -> Result<f64> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::config(format!(
            "loss attenuation needs equal non-empty lengths, got {} and {}",
            preds.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (p, &y) in preds.iter().zip(targets) {
        if p.sigma2 < VARIANCE_FLOOR {
            return Err(Error::numerical(format!("variance {} below floor", p.sigma2)));
        }
        let r = p.mu - y;
        total += r * r / p.sigma2 + p.sigma2.ln();
    }
    Ok(total / preds.len() as f64)
}

/// Population mean and variance of ensemble member means.
pub fn sampled_ensemble_variance(mus: &[f64]) -> Result<(f64, f64)> {
    if mus.len() < 2 {
        return Err(Error::config(format!(
            "sampled ensemble variance needs at least two members, got {}",
            mus.len()
        )));
    }
    Ok(mean_and_population_variance(mus))
}

pub(crate) fn mean_and_population_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Moment-matched Gaussian for an equally weighted mixture of member Gaussians.
///
/// Variance is the mean member variance plus the population variance of the means.
pub fn mixture_variance(preds: &[VarPrediction]) -> Result<VarPrediction> {
    if preds.is_empty() {
        return Err(Error::config("mixture of zero members"));
    }
    if preds.len() == 1 {
        return Ok(preds[0]);
    }
    let mus: Vec<f64> = preds.iter().map(|p| p.mu).collect();
    let sigma2s: Vec<f64> = preds.iter().map(|p| p.sigma2).collect();
    let (mu, sigma2) = mixture_moments(&mus, &sigma2s);
    VarPrediction::new(mu, sigma2)
}

/// Mixture mean and variance from raw member moments, without the variance floor.
///
/// Uses the centred form `mean(σ²) + mean((μ - μ̄)²)`, which equals
/// `(1/N) Σ (σ² + μ²) - μ̄²` without its cancellation error.
pub fn mixture_moments(mus: &[f64], sigma2s: &[f64]) -> (f64, f64) {
    debug_assert_eq!(mus.len(), sigma2s.len());
    let n = mus.len() as f64;
    let (mu, var_of_means) = mean_and_population_variance(mus);
    let mean_var = sigma2s.iter().sum::<f64>() / n;
    (mu, mean_var + var_of_means)
}

/// `target <- (1 - tau) target + tau source`, elementwise.
pub fn soft_update(target: &mut MlpParams, source: &MlpParams, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::config(format!("soft update rate must lie in (0, 1], got {tau}")));
    }
    if target.widths() != source.widths() {
        return Err(Error::config("target and source shapes differ"));
    }
    if tau == 1.0 {
        target.as_mut_slice().copy_from_slice(source.as_slice());
        return Ok(());
    }
    for (t, &s) in target.as_mut_slice().iter_mut().zip(source.as_slice()) {
        *t = (1.0 - tau) * *t + tau * s;
    }
    Ok(())
}

/// Ensemble of prior-augmented Q-networks with one-to-one target networks.
#[derive(Debug, Clone)]
pub struct EnsembleState {
    pub members: Vec<PriorPair>,
    pub targets: Vec<MlpParams>,
    pub optims: Vec<AdamState>,
}

impl EnsembleState {
    /// Targets start as exact copies of the trainable networks.
    pub fn new(members: Vec<PriorPair>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::config("ensemble size must be at least 1"));
        }
        let targets = members.iter().map(|m| m.trainable.clone()).collect();
        let optims = members.iter().map(|m| AdamState::for_params(&m.trainable)).collect();
        Ok(Self {
            members,
            targets,
            optims,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn soft_update_member(&mut self, j: usize, tau: f64) -> Result<()> {
        soft_update(&mut self.targets[j], &self.members[j].trainable, tau)
    }
}

/// Soft-update every member's target network.
pub fn soft_update_targets(ens: &mut EnsembleState, tau: f64) -> Result<()> {
    for j in 0..ens.len() {
        ens.soft_update_member(j, tau)?;
    }
    Ok(())
}
