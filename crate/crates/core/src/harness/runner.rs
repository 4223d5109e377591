//! Runs one seed pair, or a whole config, and writes the metrics files.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::ResolvedConfig;
use super::metrics::{eval_file_name, format_float, metrics_file_name, windowed_mean, write_metrics, MetricsRecord};
use crate::agents::{build_agent, Agent, UpdateDiagnostics};
use crate::envs::Environment;
use crate::replay::Transition;
use crate::rng::{derive, streams};
use crate::{Error, Result};

pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.toml";

/// Outcome of one (env seed, net seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub env_seed: u64,
    pub net_seed: u64,
    pub records: Vec<MetricsRecord>,
    /// Returns of the test-time evaluation episodes after training.
    pub eval_returns: Vec<f64>,
}

impl RunOutput {
    pub fn returns(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.ret).collect()
    }

    pub fn total_steps(&self) -> u64 {
        self.records.last().map_or(0, |r| r.step)
    }
}

#[derive(Default)]
struct EpisodeDiag {
    sums: [f64; 7],
    counts: [usize; 7],
}

impl EpisodeDiag {
    fn push(&mut self, d: &UpdateDiagnostics) {
        let vals = [
            d.var_mean,
            d.var_median,
            d.xi_critic,
            d.xi_actor,
            d.ebs,
            d.loss_biv,
            d.loss_la,
        ];
        for (i, v) in vals.into_iter().enumerate() {
            if !v.is_nan() {
                self.sums[i] += v;
                self.counts[i] += 1;
            }
        }
    }

    fn mean(&self, i: usize) -> f64 {
        if self.counts[i] == 0 {
            f64::NAN
        } else {
            self.sums[i] / self.counts[i] as f64
        }
    }
}

/// Seed of the environment reset for training episode `episode` (0-based).
pub fn episode_seed(env_seed: u64, episode: usize) -> u64 {
    derive(env_seed, streams::ENV_EPISODE, episode as u64)
}

/// Evaluation episodes draw their resets from a disjoint range of indices.
pub fn eval_episode_seed(env_seed: u64, episode: usize) -> u64 {
    derive(env_seed, streams::ENV_EPISODE, (1u64 << 40) + episode as u64)
}

/// Trains one agent. The network seed seeds every agent stream; the
/// environment seed seeds every reset. `observer` sees every update.
pub fn run_single(
    cfg: &ResolvedConfig,
    env_seed: u64,
    net_seed: u64,
    observer: &mut dyn FnMut(&UpdateDiagnostics),
) -> Result<RunOutput> {
    let mut env = cfg.env.build()?;
    let spec = env.spec().clone();
    let mut agent = build_agent(&cfg.agent, &spec, net_seed)?;
    let plan = &cfg.run;
    let mut records = Vec::new();
    let mut returns = Vec::new();
    let mut step: u64 = 0;
    for episode in 0..plan.max_episodes {
        agent.begin_episode(episode);
        let mut s = spec.normalize(&env.reset(episode_seed(env_seed, episode)));
        let mut ret = 0.0;
        let mut diag = EpisodeDiag::default();
        loop {
            let a = agent.act(&s)?;
            let out = env.step(&a)?;
            let s_next = spec.normalize(&out.state);
            ret += out.reward;
            step += 1;
            let t = Transition {
                s,
                a,
                r: out.reward,
                s_next: s_next.clone(),
                done: out.done,
            };
            if let Some(d) = agent.observe(t)? {
                observer(&d);
                diag.push(&d);
            }
            if out.done || out.truncated {
                break;
            }
            s = s_next;
        }
        if !ret.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite return in episode {}",
                episode + 1
            )));
        }
        returns.push(ret);
        let w = windowed_mean(&returns, plan.window);
        records.push(MetricsRecord {
            step,
            episode: episode + 1,
            ret,
            return_w100: w,
            var_mean: diag.mean(0),
            var_median: diag.mean(1),
            xi_critic: diag.mean(2),
            xi_actor: diag.mean(3),
            ebs: diag.mean(4),
            loss_biv: diag.mean(5),
            loss_la: diag.mean(6),
        });
        if (episode + 1) % 50 == 0 {
            log::debug!(
                "env {env_seed} net {net_seed}: episode {} step {step} return_w{} {w:.2}",
                episode + 1,
                plan.window
            );
        }
        if plan.stop_when_solved && returns.len() >= plan.window {
            if let Some(th) = plan.solve_threshold {
                if w >= th {
                    break;
                }
            }
        }
        if plan.max_steps.is_some_and(|m| step >= m) {
            break;
        }
    }
    let eval_returns = evaluate(env.as_mut(), agent.as_mut(), env_seed, plan.eval_episodes)?;
    Ok(RunOutput {
        env_seed,
        net_seed,
        records,
        eval_returns,
    })
}

/// Returns of `episodes` episodes played with test-time actions, without learning.
pub fn evaluate(env: &mut dyn Environment, agent: &mut dyn Agent, env_seed: u64, episodes: usize) -> Result<Vec<f64>> {
    let spec = env.spec().clone();
    let mut out = Vec::with_capacity(episodes);
    for k in 0..episodes {
        let mut s = spec.normalize(&env.reset(eval_episode_seed(env_seed, k)));
        let mut ret = 0.0;
        loop {
            let a = agent.act_test(&s)?;
            let r = env.step(&a)?;
            ret += r.reward;
            if r.done || r.truncated {
                break;
            }
            s = spec.normalize(&r.state);
        }
        out.push(ret);
    }
    Ok(out)
}

pub fn seed_pairs(cfg: &ResolvedConfig) -> Vec<(u64, u64)> {
    let mut pairs = Vec::new();
    for &e in &cfg.run.env_seeds {
        for &n in &cfg.run.net_seeds {
            pairs.push((e, n));
        }
    }
    pairs
}

/// Writes the metrics file (and evaluation file, if any) of one run into `dir`.
pub fn write_output(dir: &Path, out: &RunOutput) -> Result<PathBuf> {
    let path = dir.join(metrics_file_name(out.env_seed, out.net_seed));
    write_metrics(fs::File::create(&path)?, &out.records)?;
    if !out.eval_returns.is_empty() {
        let mut w = csv::Writer::from_path(dir.join(eval_file_name(out.env_seed, out.net_seed)))?;
        w.write_record(["episode", "return"])?;
        for (i, r) in out.eval_returns.iter().enumerate() {
            w.write_record([(i + 1).to_string(), format_float(*r)])?;
        }
        w.flush()?;
    }
    Ok(path)
}

/// Runs the given seed pairs (all of them when `pairs` is None), writing the
/// resolved config and one metrics file per pair into `out_dir`.
pub fn run_experiment_pairs(
    cfg: &ResolvedConfig,
    pairs: Option<&[(u64, u64)]>,
    out_dir: &Path,
) -> Result<Vec<RunOutput>> {
    let pairs = pairs.map_or_else(|| seed_pairs(cfg), <[_]>::to_vec);
    if pairs.is_empty() {
        return Err(Error::config("no seed pairs to run"));
    }
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(RESOLVED_CONFIG_FILE), cfg.to_toml()?)?;
    let one = |&(e, n): &(u64, u64)| -> Result<RunOutput> {
        let out = run_single(cfg, e, n, &mut |_| {})?;
        write_output(out_dir, &out)?;
        log::info!("finished env seed {e}, net seed {n}: {} episodes", out.records.len());
        Ok(out)
    };
    if cfg.run.parallel {
        pairs.par_iter().map(one).collect()
    } else {
        pairs.iter().map(one).collect()
    }
}

pub fn run_experiment(cfg: &ResolvedConfig, out_dir: &Path) -> Result<Vec<RunOutput>> {
    run_experiment_pairs(cfg, None, out_dir)
}
