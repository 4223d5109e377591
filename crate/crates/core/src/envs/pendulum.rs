use std::f64::consts::PI;

use rand::{Rng, SeedableRng};

use super::{check_max_steps, ActionSpace, EnvSpec, Environment, EpisodeClock, StepResult};
use crate::replay::Action;
use crate::rng::RunRng;
use crate::Result;

const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 2.0;
const DT: f64 = 0.05;
const G: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;

/// Pendulum swing-up with torque in `[-2, 2]`; observations are
/// `[cos θ, sin θ, θ̇]` with θ = 0 upright.
#[derive(Debug, Clone)]
pub struct Pendulum {
    spec: EnvSpec,
    theta: f64,
    theta_dot: f64,
    clock: EpisodeClock,
    rng: RunRng,
}

fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    pub fn new(max_steps: usize) -> Result<Self> {
        check_max_steps(max_steps)?;
        Ok(Self {
            spec: EnvSpec {
                name: "pendulum",
                state_dim: 3,
                action_space: ActionSpace::Box {
                    low: vec![-MAX_TORQUE],
                    high: vec![MAX_TORQUE],
                },
                max_steps,
                solve_threshold: None,
                obs_offset: vec![0.0; 3],
                obs_scale: vec![1.0, 1.0, MAX_SPEED],
            },
            theta: 0.0,
            theta_dot: 0.0,
            clock: EpisodeClock::default(),
            rng: RunRng::seed_from_u64(0),
        })
    }

    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = RunRng::seed_from_u64(seed);
        self.theta = self.rng.gen_range(-PI..PI);
        self.theta_dot = self.rng.gen_range(-1.0..1.0);
        self.clock.reset();
        self.observe()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        self.spec.action_space.check(action)?;
        let u = action
            .vector()
            .map(|v| v[0])
            .unwrap_or(0.0)
            .clamp(-MAX_TORQUE, MAX_TORQUE);
        let th = angle_normalize(self.theta);
        let cost = th * th + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u;
        let acc = 3.0 * G / (2.0 * LENGTH) * self.theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u;
        self.theta_dot = (self.theta_dot + acc * DT).clamp(-MAX_SPEED, MAX_SPEED);
        self.theta += self.theta_dot * DT;
        let truncated = self.clock.tick(false, self.spec.max_steps)?;
        Ok(StepResult {
            state: self.observe(),
            reward: -cost,
            done: false,
            truncated,
        })
    }
}
