use rand::{Rng, SeedableRng};

use super::{check_max_steps, ActionSpace, EnvSpec, Environment, EpisodeClock, StepResult};
use crate::replay::Action;
use crate::rng::RunRng;
use crate::Result;

const MIN_POSITION: f64 = -1.2;
const MAX_POSITION: f64 = 0.6;
const MAX_SPEED: f64 = 0.07;
const GOAL_POSITION: f64 = 0.5;
const FORCE: f64 = 0.001;
const GRAVITY: f64 = 0.0025;

/// Under-powered car in a valley; actions push left, coast, or push right.
#[derive(Debug, Clone)]
pub struct MountainCar {
    spec: EnvSpec,
    position: f64,
    velocity: f64,
    clock: EpisodeClock,
    rng: RunRng,
}

impl MountainCar {
    pub fn new(max_steps: usize) -> Result<Self> {
        check_max_steps(max_steps)?;
        Ok(Self {
            spec: EnvSpec {
                name: "mountain_car",
                state_dim: 2,
                action_space: ActionSpace::Discrete(3),
                max_steps,
                solve_threshold: Some(-150.0),
                obs_offset: vec![-0.3, 0.0],
                obs_scale: vec![0.9, MAX_SPEED],
            },
            position: 0.0,
            velocity: 0.0,
            clock: EpisodeClock::default(),
            rng: RunRng::seed_from_u64(0),
        })
    }

    pub fn set_state(&mut self, position: f64, velocity: f64) {
        self.position = position;
        self.velocity = velocity;
    }
}

impl Environment for MountainCar {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = RunRng::seed_from_u64(seed);
        self.position = self.rng.gen_range(-0.6..-0.4);
        self.velocity = 0.0;
        self.clock.reset();
        vec![self.position, self.velocity]
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        self.spec.action_space.check(action)?;
        let a = action.index().unwrap_or(1) as f64;
        self.velocity += (a - 1.0) * FORCE - GRAVITY * (3.0 * self.position).cos();
        self.velocity = self.velocity.clamp(-MAX_SPEED, MAX_SPEED);
        self.position = (self.position + self.velocity).clamp(MIN_POSITION, MAX_POSITION);
        if self.position == MIN_POSITION && self.velocity < 0.0 {
            self.velocity = 0.0;
        }
        let done = self.position >= GOAL_POSITION && self.velocity >= 0.0;
        let truncated = self.clock.tick(done, self.spec.max_steps)?;
        Ok(StepResult {
            state: vec![self.position, self.velocity],
            reward: -1.0,
            done,
            truncated,
        })
    }
}
