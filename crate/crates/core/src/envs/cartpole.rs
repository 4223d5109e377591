use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

use super::{check_max_steps, ActionSpace, EnvSpec, Environment, EpisodeClock, StepResult};
use crate::replay::Action;
use crate::rng::RunRng;
use crate::{Error, Result};

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * HALF_LENGTH;
const FORCE: f64 = 10.0;
const DT: f64 = 0.02;
const THETA_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
const X_LIMIT: f64 = 2.4;

/// Classic cart-pole with Euler integration and Gaussian noise on the
/// per-step reward.
#[derive(Debug, Clone)]
pub struct CartPoleNoise {
    spec: EnvSpec,
    noise_std: f64,
    state: [f64; 4],
    clock: EpisodeClock,
    rng: RunRng,
}

impl CartPoleNoise {
    pub fn new(noise_std: f64, max_steps: usize) -> Result<Self> {
        check_max_steps(max_steps)?;
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::config(format!("noise_std must be >= 0, got {noise_std}")));
        }
        Ok(Self {
            spec: EnvSpec {
                name: "cartpole_noise",
                state_dim: 4,
                action_space: ActionSpace::Discrete(2),
                max_steps,
                solve_threshold: Some(750.0),
                obs_offset: vec![0.0; 4],
                obs_scale: vec![2.4, 2.0, THETA_LIMIT, 2.0],
            },
            noise_std,
            state: [0.0; 4],
            clock: EpisodeClock::default(),
            rng: RunRng::seed_from_u64(0),
        })
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
    }
}

impl Environment for CartPoleNoise {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = RunRng::seed_from_u64(seed);
        for x in self.state.iter_mut() {
            *x = self.rng.gen_range(-0.05..0.05);
        }
        self.clock.reset();
        self.state.to_vec()
    }

    fn step(&mut self, action: &Action) -> Result<StepResult> {
        self.spec.action_space.check(action)?;
        let force = if action.index() == Some(1) { FORCE } else { -FORCE };
        let [x, x_dot, theta, theta_dot] = self.state;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin - cos * temp) / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
        self.state = [
            x + DT * x_dot,
            x_dot + DT * x_acc,
            theta + DT * theta_dot,
            theta_dot + DT * theta_acc,
        ];
        let done = self.state[0].abs() > X_LIMIT || self.state[2].abs() > THETA_LIMIT;
        let truncated = self.clock.tick(done, self.spec.max_steps)?;
        let noise = if self.noise_std > 0.0 {
            Normal::new(0.0, self.noise_std)
                .expect("validated noise scale")
                .sample(&mut self.rng)
        } else {
            0.0
        };
        Ok(StepResult {
            state: self.state.to_vec(),
            reward: 1.0 + noise,
            done,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_seeded_and_small() {
        let mut env = CartPoleNoise::new(1.0, 1000).unwrap();
        let a = env.reset(42);
        let b = env.reset(42);
        assert_eq!(a, b);
        assert_ne!(a, env.reset(43));
        for seed in 0..200 {
            assert!(env.reset(seed).iter().all(|x| x.abs() <= 0.05));
        }
    }

    #[test]
    fn one_euler_step_by_hand() {
        let mut env = CartPoleNoise::new(0.0, 1000).unwrap();
        env.reset(0);
        env.set_state([0.0; 4]);
        let r = env.step(&Action::Discrete(1)).unwrap();
        // From rest: temp = 10/1.1, theta_acc = -temp / (0.5 (4/3 - 0.1/1.1)).
        let temp = 10.0 / 1.1;
        let theta_acc = -temp / (0.5 * (4.0 / 3.0 - 0.1 / 1.1));
        let x_acc = temp - 0.05 * theta_acc / 1.1;
        assert_eq!(r.state, vec![0.0, 0.02 * x_acc, 0.0, 0.02 * theta_acc]);
        assert_eq!(r.reward, 1.0);
    }

    #[test]
    fn zero_noise_rewards_are_exactly_one() {
        let mut env = CartPoleNoise::new(0.0, 1000).unwrap();
        env.reset(5);
        let mut total = 0.0;
        let mut steps = 0;
        loop {
            let r = env.step(&Action::Discrete(steps % 2)).unwrap();
            total += r.reward;
            steps += 1;
            if r.done || r.truncated {
                break;
            }
        }
        assert_eq!(total, steps as f64);
    }

    #[test]
    fn noisy_and_clean_trajectories_share_physics() {
        let run = |noise: f64| {
            let mut env = CartPoleNoise::new(noise, 1000).unwrap();
            env.reset(9);
            let mut states = Vec::new();
            let mut rewards = Vec::new();
            for t in 0..20 {
                let r = env.step(&Action::Discrete((t / 3) % 2)).unwrap();
                states.push(r.state);
                rewards.push(r.reward);
                if r.done {
                    break;
                }
            }
            (states, rewards)
        };
        let (s0, r0) = run(0.0);
        let (s1, r1) = run(1.0);
        assert_eq!(s0, s1);
        assert_ne!(r0, r1);
        assert_eq!(run(1.0), (s1, r1));
    }

    #[test]
    fn pushing_one_way_terminates() {
        let mut env = CartPoleNoise::new(1.0, 1000).unwrap();
        env.reset(1);
        let mut n = 0;
        while !env.step(&Action::Discrete(0)).unwrap().done {
            n += 1;
            assert!(n < 200);
        }
    }
}
