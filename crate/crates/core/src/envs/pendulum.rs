//! Pendulum swing-up with 5 discrete torque levels.
//!
//! Standard swing-up dynamics (g 10, dt 0.05, speed cap 8). The discrete
//! actions are the normalized levels {-1, -0.5, 0, 0.5, 1} scaled by the
//! usual max torque of 2, i.e. torques {-2, -1, 0, 1, 2}.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::ActionValue;

const G: f64 = 10.0;
const DT: f64 = 0.05;
const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 2.0;
const TORQUE_LEVELS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

pub(crate) struct PendulumEnv {
    mass: f64,
    length: f64,
    /// (theta, theta_dot); theta 0 is upright.
    state: [f64; 2],
}

fn angle_normalize(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut a = (theta + std::f64::consts::PI) % two_pi;
    if a < 0.0 {
        a += two_pi;
    }
    a - std::f64::consts::PI
}

impl PendulumEnv {
    pub fn new(mass: f64, length: f64) -> Self {
        Self { mass, length, state: [0.0; 2] }
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.state[0].cos(), self.state[0].sin(), self.state[1]]
    }

    pub fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.state[0] = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        self.state[1] = rng.gen_range(-1.0..1.0);
        self.obs()
    }

    pub fn step(&mut self, action: &ActionValue) -> Result<(Vec<f64>, f64, bool, bool)> {
        let u = match action {
            ActionValue::Discrete(a) if *a < 5 => TORQUE_LEVELS[*a] * MAX_TORQUE,
            other => {
                return Err(Error::InvalidArg(format!(
                    "pendulum expects discrete action in 0..5, got {other:?}"
                )))
            }
        };
        let [th, th_dot] = self.state;
        let cost = angle_normalize(th).powi(2) + 0.1 * th_dot * th_dot + 0.001 * u * u;
        let mut new_th_dot = th_dot
            + (3.0 * G / (2.0 * self.length) * th.sin()
                + 3.0 / (self.mass * self.length * self.length) * u)
                * DT;
        new_th_dot = new_th_dot.clamp(-MAX_SPEED, MAX_SPEED);
        self.state = [th + new_th_dot * DT, new_th_dot];
        Ok((self.obs(), -cost, false, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torque_levels_span_minus_two_to_two() {
        let mut env = PendulumEnv::new(1.0, 1.0);
        // Upright at rest: sin(theta) = 0, so only the torque term drives
        // the velocity update.
        for (a, expect_u) in [(0usize, -2.0), (1, -1.0), (2, 0.0), (3, 1.0), (4, 2.0)] {
            env.state = [0.0, 0.0];
            let (_, _, _, _) = env.step(&ActionValue::Discrete(a)).unwrap();
            let expect_thdot = 3.0 * expect_u * DT; // 3/(m l^2) * u * dt
            assert!((env.state[1] - expect_thdot).abs() < 1e-12);
        }
    }

    #[test]
    fn reward_is_negative_quadratic_cost() {
        let mut env = PendulumEnv::new(1.0, 1.0);
        env.state = [1.0, 0.5];
        let (_, reward, terminal, _) = env.step(&ActionValue::Discrete(4)).unwrap();
        let expect = -(1.0f64.powi(2) + 0.1 * 0.25 + 0.001 * 4.0);
        assert!((reward - expect).abs() < 1e-12);
        assert!(!terminal);
    }

    #[test]
    fn speed_is_clamped() {
        let mut env = PendulumEnv::new(0.1, 0.5);
        env.state = [std::f64::consts::FRAC_PI_2, 7.9];
        env.step(&ActionValue::Discrete(4)).unwrap();
        assert!(env.state[1] <= MAX_SPEED);
    }

    #[test]
    fn angle_normalize_wraps() {
        assert!((angle_normalize(0.0)).abs() < 1e-15);
        assert!((angle_normalize(2.0 * std::f64::consts::PI)).abs() < 1e-12);
        assert!((angle_normalize(3.0 * std::f64::consts::PI) + std::f64::consts::PI).abs() < 1e-12);
        assert!((angle_normalize(-0.5) + 0.5).abs() < 1e-15);
    }
}
