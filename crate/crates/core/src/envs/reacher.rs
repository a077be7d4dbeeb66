//! Point-mass reacher with continuous actions in (-1, 1)^2.
//!
//! Velocity integration with friction: v <- friction * v + scale * a,
//! p <- p + v. Reward is the negated distance to the fixed goal (1, 1).
//! Start is the origin with zero velocity, so episodes are deterministic
//! given the action sequence.

use crate::error::{Error, Result};
use crate::nn::ActionValue;

const GOAL: [f64; 2] = [1.0, 1.0];

pub(crate) struct ReacherEnv {
    action_scale: f64,
    friction: f64,
    pos: [f64; 2],
    vel: [f64; 2],
}

impl ReacherEnv {
    pub fn new(action_scale: f64, friction: f64) -> Self {
        Self { action_scale, friction, pos: [0.0; 2], vel: [0.0; 2] }
    }

    fn obs(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }

    pub fn reset(&mut self) -> Vec<f64> {
        self.pos = [0.0; 2];
        self.vel = [0.0; 2];
        self.obs()
    }

    pub fn step(&mut self, action: &ActionValue) -> Result<(Vec<f64>, f64, bool, bool)> {
        let a = match action {
            ActionValue::Continuous(a) if a.len() == 2 => a,
            other => {
                return Err(Error::InvalidArg(format!(
                    "reacher expects a 2d continuous action, got {other:?}"
                )))
            }
        };
        for d in 0..2 {
            let clipped = a[d].clamp(-1.0, 1.0);
            self.vel[d] = self.friction * self.vel[d] + self.action_scale * clipped;
            self.pos[d] += self.vel[d];
        }
        let dist =
            ((self.pos[0] - GOAL[0]).powi(2) + (self.pos[1] - GOAL[1]).powi(2)).sqrt();
        Ok((self.obs(), -dist, false, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_origin_at_rest() {
        let mut env = ReacherEnv::new(0.05, 0.8);
        assert_eq!(env.reset(), vec![0.0; 4]);
    }

    #[test]
    fn one_step_kinematics() {
        let mut env = ReacherEnv::new(0.05, 0.8);
        env.reset();
        let (obs, reward, _, _) = env.step(&ActionValue::Continuous(vec![1.0, -0.5])).unwrap();
        assert!((obs[0] - 0.05).abs() < 1e-15);
        assert!((obs[1] + 0.025).abs() < 1e-15);
        let dist = ((0.05f64 - 1.0).powi(2) + (-0.025f64 - 1.0).powi(2)).sqrt();
        assert!((reward + dist).abs() < 1e-15);
    }

    #[test]
    fn proportional_controller_reaches_the_goal() {
        let mut env = ReacherEnv::new(0.05, 0.8);
        env.reset();
        let mut last_reward = f64::NEG_INFINITY;
        for _ in 0..100 {
            let a: Vec<f64> = (0..2)
                .map(|d| (4.0 * (GOAL[d] - env.pos[d]) - 2.0 * env.vel[d]).clamp(-1.0, 1.0))
                .collect();
            let (_, r, _, _) = env.step(&ActionValue::Continuous(a)).unwrap();
            last_reward = r;
        }
        assert!(last_reward > -0.15, "reward {last_reward}");
    }
}
