//! Classic cart-pole balancing (Barto, Sutton & Anderson dynamics, Euler
//! integration, dt 0.02). Cart mass is fixed at 1.0; the variant knobs are
//! pole mass, half-pole length, and push force.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::ActionValue;

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const TAU: f64 = 0.02;
const THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;
const X_LIMIT: f64 = 2.4;

pub(crate) struct CartPoleEnv {
    mass_pole: f64,
    length: f64, // half the pole length
    force_mag: f64,
    /// (x, x_dot, theta, theta_dot)
    state: [f64; 4],
}

impl CartPoleEnv {
    pub fn new(mass_pole: f64, length: f64, force_mag: f64) -> Self {
        Self { mass_pole, length, force_mag, state: [0.0; 4] }
    }

    pub fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        for s in &mut self.state {
            *s = rng.gen_range(-0.05..0.05);
        }
        self.state.to_vec()
    }

    pub fn step(&mut self, action: &ActionValue) -> Result<(Vec<f64>, f64, bool, bool)> {
        let a = match action {
            ActionValue::Discrete(a) if *a < 2 => *a,
            other => {
                return Err(crate::error::Error::InvalidArg(format!(
                    "cartpole expects discrete action in {{0,1}}, got {other:?}"
                )))
            }
        };
        let force = if a == 1 { self.force_mag } else { -self.force_mag };
        let [x, x_dot, theta, theta_dot] = self.state;
        let total_mass = self.mass_pole + MASS_CART;
        let polemass_length = self.mass_pole * self.length;
        let cos = theta.cos();
        let sin = theta.sin();
        let temp = (force + polemass_length * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (self.length * (4.0 / 3.0 - self.mass_pole * cos * cos / total_mass));
        let x_acc = temp - polemass_length * theta_acc * cos / total_mass;
        self.state = [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ];
        let terminal =
            self.state[0].abs() > X_LIMIT || self.state[2].abs() > THETA_LIMIT;
        Ok((self.state.to_vec(), 1.0, terminal, false))
    }
}
