//! Generalized Advantage Estimation over time-major batches.

use crate::error::{Error, Result};
use crate::rollout::RolloutBatch;

/// Advantages and rewards-to-go, same layout as the batch rewards.
#[derive(Debug, Clone)]
pub struct AdvantageEstimate {
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

/// delta_t = r_t + gamma * V(s_{t+1}) * (1 - done_t) - V(s_t)
/// A_t     = delta_t + gamma * lambda * (1 - done_t) * A_{t+1}
/// R_t     = A_t + V(s_t)
///
/// Non-terminal segment ends bootstrap from `batch.bootstrap_values`.
pub fn compute_gae(batch: &RolloutBatch, gamma: f64, lambda: f64) -> Result<AdvantageEstimate> {
    let n = batch.len();
    if batch.values.len() != n || batch.rewards.len() != n || batch.dones.len() != n {
        return Err(Error::DimMismatch { what: "gae batch arrays", expected: n, got: batch.values.len() });
    }
    if batch.bootstrap_values.len() != batch.n_lanes {
        return Err(Error::DimMismatch {
            what: "bootstrap values",
            expected: batch.n_lanes,
            got: batch.bootstrap_values.len(),
        });
    }
    let mut advantages = vec![0.0; n];
    let mut returns = vec![0.0; n];
    for lane in 0..batch.n_lanes {
        let mut carry = 0.0;
        for t in (0..batch.n_steps).rev() {
            let idx = batch.idx(t, lane);
            let not_done = if batch.dones[idx] { 0.0 } else { 1.0 };
            let next_v = if batch.dones[idx] {
                0.0
            } else if t + 1 == batch.n_steps {
                batch.bootstrap_values[lane]
            } else {
                batch.values[batch.idx(t + 1, lane)]
            };
            let delta = batch.rewards[idx] + gamma * next_v - batch.values[idx];
            carry = delta + gamma * lambda * not_done * carry;
            advantages[idx] = carry;
            returns[idx] = carry + batch.values[idx];
        }
    }
    Ok(AdvantageEstimate { advantages, returns })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn synthetic_batch(n_lanes: usize, n_steps: usize, seed: u64) -> RolloutBatch {
        let mut r = crate::rng::stream(seed, "gae-test");
        let total = n_lanes * n_steps;
        RolloutBatch {
            n_lanes,
            n_steps,
            obs: vec![vec![]; total],
            actions: vec![crate::nn::ActionValue::Discrete(0); total],
            pre_squash: vec![None; total],
            log_probs: vec![0.0; total],
            rewards: (0..total).map(|_| r.gen_range(-1.0..1.0)).collect(),
            dones: (0..total).map(|_| r.gen_bool(0.2)).collect(),
            values: (0..total).map(|_| r.gen_range(-1.0..1.0)).collect(),
            bootstrap_values: (0..n_lanes).map(|_| r.gen_range(-1.0..1.0)).collect(),
            lane_policy_aug: vec![vec![]; n_lanes],
            lane_critic_aug: vec![vec![]; n_lanes],
            completed_returns: vec![],
        }
    }

    /// Brute-force oracle: A_t = sum_k (gamma * lambda)^k delta_{t+k}, the sum
    /// stopping after a terminal step.
    fn brute_force(batch: &RolloutBatch, gamma: f64, lambda: f64) -> Vec<f64> {
        let mut adv = vec![0.0; batch.len()];
        for lane in 0..batch.n_lanes {
            for t in 0..batch.n_steps {
                let mut acc = 0.0;
                let mut weight = 1.0;
                for k in t..batch.n_steps {
                    let idx = batch.idx(k, lane);
                    let next_v = if batch.dones[idx] {
                        0.0
                    } else if k + 1 == batch.n_steps {
                        batch.bootstrap_values[lane]
                    } else {
                        batch.values[batch.idx(k + 1, lane)]
                    };
                    let delta = batch.rewards[idx] + gamma * next_v - batch.values[idx];
                    acc += weight * delta;
                    if batch.dones[idx] {
                        break;
                    }
                    weight *= gamma * lambda;
                }
                adv[batch.idx(t, lane)] = acc;
            }
        }
        adv
    }

    #[test]
    fn one_step_td_arithmetic() {
        // lambda = 0, r = 1, V(s) = 0.5, V(s') = 1.0, gamma = 0.99, not done.
        let mut b = synthetic_batch(1, 2, 0);
        b.rewards = vec![1.0, 0.0];
        b.values = vec![0.5, 1.0];
        b.dones = vec![false, false];
        b.bootstrap_values = vec![0.0];
        let est = compute_gae(&b, 0.99, 0.0).unwrap();
        assert!((est.advantages[0] - 1.49).abs() < 1e-12);
        assert!((est.returns[0] - (1.49 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn terminal_single_step() {
        let mut b = synthetic_batch(1, 1, 0);
        b.rewards = vec![1.0];
        b.values = vec![0.3];
        b.dones = vec![true];
        b.bootstrap_values = vec![123.0]; // must be ignored at a terminal
        for lambda in [0.0, 0.5, 1.0] {
            let est = compute_gae(&b, 0.99, lambda).unwrap();
            assert!((est.advantages[0] - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn lambda_one_is_discounted_monte_carlo_minus_baseline() {
        let gamma = 0.97;
        let b = synthetic_batch(3, 8, 7);
        let est = compute_gae(&b, gamma, 1.0).unwrap();
        // Independent oracle: discounted reward sum (with bootstrap at the
        // segment edge) minus V(s_t).
        for lane in 0..b.n_lanes {
            for t in 0..b.n_steps {
                let mut ret = 0.0;
                let mut w = 1.0;
                for k in t..b.n_steps {
                    let idx = b.idx(k, lane);
                    ret += w * b.rewards[idx];
                    w *= gamma;
                    if b.dones[idx] {
                        break;
                    }
                    if k + 1 == b.n_steps {
                        ret += w * b.bootstrap_values[lane];
                    }
                }
                let expect = ret - b.values[b.idx(t, lane)];
                let got = est.advantages[b.idx(t, lane)];
                assert!((got - expect).abs() < 1e-10, "lane {lane} t {t}: {got} vs {expect}");
            }
        }
    }

    #[test]
    fn lambda_zero_is_the_td_error() {
        let b = synthetic_batch(2, 6, 9);
        let est = compute_gae(&b, 0.99, 0.0).unwrap();
        for lane in 0..b.n_lanes {
            for t in 0..b.n_steps {
                let idx = b.idx(t, lane);
                let next_v = if b.dones[idx] {
                    0.0
                } else if t + 1 == b.n_steps {
                    b.bootstrap_values[lane]
                } else {
                    b.values[b.idx(t + 1, lane)]
                };
                let delta = b.rewards[idx] + 0.99 * next_v - b.values[idx];
                assert!((est.advantages[idx] - delta).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn random_lambda_matches_brute_force() {
        let mut meta = crate::rng::stream(11, "gae-meta");
        for trial in 0..20 {
            let lambda: f64 = meta.gen();
            let gamma: f64 = meta.gen_range(0.9..1.0);
            let b = synthetic_batch(3, 8, 100 + trial);
            let est = compute_gae(&b, gamma, lambda).unwrap();
            let oracle = brute_force(&b, gamma, lambda);
            for i in 0..b.len() {
                assert!(
                    (est.advantages[i] - oracle[i]).abs() < 1e-10,
                    "trial {trial} idx {i}: {} vs {}",
                    est.advantages[i],
                    oracle[i]
                );
                assert!((est.returns[i] - (oracle[i] + b.values[i])).abs() < 1e-10);
            }
        }
    }
}
