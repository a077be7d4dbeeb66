//! Vectorized rollout acquisition.
//!
//! Each lane owns one environment, its own rng streams, and is pinned to one
//! policy (one mixed parameter vector / one z) for the whole acquisition
//! segment. Batches are time-major: index = t * n_lanes + lane.

use rand_chacha::ChaCha8Rng;

use crate::envs::{EnvInstance, EnvVariant};
use crate::error::Result;
use crate::nn::{ActionValue, MlpSpec, ParamVector};
use crate::rng;

/// One slot of the vectorized rollout. Episodes persist across acquisition
/// segments and auto-reset on termination.
pub struct EnvLane {
    pub env: EnvInstance,
    pub obs: Vec<f64>,
    env_rng: ChaCha8Rng,
    act_rng: ChaCha8Rng,
    episode_return: f64,
}

impl EnvLane {
    pub fn new(variant: &EnvVariant, seed: u64, lane: u64) -> Result<Self> {
        let mut env_rng = rng::lane_stream(seed, "env", lane);
        let act_rng = rng::lane_stream(seed, "act", lane);
        let mut env = variant.make_env()?;
        let obs = env.reset(&mut env_rng);
        Ok(Self { env, obs, env_rng, act_rng, episode_return: 0.0 })
    }
}

/// Per-lane policy for one acquisition segment. `policy_aug` is appended to
/// the raw observation before the policy forward pass (z one-hots, scalar z,
/// ... empty for plain policies); `critic_aug` likewise for the critic.
pub struct LanePolicy<'a> {
    pub params: &'a ParamVector,
    pub policy_aug: Vec<f64>,
    pub critic_aug: Vec<f64>,
}

/// Time-major transition batch from one acquisition segment.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub n_lanes: usize,
    pub n_steps: usize,
    /// Raw (masked) environment observations, before augmentation.
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<ActionValue>,
    /// Pre-squash Gaussian draws for continuous actions.
    pub pre_squash: Vec<Option<Vec<f64>>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub values: Vec<f64>,
    /// Critic value of each lane's observation at segment end.
    pub bootstrap_values: Vec<f64>,
    /// Per-lane policy-input augmentation (constant within the segment).
    pub lane_policy_aug: Vec<Vec<f64>>,
    /// Per-lane critic-input augmentation.
    pub lane_critic_aug: Vec<Vec<f64>>,
    /// Returns of episodes that finished inside this segment.
    pub completed_returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn idx(&self, t: usize, lane: usize) -> usize {
        t * self.n_lanes + lane
    }

    pub fn len(&self) -> usize {
        self.n_lanes * self.n_steps
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lane_of(&self, idx: usize) -> usize {
        idx % self.n_lanes
    }

    /// Policy input for transition `idx`: raw obs plus the lane's augmentation.
    pub fn policy_input(&self, idx: usize) -> Vec<f64> {
        let lane = self.lane_of(idx);
        let mut v = self.obs[idx].clone();
        v.extend_from_slice(&self.lane_policy_aug[lane]);
        v
    }

    /// Critic input for transition `idx`.
    pub fn critic_input(&self, idx: usize) -> Vec<f64> {
        let lane = self.lane_of(idx);
        let mut v = self.obs[idx].clone();
        v.extend_from_slice(&self.lane_critic_aug[lane]);
        v
    }
}

/// Runs `n_steps` of every lane with its pinned policy, recording values from
/// `critic` when provided. Auto-resets finished episodes.
pub fn rollout(
    lanes: &mut [EnvLane],
    policy_spec: &MlpSpec,
    lane_policies: &[LanePolicy],
    critic: Option<(&MlpSpec, &ParamVector)>,
    n_steps: usize,
) -> Result<RolloutBatch> {
    assert_eq!(lanes.len(), lane_policies.len());
    let n_lanes = lanes.len();
    let total = n_lanes * n_steps;
    let mut batch = RolloutBatch {
        n_lanes,
        n_steps,
        obs: Vec::with_capacity(total),
        actions: Vec::with_capacity(total),
        pre_squash: Vec::with_capacity(total),
        log_probs: Vec::with_capacity(total),
        rewards: Vec::with_capacity(total),
        dones: Vec::with_capacity(total),
        values: Vec::with_capacity(total),
        bootstrap_values: Vec::with_capacity(n_lanes),
        lane_policy_aug: lane_policies.iter().map(|p| p.policy_aug.clone()).collect(),
        lane_critic_aug: lane_policies.iter().map(|p| p.critic_aug.clone()).collect(),
        completed_returns: Vec::new(),
    };

    let mut input = Vec::new();
    for _t in 0..n_steps {
        for (lane, policy) in lanes.iter_mut().zip(lane_policies) {
            input.clear();
            input.extend_from_slice(&lane.obs);
            input.extend_from_slice(&policy.policy_aug);
            let dist = policy_spec.forward(policy.params, &input)?;
            let sampled = policy_spec.head.sample(&dist, &mut lane.act_rng)?;

            let value = match critic {
                Some((cspec, cparams)) => {
                    input.clear();
                    input.extend_from_slice(&lane.obs);
                    input.extend_from_slice(&policy.critic_aug);
                    cspec.forward(cparams, &input)?[0]
                }
                None => 0.0,
            };

            let step = lane.env.step(&sampled.action)?;
            lane.episode_return += step.reward;

            batch.obs.push(std::mem::take(&mut lane.obs));
            batch.actions.push(sampled.action);
            batch.pre_squash.push(sampled.pre_squash);
            batch.log_probs.push(sampled.log_prob);
            batch.rewards.push(step.reward);
            batch.dones.push(step.done);
            batch.values.push(value);

            if step.done {
                batch.completed_returns.push(lane.episode_return);
                lane.episode_return = 0.0;
                lane.obs = lane.env.reset(&mut lane.env_rng);
            } else {
                lane.obs = step.obs;
            }
        }
    }

    for (lane, policy) in lanes.iter().zip(lane_policies) {
        let v = match critic {
            Some((cspec, cparams)) => {
                let mut inp = lane.obs.clone();
                inp.extend_from_slice(&policy.critic_aug);
                cspec.forward(cparams, &inp)?[0]
            }
            None => 0.0,
        };
        batch.bootstrap_values.push(v);
    }
    Ok(batch)
}
