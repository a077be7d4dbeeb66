//! Learning machinery: GAE, clipped-PPO and A2C objectives, the subspace
//! training loop, and the baseline trainers.

mod gae;
pub mod gradcheck;
mod model;
mod objectives;
mod trainer;

pub use gae::{compute_gae, AdvantageEstimate};
pub use model::{Candidate, Network, TrainedModel};
pub use objectives::{
    a2c_policy_loss_grad, critic_loss, critic_loss_grad, diayn_reward, gaussian_z_log_density,
    lc_aux_grad, normalize_in_place, ppo_clip_objective, ppo_clip_term, ppo_policy_loss_grad,
    skill_disc_ce_grad, z_density_nll_grad, PolicyTermSums, Z_DENSITY_STD,
};
pub use trainer::{
    default_config, reductions, train, Algo, MethodSpec, TrainConfig, TrainLogRecord, TrainRun,
};
