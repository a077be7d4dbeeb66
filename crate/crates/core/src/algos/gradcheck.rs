//! Central finite-difference verification of every analytic gradient in the
//! crate: policy surrogates (PPO and A2C, both heads), the z-conditioned
//! critic, the cosine anti-collapse penalty, the DIAYN discriminators, the
//! Lc auxiliary term, and the anchor chain rule.
//!
//! Backs the `gradcheck` CLI command and the gradient-oracle acceptance
//! check.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{
    finite_diff_check, ActionValue, Gradient, Head, MlpSpec, ParamVector, FD_DEFAULT_STEP,
};
use crate::rng;
use crate::rollout::RolloutBatch;
use crate::subspace::{cosine_sq_penalty, mix_anchors, AnchorSet, MixMode, SimplexWeight};

use super::objectives::{
    a2c_policy_loss_grad, critic_loss_grad, lc_aux_grad, ppo_policy_loss_grad, skill_disc_ce_grad,
    z_density_nll_grad,
};

/// One verified gradient instance.
#[derive(Debug, Clone)]
pub struct GradCheckCase {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl GradCheckCase {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

/// Synthetic batch with random observations, sampled actions, and random
/// advantages/returns; lanes carry the given augmentations.
#[allow(clippy::too_many_arguments)]
fn synthetic_batch(
    r: &mut ChaCha8Rng,
    spec: &MlpSpec,
    params: &ParamVector,
    obs_dim: usize,
    n_lanes: usize,
    n_steps: usize,
    lane_policy_aug: Vec<Vec<f64>>,
    lane_critic_aug: Vec<Vec<f64>>,
) -> RolloutBatch {
    let total = n_lanes * n_steps;
    let mut batch = RolloutBatch {
        n_lanes,
        n_steps,
        obs: Vec::with_capacity(total),
        actions: Vec::with_capacity(total),
        pre_squash: Vec::with_capacity(total),
        log_probs: Vec::with_capacity(total),
        rewards: (0..total).map(|_| r.gen_range(-1.0..1.0)).collect(),
        dones: (0..total).map(|_| r.gen_bool(0.15)).collect(),
        values: (0..total).map(|_| r.gen_range(-1.0..1.0)).collect(),
        bootstrap_values: (0..n_lanes).map(|_| r.gen_range(-1.0..1.0)).collect(),
        lane_policy_aug,
        lane_critic_aug,
        completed_returns: vec![],
    };
    for i in 0..total {
        let obs: Vec<f64> = (0..obs_dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mut input = obs.clone();
        input.extend_from_slice(&batch.lane_policy_aug[i % n_lanes]);
        let dist = spec.forward(params, &input).unwrap();
        let s = spec.head.sample(&dist, r).unwrap();
        batch.obs.push(obs);
        batch.actions.push(s.action);
        batch.pre_squash.push(s.pre_squash);
        // Old-policy log-prob offset kept small so PPO ratios stay strictly
        // inside the clip region; the min() kink would wreck central
        // differences, and the clipped branch is covered by exact unit tests.
        batch.log_probs.push(s.log_prob + r.gen_range(-0.1..0.1));
    }
    batch
}

fn policy_spec_for(r: &mut ChaCha8Rng, input: usize, gaussian: bool) -> MlpSpec {
    let h = 3 + (r.gen::<u64>() % 3) as usize;
    let head = if gaussian {
        Head::SquashedGaussian { action_dim: 2, std: 0.5 }
    } else {
        Head::Categorical { n_actions: 3 }
    };
    MlpSpec::new(input, vec![h], head).unwrap()
}

/// Runs the whole verification suite: `instances` random cases spread over
/// the loss families, each checked against central finite differences at
/// tolerance `tol`.
pub fn gradient_oracle_suite(instances: usize, tol: f64) -> Result<Vec<GradCheckCase>> {
    let mut cases = Vec::with_capacity(instances);
    let mut meta = rng::stream(0x67726164, "gradcheck");
    for trial in 0..instances {
        let r = &mut meta;
        let case = match trial % 8 {
            0 => ppo_case(r, trial, false)?,
            1 => ppo_case(r, trial, true)?,
            2 => a2c_case(r, trial)?,
            3 => critic_case(r, trial)?,
            4 => cosine_case(r, trial)?,
            5 => skill_disc_case(r, trial)?,
            6 => z_density_case(r, trial)?,
            7 => lc_case(r, trial)?,
            _ => unreachable!(),
        };
        cases.push(GradCheckCase { tol, ..case });
    }
    // Anchor chain rule gets a fixed share of extra cases.
    for trial in 0..(instances / 8).max(2) {
        let case = anchor_chain_case(&mut meta, trial)?;
        cases.push(GradCheckCase { tol, ..case });
    }
    Ok(cases)
}

fn ppo_case(r: &mut ChaCha8Rng, trial: usize, gaussian: bool) -> Result<GradCheckCase> {
    let obs_dim = 3;
    let spec = policy_spec_for(r, obs_dim, gaussian);
    let mut ir = rng::stream(500 + trial as u64, "gc-init");
    let params = spec.init_params(&mut ir);
    let batch = synthetic_batch(r, &spec, &params, obs_dim, 2, 4, vec![vec![]; 2], vec![vec![]; 2]);
    let idxs: Vec<usize> = (0..batch.len()).collect();
    let adv: Vec<f64> = (0..batch.len()).map(|_| r.gen_range(-2.0..2.0)).collect();
    let clip = 0.3;
    let ent = 0.01;
    let mut grad = Gradient::zeros(params.len());
    ppo_policy_loss_grad(&spec, &params, &batch, &adv, &idxs, clip, ent, &mut grad)?;
    let report = finite_diff_check(
        &params,
        &grad,
        |p| {
            let mut loss = 0.0;
            for (j, &i) in idxs.iter().enumerate() {
                let input = batch.policy_input(i);
                let dist = spec.forward(p, &input).unwrap();
                let logp = match &batch.pre_squash[i] {
                    Some(u) => spec.head.log_prob_pre_squash(&dist, u),
                    None => spec.head.log_prob(&dist, &batch.actions[i]).unwrap(),
                };
                let (term, _) =
                    super::objectives::ppo_clip_term(logp, batch.log_probs[i], adv[j], clip);
                loss += -(term + ent * spec.head.entropy(&dist));
            }
            loss
        },
        FD_DEFAULT_STEP,
    );
    Ok(GradCheckCase {
        name: if gaussian { "ppo_policy_gaussian" } else { "ppo_policy_categorical" },
        max_rel_err: report.max_rel_err,
        tol: 0.0,
    })
}

fn a2c_case(r: &mut ChaCha8Rng, trial: usize) -> Result<GradCheckCase> {
    let obs_dim = 4;
    let spec = policy_spec_for(r, obs_dim, false);
    let mut ir = rng::stream(900 + trial as u64, "gc-init");
    let params = spec.init_params(&mut ir);
    let batch = synthetic_batch(r, &spec, &params, obs_dim, 2, 3, vec![vec![]; 2], vec![vec![]; 2]);
    let idxs: Vec<usize> = (0..batch.len()).collect();
    let adv: Vec<f64> = (0..batch.len()).map(|_| r.gen_range(-2.0..2.0)).collect();
    let ent = 0.05;
    let mut grad = Gradient::zeros(params.len());
    a2c_policy_loss_grad(&spec, &params, &batch, &adv, &idxs, ent, &mut grad)?;
    let report = finite_diff_check(
        &params,
        &grad,
        |p| {
            let mut loss = 0.0;
            for (j, &i) in idxs.iter().enumerate() {
                let input = batch.policy_input(i);
                let dist = spec.forward(p, &input).unwrap();
                let logp = spec.head.log_prob(&dist, &batch.actions[i]).unwrap();
                loss += -(logp * adv[j] + ent * spec.head.entropy(&dist));
            }
            loss
        },
        FD_DEFAULT_STEP,
    );
    Ok(GradCheckCase { name: "a2c_policy", max_rel_err: report.max_rel_err, tol: 0.0 })
}

fn critic_case(r: &mut ChaCha8Rng, trial: usize) -> Result<GradCheckCase> {
    let obs_dim = 3;
    let zdim = 1 + (trial % 2);
    let spec = MlpSpec::new(obs_dim + zdim, vec![4], Head::Scalar).unwrap();
    let mut ir = rng::stream(1300 + trial as u64, "gc-init");
    let params = spec.init_params(&mut ir);
    let pspec = policy_spec_for(r, obs_dim, false);
    let pparams = pspec.init_params(&mut ir);
    let augs: Vec<Vec<f64>> = (0..2).map(|_| (0..zdim).map(|_| r.gen::<f64>()).collect()).collect();
    let batch = synthetic_batch(r, &pspec, &pparams, obs_dim, 2, 3, vec![vec![]; 2], augs);
    let idxs: Vec<usize> = (0..batch.len()).collect();
    let rets: Vec<f64> = (0..batch.len()).map(|_| r.gen_range(-3.0..3.0)).collect();
    let coef = 0.7;
    let mut grad = Gradient::zeros(params.len());
    critic_loss_grad(&spec, &params, &batch, &rets, &idxs, coef, &mut grad)?;
    let report = finite_diff_check(
        &params,
        &grad,
        |p| {
            idxs.iter()
                .enumerate()
                .map(|(j, &i)| {
                    let v = spec.forward(p, &batch.critic_input(i)).unwrap()[0];
                    coef * (v - rets[j]) * (v - rets[j])
                })
                .sum()
        },
        FD_DEFAULT_STEP,
    );
    Ok(GradCheckCase { name: "critic_mse", max_rel_err: report.max_rel_err, tol: 0.0 })
}

fn cosine_case(r: &mut ChaCha8Rng, trial: usize) -> Result<GradCheckCase> {
    let n = 2 + trial % 2;
    let p = 6;
    let anchors: Vec<ParamVector> =
        (0..n).map(|_| ParamVector::new((0..p).map(|_| r.gen_range(-1.0..1.0)).collect())).collect();
    let set = AnchorSet::new(anchors.clone(), MixMode::Convex, 1.0)?;
    let (_, grads) = cosine_sq_penalty(&set)?;
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let report = finite_diff_check(
            &anchors[k],
            &grads[k],
            |ak| {
                let mut jar = anchors.clone();
                jar[k] = ak.clone();
                let s = AnchorSet::new(jar, MixMode::Convex, 1.0).unwrap();
                cosine_sq_penalty(&s).unwrap().0
            },
            FD_DEFAULT_STEP,
        );
        worst = worst.max(report.max_rel_err);
    }
    Ok(GradCheckCase { name: "cosine_penalty", max_rel_err: worst, tol: 0.0 })
}

fn skill_disc_case(r: &mut ChaCha8Rng, trial: usize) -> Result<GradCheckCase> {
    let obs_dim = 4;
    let n_skills = 3;
    let spec = MlpSpec::new(obs_dim, vec![5], Head::Categorical { n_actions: n_skills }).unwrap();
    let mut ir = rng::stream(2100 + trial as u64, "gc-init");
    let params = spec.init_params(&mut ir);
    let pspec = policy_spec_for(r, obs_dim, false);
    let pparams = pspec.init_params(&mut ir);
    let batch =
        synthetic_batch(r, &pspec, &pparams, obs_dim, 3, 2, vec![vec![]; 3], vec![vec![]; 3]);
    let lane_skills: Vec<usize> = (0..3).map(|_| r.gen_range(0..n_skills)).collect();
    let idxs: Vec<usize> = (0..batch.len()).collect();
    let mut grad = Gradient::zeros(params.len());
    skill_disc_ce_grad(&spec, &params, &batch, &lane_skills, &idxs, &mut grad)?;
    let report = finite_diff_check(
        &params,
        &grad,
        |p| {
            idxs.iter()
                .map(|&i| {
                    let logits = spec.forward(p, &batch.obs[i]).unwrap();
                    -spec
                        .head
                        .log_prob(&logits, &ActionValue::Discrete(lane_skills[i % 3]))
                        .unwrap()
                })
                .sum()
        },
        FD_DEFAULT_STEP,
    );
    Ok(GradCheckCase { name: "diayn_disc_ce", max_rel_err: report.max_rel_err, tol: 0.0 })
}

fn z_density_case(r: &mut ChaCha8Rng, trial: usize) -> Result<GradCheckCase> {
    let obs_dim = 4;
    let spec = MlpSpec::new(obs_dim, vec![5], Head::Scalar).unwrap();
    let mut ir = rng::stream(2500 + trial as u64, "gc-init");
    let params = spec.init_params(&mut ir);
    let pspec = policy_spec_for(r, obs_dim, false);
    let pparams = pspec.init_params(&mut ir);
    let batch =
        synthetic_batch(r, &pspec, &pparams, obs_dim, 2, 3, vec![vec![]; 2], vec![vec![]; 2]);
    let lane_z: Vec<f64> = (0..2).map(|_| r.gen()).collect();
    let idxs: Vec<usize> = (0..batch.len()).collect();
    let mut grad = Gradient::zeros(params.len());
    z_density_nll_grad(&spec, &params, &batch, &lane_z, &idxs, &mut grad)?;
    let report = finite_diff_check(
        &params,
        &grad,
        |p| {
            idxs.iter()
                .map(|&i| {
                    let mu = spec.forward(p, &batch.obs[i]).unwrap()[0];
                    -super::objectives::gaussian_z_log_density(mu, lane_z[i % 2])
                })
                .sum()
        },
        FD_DEFAULT_STEP,
    );
    Ok(GradCheckCase { name: "diayn_cont_nll", max_rel_err: report.max_rel_err, tol: 0.0 })
}

fn lc_case(r: &mut ChaCha8Rng, trial: usize) -> Result<GradCheckCase> {
    let obs_dim = 3;
    let action_dim = 2;
    let pspec = MlpSpec::new(
        obs_dim + 1,
        vec![4],
        Head::SquashedGaussian { action_dim, std: 0.5 },
    )
    .unwrap();
    let dspec = MlpSpec::new(obs_dim + action_dim, vec![4], Head::Scalar).unwrap();
    let mut ir = rng::stream(3000 + trial as u64, "gc-init");
    let pparams = pspec.init_params(&mut ir);
    let dparams = dspec.init_params(&mut ir);
    let lane_z: Vec<f64> = (0..2).map(|_| r.gen()).collect();
    let augs: Vec<Vec<f64>> = lane_z.iter().map(|&z| vec![z]).collect();
    let batch =
        synthetic_batch(r, &pspec, &pparams, obs_dim, 2, 3, augs.clone(), augs);
    let idxs: Vec<usize> = (0..batch.len()).collect();
    let beta = 0.7;
    let mut pgrad = Gradient::zeros(pparams.len());
    let mut dgrad = Gradient::zeros(dparams.len());
    lc_aux_grad(
        &pspec, &pparams, &dspec, &dparams, &batch, &lane_z, &idxs, beta, &mut pgrad, &mut dgrad,
    )?;
    // The aux term as a function of the policy parameters (disc fixed).
    let loss_of_policy = |p: &ParamVector| {
        idxs.iter()
            .map(|&i| {
                let mean = pspec.forward(p, &batch.policy_input(i)).unwrap();
                let mut din = batch.obs[i].clone();
                din.extend(mean.iter().map(|m| m.tanh()));
                let mu = dspec.forward(&dparams, &din).unwrap()[0];
                -beta * super::objectives::gaussian_z_log_density(mu, lane_z[i % 2])
            })
            .sum()
    };
    let rp = finite_diff_check(&pparams, &pgrad, loss_of_policy, FD_DEFAULT_STEP);
    // And as a function of the discriminator parameters (policy fixed).
    let loss_of_disc = |d: &ParamVector| {
        idxs.iter()
            .map(|&i| {
                let mean = pspec.forward(&pparams, &batch.policy_input(i)).unwrap();
                let mut din = batch.obs[i].clone();
                din.extend(mean.iter().map(|m| m.tanh()));
                let mu = dspec.forward(d, &din).unwrap()[0];
                -super::objectives::gaussian_z_log_density(mu, lane_z[i % 2])
            })
            .sum()
    };
    let rd = finite_diff_check(&dparams, &dgrad, loss_of_disc, FD_DEFAULT_STEP);
    Ok(GradCheckCase {
        name: "lc_aux_joint",
        max_rel_err: rp.max_rel_err.max(rd.max_rel_err),
        tol: 0.0,
    })
}

/// d loss / d anchor_k must equal w_k times the gradient at the mixed point;
/// checked by finite differences through the mixing.
fn anchor_chain_case(r: &mut ChaCha8Rng, trial: usize) -> Result<GradCheckCase> {
    let obs_dim = 3;
    let spec = policy_spec_for(r, obs_dim, false);
    let mut ir = rng::stream(4000 + trial as u64, "gc-init");
    let anchors: Vec<ParamVector> = (0..2).map(|_| spec.init_params(&mut ir)).collect();
    let set = AnchorSet::new(anchors.clone(), MixMode::Convex, 1.0)?;
    let z: f64 = r.gen();
    let w = SimplexWeight::from_scalar(MixMode::Convex, z)?;
    let mixed = mix_anchors(&set, &w)?;
    let batch = synthetic_batch(r, &spec, &mixed, obs_dim, 2, 3, vec![vec![]; 2], vec![vec![]; 2]);
    let idxs: Vec<usize> = (0..batch.len()).collect();
    let adv: Vec<f64> = (0..batch.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mut g_mixed = Gradient::zeros(mixed.len());
    ppo_policy_loss_grad(&spec, &mixed, &batch, &adv, &idxs, 0.3, 0.01, &mut g_mixed)?;
    let mut worst: f64 = 0.0;
    for (k, wk) in [z, 1.0 - z].iter().enumerate() {
        let analytic = Gradient::from(g_mixed.as_slice().iter().map(|g| wk * g).collect::<Vec<_>>());
        let report = finite_diff_check(
            &anchors[k],
            &analytic,
            |ak| {
                let mut jar = anchors.clone();
                jar[k] = ak.clone();
                let s = AnchorSet::new(jar, MixMode::Convex, 1.0).unwrap();
                let m = mix_anchors(&s, &w).unwrap();
                let mut loss = 0.0;
                for (j, &i) in idxs.iter().enumerate() {
                    let dist = spec.forward(&m, &batch.policy_input(i)).unwrap();
                    let logp = spec.head.log_prob(&dist, &batch.actions[i]).unwrap();
                    let (term, _) =
                        super::objectives::ppo_clip_term(logp, batch.log_probs[i], adv[j], 0.3);
                    loss += -(term + 0.01 * spec.head.entropy(&dist));
                }
                loss
            },
            FD_DEFAULT_STEP,
        );
        worst = worst.max(report.max_rel_err);
    }
    Ok(GradCheckCase { name: "anchor_chain_rule", max_rel_err: worst, tol: 0.0 })
}
