//! Surrogate objectives and their exact gradients.
//!
//! Every evaluator accumulates *sums* over the given sample indices into the
//! provided gradient buffers (descent direction: gradients of the loss to
//! minimize); callers divide by the minibatch size. Keeping them as free
//! functions over batches makes them directly checkable against finite
//! differences.

use crate::error::{Error, Result};
use crate::nn::{ActionValue, Gradient, Head, MlpSpec, ParamVector};
use crate::rollout::RolloutBatch;

/// Fixed std of the Gaussian over z used by continuous discriminators
/// (density models predict the mean only).
pub const Z_DENSITY_STD: f64 = 0.25;

fn check_finite(term: &'static str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term, value: v })
    }
}

/// Clipped-PPO surrogate term for one sample: min(rho*A, clip(rho)*A).
/// Returns (term, d term / d log_prob_new).
pub fn ppo_clip_term(log_prob_new: f64, log_prob_old: f64, adv: f64, clip_eps: f64) -> (f64, f64) {
    let rho = (log_prob_new - log_prob_old).exp();
    let clipped = rho.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    let surr1 = rho * adv;
    let surr2 = clipped * adv;
    if surr1 <= surr2 {
        // d(rho * A)/d logp_new = rho * A
        (surr1, rho * adv)
    } else {
        (surr2, 0.0)
    }
}

/// Mean clipped-PPO surrogate over a prepared batch (no gradient); the
/// objective to *maximize*.
pub fn ppo_clip_objective(
    log_probs_new: &[f64],
    log_probs_old: &[f64],
    advantages: &[f64],
    clip_eps: f64,
) -> Result<f64> {
    if log_probs_new.len() != log_probs_old.len() || log_probs_new.len() != advantages.len() {
        return Err(Error::DimMismatch {
            what: "ppo objective arrays",
            expected: log_probs_new.len(),
            got: advantages.len(),
        });
    }
    let mut acc = 0.0;
    for i in 0..log_probs_new.len() {
        let rho = (log_probs_new[i] - log_probs_old[i]).exp();
        check_finite("ppo_ratio", rho)?;
        let (term, _) = ppo_clip_term(log_probs_new[i], log_probs_old[i], advantages[i], clip_eps);
        acc += term;
    }
    Ok(acc / log_probs_new.len() as f64)
}

/// Sums of the per-sample policy terms accumulated by an evaluator.
#[derive(Debug, Clone, Copy, Default)]
pub struct PolicyTermSums {
    pub surrogate: f64,
    pub entropy: f64,
}

/// PPO policy loss over `idxs` at parameters `params`:
/// loss = -(min(rho A, clip(rho) A) + ent_coef * H). Accumulates the summed
/// gradient into `grad` and returns the summed terms.
///
/// `advantages` is aligned with `idxs` (advantages[j] belongs to idxs[j]),
/// so callers can normalize per minibatch.
pub fn ppo_policy_loss_grad(
    spec: &MlpSpec,
    params: &ParamVector,
    batch: &RolloutBatch,
    advantages: &[f64],
    idxs: &[usize],
    clip_eps: f64,
    ent_coef: f64,
    grad: &mut Gradient,
) -> Result<PolicyTermSums> {
    assert_eq!(advantages.len(), idxs.len());
    let mut sums = PolicyTermSums::default();
    for (j, &i) in idxs.iter().enumerate() {
        let input = batch.policy_input(i);
        let cache = spec.forward_cached(params, &input)?;
        let dist = cache.output();
        let logp_new = match &batch.pre_squash[i] {
            Some(u) => spec.head.log_prob_pre_squash(dist, u),
            None => spec.head.log_prob(dist, &batch.actions[i])?,
        };
        check_finite("ppo_log_prob", logp_new)?;
        let (term, d_term_d_logp) =
            ppo_clip_term(logp_new, batch.log_probs[i], advantages[j], clip_eps);
        check_finite("ppo_surrogate", term)?;
        let entropy = spec.head.entropy(dist);
        sums.surrogate += term;
        sums.entropy += entropy;

        let d_logp = spec.head.d_log_prob(dist, &batch.actions[i], batch.pre_squash[i].as_deref());
        let d_ent = spec.head.d_entropy(dist);
        // loss = -(term + ent_coef * H)
        let d_out: Vec<f64> = d_logp
            .iter()
            .zip(&d_ent)
            .map(|(dl, de)| -(d_term_d_logp * dl + ent_coef * de))
            .collect();
        spec.backward(params, &cache, &d_out, 1.0, grad);
    }
    Ok(sums)
}

/// A2C policy loss over `idxs`: loss = -(logpi(a|s) * A + ent_coef * H).
/// `advantages` is aligned with `idxs`.
pub fn a2c_policy_loss_grad(
    spec: &MlpSpec,
    params: &ParamVector,
    batch: &RolloutBatch,
    advantages: &[f64],
    idxs: &[usize],
    ent_coef: f64,
    grad: &mut Gradient,
) -> Result<PolicyTermSums> {
    assert_eq!(advantages.len(), idxs.len());
    let mut sums = PolicyTermSums::default();
    for (j, &i) in idxs.iter().enumerate() {
        let input = batch.policy_input(i);
        let cache = spec.forward_cached(params, &input)?;
        let dist = cache.output();
        let logp = match &batch.pre_squash[i] {
            Some(u) => spec.head.log_prob_pre_squash(dist, u),
            None => spec.head.log_prob(dist, &batch.actions[i])?,
        };
        check_finite("a2c_log_prob", logp)?;
        let entropy = spec.head.entropy(dist);
        sums.surrogate += logp * advantages[j];
        sums.entropy += entropy;

        let d_logp = spec.head.d_log_prob(dist, &batch.actions[i], batch.pre_squash[i].as_deref());
        let d_ent = spec.head.d_entropy(dist);
        let d_out: Vec<f64> = d_logp
            .iter()
            .zip(&d_ent)
            .map(|(dl, de)| -(advantages[j] * dl + ent_coef * de))
            .collect();
        spec.backward(params, &cache, &d_out, 1.0, grad);
    }
    Ok(sums)
}

/// z-conditioned critic regression over `idxs`:
/// loss = critic_coef * (V(s, z) - R)^2 summed. `returns` is aligned with
/// `idxs`. Returns the summed squared error (before the coefficient).
pub fn critic_loss_grad(
    spec: &MlpSpec,
    params: &ParamVector,
    batch: &RolloutBatch,
    returns: &[f64],
    idxs: &[usize],
    critic_coef: f64,
    grad: &mut Gradient,
) -> Result<f64> {
    assert_eq!(returns.len(), idxs.len());
    let mut sum_sq = 0.0;
    for (j, &i) in idxs.iter().enumerate() {
        let input = batch.critic_input(i);
        let cache = spec.forward_cached(params, &input)?;
        let v = cache.output()[0];
        let err = v - returns[j];
        check_finite("critic_mse", err * err)?;
        sum_sq += err * err;
        spec.backward(params, &cache, &[2.0 * critic_coef * err], 1.0, grad);
    }
    Ok(sum_sq)
}

/// Mean squared error of a critic over a whole prepared batch (no gradient).
pub fn critic_loss(
    spec: &MlpSpec,
    params: &ParamVector,
    batch: &RolloutBatch,
    returns: &[f64],
) -> Result<f64> {
    let idxs: Vec<usize> = (0..batch.len()).collect();
    let mut scratch = Gradient::zeros(params.len());
    let sum = critic_loss_grad(spec, params, batch, returns, &idxs, 0.0, &mut scratch)?;
    Ok(sum / batch.len() as f64)
}

/// DIAYN+R reward shaping: r + beta * log p(z | s).
pub fn diayn_reward(r: f64, beta: f64, log_p_z_given_s: f64) -> f64 {
    r + beta * log_p_z_given_s
}

/// Cross-entropy of a discrete skill discriminator over (obs -> skill) pairs:
/// loss = -log softmax(disc(s))[skill], summed over `idxs`.
pub fn skill_disc_ce_grad(
    spec: &MlpSpec,
    params: &ParamVector,
    batch: &RolloutBatch,
    lane_skills: &[usize],
    idxs: &[usize],
    grad: &mut Gradient,
) -> Result<f64> {
    let n_skills = match spec.head {
        Head::Categorical { n_actions } => n_actions,
        _ => return Err(Error::InvalidArg("skill discriminator needs a categorical head".into())),
    };
    let mut loss = 0.0;
    for &i in idxs {
        let skill = lane_skills[batch.lane_of(i)];
        debug_assert!(skill < n_skills);
        let cache = spec.forward_cached(params, &batch.obs[i])?;
        let lp = spec.head.log_prob(cache.output(), &ActionValue::Discrete(skill))?;
        check_finite("diayn_disc_ce", lp)?;
        loss += -lp;
        let mut d = spec.head.d_log_prob(cache.output(), &ActionValue::Discrete(skill), None);
        d.iter_mut().for_each(|x| *x = -*x);
        spec.backward(params, &cache, &d, 1.0, grad);
    }
    Ok(loss)
}

/// log p(z|s) terms of a Gaussian z-density model with fixed std:
/// log N(z; mu(s), Z_DENSITY_STD).
pub fn gaussian_z_log_density(mu: f64, z: f64) -> f64 {
    let s = Z_DENSITY_STD;
    -0.5 * ((z - mu) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Negative log likelihood of a continuous z discriminator (obs -> mean of z)
/// summed over `idxs`; lane z values are scalar.
pub fn z_density_nll_grad(
    spec: &MlpSpec,
    params: &ParamVector,
    batch: &RolloutBatch,
    lane_z: &[f64],
    idxs: &[usize],
    grad: &mut Gradient,
) -> Result<f64> {
    let mut loss = 0.0;
    for &i in idxs {
        let z = lane_z[batch.lane_of(i)];
        let cache = spec.forward_cached(params, &batch.obs[i])?;
        let mu = cache.output()[0];
        let lp = gaussian_z_log_density(mu, z);
        check_finite("z_density_nll", lp)?;
        loss += -lp;
        // d(-lp)/dmu = -(z - mu)/s^2
        let d = -(z - mu) / (Z_DENSITY_STD * Z_DENSITY_STD);
        spec.backward(params, &cache, &[d], 1.0, grad);
    }
    Ok(loss)
}

/// Latent-conditioned auxiliary term (continuous actions only): the summed
/// log q(z | s, a_mean) where a_mean = tanh(policy mean at (s, z)) and the
/// gradient flows through the policy's action output.
///
/// Accumulates d(-beta * log q)/d(policy params) into `policy_grad` and
/// d(-log q)/d(disc params) into `disc_grad` (the discriminator minimizes
/// its NLL). Returns the summed log q.
#[allow(clippy::too_many_arguments)]
pub fn lc_aux_grad(
    policy_spec: &MlpSpec,
    policy_params: &ParamVector,
    disc_spec: &MlpSpec,
    disc_params: &ParamVector,
    batch: &RolloutBatch,
    lane_z: &[f64],
    idxs: &[usize],
    beta: f64,
    policy_grad: &mut Gradient,
    disc_grad: &mut Gradient,
) -> Result<f64> {
    let action_dim = match policy_spec.head {
        Head::SquashedGaussian { action_dim, .. } => action_dim,
        _ => {
            return Err(Error::InvalidArg(
                "Lc applies only to continuous-action policies".into(),
            ))
        }
    };
    let mut sum_logq = 0.0;
    for &i in idxs {
        let z = lane_z[batch.lane_of(i)];
        let p_input = batch.policy_input(i);
        let p_cache = policy_spec.forward_cached(policy_params, &p_input)?;
        let mean = p_cache.output();
        let a_mean: Vec<f64> = mean.iter().map(|m| m.tanh()).collect();

        let mut d_input = batch.obs[i].clone();
        d_input.extend_from_slice(&a_mean);
        let d_cache = disc_spec.forward_cached(disc_params, &d_input)?;
        let mu = d_cache.output()[0];
        let logq = gaussian_z_log_density(mu, z);
        check_finite("lc_aux_log_q", logq)?;
        sum_logq += logq;

        // Discriminator NLL gradient.
        let d_mu = (z - mu) / (Z_DENSITY_STD * Z_DENSITY_STD);
        let d_disc_in = disc_spec.backward(disc_params, &d_cache, &[-d_mu], 1.0, disc_grad);

        if beta != 0.0 {
            // Policy gradient of -beta * log q through the action input:
            // d logq / d a = -(d nll / d a); chain through a = tanh(mean).
            let obs_dim = batch.obs[i].len();
            let d_pol_out: Vec<f64> = (0..action_dim)
                .map(|d| {
                    let d_logq_d_a = -d_disc_in[obs_dim + d];
                    let d_a_d_mean = 1.0 - a_mean[d] * a_mean[d];
                    -beta * d_logq_d_a * d_a_d_mean
                })
                .collect();
            policy_spec.backward(policy_params, &p_cache, &d_pol_out, 1.0, policy_grad);
        }
    }
    Ok(sum_logq)
}

/// Normalizes a slice to zero mean and unit std in place (population std,
/// floored at 1e-8).
pub fn normalize_in_place(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for v in values.iter_mut() {
        *v = (*v - mean) / std;
    }
}
