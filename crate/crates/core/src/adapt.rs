//! K-shot test-time adaptation, Perf estimation, and the post-hoc analyses
//! (policy-selection histograms, diversity discriminator probe).


use serde::{Deserialize, Serialize};

use crate::algos::{Candidate, TrainedModel};
use crate::envs::EnvVariant;
use crate::error::{Error, Result};
use crate::nn::{Gradient, Head, MlpSpec, ParamVector};
use crate::optim::{clip_global_norm, Adam};
use crate::rng;

/// Outcome of one K-shot adaptation on one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub variant: String,
    pub k: usize,
    /// Episodes evaluated per candidate (1 on deterministic variants).
    pub episodes_per_candidate: usize,
    pub candidate_labels: Vec<String>,
    /// Mean return of each candidate over its adaptation episodes.
    pub candidate_returns: Vec<f64>,
    /// argmax of `candidate_returns`, lowest index on ties.
    pub selected: usize,
    pub selected_label: String,
    /// Post-selection Perf estimate over fresh episodes.
    pub post_perf_mean: f64,
    pub post_perf_std: f64,
    pub post_episodes: usize,
    /// Exactly k * episodes_per_candidate.
    pub episodes_consumed: usize,
}

/// argmax with deterministic lowest-index tie-break.
pub fn argmax_lowest_tie(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Runs one episode with the deterministic action rule (argmax / squashed
/// mean) and returns its return.
pub fn run_episode(
    spec: &MlpSpec,
    params: &ParamVector,
    obs_aug: &[f64],
    variant: &EnvVariant,
    env_rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<f64> {
    let mut env = variant.make_env()?;
    let mut obs = env.reset(env_rng);
    let mut ret = 0.0;
    loop {
        let mut input = obs;
        input.extend_from_slice(obs_aug);
        let dist = spec.forward(params, &input)?;
        let action = spec.head.deterministic_action(&dist);
        let step = env.step(&action)?;
        ret += step.reward;
        if step.done {
            return Ok(ret);
        }
        obs = step.obs;
    }
}

fn candidate_mean_return(
    c: &Candidate,
    variant: &EnvVariant,
    episodes: usize,
    seed: u64,
    stream_label: &str,
) -> Result<f64> {
    let mut total = 0.0;
    for e in 0..episodes {
        let mut env_rng = rng::lane_stream(seed, stream_label, e as u64);
        total += run_episode(&c.spec, &c.params, &c.obs_aug, variant, &mut env_rng)?;
    }
    Ok(total / episodes as f64)
}

/// K-shot adaptation: evaluate the model's K candidates for E episodes each
/// (E forced to 1 on deterministic variants), keep the argmax, then estimate
/// its post-selection Perf over `post_episodes` fresh episodes.
pub fn k_shot_select(
    model: &TrainedModel,
    variant: &EnvVariant,
    k: usize,
    episodes_per_policy: usize,
    post_episodes: usize,
    seed: u64,
) -> Result<AdaptReport> {
    let candidates = model.candidates(k)?;
    k_shot_over_candidates(&candidates, variant, episodes_per_policy, post_episodes, seed)
}

/// As [`k_shot_select`] but over prefix-nested candidate grids, for K
/// ablations where best-of-K must be monotone.
pub fn k_shot_select_nested(
    model: &TrainedModel,
    variant: &EnvVariant,
    k: usize,
    episodes_per_policy: usize,
    post_episodes: usize,
    seed: u64,
) -> Result<AdaptReport> {
    let candidates = model.candidates_nested(k)?;
    k_shot_over_candidates(&candidates, variant, episodes_per_policy, post_episodes, seed)
}

fn k_shot_over_candidates(
    candidates: &[Candidate],
    variant: &EnvVariant,
    episodes_per_policy: usize,
    post_episodes: usize,
    seed: u64,
) -> Result<AdaptReport> {
    if candidates.is_empty() {
        return Err(Error::InvalidArg("K must be >= 1".into()));
    }
    if episodes_per_policy < 1 {
        return Err(Error::InvalidArg("episodes per policy must be >= 1".into()));
    }
    let episodes = if variant.deterministic { 1 } else { episodes_per_policy };
    let mut returns = Vec::with_capacity(candidates.len());
    for c in candidates {
        // Every candidate sees the same episode seeds: paired evaluation.
        returns.push(candidate_mean_return(c, variant, episodes, seed, "adapt")?);
    }
    let selected = argmax_lowest_tie(&returns);
    let (post_mean, post_std) =
        perf_estimate_candidate(&candidates[selected], variant, post_episodes, seed)?;
    Ok(AdaptReport {
        variant: variant.to_string(),
        k: candidates.len(),
        episodes_per_candidate: episodes,
        candidate_labels: candidates.iter().map(|c| c.label.clone()).collect(),
        candidate_returns: returns,
        selected,
        selected_label: candidates[selected].label.clone(),
        post_perf_mean: post_mean,
        post_perf_std: post_std,
        post_episodes,
        episodes_consumed: candidates.len() * episodes,
    })
}

/// Empirical mean and (population) std of deterministic-rule returns over
/// fresh episodes: the truncated Perf estimate.
pub fn perf_estimate(
    model: &TrainedModel,
    variant: &EnvVariant,
    n_episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let candidates = model.candidates(1)?;
    perf_estimate_candidate(&candidates[0], variant, n_episodes, seed)
}

pub fn perf_estimate_candidate(
    candidate: &Candidate,
    variant: &EnvVariant,
    n_episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_episodes < 1 {
        return Err(Error::InvalidArg("n_episodes must be >= 1".into()));
    }
    let mut returns = Vec::with_capacity(n_episodes);
    for e in 0..n_episodes {
        let mut env_rng = rng::lane_stream(seed, "perf", e as u64);
        returns.push(run_episode(
            &candidate.spec,
            &candidate.params,
            &candidate.obs_aug,
            variant,
            &mut env_rng,
        )?);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Histogram of selected candidate indices across one seed's reports.
/// All reports must share K.
pub fn selection_histogram(reports: &[AdaptReport]) -> Result<Vec<usize>> {
    let k = match reports.first() {
        Some(r) => r.k,
        None => return Err(Error::InvalidArg("no reports to histogram".into())),
    };
    let mut counts = vec![0usize; k];
    for r in reports {
        if r.k != k {
            return Err(Error::InvalidArg(format!("mixed K in histogram: {} vs {k}", r.k)));
        }
        counts[r.selected] += 1;
    }
    Ok(counts)
}

/// Result of the diversity discriminator probe.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub k: usize,
    pub dataset_size: usize,
    pub train_accuracy: f64,
    pub holdout_accuracy: f64,
    /// 1/K.
    pub chance: f64,
}

/// Trains a small classifier (two hidden layers of 16) to recover which of
/// the K candidates generated a state, and reports held-out accuracy.
/// States are gathered by rolling out each candidate with stochastic actions.
pub fn diversity_probe(
    model: &TrainedModel,
    variant: &EnvVariant,
    k: usize,
    dataset_size: usize,
    seed: u64,
) -> Result<ProbeReport> {
    if k < 2 {
        return Err(Error::InvalidArg("diversity probe needs K >= 2 candidates".into()));
    }
    let candidates = model.candidates(k)?;
    let per_candidate = dataset_size.div_ceil(k);
    let mut states: Vec<(Vec<f64>, usize)> = Vec::with_capacity(per_candidate * k);
    for (ci, c) in candidates.iter().enumerate() {
        let mut env = variant.make_env()?;
        let mut env_rng = rng::lane_stream(seed, "probe-env", ci as u64);
        let mut act_rng = rng::lane_stream(seed, "probe-act", ci as u64);
        let mut obs = env.reset(&mut env_rng);
        for _ in 0..per_candidate {
            states.push((obs.clone(), ci));
            let mut input = obs.clone();
            input.extend_from_slice(&c.obs_aug);
            let dist = c.spec.forward(&c.params, &input)?;
            let sampled = c.spec.head.sample(&dist, &mut act_rng)?;
            let step = env.step(&sampled.action)?;
            obs = if step.done { env.reset(&mut env_rng) } else { step.obs };
        }
    }
    // Deterministic interleaved 80/20 split.
    let mut train: Vec<&(Vec<f64>, usize)> = Vec::new();
    let mut holdout: Vec<&(Vec<f64>, usize)> = Vec::new();
    for (i, s) in states.iter().enumerate() {
        if i % 5 == 4 {
            holdout.push(s);
        } else {
            train.push(s);
        }
    }
    let obs_dim = variant.obs_dim();
    let spec = MlpSpec::new(obs_dim, vec![16, 16], Head::Categorical { n_actions: k })?;
    let mut init_rng = rng::stream(seed, "probe-init");
    let mut params = spec.init_params(&mut init_rng);
    let mut opt = Adam::new(params.len(), 1e-3);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = rng::stream(seed, "probe-shuffle");
    let epochs = 60;
    for _ in 0..epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut shuffle_rng);
        for mb in order.chunks(64) {
            let mut grad = Gradient::zeros(params.len());
            for &i in mb {
                let (obs, label) = train[i];
                let cache = spec.forward_cached(&params, obs)?;
                let mut d = spec.head.d_log_prob(
                    cache.output(),
                    &crate::nn::ActionValue::Discrete(*label),
                    None,
                );
                d.iter_mut().for_each(|x| *x = -*x);
                spec.backward(&params, &cache, &d, 1.0 / mb.len() as f64, &mut grad);
            }
            clip_global_norm(&mut grad, 10.0);
            opt.step(&mut params, &grad);
        }
    }
    let accuracy = |set: &[&(Vec<f64>, usize)]| -> Result<f64> {
        let mut correct = 0usize;
        for (obs, label) in set {
            let logits = spec.forward(&params, obs)?;
            if argmax_lowest_tie(&logits) == *label {
                correct += 1;
            }
        }
        Ok(correct as f64 / set.len() as f64)
    };
    Ok(ProbeReport {
        k,
        dataset_size: states.len(),
        train_accuracy: accuracy(&train)?,
        holdout_accuracy: accuracy(&holdout)?,
        chance: 1.0 / k as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_variant, Family};
    use crate::nn::Head;

    fn constant_candidate(bias_toward: usize, label: &str) -> Candidate {
        // A maze policy that always argmaxes one action: a linear net with a
        // large bias on that logit.
        let spec = MlpSpec::new(25, vec![], Head::Categorical { n_actions: 4 }).unwrap();
        let mut params = ParamVector::zeros(spec.param_count());
        params.as_mut_slice()[25 * 4 + bias_toward] = 5.0;
        Candidate {
            label: label.into(),
            weight: None,
            spec,
            params,
            obs_aug: vec![],
        }
    }

    #[test]
    fn argmax_tie_break_and_shift_invariance() {
        assert_eq!(argmax_lowest_tie(&[3.0, 7.0, 5.0]), 1);
        assert_eq!(argmax_lowest_tie(&[7.0, 7.0, 5.0]), 0);
        assert_eq!(argmax_lowest_tie(&[-1.0, -1.0, -1.0]), 0);
        let base = [3.0, 7.0, 5.0, 7.0];
        let shifted: Vec<f64> = base.iter().map(|v| v + 123.0).collect();
        assert_eq!(argmax_lowest_tie(&base), argmax_lowest_tie(&shifted));
    }

    #[test]
    fn k_shot_on_deterministic_variant_selects_and_accounts() {
        let variant = make_variant(Family::Maze2d, "train").unwrap();
        let candidates =
            vec![constant_candidate(0, "up"), constant_candidate(1, "down"), constant_candidate(2, "left")];
        let report = k_shot_over_candidates(&candidates, &variant, 10, 5, 42).unwrap();
        // Deterministic variant: E forced to 1, so K*E = 3 episodes.
        assert_eq!(report.episodes_per_candidate, 1);
        assert_eq!(report.episodes_consumed, 3);
        assert_eq!(report.selected, argmax_lowest_tie(&report.candidate_returns));
        // "down" at least makes progress toward the goal; "up"/"left" jam at
        // the border. All three still return -100 (no policy reaches the
        // goal), so the tie-break picks index 0.
        assert_eq!(report.selected, 0);
        // Post-selection Perf on a deterministic variant equals the
        // adaptation return exactly.
        assert_eq!(report.post_perf_mean, report.candidate_returns[report.selected]);
        assert_eq!(report.post_perf_std, 0.0);
    }

    #[test]
    fn deterministic_env_deterministic_policy_zero_std() {
        let variant = make_variant(Family::Maze2d, "train").unwrap();
        let c = constant_candidate(1, "down");
        let (mean, std) = perf_estimate_candidate(&c, &variant, 7, 0).unwrap();
        assert_eq!(std, 0.0);
        assert!((-100.0..=-16.0).contains(&mean));
    }

    #[test]
    fn perf_estimate_is_self_consistent_on_stochastic_env() {
        // Two independent estimates agree within a few standard errors.
        let variant = make_variant(Family::CartPole, "train").unwrap();
        let spec = MlpSpec::new(4, vec![], Head::Categorical { n_actions: 2 }).unwrap();
        let mut r = rng::stream(5, "init");
        let params = spec.init_params(&mut r);
        let c = Candidate { label: "p".into(), weight: None, spec, params, obs_aug: vec![] };
        let (m1, s1) = perf_estimate_candidate(&c, &variant, 100, 11).unwrap();
        let (m2, _) = perf_estimate_candidate(&c, &variant, 100, 12).unwrap();
        let se = s1 / (100.0f64).sqrt();
        assert!((m1 - m2).abs() <= 4.0 * se.max(1.0), "{m1} vs {m2} (se {se})");
    }

    #[test]
    fn histogram_counts_and_mixed_k() {
        let mk = |sel: usize, k: usize| AdaptReport {
            variant: "Maze2d/train".into(),
            k,
            episodes_per_candidate: 1,
            candidate_labels: (0..k).map(|i| format!("c{i}")).collect(),
            candidate_returns: vec![0.0; k],
            selected: sel,
            selected_label: format!("c{sel}"),
            post_perf_mean: 0.0,
            post_perf_std: 0.0,
            post_episodes: 0,
            episodes_consumed: k,
        };
        // All variants select index 0.
        let h = selection_histogram(&[mk(0, 3), mk(0, 3), mk(0, 3)]).unwrap();
        assert_eq!(h, vec![3, 0, 0]);
        // Two variants selecting 0 and 2 with K=3.
        let h = selection_histogram(&[mk(0, 3), mk(2, 3)]).unwrap();
        assert_eq!(h, vec![1, 0, 1]);
        assert!(selection_histogram(&[mk(0, 3), mk(0, 4)]).is_err());
        assert!(selection_histogram(&[]).is_err());
    }

    #[test]
    fn identical_candidates_probe_at_chance_and_disjoint_probe_high() {
        let variant = make_variant(Family::Maze2d, "train").unwrap();
        // K identical policies: indistinguishable, accuracy ~ chance.
        let spec = MlpSpec::new(25, vec![], Head::Categorical { n_actions: 4 }).unwrap();
        let mut r = rng::stream(9, "probe");
        let shared = spec.init_params(&mut r);
        let model_like: Vec<Candidate> = (0..2)
            .map(|i| Candidate {
                label: format!("c{i}"),
                weight: None,
                spec: spec.clone(),
                params: shared.clone(),
                obs_aug: vec![],
            })
            .collect();
        let report = probe_over_candidates(&model_like, &variant, 600, 3).unwrap();
        assert!(
            (report.holdout_accuracy - report.chance).abs() < 0.22,
            "identical candidates should sit near chance, got {}",
            report.holdout_accuracy
        );
        // Policies visiting (nearly) disjoint state sets: separable.
        let candidates = vec![constant_candidate(2, "left"), constant_candidate(3, "right")];
        let report = probe_over_candidates(&candidates, &variant, 600, 4).unwrap();
        assert!(report.holdout_accuracy > 0.9, "got {}", report.holdout_accuracy);
    }

    // Probe over explicit candidates by wrapping them as an ensemble.
    fn probe_over_candidates(
        candidates: &[Candidate],
        variant: &EnvVariant,
        dataset_size: usize,
        seed: u64,
    ) -> Result<ProbeReport> {
        let members: Vec<crate::algos::Network> = candidates
            .iter()
            .map(|c| crate::algos::Network { spec: c.spec.clone(), params: c.params.clone() })
            .collect();
        let critics = members.clone();
        let model = TrainedModel::Ensemble { members, critics };
        diversity_probe(&model, variant, candidates.len(), dataset_size, seed)
    }
}
