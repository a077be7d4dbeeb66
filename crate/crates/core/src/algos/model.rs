//! Trained model containers and the candidate policies they expose at
//! adaptation time.

use crate::error::{Error, Result};
use crate::nn::{MlpSpec, ParamVector};
use crate::subspace::{grid_weights, nested_scalar_grid, AnchorSet, SimplexWeight};

/// One network: spec plus flat parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: MlpSpec,
    pub params: ParamVector,
}

/// Output of a training run, by method.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Single {
        policy: Network,
        critic: Network,
    },
    Subspace {
        policy_spec: MlpSpec,
        anchors: AnchorSet,
        critic: Network,
    },
    Ensemble {
        members: Vec<Network>,
        critics: Vec<Network>,
    },
    /// DIAYN+R with discrete skills one-hot-appended to observations.
    SkillConditioned {
        policy: Network,
        critic: Network,
        discriminator: Network,
        n_skills: usize,
    },
    /// Continuous z in [0,1] appended to observations (DIAYN+R continuous
    /// and Lc; `lc` marks the action-conditioned discriminator variant).
    LatentConditioned {
        policy: Network,
        critic: Network,
        discriminator: Network,
        lc: bool,
    },
}

/// One evaluable policy: shared or mixed parameters plus the constant tail
/// appended to every observation.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub label: String,
    /// Simplex weight for subspace candidates.
    pub weight: Option<SimplexWeight>,
    pub spec: MlpSpec,
    pub params: ParamVector,
    pub obs_aug: Vec<f64>,
}

fn one_hot(n: usize, k: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[k] = 1.0;
    v
}

impl TrainedModel {
    pub fn method_name(&self) -> &'static str {
        match self {
            TrainedModel::Single { .. } => "single",
            TrainedModel::Subspace { anchors, .. } => match (anchors.mix_mode(), anchors.n_anchors()) {
                (crate::subspace::MixMode::Bezier3, _) => "bop",
                (crate::subspace::MixMode::Convex, 2) => "lop",
                (crate::subspace::MixMode::Convex, _) => "cop",
            },
            TrainedModel::Ensemble { .. } => "ensemble",
            TrainedModel::SkillConditioned { .. } => "diayn_r",
            TrainedModel::LatentConditioned { lc: true, .. } => "lc",
            TrainedModel::LatentConditioned { lc: false, .. } => "diayn_r_cont",
        }
    }

    pub fn policy_spec(&self) -> &MlpSpec {
        match self {
            TrainedModel::Single { policy, .. } => &policy.spec,
            TrainedModel::Subspace { policy_spec, .. } => policy_spec,
            TrainedModel::Ensemble { members, .. } => &members[0].spec,
            TrainedModel::SkillConditioned { policy, .. } => &policy.spec,
            TrainedModel::LatentConditioned { policy, .. } => &policy.spec,
        }
    }

    /// The K candidate policies evaluated during K-shot adaptation: the grid
    /// over the subspace, the K skills, the K members, or the single policy.
    pub fn candidates(&self, k: usize) -> Result<Vec<Candidate>> {
        if k < 1 {
            return Err(Error::InvalidArg("K must be >= 1".into()));
        }
        match self {
            TrainedModel::Single { policy, .. } => Ok(vec![Candidate {
                label: "policy".into(),
                weight: None,
                spec: policy.spec.clone(),
                params: policy.params.clone(),
                obs_aug: vec![],
            }]),
            TrainedModel::Subspace { policy_spec, anchors, .. } => {
                let weights = grid_weights(anchors.mix_mode(), anchors.n_anchors(), k);
                weights
                    .into_iter()
                    .map(|w| {
                        let params = anchors.mix(&w)?;
                        Ok(Candidate {
                            label: weight_label(&w),
                            weight: Some(w),
                            spec: policy_spec.clone(),
                            params,
                            obs_aug: vec![],
                        })
                    })
                    .collect()
            }
            TrainedModel::Ensemble { members, .. } => {
                if k > members.len() {
                    return Err(Error::InvalidArg(format!(
                        "ensemble has {} members, cannot evaluate K={k}",
                        members.len()
                    )));
                }
                Ok(members[..k]
                    .iter()
                    .enumerate()
                    .map(|(i, m)| Candidate {
                        label: format!("member{i}"),
                        weight: None,
                        spec: m.spec.clone(),
                        params: m.params.clone(),
                        obs_aug: vec![],
                    })
                    .collect())
            }
            TrainedModel::SkillConditioned { policy, n_skills, .. } => {
                if k > *n_skills {
                    return Err(Error::InvalidArg(format!(
                        "model has {n_skills} skills, cannot evaluate K={k}"
                    )));
                }
                Ok((0..k)
                    .map(|s| Candidate {
                        label: format!("skill{s}"),
                        weight: None,
                        spec: policy.spec.clone(),
                        params: policy.params.clone(),
                        obs_aug: one_hot(*n_skills, s),
                    })
                    .collect())
            }
            TrainedModel::LatentConditioned { policy, .. } => {
                Ok(crate::subspace::scalar_grid(k)
                    .into_iter()
                    .map(|z| Candidate {
                        label: format!("z={z:.4}"),
                        weight: None,
                        spec: policy.spec.clone(),
                        params: policy.params.clone(),
                        obs_aug: vec![z],
                    })
                    .collect())
            }
        }
    }

    /// Prefix-nested candidate grids for K-ablations, so best-of-K is
    /// monotone in K on deterministic variants. Only defined for models
    /// parameterized by a scalar z.
    pub fn candidates_nested(&self, k: usize) -> Result<Vec<Candidate>> {
        if k < 1 {
            return Err(Error::InvalidArg("K must be >= 1".into()));
        }
        match self {
            TrainedModel::Subspace { policy_spec, anchors, .. }
                if SimplexWeight::embed_dim(anchors.mix_mode(), anchors.n_anchors()) == 1 =>
            {
                nested_scalar_grid(k)
                    .into_iter()
                    .map(|z| {
                        let w = SimplexWeight::from_scalar(anchors.mix_mode(), z)?;
                        let params = anchors.mix(&w)?;
                        Ok(Candidate {
                            label: weight_label(&w),
                            weight: Some(w),
                            spec: policy_spec.clone(),
                            params,
                            obs_aug: vec![],
                        })
                    })
                    .collect()
            }
            TrainedModel::LatentConditioned { policy, .. } => Ok(nested_scalar_grid(k)
                .into_iter()
                .map(|z| Candidate {
                    label: format!("z={z:.4}"),
                    weight: None,
                    spec: policy.spec.clone(),
                    params: policy.params.clone(),
                    obs_aug: vec![z],
                })
                .collect()),
            TrainedModel::Single { .. } => self.candidates(1),
            _ => Err(Error::InvalidArg(
                "nested candidate grids need a scalar-parameterized model".into(),
            )),
        }
    }
}

fn weight_label(w: &SimplexWeight) -> String {
    match w.scalar_z() {
        Some(z) => format!("z={z:.4}"),
        None => {
            let parts: Vec<String> = w.as_slice().iter().map(|x| format!("{x:.3}")).collect();
            format!("w=({})", parts.join(","))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Head;
    use crate::subspace::MixMode;

    fn tiny_net(input: usize) -> Network {
        let spec = MlpSpec::new(input, vec![3], Head::Categorical { n_actions: 2 }).unwrap();
        let mut r = crate::rng::stream(1, "t");
        let params = spec.init_params(&mut r);
        Network { spec, params }
    }

    #[test]
    fn single_exposes_one_candidate() {
        let net = tiny_net(4);
        let model = TrainedModel::Single { policy: net.clone(), critic: tiny_net(4) };
        assert_eq!(model.candidates(10).unwrap().len(), 1);
    }

    #[test]
    fn subspace_candidates_are_the_grid() {
        let spec = MlpSpec::new(2, vec![], Head::Categorical { n_actions: 2 }).unwrap();
        let a0 = ParamVector::new(vec![1.0; spec.param_count()]);
        let a1 = ParamVector::new(vec![-1.0; spec.param_count()]);
        let anchors = AnchorSet::new(vec![a0, a1], MixMode::Convex, 1.0).unwrap();
        let model = TrainedModel::Subspace {
            policy_spec: spec.clone(),
            anchors,
            critic: tiny_net(3),
        };
        let c = model.candidates(3).unwrap();
        assert_eq!(c.len(), 3);
        // z = 0 is anchor 2, z = 1 is anchor 1.
        assert!(c[0].params.as_slice().iter().all(|&v| v == -1.0));
        assert!(c[2].params.as_slice().iter().all(|&v| v == 1.0));
        // Nested grid prefixes agree between K=5 and K=10.
        let n5 = model.candidates_nested(5).unwrap();
        let n10 = model.candidates_nested(10).unwrap();
        for i in 0..5 {
            assert_eq!(n5[i].label, n10[i].label);
        }
    }

    #[test]
    fn skill_candidates_use_one_hots() {
        let policy = tiny_net(6); // 4 obs + 2 skills
        let model = TrainedModel::SkillConditioned {
            policy,
            critic: tiny_net(6),
            discriminator: tiny_net(4),
            n_skills: 2,
        };
        let c = model.candidates(2).unwrap();
        assert_eq!(c[0].obs_aug, vec![1.0, 0.0]);
        assert_eq!(c[1].obs_aug, vec![0.0, 1.0]);
        assert!(model.candidates(3).is_err());
    }
}
