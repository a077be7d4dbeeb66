//! Desk-scale environment families with parameterized train/test variants,
//! an observation-corruption wrapper, and deterministic per-lane dynamics.
//!
//! Variants are addressed as `family/name`, where `name` is a registered
//! variant optionally suffixed with `+maskP` (P percent of observation
//! indices zeroed, fixed per variant).

mod cartpole;
mod maze;
mod pendulum;
mod reacher;

pub use maze::{MazeLayout, MAZE_TEST_SEEDS};

use std::collections::BTreeMap;
use std::fmt;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ActionValue;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    CartPole,
    PendulumDiscrete,
    Maze2d,
    PointReacher,
}

impl Family {
    pub fn parse(s: &str) -> Result<Family> {
        match s {
            "CartPole" => Ok(Family::CartPole),
            "PendulumDiscrete" => Ok(Family::PendulumDiscrete),
            "Maze2d" => Ok(Family::Maze2d),
            "PointReacher" => Ok(Family::PointReacher),
            _ => Err(Error::UnknownVariant { family: s.into(), name: String::new() }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::CartPole => "CartPole",
            Family::PendulumDiscrete => "PendulumDiscrete",
            Family::Maze2d => "Maze2d",
            Family::PointReacher => "PointReacher",
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Family::CartPole => 4,
            Family::PendulumDiscrete => 3,
            Family::Maze2d => 25,
            Family::PointReacher => 4,
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match self {
            Family::CartPole => ActionSpace::Discrete(2),
            Family::PendulumDiscrete => ActionSpace::Discrete(5),
            Family::Maze2d => ActionSpace::Discrete(4),
            Family::PointReacher => ActionSpace::Continuous(2),
        }
    }

    pub fn horizon(&self) -> u32 {
        match self {
            Family::CartPole => 200,
            Family::PendulumDiscrete => 200,
            Family::Maze2d => 100,
            Family::PointReacher => 100,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, Family::Maze2d | Family::PointReacher)
    }

    /// Registered variant base names, train first.
    pub fn variant_names(&self) -> &'static [&'static str] {
        match self {
            Family::CartPole => &[
                "train", "HeavyPole", "LightPole", "LongPole", "ShortPole", "StrongPush", "WeakPush",
            ],
            Family::PendulumDiscrete => &["train", "Light", "Long", "Short"],
            Family::Maze2d => &["train", "test1", "test2", "test3", "test4"],
            Family::PointReacher => &["train", "LowFriction", "HighFriction", "WeakMotor", "StrongMotor"],
        }
    }

    fn knob_set(&self) -> &'static [&'static str] {
        match self {
            Family::CartPole => &["mass", "length", "force"],
            Family::PendulumDiscrete => &["mass", "length"],
            Family::Maze2d => &["walls_seed"],
            Family::PointReacher => &["action_scale", "friction"],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSpace {
    Discrete(usize),
    /// Component count; each component lives in (-1, 1).
    Continuous(usize),
}

impl ActionSpace {
    pub fn validate(&self, action: &ActionValue) -> Result<()> {
        match (self, action) {
            (ActionSpace::Discrete(n), ActionValue::Discrete(a)) if a < n => Ok(()),
            (ActionSpace::Continuous(d), ActionValue::Continuous(v)) if v.len() == *d => Ok(()),
            _ => Err(Error::InvalidArg(format!("action {action:?} invalid for {self:?}"))),
        }
    }
}

/// A named environment with resolved knob overrides and an optional fixed
/// observation mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvVariant {
    pub family: Family,
    pub name: String,
    /// Knobs that differ from the train values.
    pub overrides: BTreeMap<String, f64>,
    /// Observation indices zeroed in every observation.
    pub obs_mask: Option<Vec<usize>>,
    pub horizon: u32,
    pub deterministic: bool,
}

/// Builds a registered variant. `name` may carry a `+maskP` suffix.
pub fn make_variant(family: Family, name: &str) -> Result<EnvVariant> {
    let (base, mask_pct) = match name.split_once("+mask") {
        Some((base, pct)) => {
            let p: u32 = pct
                .parse()
                .map_err(|_| Error::UnknownVariant { family: family.name().into(), name: name.into() })?;
            if p == 0 || p >= 100 {
                return Err(Error::InvalidArg(format!("mask percent must be in 1..100, got {p}")));
            }
            (base, Some(p))
        }
        None => (name, None),
    };
    let overrides = variant_overrides(family, base)
        .ok_or_else(|| Error::UnknownVariant { family: family.name().into(), name: name.into() })?;
    for key in overrides.keys() {
        debug_assert!(family.knob_set().contains(&key.as_str()));
    }
    let obs_mask = mask_pct.map(|p| mask_indices(family, base, p));
    Ok(EnvVariant {
        family,
        name: name.to_string(),
        overrides,
        obs_mask,
        horizon: family.horizon(),
        deterministic: family.is_deterministic(),
    })
}

fn variant_overrides(family: Family, base: &str) -> Option<BTreeMap<String, f64>> {
    let mut m = BTreeMap::new();
    let mut set = |k: &str, v: f64| {
        m.insert(k.to_string(), v);
    };
    match (family, base) {
        (_, "train") => {}
        (Family::CartPole, "HeavyPole") => set("mass", 1.0),
        (Family::CartPole, "LightPole") => set("mass", 0.001),
        (Family::CartPole, "LongPole") => set("length", 1.0),
        (Family::CartPole, "ShortPole") => set("length", 0.05),
        (Family::CartPole, "StrongPush") => set("force", 20.0),
        (Family::CartPole, "WeakPush") => set("force", 1.0),
        (Family::PendulumDiscrete, "Light") => set("mass", 0.5),
        (Family::PendulumDiscrete, "Long") => set("length", 1.5),
        (Family::PendulumDiscrete, "Short") => set("length", 0.5),
        (Family::Maze2d, "test1") => set("walls_seed", MAZE_TEST_SEEDS[0] as f64),
        (Family::Maze2d, "test2") => set("walls_seed", MAZE_TEST_SEEDS[1] as f64),
        (Family::Maze2d, "test3") => set("walls_seed", MAZE_TEST_SEEDS[2] as f64),
        (Family::Maze2d, "test4") => set("walls_seed", MAZE_TEST_SEEDS[3] as f64),
        (Family::PointReacher, "LowFriction") => set("friction", 0.6),
        (Family::PointReacher, "HighFriction") => set("friction", 0.95),
        (Family::PointReacher, "WeakMotor") => set("action_scale", 0.025),
        (Family::PointReacher, "StrongMotor") => set("action_scale", 0.1),
        _ => return None,
    }
    Some(m)
}

/// Fixed random index set for a masked variant; a pure function of the
/// variant identity (constant across resets, steps, and runs).
fn mask_indices(family: Family, base: &str, pct: u32) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let dim = family.obs_dim();
    let count = (((pct as f64 / 100.0) * dim as f64).round() as usize).clamp(1, dim);
    let mut r = rng::stream(0x6d61736b, &format!("{}/{}/mask{}", family.name(), base, pct));
    let mut idx: Vec<usize> = (0..dim).collect();
    idx.shuffle(&mut r);
    idx.truncate(count);
    idx.sort_unstable();
    idx
}

impl EnvVariant {
    pub fn obs_dim(&self) -> usize {
        self.family.obs_dim()
    }

    pub fn action_space(&self) -> ActionSpace {
        self.family.action_space()
    }

    pub fn knob(&self, key: &str, train_value: f64) -> f64 {
        self.overrides.get(key).copied().unwrap_or(train_value)
    }

    pub fn make_env(&self) -> Result<EnvInstance> {
        let state = match self.family {
            Family::CartPole => FamilyState::CartPole(cartpole::CartPoleEnv::new(
                self.knob("mass", 0.1),
                self.knob("length", 0.5),
                self.knob("force", 10.0),
            )),
            Family::PendulumDiscrete => FamilyState::Pendulum(pendulum::PendulumEnv::new(
                self.knob("mass", 1.0),
                self.knob("length", 1.0),
            )),
            Family::Maze2d => {
                let layout = match self.overrides.get("walls_seed") {
                    None => MazeLayout::train(),
                    Some(seed) => maze::generate_walled_layout(*seed as u64)?,
                };
                FamilyState::Maze(maze::MazeEnv::new(layout))
            }
            Family::PointReacher => FamilyState::Reacher(reacher::ReacherEnv::new(
                self.knob("action_scale", 0.05),
                self.knob("friction", 0.8),
            )),
        };
        Ok(EnvInstance {
            state,
            mask: self.obs_mask.clone(),
            horizon: self.horizon,
            steps: 0,
            done: true,
        })
    }
}

impl fmt::Display for EnvVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.family.name(), self.name)
    }
}

/// One environment step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StepInfo {
    /// Episode ended by hitting the horizon rather than a terminal state.
    pub truncated: bool,
    /// Maze goal reached this step.
    pub reached_goal: bool,
}

pub(crate) enum FamilyState {
    CartPole(cartpole::CartPoleEnv),
    Pendulum(pendulum::PendulumEnv),
    Maze(maze::MazeEnv),
    Reacher(reacher::ReacherEnv),
}

/// A live environment: family state plus step counter, horizon, and the
/// variant's observation mask. Owned by exactly one rollout worker.
pub struct EnvInstance {
    state: FamilyState,
    mask: Option<Vec<usize>>,
    horizon: u32,
    steps: u32,
    done: bool,
}

impl EnvInstance {
    pub fn reset(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.steps = 0;
        self.done = false;
        let mut obs = match &mut self.state {
            FamilyState::CartPole(e) => e.reset(rng),
            FamilyState::Pendulum(e) => e.reset(rng),
            FamilyState::Maze(e) => e.reset(),
            FamilyState::Reacher(e) => e.reset(),
        };
        self.apply_mask(&mut obs);
        obs
    }

    pub fn step(&mut self, action: &ActionValue) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeDone);
        }
        let (mut obs, reward, terminal, reached_goal) = match &mut self.state {
            FamilyState::CartPole(e) => e.step(action)?,
            FamilyState::Pendulum(e) => e.step(action)?,
            FamilyState::Maze(e) => e.step(action)?,
            FamilyState::Reacher(e) => e.step(action)?,
        };
        self.steps += 1;
        let truncated = !terminal && self.steps >= self.horizon;
        self.done = terminal || truncated;
        self.apply_mask(&mut obs);
        Ok(StepResult {
            obs,
            reward,
            done: self.done,
            info: StepInfo { truncated, reached_goal },
        })
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    fn apply_mask(&self, obs: &mut [f64]) {
        if let Some(mask) = &self.mask {
            for &i in mask {
                obs[i] = 0.0;
            }
        }
    }

    #[cfg(test)]
    pub(crate) fn maze_pos(&self) -> Option<(i32, i32)> {
        match &self.state {
            FamilyState::Maze(e) => Some(e.pos()),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cartpole_variant_knobs_match_the_registry() {
        let v = make_variant(Family::CartPole, "WeakPush").unwrap();
        assert_eq!(v.knob("force", 10.0), 1.0);
        assert_eq!(v.knob("mass", 0.1), 0.1);
        assert_eq!(v.knob("length", 0.5), 0.5);
        let v = make_variant(Family::CartPole, "HeavyPole").unwrap();
        assert_eq!(v.knob("mass", 0.1), 1.0);
        let v = make_variant(Family::CartPole, "ShortPole").unwrap();
        assert_eq!(v.knob("length", 0.5), 0.05);
    }

    #[test]
    fn pendulum_train_values() {
        let v = make_variant(Family::PendulumDiscrete, "train").unwrap();
        assert_eq!(v.knob("mass", 1.0), 1.0);
        assert_eq!(v.knob("length", 1.0), 1.0);
        assert!(!v.deterministic);
        let v = make_variant(Family::PendulumDiscrete, "Light").unwrap();
        assert_eq!(v.knob("mass", 1.0), 0.5);
    }

    #[test]
    fn unknown_variant_is_an_error() {
        assert!(make_variant(Family::CartPole, "NoSuchThing").is_err());
        assert!(make_variant(Family::Maze2d, "train+maskx").is_err());
    }

    #[test]
    fn mask_is_fixed_and_applied() {
        let v = make_variant(Family::Maze2d, "train+mask20").unwrap();
        let mask = v.obs_mask.clone().unwrap();
        assert_eq!(mask.len(), 5); // 20% of 25
        assert!(mask.iter().all(|&i| i < 25));
        // Same variant built twice has the same mask.
        let v2 = make_variant(Family::Maze2d, "train+mask20").unwrap();
        assert_eq!(v2.obs_mask.unwrap(), mask);
        // Masked indices read zero at reset and after steps.
        let mut env = v.make_env().unwrap();
        let mut r = rng::stream(0, "env");
        let obs = env.reset(&mut r);
        for &i in &mask {
            assert_eq!(obs[i], 0.0);
        }
        let step = env.step(&ActionValue::Discrete(1)).unwrap();
        for &i in &mask {
            assert_eq!(step.obs[i], 0.0);
        }
    }

    #[test]
    fn same_seed_means_identical_trajectories() {
        for family in [Family::CartPole, Family::PendulumDiscrete, Family::Maze2d] {
            let v = make_variant(family, "train").unwrap();
            let run = |seed: u64| -> Vec<f64> {
                let mut env = v.make_env().unwrap();
                let mut er = rng::stream(seed, "env");
                let mut out = env.reset(&mut er);
                for t in 0..50 {
                    let a = match v.action_space() {
                        ActionSpace::Discrete(n) => ActionValue::Discrete(t % n),
                        ActionSpace::Continuous(d) => ActionValue::Continuous(vec![0.3; d]),
                    };
                    let s = env.step(&a).unwrap();
                    out.extend_from_slice(&s.obs);
                    out.push(s.reward);
                    if s.done {
                        out.extend(env.reset(&mut er));
                    }
                }
                out
            };
            assert_eq!(run(7), run(7), "{family}");
        }
    }

    #[test]
    fn stepping_a_done_episode_is_an_error() {
        let v = make_variant(Family::Maze2d, "train").unwrap();
        let mut env = v.make_env().unwrap();
        let mut r = rng::stream(0, "env");
        env.reset(&mut r);
        for _ in 0..100 {
            let res = env.step(&ActionValue::Discrete(0)).unwrap();
            if res.done {
                break;
            }
        }
        assert!(env.is_done());
        assert!(matches!(env.step(&ActionValue::Discrete(0)), Err(Error::EpisodeDone)));
    }

    #[test]
    fn horizons_are_respected_exactly() {
        let v = make_variant(Family::PendulumDiscrete, "train").unwrap();
        let mut env = v.make_env().unwrap();
        let mut r = rng::stream(1, "env");
        env.reset(&mut r);
        let mut n = 0;
        loop {
            let s = env.step(&ActionValue::Discrete(2)).unwrap();
            n += 1;
            if s.done {
                assert!(s.info.truncated);
                break;
            }
        }
        assert_eq!(n, 200);
    }
}
