//! Discrete 2d maze: a 21x11 corridor from the top-middle tile to the
//! bottom-middle tile. Reward is -1 every step until the goal is reached;
//! episodes cap at 100 steps, so returns range over [-100, -16] (the train
//! corridor's shortest path is exactly 16 moves).
//!
//! Test variants drop 1-4 short wall segments into the corridor, rejection
//! sampling until the goal stays reachable; at least one dropped tile sits on
//! the canonical shortest path so the variant actually perturbs it.
//!
//! Layouts are plain-text grids: '#' wall, '.' free, 'S' start, 'G' goal.
//! The observation is the flattened 5x5 window around the agent, 1.0 for
//! wall-or-out-of-bounds and 0.0 for free tiles. The goal is not encoded;
//! it is fixed and memorizable.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::ActionValue;
use crate::rng;

/// Wall seeds registered as Maze2d variants test1..test4.
pub const MAZE_TEST_SEEDS: [u64; 4] = [9, 5, 23, 40];

const TRAIN_MAP: &str = include_str!("../../data/maze_train.txt");
const WINDOW: i32 = 2; // 5x5 window half-width

/// Grid layout with start and goal tiles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MazeLayout {
    width: i32,
    height: i32,
    walls: Vec<bool>,
    start: (i32, i32),
    goal: (i32, i32),
}

impl MazeLayout {
    /// The shipped train corridor.
    pub fn train() -> MazeLayout {
        MazeLayout::parse(TRAIN_MAP).expect("embedded train map parses")
    }

    pub fn parse(text: &str) -> Result<MazeLayout> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        if lines.is_empty() {
            return Err(Error::Parse("empty maze map".into()));
        }
        let width = lines[0].chars().count() as i32;
        let height = lines.len() as i32;
        let mut walls = vec![false; (width * height) as usize];
        let mut start = None;
        let mut goal = None;
        for (y, line) in lines.iter().enumerate() {
            if line.chars().count() as i32 != width {
                return Err(Error::Parse(format!("ragged maze row {y}")));
            }
            for (x, c) in line.chars().enumerate() {
                let idx = y * width as usize + x;
                match c {
                    '#' => walls[idx] = true,
                    '.' => {}
                    'S' => start = Some((x as i32, y as i32)),
                    'G' => goal = Some((x as i32, y as i32)),
                    other => return Err(Error::Parse(format!("bad maze tile '{other}'"))),
                }
            }
        }
        Ok(MazeLayout {
            width,
            height,
            walls,
            start: start.ok_or_else(|| Error::Parse("maze map has no start".into()))?,
            goal: goal.ok_or_else(|| Error::Parse("maze map has no goal".into()))?,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for y in 0..self.height {
            for x in 0..self.width {
                let c = if (x, y) == self.start {
                    'S'
                } else if (x, y) == self.goal {
                    'G'
                } else if self.is_wall(x, y) {
                    '#'
                } else {
                    '.'
                };
                out.push(c);
            }
            out.push('\n');
        }
        out
    }

    pub fn width(&self) -> i32 {
        self.width
    }

    pub fn height(&self) -> i32 {
        self.height
    }

    pub fn start(&self) -> (i32, i32) {
        self.start
    }

    pub fn goal(&self) -> (i32, i32) {
        self.goal
    }

    /// Wall or out-of-bounds.
    pub fn is_wall(&self, x: i32, y: i32) -> bool {
        if x < 0 || y < 0 || x >= self.width || y >= self.height {
            return true;
        }
        self.walls[(y * self.width + x) as usize]
    }

    fn set_wall(&mut self, x: i32, y: i32) {
        self.walls[(y * self.width + x) as usize] = true;
    }

    /// BFS shortest-path length start -> goal, if reachable.
    pub fn bfs_distance(&self) -> Option<u32> {
        self.bfs_from(self.start).map(|d| d.0)
    }

    /// BFS distance plus one canonical shortest path (deterministic
    /// up/down/left/right expansion order).
    fn bfs_from(&self, from: (i32, i32)) -> Option<(u32, Vec<(i32, i32)>)> {
        let idx = |x: i32, y: i32| (y * self.width + x) as usize;
        let mut dist = vec![u32::MAX; (self.width * self.height) as usize];
        let mut prev = vec![usize::MAX; dist.len()];
        let mut queue = std::collections::VecDeque::new();
        dist[idx(from.0, from.1)] = 0;
        queue.push_back(from);
        while let Some((x, y)) = queue.pop_front() {
            if (x, y) == self.goal {
                let mut path = vec![(x, y)];
                let mut cur = idx(x, y);
                while prev[cur] != usize::MAX {
                    cur = prev[cur];
                    path.push((cur as i32 % self.width, cur as i32 / self.width));
                }
                path.reverse();
                return Some((dist[idx(x, y)], path));
            }
            for (dx, dy) in [(0, -1), (0, 1), (-1, 0), (1, 0)] {
                let (nx, ny) = (x + dx, y + dy);
                if !self.is_wall(nx, ny) && dist[idx(nx, ny)] == u32::MAX {
                    dist[idx(nx, ny)] = dist[idx(x, y)] + 1;
                    prev[idx(nx, ny)] = idx(x, y);
                    queue.push_back((nx, ny));
                }
            }
        }
        None
    }

    /// The canonical optimal action sequence on this layout.
    pub fn optimal_actions(&self) -> Option<Vec<usize>> {
        let (_, path) = self.bfs_from(self.start)?;
        let mut actions = Vec::with_capacity(path.len().saturating_sub(1));
        for pair in path.windows(2) {
            let (dx, dy) = (pair[1].0 - pair[0].0, pair[1].1 - pair[0].1);
            actions.push(match (dx, dy) {
                (0, -1) => 0,
                (0, 1) => 1,
                (-1, 0) => 2,
                (1, 0) => 3,
                _ => unreachable!("bfs path steps one tile"),
            });
        }
        Some(actions)
    }

    fn open_cells(&self) -> Vec<(i32, i32)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.is_wall(x, y) && (x, y) != self.start && (x, y) != self.goal {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// Seeded walled test layout: the train corridor with 1-4 extra wall
/// segments, resampled until start -> goal stays reachable within the
/// horizon and at least one segment tile lies on the canonical optimal path.
pub fn generate_walled_layout(seed: u64) -> Result<MazeLayout> {
    let base = MazeLayout::train();
    let (_, canonical) = base
        .bfs_from(base.start)
        .ok_or_else(|| Error::Parse("train layout must be solvable".into()))?;
    let mut r = rng::stream(seed, "maze-walls");
    let open = base.open_cells();
    for _attempt in 0..10_000 {
        let mut layout = base.clone();
        let n_segments = 1 + (r.gen::<u64>() % 4) as usize;
        let mut added = Vec::new();
        for _ in 0..n_segments {
            let &(x, y) = &open[r.gen_range(0..open.len())];
            let len = 1 + (r.gen::<u64>() % 3) as i32;
            let (dx, dy) = if r.gen::<bool>() { (1, 0) } else { (0, 1) };
            for i in 0..len {
                let (cx, cy) = (x + dx * i, y + dy * i);
                if layout.is_wall(cx, cy) || (cx, cy) == layout.start || (cx, cy) == layout.goal {
                    continue;
                }
                layout.set_wall(cx, cy);
                added.push((cx, cy));
            }
        }
        if added.is_empty() || !added.iter().any(|c| canonical.contains(c)) {
            continue;
        }
        match layout.bfs_distance() {
            Some(d) if d <= 100 => return Ok(layout),
            _ => continue,
        }
    }
    Err(Error::InvalidArg(format!("maze wall seed {seed} produced no reachable layout")))
}

pub(crate) struct MazeEnv {
    layout: MazeLayout,
    pos: (i32, i32),
}

impl MazeEnv {
    pub fn new(layout: MazeLayout) -> Self {
        let start = layout.start;
        Self { layout, pos: start }
    }

    #[cfg(test)]
    pub fn pos(&self) -> (i32, i32) {
        self.pos
    }

    fn obs(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(25);
        for dy in -WINDOW..=WINDOW {
            for dx in -WINDOW..=WINDOW {
                out.push(if self.layout.is_wall(self.pos.0 + dx, self.pos.1 + dy) {
                    1.0
                } else {
                    0.0
                });
            }
        }
        out
    }

    pub fn reset(&mut self) -> Vec<f64> {
        self.pos = self.layout.start;
        self.obs()
    }

    pub fn step(&mut self, action: &ActionValue) -> Result<(Vec<f64>, f64, bool, bool)> {
        let a = match action {
            ActionValue::Discrete(a) if *a < 4 => *a,
            other => {
                return Err(Error::InvalidArg(format!(
                    "maze expects discrete action in 0..4, got {other:?}"
                )))
            }
        };
        let (dx, dy) = [(0, -1), (0, 1), (-1, 0), (1, 0)][a];
        let (nx, ny) = (self.pos.0 + dx, self.pos.1 + dy);
        if !self.layout.is_wall(nx, ny) {
            self.pos = (nx, ny);
        }
        let reached = self.pos == self.layout.goal;
        Ok((self.obs(), -1.0, reached, reached))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_variant, Family};

    /// Independent shortest-path oracle (Dijkstra over unit edges, distinct
    /// from the BFS used by the generator).
    fn oracle_shortest(layout: &MazeLayout) -> Option<u32> {
        let mut dist = std::collections::HashMap::new();
        let mut heap = std::collections::BinaryHeap::new();
        dist.insert(layout.start(), 0u32);
        heap.push(std::cmp::Reverse((0u32, layout.start())));
        while let Some(std::cmp::Reverse((d, (x, y)))) = heap.pop() {
            if (x, y) == layout.goal() {
                return Some(d);
            }
            if d > *dist.get(&(x, y)).unwrap_or(&u32::MAX) {
                continue;
            }
            for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
                let n = (x + dx, y + dy);
                if layout.is_wall(n.0, n.1) {
                    continue;
                }
                if d + 1 < *dist.get(&n).unwrap_or(&u32::MAX) {
                    dist.insert(n, d + 1);
                    heap.push(std::cmp::Reverse((d + 1, n)));
                }
            }
        }
        None
    }

    #[test]
    fn train_layout_shortest_path_is_sixteen() {
        let layout = MazeLayout::train();
        assert_eq!(layout.width(), 21);
        assert_eq!(layout.height(), 11);
        assert_eq!(layout.start(), (10, 0));
        assert_eq!(layout.goal(), (10, 10));
        assert_eq!(layout.bfs_distance(), Some(16));
        assert_eq!(oracle_shortest(&layout), Some(16));
    }

    #[test]
    fn map_text_round_trips() {
        let layout = MazeLayout::train();
        let reparsed = MazeLayout::parse(&layout.to_text()).unwrap();
        assert_eq!(layout, reparsed);
    }

    #[test]
    fn all_registered_walled_layouts_stay_reachable() {
        for seed in MAZE_TEST_SEEDS {
            let layout = generate_walled_layout(seed).unwrap();
            let d = oracle_shortest(&layout).expect("reachable");
            assert!(d <= 100, "seed {seed} dist {d}");
            assert!(d >= 16, "walls cannot shorten the path");
        }
    }

    #[test]
    fn optimal_path_returns_minus_sixteen() {
        let v = make_variant(Family::Maze2d, "train").unwrap();
        let mut env = v.make_env().unwrap();
        let mut r = crate::rng::stream(0, "env");
        env.reset(&mut r);
        let actions = MazeLayout::train().optimal_actions().unwrap();
        assert_eq!(actions.len(), 16);
        let mut ret = 0.0;
        let mut done = false;
        for a in actions {
            let s = env.step(&ActionValue::Discrete(a)).unwrap();
            ret += s.reward;
            done = s.done;
            if done {
                assert!(s.info.reached_goal);
            }
        }
        assert!(done);
        assert_eq!(ret, -16.0);
    }

    #[test]
    fn never_reaching_the_goal_returns_minus_hundred() {
        let v = make_variant(Family::Maze2d, "train").unwrap();
        let mut env = v.make_env().unwrap();
        let mut r = crate::rng::stream(0, "env");
        env.reset(&mut r);
        let mut ret = 0.0;
        let mut steps = 0;
        loop {
            // Bounce between up and left; never leaves the start area.
            let s = env.step(&ActionValue::Discrete(if steps % 2 == 0 { 0 } else { 2 })).unwrap();
            ret += s.reward;
            steps += 1;
            if s.done {
                assert!(s.info.truncated);
                break;
            }
        }
        assert_eq!(steps, 100);
        assert_eq!(ret, -100.0);
    }

    #[test]
    fn blocked_moves_leave_position_unchanged() {
        let v = make_variant(Family::Maze2d, "train").unwrap();
        let mut env = v.make_env().unwrap();
        let mut r = crate::rng::stream(0, "env");
        env.reset(&mut r);
        let before = env.maze_pos().unwrap();
        env.step(&ActionValue::Discrete(0)).unwrap(); // up from the top row
        assert_eq!(env.maze_pos().unwrap(), before);
        let layout = MazeLayout::train();
        assert!(!layout.is_wall(before.0, before.1));
    }

    #[test]
    fn reset_observation_is_the_five_by_five_window() {
        let v = make_variant(Family::Maze2d, "train").unwrap();
        let mut env = v.make_env().unwrap();
        let mut r = crate::rng::stream(0, "env");
        let obs = env.reset(&mut r);
        assert_eq!(obs.len(), 25);
        assert_eq!(env.steps(), 0);
        // Start is (10, 0): the two rows above are out of bounds -> walls.
        for i in 0..10 {
            assert_eq!(obs[i], 1.0);
        }
        // The agent's own tile is free.
        assert_eq!(obs[12], 0.0);
        // Tiles left/right of start on the top row are open corridor.
        assert_eq!(obs[11], 0.0);
        assert_eq!(obs[13], 0.0);
    }

    #[test]
    fn walled_layouts_differ_from_train_and_intersect_the_canonical_path() {
        let train = MazeLayout::train();
        let canonical: Vec<(i32, i32)> = {
            let acts = train.optimal_actions().unwrap();
            let mut pos = train.start();
            let mut path = vec![pos];
            for a in acts {
                let (dx, dy) = [(0, -1), (0, 1), (-1, 0), (1, 0)][a];
                pos = (pos.0 + dx, pos.1 + dy);
                path.push(pos);
            }
            path
        };
        for seed in MAZE_TEST_SEEDS {
            let layout = generate_walled_layout(seed).unwrap();
            let blocked_on_path = canonical
                .iter()
                .any(|&(x, y)| layout.is_wall(x, y) && !train.is_wall(x, y));
            assert!(blocked_on_path, "seed {seed} does not perturb the optimal path");
        }
    }

    #[test]
    fn agent_never_occupies_a_wall_tile() {
        use rand::RngCore;
        let v = make_variant(Family::Maze2d, "test1").unwrap();
        let mut env = v.make_env().unwrap();
        let mut r = crate::rng::stream(3, "env");
        env.reset(&mut r);
        let layout = generate_walled_layout(MAZE_TEST_SEEDS[0]).unwrap();
        let mut walk = crate::rng::stream(3, "walk");
        for _ in 0..100 {
            let a = (walk.next_u32() % 4) as usize;
            let s = env.step(&ActionValue::Discrete(a)).unwrap();
            let pos = env.maze_pos().unwrap();
            assert!(!layout.is_wall(pos.0, pos.1));
            if s.done {
                env.reset(&mut r);
            }
        }
    }
}
