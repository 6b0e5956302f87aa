//! Sparse-reward tasks: four grid box-pushing variants and a thresholded
//! two-joint reacher.

mod grid;
mod reacher;
pub mod scripted;

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use grid::{GridAction, GridBoxWorld, GridVariant, GRID_ACTIONS, GRID_SIZE, GRID_STEP_LIMIT};
pub use grid::{Cell, Dir, GridState, Pos};
pub use reacher::{
    forward_kinematics, reacher_reward, SparsePointReacher, REACHER_OBS_DIM, REACHER_STEP_LIMIT, REACHER_THRESHOLD,
};

use crate::error::{Error, Result};
use crate::policy::{Action, ActionSpace};
use crate::replay::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskId {
    #[serde(rename = "grid.onebox.easy")]
    OneBoxEasy,
    #[serde(rename = "grid.onebox.hard")]
    OneBoxHard,
    #[serde(rename = "grid.twobox.easy")]
    TwoBoxEasy,
    #[serde(rename = "grid.twobox.hard")]
    TwoBoxHard,
    #[serde(rename = "reacher.sparse")]
    ReacherSparse,
}

impl TaskId {
    pub const ALL: [TaskId; 5] = [
        TaskId::OneBoxEasy,
        TaskId::OneBoxHard,
        TaskId::TwoBoxEasy,
        TaskId::TwoBoxHard,
        TaskId::ReacherSparse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::OneBoxEasy => "grid.onebox.easy",
            TaskId::OneBoxHard => "grid.onebox.hard",
            TaskId::TwoBoxEasy => "grid.twobox.easy",
            TaskId::TwoBoxHard => "grid.twobox.hard",
            TaskId::ReacherSparse => "reacher.sparse",
        }
    }

    pub fn grid_variant(self) -> Option<GridVariant> {
        match self {
            TaskId::OneBoxEasy => Some(GridVariant::OneBoxEasy),
            TaskId::OneBoxHard => Some(GridVariant::OneBoxHard),
            TaskId::TwoBoxEasy => Some(GridVariant::TwoBoxEasy),
            TaskId::TwoBoxHard => Some(GridVariant::TwoBoxHard),
            TaskId::ReacherSparse => None,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown task `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// Any task from the catalog.
#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    Grid(GridBoxWorld),
    Reacher(SparsePointReacher),
}

impl Env {
    pub fn new(task: TaskId) -> Self {
        match task.grid_variant() {
            Some(v) => Env::Grid(GridBoxWorld::new(v)),
            None => Env::Reacher(SparsePointReacher::new()),
        }
    }

    pub fn task(&self) -> TaskId {
        match self {
            Env::Grid(g) => g.variant().task_id(),
            Env::Reacher(_) => TaskId::ReacherSparse,
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match self {
            Env::Grid(_) => ActionSpace::Discrete { n: GRID_ACTIONS },
            Env::Reacher(_) => ActionSpace::Continuous { dims: 2 },
        }
    }

    /// Width of one (unstacked) observation.
    pub fn obs_dim(&self) -> usize {
        match self {
            Env::Grid(g) => g.obs_dim(),
            Env::Reacher(_) => REACHER_OBS_DIM,
        }
    }

    pub fn step_limit(&self) -> usize {
        match self {
            Env::Grid(_) => GRID_STEP_LIMIT,
            Env::Reacher(_) => REACHER_STEP_LIMIT,
        }
    }

    pub fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        match self {
            Env::Grid(g) => g.reset(seed),
            Env::Reacher(r) => r.reset(seed),
        }
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        self.action_space().validate(action)?;
        match (self, action) {
            (Env::Grid(g), Action::Discrete(a)) => g.step(GridAction::from_id(*a)?),
            (Env::Reacher(r), Action::Continuous(u)) => r.step([u[0], u[1]]),
            _ => unreachable!("validated above"),
        }
    }

    pub fn encode_obs(&self) -> Vec<f64> {
        match self {
            Env::Grid(g) => g.encode_obs(),
            Env::Reacher(r) => r.encode_obs(),
        }
    }

    pub fn is_done(&self) -> bool {
        match self {
            Env::Grid(g) => g.is_done(),
            Env::Reacher(r) => r.is_done(),
        }
    }

    pub fn step_count(&self) -> usize {
        match self {
            Env::Grid(g) => g.step_count(),
            Env::Reacher(r) => r.step_count(),
        }
    }

    pub fn render_ascii(&self) -> String {
        match self {
            Env::Grid(g) => g.render_ascii(),
            Env::Reacher(r) => r.render_ascii(),
        }
    }

    /// Structured state for the recorder protocol.
    pub fn render_cells(&self) -> serde_json::Value {
        match self {
            Env::Grid(g) => g.render_cells(),
            Env::Reacher(r) => r.render_cells(),
        }
    }
}

/// Success means the episode collected any reward at all.
pub fn is_success(traj: &Trajectory) -> bool {
    traj.episode_return > 0.0
}

/// Concatenates the last `k` frames, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    k: usize,
    frames: VecDeque<Vec<f64>>,
}

impl FrameStack {
    pub fn new(k: usize) -> Self {
        Self {
            k: k.max(1),
            frames: VecDeque::new(),
        }
    }

    pub fn depth(&self) -> usize {
        self.k
    }

    /// Starts a new episode: every slot holds `obs`.
    pub fn reset(&mut self, obs: &[f64]) -> Vec<f64> {
        self.frames.clear();
        for _ in 0..self.k {
            self.frames.push_back(obs.to_vec());
        }
        self.stacked()
    }

    pub fn push(&mut self, obs: &[f64]) -> Vec<f64> {
        if self.frames.is_empty() {
            return self.reset(obs);
        }
        self.frames.pop_front();
        self.frames.push_back(obs.to_vec());
        self.stacked()
    }

    pub fn stacked(&self) -> Vec<f64> {
        self.frames.iter().flatten().copied().collect()
    }

    /// Stacks a whole episode of single frames.
    pub fn stack_episode(k: usize, frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut fs = FrameStack::new(k);
        frames
            .iter()
            .enumerate()
            .map(|(i, f)| if i == 0 { fs.reset(f) } else { fs.push(f) })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_ids_round_trip() {
        for t in TaskId::ALL {
            assert_eq!(t.as_str().parse::<TaskId>().unwrap(), t);
            assert_eq!(Env::new(t).task(), t);
        }
        assert!("grid.threebox".parse::<TaskId>().is_err());
    }

    #[test]
    fn frame_stack_order() {
        let mut fs = FrameStack::new(3);
        assert_eq!(fs.reset(&[1.0]), vec![1.0, 1.0, 1.0]);
        assert_eq!(fs.push(&[2.0]), vec![1.0, 1.0, 2.0]);
        assert_eq!(fs.push(&[3.0]), vec![1.0, 2.0, 3.0]);
        assert_eq!(fs.push(&[4.0]), vec![2.0, 3.0, 4.0]);
        let ep = FrameStack::stack_episode(2, &[vec![1.0], vec![2.0], vec![3.0]]);
        assert_eq!(ep, vec![vec![1.0, 1.0], vec![1.0, 2.0], vec![2.0, 3.0]]);
    }

    #[test]
    fn success_is_positive_return() {
        use crate::replay::Origin;
        let mk = |r: Vec<f64>| {
            let n = r.len();
            Trajectory::new(vec![vec![0.0]; n], vec![Action::Discrete(0); n], r, Origin::SelfUnsuccessful)
                .unwrap()
        };
        assert!(is_success(&mk(vec![0.0, 0.0, 1.0])));
        assert!(!is_success(&mk(vec![0.0, 0.0, 0.0])));
    }
}
