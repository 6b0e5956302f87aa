//! Scripted experts: an exact shortest-path planner for the grid tasks and an
//! inverse-kinematics PD controller for the reacher. Both stand in for a
//! human demonstrator and serve as reachability oracles in tests.

use std::collections::{HashSet, VecDeque};
use std::f64::consts::PI;

use super::grid::GridState;
use super::reacher::SparsePointReacher;
use super::{Env, FrameStack, GridAction, GRID_STEP_LIMIT};
use crate::error::{Error, Result};
use crate::policy::Action;
use crate::replay::{Origin, Trajectory};

/// Upper bound on expanded states before the planner gives up.
const MAX_STATES: usize = 4_000_000;

const SEARCH_ACTIONS: [GridAction; 8] = [
    GridAction::Forward,
    GridAction::Back,
    GridAction::Left,
    GridAction::Right,
    GridAction::RotateLeft,
    GridAction::RotateRight,
    GridAction::Push,
    GridAction::Interact,
];

/// Breadth-first search for the shortest action sequence reaching the goal
/// from `start` within `max_len` steps.
pub fn solve_grid(start: &GridState, max_len: usize) -> Option<Vec<GridAction>> {
    let mut nodes: Vec<(GridState, usize, GridAction)> = vec![(start.clone(), usize::MAX, GridAction::Noop)];
    let mut depth = vec![0usize];
    let mut seen = HashSet::from([start.clone()]);
    let mut queue = VecDeque::from([0usize]);
    while let Some(i) = queue.pop_front() {
        if depth[i] >= max_len || nodes.len() > MAX_STATES {
            continue;
        }
        for a in SEARCH_ACTIONS {
            let mut next = nodes[i].0.clone();
            let reached = next.apply(a);
            if reached {
                let mut plan = vec![a];
                let mut k = i;
                while nodes[k].1 != usize::MAX {
                    plan.push(nodes[k].2);
                    k = nodes[k].1;
                }
                plan.reverse();
                return Some(plan);
            }
            if !seen.contains(&next) {
                seen.insert(next.clone());
                nodes.push((next, i, a));
                depth.push(depth[i] + 1);
                queue.push_back(nodes.len() - 1);
            }
        }
    }
    None
}

/// Torque that drives the arm towards the inverse-kinematics solution
/// nearest its current configuration.
pub fn reacher_controller(env: &SparsePointReacher) -> [f64; 2] {
    let [x, y] = env.target();
    let r = x.hypot(y).clamp(1e-9, 2.0 - 1e-9);
    let c2 = ((r * r - 2.0) / 2.0).clamp(-1.0, 1.0);
    let q = env.angles();
    let w = env.speeds();
    let candidates = [c2.acos(), -c2.acos()].map(|q2| {
        let q1 = y.atan2(x) - q2.sin().atan2(1.0 + q2.cos());
        [q1, q2]
    });
    let cost = |c: &[f64; 2]| wrap(c[0] - q[0]).abs() + wrap(c[1] - q[1]).abs();
    let goal = if cost(&candidates[0]) <= cost(&candidates[1]) {
        candidates[0]
    } else {
        candidates[1]
    };
    let (kp, kd) = (1.0, 0.25);
    [0, 1].map(|j| (kp * wrap(goal[j] - q[j]) - kd * w[j]).clamp(-1.0, 1.0))
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Plays one episode with the scripted expert from `seed` and records it as a
/// demonstration. Observations are single frames, stacked `frame_stack` deep.
pub fn scripted_episode(env: &mut Env, seed: u64, frame_stack: usize) -> Result<Trajectory> {
    let first = env.reset(seed)?;
    let task = env.task();
    let plan: Option<Vec<GridAction>> = match env {
        Env::Grid(g) => Some(
            solve_grid(g.state(), GRID_STEP_LIMIT)
                .ok_or_else(|| Error::Domain(format!("no solution for {task} seed {seed}")))?,
        ),
        Env::Reacher(_) => None,
    };
    let mut frames = vec![first];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    loop {
        let action = match (&plan, &*env) {
            (Some(p), _) => Action::Discrete(p[actions.len()].id()),
            (None, Env::Reacher(r)) => Action::Continuous(reacher_controller(r).to_vec()),
            (None, Env::Grid(_)) => unreachable!(),
        };
        let step = env.step(&action)?;
        actions.push(action);
        rewards.push(step.reward);
        if step.done {
            break;
        }
        frames.push(step.obs);
    }
    let observations = FrameStack::stack_episode(frame_stack, &frames);
    Trajectory::new(observations, actions, rewards, Origin::HumanDemo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{is_success, TaskId};

    #[test]
    fn planner_solves_every_grid_task() {
        for task in [TaskId::OneBoxEasy, TaskId::OneBoxHard, TaskId::TwoBoxEasy, TaskId::TwoBoxHard] {
            let mut env = Env::new(task);
            for seed in 0..5 {
                let traj = scripted_episode(&mut env, seed, 1).unwrap();
                assert!(is_success(&traj), "{task} seed {seed}");
                assert!(traj.len() <= GRID_STEP_LIMIT);
                assert_eq!(traj.episode_return, 1.0);
            }
        }
    }

    #[test]
    fn controller_reaches_target() {
        let mut env = Env::new(TaskId::ReacherSparse);
        for seed in 0..20 {
            let traj = scripted_episode(&mut env, seed, 1).unwrap();
            assert!(traj.episode_return > 50.0, "seed {seed}: {}", traj.episode_return);
        }
    }
}
