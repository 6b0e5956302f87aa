//! Trajectory storage for replay: the reward buffer of successful episodes,
//! the value-prioritized buffer of unsuccessful ones, and the schedule that
//! moves probability mass from the latter to the former.

mod buffers;
mod scheduler;

use serde::{Deserialize, Serialize};

pub use buffers::{
    priority_probabilities, sample_reward_traj, sample_value_traj, RewardBuffer, ValueBuffer, ValueOffer, PRIORITY_EPS,
};
pub use scheduler::{anneal, select_source, ReplayScheduler, Source};

use crate::error::{Error, Result};
use crate::policy::Action;
use crate::ppo::Transition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    HumanDemo,
    SelfSuccess,
    SelfUnsuccessful,
}

/// One complete episode. `observations[t]` is the policy input before
/// `actions[t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u64,
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub episode_return: f64,
    pub priority: f64,
    pub origin: Origin,
}

impl Trajectory {
    pub fn new(observations: Vec<Vec<f64>>, actions: Vec<Action>, rewards: Vec<f64>, origin: Origin) -> Result<Self> {
        let n = rewards.len();
        if n == 0 {
            return Err(Error::contract("trajectory must have at least one step"));
        }
        if observations.len() != n || actions.len() != n {
            return Err(Error::contract(format!(
                "trajectory lengths differ: {} observations, {} actions, {} rewards",
                observations.len(),
                actions.len(),
                n
            )));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::Numeric {
                what: "trajectory reward".into(),
            });
        }
        Ok(Self {
            id: 0,
            observations,
            actions,
            episode_return: rewards.iter().sum(),
            rewards,
            priority: 0.0,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Concatenated observations, row per step.
    pub fn flat_observations(&self) -> Vec<f64> {
        self.observations.iter().flatten().copied().collect()
    }
}

/// Max value estimate along the trajectory.
pub fn refresh_priority(traj: &mut Trajectory, mut value_fn: impl FnMut(&[f64]) -> f64) -> f64 {
    traj.priority = traj
        .observations
        .iter()
        .map(|o| value_fn(o))
        .fold(f64::NEG_INFINITY, f64::max);
    traj.priority
}

/// Stored steps `start..start + len` (clipped to the episode) as replay
/// transitions. `values[t]` is the current estimate for step `t` of the whole
/// trajectory. The final stored step is marked done.
pub fn replay_into_rollout(traj: &Trajectory, start: usize, len: usize, values: &[f64]) -> Vec<Transition> {
    let end = (start + len).min(traj.len());
    (start..end)
        .map(|t| {
            Transition::replayed(
                traj.observations[t].clone(),
                traj.actions[t].clone(),
                traj.rewards[t],
                t + 1 == traj.len(),
                values[t],
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InsertOutcome {
    RewardBuffer,
    ValueBuffer,
    /// The value buffer was full and the priority did not beat its minimum.
    BelowMinimum,
    NegativeReturn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InsertReport {
    pub id: u64,
    pub outcome: InsertOutcome,
    pub annealed: bool,
    /// Ids dropped from either buffer by this insertion.
    pub evicted: Vec<u64>,
}

/// Routes a finished live episode: successes into the reward buffer (with
/// one annealing step while the value buffer still has capacity), failures
/// to the value buffer.
pub fn insert_episode(
    mut traj: Trajectory,
    dr: &mut RewardBuffer,
    dv: &mut ValueBuffer,
    sched: &mut ReplayScheduler,
) -> InsertReport {
    let id = traj.id;
    let mut report = InsertReport {
        id,
        outcome: InsertOutcome::NegativeReturn,
        annealed: false,
        evicted: Vec::new(),
    };
    if traj.episode_return < 0.0 {
        return report;
    }
    if traj.episode_return > 0.0 {
        traj.origin = Origin::SelfSuccess;
        report.outcome = InsertOutcome::RewardBuffer;
        report.evicted.extend(dr.push(traj).map(|t| t.id));
        if anneal(sched) {
            report.annealed = true;
            report
                .evicted
                .extend(dv.set_capacity(sched.dv_cap).into_iter().map(|t| t.id));
        }
    } else {
        traj.origin = Origin::SelfUnsuccessful;
        match dv.offer(traj) {
            ValueOffer::Inserted => report.outcome = InsertOutcome::ValueBuffer,
            ValueOffer::Replaced(old) => {
                report.outcome = InsertOutcome::ValueBuffer;
                report.evicted.push(old.id);
            }
            ValueOffer::Rejected => report.outcome = InsertOutcome::BelowMinimum,
        }
    }
    report
}

/// Both buffers, their schedule, and the id counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayStore {
    pub dr: RewardBuffer,
    pub dv: ValueBuffer,
    pub sched: ReplayScheduler,
    next_id: u64,
}

impl ReplayStore {
    pub fn new(sched: ReplayScheduler, alpha: f64, shift: bool) -> Result<Self> {
        Ok(Self {
            dr: RewardBuffer::new(sched.total()),
            dv: ValueBuffer::new(sched.dv_cap, alpha, shift)?,
            sched,
            next_id: 1,
        })
    }

    fn assign_id(&mut self, traj: &mut Trajectory) {
        traj.id = self.next_id;
        self.next_id += 1;
    }

    /// Adds a demonstration; it is never evicted and triggers no annealing.
    pub fn add_demo(&mut self, mut traj: Trajectory) -> Result<u64> {
        self.assign_id(&mut traj);
        traj.origin = Origin::HumanDemo;
        let id = traj.id;
        if self.dr.demo_count() >= self.dr.capacity() {
            return Err(Error::config("more demonstrations than reward-buffer slots"));
        }
        self.dr.push(traj);
        Ok(id)
    }

    pub fn insert(&mut self, mut traj: Trajectory) -> InsertReport {
        self.assign_id(&mut traj);
        insert_episode(traj, &mut self.dr, &mut self.dv, &mut self.sched)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(rewards: &[f64]) -> Trajectory {
        let n = rewards.len();
        Trajectory::new(
            (0..n).map(|i| vec![i as f64]).collect(),
            (0..n).map(Action::Discrete).collect(),
            rewards.to_vec(),
            Origin::SelfUnsuccessful,
        )
        .unwrap()
    }

    fn store() -> ReplayStore {
        let sched = ReplayScheduler::new(0.1, 0.3, 50, 1).unwrap();
        let mut s = ReplayStore::new(sched, 10.0, true).unwrap();
        s.add_demo(traj(&[0.0, 1.0])).unwrap();
        s
    }

    #[test]
    fn trajectory_validation() {
        assert!(Trajectory::new(vec![], vec![], vec![], Origin::HumanDemo).is_err());
        assert!(Trajectory::new(vec![vec![0.0]], vec![], vec![1.0], Origin::HumanDemo).is_err());
        assert_eq!(traj(&[0.0, 0.5, 0.25]).episode_return, 0.75);
    }

    #[test]
    fn priority_is_max_value() {
        let mut t = traj(&[0.0, 0.0, 0.0]);
        assert_eq!(refresh_priority(&mut t, |_| 2.5), 2.5);
        assert_eq!(refresh_priority(&mut t, |o| if o[0] == 1.0 { 5.0 } else { 0.0 }), 5.0);
    }

    #[test]
    fn success_anneals_once() {
        let mut s = store();
        let r = s.insert(traj(&[0.0, 1.0]));
        assert_eq!(r.outcome, InsertOutcome::RewardBuffer);
        assert!(r.annealed);
        assert_eq!(s.sched.dr_size, 2);
        assert_eq!(s.sched.dv_cap, 49);
        assert_eq!(s.dv.capacity(), 49);
    }

    #[test]
    fn full_reward_buffer_evicts_oldest_and_keeps_demo() {
        let mut s = store();
        let mut ids = Vec::new();
        for _ in 0..50 {
            ids.push(s.insert(traj(&[1.0])).id);
        }
        assert_eq!(s.sched.dv_cap, 0);
        assert_eq!(s.sched.phi, 0.0);
        let r = s.insert(traj(&[1.0]));
        assert!(!r.annealed);
        assert_eq!(r.evicted, vec![ids[0]]);
        assert_eq!(s.dr.len(), 51);
        assert_eq!(s.dr.demo_count(), 1);
    }

    #[test]
    fn failure_below_minimum_rejected() {
        let sched = ReplayScheduler::new(0.1, 0.3, 2, 1).unwrap();
        let mut s = ReplayStore::new(sched, 10.0, true).unwrap();
        for p in [1.0, 2.0] {
            let mut t = traj(&[0.0]);
            t.priority = p;
            assert_eq!(s.insert(t).outcome, InsertOutcome::ValueBuffer);
        }
        let mut low = traj(&[0.0]);
        low.priority = 0.5;
        assert_eq!(s.insert(low).outcome, InsertOutcome::BelowMinimum);
        let mut high = traj(&[0.0]);
        high.priority = 3.0;
        let r = s.insert(high);
        assert_eq!(r.outcome, InsertOutcome::ValueBuffer);
        assert_eq!(r.evicted.len(), 1);
        let mut ps: Vec<f64> = s.dv.iter().map(|t| t.priority).collect();
        ps.sort_by(f64::total_cmp);
        assert_eq!(ps, vec![2.0, 3.0]);
    }

    #[test]
    fn negative_return_rejected() {
        let mut s = store();
        assert_eq!(s.insert(traj(&[-1.0])).outcome, InsertOutcome::NegativeReturn);
    }

    #[test]
    fn replay_is_verbatim() {
        let t = traj(&[0.0, 0.0, 0.0, 0.0, 1.0]);
        let values = vec![0.5; 5];
        let out = replay_into_rollout(&t, 0, 5, &values);
        assert_eq!(out.len(), 5);
        for (k, tr) in out.iter().enumerate() {
            assert_eq!(tr.action, t.actions[k]);
            assert_eq!(tr.reward, t.rewards[k]);
            assert!(tr.is_replay);
            assert_eq!(tr.behavior_log_prob, 0.0);
            assert_eq!(tr.done, k == 4);
        }
        let short = replay_into_rollout(&traj(&[0.0, 0.0, 1.0]), 0, 5, &values);
        assert_eq!(short.len(), 3);
        assert_eq!(short.iter().map(|t| t.reward).sum::<f64>(), 1.0);
    }
}
