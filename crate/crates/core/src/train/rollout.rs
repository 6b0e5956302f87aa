use rand_chacha::ChaCha8Rng;

use crate::diffcore::{ParameterSet, TensorBuffer};
use crate::envs::{Env, FrameStack};
use crate::error::{Error, Result};
use crate::policy::{Action, ActorCritic};
use crate::ppo::{RolloutBatch, Transition};
use crate::replay::{replay_into_rollout, select_source, Origin, ReplayStore, Source, Trajectory};

use rand::Rng;

/// Per-actor state that survives between rollouts.
#[derive(Debug, Clone)]
pub struct Actor {
    pub env: Env,
    stack: FrameStack,
    cursor: Cursor,
    action_rng: ChaCha8Rng,
    source_rng: ChaCha8Rng,
    env_rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
enum Cursor {
    Idle,
    Live { obs: Vec<f64>, log: EpisodeLog },
    Replay { traj: Trajectory, values: Vec<f64>, pos: usize },
}

#[derive(Debug, Clone, Default)]
struct EpisodeLog {
    obs: Vec<Vec<f64>>,
    actions: Vec<Action>,
    rewards: Vec<f64>,
}

/// What one actor produced during one rollout.
#[derive(Debug, Clone, Default)]
pub struct ActorOutput {
    pub transitions: Vec<Transition>,
    pub bootstrap: Option<f64>,
    /// Finished live episodes, in completion order.
    pub completed: Vec<Trajectory>,
    /// `(id, priority)` for value-buffer trajectories replayed here.
    pub refreshed: Vec<(u64, f64)>,
    pub live_frames: u64,
    pub replay_frames: u64,
}

/// A collected batch plus the bookkeeping the update phase needs.
#[derive(Debug, Clone, Default)]
pub struct Rollout {
    pub batch: RolloutBatch,
    pub bootstrap: Vec<Option<f64>>,
    pub completed: Vec<Trajectory>,
    pub refreshed: Vec<(u64, f64)>,
    pub live_frames: u64,
    pub replay_frames: u64,
}

impl Rollout {
    fn absorb(&mut self, out: ActorOutput) {
        self.batch.push_segment(out.transitions);
        self.bootstrap.push(out.bootstrap);
        self.completed.extend(out.completed);
        self.refreshed.extend(out.refreshed);
        self.live_frames += out.live_frames;
        self.replay_frames += out.replay_frames;
    }
}

impl Actor {
    pub fn new(env: Env, frame_stack: usize, action_rng: ChaCha8Rng, source_rng: ChaCha8Rng, env_rng: ChaCha8Rng) -> Self {
        Self {
            env,
            stack: FrameStack::new(frame_stack),
            cursor: Cursor::Idle,
            action_rng,
            source_rng,
            env_rng,
        }
    }

    fn start_live(&mut self) -> Result<()> {
        let seed: u64 = self.env_rng.random();
        let frame = self.env.reset(seed)?;
        self.cursor = Cursor::Live {
            obs: self.stack.reset(&frame),
            log: EpisodeLog::default(),
        };
        Ok(())
    }

    fn start_replay(&mut self, traj: Trajectory, ac: &ActorCritic, params: &ParameterSet) -> Result<Vec<f64>> {
        let values = ac.values(params, &traj.flat_observations())?;
        self.cursor = Cursor::Replay {
            traj,
            values: values.clone(),
            pos: 0,
        };
        Ok(values)
    }

    /// One live step under the current policy.
    fn live_step(&mut self, ac: &ActorCritic, params: &ParameterSet, out: &mut ActorOutput) -> Result<()> {
        let Cursor::Live { obs, log } = &mut self.cursor else {
            unreachable!("live step without a live episode")
        };
        let rec = ac.act(params, &TensorBuffer::vector(obs.clone()), &mut self.action_rng)?;
        let step = self.env.step(&rec.action)?;
        out.live_frames += 1;
        log.obs.push(obs.clone());
        log.actions.push(rec.action.clone());
        log.rewards.push(step.reward);
        out.transitions.push(Transition::live(
            std::mem::take(obs),
            rec.action,
            step.reward,
            step.done,
            rec.log_prob,
            rec.value,
        ));
        if step.done {
            let log = std::mem::take(log);
            out.completed
                .push(Trajectory::new(log.obs, log.actions, log.rewards, Origin::SelfUnsuccessful)?);
            self.cursor = Cursor::Idle;
        } else {
            *obs = self.stack.push(&step.obs);
        }
        Ok(())
    }

    fn replay_step(&mut self, out: &mut ActorOutput) {
        let Cursor::Replay { traj, values, pos } = &mut self.cursor else {
            unreachable!("replay step without a trajectory")
        };
        out.transitions.extend(replay_into_rollout(traj, *pos, 1, values));
        out.replay_frames += 1;
        *pos += 1;
        if *pos == traj.len() {
            self.cursor = Cursor::Idle;
        }
    }

    fn bootstrap(&self, ac: &ActorCritic, params: &ParameterSet) -> Result<Option<f64>> {
        Ok(match &self.cursor {
            Cursor::Idle => None,
            Cursor::Live { obs, .. } => Some(ac.values(params, obs)?[0]),
            Cursor::Replay { values, pos, .. } => Some(values[*pos]),
        })
    }

    /// Fills a `steps`-long segment, choosing a source whenever an episode
    /// ends. A replay carried over from the previous rollout gets fresh
    /// value estimates.
    pub fn fill(&mut self, steps: usize, ac: &ActorCritic, params: &ParameterSet, store: &ReplayStore) -> Result<ActorOutput> {
        let mut out = ActorOutput::default();
        if let Cursor::Replay { traj, values, .. } = &mut self.cursor {
            *values = ac.values(params, &traj.flat_observations())?;
        }
        while out.transitions.len() < steps {
            if matches!(self.cursor, Cursor::Idle) {
                match select_source(&store.sched, store.dr.is_empty(), store.dv.is_empty(), &mut self.source_rng) {
                    Source::FromEnv => self.start_live()?,
                    Source::FromDR => {
                        let i = store.dr.sample(&mut self.source_rng)?;
                        let traj = store.dr.get(i).expect("sampled index").clone();
                        self.start_replay(traj, ac, params)?;
                    }
                    Source::FromDV => {
                        let i = store.dv.sample(&mut self.source_rng)?;
                        let traj = store.dv.get(i).expect("sampled index").clone();
                        let id = traj.id;
                        let values = self.start_replay(traj, ac, params)?;
                        let p = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        out.refreshed.push((id, p));
                    }
                }
            }
            match self.cursor {
                Cursor::Live { .. } => self.live_step(ac, params, &mut out)?,
                Cursor::Replay { .. } => self.replay_step(&mut out),
                Cursor::Idle => unreachable!("source selected above"),
            }
        }
        out.bootstrap = self.bootstrap(ac, params)?;
        Ok(out)
    }

    /// Live-only segment: the plain PPO collector.
    pub fn fill_live(&mut self, steps: usize, ac: &ActorCritic, params: &ParameterSet) -> Result<ActorOutput> {
        let mut out = ActorOutput::default();
        while out.transitions.len() < steps {
            if matches!(self.cursor, Cursor::Idle) {
                self.start_live()?;
            }
            self.live_step(ac, params, &mut out)?;
        }
        out.bootstrap = self.bootstrap(ac, params)?;
        Ok(out)
    }
}

/// Runs `f` on every actor, serially or on scoped threads, and gathers the
/// outputs in actor order.
fn run_actors<F>(actors: &mut [Actor], parallel: bool, f: F) -> Result<Rollout>
where
    F: Fn(&mut Actor) -> Result<ActorOutput> + Sync,
{
    let outputs: Vec<Result<ActorOutput>> = if parallel && actors.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = actors.iter_mut().map(|a| s.spawn(|| f(a))).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::contract("actor thread panicked"))))
                .collect()
        })
    } else {
        actors.iter_mut().map(&f).collect()
    };
    let mut rollout = Rollout::default();
    for out in outputs {
        rollout.absorb(out?);
    }
    Ok(rollout)
}

/// Mixed-source collection: every actor draws its next episode from the
/// reward buffer, the value buffer or its env.
pub fn collect_rollout(
    actors: &mut [Actor],
    steps: usize,
    ac: &ActorCritic,
    params: &ParameterSet,
    store: &ReplayStore,
    parallel: bool,
) -> Result<Rollout> {
    run_actors(actors, parallel, |a| a.fill(steps, ac, params, store))
}

/// Live-only collection.
pub fn collect_live_rollout(
    actors: &mut [Actor],
    steps: usize,
    ac: &ActorCritic,
    params: &ParameterSet,
    parallel: bool,
) -> Result<Rollout> {
    run_actors(actors, parallel, |a| a.fill_live(steps, ac, params))
}
