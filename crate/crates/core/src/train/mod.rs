//! The training loop: collect from mixed sources, estimate advantages,
//! update, route finished episodes into the replay buffers, repeat.

mod eval;
mod rollout;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use eval::{evaluate, evaluate_with, EvalReport};
pub use rollout::{collect_live_rollout, collect_rollout, Actor, ActorOutput, Rollout};

use crate::baselines::{bc_train, ppo_bc_update, DemoDataset};
use crate::config::{Algo, RunConfig};
use crate::diffcore::{AdamState, Checkpoint, ParameterSet};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::policy::{ActorCritic, NetworkSpec};
use crate::ppo::{compute_gae, ppo_update, LossReport, RolloutBatch};
use crate::replay::{replay_into_rollout, ReplayScheduler, ReplayStore, Trajectory};

pub const METRICS_HEADER: &str =
    "update,live_frames,mean_return,success_rate,rho,phi,dr_size,dv_size,surrogate,value_loss,entropy,clip_fraction";
pub const EVAL_HEADER: &str = "update,live_frames,episodes,success_rate,mean_return,mean_length";

/// Replay-only schedules would never consume live frames; they stop once
/// this multiple of the live budget has been processed in total.
const REPLAY_ONLY_FACTOR: u64 = 20;

const PARAM_STREAM: u64 = 0;
const UPDATE_STREAM: u64 = 1;
const COIN_STREAM: u64 = 2;
const EVAL_SEED_OFFSET: u64 = 0x5eed_0000;

/// Seed of the evaluation episodes for a run seeded with `seed`.
pub fn eval_seed(seed: u64) -> u64 {
    seed.wrapping_add(EVAL_SEED_OFFSET)
}

/// Generator for one named stream of a run seed. Streams never overlap.
pub fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub update: u64,
    pub live_frames: u64,
    pub mean_return: f64,
    pub success_rate: f64,
    pub rho: f64,
    pub phi: f64,
    pub dr_size: usize,
    pub dv_size: usize,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.update,
            self.live_frames,
            self.mean_return,
            self.success_rate,
            self.rho,
            self.phi,
            self.dr_size,
            self.dv_size,
            self.surrogate,
            self.value_loss,
            self.entropy,
            self.clip_fraction
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub update: u64,
    pub live_frames: u64,
    pub report: EvalReport,
}

/// Everything a run carries from one update to the next.
#[derive(Debug, Clone)]
pub struct RunState {
    pub cfg: RunConfig,
    pub ac: ActorCritic,
    pub params: ParameterSet,
    pub adam: AdamState,
    pub store: ReplayStore,
    pub demos: Vec<Trajectory>,
    pub actors: Vec<Actor>,
    pub live_frames: u64,
    pub replay_frames: u64,
    pub updates: u64,
    update_rng: ChaCha8Rng,
    coin_rng: ChaCha8Rng,
}

/// Network, optimizer and actor pool for `cfg`, with `demos` (already
/// frame-stacked) seeded into the reward buffer.
pub fn network_for(cfg: &RunConfig) -> Result<ActorCritic> {
    let env = Env::new(cfg.task);
    ActorCritic::new(NetworkSpec {
        obs_dim: env.obs_dim() * cfg.frame_stack,
        hidden: cfg.train.hidden.clone(),
        activation: cfg.train.activation,
        action_space: env.action_space(),
    })
}

impl RunState {
    pub fn new(cfg: RunConfig, demos: Vec<Trajectory>) -> Result<Self> {
        cfg.validate_with_demos(demos.len())?;
        let ac = network_for(&cfg)?;
        let width = ac.spec().obs_dim;
        for (k, d) in demos.iter().enumerate() {
            if let Some(o) = d.observations.iter().find(|o| o.len() != width) {
                return Err(Error::config(format!(
                    "demonstration {k} has observations of width {}, the policy expects {width}",
                    o.len()
                )));
            }
            for a in &d.actions {
                ac.action_space().validate(a)?;
            }
        }
        let params = ac.init_params(&mut stream(cfg.seed, PARAM_STREAM));
        let adam = AdamState::with_eps(&params, cfg.train.adam_eps);
        let sched = ReplayScheduler::new(cfg.rho, cfg.phi, cfg.dv_capacity, demos.len())?;
        let mut store = ReplayStore::new(sched, cfg.alpha, cfg.priority_shift)?;
        for d in &demos {
            store.add_demo(d.clone())?;
        }
        let actors = (0..cfg.train.num_actors as u64)
            .map(|i| {
                Actor::new(
                    Env::new(cfg.task),
                    cfg.frame_stack,
                    stream(cfg.seed, 16 + 3 * i),
                    stream(cfg.seed, 17 + 3 * i),
                    stream(cfg.seed, 18 + 3 * i),
                )
            })
            .collect();
        Ok(Self {
            update_rng: stream(cfg.seed, UPDATE_STREAM),
            coin_rng: stream(cfg.seed, COIN_STREAM),
            cfg,
            ac,
            params,
            adam,
            store,
            demos,
            actors,
            live_frames: 0,
            replay_frames: 0,
            updates: 0,
        })
    }

    /// Collection for the configured algorithm.
    pub fn collect(&mut self) -> Result<Rollout> {
        let steps = self.cfg.train.num_steps;
        match self.cfg.algo {
            Algo::Ppod => collect_rollout(&mut self.actors, steps, &self.ac, &self.params, &self.store, self.cfg.parallel),
            Algo::Ppo | Algo::PpoBc | Algo::Bc => {
                collect_live_rollout(&mut self.actors, steps, &self.ac, &self.params, self.cfg.parallel)
            }
        }
    }

    /// Applies refreshed priorities, then routes finished live episodes in
    /// actor order. Unsuccessful ones get their priority from the current
    /// value network.
    pub fn absorb_episodes(&mut self, rollout: &Rollout) -> Result<()> {
        if self.cfg.algo == Algo::Ppo || (self.cfg.algo == Algo::PpoBc && !self.cfg.reward_buffer) {
            return Ok(());
        }
        for &(id, p) in &rollout.refreshed {
            let k = self.store.dv.iter().position(|t| t.id == id);
            if let Some(t) = k.and_then(|k| self.store.dv.get_mut(k)) {
                t.priority = p;
            }
        }
        for traj in &rollout.completed {
            if self.cfg.algo == Algo::PpoBc && traj.episode_return <= 0.0 {
                continue;
            }
            let mut traj = traj.clone();
            if traj.episode_return == 0.0 {
                let values = self.ac.values(&self.params, &traj.flat_observations())?;
                traj.priority = values.into_iter().fold(f64::NEG_INFINITY, f64::max);
            }
            self.store.insert(traj);
        }
        Ok(())
    }

    /// Every reward-buffer trajectory replayed in full, with advantages.
    fn demo_batch(&self) -> Result<RolloutBatch> {
        let mut batch = RolloutBatch::default();
        for traj in self.store.dr.iter() {
            let values = self.ac.values(&self.params, &traj.flat_observations())?;
            batch.push_segment(replay_into_rollout(traj, 0, traj.len(), &values));
        }
        let boots = vec![None; batch.segments.len()];
        compute_gae(&mut batch, &boots, self.cfg.train.gamma, self.cfg.train.gae_lambda)?;
        Ok(batch)
    }

    /// One full iteration: collect, absorb, advantages, update.
    pub fn step(&mut self) -> Result<(Rollout, Vec<LossReport>)> {
        let mut rollout = self.collect()?;
        self.live_frames += rollout.live_frames;
        self.replay_frames += rollout.replay_frames;
        self.absorb_episodes(&rollout)?;
        let cfg = &self.cfg.train;
        compute_gae(&mut rollout.batch, &rollout.bootstrap, cfg.gamma, cfg.gae_lambda)?;
        let update = self.updates as usize;
        let tag = |e: Error| match e {
            Error::Diverged { epoch, minibatch, .. } => Error::Diverged {
                update,
                epoch,
                minibatch,
            },
            e => e,
        };
        let reports = match self.cfg.algo {
            Algo::PpoBc => {
                let mut demos = self.demo_batch()?;
                ppo_bc_update(
                    &self.ac,
                    &mut self.params,
                    &mut self.adam,
                    &mut rollout.batch,
                    &mut demos,
                    self.cfg.rho,
                    self.cfg.bc_literal,
                    cfg,
                    &mut self.update_rng,
                    &mut self.coin_rng,
                )
                .map_err(tag)?
                .epochs
            }
            _ => ppo_update(
                &self.ac,
                &mut self.params,
                &mut self.adam,
                &mut rollout.batch,
                cfg,
                &mut self.update_rng,
            )
            .map_err(tag)?,
        };
        self.updates += 1;
        Ok((rollout, reports))
    }

    pub fn evaluate(&self, episodes: usize) -> Result<EvalReport> {
        evaluate(
            &self.ac,
            &self.params,
            self.cfg.task,
            episodes,
            eval_seed(self.cfg.seed),
            self.cfg.frame_stack,
        )
    }

    pub fn metrics_row(&self, rollout: &Rollout, reports: &[LossReport]) -> MetricsRow {
        let loss = LossReport::mean(reports);
        let n = rollout.completed.len();
        let (mean_return, success_rate) = if n == 0 {
            (f64::NAN, f64::NAN)
        } else {
            (
                rollout.completed.iter().map(|t| t.episode_return).sum::<f64>() / n as f64,
                rollout.completed.iter().filter(|t| t.episode_return > 0.0).count() as f64 / n as f64,
            )
        };
        MetricsRow {
            update: self.updates,
            live_frames: self.live_frames,
            mean_return,
            success_rate,
            rho: self.store.sched.rho,
            phi: self.store.sched.phi,
            dr_size: self.store.dr.len(),
            dv_size: self.store.dv.len(),
            surrogate: loss.surrogate,
            value_loss: loss.value_loss,
            entropy: loss.entropy,
            clip_fraction: loss.clip_fraction,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_params(&self.params);
        ck.scheduler = Some(serde_json::json!({
            "run": self.cfg,
            "scheduler": self.store.sched,
            "updates": self.updates,
            "live_frames": self.live_frames,
            "replay_frames": self.replay_frames,
        }));
        ck
    }
}

/// Network and config stored in a training checkpoint.
pub fn load_policy(path: &Path) -> Result<(RunConfig, ActorCritic, ParameterSet)> {
    let ck = Checkpoint::load(path)?;
    let run = ck
        .scheduler
        .as_ref()
        .and_then(|s| s.get("run"))
        .ok_or_else(|| Error::config(format!("{} carries no run configuration", path.display())))?;
    let cfg: RunConfig = serde_json::from_value(run.clone())?;
    let ac = network_for(&cfg)?;
    let params = ck.to_params()?;
    ac.forward(&params, &vec![0.0; ac.spec().obs_dim])?;
    Ok((cfg, ac, params))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub state: RunState,
    pub metrics: Vec<MetricsRow>,
    pub evals: Vec<EvalRow>,
    /// Training stopped because an evaluation met the target.
    pub reached_target: bool,
}

impl TrainOutcome {
    pub fn best_eval(&self) -> Option<&EvalRow> {
        self.evals
            .iter()
            .max_by(|a, b| a.report.success_rate.total_cmp(&b.report.success_rate))
    }

    pub fn final_eval(&self) -> Option<&EvalRow> {
        self.evals.last()
    }
}

struct Outputs {
    dir: PathBuf,
    metrics: BufWriter<File>,
    evals: BufWriter<File>,
}

impl Outputs {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let mut metrics = BufWriter::new(File::create(dir.join("metrics.csv"))?);
        writeln!(metrics, "{METRICS_HEADER}")?;
        let mut evals = BufWriter::new(File::create(dir.join("eval.csv"))?);
        writeln!(evals, "{EVAL_HEADER}")?;
        Ok(Self {
            dir: dir.to_path_buf(),
            metrics,
            evals,
        })
    }

    fn checkpoint(&self, state: &RunState) -> Result<()> {
        state.checkpoint().save(&self.dir.join("checkpoint.json"))
    }
}

/// Runs until `total_frames` live frames have been collected. Writes
/// `metrics.csv`, `eval.csv`, `config.cfg` and `checkpoint.json` into the
/// output directory when one is configured.
pub fn train_loop(cfg: RunConfig, demos: Vec<Trajectory>) -> Result<TrainOutcome> {
    let mut state = RunState::new(cfg, demos)?;
    let mut out = match &state.cfg.out_dir {
        Some(dir) => {
            let o = Outputs::create(dir)?;
            fs::write(dir.join("config.cfg"), state.cfg.dump())?;
            o.checkpoint(&state)?;
            Some(o)
        }
        None => None,
    };
    let mut outcome_metrics = Vec::new();
    let mut evals = Vec::new();
    let mut reached_target = false;

    if state.cfg.algo == Algo::Bc {
        let data = DemoDataset::new(state.demos.clone())?;
        let trace = bc_train(
            &state.ac,
            &mut state.params,
            &mut state.adam,
            &data,
            state.cfg.bc_steps,
            state.cfg.bc_batch,
            &state.cfg.train,
            &mut state.update_rng,
        )?;
        state.updates = trace.len() as u64;
        if let Some(o) = &out {
            let mut f = BufWriter::new(File::create(o.dir.join("bc_trace.csv"))?);
            writeln!(f, "step,loss")?;
            for (k, l) in trace.iter().enumerate() {
                writeln!(f, "{k},{l}")?;
            }
        }
    } else {
        let budget = state.cfg.total_frames;
        while state.live_frames < budget && state.live_frames + state.replay_frames < budget * REPLAY_ONLY_FACTOR {
            let (rollout, reports) = match state.step() {
                Ok(r) => r,
                Err(e @ Error::Diverged { .. }) => {
                    if let Some(o) = &out {
                        o.checkpoint(&state)?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            let row = state.metrics_row(&rollout, &reports);
            if let Some(o) = &mut out {
                writeln!(o.metrics, "{}", row.to_csv())?;
                o.metrics.flush()?;
            }
            outcome_metrics.push(row);
            let done = state.live_frames >= budget;
            if state.updates % state.cfg.eval_interval == 0 || done {
                let report = state.evaluate(state.cfg.eval_episodes)?;
                let row = EvalRow {
                    update: state.updates,
                    live_frames: state.live_frames,
                    report,
                };
                if let Some(o) = &mut out {
                    writeln!(
                        o.evals,
                        "{},{},{},{},{},{}",
                        row.update, row.live_frames, report.episodes, report.success_rate, report.mean_return, report.mean_length
                    )?;
                    o.evals.flush()?;
                }
                evals.push(row);
                if state.cfg.target_success.is_some_and(|t| report.success_rate >= t) {
                    reached_target = true;
                    break;
                }
            }
            if let Some(o) = &out {
                if state.updates % state.cfg.checkpoint_interval == 0 {
                    o.checkpoint(&state)?;
                }
            }
        }
    }

    if evals.is_empty() && (state.updates > 0 || state.cfg.algo == Algo::Bc) {
        let report = state.evaluate(state.cfg.eval_episodes)?;
        evals.push(EvalRow {
            update: state.updates,
            live_frames: state.live_frames,
            report,
        });
    }
    if let Some(o) = &out {
        o.checkpoint(&state)?;
    }
    Ok(TrainOutcome {
        state,
        metrics: outcome_metrics,
        evals,
        reached_target,
    })
}
