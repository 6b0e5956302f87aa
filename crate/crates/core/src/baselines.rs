//! Behavioral cloning and the PPO+BC mixture.

use rand::Rng;

use crate::diffcore::{AdamState, ParameterSet};
use crate::error::{Error, Result};
use crate::policy::{Action, ActorCritic, DistKind};
use crate::ppo::{apply_gradients, minibatches, normalize_advantages, ppo_loss, LossReport, RolloutBatch, TrainConfig};
use crate::replay::Trajectory;

/// Layers a BC step must leave alone.
pub const BC_FROZEN: [&str; 2] = ["value", "log_std"];

/// Flattened (observation, action) pairs from a set of demonstrations.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    pub trajectories: Vec<Trajectory>,
    obs: Vec<Vec<f64>>,
    actions: Vec<Action>,
}

impl DemoDataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let (mut obs, mut actions) = (Vec::new(), Vec::new());
        for t in &trajectories {
            obs.extend(t.observations.iter().cloned());
            actions.extend(t.actions.iter().cloned());
        }
        Self::from_pairs(trajectories, obs, actions)
    }

    fn from_pairs(trajectories: Vec<Trajectory>, obs: Vec<Vec<f64>>, actions: Vec<Action>) -> Result<Self> {
        if actions.is_empty() {
            return Err(Error::config("demonstration dataset is empty"));
        }
        let discrete = matches!(actions[0], Action::Discrete(_));
        if actions.iter().any(|a| matches!(a, Action::Discrete(_)) != discrete) {
            return Err(Error::config("demonstration actions mix discrete and continuous"));
        }
        Ok(Self {
            trajectories,
            obs,
            actions,
        })
    }

    /// Pairs taken straight from a rollout batch.
    pub fn from_batch(batch: &RolloutBatch) -> Result<Self> {
        Self::from_pairs(
            Vec::new(),
            batch.transitions.iter().map(|t| t.obs.clone()).collect(),
            batch.transitions.iter().map(|t| t.action.clone()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn pair(&self, i: usize) -> (&[f64], &Action) {
        (&self.obs[i], &self.actions[i])
    }

    fn gather(&self, idx: &[usize]) -> (Vec<f64>, Vec<Action>) {
        let mut obs = Vec::new();
        let mut actions = Vec::with_capacity(idx.len());
        for &i in idx {
            obs.extend_from_slice(&self.obs[i]);
            actions.push(self.actions[i].clone());
        }
        (obs, actions)
    }
}

fn check_kind(ac: &ActorCritic, actions: &[Action]) -> Result<()> {
    let ok = actions.iter().all(|a| {
        matches!(
            (ac.dist_kind(), a),
            (DistKind::Categorical, Action::Discrete(_)) | (DistKind::Gaussian, Action::Continuous(_))
        )
    });
    if ok {
        Ok(())
    } else {
        Err(Error::config("demonstration action kind does not match the policy head"))
    }
}

/// Cross-entropy (discrete) or mean squared error of the mean (continuous),
/// with its parameter gradient.
pub fn bc_loss_and_grad(
    ac: &ActorCritic,
    params: &ParameterSet,
    obs: &[f64],
    actions: &[Action],
) -> Result<(f64, ParameterSet)> {
    if actions.is_empty() {
        return Err(Error::contract("empty BC batch"));
    }
    check_kind(ac, actions)?;
    let n = actions.len() as f64;
    let (fwd, eval) = ac.evaluate_actions(params, obs, actions)?;
    let zeros = vec![0.0; actions.len()];
    let (loss, d_head, d_log_std) = match ac.dist_kind() {
        DistKind::Categorical => {
            let loss = -eval.log_probs.iter().sum::<f64>() / n;
            let d_logp = vec![-1.0 / n; actions.len()];
            let (d_head, d_log_std) = ac.distribution_grads(&fwd, actions, &d_logp, &zeros);
            (loss, d_head, d_log_std)
        }
        DistKind::Gaussian => {
            let width = ac.action_space().head_width();
            let count = n * width as f64;
            let mut loss = 0.0;
            let mut d_head = vec![0.0; fwd.head.len()];
            for (r, a) in actions.iter().enumerate() {
                let Action::Continuous(a) = a else { unreachable!() };
                for j in 0..width {
                    let diff = fwd.head[r * width + j] - a[j];
                    loss += diff * diff / count;
                    d_head[r * width + j] = 2.0 * diff / count;
                }
            }
            (loss, d_head, vec![0.0; fwd.log_std.len()])
        }
    };
    let grads = ac.backward(params, &fwd, &d_head, &d_log_std, &zeros)?;
    Ok((loss, grads))
}

pub fn bc_loss(ac: &ActorCritic, params: &ParameterSet, obs: &[f64], actions: &[Action]) -> Result<f64> {
    Ok(bc_loss_and_grad(ac, params, obs, actions)?.0)
}

/// One Adam step on a BC minibatch; value head and log_std are frozen.
pub fn bc_step(
    ac: &ActorCritic,
    params: &mut ParameterSet,
    adam: &mut AdamState,
    data: &DemoDataset,
    idx: &[usize],
    cfg: &TrainConfig,
) -> Result<f64> {
    let (obs, actions) = data.gather(idx);
    let (loss, grads) = bc_loss_and_grad(ac, params, &obs, &actions)?;
    if !loss.is_finite() {
        return Err(Error::Numeric { what: "BC loss".into() });
    }
    apply_gradients(params, adam, grads, cfg, &BC_FROZEN)?;
    Ok(loss)
}

/// `steps` Adam updates on minibatches of `batch_size` pairs drawn by
/// cycling through shuffled epochs. Returns the loss before each step.
#[allow(clippy::too_many_arguments)]
pub fn bc_train<R: Rng + ?Sized>(
    ac: &ActorCritic,
    params: &mut ParameterSet,
    adam: &mut AdamState,
    data: &DemoDataset,
    steps: usize,
    batch_size: usize,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut trace = Vec::with_capacity(steps);
    let chunks = data.len().div_ceil(batch_size.max(1));
    let mut queue: Vec<Vec<usize>> = Vec::new();
    for _ in 0..steps {
        if queue.is_empty() {
            queue = minibatches(data.len(), chunks, rng);
            queue.reverse();
        }
        let idx = queue.pop().expect("refilled");
        trace.push(bc_step(ac, params, adam, data, &idx, cfg)?);
    }
    Ok(trace)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PpoBcReport {
    /// Mean PPO report per epoch (default when an epoch had no PPO step).
    pub epochs: Vec<LossReport>,
    pub bc_losses: Vec<f64>,
    pub ppo_steps: usize,
}

/// K·M learner steps. Each step flips a `rho` coin on `coin_rng`: heads
/// takes a BC step on a demonstration minibatch, tails the next PPO
/// minibatch of `batch`. With `literal`, the roles swap: PPO on the
/// demonstration batch (which must carry advantages), BC on env samples.
///
/// All randomness for the coin and the demonstration minibatches comes from
/// `coin_rng`, so `rho = 0` replays `ppo_update` exactly.
#[allow(clippy::too_many_arguments)]
pub fn ppo_bc_update<R: Rng + ?Sized, C: Rng + ?Sized>(
    ac: &ActorCritic,
    params: &mut ParameterSet,
    adam: &mut AdamState,
    batch: &mut RolloutBatch,
    demos: &mut RolloutBatch,
    rho: f64,
    literal: bool,
    cfg: &TrainConfig,
    rng: &mut R,
    coin_rng: &mut C,
) -> Result<PpoBcReport> {
    if batch.is_empty() {
        return Err(Error::contract("cannot update on an empty batch"));
    }
    if literal && demos.is_empty() {
        return Err(Error::contract("literal PPO+BC needs demonstration transitions"));
    }
    let (ppo_batch, bc_source) = if literal { (demos, &*batch) } else { (batch, &*demos) };
    let bc_data = if bc_source.is_empty() {
        None
    } else {
        Some(DemoDataset::from_batch(bc_source)?)
    };
    if cfg.normalize_advantages {
        normalize_advantages(ppo_batch);
    }
    let mb_size = ppo_batch.len().div_ceil(cfg.num_minibatches.max(1));
    let mut report = PpoBcReport::default();
    for epoch in 0..cfg.ppo_epochs {
        let mut reports = Vec::new();
        for (mb, idx) in minibatches(ppo_batch.len(), cfg.num_minibatches, rng).iter().enumerate() {
            let heads = rho > 0.0 && coin_rng.random::<f64>() < rho;
            match (&bc_data, heads) {
                (Some(data), true) => {
                    let pick: Vec<usize> = (0..mb_size).map(|_| coin_rng.random_range(0..data.len())).collect();
                    report.bc_losses.push(bc_step(ac, params, adam, data, &pick, cfg)?);
                }
                _ => {
                    let (r, grads) = ppo_loss(ac, params, ppo_batch, idx, cfg)?;
                    if !r.total.is_finite() {
                        return Err(Error::Diverged {
                            update: 0,
                            epoch,
                            minibatch: mb,
                        });
                    }
                    apply_gradients(params, adam, grads, cfg, &[])?;
                    reports.push(r);
                    report.ppo_steps += 1;
                }
            }
        }
        report.epochs.push(if reports.is_empty() {
            LossReport::default()
        } else {
            LossReport::mean(&reports)
        });
    }
    Ok(report)
}
