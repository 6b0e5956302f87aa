//! Rollout storage, GAE, and the clipped surrogate whose importance
//! denominator depends on where each transition came from.
//!
//! Live transitions divide by the behavior policy's probability frozen at
//! collection time. Replayed transitions were produced by a point-mass
//! policy that puts probability one on the stored action, so their ratio is
//! the new policy's probability (or density) of that action.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{adam_step_frozen, AdamState, Activation, ParameterSet};
use crate::error::{Error, Result};
use crate::policy::{Action, ActorCritic};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub done: bool,
    pub behavior_log_prob: f64,
    pub is_replay: bool,
    pub value: f64,
    pub advantage: f64,
    pub return_target: f64,
}

impl Transition {
    pub fn live(obs: Vec<f64>, action: Action, reward: f64, done: bool, log_prob: f64, value: f64) -> Self {
        Self {
            obs,
            action,
            reward,
            done,
            behavior_log_prob: log_prob,
            is_replay: false,
            value,
            advantage: 0.0,
            return_target: 0.0,
        }
    }

    pub fn replayed(obs: Vec<f64>, action: Action, reward: f64, done: bool, value: f64) -> Self {
        Self {
            obs,
            action,
            reward,
            done,
            behavior_log_prob: 0.0,
            is_replay: true,
            value,
            advantage: 0.0,
            return_target: 0.0,
        }
    }
}

/// Contiguous run of transitions from one actor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBatch {
    pub transitions: Vec<Transition>,
    pub segments: Vec<Segment>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Appends one actor's segment.
    pub fn push_segment(&mut self, transitions: Vec<Transition>) {
        let start = self.transitions.len();
        self.segments.push(Segment {
            start,
            len: transitions.len(),
        });
        self.transitions.extend(transitions);
    }

    pub fn replay_count(&self) -> usize {
        self.transitions.iter().filter(|t| t.is_replay).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub lr: f64,
    pub ppo_epochs: usize,
    pub num_minibatches: usize,
    pub num_actors: usize,
    pub num_steps: usize,
    pub max_grad_norm: f64,
    pub adam_eps: f64,
    pub normalize_advantages: bool,
    /// Restrict the value loss to replayed transitions.
    #[serde(default)]
    pub value_loss_replay_only: bool,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Settings sized for minutes-long runs on the grid tasks.
    pub fn desk() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.15,
            value_coef: 0.1,
            entropy_coef: 0.02,
            lr: 2.5e-4,
            ppo_epochs: 4,
            num_minibatches: 8,
            num_actors: 8,
            num_steps: 256,
            max_grad_norm: 0.5,
            adam_eps: 1e-5,
            normalize_advantages: true,
            value_loss_replay_only: false,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
        }
    }

    /// The large-scale settings used for the 3D box-pushing tasks.
    pub fn paper() -> Self {
        Self {
            gamma: 0.998,
            gae_lambda: 0.95,
            clip_eps: 0.15,
            value_coef: 0.1,
            entropy_coef: 0.02,
            lr: 1e-5,
            ppo_epochs: 4,
            num_minibatches: 6,
            num_actors: 14,
            num_steps: 1000,
            max_grad_norm: 0.5,
            adam_eps: 1e-5,
            normalize_advantages: true,
            value_loss_replay_only: false,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return fail("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return fail("clip_eps must lie in (0, 1)");
        }
        if self.ppo_epochs == 0 || self.num_minibatches == 0 || self.num_actors == 0 || self.num_steps == 0 {
            return fail("ppo_epochs, num_minibatches, num_actors and num_steps must be positive");
        }
        if !(self.lr >= 0.0) || !(self.max_grad_norm > 0.0) || !(self.adam_eps > 0.0) {
            return fail("lr must be >= 0, max_grad_norm and adam_eps > 0");
        }
        if self.value_coef < 0.0 || self.entropy_coef < 0.0 {
            return fail("loss coefficients must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total: f64,
    pub clip_fraction: f64,
}

impl LossReport {
    fn accumulate(&mut self, other: &LossReport, weight: f64) {
        self.surrogate += weight * other.surrogate;
        self.value_loss += weight * other.value_loss;
        self.entropy += weight * other.entropy;
        self.total += weight * other.total;
        self.clip_fraction += weight * other.clip_fraction;
    }

    /// Minibatch-weighted mean of several reports.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let mut out = LossReport::default();
        if reports.is_empty() {
            return out;
        }
        let w = 1.0 / reports.len() as f64;
        for r in reports {
            out.accumulate(r, w);
        }
        out
    }
}

/// Fills advantages and return targets segment by segment.
///
/// `bootstrap[k]` is the value estimate after segment `k`'s last
/// transition; it is required only when that transition is not terminal.
pub fn compute_gae(batch: &mut RolloutBatch, bootstrap: &[Option<f64>], gamma: f64, lambda: f64) -> Result<()> {
    if bootstrap.len() != batch.segments.len() {
        return Err(Error::contract(format!(
            "{} bootstrap values for {} segments",
            bootstrap.len(),
            batch.segments.len()
        )));
    }
    for (k, (seg, boot)) in batch.segments.iter().zip(bootstrap).enumerate() {
        let slice = &mut batch.transitions[seg.start..seg.start + seg.len];
        let Some(last) = slice.last() else { continue };
        let mut next_value = match (last.done, boot) {
            (true, _) => 0.0,
            (false, Some(v)) => *v,
            (false, None) => {
                return Err(Error::contract(format!(
                    "segment {k} ends mid-episode without a bootstrap value"
                )))
            }
        };
        let mut next_adv = 0.0;
        for t in slice.iter_mut().rev() {
            let live = if t.done { 0.0 } else { 1.0 };
            if t.done {
                next_value = 0.0;
                next_adv = 0.0;
            }
            let delta = t.reward + gamma * next_value * live - t.value;
            t.advantage = delta + gamma * lambda * live * next_adv;
            t.return_target = t.advantage + t.value;
            next_value = t.value;
            next_adv = t.advantage;
        }
    }
    if batch.transitions.iter().any(|t| !t.advantage.is_finite()) {
        return Err(Error::Numeric {
            what: "advantages".into(),
        });
    }
    Ok(())
}

/// `π_new / π_behavior`, with the behavior probability fixed at one for
/// replayed transitions.
pub fn importance_ratio(new_log_prob: f64, behavior_log_prob: f64, is_replay: bool) -> f64 {
    if is_replay {
        new_log_prob.exp()
    } else {
        (new_log_prob - behavior_log_prob).exp()
    }
}

/// `(1 + ε) A` for non-negative advantages, `(1 − ε) A` otherwise.
pub fn clip_bound(eps: f64, advantage: f64) -> f64 {
    if advantage >= 0.0 {
        (1.0 + eps) * advantage
    } else {
        (1.0 - eps) * advantage
    }
}

pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(clip_bound(eps, advantage))
}

/// Plain mean squared error; replayed transitions get no reweighting.
pub fn value_loss(values: &[f64], targets: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values
        .iter()
        .zip(targets)
        .map(|(v, t)| (v - t) * (v - t))
        .sum::<f64>()
        / values.len() as f64
}

/// Mean 0, standard deviation 1 (population) in place.
pub fn normalize_advantages(batch: &mut RolloutBatch) {
    let n = batch.len();
    if n < 2 {
        return;
    }
    let mean = batch.transitions.iter().map(|t| t.advantage).sum::<f64>() / n as f64;
    let var = batch
        .transitions
        .iter()
        .map(|t| (t.advantage - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    let std = var.sqrt() + 1e-8;
    for t in &mut batch.transitions {
        t.advantage = (t.advantage - mean) / std;
    }
}

/// Loss of one minibatch and its exact parameter gradient.
pub fn ppo_loss(
    ac: &ActorCritic,
    params: &ParameterSet,
    batch: &RolloutBatch,
    indices: &[usize],
    cfg: &TrainConfig,
) -> Result<(LossReport, ParameterSet)> {
    if indices.is_empty() {
        return Err(Error::contract("empty minibatch"));
    }
    let obs_dim = ac.spec().obs_dim;
    let mut obs = Vec::with_capacity(indices.len() * obs_dim);
    let mut actions = Vec::with_capacity(indices.len());
    for &i in indices {
        obs.extend_from_slice(&batch.transitions[i].obs);
        actions.push(batch.transitions[i].action.clone());
    }
    let (fwd, eval) = ac.evaluate_actions(params, &obs, &actions)?;

    let n = indices.len() as f64;
    let mut report = LossReport::default();
    let mut d_logp = vec![0.0; indices.len()];
    let mut d_value = vec![0.0; indices.len()];
    let d_ent = vec![-cfg.entropy_coef / n; indices.len()];
    let mut clipped = 0usize;
    for (k, &i) in indices.iter().enumerate() {
        let t = &batch.transitions[i];
        let ratio = importance_ratio(eval.log_probs[k], t.behavior_log_prob, t.is_replay);
        let unclipped = ratio * t.advantage;
        let bound = clip_bound(cfg.clip_eps, t.advantage);
        report.surrogate += unclipped.min(bound) / n;
        if unclipped <= bound {
            // d(ratio)/d(log π) = ratio
            d_logp[k] = -unclipped / n;
        }
        if (ratio - 1.0).abs() > cfg.clip_eps {
            clipped += 1;
        }
        if t.is_replay || !cfg.value_loss_replay_only {
            let err = eval.values[k] - t.return_target;
            report.value_loss += err * err / n;
            d_value[k] = cfg.value_coef * 2.0 * err / n;
        }
        report.entropy += eval.entropies[k] / n;
    }
    report.total = -report.surrogate + cfg.value_coef * report.value_loss - cfg.entropy_coef * report.entropy;
    report.clip_fraction = clipped as f64 / n;

    let (d_head, d_log_std) = ac.distribution_grads(&fwd, &actions, &d_logp, &d_ent);
    let grads = ac.backward(params, &fwd, &d_head, &d_log_std, &d_value)?;
    Ok((report, grads))
}

/// Scales `grads` so its global norm is at most `max_norm`.
pub fn clip_grad_norm(grads: &mut ParameterSet, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / (norm + 1e-6));
    }
    norm
}

/// Clip, then one Adam step on every layer not listed in `frozen`.
pub fn apply_gradients(
    params: &mut ParameterSet,
    adam: &mut AdamState,
    mut grads: ParameterSet,
    cfg: &TrainConfig,
    frozen: &[&str],
) -> Result<()> {
    clip_grad_norm(&mut grads, cfg.max_grad_norm);
    adam_step_frozen(params, &grads, adam, cfg.lr, frozen)
}

/// `n` indices shuffled and split into `m` near-equal chunks.
pub fn minibatches<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let m = m.min(n).max(1);
    let (base, extra) = (n / m, n % m);
    let mut out = Vec::with_capacity(m);
    let mut start = 0;
    for k in 0..m {
        let len = base + usize::from(k < extra);
        out.push(perm[start..start + len].to_vec());
        start += len;
    }
    out
}

/// K epochs over M shuffled minibatches. Returns one averaged report per
/// epoch. `batch` must already carry advantages; they are normalized here
/// when the config asks for it.
pub fn ppo_update<R: Rng + ?Sized>(
    ac: &ActorCritic,
    params: &mut ParameterSet,
    adam: &mut AdamState,
    batch: &mut RolloutBatch,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<LossReport>> {
    if batch.is_empty() {
        return Err(Error::contract("cannot update on an empty batch"));
    }
    if cfg.normalize_advantages {
        normalize_advantages(batch);
    }
    let mut epochs = Vec::with_capacity(cfg.ppo_epochs);
    for epoch in 0..cfg.ppo_epochs {
        let mut reports = Vec::with_capacity(cfg.num_minibatches);
        for (mb, idx) in minibatches(batch.len(), cfg.num_minibatches, rng).iter().enumerate() {
            let (report, grads) = ppo_loss(ac, params, batch, idx, cfg)?;
            if !report.total.is_finite() {
                return Err(Error::Diverged {
                    update: 0,
                    epoch,
                    minibatch: mb,
                });
            }
            apply_gradients(params, adam, grads, cfg, &[])?;
            reports.push(report);
        }
        epochs.push(LossReport::mean(&reports));
    }
    Ok(epochs)
}
