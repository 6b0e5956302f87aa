#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use ppod_core::diffcore::{grad_check, Activation, GradCheckReport, ParameterSet};
use ppod_core::policy::{Action, ActionSpace, ActorCritic, NetworkSpec};
use ppod_core::ppo::{ppo_loss, RolloutBatch, TrainConfig, Transition};

pub fn small_net(obs_dim: usize, action_space: ActionSpace) -> ActorCritic {
    ActorCritic::new(NetworkSpec {
        obs_dim,
        hidden: vec![6, 5],
        activation: Activation::Tanh,
        action_space,
    })
    .unwrap()
}

/// GAE by direct summation: `A_t = Σ_l (γλ)^l δ_{t+l}` up to the end of
/// the episode containing `t`, with `V = 0` past a terminal step and
/// `bootstrap` past the end of the segment.
pub fn gae_oracle(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let next_value = |t: usize| -> f64 {
        if dones[t] {
            0.0
        } else if t + 1 == n {
            bootstrap
        } else {
            values[t + 1]
        }
    };
    let delta: Vec<f64> = (0..n).map(|t| rewards[t] + gamma * next_value(t) - values[t]).collect();
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut w = 1.0;
            for l in t..n {
                sum += w * delta[l];
                if dones[l] {
                    break;
                }
                w *= gamma * lambda;
            }
            sum
        })
        .collect()
}

/// A random four-transition minibatch mixing live and replayed samples, with
/// behavior log-probabilities near the current policy's.
pub fn random_loss_batch(ac: &ActorCritic, params: &ParameterSet, rng: &mut ChaCha8Rng, n: usize) -> RolloutBatch {
    let obs_dim = ac.spec().obs_dim;
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut ts = Vec::with_capacity(n);
    for k in 0..n {
        let obs: Vec<f64> = (0..obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let action = match ac.action_space() {
            ActionSpace::Discrete { n } => Action::Discrete(rng.random_range(0..n)),
            ActionSpace::Continuous { dims } => Action::Continuous((0..dims).map(|_| rng.random_range(-1.5..1.5)).collect()),
        };
        let (_, eval) = ac.evaluate_actions(params, &obs, std::slice::from_ref(&action)).unwrap();
        let mut t = if k % 2 == 0 {
            Transition::live(obs, action, 0.0, false, eval.log_probs[0] + noise.sample(rng), 0.0)
        } else {
            Transition::replayed(obs, action, 0.0, false, 0.0)
        };
        t.advantage = rng.random_range(-2.0..2.0);
        t.return_target = rng.random_range(-1.0..1.0);
        ts.push(t);
    }
    let mut b = RolloutBatch::default();
    b.push_segment(ts);
    b
}

/// Central-difference check of the full clipped loss (surrogate, value and
/// entropy terms) for one random network and batch.
pub fn full_loss_gradcheck(seed: u64, continuous: bool) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = if continuous {
        ActionSpace::Continuous { dims: 2 }
    } else {
        ActionSpace::Discrete { n: 4 }
    };
    let ac = small_net(5, space);
    let mut params = ac.init_params(&mut rng);
    if continuous {
        for x in params.layer_mut("log_std").unwrap().bias.data_mut() {
            *x = rng.random_range(-1.0..0.5);
        }
    }
    let batch = random_loss_batch(&ac, &params, &mut rng, 4);
    let mut cfg = TrainConfig::desk();
    cfg.value_coef = 0.5;
    cfg.entropy_coef = 0.05;
    let idx: Vec<usize> = (0..batch.len()).collect();
    let (_, grads) = ppo_loss(&ac, &params, &batch, &idx, &cfg).unwrap();
    grad_check(
        &params,
        &grads,
        |p| ppo_loss(&ac, p, &batch, &idx, &cfg).unwrap().0.total,
        1e-4,
    )
}
