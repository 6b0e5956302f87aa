use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{ParameterSet, TensorBuffer};
use crate::envs::{Env, FrameStack, TaskId};
use crate::error::{Error, Result};
use crate::policy::{Action, ActorCritic};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_length: f64,
}

/// Rolls out `policy` (given the env and the stacked observation) on
/// `episodes` fresh envs seeded from `seed`.
pub fn evaluate_with(
    task: TaskId,
    episodes: usize,
    seed: u64,
    frame_stack: usize,
    mut policy: impl FnMut(&Env, &[f64]) -> Result<Action>,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::contract("evaluation needs at least one episode"));
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut env = Env::new(task);
    let mut stack = FrameStack::new(frame_stack);
    let (mut successes, mut total_return, mut total_len) = (0usize, 0.0, 0usize);
    for _ in 0..episodes {
        let mut obs = stack.reset(&env.reset(seeds.random())?);
        let mut ret = 0.0;
        loop {
            let action = policy(&env, &obs)?;
            let step = env.step(&action)?;
            ret += step.reward;
            total_len += 1;
            if step.done {
                break;
            }
            obs = stack.push(&step.obs);
        }
        successes += usize::from(ret > 0.0);
        total_return += ret;
    }
    let n = episodes as f64;
    Ok(EvalReport {
        episodes,
        success_rate: successes as f64 / n,
        mean_return: total_return / n,
        mean_length: total_len as f64 / n,
    })
}

/// Greedy evaluation: argmax for categorical heads, the mean for Gaussian.
pub fn evaluate(
    ac: &ActorCritic,
    params: &ParameterSet,
    task: TaskId,
    episodes: usize,
    seed: u64,
    frame_stack: usize,
) -> Result<EvalReport> {
    evaluate_with(task, episodes, seed, frame_stack, |_, obs| {
        ac.act_greedy(params, &TensorBuffer::vector(obs.to_vec()))
    })
}
