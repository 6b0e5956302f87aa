//! Actor-critic heads over a shared dense trunk.
//!
//! Layers are named `hidden0..`, `policy`, `value` and, for continuous
//! actions, `log_std`. The `log_std` entry is state independent: its bias is
//! the log standard deviation vector and its weight is never read.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{dense, dense_backward, Activation, Layer, ParameterSet, TensorBuffer};
use crate::error::{Error, Result};

pub const LOG_PROB_FLOOR: f64 = -30.0;
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ActionSpace {
    Discrete { n: usize },
    Continuous { dims: usize },
}

impl ActionSpace {
    /// Width of the policy head.
    pub fn head_width(&self) -> usize {
        match *self {
            ActionSpace::Discrete { n } => n,
            ActionSpace::Continuous { dims } => dims,
        }
    }

    pub fn validate(&self, action: &Action) -> Result<()> {
        match (self, action) {
            (ActionSpace::Discrete { n }, Action::Discrete(a)) if a < n => Ok(()),
            (ActionSpace::Continuous { dims }, Action::Continuous(v))
                if v.len() == *dims && v.iter().all(|x| x.is_finite()) =>
            {
                Ok(())
            }
            _ => Err(Error::Domain(format!("action {action:?} is outside {self:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistKind {
    Categorical,
    Gaussian,
}

/// Distribution parameters and value estimate for one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub dist_kind: DistKind,
    /// Logits (categorical) or means (gaussian).
    pub head: Vec<f64>,
    /// Clamped log standard deviations; empty for categorical.
    pub log_std: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionRecord {
    pub action: Action,
    pub log_prob: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub obs_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub action_space: ActionSpace,
}

/// Cached forward pass over a batch, reused by the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    rows: usize,
    /// `acts[0]` is the observation batch, `acts[k]` the output of hidden layer `k - 1`.
    acts: Vec<Vec<f64>>,
    pub head: Vec<f64>,
    pub values: Vec<f64>,
    pub log_std: Vec<f64>,
    /// Whether each log_std entry sits strictly inside the clamp range.
    log_std_free: Vec<bool>,
}

impl Forward {
    pub fn rows(&self) -> usize {
        self.rows
    }

    fn head_row(&self, r: usize) -> &[f64] {
        let w = self.head.len() / self.rows;
        &self.head[r * w..(r + 1) * w]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub log_probs: Vec<f64>,
    pub entropies: Vec<f64>,
    pub values: Vec<f64>,
}

/// Network topology plus the distribution logic on top of it.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    spec: NetworkSpec,
}

impl ActorCritic {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        if spec.obs_dim == 0 || spec.action_space.head_width() == 0 {
            return Err(Error::config("observation and action widths must be positive"));
        }
        if spec.hidden.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn action_space(&self) -> ActionSpace {
        self.spec.action_space
    }

    pub fn dist_kind(&self) -> DistKind {
        match self.spec.action_space {
            ActionSpace::Discrete { .. } => DistKind::Categorical,
            ActionSpace::Continuous { .. } => DistKind::Gaussian,
        }
    }

    pub fn hidden_names(&self) -> Vec<String> {
        (0..self.spec.hidden.len()).map(|k| format!("hidden{k}")).collect()
    }

    /// Seeded init: gain √2 for hidden layers, 0.01 for the policy head,
    /// 1.0 for the value head, log_std = 0.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> ParameterSet {
        let mut p = ParameterSet::new();
        let mut width = self.spec.obs_dim;
        for (k, &h) in self.spec.hidden.iter().enumerate() {
            p.push(format!("hidden{k}"), Layer::init(width, h, 2f64.sqrt(), rng))
                .expect("unique");
            width = h;
        }
        let head = self.spec.action_space.head_width();
        p.push("policy", Layer::init(width, head, 0.01, rng)).expect("unique");
        p.push("value", Layer::init(width, 1, 1.0, rng)).expect("unique");
        if let ActionSpace::Continuous { dims } = self.spec.action_space {
            p.push("log_std", Layer::zeros(1, dims)).expect("unique");
        }
        p
    }

    fn check_params(&self, params: &ParameterSet) -> Result<()> {
        let mut width = self.spec.obs_dim;
        for (k, &h) in self.spec.hidden.iter().enumerate() {
            let name = format!("hidden{k}");
            let l = params.layer(&name)?;
            if l.input_dim() != width || l.output_dim() != h {
                return Err(Error::Dimension {
                    layer: name,
                    expected: width,
                    got: l.input_dim(),
                });
            }
            width = h;
        }
        for (name, out) in [("policy", self.spec.action_space.head_width()), ("value", 1)] {
            let l = params.layer(name)?;
            if l.input_dim() != width || l.output_dim() != out {
                return Err(Error::Dimension {
                    layer: name.into(),
                    expected: width,
                    got: l.input_dim(),
                });
            }
        }
        Ok(())
    }

    /// Batched forward pass; `obs` holds `rows` observations back to back.
    pub fn forward(&self, params: &ParameterSet, obs: &[f64]) -> Result<Forward> {
        let width = self.spec.obs_dim;
        if obs.is_empty() || !obs.len().is_multiple_of(width) {
            return Err(Error::Dimension {
                layer: "hidden0".into(),
                expected: width,
                got: obs.len(),
            });
        }
        self.check_params(params)?;
        let rows = obs.len() / width;
        let mut acts = vec![obs.to_vec()];
        for k in 0..self.spec.hidden.len() {
            let layer = params.layer(&format!("hidden{k}"))?;
            let mut h = dense(layer, acts.last().unwrap(), rows);
            self.spec.activation.apply(&mut h);
            acts.push(h);
        }
        let feat = acts.last().unwrap();
        let head = dense(params.layer("policy")?, feat, rows);
        let values = dense(params.layer("value")?, feat, rows);
        let (log_std, log_std_free) = match params.get("log_std") {
            Some(l) => l
                .bias
                .data()
                .iter()
                .map(|&v| (v.clamp(LOG_STD_MIN, LOG_STD_MAX), v > LOG_STD_MIN && v < LOG_STD_MAX))
                .unzip(),
            None => (Vec::new(), Vec::new()),
        };
        if !head.iter().chain(&values).all(|v| v.is_finite()) {
            return Err(Error::Numeric {
                what: "network output".into(),
            });
        }
        Ok(Forward {
            rows,
            acts,
            head,
            values,
            log_std,
            log_std_free,
        })
    }

    pub fn policy_output(&self, params: &ParameterSet, obs: &TensorBuffer) -> Result<PolicyOutput> {
        let f = self.forward(params, obs.data())?;
        Ok(PolicyOutput {
            dist_kind: self.dist_kind(),
            head: f.head.clone(),
            log_std: f.log_std.clone(),
            value: f.values[0],
        })
    }

    /// Samples an action and records its log-probability and the value estimate.
    pub fn act<R: Rng + ?Sized>(
        &self,
        params: &ParameterSet,
        obs: &TensorBuffer,
        rng: &mut R,
    ) -> Result<ActionRecord> {
        let f = self.forward(params, obs.data())?;
        let head = f.head_row(0);
        let (action, log_prob) = match self.dist_kind() {
            DistKind::Categorical => {
                let logp = log_softmax(head);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = head.len() - 1;
                for (j, lp) in logp.iter().enumerate() {
                    acc += lp.exp();
                    if u < acc {
                        chosen = j;
                        break;
                    }
                }
                (Action::Discrete(chosen), logp[chosen].max(LOG_PROB_FLOOR))
            }
            DistKind::Gaussian => {
                let a: Vec<f64> = head
                    .iter()
                    .zip(&f.log_std)
                    .map(|(mu, ls)| {
                        let z: f64 = StandardNormal.sample(rng);
                        mu + ls.exp() * z
                    })
                    .collect();
                let lp = gaussian_log_prob(head, &f.log_std, &a);
                (Action::Continuous(a), lp.max(LOG_PROB_FLOOR))
            }
        };
        Ok(ActionRecord {
            action,
            log_prob,
            value: f.values[0],
        })
    }

    /// Argmax (categorical) or mean (gaussian) action.
    pub fn act_greedy(&self, params: &ParameterSet, obs: &TensorBuffer) -> Result<Action> {
        let f = self.forward(params, obs.data())?;
        let head = f.head_row(0);
        Ok(match self.dist_kind() {
            DistKind::Categorical => Action::Discrete(argmax(head)),
            DistKind::Gaussian => Action::Continuous(head.to_vec()),
        })
    }

    pub fn value_of(&self, params: &ParameterSet, obs: &TensorBuffer) -> Result<f64> {
        Ok(self.forward(params, obs.data())?.values[0])
    }

    /// Values for a batch of observations.
    pub fn values(&self, params: &ParameterSet, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(params, obs)?.values)
    }

    /// Log-probabilities, entropies and values of `actions` under `params`.
    pub fn evaluate_actions(
        &self,
        params: &ParameterSet,
        obs: &[f64],
        actions: &[Action],
    ) -> Result<(Forward, Evaluation)> {
        let f = self.forward(params, obs)?;
        if f.rows != actions.len() {
            return Err(Error::contract(format!(
                "{} observations but {} actions",
                f.rows,
                actions.len()
            )));
        }
        let mut log_probs = Vec::with_capacity(f.rows);
        let mut entropies = Vec::with_capacity(f.rows);
        for (r, action) in actions.iter().enumerate() {
            self.spec.action_space.validate(action)?;
            let head = f.head_row(r);
            match action {
                Action::Discrete(a) => {
                    let logp = log_softmax(head);
                    log_probs.push(logp[*a].max(LOG_PROB_FLOOR));
                    entropies.push(-logp.iter().map(|l| l.exp() * l).sum::<f64>());
                }
                Action::Continuous(a) => {
                    log_probs.push(gaussian_log_prob(head, &f.log_std, a).max(LOG_PROB_FLOOR));
                    entropies.push(gaussian_entropy(&f.log_std));
                }
            }
        }
        let values = f.values.clone();
        Ok((
            f,
            Evaluation {
                log_probs,
                entropies,
                values,
            },
        ))
    }

    /// Head gradients of `Σ d_logp·log π(a|s) + d_ent·H(s)`.
    ///
    /// Floored log-probabilities contribute no gradient. Returns the
    /// policy-head gradient (`rows × head_width`) and the log_std gradient.
    pub fn distribution_grads(
        &self,
        fwd: &Forward,
        actions: &[Action],
        d_logp: &[f64],
        d_ent: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let width = self.spec.action_space.head_width();
        let mut d_head = vec![0.0; fwd.rows * width];
        let mut d_log_std = vec![0.0; fwd.log_std.len()];
        for (r, action) in actions.iter().enumerate() {
            let head = fwd.head_row(r);
            let out = &mut d_head[r * width..(r + 1) * width];
            match action {
                Action::Discrete(a) => {
                    let logp = log_softmax(head);
                    let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
                    let entropy = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
                    let lp_live = logp[*a] > LOG_PROB_FLOOR;
                    for j in 0..width {
                        let mut g = 0.0;
                        if lp_live {
                            let indicator = if j == *a { 1.0 } else { 0.0 };
                            g += d_logp[r] * (indicator - probs[j]);
                        }
                        g += d_ent[r] * (-probs[j] * (logp[j] + entropy));
                        out[j] = g;
                    }
                }
                Action::Continuous(a) => {
                    if gaussian_log_prob(head, &fwd.log_std, a) > LOG_PROB_FLOOR {
                        for j in 0..width {
                            let var = (2.0 * fwd.log_std[j]).exp();
                            let diff = a[j] - head[j];
                            out[j] = d_logp[r] * diff / var;
                            d_log_std[j] += d_logp[r] * (diff * diff / var - 1.0);
                        }
                    }
                    for g in d_log_std.iter_mut() {
                        *g += d_ent[r];
                    }
                }
            }
        }
        for (g, free) in d_log_std.iter_mut().zip(&fwd.log_std_free) {
            if !free {
                *g = 0.0;
            }
        }
        (d_head, d_log_std)
    }

    /// Parameter gradient given gradients on the policy head output,
    /// log_std and per-row values.
    pub fn backward(
        &self,
        params: &ParameterSet,
        fwd: &Forward,
        d_head: &[f64],
        d_log_std: &[f64],
        d_value: &[f64],
    ) -> Result<ParameterSet> {
        let rows = fwd.rows;
        let mut grads = params.zeros_like();
        let feat = fwd.acts.last().unwrap();
        let hidden_width = *self.spec.hidden.last().unwrap_or(&self.spec.obs_dim);
        let mut d_feat = vec![0.0; rows * hidden_width];
        let mut scratch = vec![0.0; rows * hidden_width];
        dense_backward(
            params.layer("policy")?,
            feat,
            rows,
            d_head,
            grads.layer_mut("policy")?,
            Some(&mut d_feat),
        );
        dense_backward(
            params.layer("value")?,
            feat,
            rows,
            d_value,
            grads.layer_mut("value")?,
            Some(&mut scratch),
        );
        for (a, b) in d_feat.iter_mut().zip(&scratch) {
            *a += b;
        }
        if let Some(g) = grads.get_mut("log_std") {
            g.bias.data_mut().copy_from_slice(d_log_std);
        }
        let mut delta = d_feat;
        for k in (0..self.spec.hidden.len()).rev() {
            self.spec.activation.backprop(&fwd.acts[k + 1], &mut delta);
            let name = format!("hidden{k}");
            let need_input = k > 0;
            let mut dx = if need_input {
                vec![0.0; rows * self.spec.hidden[k - 1]]
            } else {
                Vec::new()
            };
            dense_backward(
                params.layer(&name)?,
                &fwd.acts[k],
                rows,
                &delta,
                grads.layer_mut(&name)?,
                need_input.then_some(&mut dx[..]),
            );
            delta = dx;
        }
        Ok(grads)
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn gaussian_log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((mu, ls), a)| {
            let z = (a - mu) / ls.exp();
            -0.5 * z * z - ls - HALF_LN_2PI
        })
        .sum()
}

pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| 0.5 + HALF_LN_2PI + ls).sum()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn discrete(n: usize, obs_dim: usize) -> ActorCritic {
        ActorCritic::new(NetworkSpec {
            obs_dim,
            hidden: vec![8, 8],
            activation: Activation::Tanh,
            action_space: ActionSpace::Discrete { n },
        })
        .unwrap()
    }

    fn gaussian(dims: usize, obs_dim: usize) -> ActorCritic {
        ActorCritic::new(NetworkSpec {
            obs_dim,
            hidden: vec![8],
            activation: Activation::Tanh,
            action_space: ActionSpace::Continuous { dims },
        })
        .unwrap()
    }

    fn zero_policy(ac: &ActorCritic, p: &mut ParameterSet) {
        let _ = ac;
        let l = p.layer_mut("policy").unwrap();
        l.weight.data_mut().fill(0.0);
        l.bias.data_mut().fill(0.0);
    }

    #[test]
    fn degenerate_categorical_samples_the_spike() {
        let ac = discrete(4, 3);
        let mut p = ac.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        zero_policy(&ac, &mut p);
        p.layer_mut("policy").unwrap().bias.data_mut()[2] = 1e6;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let rec = ac.act(&p, &TensorBuffer::vector(vec![0.1, 0.2, 0.3]), &mut rng).unwrap();
            assert_eq!(rec.action, Action::Discrete(2));
            assert!(rec.log_prob.abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_sample_and_density() {
        let ac = gaussian(2, 3);
        let mut p = ac.init_params(&mut ChaCha8Rng::seed_from_u64(4));
        p.layer_mut("log_std").unwrap().bias.data_mut().copy_from_slice(&[-0.5, 0.3]);
        let obs = TensorBuffer::vector(vec![0.4, -0.6, 0.9]);
        let out = ac.policy_output(&p, &obs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rec = ac.act(&p, &obs, &mut rng).unwrap();

        let mut replay = ChaCha8Rng::seed_from_u64(9);
        let z: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut replay)).collect();
        let Action::Continuous(a) = &rec.action else { panic!() };
        let mut closed_form = 0.0;
        for j in 0..2 {
            let sigma = out.log_std[j].exp();
            assert!((a[j] - (out.head[j] + sigma * z[j])).abs() < 1e-15);
            let d = a[j] - out.head[j];
            closed_form += -(d * d) / (2.0 * sigma * sigma)
                - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln();
        }
        assert!((rec.log_prob - closed_form).abs() < 1e-12);
    }

    #[test]
    fn seeded_actions_repeat() {
        let ac = discrete(9, 5);
        let p = ac.init_params(&mut ChaCha8Rng::seed_from_u64(2));
        let obs = TensorBuffer::vector(vec![0.0, 1.0, 0.0, 0.5, -0.5]);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| ac.act(&p, &obs, &mut rng).unwrap().action)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
    }

    #[test]
    fn entropy_closed_forms() {
        let ac = discrete(9, 2);
        let mut p = ac.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        zero_policy(&ac, &mut p);
        let (_, e) = ac.evaluate_actions(&p, &[0.3, 0.1], &[Action::Discrete(4)]).unwrap();
        assert!((e.entropies[0] - 9f64.ln()).abs() < 1e-12);
        assert!((e.entropies[0] - 2.19722).abs() < 1e-5);

        p.layer_mut("policy").unwrap().bias.data_mut()[0] = 1e6;
        let (_, e) = ac.evaluate_actions(&p, &[0.3, 0.1], &[Action::Discrete(0)]).unwrap();
        assert!(e.entropies[0].abs() < 1e-12);

        let g = gaussian(2, 2);
        let q = g.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        let (_, e) = g
            .evaluate_actions(&q, &[0.0, 0.0], &[Action::Continuous(vec![0.0, 0.0])])
            .unwrap();
        assert!((e.entropies[0] - 2.83788).abs() < 1e-5);
    }

    #[test]
    fn out_of_range_action_is_domain_error() {
        let ac = discrete(3, 2);
        let p = ac.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        let err = ac.evaluate_actions(&p, &[0.0, 0.0], &[Action::Discrete(3)]).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn impossible_demo_action_is_floored() {
        let ac = discrete(3, 2);
        let mut p = ac.init_params(&mut ChaCha8Rng::seed_from_u64(0));
        p.layer_mut("policy").unwrap().bias.data_mut()[0] = 1e6;
        let (_, e) = ac.evaluate_actions(&p, &[0.0, 0.0], &[Action::Discrete(1)]).unwrap();
        assert_eq!(e.log_probs[0], LOG_PROB_FLOOR);
    }

    #[test]
    fn value_head_bias_only() {
        let ac = discrete(3, 4);
        let mut p = ac.init_params(&mut ChaCha8Rng::seed_from_u64(6));
        let v = p.layer_mut("value").unwrap();
        v.weight.data_mut().fill(0.0);
        for obs in [[0.0; 4], [1.0, -2.0, 0.5, 3.0]] {
            assert_eq!(ac.value_of(&p, &TensorBuffer::vector(obs.to_vec())).unwrap(), 0.0);
        }
        p.layer_mut("value").unwrap().bias.data_mut()[0] = 2.5;
        assert_eq!(ac.value_of(&p, &TensorBuffer::vector(vec![9.0, 1.0, 0.0, 0.0])).unwrap(), 2.5);
    }

    #[test]
    fn value_matches_reference_mlp() {
        use crate::diffcore::forward_mlp;
        let ac = discrete(5, 6);
        let p = ac.init_params(&mut ChaCha8Rng::seed_from_u64(8));
        let obs = TensorBuffer::vector(vec![0.2, -0.1, 0.0, 0.7, 1.0, -1.0]);
        let trunk = p.select(&["hidden0", "hidden1"]).unwrap();
        let feat = forward_mlp(&trunk, &obs, Activation::Tanh).unwrap();
        let v = p.layer("value").unwrap();
        let expected: f64 = v.bias.data()[0]
            + feat.data().iter().zip(v.weight.data()).map(|(a, b)| a * b).sum::<f64>();
        assert!((ac.value_of(&p, &obs).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn categorical_mass_matches_softmax() {
        let ac = discrete(6, 3);
        let p = ac.init_params(&mut ChaCha8Rng::seed_from_u64(12));
        let obs = [0.5, -0.5, 0.25];
        let out = ac.policy_output(&p, &TensorBuffer::vector(obs.to_vec())).unwrap();
        let z: f64 = out.head.iter().map(|v| v.exp()).sum();
        let mut total = 0.0;
        for a in 0..6 {
            let (_, e) = ac.evaluate_actions(&p, &obs, &[Action::Discrete(a)]).unwrap();
            let mass = out.head[a].exp() / z;
            assert!((e.log_probs[0].exp() - mass).abs() < 1e-12);
            assert!(e.entropies[0] >= 0.0 && e.entropies[0] <= 6f64.ln() + 1e-12);
            total += mass;
        }
        assert!((total - 1.0).abs() < 1e-12);
    }
}
