//! Python bindings.

use std::path::{Path, PathBuf};

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ppod_core::config::RunConfig;
use ppod_core::demo::{load_demos, Demo};
use ppod_core::envs::scripted::scripted_episode;
use ppod_core::envs::TaskId;
use ppod_core::policy::Action;
use ppod_core::ppo::{RolloutBatch, Transition};
use ppod_core::replay::{self, Source};
use ppod_core::train::{eval_seed, evaluate, load_policy, train_loop};

fn err(e: ppod_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn task(name: &str) -> PyResult<TaskId> {
    name.parse().map_err(err)
}

fn to_py_json<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn action(obj: &Bound<'_, PyAny>) -> PyResult<Action> {
    if let Ok(a) = obj.extract::<usize>() {
        return Ok(Action::Discrete(a));
    }
    obj.extract::<Vec<f64>>()
        .map(Action::Continuous)
        .map_err(|_| PyValueError::new_err("action must be an int or a list of floats"))
}

/// One environment instance.
#[pyclass(name = "Env")]
struct PyEnv {
    inner: ppod_core::envs::Env,
}

#[pymethods]
impl PyEnv {
    #[new]
    fn new(task_id: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ppod_core::envs::Env::new(task(task_id)?),
        })
    }

    #[getter]
    fn task(&self) -> String {
        self.inner.task().to_string()
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    #[getter]
    fn step_limit(&self) -> usize {
        self.inner.step_limit()
    }

    fn action_space<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py_json(py, &self.inner.action_space())
    }

    fn reset(&mut self, seed: u64) -> PyResult<Vec<f64>> {
        self.inner.reset(seed).map_err(err)
    }

    /// Returns `(obs, reward, done)`.
    fn step(&mut self, action_obj: &Bound<'_, PyAny>) -> PyResult<(Vec<f64>, f64, bool)> {
        let r = self.inner.step(&action(action_obj)?).map_err(err)?;
        Ok((r.obs, r.reward, r.done))
    }

    fn render_ascii(&self) -> String {
        self.inner.render_ascii()
    }
}

/// Replay mixing schedule.
#[pyclass(name = "ReplayScheduler")]
struct PyScheduler {
    inner: replay::ReplayScheduler,
    rng: ChaCha8Rng,
}

#[pymethods]
impl PyScheduler {
    #[new]
    #[pyo3(signature = (rho, phi, dv_capacity, demos=1, seed=0))]
    fn new(rho: f64, phi: f64, dv_capacity: usize, demos: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: replay::ReplayScheduler::new(rho, phi, dv_capacity, demos).map_err(err)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.inner.rho
    }

    #[getter]
    fn phi(&self) -> f64 {
        self.inner.phi
    }

    #[getter]
    fn dv_cap(&self) -> usize {
        self.inner.dv_cap
    }

    #[getter]
    fn dr_size(&self) -> usize {
        self.inner.dr_size
    }

    /// Shifts one value slot to the reward buffer; false once none remain.
    fn anneal(&mut self) -> bool {
        replay::anneal(&mut self.inner)
    }

    /// Draws `n` sources: "dr", "dv" or "env".
    #[pyo3(signature = (n, dr_empty=false, dv_empty=false))]
    fn sample_sources(&mut self, n: usize, dr_empty: bool, dv_empty: bool) -> Vec<&'static str> {
        (0..n)
            .map(|_| match replay::select_source(&self.inner, dr_empty, dv_empty, &mut self.rng) {
                Source::FromDR => "dr",
                Source::FromDV => "dv",
                Source::FromEnv => "env",
            })
            .collect()
    }
}

/// Advantages and return targets for one segment.
#[pyfunction]
#[pyo3(signature = (rewards, values, dones, bootstrap, gamma, lam))]
fn compute_gae(
    rewards: Vec<f64>,
    values: Vec<f64>,
    dones: Vec<bool>,
    bootstrap: Option<f64>,
    gamma: f64,
    lam: f64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() || rewards.len() != dones.len() {
        return Err(PyValueError::new_err("rewards, values and dones must have equal length"));
    }
    let segment = rewards
        .iter()
        .zip(&values)
        .zip(&dones)
        .map(|((&r, &v), &d)| Transition::replayed(Vec::new(), Action::Discrete(0), r, d, v))
        .collect();
    let mut batch = RolloutBatch::default();
    batch.push_segment(segment);
    ppod_core::ppo::compute_gae(&mut batch, &[bootstrap], gamma, lam).map_err(err)?;
    Ok((
        batch.transitions.iter().map(|t| t.advantage).collect(),
        batch.transitions.iter().map(|t| t.return_target).collect(),
    ))
}

/// Value-buffer sampling probabilities.
#[pyfunction]
#[pyo3(signature = (priorities, alpha, shift=true))]
fn priority_probabilities(priorities: Vec<f64>, alpha: f64, shift: bool) -> Vec<f64> {
    replay::priority_probabilities(&priorities, alpha, shift)
}

#[pyfunction]
#[pyo3(signature = (distance, threshold=1.0))]
fn reacher_reward(distance: f64, threshold: f64) -> f64 {
    ppod_core::envs::reacher_reward(distance, threshold)
}

/// Records a scripted expert episode to `path`; returns the file's summary.
#[pyfunction]
fn scripted_demo<'py>(py: Python<'py>, task_id: &str, seed: u64, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let t = task(task_id)?;
    let traj = scripted_episode(&mut ppod_core::envs::Env::new(t), seed, 1).map_err(err)?;
    let demo = Demo::from_trajectory(&traj, t, seed).map_err(err)?;
    demo.save(&path).map_err(err)?;
    to_py_json(py, &demo.report())
}

#[pyfunction]
fn validate_demo<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    to_py_json(py, &Demo::load(&path).map_err(err)?.report())
}

#[pyfunction]
fn replay_demo<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    to_py_json(py, &Demo::load(&path).map_err(err)?.replay().map_err(err)?)
}

/// Trains from a config file's text with optional `[section] key` overrides
/// given as `{"section.key": "value"}`. Returns the evaluation history.
#[pyfunction]
#[pyo3(signature = (config="", overrides=None))]
fn train<'py>(
    py: Python<'py>,
    config: &str,
    overrides: Option<std::collections::BTreeMap<String, String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = RunConfig::parse(config, Path::new("<python>")).map_err(err)?;
    for (k, v) in overrides.unwrap_or_default() {
        let (section, key) = k
            .split_once('.')
            .ok_or_else(|| PyValueError::new_err(format!("override `{k}` must look like section.key")))?;
        cfg.set(section, key, &v).map_err(err)?;
    }
    let outcome = py
        .detach(|| {
            cfg.validate()?;
            let demos = load_demos(&cfg.demos, cfg.task, cfg.frame_stack)?;
            train_loop(cfg, demos)
        })
        .map_err(err)?;
    to_py_json(
        py,
        &serde_json::json!({
            "updates": outcome.state.updates,
            "live_frames": outcome.state.live_frames,
            "replay_frames": outcome.state.replay_frames,
            "reached_target": outcome.reached_target,
            "evals": outcome.evals,
        }),
    )
}

/// Greedy evaluation of a training checkpoint.
#[pyfunction]
#[pyo3(signature = (checkpoint, episodes=100, seed=None))]
fn evaluate_checkpoint<'py>(
    py: Python<'py>,
    checkpoint: PathBuf,
    episodes: usize,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyAny>> {
    let (cfg, ac, params) = load_policy(&checkpoint).map_err(err)?;
    let seed = seed.unwrap_or_else(|| eval_seed(cfg.seed));
    let report = evaluate(&ac, &params, cfg.task, episodes, seed, cfg.frame_stack).map_err(err)?;
    to_py_json(py, &report)
}

/// Runs the command line with `argv` (without the program name).
#[pyfunction]
fn run_command(argv: Vec<String>) -> i32 {
    let args = std::iter::once("ppod".to_string()).chain(argv);
    ppod_core::cli::run_command(args, &mut std::io::stdout())
}

#[pymodule]
fn ppod(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnv>()?;
    m.add_class::<PyScheduler>()?;
    m.add_function(wrap_pyfunction!(compute_gae, m)?)?;
    m.add_function(wrap_pyfunction!(priority_probabilities, m)?)?;
    m.add_function(wrap_pyfunction!(reacher_reward, m)?)?;
    m.add_function(wrap_pyfunction!(scripted_demo, m)?)?;
    m.add_function(wrap_pyfunction!(validate_demo, m)?)?;
    m.add_function(wrap_pyfunction!(replay_demo, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_checkpoint, m)?)?;
    m.add_function(wrap_pyfunction!(run_command, m)?)?;
    m.add("TASKS", TaskId::ALL.iter().map(|t| t.to_string()).collect::<Vec<_>>())?;
    Ok(())
}
