//! Run configuration and its flat `key = value` file format with
//! `[section]` headers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::Activation;
use crate::envs::TaskId;
use crate::error::{Error, Result};
use crate::ppo::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Ppod,
    Ppo,
    PpoBc,
    Bc,
}

impl Algo {
    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Ppod => "ppod",
            Algo::Ppo => "ppo",
            Algo::PpoBc => "ppo_bc",
            Algo::Bc => "bc",
        }
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Algo::Ppod, Algo::Ppo, Algo::PpoBc, Algo::Bc]
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown algo `{s}` (expected ppod, ppo, ppo_bc or bc)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::config(format!("unknown preset `{s}` (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub task: TaskId,
    pub algo: Algo,
    pub seed: u64,
    pub total_frames: u64,
    pub frame_stack: usize,
    pub rho: f64,
    pub phi: f64,
    /// Initial value-buffer capacity.
    pub dv_capacity: usize,
    /// Reward plus value slots.
    pub buffer_size: usize,
    pub alpha: f64,
    /// Subtract the buffer minimum before exponentiating priorities.
    pub priority_shift: bool,
    /// PPO+BC: keep successful episodes as extra BC data.
    pub reward_buffer: bool,
    /// PPO+BC: swap which loss applies to which source.
    pub bc_literal: bool,
    pub bc_steps: usize,
    pub bc_batch: usize,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub checkpoint_interval: u64,
    /// Stop once a periodic evaluation reaches this success rate.
    pub target_success: Option<f64>,
    pub parallel: bool,
    pub demos: Vec<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let (train, frame_stack) = match preset {
            Preset::Desk => (TrainConfig::desk(), 1),
            Preset::Paper => (TrainConfig::paper(), 4),
        };
        Self {
            preset,
            task: TaskId::OneBoxEasy,
            algo: Algo::Ppod,
            seed: 0,
            total_frames: 2_000_000,
            frame_stack,
            rho: 0.1,
            phi: 0.3,
            dv_capacity: 50,
            buffer_size: 51,
            alpha: 10.0,
            priority_shift: true,
            reward_buffer: false,
            bc_literal: false,
            bc_steps: 3000,
            bc_batch: 64,
            eval_interval: 10,
            eval_episodes: 100,
            checkpoint_interval: 50,
            target_success: None,
            parallel: false,
            demos: Vec::new(),
            out_dir: None,
            train,
        }
    }

    pub fn desk() -> Self {
        Self::preset(Preset::Desk)
    }

    pub fn paper() -> Self {
        Self::preset(Preset::Paper)
    }

    /// Demonstration slots implied by the buffer sizes.
    pub fn demo_slots(&self) -> usize {
        self.buffer_size.saturating_sub(self.dv_capacity)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with_demos(self.demos.len())
    }

    /// Validation when `demos` demonstrations are supplied directly rather
    /// than through `self.demos`.
    pub fn validate_with_demos(&self, demos: usize) -> Result<()> {
        self.train.validate()?;
        for (name, v) in [("rho", self.rho), ("phi", self.phi)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.rho + self.phi > 1.0 + 1e-12 {
            return Err(Error::config(format!(
                "rho + phi must not exceed 1, got {}",
                self.rho + self.phi
            )));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.buffer_size <= self.dv_capacity {
            return Err(Error::config(format!(
                "buffer_size ({}) must exceed dv_capacity ({}) by the number of demonstrations",
                self.buffer_size, self.dv_capacity
            )));
        }
        if demos > 0 && demos != self.demo_slots() {
            return Err(Error::config(format!(
                "buffer_size {} = dv_capacity {} + demos requires {} demonstration files, got {}",
                self.buffer_size,
                self.dv_capacity,
                self.demo_slots(),
                demos
            )));
        }
        if self.frame_stack == 0 {
            return Err(Error::config("frame_stack must be positive"));
        }
        if self.eval_episodes == 0 || self.eval_interval == 0 || self.checkpoint_interval == 0 {
            return Err(Error::config("eval_episodes, eval_interval and checkpoint_interval must be positive"));
        }
        if self.bc_batch == 0 {
            return Err(Error::config("bc_batch must be positive"));
        }
        if let Some(t) = self.target_success {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config("target_success must lie in [0, 1]"));
            }
        }
        let needs_demos = match self.algo {
            Algo::Ppod => self.rho > 0.0,
            Algo::PpoBc | Algo::Bc => true,
            Algo::Ppo => false,
        };
        if needs_demos && demos == 0 {
            return Err(Error::config(format!("algo {} needs at least one demonstration", self.algo.as_str())));
        }
        Ok(())
    }

    /// Parses a config file. A `preset` key in `[run]` selects the starting
    /// point; every other key overrides it.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let entries = scan(text, path)?;
        let preset = entries
            .iter()
            .find(|e| e.section == "run" && e.key == "preset")
            .map(|e| e.value.parse::<Preset>().map_err(|err| e.fail(path, &err.to_string())))
            .transpose()?
            .unwrap_or(Preset::Desk);
        let mut cfg = Self::preset(preset);
        for e in &entries {
            cfg.set(&e.section, &e.key, &e.value)
                .map_err(|err| e.fail(path, &err.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Applies one `section.key = value` override.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match (section, key) {
            ("run", "preset") => self.preset = value.parse()?,
            ("run", "task") => self.task = value.parse()?,
            ("run", "algo") => self.algo = value.parse()?,
            ("run", "seed") => self.seed = num(value)?,
            ("run", "total_frames") => self.total_frames = num(value)?,
            ("run", "frame_stack") => self.frame_stack = num(value)?,
            ("run", "eval_interval") => self.eval_interval = num(value)?,
            ("run", "eval_episodes") => self.eval_episodes = num(value)?,
            ("run", "checkpoint_interval") => self.checkpoint_interval = num(value)?,
            ("run", "target_success") => {
                self.target_success = if value == "none" { None } else { Some(num(value)?) }
            }
            ("run", "parallel") => self.parallel = num(value)?,
            ("run", "demos") => {
                self.demos = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(PathBuf::from)
                    .collect()
            }
            ("run", "out_dir") => self.out_dir = Some(PathBuf::from(value)),
            ("replay", "rho") => self.rho = num(value)?,
            ("replay", "phi") => self.phi = num(value)?,
            ("replay", "dv_capacity") => self.dv_capacity = num(value)?,
            ("replay", "buffer_size") => self.buffer_size = num(value)?,
            ("replay", "alpha") => self.alpha = num(value)?,
            ("replay", "priority_shift") => self.priority_shift = num(value)?,
            ("bc", "reward_buffer") => self.reward_buffer = num(value)?,
            ("bc", "literal") => self.bc_literal = num(value)?,
            ("bc", "steps") => self.bc_steps = num(value)?,
            ("bc", "batch") => self.bc_batch = num(value)?,
            ("ppo", "gamma") => t.gamma = num(value)?,
            ("ppo", "gae_lambda") => t.gae_lambda = num(value)?,
            ("ppo", "clip_eps") => t.clip_eps = num(value)?,
            ("ppo", "value_coef") => t.value_coef = num(value)?,
            ("ppo", "entropy_coef") => t.entropy_coef = num(value)?,
            ("ppo", "lr") => t.lr = num(value)?,
            ("ppo", "ppo_epochs") => t.ppo_epochs = num(value)?,
            ("ppo", "num_minibatches") => t.num_minibatches = num(value)?,
            ("ppo", "num_actors") => t.num_actors = num(value)?,
            ("ppo", "num_steps") => t.num_steps = num(value)?,
            ("ppo", "max_grad_norm") => t.max_grad_norm = num(value)?,
            ("ppo", "adam_eps") => t.adam_eps = num(value)?,
            ("ppo", "normalize_advantages") => t.normalize_advantages = num(value)?,
            ("ppo", "value_loss_replay_only") => t.value_loss_replay_only = num(value)?,
            ("ppo", "hidden") => {
                t.hidden = value
                    .split(',')
                    .map(|s| num::<usize>(s.trim()))
                    .collect::<Result<_>>()?
            }
            ("ppo", "activation") => {
                t.activation = match value {
                    "tanh" => Activation::Tanh,
                    "relu" => Activation::Relu,
                    _ => return Err(Error::config(format!("unknown activation `{value}`"))),
                }
            }
            _ => return Err(Error::config(format!("unknown key `{key}` in section [{section}]"))),
        }
        Ok(())
    }

    /// The fully resolved configuration in the file format; parsing the
    /// result gives back an equal config.
    pub fn dump(&self) -> String {
        let t = &self.train;
        let mut s = String::new();
        let preset = match self.preset {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        };
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let demos = self
            .demos
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "preset = {preset}");
        let _ = writeln!(s, "task = {}", self.task);
        let _ = writeln!(s, "algo = {}", self.algo.as_str());
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "total_frames = {}", self.total_frames);
        let _ = writeln!(s, "frame_stack = {}", self.frame_stack);
        let _ = writeln!(s, "eval_interval = {}", self.eval_interval);
        let _ = writeln!(s, "eval_episodes = {}", self.eval_episodes);
        let _ = writeln!(s, "checkpoint_interval = {}", self.checkpoint_interval);
        match self.target_success {
            Some(v) => writeln!(s, "target_success = {v:?}"),
            None => writeln!(s, "target_success = none"),
        }
        .ok();
        let _ = writeln!(s, "parallel = {}", self.parallel);
        let _ = writeln!(s, "demos = {demos}");
        if let Some(out) = &self.out_dir {
            let _ = writeln!(s, "out_dir = {}", out.display());
        }
        let _ = writeln!(s, "\n[replay]");
        let _ = writeln!(s, "rho = {:?}", self.rho);
        let _ = writeln!(s, "phi = {:?}", self.phi);
        let _ = writeln!(s, "dv_capacity = {}", self.dv_capacity);
        let _ = writeln!(s, "buffer_size = {}", self.buffer_size);
        let _ = writeln!(s, "alpha = {:?}", self.alpha);
        let _ = writeln!(s, "priority_shift = {}", self.priority_shift);
        let _ = writeln!(s, "\n[bc]");
        let _ = writeln!(s, "reward_buffer = {}", self.reward_buffer);
        let _ = writeln!(s, "literal = {}", self.bc_literal);
        let _ = writeln!(s, "steps = {}", self.bc_steps);
        let _ = writeln!(s, "batch = {}", self.bc_batch);
        let _ = writeln!(s, "\n[ppo]");
        let _ = writeln!(s, "gamma = {:?}", t.gamma);
        let _ = writeln!(s, "gae_lambda = {:?}", t.gae_lambda);
        let _ = writeln!(s, "clip_eps = {:?}", t.clip_eps);
        let _ = writeln!(s, "value_coef = {:?}", t.value_coef);
        let _ = writeln!(s, "entropy_coef = {:?}", t.entropy_coef);
        let _ = writeln!(s, "lr = {:?}", t.lr);
        let _ = writeln!(s, "ppo_epochs = {}", t.ppo_epochs);
        let _ = writeln!(s, "num_minibatches = {}", t.num_minibatches);
        let _ = writeln!(s, "num_actors = {}", t.num_actors);
        let _ = writeln!(s, "num_steps = {}", t.num_steps);
        let _ = writeln!(s, "max_grad_norm = {:?}", t.max_grad_norm);
        let _ = writeln!(s, "adam_eps = {:?}", t.adam_eps);
        let _ = writeln!(s, "normalize_advantages = {}", t.normalize_advantages);
        let _ = writeln!(s, "value_loss_replay_only = {}", t.value_loss_replay_only);
        let _ = writeln!(s, "hidden = {}", join(&t.hidden));
        let _ = writeln!(
            s,
            "activation = {}",
            match t.activation {
                Activation::Tanh => "tanh",
                Activation::Relu => "relu",
            }
        );
        s
    }
}

fn num<T: FromStr>(v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("cannot parse `{v}` as {}", std::any::type_name::<T>())))
}

struct Entry {
    line: usize,
    section: String,
    key: String,
    value: String,
}

impl Entry {
    fn fail(&self, path: &Path, message: &str) -> Error {
        Error::Format {
            path: path.to_path_buf(),
            line: self.line,
            message: message.to_string(),
        }
    }
}

fn scan(text: &str, path: &Path) -> Result<Vec<Entry>> {
    let mut section = String::from("run");
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fail = |message: &str| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message: message.to_string(),
        };
        if let Some(name) = line.strip_prefix('[') {
            section = name
                .strip_suffix(']')
                .ok_or_else(|| fail("unterminated section header"))?
                .trim()
                .to_string();
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| fail("expected `key = value`"))?;
        out.push(Entry {
            line: i + 1,
            section: section.clone(),
            key: key.trim().to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_preset_values() {
        let c = RunConfig::paper();
        assert_eq!(c.train.clip_eps, 0.15);
        assert_eq!(c.train.gamma, 0.998);
        assert_eq!(c.frame_stack, 4);
        assert_eq!(c.train.entropy_coef, 0.02);
        assert_eq!(c.buffer_size, 51);
        assert_eq!(c.alpha, 10.0);
        let dumped = c.dump();
        for line in ["clip_eps = 0.15", "gamma = 0.998", "frame_stack = 4", "entropy_coef = 0.02", "buffer_size = 51", "alpha = 10.0"] {
            assert!(dumped.contains(line), "missing {line}");
        }
    }

    #[test]
    fn dump_round_trips() {
        let mut c = RunConfig::desk();
        c.demos = vec!["a.jsonl".into()];
        c.target_success = Some(0.8);
        c.train.hidden = vec![32, 16];
        let back = RunConfig::parse(&c.dump(), Path::new("x.cfg")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn errors_name_the_line() {
        let err = RunConfig::parse("[replay]\nrho = 0.1\nphi = lots\n", Path::new("r.cfg")).unwrap_err();
        assert!(err.to_string().starts_with("r.cfg:3:"), "{err}");
        let err = RunConfig::parse("[ppo]\nwarp = 9\n", Path::new("r.cfg")).unwrap_err();
        assert!(err.to_string().contains("r.cfg:2"));
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::desk();
        c.algo = Algo::Ppo;
        c.validate().unwrap();
        c.rho = 0.8;
        assert!(c.validate().is_err());
        c.rho = 0.1;
        c.alpha = 0.0;
        assert!(c.validate().is_err());
        c.alpha = 10.0;
        c.demos = vec!["a".into(), "b".into()];
        assert!(c.validate().is_err());
        c.buffer_size = 52;
        c.validate().unwrap();
    }
}
