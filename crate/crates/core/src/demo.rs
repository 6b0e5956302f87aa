//! Demonstration files: JSON lines, a header followed by one line per step.
//!
//! ```text
//! {"format_version":1,"env_id":"grid.onebox.easy","action_space":{"kind":"discrete","n":9},"obs_dims":571,"seed":3}
//! {"obs":[...],"action":4,"reward":0.0,"done":false}
//! ...
//! {"obs":[...],"action":0,"reward":1.0,"done":true}
//! ```
//!
//! Observations are single frames; stacking happens at load time.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::envs::{Env, FrameStack, TaskId};
use crate::error::{Error, Result};
use crate::policy::{Action, ActionSpace};
use crate::replay::{Origin, Trajectory};

pub const DEMO_FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoHeader {
    pub format_version: u64,
    pub env_id: TaskId,
    pub action_space: ActionSpace,
    pub obs_dims: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoStep {
    pub obs: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demo {
    pub header: DemoHeader,
    pub steps: Vec<DemoStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoReport {
    pub env_id: TaskId,
    pub seed: u64,
    pub steps: usize,
    pub episode_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub steps: usize,
    pub stored_return: f64,
    pub replayed_return: f64,
    /// Index of the first step whose replayed reward or observation differs.
    pub first_mismatch: Option<usize>,
}

impl ReplayReport {
    pub fn matches(&self) -> bool {
        self.first_mismatch.is_none()
    }
}

impl Demo {
    /// Builds a demo from a single-frame trajectory played from `seed`.
    pub fn from_trajectory(traj: &Trajectory, task: TaskId, seed: u64) -> Result<Self> {
        if traj.is_empty() {
            return Err(Error::contract("cannot save an empty trajectory"));
        }
        let env = Env::new(task);
        let n = traj.len();
        let steps = (0..n)
            .map(|t| DemoStep {
                obs: traj.observations[t].clone(),
                action: traj.actions[t].clone(),
                reward: traj.rewards[t],
                done: t + 1 == n,
            })
            .collect();
        let demo = Self {
            header: DemoHeader {
                format_version: DEMO_FORMAT_VERSION,
                env_id: task,
                action_space: env.action_space(),
                obs_dims: env.obs_dim(),
                seed,
            },
            steps,
        };
        demo.check(Path::new("<memory>"))?;
        Ok(demo)
    }

    pub fn episode_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// The demo as a replayable trajectory with `frame_stack`-deep inputs.
    pub fn to_trajectory(&self, frame_stack: usize) -> Result<Trajectory> {
        let frames: Vec<Vec<f64>> = self.steps.iter().map(|s| s.obs.clone()).collect();
        Trajectory::new(
            FrameStack::stack_episode(frame_stack, &frames),
            self.steps.iter().map(|s| s.action.clone()).collect(),
            self.steps.iter().map(|s| s.reward).collect(),
            Origin::HumanDemo,
        )
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::contract("cannot save an empty demonstration"));
        }
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let fail = |line: usize, message: String| Error::Format {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or_else(|| fail(1, "missing header".into()))?;
        let raw: serde_json::Value = serde_json::from_str(first).map_err(|e| fail(1, format!("header: {e}")))?;
        let version = raw.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0);
        if version != DEMO_FORMAT_VERSION {
            return Err(Error::Version {
                what: "demonstration",
                found: version,
                expected: DEMO_FORMAT_VERSION,
            });
        }
        let header: DemoHeader = serde_json::from_value(raw).map_err(|e| fail(1, format!("header: {e}")))?;
        let mut steps = Vec::new();
        let mut last_line = 1;
        for (i, line) in lines {
            last_line = i + 1;
            let step: DemoStep = serde_json::from_str(line).map_err(|e| fail(i + 1, format!("step: {e}")))?;
            steps.push((i + 1, step));
        }
        let demo = Self {
            header,
            steps: Vec::new(),
        };
        demo.check_steps(path, &steps, last_line)?;
        Ok(Self {
            steps: steps.into_iter().map(|(_, s)| s).collect(),
            ..demo
        })
    }

    fn check(&self, path: &Path) -> Result<()> {
        let numbered: Vec<(usize, DemoStep)> = self.steps.iter().cloned().enumerate().map(|(i, s)| (i + 2, s)).collect();
        self.check_steps(path, &numbered, self.steps.len() + 1)
    }

    fn check_steps(&self, path: &Path, steps: &[(usize, DemoStep)], last_line: usize) -> Result<()> {
        let fail = |line: usize, message: String| Error::Format {
            path: path.to_path_buf(),
            line,
            message,
        };
        let env = Env::new(self.header.env_id);
        if self.header.action_space != env.action_space() || self.header.obs_dims != env.obs_dim() {
            return Err(fail(1, format!("header does not describe {}", self.header.env_id)));
        }
        if steps.is_empty() {
            return Err(fail(last_line, "no steps".into()));
        }
        for (k, (line, s)) in steps.iter().enumerate() {
            if s.obs.len() != self.header.obs_dims {
                return Err(fail(*line, format!("obs has {} entries, expected {}", s.obs.len(), self.header.obs_dims)));
            }
            if s.obs.iter().any(|v| !v.is_finite()) {
                return Err(fail(*line, "non-finite observation".into()));
            }
            self.header
                .action_space
                .validate(&s.action)
                .map_err(|e| fail(*line, e.to_string()))?;
            if !(s.reward.is_finite() && s.reward >= 0.0) {
                return Err(fail(*line, format!("reward {} is negative or non-finite", s.reward)));
            }
            let last = k + 1 == steps.len();
            if s.done && !last {
                return Err(fail(*line, "terminal step before the end of the file".into()));
            }
            if last && !s.done {
                return Err(fail(*line, "file ends without a terminal step".into()));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    /// Loads and rejects demos recorded on a different task.
    pub fn load_for(path: &Path, task: TaskId) -> Result<Self> {
        let demo = Self::load(path)?;
        if demo.header.env_id != task {
            return Err(Error::config(format!(
                "{} was recorded on {}, not {task}",
                path.display(),
                demo.header.env_id
            )));
        }
        Ok(demo)
    }

    pub fn report(&self) -> DemoReport {
        DemoReport {
            env_id: self.header.env_id,
            seed: self.header.seed,
            steps: self.steps.len(),
            episode_return: self.episode_return(),
        }
    }

    /// Steps the recorded actions through a fresh env and compares rewards
    /// and observations exactly.
    pub fn replay(&self) -> Result<ReplayReport> {
        let mut env = Env::new(self.header.env_id);
        let mut obs = env.reset(self.header.seed)?;
        let mut report = ReplayReport {
            steps: self.steps.len(),
            stored_return: self.episode_return(),
            replayed_return: 0.0,
            first_mismatch: None,
        };
        for (t, s) in self.steps.iter().enumerate() {
            let mismatch = obs != s.obs;
            let r = env.step(&s.action)?;
            report.replayed_return += r.reward;
            if (mismatch || r.reward != s.reward || r.done != s.done) && report.first_mismatch.is_none() {
                report.first_mismatch = Some(t);
            }
            obs = r.obs;
            if r.done && t + 1 < self.steps.len() {
                report.first_mismatch.get_or_insert(t + 1);
                break;
            }
        }
        Ok(report)
    }
}

/// Loads demos for `task` and stacks them for the policy.
pub fn load_demos(paths: &[PathBuf], task: TaskId, frame_stack: usize) -> Result<Vec<Trajectory>> {
    paths
        .iter()
        .map(|p| Demo::load_for(p, task)?.to_trajectory(frame_stack))
        .collect()
}

/// `path`, or the first free `stem-N.ext` beside it.
pub fn free_path(path: &Path) -> PathBuf {
    if !path.exists() {
        return path.to_path_buf();
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    (1..)
        .map(|k| path.with_file_name(format!("{stem}-{k}{ext}")))
        .find(|p| !p.exists())
        .expect("unbounded")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::scripted::scripted_episode;

    fn demo(task: TaskId, seed: u64) -> Demo {
        let traj = scripted_episode(&mut Env::new(task), seed, 1).unwrap();
        Demo::from_trajectory(&traj, task, seed).unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for task in [TaskId::OneBoxEasy, TaskId::ReacherSparse] {
            let d = demo(task, 4);
            let path = dir.path().join("d.jsonl");
            d.save(&path).unwrap();
            let back = Demo::load(&path).unwrap();
            assert_eq!(back, d);
            assert!(back.replay().unwrap().matches());
        }
    }

    #[test]
    fn task_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        demo(TaskId::OneBoxEasy, 1).save(&path).unwrap();
        assert!(Demo::load_for(&path, TaskId::OneBoxHard).is_err());
    }

    #[test]
    fn truncation_names_line() {
        let text = demo(TaskId::OneBoxEasy, 2).to_jsonl().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let cut = lines[..4].join("\n") + "\n" + &lines[4][..10];
        let err = Demo::parse(&cut, Path::new("d.jsonl")).unwrap_err();
        assert!(err.to_string().starts_with("d.jsonl:5:"), "{err}");
        let short = lines[..4].join("\n");
        let err = Demo::parse(&short, Path::new("d.jsonl")).unwrap_err();
        assert!(err.to_string().starts_with("d.jsonl:4:"), "{err}");
    }

    #[test]
    fn unknown_version_rejected() {
        let text = demo(TaskId::OneBoxEasy, 2).to_jsonl().unwrap().replacen("\"format_version\":1", "\"format_version\":7", 1);
        assert!(matches!(
            Demo::parse(&text, Path::new("d")),
            Err(Error::Version { found: 7, .. })
        ));
    }

    #[test]
    fn empty_trajectory_rejected() {
        let d = Demo {
            header: demo(TaskId::OneBoxEasy, 0).header,
            steps: Vec::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(d.save(&dir.path().join("e.jsonl")).is_err());
    }

    #[test]
    fn free_path_suffixes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("demo.jsonl");
        assert_eq!(free_path(&p), p);
        fs::write(&p, "x").unwrap();
        assert_eq!(free_path(&p), dir.path().join("demo-1.jsonl"));
    }
}
