//! The `ppod` command line.

use std::io::Write;
use std::net::TcpListener;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Algo, Preset, RunConfig};
use crate::demo::{free_path, load_demos, Demo};
use crate::envs::scripted::scripted_episode;
use crate::envs::{Env, TaskId};
use crate::error::{Error, Result};
use crate::session::serve;
use crate::train::{eval_seed, evaluate, load_policy, train_loop};

#[derive(Debug, Parser)]
#[command(name = "ppod", version, about = "Demonstration-guided PPO on sparse-reward tasks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy and write metrics, evaluations and a checkpoint.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint; prints a JSON report.
    Evaluate(EvaluateArgs),
    /// Check a demonstration file and print a summary.
    DemoValidate(DemoArgs),
    /// Step a demonstration through a fresh env and compare rewards.
    DemoReplay(DemoArgs),
    /// Record a demonstration with the scripted expert.
    DemoScript(ScriptArgs),
    /// Serve the websocket recorder backend.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "config")]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub algo: Option<String>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub phi: Option<f64>,
    /// Comma-separated demonstration files.
    #[arg(long, value_delimiter = ',')]
    pub demos: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub frames: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    /// Defaults to the evaluation seed of the training run.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    pub path: PathBuf,
    /// Reject the file unless it was recorded on this task.
    #[arg(long)]
    pub task: Option<String>,
}

#[derive(Debug, Args)]
pub struct ScriptArgs {
    #[arg(long)]
    pub task: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value = "grid.onebox.easy")]
    pub task: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Exit after this many connections.
    #[arg(long)]
    pub sessions: Option<usize>,
}

/// Resolved run configuration: config file or preset, then flag overrides.
pub fn resolve_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(p)) => RunConfig::preset(p.parse::<Preset>()?),
        (None, None) => RunConfig::desk(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = &args.task {
        cfg.task = v.parse()?;
    }
    if let Some(v) = &args.algo {
        cfg.algo = v.parse::<Algo>()?;
    }
    if let Some(v) = args.rho {
        cfg.rho = v;
    }
    if let Some(v) = args.phi {
        cfg.phi = v;
    }
    if let Some(v) = &args.demos {
        cfg.demos = v.clone();
    }
    if let Some(v) = args.frames {
        cfg.total_frames = v;
    }
    if let Some(v) = &args.out {
        cfg.out_dir = Some(v.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn json_line(out: &mut dyn Write, value: &impl serde::Serialize) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string(value)?)?;
    Ok(())
}

/// Executes one parsed command, writing its report to `out`.
pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let cfg = resolve_config(&args)?;
            let demos = load_demos(&cfg.demos, cfg.task, cfg.frame_stack)?;
            let outcome = train_loop(cfg, demos)?;
            json_line(
                out,
                &serde_json::json!({
                    "updates": outcome.state.updates,
                    "live_frames": outcome.state.live_frames,
                    "replay_frames": outcome.state.replay_frames,
                    "reached_target": outcome.reached_target,
                    "final_eval": outcome.final_eval().map(|e| e.report),
                    "out_dir": outcome.state.cfg.out_dir,
                }),
            )
        }
        Command::Evaluate(args) => {
            let (cfg, ac, params) = load_policy(&args.checkpoint)?;
            let seed = args.seed.unwrap_or_else(|| eval_seed(cfg.seed));
            let report = evaluate(&ac, &params, cfg.task, args.episodes, seed, cfg.frame_stack)?;
            json_line(out, &report)
        }
        Command::DemoValidate(args) => {
            let demo = match &args.task {
                Some(t) => Demo::load_for(&args.path, t.parse()?)?,
                None => Demo::load(&args.path)?,
            };
            json_line(out, &demo.report())
        }
        Command::DemoReplay(args) => {
            let demo = match &args.task {
                Some(t) => Demo::load_for(&args.path, t.parse()?)?,
                None => Demo::load(&args.path)?,
            };
            let report = demo.replay()?;
            json_line(out, &report)?;
            match report.first_mismatch {
                None => Ok(()),
                Some(t) => Err(Error::Domain(format!(
                    "{}: replay diverges from the recording at step {t}",
                    args.path.display()
                ))),
            }
        }
        Command::DemoScript(args) => {
            let task: TaskId = args.task.parse()?;
            let traj = scripted_episode(&mut Env::new(task), args.seed, 1)?;
            let demo = Demo::from_trajectory(&traj, task, args.seed)?;
            let path = free_path(&args.out);
            demo.save(&path)?;
            json_line(out, &serde_json::json!({ "path": path, "report": demo.report() }))
        }
        Command::Serve(args) => {
            let task: TaskId = args.task.parse()?;
            let listener = TcpListener::bind((args.host.as_str(), args.port))?;
            eprintln!("serving {task} on ws://{}", listener.local_addr()?);
            serve(listener, task, args.seed, args.sessions)
        }
    }
}

/// Parses `argv` and runs it. Returns the process exit status; errors are
/// reported on stderr as one line.
pub fn run_command<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
