//! Websocket backend for recording demonstrations by hand.
//!
//! The client sends `reset`, `action` and `save` messages as JSON text
//! frames; the server answers each with exactly one `state`, `saved` or
//! `error` message. One connection is served at a time.

use std::net::TcpListener;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use crate::demo::{free_path, Demo};
use crate::envs::{Env, TaskId};
use crate::error::{Error, Result};
use crate::policy::Action;
use crate::replay::{Origin, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionMessage {
    Reset {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    State {
        ascii: String,
        cells: serde_json::Value,
        reward: f64,
        done: bool,
        step: usize,
        #[serde(rename = "return")]
        episode_return: f64,
    },
    Action {
        action: Action,
    },
    Save {
        path: PathBuf,
    },
    Saved {
        path: PathBuf,
        episode_return: f64,
        length: usize,
    },
    Error {
        message: String,
    },
}

impl SessionMessage {
    fn error(message: impl Into<String>) -> Self {
        SessionMessage::Error {
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Episode {
    seed: u64,
    obs: Vec<Vec<f64>>,
    actions: Vec<Action>,
    rewards: Vec<f64>,
    current: Vec<f64>,
    done: bool,
}

/// One interactive recording session.
#[derive(Debug, Clone)]
pub struct Session {
    env: Env,
    next_seed: u64,
    episode: Option<Episode>,
}

impl Session {
    pub fn new(task: TaskId, seed: u64) -> Self {
        Self {
            env: Env::new(task),
            next_seed: seed,
            episode: None,
        }
    }

    pub fn task(&self) -> TaskId {
        self.env.task()
    }

    fn state(&self, reward: f64) -> SessionMessage {
        let ep = self.episode.as_ref().expect("state of a live episode");
        SessionMessage::State {
            ascii: self.env.render_ascii(),
            cells: self.env.render_cells(),
            reward,
            done: ep.done,
            step: ep.actions.len(),
            episode_return: ep.rewards.iter().sum(),
        }
    }

    /// Answers one client message. Server-side message types are rejected.
    pub fn handle(&mut self, msg: SessionMessage) -> SessionMessage {
        match self.try_handle(msg) {
            Ok(reply) => reply,
            Err(e) => SessionMessage::error(e.to_string()),
        }
    }

    fn try_handle(&mut self, msg: SessionMessage) -> Result<SessionMessage> {
        match msg {
            SessionMessage::Reset { seed } => {
                let seed = seed.unwrap_or(self.next_seed);
                self.next_seed = seed.wrapping_add(1);
                let current = self.env.reset(seed)?;
                self.episode = Some(Episode {
                    seed,
                    obs: Vec::new(),
                    actions: Vec::new(),
                    rewards: Vec::new(),
                    current,
                    done: false,
                });
                Ok(self.state(0.0))
            }
            SessionMessage::Action { action } => {
                let ep = self
                    .episode
                    .as_mut()
                    .ok_or_else(|| Error::contract("no episode in progress; send reset first"))?;
                if ep.done {
                    return Err(Error::contract("episode is over; save it or send reset"));
                }
                self.env.action_space().validate(&action)?;
                let step = self.env.step(&action)?;
                ep.obs.push(std::mem::replace(&mut ep.current, step.obs));
                ep.actions.push(action);
                ep.rewards.push(step.reward);
                ep.done = step.done;
                Ok(self.state(step.reward))
            }
            SessionMessage::Save { path } => {
                let ep = self
                    .episode
                    .as_ref()
                    .ok_or_else(|| Error::contract("nothing to save; send reset first"))?;
                if !ep.done {
                    return Err(Error::contract("episode is not finished yet"));
                }
                let traj = Trajectory::new(ep.obs.clone(), ep.actions.clone(), ep.rewards.clone(), Origin::HumanDemo)?;
                let demo = Demo::from_trajectory(&traj, self.task(), ep.seed)?;
                let path = free_path(&path);
                if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir)?;
                }
                demo.save(&path)?;
                Ok(SessionMessage::Saved {
                    path,
                    episode_return: demo.episode_return(),
                    length: demo.steps.len(),
                })
            }
            other => Err(Error::contract(format!(
                "unexpected client message `{}`",
                serde_json::to_value(&other)?["type"].as_str().unwrap_or("?")
            ))),
        }
    }

    /// Text-frame entry point: malformed JSON yields an error reply and
    /// leaves the session untouched.
    pub fn handle_text(&mut self, text: &str) -> String {
        let reply = match serde_json::from_str::<SessionMessage>(text) {
            Ok(msg) => self.handle(msg),
            Err(e) => SessionMessage::error(format!("malformed message: {e}")),
        };
        serde_json::to_string(&reply).expect("session messages serialize")
    }
}

fn run_socket<S: std::io::Read + std::io::Write>(ws: &mut WebSocket<S>, session: &mut Session) -> Result<()> {
    loop {
        let msg = match ws.read() {
            Ok(m) => m,
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(tungstenite::Error::Protocol(_)) => return Ok(()),
            Err(e) => return Err(Error::Io(std::io::Error::other(e))),
        };
        let reply = match msg {
            Message::Text(t) => session.handle_text(t.as_str()),
            Message::Binary(_) => serde_json::to_string(&SessionMessage::error("binary frames are not supported"))?,
            Message::Close(_) => return Ok(()),
            _ => continue,
        };
        if let Err(e) = ws.send(Message::text(reply)) {
            return match e {
                tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed => Ok(()),
                e => Err(Error::Io(std::io::Error::other(e))),
            };
        }
    }
}

/// Accepts connections one after another. Each connection gets a fresh
/// session seeded from `seed`. Returns after `max_sessions` connections
/// when given, otherwise runs forever.
pub fn serve(listener: TcpListener, task: TaskId, seed: u64, max_sessions: Option<usize>) -> Result<()> {
    for (served, stream) in listener.incoming().enumerate() {
        let stream = stream?;
        match tungstenite::accept(stream) {
            Ok(mut ws) => {
                let mut session = Session::new(task, seed);
                if let Err(e) = run_socket(&mut ws, &mut session) {
                    eprintln!("session ended: {e}");
                }
            }
            Err(e) => eprintln!("handshake failed: {e}"),
        }
        if max_sessions.is_some_and(|m| served + 1 >= m) {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::scripted::solve_grid;
    use crate::envs::{GridAction, GridBoxWorld};

    fn reset(s: &mut Session, seed: u64) -> SessionMessage {
        s.handle(SessionMessage::Reset { seed: Some(seed) })
    }

    #[test]
    fn reset_gives_step_zero() {
        let mut s = Session::new(TaskId::OneBoxEasy, 3);
        match reset(&mut s, 3) {
            SessionMessage::State { step, done, reward, .. } => {
                assert_eq!(step, 0);
                assert!(!done);
                assert_eq!(reward, 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn action_before_reset_and_malformed_are_errors() {
        let mut s = Session::new(TaskId::OneBoxEasy, 0);
        assert!(matches!(
            s.handle(SessionMessage::Action { action: Action::Discrete(1) }),
            SessionMessage::Error { .. }
        ));
        let reply = s.handle_text("{not json");
        assert!(reply.contains("\"type\":\"error\""), "{reply}");
        reset(&mut s, 0);
        let reply = s.handle_text(r#"{"type":"action","action":1}"#);
        assert!(reply.contains("\"step\":1"), "{reply}");
    }

    #[test]
    fn solved_episode_saves_a_valid_demo() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Session::new(TaskId::OneBoxEasy, 0);
        reset(&mut s, 11);
        let mut world = GridBoxWorld::new(TaskId::OneBoxEasy.grid_variant().unwrap());
        world.reset(11).unwrap();
        let plan = solve_grid(world.state(), 60).unwrap();
        let path = dir.path().join("demo.jsonl");
        assert!(matches!(s.handle(SessionMessage::Save { path: path.clone() }), SessionMessage::Error { .. }));
        let mut last_step = 0;
        for a in &plan {
            match s.handle(SessionMessage::Action {
                action: Action::Discrete(a.id()),
            }) {
                SessionMessage::State { step, .. } => {
                    assert_eq!(step, last_step + 1);
                    last_step = step;
                }
                other => panic!("{other:?}"),
            }
        }
        let before = s.handle(SessionMessage::Action {
            action: Action::Discrete(GridAction::Noop.id()),
        });
        assert!(matches!(before, SessionMessage::Error { .. }));
        let first = s.handle(SessionMessage::Save { path: path.clone() });
        let second = s.handle(SessionMessage::Save { path: path.clone() });
        let (SessionMessage::Saved { path: p1, episode_return, length }, SessionMessage::Saved { path: p2, .. }) =
            (first, second)
        else {
            panic!("save failed");
        };
        assert_eq!(p1, path);
        assert_ne!(p1, p2);
        assert_eq!(episode_return, 1.0);
        assert_eq!(length, plan.len());
        let demo = Demo::load_for(&p1, TaskId::OneBoxEasy).unwrap();
        assert!(demo.replay().unwrap().matches());
    }
}
