//! Planar two-link arm with unit links. Reward is paid only inside a
//! threshold radius around the target: `T - d` when `d <= T`, else 0.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::StepResult;
use crate::error::{Error, Result};

pub const REACHER_OBS_DIM: usize = 10;
pub const REACHER_STEP_LIMIT: usize = 150;
pub const REACHER_THRESHOLD: f64 = 1.0;

pub const DT: f64 = 0.05;
pub const TORQUE_GAIN: f64 = 10.0;
pub const DAMPING: f64 = 1.0;
pub const MAX_SPEED: f64 = 10.0;
const TARGET_RADIUS: (f64, f64) = (0.5, 1.9);
/// The arm starts at least this far outside the threshold.
const START_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SparsePointReacher {
    angles: [f64; 2],
    speeds: [f64; 2],
    target: [f64; 2],
    threshold: f64,
    step_count: usize,
    done: bool,
    started: bool,
}

impl Default for SparsePointReacher {
    fn default() -> Self {
        Self::new()
    }
}

/// Reward for a tip-to-target distance.
pub fn reacher_reward(d: f64, threshold: f64) -> f64 {
    if d <= threshold {
        threshold - d
    } else {
        0.0
    }
}

pub fn forward_kinematics(angles: [f64; 2]) -> [f64; 2] {
    let [a, b] = angles;
    [a.cos() + (a + b).cos(), a.sin() + (a + b).sin()]
}

impl SparsePointReacher {
    pub fn new() -> Self {
        Self {
            angles: [0.0; 2],
            speeds: [0.0; 2],
            target: [2.0, 0.0],
            threshold: REACHER_THRESHOLD,
            step_count: 0,
            done: false,
            started: false,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn angles(&self) -> [f64; 2] {
        self.angles
    }

    pub fn speeds(&self) -> [f64; 2] {
        self.speeds
    }

    pub fn target(&self) -> [f64; 2] {
        self.target
    }

    pub fn tip(&self) -> [f64; 2] {
        forward_kinematics(self.angles)
    }

    pub fn distance(&self) -> f64 {
        let [x, y] = self.tip();
        (x - self.target[0]).hypot(y - self.target[1])
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Places the arm in an arbitrary state and starts a fresh episode.
    pub fn set_state(&mut self, angles: [f64; 2], speeds: [f64; 2], target: [f64; 2]) -> Result<()> {
        if angles.iter().chain(&speeds).chain(&target).any(|v| !v.is_finite()) {
            return Err(Error::Domain("reacher state must be finite".into()));
        }
        self.angles = angles;
        self.speeds = speeds.map(|w| w.clamp(-MAX_SPEED, MAX_SPEED));
        self.target = target;
        self.step_count = 0;
        self.done = false;
        self.started = true;
        Ok(())
    }

    pub fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let angles = [rng.random_range(-PI..PI), rng.random_range(-PI..PI)];
        let tip = forward_kinematics(angles);
        for _ in 0..1000 {
            let r = rng.random_range(TARGET_RADIUS.0..TARGET_RADIUS.1);
            let a = rng.random_range(-PI..PI);
            let target = [r * a.cos(), r * a.sin()];
            if (tip[0] - target[0]).hypot(tip[1] - target[1]) > self.threshold + START_MARGIN {
                self.set_state(angles, [0.0; 2], target)?;
                return Ok(self.encode_obs());
            }
        }
        Err(Error::config("could not place a reacher target away from the tip"))
    }

    /// Torques are clipped to [-1, 1].
    pub fn step(&mut self, torque: [f64; 2]) -> Result<StepResult> {
        if !self.started {
            return Err(Error::contract("step before reset"));
        }
        if self.done {
            return Err(Error::contract("step after episode end"));
        }
        if torque.iter().any(|t| !t.is_finite()) {
            return Err(Error::Domain("torque must be finite".into()));
        }
        for j in 0..2 {
            let tau = torque[j].clamp(-1.0, 1.0);
            let w = self.speeds[j] + DT * (TORQUE_GAIN * tau - DAMPING * self.speeds[j]);
            self.speeds[j] = w.clamp(-MAX_SPEED, MAX_SPEED);
            self.angles[j] = wrap(self.angles[j] + DT * self.speeds[j]);
        }
        self.step_count += 1;
        self.done = self.step_count >= REACHER_STEP_LIMIT;
        let reward = reacher_reward(self.distance(), self.threshold);
        Ok(StepResult {
            obs: self.encode_obs(),
            reward,
            done: self.done,
            success: reward > 0.0,
        })
    }

    /// `[sin, cos] x2, speeds, target, tip-to-target`, each within [-1, 1].
    pub fn encode_obs(&self) -> Vec<f64> {
        let [a, b] = self.angles;
        let tip = self.tip();
        vec![
            a.sin(),
            a.cos(),
            b.sin(),
            b.cos(),
            self.speeds[0] / MAX_SPEED,
            self.speeds[1] / MAX_SPEED,
            self.target[0] / 2.0,
            self.target[1] / 2.0,
            (self.target[0] - tip[0]) / 4.0,
            (self.target[1] - tip[1]) / 4.0,
        ]
    }

    /// 17×17 sketch: `+` base, `o` tip, `X` target.
    pub fn render_ascii(&self) -> String {
        const W: usize = 17;
        let to_cell = |v: f64| (((v + 2.0) / 4.0 * (W - 1) as f64).round() as isize).clamp(0, W as isize - 1) as usize;
        let mut grid = vec![vec!['.'; W]; W];
        let tip = self.tip();
        grid[to_cell(0.0)][to_cell(0.0)] = '+';
        grid[to_cell(self.target[1])][to_cell(self.target[0])] = 'X';
        grid[to_cell(tip[1])][to_cell(tip[0])] = 'o';
        let mut out: String = grid.iter().rev().map(|r| r.iter().collect::<String>() + "\n").collect();
        out.push_str(&format!("d={:.3} step={}\n", self.distance(), self.step_count));
        out
    }

    pub fn render_cells(&self) -> serde_json::Value {
        json!({
            "kind": "reacher",
            "angles": self.angles,
            "speeds": self.speeds,
            "target": self.target,
            "tip": self.tip(),
            "threshold": self.threshold,
            "distance": self.distance(),
        })
    }
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}
