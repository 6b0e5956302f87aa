use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    FromDR,
    FromDV,
    FromEnv,
}

/// Source probabilities and buffer sizes. Each new success while the value
/// buffer still has room moves `phi_0 / dv_cap_0` of probability from `phi`
/// to `rho` and one slot from the value buffer to the reward buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayScheduler {
    pub rho: f64,
    pub phi: f64,
    pub rho_0: f64,
    pub phi_0: f64,
    pub dv_cap_0: usize,
    pub dv_cap: usize,
    pub dr_size: usize,
}

impl ReplayScheduler {
    /// `demos` reward-buffer slots are taken by demonstrations at the start.
    pub fn new(rho: f64, phi: f64, dv_cap_0: usize, demos: usize) -> Result<Self> {
        for (name, v) in [("rho", rho), ("phi", phi)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if rho + phi > 1.0 + 1e-12 {
            return Err(Error::config(format!("rho + phi must not exceed 1, got {}", rho + phi)));
        }
        Ok(Self {
            rho,
            phi,
            rho_0: rho,
            phi_0: phi,
            dv_cap_0,
            dv_cap: dv_cap_0,
            dr_size: demos,
        })
    }

    /// `|D|`: reward and value slots together.
    pub fn total(&self) -> usize {
        self.dv_cap + self.dr_size
    }
}

/// One uniform draw picks the source; an empty buffer hands its share to
/// the environment.
pub fn select_source<R: Rng + ?Sized>(sched: &ReplayScheduler, dr_empty: bool, dv_empty: bool, rng: &mut R) -> Source {
    let u: f64 = rng.random();
    if u < sched.rho {
        if dr_empty {
            Source::FromEnv
        } else {
            Source::FromDR
        }
    } else if u < sched.rho + sched.phi {
        if dv_empty {
            Source::FromEnv
        } else {
            Source::FromDV
        }
    } else {
        Source::FromEnv
    }
}

/// Applies one annealing step if the value buffer still has capacity.
/// Returns whether it fired.
pub fn anneal(sched: &mut ReplayScheduler) -> bool {
    if sched.dv_cap == 0 {
        return false;
    }
    let step = sched.phi_0 / sched.dv_cap_0 as f64;
    sched.rho += step;
    sched.phi -= step;
    sched.dv_cap -= 1;
    sched.dr_size += 1;
    let ceiling = sched.rho_0 + sched.phi_0;
    if sched.dv_cap == 0 {
        sched.phi = 0.0;
        sched.rho = ceiling;
    } else {
        sched.phi = sched.phi.max(0.0);
        sched.rho = sched.rho.min(ceiling);
    }
    true
}
