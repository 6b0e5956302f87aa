use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Origin, Trajectory};
use crate::error::{Error, Result};

/// Added after the minimum shift so tied priorities stay sampleable.
pub const PRIORITY_EPS: f64 = 1e-6;

/// FIFO buffer of successful episodes. Demonstrations are pinned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBuffer {
    items: VecDeque<Trajectory>,
    capacity: usize,
}

impl RewardBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: VecDeque::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn demo_count(&self) -> usize {
        self.items.iter().filter(|t| t.origin == Origin::HumanDemo).count()
    }

    pub fn get(&self, i: usize) -> Option<&Trajectory> {
        self.items.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.items.iter()
    }

    /// Appends, evicting the oldest non-demo item when full.
    pub fn push(&mut self, traj: Trajectory) -> Option<Trajectory> {
        let mut evicted = None;
        if self.items.len() >= self.capacity {
            match self.items.iter().position(|t| t.origin != Origin::HumanDemo) {
                Some(k) => evicted = self.items.remove(k),
                None => return Some(traj),
            }
        }
        self.items.push_back(traj);
        evicted
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        if self.items.is_empty() {
            return Err(Error::contract("sampling from an empty reward buffer"));
        }
        Ok(rng.random_range(0..self.items.len()))
    }
}

pub fn sample_reward_traj<'a, R: Rng + ?Sized>(buf: &'a RewardBuffer, rng: &mut R) -> Result<&'a Trajectory> {
    let i = buf.sample(rng)?;
    Ok(&buf.items[i])
}

#[derive(Debug, Clone, PartialEq)]
pub enum ValueOffer {
    Inserted,
    Replaced(Trajectory),
    Rejected,
}

/// Unsuccessful episodes, sampled with probability growing in their max
/// value estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueBuffer {
    items: Vec<Trajectory>,
    capacity: usize,
    alpha: f64,
    shift: bool,
}

impl ValueBuffer {
    pub fn new(capacity: usize, alpha: f64, shift: bool) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::config(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self {
            items: Vec::new(),
            capacity,
            alpha,
            shift,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Trajectory> {
        self.items.get(i)
    }

    pub fn get_mut(&mut self, i: usize) -> Option<&mut Trajectory> {
        self.items.get_mut(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trajectory> {
        self.items.iter()
    }

    fn argmin(&self) -> Option<usize> {
        self.items
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.priority.total_cmp(&b.1.priority))
            .map(|(i, _)| i)
    }

    /// Inserts below capacity; when full, replaces the minimum only if
    /// `traj` has a strictly higher priority.
    pub fn offer(&mut self, traj: Trajectory) -> ValueOffer {
        if self.items.len() < self.capacity {
            self.items.push(traj);
            return ValueOffer::Inserted;
        }
        match self.argmin() {
            Some(k) if traj.priority > self.items[k].priority => {
                ValueOffer::Replaced(std::mem::replace(&mut self.items[k], traj))
            }
            _ => ValueOffer::Rejected,
        }
    }

    /// Shrinks (or grows) capacity, dropping the lowest priorities first.
    pub fn set_capacity(&mut self, capacity: usize) -> Vec<Trajectory> {
        self.capacity = capacity;
        let mut dropped = Vec::new();
        while self.items.len() > capacity {
            let k = self.argmin().expect("non-empty");
            dropped.push(self.items.swap_remove(k));
        }
        dropped
    }

    /// Sampling distribution over items.
    pub fn probabilities(&self) -> Vec<f64> {
        priority_probabilities(
            &self.items.iter().map(|t| t.priority).collect::<Vec<_>>(),
            self.alpha,
            self.shift,
        )
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        if self.items.is_empty() {
            return Err(Error::contract("sampling from an empty value buffer"));
        }
        let probs = self.probabilities();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return Ok(i);
            }
        }
        Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1))
    }
}

/// `w_i ∝ (p_i - min p + eps)^alpha` (or `p_i^alpha` without the shift),
/// normalized in log space so large `alpha` cannot overflow.
pub fn priority_probabilities(priorities: &[f64], alpha: f64, shift: bool) -> Vec<f64> {
    if priorities.is_empty() {
        return Vec::new();
    }
    let min = priorities.iter().copied().fold(f64::INFINITY, f64::min);
    let logw: Vec<f64> = priorities
        .iter()
        .map(|&p| {
            let base = if shift { p - min + PRIORITY_EPS } else { p.max(0.0) };
            alpha * base.ln()
        })
        .collect();
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return vec![1.0 / priorities.len() as f64; priorities.len()];
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

pub fn sample_value_traj<'a, R: Rng + ?Sized>(buf: &'a ValueBuffer, rng: &mut R) -> Result<&'a Trajectory> {
    let i = buf.sample(rng)?;
    Ok(&buf.items[i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Action;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn item(id: u64, priority: f64, origin: Origin) -> Trajectory {
        let mut t = Trajectory::new(vec![vec![0.0]], vec![Action::Discrete(0)], vec![1.0], origin).unwrap();
        t.id = id;
        t.priority = priority;
        t
    }

    #[test]
    fn shifted_two_items() {
        let p = priority_probabilities(&[3.0, 1.0], 1.0, true);
        assert!(p[0] > 1.0 - 1e-6);
    }

    #[test]
    fn unshifted_rational_case() {
        let p = priority_probabilities(&[2.0, 1.0], 10.0, false);
        assert!((p[0] - 1024.0 / 1025.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 1025.0).abs() < 1e-15);
    }

    #[test]
    fn equal_priorities_uniform() {
        for shift in [true, false] {
            let p = priority_probabilities(&[0.7; 4], 10.0, shift);
            for x in p {
                assert!((x - 0.25).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn uniform_reward_sampling() {
        let mut buf = RewardBuffer::new(4);
        buf.push(item(1, 0.0, Origin::HumanDemo));
        buf.push(item(2, 0.0, Origin::SelfSuccess));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hits = (0..10_000).filter(|_| buf.sample(&mut rng).unwrap() == 0).count();
        assert!((hits as f64 / 10_000.0 - 0.5).abs() < 0.02);
        assert_eq!(sample_reward_traj(&RewardBuffer::new(1), &mut rng).map(|t| t.id).ok(), None);
    }

    #[test]
    fn demo_is_pinned() {
        let mut buf = RewardBuffer::new(2);
        buf.push(item(1, 0.0, Origin::HumanDemo));
        buf.push(item(2, 0.0, Origin::SelfSuccess));
        let out = buf.push(item(3, 0.0, Origin::SelfSuccess)).unwrap();
        assert_eq!(out.id, 2);
        assert_eq!(buf.iter().map(|t| t.id).collect::<Vec<_>>(), vec![1, 3]);
    }

    #[test]
    fn shrink_drops_lowest() {
        let mut buf = ValueBuffer::new(3, 10.0, true).unwrap();
        for (id, p) in [(1, 0.3), (2, 0.1), (3, 0.2)] {
            buf.offer(item(id, p, Origin::SelfUnsuccessful));
        }
        let dropped = buf.set_capacity(1);
        assert_eq!(dropped.iter().map(|t| t.id).collect::<Vec<_>>(), vec![2, 3]);
        assert_eq!(buf.get(0).unwrap().id, 1);
    }

    #[test]
    fn empty_value_buffer_errors() {
        let buf = ValueBuffer::new(3, 10.0, true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_value_traj(&buf, &mut rng).is_err());
        assert!(ValueBuffer::new(3, 0.0, true).is_err());
    }
}
