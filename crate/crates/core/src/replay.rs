//! Bounded replay buffer of masked transitions.

use rand::Rng;

use crate::rng::RunRng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn index(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Continuous(_) => None,
        }
    }

    pub fn vector(&self) -> Option<&[f64]> {
        match self {
            Action::Discrete(_) => None,
            Action::Continuous(v) => Some(v),
        }
    }
}

/// A transition as produced by the environment loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Action,
    pub r: f64,
    pub s_next: Vec<f64>,
    /// True termination. Time-limit truncation is stored as `false`.
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedTransition {
    pub s: Vec<f64>,
    pub a: Action,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
    /// `mask[j]` says whether ensemble member `j` trains on this transition.
    pub mask: Vec<bool>,
}

/// Ring buffer with FIFO eviction and uniform sampling with replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    storage: Vec<MaskedTransition>,
    capacity: usize,
    inserted: u64,
    rng: RunRng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, rng: RunRng) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        Ok(Self {
            storage: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            inserted: 0,
            rng,
        })
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of transitions pushed over the buffer's lifetime.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    /// Stores `t` with a fresh bootstrap mask of `n` Bernoulli(`p_m`) draws.
    pub fn push(&mut self, t: Transition, p_m: f64, n: usize) -> Result<()> {
        if !(p_m > 0.0 && p_m <= 1.0) {
            return Err(Error::config(format!("mask probability must lie in (0, 1], got {p_m}")));
        }
        if n == 0 {
            return Err(Error::config("ensemble size must be positive"));
        }
        if t.s.len() != t.s_next.len() {
            return Err(Error::config("state and next-state dimensions differ"));
        }
        if let Some(first) = self.storage.first() {
            if first.s.len() != t.s.len() || first.mask.len() != n {
                return Err(Error::config("transition shape differs from stored transitions"));
            }
        }
        let mask = (0..n).map(|_| p_m >= 1.0 || self.rng.gen::<f64>() < p_m).collect();
        let stored = MaskedTransition {
            s: t.s,
            a: t.a,
            r: t.r,
            s_next: t.s_next,
            done: t.done,
            mask,
        };
        if self.storage.len() < self.capacity {
            self.storage.push(stored);
        } else {
            let slot = (self.inserted % self.capacity as u64) as usize;
            self.storage[slot] = stored;
        }
        self.inserted += 1;
        Ok(())
    }

    /// Transitions in insertion order, oldest first.
    pub fn iter_ordered(&self) -> impl Iterator<Item = &MaskedTransition> {
        let split = if self.storage.len() < self.capacity {
            0
        } else {
            (self.inserted % self.capacity as u64) as usize
        };
        self.storage[split..].iter().chain(self.storage[..split].iter())
    }

    /// `k` transitions drawn uniformly with replacement, or `None` when empty.
    pub fn sample(&mut self, k: usize) -> Option<Vec<&MaskedTransition>> {
        if self.storage.is_empty() {
            return None;
        }
        let n = self.storage.len();
        let idx: Vec<usize> = (0..k).map(|_| self.rng.gen_range(0..n)).collect();
        Some(idx.into_iter().map(|i| &self.storage[i]).collect())
    }
}

/// Positions in `batch` whose mask admits member `j`.
pub fn mask_indices(batch: &[&MaskedTransition], j: usize) -> Vec<usize> {
    batch
        .iter()
        .enumerate()
        .filter(|(_, t)| t.mask.get(j).copied().unwrap_or(false))
        .map(|(i, _)| i)
        .collect()
}

/// The sub-batch member `j` trains on.
pub fn apply_mask<'a>(batch: &[&'a MaskedTransition], j: usize) -> Vec<&'a MaskedTransition> {
    mask_indices(batch, j).into_iter().map(|i| batch[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn tr(x: f64) -> Transition {
        Transition {
            s: vec![x],
            a: Action::Discrete(0),
            r: x,
            s_next: vec![x + 1.0],
            done: false,
        }
    }

    fn buffer(cap: usize, seed: u64) -> ReplayBuffer {
        ReplayBuffer::new(cap, rng_for(seed, 3, 0)).unwrap()
    }

    #[test]
    fn full_probability_masks_are_all_true() {
        let mut b = buffer(10, 1);
        b.push(tr(0.0), 1.0, 4).unwrap();
        assert_eq!(b.sample(1).unwrap()[0].mask, vec![true; 4]);
    }

    #[test]
    fn mask_rate_matches_probability() {
        let mut b = buffer(10_000, 2);
        for i in 0..10_000 {
            b.push(tr(i as f64), 0.5, 5).unwrap();
        }
        for j in 0..5 {
            let rate = b.iter_ordered().filter(|t| t.mask[j]).count() as f64 / 10_000.0;
            assert!((rate - 0.5).abs() <= 0.02, "slot {j}: {rate}");
        }
    }

    #[test]
    fn fifo_eviction() {
        let mut b = buffer(2, 3);
        for i in 0..3 {
            b.push(tr(i as f64), 1.0, 1).unwrap();
        }
        assert_eq!(b.len(), 2);
        let order: Vec<f64> = b.iter_ordered().map(|t| t.r).collect();
        assert_eq!(order, vec![1.0, 2.0]);
    }

    #[test]
    fn single_transition_is_repeated() {
        let mut b = buffer(5, 4);
        assert!(b.sample(4).is_none());
        b.push(tr(7.0), 1.0, 1).unwrap();
        let s = b.sample(4).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.iter().all(|t| t.r == 7.0));
    }

    #[test]
    fn sampling_is_deterministic() {
        let draw = || {
            let mut b = buffer(100, 5);
            for i in 0..50 {
                b.push(tr(i as f64), 0.7, 3).unwrap();
            }
            let mut out = Vec::new();
            for _ in 0..10 {
                out.extend(b.sample(8).unwrap().iter().map(|t| (t.r, t.mask.clone())));
            }
            out
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn sampling_is_uniform() {
        let mut b = buffer(10, 6);
        for i in 0..10 {
            b.push(tr(i as f64), 1.0, 1).unwrap();
        }
        let mut counts = [0usize; 10];
        for t in b.sample(10_000).unwrap() {
            counts[t.r as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / 10_000.0 - 0.1).abs() <= 0.01, "{counts:?}");
        }
    }

    #[test]
    fn masks_never_change() {
        let mut b = buffer(4, 7);
        for i in 0..4 {
            b.push(tr(i as f64), 0.5, 6).unwrap();
        }
        let first: Vec<Vec<bool>> = b.iter_ordered().map(|t| t.mask.clone()).collect();
        for _ in 0..100 {
            for t in b.sample(4).unwrap() {
                assert_eq!(t.mask, first[t.r as usize]);
            }
        }
    }

    #[test]
    fn mask_filtering() {
        let mk = |m: Vec<bool>, r: f64| MaskedTransition {
            s: vec![0.0],
            a: Action::Discrete(0),
            r,
            s_next: vec![0.0],
            done: false,
            mask: m,
        };
        let ts = [
            mk(vec![true, false], 0.0),
            mk(vec![false, false], 1.0),
            mk(vec![true, false], 2.0),
        ];
        let batch: Vec<&MaskedTransition> = ts.iter().collect();
        assert_eq!(mask_indices(&batch, 0), vec![0, 2]);
        assert!(apply_mask(&batch, 1).is_empty());
        let all: Vec<MaskedTransition> = (0..3).map(|i| mk(vec![true], i as f64)).collect();
        let all_refs: Vec<&MaskedTransition> = all.iter().collect();
        assert_eq!(apply_mask(&all_refs, 0), all_refs);
    }

    #[test]
    fn rejects_bad_probability() {
        let mut b = buffer(2, 8);
        assert!(b.push(tr(0.0), 0.0, 1).unwrap_err().is_config());
        assert!(b.push(tr(0.0), 1.5, 1).unwrap_err().is_config());
    }
}
