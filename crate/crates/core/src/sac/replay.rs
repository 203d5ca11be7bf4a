//! Replay storage with optional proportional prioritization.

use crate::error::{Error, Result};
use crate::nn::io_util::{put_f64s, Cursor};
use crate::seed::SimRng;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    /// Action in the policy's unit box.
    pub action: [f64; 2],
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// True only for terminal (accident) transitions; time-outs bootstrap.
    pub done: bool,
}

/// Binary sum tree over `capacity` leaves. Parents are recomputed from
/// their children on every write, so sums never drift.
#[derive(Debug, Clone, PartialEq)]
pub struct SumTree {
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            nodes: vec![0.0; 2 * leaves],
        }
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn set(&mut self, i: usize, value: f64) {
        let mut k = self.leaves + i;
        self.nodes[k] = value;
        while k > 1 {
            k /= 2;
            self.nodes[k] = self.nodes[2 * k] + self.nodes[2 * k + 1];
        }
    }

    /// Leaf whose cumulative interval contains `mass`, `0 ≤ mass < total`.
    pub fn find(&self, mut mass: f64) -> usize {
        let mut k = 1;
        while k < self.leaves {
            let left = self.nodes[2 * k];
            if mass < left || self.nodes[2 * k + 1] <= 0.0 {
                k *= 2;
            } else {
                mass -= left;
                k = 2 * k + 1;
            }
        }
        k - self.leaves
    }

    fn grow(&mut self, capacity: usize) {
        if capacity <= self.leaves {
            return;
        }
        let mut bigger = SumTree::new(capacity);
        for i in 0..self.leaves {
            bigger.set(i, self.get(i));
        }
        *self = bigger;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerConfig {
    pub alpha: f64,
    pub beta: f64,
    pub eps: f64,
}

impl Default for PerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta: 0.4,
            eps: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub dones: Vec<f64>,
    /// Importance weights; all 1 in uniform mode.
    pub weights: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Ring buffer stored column-wise. Memory grows with use up to `capacity`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    len: usize,
    next: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_obs: Vec<f64>,
    dones: Vec<f64>,
    per: Option<(PerConfig, SumTree, f64)>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, per: Option<PerConfig>) -> Self {
        Self {
            capacity: capacity.max(1),
            obs_dim,
            len: 0,
            next: 0,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            dones: Vec::new(),
            per: per.map(|c| (c, SumTree::new(1024.min(capacity.max(1))), 1.0)),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_prioritized(&self) -> bool {
        self.per.is_some()
    }

    pub fn clear(&mut self) {
        let per = self.per.as_ref().map(|(c, _, _)| *c);
        *self = Self::new(self.capacity, self.obs_dim, per);
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.obs.len() != self.obs_dim || t.next_obs.len() != self.obs_dim {
            return Err(Error::Shape(format!("transition obs dims {} / {}, buffer expects {}", t.obs.len(), t.next_obs.len(), self.obs_dim)));
        }
        let d = self.obs_dim;
        let i = self.next;
        if i == self.rewards.len() {
            self.obs.extend_from_slice(&t.obs);
            self.next_obs.extend_from_slice(&t.next_obs);
            self.actions.extend_from_slice(&t.action);
            self.rewards.push(t.reward);
            self.dones.push(t.done as u8 as f64);
        } else {
            self.obs[i * d..(i + 1) * d].copy_from_slice(&t.obs);
            self.next_obs[i * d..(i + 1) * d].copy_from_slice(&t.next_obs);
            self.actions[2 * i..2 * i + 2].copy_from_slice(&t.action);
            self.rewards[i] = t.reward;
            self.dones[i] = t.done as u8 as f64;
        }
        if let Some((_, tree, max_p)) = &mut self.per {
            tree.grow(i + 1);
            // New transitions get the largest priority seen so far.
            tree.set(i, *max_p);
        }
        self.next = (i + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        Ok(())
    }

    pub fn get(&self, i: usize) -> Transition {
        let d = self.obs_dim;
        Transition {
            obs: self.obs[i * d..(i + 1) * d].to_vec(),
            action: [self.actions[2 * i], self.actions[2 * i + 1]],
            reward: self.rewards[i],
            next_obs: self.next_obs[i * d..(i + 1) * d].to_vec(),
            done: self.dones[i] != 0.0,
        }
    }

    /// Sampling probability of slot `i` (`p_i^α / Σ p^α`, or `1/N`).
    pub fn probability(&self, i: usize) -> f64 {
        match &self.per {
            Some((_, tree, _)) => tree.get(i) / tree.total(),
            None => 1.0 / self.len as f64,
        }
    }

    pub fn sample(&self, k: usize, rng: &mut SimRng) -> Result<Batch> {
        if self.len < k || k == 0 {
            return Err(Error::Underfilled { have: self.len, want: k });
        }
        let mut indices = Vec::with_capacity(k);
        let mut weights = Vec::with_capacity(k);
        match &self.per {
            None => {
                for _ in 0..k {
                    indices.push(rng.random_range(0..self.len));
                    weights.push(1.0);
                }
            }
            Some((cfg, tree, _)) => {
                let total = tree.total();
                for _ in 0..k {
                    let i = tree.find(rng.random::<f64>() * total).min(self.len - 1);
                    indices.push(i);
                    let p = tree.get(i) / total;
                    weights.push((self.len as f64 * p).powf(-cfg.beta));
                }
                let max = weights.iter().cloned().fold(0.0, f64::max);
                for w in &mut weights {
                    *w /= max;
                }
            }
        }
        let d = self.obs_dim;
        let mut b = Batch {
            obs: Vec::with_capacity(k * d),
            actions: Vec::with_capacity(2 * k),
            rewards: Vec::with_capacity(k),
            next_obs: Vec::with_capacity(k * d),
            dones: Vec::with_capacity(k),
            indices,
            weights,
        };
        for &i in &b.indices {
            b.obs.extend_from_slice(&self.obs[i * d..(i + 1) * d]);
            b.next_obs.extend_from_slice(&self.next_obs[i * d..(i + 1) * d]);
            b.actions.extend_from_slice(&self.actions[2 * i..2 * i + 2]);
            b.rewards.push(self.rewards[i]);
            b.dones.push(self.dones[i]);
        }
        Ok(b)
    }

    /// Sets priorities to `(|δ| + ε)^α`; a no-op in uniform mode.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) {
        if let Some((cfg, tree, max_p)) = &mut self.per {
            for (&i, &d) in indices.iter().zip(td_errors) {
                let p = (d.abs() + cfg.eps).powf(cfg.alpha);
                tree.set(i, p);
                if p > *max_p {
                    *max_p = p;
                }
            }
        }
    }

    pub fn set_priority(&mut self, i: usize, priority: f64) {
        if let Some((cfg, tree, max_p)) = &mut self.per {
            let p = priority.powf(cfg.alpha);
            tree.set(i, p);
            *max_p = max_p.max(p);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"CLRB");
        out.extend_from_slice(&1u32.to_le_bytes());
        for v in [self.capacity, self.obs_dim, self.len, self.next] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        put_f64s(&mut out, &self.obs);
        put_f64s(&mut out, &self.actions);
        put_f64s(&mut out, &self.rewards);
        put_f64s(&mut out, &self.next_obs);
        put_f64s(&mut out, &self.dones);
        match &self.per {
            None => out.push(0),
            Some((cfg, tree, max_p)) => {
                out.push(1);
                put_f64s(&mut out, &[cfg.alpha, cfg.beta, cfg.eps, *max_p]);
                put_f64s(&mut out, &tree.nodes);
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(buf);
        if c.take(4)? != b"CLRB" {
            return Err(Error::Corrupt("not a replay buffer file".into()));
        }
        let version = c.u32()?;
        if version != 1 {
            return Err(Error::Version { found: version, expected: 1 });
        }
        let capacity = c.u64()? as usize;
        let obs_dim = c.u64()? as usize;
        let len = c.u64()? as usize;
        let next = c.u64()? as usize;
        let obs = c.f64s()?;
        let actions = c.f64s()?;
        let rewards = c.f64s()?;
        let next_obs = c.f64s()?;
        let dones = c.f64s()?;
        let stored = rewards.len();
        if obs.len() != stored * obs_dim || next_obs.len() != stored * obs_dim || actions.len() != 2 * stored || dones.len() != stored || len > stored || next > stored {
            return Err(Error::Shape("replay buffer columns disagree".into()));
        }
        let per = match c.u8()? {
            0 => None,
            1 => {
                let h = c.f64s()?;
                let nodes = c.f64s()?;
                if h.len() != 4 || nodes.len() < 2 || !nodes.len().is_power_of_two() {
                    return Err(Error::Shape("bad priority tree".into()));
                }
                let tree = SumTree { leaves: nodes.len() / 2, nodes };
                Some((PerConfig { alpha: h[0], beta: h[1], eps: h[2] }, tree, h[3]))
            }
            _ => return Err(Error::Corrupt("bad priority flag".into())),
        };
        Ok(Self { capacity, obs_dim, len, next, obs, actions, rewards, next_obs, dones, per })
    }
}
