use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::replay::ReplayBuffer;
use super::schedule::{Epsilon, RunningNorm};
use super::TrainConfig;
use crate::env::RicsObservation;
use crate::neural::{Adam, AdamConfig, AdamSnapshot, DenseNet, NetSnapshot, OutputActivation};
use crate::{Error, Result};

/// Passes the fixed part of an observation through and z-scores the
/// channel part.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsScaler {
    pub fixed_dim: usize,
    pub norm: RunningNorm,
}

impl ObsScaler {
    pub fn new(fixed_dim: usize, channel_dim: usize) -> Self {
        Self {
            fixed_dim,
            norm: RunningNorm::new(channel_dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.fixed_dim + self.norm.dim()
    }

    pub fn observe(&mut self, raw: &[f64]) {
        self.norm.update(&raw[self.fixed_dim..]);
    }

    pub fn scale_into(&self, raw: &[f64], out: &mut [f64]) {
        out[..self.fixed_dim].copy_from_slice(&raw[..self.fixed_dim]);
        self.norm.normalize_into(&raw[self.fixed_dim..], &mut out[self.fixed_dim..]);
    }

    pub fn scale(&self, raw: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; raw.len()];
        self.scale_into(raw, &mut out);
        out
    }

    pub fn check(&self, raw: &[f64]) -> Result<()> {
        if raw.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: raw.len(),
            });
        }
        Ok(())
    }

    /// Scaled observations stacked as rows.
    pub fn batch<'a>(&self, rows: impl ExactSizeIterator<Item = &'a [f64]>) -> Array2<f64> {
        let n = rows.len();
        let mut m = Array2::zeros((n, self.dim()));
        for (mut dst, raw) in m.rows_mut().into_iter().zip(rows) {
            self.scale_into(raw, dst.as_slice_mut().expect("standard layout"));
        }
        m
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `r + gamma * next_max`, or `r` on terminal transitions.
pub fn td_target(reward: f64, next_max: f64, terminal: bool, gamma: f64) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * next_max
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTransition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
}

/// Decaying-ε deep Q agent for one RICS sub-block.
#[derive(Clone, Debug)]
pub struct DdqnAgent {
    pub online: DenseNet,
    pub target: DenseNet,
    pub adam: Adam,
    pub epsilon: Epsilon,
    pub lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub scaler: ObsScaler,
    pub replay: ReplayBuffer<DiscreteTransition>,
}

impl DdqnAgent {
    pub fn new<R: Rng + ?Sized>(
        fixed_dim: usize,
        channel_dim: usize,
        actions: usize,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![fixed_dim + channel_dim];
        sizes.extend(&cfg.hidden);
        sizes.push(actions);
        let online = DenseNet::new(&sizes, OutputActivation::Identity, rng)?;
        Ok(Self {
            target: online.clone(),
            adam: Adam::new(&online, AdamConfig::default()),
            online,
            epsilon: Epsilon::new(cfg.eps_start, cfg.eps_decay, cfg.eps_min),
            lr: cfg.lr,
            gamma: cfg.gamma,
            tau: cfg.tau,
            scaler: ObsScaler::new(fixed_dim, channel_dim),
            replay: ReplayBuffer::new(cfg.memory),
        })
    }

    pub fn actions(&self) -> usize {
        self.online.output_dim()
    }

    pub fn q_values(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.scaler.check(obs)?;
        self.online.forward(&self.scaler.scale(obs))
    }

    /// Highest-valued action; ties go to the lowest index.
    pub fn greedy(&self, obs: &[f64]) -> Result<usize> {
        Ok(argmax(&self.q_values(obs)?))
    }

    /// ε-greedy choice at the current exploration rate.
    pub fn select_discrete<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<usize> {
        if rng.random::<f64>() < self.epsilon.value() {
            Ok(rng.random_range(0..self.actions()))
        } else {
            self.greedy(obs)
        }
    }

    /// Decentralized execution: greedy action from the local observation.
    pub fn act(&self, obs: &RicsObservation) -> Result<usize> {
        let o = &obs.0;
        self.greedy(&[o.fixed.as_slice(), o.channel.as_slice()].concat())
    }

    /// One Adam step on the mean squared TD error, then a soft target update.
    pub fn ddqn_update(&mut self, batch: &[&DiscreteTransition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        let n = batch.len();
        let x = self.scaler.batch(batch.iter().map(|t| t.obs.as_slice()));
        let xn = self.scaler.batch(batch.iter().map(|t| t.next_obs.as_slice()));
        let q_next = self.target.forward_batch(&xn)?;
        let cache = self.online.forward_cached(&x)?;
        let q = cache.output();
        let mut grad = Array2::zeros(q.raw_dim());
        let mut loss = 0.0;
        for (i, t) in batch.iter().enumerate() {
            let row = q_next.row(i);
            let next_max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let y = td_target(t.reward, next_max, t.terminal, self.gamma);
            let err = q[[i, t.action]] - y;
            loss += err * err;
            grad[[i, t.action]] = 2.0 * err / n as f64;
        }
        let (g, _) = self.online.backward(&cache, &grad)?;
        self.adam.step(&mut self.online, &g, self.lr);
        self.target.soft_update(&self.online, self.tau);
        Ok(loss / n as f64)
    }

    pub fn snapshot(&self) -> DdqnSnapshot {
        DdqnSnapshot {
            online: self.online.snapshot(),
            target: self.target.snapshot(),
            adam: self.adam.snapshot(),
            epsilon: self.epsilon.clone(),
            lr: self.lr,
            gamma: self.gamma,
            tau: self.tau,
            scaler: self.scaler.clone(),
        }
    }

    pub fn from_snapshot(s: &DdqnSnapshot, memory: usize) -> Result<Self> {
        let online = DenseNet::from_snapshot(&s.online)?;
        let target = DenseNet::from_snapshot(&s.target)?;
        if online.sizes() != target.sizes() || online.input_dim() != s.scaler.dim() {
            return Err(Error::Checkpoint("inconsistent DDQN agent shapes".into()));
        }
        Ok(Self {
            adam: Adam::from_snapshot(&online, &s.adam)?,
            online,
            target,
            epsilon: s.epsilon.clone(),
            lr: s.lr,
            gamma: s.gamma,
            tau: s.tau,
            scaler: s.scaler.clone(),
            replay: ReplayBuffer::new(memory),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DdqnSnapshot {
    pub online: NetSnapshot,
    pub target: NetSnapshot,
    pub adam: AdamSnapshot,
    pub epsilon: Epsilon,
    pub lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub scaler: ObsScaler,
}
