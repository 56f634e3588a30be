use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ddqn::{argmax, td_target, ObsScaler};
use super::replay::ReplayBuffer;
use super::schedule::Epsilon;
use super::TrainConfig;
use crate::env::AvObservation;
use crate::neural::{Adam, AdamConfig, AdamSnapshot, DenseNet, Gradients, NetSnapshot, OutputActivation};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridTransition {
    pub obs: Vec<f64>,
    pub share: usize,
    pub rho: f64,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
}

/// Multi-pass parameterized deep Q agent for one AV: a discrete sharing
/// choice with one continuous offload ratio per choice.
#[derive(Clone, Debug)]
pub struct MpdqnAgent {
    pub q: DenseNet,
    pub q_target: DenseNet,
    pub actor: DenseNet,
    pub actor_target: DenseNet,
    pub q_adam: Adam,
    pub actor_adam: Adam,
    pub epsilon: Epsilon,
    pub lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub scaler: ObsScaler,
    pub replay: ReplayBuffer<HybridTransition>,
}

/// Rows `b * A + a` hold `obs_b ⊕ x_b ⊙ e_a`.
fn multipass_rows(obs: &Array2<f64>, x: &Array2<f64>) -> Array2<f64> {
    let (n, d) = obs.dim();
    let a = x.ncols();
    let mut rows = Array2::zeros((n * a, d + a));
    for b in 0..n {
        for k in 0..a {
            let r = b * a + k;
            rows.slice_mut(s![r, ..d]).assign(&obs.row(b));
            rows[[r, d + k]] = x[[b, k]];
        }
    }
    rows
}

/// `[b, a] = Q_{b*A+a, a}`
fn diagonal(q: &Array2<f64>, actions: usize) -> Array2<f64> {
    let n = q.nrows() / actions;
    Array2::from_shape_fn((n, actions), |(b, a)| q[[b * actions + a, a]])
}

impl MpdqnAgent {
    pub fn new<R: Rng + ?Sized>(
        fixed_dim: usize,
        channel_dim: usize,
        actions: usize,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let d = fixed_dim + channel_dim;
        let mut q_sizes = vec![d + actions];
        q_sizes.extend(&cfg.hidden);
        q_sizes.push(actions);
        let mut a_sizes = vec![d];
        a_sizes.extend(&cfg.hidden);
        a_sizes.push(actions);
        let q = DenseNet::new(&q_sizes, OutputActivation::Identity, rng)?;
        let actor = DenseNet::new(&a_sizes, OutputActivation::Sigmoid, rng)?;
        Ok(Self {
            q_target: q.clone(),
            actor_target: actor.clone(),
            q_adam: Adam::new(&q, AdamConfig::default()),
            actor_adam: Adam::new(&actor, AdamConfig::default()),
            q,
            actor,
            epsilon: Epsilon::new(cfg.eps_start, cfg.eps_decay, cfg.eps_min),
            lr: cfg.lr,
            gamma: cfg.gamma,
            tau: cfg.tau,
            scaler: ObsScaler::new(fixed_dim, channel_dim),
            replay: ReplayBuffer::new(cfg.memory),
        })
    }

    pub fn actions(&self) -> usize {
        self.q.output_dim()
    }

    /// Offload ratio proposed for every discrete action.
    pub fn parameters(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.scaler.check(obs)?;
        self.actor.forward(&self.scaler.scale(obs))
    }

    /// One masked pass per discrete action; `Q_a` only sees `x[a]`.
    pub fn multipass_q(&self, obs: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        self.scaler.check(obs)?;
        if x.len() != self.actions() {
            return Err(Error::Dimension {
                expected: self.actions(),
                got: x.len(),
            });
        }
        let o = Array2::from_shape_vec((1, obs.len()), self.scaler.scale(obs)).expect("row");
        let xs = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
        let q = self.q.forward_batch(&multipass_rows(&o, &xs))?;
        Ok(diagonal(&q, self.actions()).into_raw_vec_and_offset().0)
    }

    pub fn greedy(&self, obs: &[f64]) -> Result<(usize, f64)> {
        let x = self.parameters(obs)?;
        let a = argmax(&self.multipass_q(obs, &x)?);
        Ok((a, x[a]))
    }

    /// ε-greedy hybrid action: exploration draws the discrete choice and the
    /// ratio uniformly.
    pub fn select_hybrid<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(usize, f64)> {
        if rng.random::<f64>() < self.epsilon.value() {
            let a = rng.random_range(0..self.actions());
            Ok((a, rng.random::<f64>()))
        } else {
            self.greedy(obs)
        }
    }

    /// Decentralized execution: greedy hybrid action from the local observation.
    pub fn act(&self, obs: &AvObservation) -> Result<(usize, f64)> {
        let o = &obs.0;
        self.greedy(&[o.fixed.as_slice(), o.channel.as_slice()].concat())
    }

    /// Q regression toward `r + gamma * max_a Q'(s', a, x'_a(s'))`.
    pub fn q_step(&mut self, batch: &[&HybridTransition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        let n = batch.len();
        let a = self.actions();
        let d = self.scaler.dim();
        let xn = self.scaler.batch(batch.iter().map(|t| t.next_obs.as_slice()));
        let pn = self.actor_target.forward_batch(&xn)?;
        let qn = diagonal(&self.q_target.forward_batch(&multipass_rows(&xn, &pn))?, a);

        let x = self.scaler.batch(batch.iter().map(|t| t.obs.as_slice()));
        let mut inputs = Array2::zeros((n, d + a));
        for (i, t) in batch.iter().enumerate() {
            inputs.slice_mut(s![i, ..d]).assign(&x.row(i));
            inputs[[i, d + t.share]] = t.rho;
        }
        let cache = self.q.forward_cached(&inputs)?;
        let q = cache.output();
        let mut grad = Array2::zeros(q.raw_dim());
        let mut loss = 0.0;
        for (i, t) in batch.iter().enumerate() {
            let next_max = qn.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let y = td_target(t.reward, next_max, t.terminal, self.gamma);
            let err = q[[i, t.share]] - y;
            loss += 0.5 * err * err;
            grad[[i, t.share]] = err / n as f64;
        }
        let (g, _) = self.q.backward(&cache, &grad)?;
        self.q_adam.step(&mut self.q, &g, self.lr);
        Ok(loss / n as f64)
    }

    /// `-mean_b sum_a Q(s_b, a, x_a(s_b))` and its gradient with respect to
    /// the actor parameters; the Q network is held fixed.
    pub fn actor_loss_and_grad(&self, obs: &Array2<f64>) -> Result<(f64, Gradients)> {
        let n = obs.nrows();
        let a = self.actions();
        let d = self.scaler.dim();
        let actor_cache = self.actor.forward_cached(obs)?;
        let rows = multipass_rows(obs, actor_cache.output());
        let q_cache = self.q.forward_cached(&rows)?;
        let q = q_cache.output();
        let mut grad = Array2::zeros(q.raw_dim());
        let mut loss = 0.0;
        for b in 0..n {
            for k in 0..a {
                loss -= q[[b * a + k, k]];
                grad[[b * a + k, k]] = -1.0 / n as f64;
            }
        }
        let (_, d_rows) = self.q.backward(&q_cache, &grad)?;
        let dx = Array2::from_shape_fn((n, a), |(b, k)| d_rows[[b * a + k, d + k]]);
        let (g, _) = self.actor.backward(&actor_cache, &dx)?;
        Ok((loss / n as f64, g))
    }

    pub fn actor_step(&mut self, batch: &[&HybridTransition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        let x = self.scaler.batch(batch.iter().map(|t| t.obs.as_slice()));
        let (loss, g) = self.actor_loss_and_grad(&x)?;
        self.actor_adam.step(&mut self.actor, &g, self.lr);
        Ok(loss)
    }

    /// Q step, actor step, then soft updates of both targets.
    pub fn mpdqn_update(&mut self, batch: &[&HybridTransition]) -> Result<(f64, f64)> {
        let q_loss = self.q_step(batch)?;
        let actor_loss = self.actor_step(batch)?;
        self.q_target.soft_update(&self.q, self.tau);
        self.actor_target.soft_update(&self.actor, self.tau);
        Ok((q_loss, actor_loss))
    }

    pub fn snapshot(&self) -> MpdqnSnapshot {
        MpdqnSnapshot {
            q: self.q.snapshot(),
            q_target: self.q_target.snapshot(),
            actor: self.actor.snapshot(),
            actor_target: self.actor_target.snapshot(),
            q_adam: self.q_adam.snapshot(),
            actor_adam: self.actor_adam.snapshot(),
            epsilon: self.epsilon.clone(),
            lr: self.lr,
            gamma: self.gamma,
            tau: self.tau,
            scaler: self.scaler.clone(),
        }
    }

    pub fn from_snapshot(s: &MpdqnSnapshot, memory: usize) -> Result<Self> {
        let q = DenseNet::from_snapshot(&s.q)?;
        let q_target = DenseNet::from_snapshot(&s.q_target)?;
        let actor = DenseNet::from_snapshot(&s.actor)?;
        let actor_target = DenseNet::from_snapshot(&s.actor_target)?;
        let d = s.scaler.dim();
        if q.sizes() != q_target.sizes()
            || actor.sizes() != actor_target.sizes()
            || actor.input_dim() != d
            || q.input_dim() != d + q.output_dim()
            || actor.output_dim() != q.output_dim()
        {
            return Err(Error::Checkpoint("inconsistent MP-DQN agent shapes".into()));
        }
        Ok(Self {
            q_adam: Adam::from_snapshot(&q, &s.q_adam)?,
            actor_adam: Adam::from_snapshot(&actor, &s.actor_adam)?,
            q,
            q_target,
            actor,
            actor_target,
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
pub struct MpdqnSnapshot {
    pub q: NetSnapshot,
    pub q_target: NetSnapshot,
    pub actor: NetSnapshot,
    pub actor_target: NetSnapshot,
    pub q_adam: AdamSnapshot,
    pub actor_adam: AdamSnapshot,
    pub epsilon: Epsilon,
    pub lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub scaler: ObsScaler,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn agent(seed: u64, obs: usize, actions: usize) -> MpdqnAgent {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MpdqnAgent::new(obs, 0, actions, &TrainConfig::default(), &mut rng).unwrap()
    }

    fn random_obs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn multipass_diagonal_equals_single_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for seed in 0..100 {
            let actions = 1 + (seed as usize % 4);
            let ag = agent(seed, 6, actions);
            let obs = random_obs(&mut rng, 6);
            let x: Vec<f64> = (0..actions).map(|_| rng.random::<f64>()).collect();
            let q = ag.multipass_q(&obs, &x).unwrap();
            for a in 0..actions {
                let mut input = obs.clone();
                input.extend((0..actions).map(|k| if k == a { x[a] } else { 0.0 }));
                assert_eq!(q[a], ag.q.forward(&input).unwrap()[a]);
            }
        }
    }

    #[test]
    fn multipass_single_action_is_plain_pass() {
        let ag = agent(1, 3, 1);
        let obs = [0.2, -0.4, 0.9];
        let q = ag.multipass_q(&obs, &[0.3]).unwrap();
        assert_eq!(q, ag.q.forward(&[0.2, -0.4, 0.9, 0.3]).unwrap());
    }

    #[test]
    fn multipass_ignores_other_slots() {
        let ag = agent(2, 4, 3);
        let obs = [0.5, 0.1, -0.3, 0.7];
        let q1 = ag.multipass_q(&obs, &[0.2, 0.4, 0.6]).unwrap();
        let q2 = ag.multipass_q(&obs, &[0.9, 0.4, 0.0]).unwrap();
        assert_eq!(q1[1], q2[1]);
        assert!(ag.multipass_q(&obs, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn greedy_follows_hand_set_q() {
        let mut ag = agent(3, 2, 3);
        ag.epsilon = Epsilon::new(0.0, 1.0, 0.0);
        // Q output = bias only, favoring action 2
        let mut p = vec![0.0; ag.q.num_params()];
        let n = p.len();
        p[n - 3..].copy_from_slice(&[0.1, 0.5, 0.9]);
        ag.q.set_params(&p).unwrap();
        let obs = [0.3, -0.6];
        let x = ag.parameters(&obs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(ag.select_hybrid(&obs, &mut rng).unwrap(), (2, x[2]));
    }

    #[test]
    fn actor_outputs_are_ratios() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ag = agent(4, 5, 3);
        for _ in 0..200 {
            let obs: Vec<f64> = (0..5).map(|_| rng.random_range(-50.0..50.0)).collect();
            assert!(ag.parameters(&obs).unwrap().iter().all(|&r| (0.0..=1.0).contains(&r)));
        }
    }

    #[test]
    fn exploration_ratio_is_uniform() {
        let ag = agent(5, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let mut rhos: Vec<f64> = (0..n).map(|_| ag.select_hybrid(&[0.0, 0.0], &mut rng).unwrap().1).collect();
        rhos.sort_by(f64::total_cmp);
        let d = rhos
            .iter()
            .enumerate()
            .map(|(i, &r)| ((i + 1) as f64 / n as f64 - r).abs().max((r - i as f64 / n as f64).abs()))
            .fold(0.0, f64::max);
        // 1% critical value of the one-sample KS statistic
        assert!(d < 1.628 / (n as f64).sqrt(), "D = {d}");
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ag = agent(6, 3, 2);
        let obs = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let (_, g) = ag.actor_loss_and_grad(&obs).unwrap();
        let analytic: Vec<f64> = g
            .layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied().collect::<Vec<_>>())
            .collect();
        let p = ag.actor.params();
        let mut probe = ag.clone();
        let h = 1e-6;
        for i in 0..p.len() {
            let mut q = p.clone();
            q[i] += h;
            probe.actor.set_params(&q).unwrap();
            let up = probe.actor_loss_and_grad(&obs).unwrap().0;
            q[i] -= 2.0 * h;
            probe.actor.set_params(&q).unwrap();
            let down = probe.actor_loss_and_grad(&obs).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
            assert!(err < 1e-3, "param {i}: fd {fd} analytic {}", analytic[i]);
        }
    }

    #[test]
    fn actor_step_descends_with_frozen_q() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut ag = agent(seed, 4, 3);
            ag.lr = 1e-6;
            let batch: Vec<HybridTransition> = (0..16)
                .map(|_| HybridTransition {
                    obs: random_obs(&mut rng, 4),
                    share: 0,
                    rho: 0.5,
                    reward: 0.0,
                    next_obs: random_obs(&mut rng, 4),
                    terminal: false,
                })
                .collect();
            let refs: Vec<&HybridTransition> = batch.iter().collect();
            let x = ag.scaler.batch(refs.iter().map(|t| t.obs.as_slice()));
            let before = ag.actor_loss_and_grad(&x).unwrap().0;
            ag.actor_step(&refs).unwrap();
            let after = ag.actor_loss_and_grad(&x).unwrap().0;
            assert!(after <= before, "seed {seed}: {before} -> {after}");
        }
    }

    #[test]
    fn zero_discount_targets_rewards() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut cfg = TrainConfig::default();
        cfg.gamma = 0.0;
        cfg.lr = 1e-3;
        let mut ag = MpdqnAgent::new(2, 0, 2, &cfg, &mut rng).unwrap();
        let batch: Vec<HybridTransition> = (0..32)
            .map(|i| HybridTransition {
                obs: vec![1.0, 0.0],
                share: i % 2,
                rho: 0.5,
                reward: if i % 2 == 0 { 2.0 } else { -1.0 },
                next_obs: vec![0.0, 1.0],
                terminal: false,
            })
            .collect();
        let refs: Vec<&HybridTransition> = batch.iter().collect();
        assert!(ag.q_step(&[]).is_err());
        for _ in 0..2000 {
            ag.q_step(&refs).unwrap();
        }
        let q = ag.multipass_q(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((q[0] - 2.0).abs() < 0.05 && (q[1] + 1.0).abs() < 0.05, "{q:?}");
    }
}
