use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ddqn::DiscreteTransition;
use super::mpdqn::HybridTransition;
use super::schedule::decay_lr;
use super::team::{flat, Team, TeamPolicy};
use super::TrainConfig;
use crate::env::{self, AvAction, CellAction, EnvConfig, JointAction, Observations, RewardBreakdown, TrajectoryRow};
use crate::phy::{self, BlockPhases, RicsAction};
use crate::scenario::{self, streams};
use crate::{Error, Result};

/// Seed of the environment for training episode `e`.
pub fn episode_seed(seed: u64, e: usize) -> u64 {
    scenario::stream_rng(seed, streams::EPISODES + e as u64).next_u64()
}

/// Seed of the environment for evaluation episode `e`.
pub fn eval_seed(seed: u64, e: usize) -> u64 {
    scenario::stream_rng(seed, streams::EVALUATION + e as u64).next_u64()
}

/// One row of the training metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub part1_mean: f64,
    pub part2_mean: f64,
    pub penalty_rate: f64,
    pub v2v_margin_mean: f64,
    pub epsilon: f64,
    pub lr: f64,
}

#[derive(Default)]
struct EpisodeAccumulator {
    rewards: Vec<f64>,
    part1: f64,
    part2: f64,
    penalties: usize,
    margin: f64,
}

impl EpisodeAccumulator {
    fn push(&mut self, b: &RewardBreakdown, threshold: f64) {
        self.rewards.push(b.reward);
        self.part1 += b.part1;
        self.part2 += b.part2;
        self.penalties += b.penalized as usize;
        let margins: Vec<f64> = b
            .diagnostics
            .v2v_mean_sinr
            .iter()
            .flatten()
            .map(|g| g - threshold)
            .collect();
        if !margins.is_empty() {
            self.margin += margins.iter().sum::<f64>() / margins.len() as f64;
        }
    }

    fn finish(self, episode: usize, epsilon: f64, lr: f64) -> EpisodeMetrics {
        let n = self.rewards.len().max(1) as f64;
        let mean = self.rewards.iter().sum::<f64>() / n;
        let var = self.rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        EpisodeMetrics {
            episode,
            reward_mean: mean,
            reward_std: var.sqrt(),
            part1_mean: self.part1 / n,
            part2_mean: self.part2 / n,
            penalty_rate: self.penalties as f64 / n,
            v2v_margin_mean: self.margin / n,
            epsilon,
            lr,
        }
    }
}

pub struct RunArtifacts {
    pub team: Team,
    pub metrics: Vec<EpisodeMetrics>,
}

/// Centralized training from scratch.
pub fn train(cfg: &EnvConfig, tc: &TrainConfig, seed: u64) -> Result<RunArtifacts> {
    train_with(cfg, tc, seed, None, &mut TrainHooks::default())
}

/// Callbacks invoked during [`train_with`].
#[derive(Default)]
pub struct TrainHooks<'a> {
    pub on_step: Option<&'a mut dyn FnMut(&TrajectoryRow) -> Result<()>>,
    pub on_episode: Option<&'a mut dyn FnMut(&Team, &EpisodeMetrics) -> Result<()>>,
}

struct AgentRngs {
    explore: ChaCha8Rng,
    replay: ChaCha8Rng,
}

fn agent_rngs(seed: u64, start: usize, count: usize) -> Vec<AgentRngs> {
    (0..count as u64)
        .map(|i| {
            let offset = ((start as u64) << 16) + i;
            AgentRngs {
                explore: scenario::stream_rng(seed, streams::EXPLORATION + offset),
                replay: scenario::stream_rng(seed, streams::REPLAY + offset),
            }
        })
        .collect()
}

/// Centralized training, optionally continuing from `resume`.
pub fn train_with(
    cfg: &EnvConfig,
    tc: &TrainConfig,
    seed: u64,
    resume: Option<Team>,
    hooks: &mut TrainHooks,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    tc.validate()?;
    if cfg.steps_per_episode != tc.steps {
        return Err(Error::config("train.steps", "environment and trainer disagree on episode length"));
    }
    let mut team = match resume {
        Some(t) => t,
        None => Team::new(cfg, tc, seed)?,
    };
    let start = team.episodes_done;
    let c = cfg.cells();
    let q = cfg.sub_blocks();
    let u = cfg.avs();
    let levels = cfg.rics.levels();
    let warmup = tc.warmup();
    let threshold = phy::outage_threshold(&cfg.phy)?;
    let mut rngs = agent_rngs(seed, start, c * (q + u));
    let mut metrics = Vec::with_capacity(tc.episodes.saturating_sub(start));

    for e in start..tc.episodes {
        let lr = decay_lr(tc.lr, tc.lr_decay, e);
        team.set_lr(lr);
        let (mut state, mut env_rng) = env::reset(cfg, episode_seed(seed, e))?;
        let mut obs = flatten(&env::observe(cfg, &state));
        let mut acc = EpisodeAccumulator::default();
        loop {
            let mut cells = Vec::with_capacity(c);
            let mut rics_actions = Vec::with_capacity(c * q);
            for ci in 0..c {
                let mut blocks = Vec::with_capacity(q);
                for qi in 0..q {
                    let agent = &mut team.rics[ci][qi];
                    let o = &obs.rics[ci * q + qi];
                    agent.scaler.observe(o);
                    let r = &mut rngs[ci * (q + u) + qi];
                    let a = agent.select_discrete(o, &mut r.explore)?;
                    rics_actions.push(a);
                    blocks.push(BlockPhases::from_index(a, levels));
                }
                let mut avs = Vec::with_capacity(u);
                for ui in 0..u {
                    let agent = &mut team.avs[ci][ui];
                    let o = &obs.avs[ci * u + ui];
                    agent.scaler.observe(o);
                    let r = &mut rngs[ci * (q + u) + q + ui];
                    let (share, rho) = agent.select_hybrid(o, &mut r.explore)?;
                    avs.push(AvAction { share, rho });
                }
                cells.push(CellAction {
                    rics: RicsAction { blocks },
                    avs,
                });
            }
            let joint = JointAction { cells };
            let outcome = env::step(cfg, &state, &joint, &mut env_rng)?;
            let reward = outcome.reward();
            let terminal = outcome.terminal;
            acc.push(&outcome.breakdown, threshold);
            if let Some(f) = hooks.on_step.as_mut() {
                f(&TrajectoryRow::new(e, state.step, &outcome.breakdown))?;
            }
            let next = flatten(&env::observe(cfg, &outcome.next));

            for ci in 0..c {
                for qi in 0..q {
                    let k = ci * q + qi;
                    let agent = &mut team.rics[ci][qi];
                    agent.replay.push(DiscreteTransition {
                        obs: std::mem::take(&mut obs.rics[k]),
                        action: rics_actions[k],
                        reward,
                        next_obs: next.rics[k].clone(),
                        terminal,
                    });
                    if agent.replay.len() >= warmup {
                        let r = &mut rngs[ci * (q + u) + qi];
                        let batch: Vec<DiscreteTransition> =
                            agent.replay.sample(&mut r.replay, tc.batch).into_iter().cloned().collect();
                        let refs: Vec<&DiscreteTransition> = batch.iter().collect();
                        agent.ddqn_update(&refs)?;
                    }
                    agent.epsilon.advance();
                }
                for ui in 0..u {
                    let k = ci * u + ui;
                    let a = joint.cells[ci].avs[ui];
                    let agent = &mut team.avs[ci][ui];
                    agent.replay.push(HybridTransition {
                        obs: std::mem::take(&mut obs.avs[k]),
                        share: a.share,
                        rho: a.rho,
                        reward,
                        next_obs: next.avs[k].clone(),
                        terminal,
                    });
                    if agent.replay.len() >= warmup {
                        let r = &mut rngs[ci * (q + u) + q + ui];
                        let batch: Vec<HybridTransition> =
                            agent.replay.sample(&mut r.replay, tc.batch).into_iter().cloned().collect();
                        let refs: Vec<&HybridTransition> = batch.iter().collect();
                        agent.mpdqn_update(&refs)?;
                    }
                    agent.epsilon.advance();
                }
            }
            state = outcome.next;
            obs = next;
            if terminal {
                break;
            }
        }
        team.episodes_done = e + 1;
        let m = acc.finish(e, team.epsilon(), lr);
        log::debug!(
            "episode {e}: reward {:.4} penalty rate {:.3} epsilon {:.3}",
            m.reward_mean,
            m.penalty_rate,
            m.epsilon
        );
        if let Some(f) = hooks.on_episode.as_mut() {
            f(&team, &m)?;
        }
        metrics.push(m);
    }
    Ok(RunArtifacts { team, metrics })
}

struct FlatObservations {
    /// `cell * Q + block`
    rics: Vec<Vec<f64>>,
    /// `cell * U + av`
    avs: Vec<Vec<f64>>,
}

fn flatten(o: &Observations) -> FlatObservations {
    FlatObservations {
        rics: o.rics.iter().flatten().map(|r| flat(&r.0)).collect(),
        avs: o.avs.iter().flatten().map(|a| flat(&a.0)).collect(),
    }
}

/// Greedy-rollout summary. Safety figures are per-slot means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub episodes: usize,
    pub reward_mean: f64,
    /// Sum of safety factors over all AVs of all cells.
    pub sum_safety: f64,
    /// Mean safety factor of one AV.
    pub avg_safety: f64,
    /// Sum of safety factors per cell, averaged over cells.
    pub cell_safety: f64,
    pub v2v_rate: f64,
    pub av_rate: f64,
    pub penalty_rate: f64,
    pub part2_mean: f64,
}

/// Decentralized rollouts of `policy` on evaluation episodes derived from
/// `seed`. The policy only receives local observations.
pub fn evaluate(policy: &mut dyn TeamPolicy, cfg: &EnvConfig, n_episodes: usize, seed: u64) -> Result<EvalMetrics> {
    evaluate_with(policy, cfg, n_episodes, seed, &mut |_| Ok(()))
}

/// As [`evaluate`], reporting every slot to `on_step`.
pub fn evaluate_with(
    policy: &mut dyn TeamPolicy,
    cfg: &EnvConfig,
    n_episodes: usize,
    seed: u64,
    on_step: &mut dyn FnMut(&TrajectoryRow) -> Result<()>,
) -> Result<EvalMetrics> {
    cfg.validate()?;
    if n_episodes == 0 {
        return Err(Error::config("eval.episodes", "must be at least 1"));
    }
    let (mut reward, mut part1, mut part2, mut v2v, mut av, mut penalties, mut steps) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0usize, 0usize);
    for e in 0..n_episodes {
        let (mut state, mut rng) = env::reset(cfg, eval_seed(seed, e))?;
        loop {
            let obs = env::observe(cfg, &state);
            let joint = policy.act(cfg, &obs)?;
            let out = env::step(cfg, &state, &joint, &mut rng)?;
            let b = &out.breakdown;
            on_step(&TrajectoryRow::new(e, state.step, b))?;
            reward += b.reward;
            part1 += b.part1;
            part2 += b.part2;
            v2v += b.diagnostics.mean_v2v_rate();
            av += b.diagnostics.mean_av_rate();
            penalties += b.penalized as usize;
            steps += 1;
            let done = out.terminal;
            state = out.next;
            if done {
                break;
            }
        }
    }
    let n = steps as f64;
    let sum_safety = part1 / n;
    Ok(EvalMetrics {
        episodes: n_episodes,
        reward_mean: reward / n,
        sum_safety,
        avg_safety: sum_safety / (cfg.cells() * cfg.avs()) as f64,
        cell_safety: sum_safety / cfg.cells() as f64,
        v2v_rate: v2v / n,
        av_rate: av / n,
        penalty_rate: penalties as f64 / n,
        part2_mean: part2 / n,
    })
}
