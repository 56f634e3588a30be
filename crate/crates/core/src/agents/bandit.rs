//! Phase-selection agents trained on one frozen channel realization.

use super::ddqn::{DdqnAgent, DiscreteTransition};
use super::team::flat;
use super::TrainConfig;
use crate::env::{self, EnvConfig, GlobalState};
use crate::phy::{BlockPhases, RicsAction};
use crate::scenario::{self, streams};
use crate::Result;
use crate::C64;

/// Upper bound of the composite gain: all paths added in phase.
pub fn coherent_bound(cfg: &EnvConfig, state: &GlobalState, u: usize) -> f64 {
    let csi = &state.csi.cells[0];
    let av = &csi.avs[u];
    let amp = cfg.rics.beta_r.sqrt();
    let cascaded: f64 = csi.h_rb.iter().zip(&av.h_ur).map(|(a, b)| (a * b).norm() * amp).sum();
    (av.h_ub.norm() + cascaded).powi(2)
}

/// Outcome of [`train_phase_agents`].
pub struct PhaseTraining {
    pub action: RicsAction,
    pub gain: f64,
    pub agents: Vec<DdqnAgent>,
}

/// Train the sub-block agents of cell 0 for `steps` single-slot decisions
/// whose shared reward is the normalized composite gain of AV `u`.
pub fn train_phase_agents(
    cfg: &EnvConfig,
    tc: &TrainConfig,
    state: &GlobalState,
    u: usize,
    steps: usize,
    seed: u64,
) -> Result<PhaseTraining> {
    let (rf, rc) = env::rics_observation_dims(cfg);
    let q = cfg.sub_blocks();
    let levels = cfg.rics.levels();
    let mut init = scenario::stream_rng(seed, streams::AGENT_INIT);
    let mut agents = (0..q)
        .map(|_| DdqnAgent::new(rf, rc, cfg.rics.block_actions(), tc, &mut init))
        .collect::<Result<Vec<_>>>()?;
    let mut explore: Vec<_> = (0..q as u64)
        .map(|i| scenario::stream_rng(seed, streams::EXPLORATION + i))
        .collect();
    let mut replay: Vec<_> = (0..q as u64)
        .map(|i| scenario::stream_rng(seed, streams::REPLAY + i))
        .collect();
    let scale = coherent_bound(cfg, state, u);
    let mut state = state.clone();
    let warmup = tc.warmup();

    let obs_of = |s: &GlobalState| -> Vec<Vec<f64>> {
        env::observe(cfg, s).rics[0].iter().map(|o| flat(&o.0)).collect()
    };
    let mut obs = obs_of(&state);
    for _ in 0..steps {
        let mut blocks = Vec::with_capacity(q);
        let mut picks = Vec::with_capacity(q);
        for (i, a) in agents.iter_mut().enumerate() {
            a.scaler.observe(&obs[i]);
            let k = a.select_discrete(&obs[i], &mut explore[i])?;
            picks.push(k);
            blocks.push(BlockPhases::from_index(k, levels));
        }
        let action = RicsAction { blocks };
        let reward = super::oracle::phase_gain(&cfg.rics, cfg.elements(), &state.csi.cells[0], u, &action)? / scale;
        state.prev.cells[0].rics = action;
        let next = obs_of(&state);
        for (i, a) in agents.iter_mut().enumerate() {
            a.replay.push(DiscreteTransition {
                obs: std::mem::take(&mut obs[i]),
                action: picks[i],
                reward,
                next_obs: next[i].clone(),
                terminal: true,
            });
            if a.replay.len() >= warmup {
                let batch: Vec<DiscreteTransition> =
                    a.replay.sample(&mut replay[i], tc.batch).into_iter().cloned().collect();
                let refs: Vec<&DiscreteTransition> = batch.iter().collect();
                a.ddqn_update(&refs)?;
            }
            a.epsilon.advance();
        }
        obs = next;
    }
    let blocks = agents
        .iter()
        .zip(&obs)
        .map(|(a, o)| a.greedy(o).map(|k| BlockPhases::from_index(k, levels)))
        .collect::<Result<Vec<_>>>()?;
    let action = RicsAction { blocks };
    let gain = super::oracle::phase_gain(&cfg.rics, cfg.elements(), &state.csi.cells[0], u, &action)?;
    Ok(PhaseTraining { action, gain, agents })
}

/// Replace the direct AV-BS links of `state` by zero.
pub fn block_direct_links(state: &mut GlobalState) {
    for cell in &mut state.csi.cells {
        for av in &mut cell.avs {
            av.h_ub = C64::new(0.0, 0.0);
        }
    }
}
