//! The Markov game: joint actions, reward with constraint penalty,
//! per-agent local observations and the episode lifecycle.
//!
//! The environment is stateless: [`step`] maps `(state, joint action, rng)`
//! to an outcome. All randomness lives in [`EnvRng`], so a serialized
//! [`GlobalState`] plus the generator position reproduces a trajectory.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mec::{self, ComputeConfig, SafetyStatus, TaskSpec};
use crate::phy::{self, PhyConfig, RicsAction, RicsConfig, SharingMatrix};
use crate::scenario::{self, streams, Csi, FadingParams, LinkBudget, MobilityState, TopologyConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Reward assigned to any slot whose joint action violates the sharing
    /// constraint.
    pub penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { penalty: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub topology: TopologyConfig,
    pub fading: FadingParams,
    pub rics: RicsConfig,
    pub phy: PhyConfig,
    pub compute: ComputeConfig,
    pub reward: RewardConfig,
    pub steps_per_episode: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            topology: TopologyConfig::default(),
            fading: FadingParams::default(),
            rics: RicsConfig::default(),
            phy: PhyConfig::default(),
            compute: ComputeConfig::default(),
            reward: RewardConfig::default(),
            steps_per_episode: 200,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.topology.validate()?;
        self.fading.validate()?;
        self.rics.validate(self.topology.rics_elements)?;
        self.phy.validate()?;
        self.compute.validate()?;
        if !(self.reward.penalty >= 0.0) {
            return Err(Error::config("reward.penalty", "must be non-negative"));
        }
        if self.steps_per_episode == 0 {
            return Err(Error::config("train.steps", "must be at least 1"));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.topology.num_cells
    }

    pub fn avs(&self) -> usize {
        self.topology.avs_per_cell
    }

    pub fn v2vs(&self) -> usize {
        self.topology.v2v_per_cell
    }

    pub fn elements(&self) -> usize {
        self.topology.rics_elements
    }

    pub fn sub_blocks(&self) -> usize {
        self.rics.sub_blocks
    }
}

/// Spectrum choice and offload ratio of one AV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvAction {
    /// 0 keeps the AV channel private; `k >= 1` lets V2V pair `k - 1` reuse it.
    pub share: usize,
    pub rho: f64,
}

impl Default for AvAction {
    fn default() -> Self {
        Self { share: 0, rho: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellAction {
    pub rics: RicsAction,
    pub avs: Vec<AvAction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointAction {
    pub cells: Vec<CellAction>,
}

impl JointAction {
    /// All phases zero, no sharing, half of every task offloaded.
    pub fn neutral(cfg: &EnvConfig) -> Self {
        Self {
            cells: (0..cfg.cells())
                .map(|_| CellAction {
                    rics: RicsAction::zeros(cfg.sub_blocks()),
                    avs: vec![AvAction::default(); cfg.avs()],
                })
                .collect(),
        }
    }

    /// Check shapes and index ranges; offload ratios are clamped to `[0, 1]`.
    pub fn sanitized(&self, cfg: &EnvConfig) -> Result<Self> {
        if self.cells.len() != cfg.cells() {
            return Err(Error::Dimension {
                expected: cfg.cells(),
                got: self.cells.len(),
            });
        }
        let levels = cfg.rics.levels();
        let mut out = self.clone();
        for cell in &mut out.cells {
            if cell.rics.blocks.len() != cfg.sub_blocks() {
                return Err(Error::Dimension {
                    expected: cfg.sub_blocks(),
                    got: cell.rics.blocks.len(),
                });
            }
            if cell.avs.len() != cfg.avs() {
                return Err(Error::Dimension {
                    expected: cfg.avs(),
                    got: cell.avs.len(),
                });
            }
            if let Some(b) = cell.rics.blocks.iter().find(|b| b.reflect >= levels || b.transmit >= levels) {
                return Err(Error::Domain(format!("phase index {b:?} outside 0..{levels}")));
            }
            for a in &mut cell.avs {
                if a.share > cfg.v2vs() {
                    return Err(Error::Domain(format!(
                        "share index {} outside 0..={}",
                        a.share,
                        cfg.v2vs()
                    )));
                }
                a.rho = if a.rho.is_nan() { 0.0 } else { a.rho.clamp(0.0, 1.0) };
            }
        }
        Ok(out)
    }
}

/// Two or more AVs asked to share their channel with the same V2V pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingViolation {
    pub v2v: usize,
    /// AVs that picked the pair, in index order. Only the first keeps it.
    pub avs: Vec<usize>,
}

/// Sharing matrix of one cell. Conflicting picks keep the lowest AV index.
pub fn actions_to_sharing(avs: &[AvAction], v2vs: usize) -> (SharingMatrix, Vec<SharingViolation>) {
    let mut omega = SharingMatrix::zeros(avs.len(), v2vs);
    let mut pickers: Vec<Vec<usize>> = vec![Vec::new(); v2vs];
    for (u, a) in avs.iter().enumerate() {
        if a.share >= 1 && a.share <= v2vs {
            pickers[a.share - 1].push(u);
        }
    }
    let mut violations = Vec::new();
    for (v, us) in pickers.into_iter().enumerate() {
        if let Some(&first) = us.first() {
            omega.omega[first][v] = true;
        }
        if us.len() > 1 {
            violations.push(SharingViolation { v2v: v, avs: us });
        }
    }
    (omega, violations)
}

/// Full system state at the start of a slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    pub mobility: MobilityState,
    pub csi: Csi,
    pub prev: JointAction,
    pub tasks: Vec<Vec<TaskSpec>>,
    pub local_cpu: Vec<Vec<f64>>,
    pub step: usize,
    pub done: bool,
}

/// Generators consumed by the environment after reset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvRng {
    pub av_fading: ChaCha8Rng,
    pub v2v_fading: ChaCha8Rng,
    pub outage_mc: ChaCha8Rng,
}

impl EnvRng {
    pub fn new(seed: u64) -> Self {
        Self {
            av_fading: scenario::stream_rng(seed, streams::AV_FADING),
            v2v_fading: scenario::stream_rng(seed, streams::V2V_FADING),
            outage_mc: scenario::stream_rng(seed, streams::OUTAGE_MC),
        }
    }
}

/// Start an episode: fresh placement, tasks, CPU rates and channels.
pub fn reset(cfg: &EnvConfig, seed: u64) -> Result<(GlobalState, EnvRng)> {
    cfg.validate()?;
    let mobility = scenario::init_positions(&cfg.topology, seed)?;
    let mut tasks = Vec::with_capacity(cfg.cells());
    let mut local_cpu = Vec::with_capacity(cfg.cells());
    for c in 0..cfg.cells() {
        let mut rng = scenario::stream_rng(seed, streams::TASKS + c as u64);
        let mut ts = Vec::with_capacity(cfg.avs());
        let mut fs = Vec::with_capacity(cfg.avs());
        for _ in 0..cfg.avs() {
            ts.push(cfg.compute.draw_task(&mut rng));
            fs.push(cfg.compute.draw_local_cpu(&mut rng));
        }
        tasks.push(ts);
        local_cpu.push(fs);
    }
    let mut rng = EnvRng::new(seed);
    let csi = scenario::draw_csi_split(
        &mobility,
        cfg.elements(),
        &cfg.fading,
        &mut rng.av_fading,
        &mut rng.v2v_fading,
    )?;
    let state = GlobalState {
        mobility,
        csi,
        prev: JointAction::neutral(cfg),
        tasks,
        local_cpu,
        step: 0,
        done: false,
    };
    Ok((state, rng))
}

/// Per-link quantities computed while scoring a joint action.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `[cell][av]` uplink rate (bit/s).
    pub av_rate: Vec<Vec<f64>>,
    /// `[cell][av]` safety factor.
    pub av_safety: Vec<Vec<f64>>,
    /// `[cell][v2v]` rate on the current channel snapshot (bit/s).
    pub v2v_rate: Vec<Vec<f64>>,
    /// `[cell][v2v]` Monte-Carlo mean SINR.
    pub v2v_mean_sinr: Vec<Vec<f64>>,
    /// `[cell][v2v]` smoothed outage probability estimate.
    pub v2v_outage: Vec<Vec<f64>>,
    /// Number of AVs whose safety factor hit a guarded case.
    pub flagged_avs: usize,
}

impl Diagnostics {
    pub fn mean_av_rate(&self) -> f64 {
        mean(self.av_rate.iter().flatten())
    }

    pub fn mean_v2v_rate(&self) -> f64 {
        mean(self.v2v_rate.iter().flatten())
    }
}

fn mean<'a>(it: impl Iterator<Item = &'a f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub reward: f64,
    pub penalized: bool,
    /// Sum of safety factors over all cells and AVs.
    pub part1: f64,
    /// Sum over V2V pairs of `min(mean SINR - threshold, 0)`.
    pub part2: f64,
    pub violations: Vec<Vec<SharingViolation>>,
    pub diagnostics: Diagnostics,
}

/// Score `joint` on the channels of `state`.
pub fn compute_reward(
    cfg: &EnvConfig,
    state: &GlobalState,
    joint: &JointAction,
    rng: &mut EnvRng,
) -> Result<RewardBreakdown> {
    let joint = joint.sanitized(cfg)?;
    let threshold = phy::outage_threshold(&cfg.phy)?;
    let per_av_cpu = cfg.compute.per_av_share(cfg.cells(), cfg.avs());
    let bs_delays = mec::bs_processing_delays(&state.tasks, per_av_cpu);
    let mut out = RewardBreakdown {
        reward: 0.0,
        penalized: false,
        part1: 0.0,
        part2: 0.0,
        violations: Vec::with_capacity(cfg.cells()),
        diagnostics: Diagnostics::default(),
    };
    for (c, action) in joint.cells.iter().enumerate() {
        let csi = &state.csi.cells[c];
        let coeffs = phy::expand_action(&action.rics, &cfg.rics, cfg.elements())?;
        let (omega, violations) = actions_to_sharing(&action.avs, cfg.v2vs());
        out.penalized |= !violations.is_empty();
        out.violations.push(violations);

        let mut rates = Vec::with_capacity(cfg.avs());
        let mut safety = Vec::with_capacity(cfg.avs());
        for (u, a) in action.avs.iter().enumerate() {
            let gamma = phy::sinr_v2i(csi, &coeffs.theta_r, &omega, &cfg.phy, u)?;
            let rate = phy::rate_v2i(gamma, &cfg.phy, cfg.avs());
            let s = mec::safety_factor(
                a.rho,
                &state.tasks[c][u],
                rate,
                state.local_cpu[c][u],
                bs_delays[c][u],
                &cfg.compute,
            )?;
            if s.status != SafetyStatus::Normal {
                out.diagnostics.flagged_avs += 1;
            }
            out.part1 += s.value;
            rates.push(rate);
            safety.push(s.value);
        }

        let v2v_rate = (0..cfg.v2vs())
            .map(|v| {
                phy::sinr_v2v(csi, &coeffs.theta_t, &omega, &cfg.phy, v)
                    .map(|g| phy::rate_v2v(g, &cfg.phy, cfg.v2vs()))
            })
            .collect::<Result<Vec<_>>>()?;
        let (mean_sinr, outage) = if cfg.v2vs() > 0 {
            let budget = LinkBudget::new(&state.mobility.cells[c], cfg.elements(), &cfg.fading)?;
            let stats = phy::mean_sinr_v2v(
                &budget,
                &cfg.fading,
                &coeffs.theta_t,
                &omega,
                &cfg.phy,
                &mut rng.outage_mc,
            )?;
            (stats.mean_sinr, stats.outage)
        } else {
            (Vec::new(), Vec::new())
        };
        out.part2 += mean_sinr.iter().map(|g| (g - threshold).min(0.0)).sum::<f64>();

        out.diagnostics.av_rate.push(rates);
        out.diagnostics.av_safety.push(safety);
        out.diagnostics.v2v_rate.push(v2v_rate);
        out.diagnostics.v2v_mean_sinr.push(mean_sinr);
        out.diagnostics.v2v_outage.push(outage);
    }
    out.reward = if out.penalized {
        -cfg.reward.penalty
    } else {
        out.part1 + out.part2
    };
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub breakdown: RewardBreakdown,
    pub next: GlobalState,
    pub terminal: bool,
}

impl StepOutcome {
    pub fn reward(&self) -> f64 {
        self.breakdown.reward
    }
}

/// Apply `joint`, score it, then move vehicles and redraw channels.
pub fn step(
    cfg: &EnvConfig,
    state: &GlobalState,
    joint: &JointAction,
    rng: &mut EnvRng,
) -> Result<StepOutcome> {
    if state.done {
        return Err(Error::Lifecycle(format!(
            "episode already terminated after {} steps",
            state.step
        )));
    }
    let joint = joint.sanitized(cfg)?;
    let breakdown = compute_reward(cfg, state, &joint, rng)?;
    let mobility = scenario::advance_slot(&state.mobility, &cfg.topology);
    let csi = scenario::draw_csi_split(
        &mobility,
        cfg.elements(),
        &cfg.fading,
        &mut rng.av_fading,
        &mut rng.v2v_fading,
    )?;
    let step = state.step + 1;
    let terminal = step >= cfg.steps_per_episode;
    let next = GlobalState {
        mobility,
        csi,
        prev: joint,
        tasks: state.tasks.clone(),
        local_cpu: state.local_cpu.clone(),
        step,
        done: terminal,
    };
    Ok(StepOutcome {
        breakdown,
        next,
        terminal,
    })
}

/// One row of a per-step trajectory log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub episode: usize,
    pub slot: usize,
    pub reward: f64,
    pub part1: f64,
    pub part2: f64,
    pub penalized: bool,
    pub mean_av_rate: f64,
    pub mean_v2v_rate: f64,
}

impl TrajectoryRow {
    pub fn new(episode: usize, slot: usize, b: &RewardBreakdown) -> Self {
        Self {
            episode,
            slot,
            reward: b.reward,
            part1: b.part1,
            part2: b.part2,
            penalized: b.penalized,
            mean_av_rate: b.diagnostics.mean_av_rate(),
            mean_v2v_rate: b.diagnostics.mean_v2v_rate(),
        }
    }
}

/// `sum_i gamma^i R_i`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards
        .iter()
        .rev()
        .fold(0.0, |acc, r| r + gamma * acc)
}

/// Local state of one agent: already-scaled fixed features and raw channel
/// features (real and imaginary parts) that the agent normalizes itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub fixed: Vec<f64>,
    pub channel: Vec<f64>,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.fixed.len() + self.channel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// What the agent of one RICS sub-block sees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RicsObservation(pub Observation);

/// What one AV agent sees.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvObservation(pub Observation);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observations {
    /// `[cell][sub_block]`
    pub rics: Vec<Vec<RicsObservation>>,
    /// `[cell][av]`
    pub avs: Vec<Vec<AvObservation>>,
}

fn push_complex(out: &mut Vec<f64>, z: crate::C64) {
    out.push(z.re);
    out.push(z.im);
}

/// Sizes `(fixed, channel)` of a sub-block observation.
pub fn rics_observation_dims(cfg: &EnvConfig) -> (usize, usize) {
    let per_block = cfg.elements() / cfg.sub_blocks();
    (
        cfg.rics.block_actions(),
        per_block * 2 * (cfg.avs() + cfg.v2vs() + 1),
    )
}

/// Sizes `(fixed, channel)` of an AV observation.
pub fn av_observation_dims(cfg: &EnvConfig) -> (usize, usize) {
    (2 + cfg.v2vs() + 2, 2 * (cfg.v2vs() + 1))
}

/// Build every agent's local observation from `state`.
pub fn observe(cfg: &EnvConfig, state: &GlobalState) -> Observations {
    let levels = cfg.rics.levels();
    let per_block = cfg.elements() / cfg.sub_blocks();
    let mut rics = Vec::with_capacity(cfg.cells());
    let mut avs = Vec::with_capacity(cfg.cells());
    for (c, csi) in state.csi.cells.iter().enumerate() {
        let prev = &state.prev.cells[c];
        let blocks = (0..cfg.sub_blocks())
            .map(|q| {
                let mut fixed = vec![0.0; cfg.rics.block_actions()];
                fixed[prev.rics.blocks[q].index(levels)] = 1.0;
                let mut channel = Vec::new();
                for k in q * per_block..(q + 1) * per_block {
                    for av in &csi.avs {
                        push_complex(&mut channel, av.h_ur[k]);
                    }
                    for v in &csi.v2vs {
                        push_complex(&mut channel, v.h_rv[k]);
                    }
                    push_complex(&mut channel, csi.h_rb[k]);
                }
                RicsObservation(Observation { fixed, channel })
            })
            .collect();
        rics.push(blocks);

        let cell_avs = (0..cfg.avs())
            .map(|u| {
                let a = prev.avs[u];
                let mut fixed = Vec::with_capacity(4 + cfg.v2vs());
                fixed.push(cfg.phy.p_u_dbm / 30.0);
                fixed.push(cfg.phy.p_t_dbm / 30.0);
                fixed.extend((0..=cfg.v2vs()).map(|k| if k == a.share { 1.0 } else { 0.0 }));
                fixed.push(a.rho);
                let mut channel = Vec::with_capacity(2 * (cfg.v2vs() + 1));
                for v in &csi.v2vs {
                    push_complex(&mut channel, v.h_uv[u]);
                }
                push_complex(&mut channel, csi.avs[u].h_ub);
                AvObservation(Observation { fixed, channel })
            })
            .collect();
        avs.push(cell_avs);
    }
    Observations { rics, avs }
}
