use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ddqn::{DdqnAgent, DdqnSnapshot};
use super::mpdqn::{MpdqnAgent, MpdqnSnapshot};
use super::TrainConfig;
use crate::env::{self, AvAction, CellAction, EnvConfig, JointAction, Observation, Observations};
use crate::phy::{BlockPhases, RicsAction};
use crate::scenario::{self, streams};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Maps local observations to a joint action. Implementations only ever
/// see per-agent observations, never the global state.
pub trait TeamPolicy {
    fn act(&mut self, cfg: &EnvConfig, obs: &Observations) -> Result<JointAction>;
}

pub(crate) fn flat(o: &Observation) -> Vec<f64> {
    let mut v = Vec::with_capacity(o.len());
    v.extend_from_slice(&o.fixed);
    v.extend_from_slice(&o.channel);
    v
}

/// Shape of the agent population; a checkpoint only loads into a matching
/// configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeamShape {
    pub cells: usize,
    pub avs_per_cell: usize,
    pub v2v_per_cell: usize,
    pub rics_elements: usize,
    pub sub_blocks: usize,
    pub phase_bits: usize,
    pub hidden: Vec<usize>,
}

impl TeamShape {
    pub fn of(cfg: &EnvConfig, train: &TrainConfig) -> Self {
        Self {
            cells: cfg.cells(),
            avs_per_cell: cfg.avs(),
            v2v_per_cell: cfg.v2vs(),
            rics_elements: cfg.elements(),
            sub_blocks: cfg.sub_blocks(),
            phase_bits: cfg.rics.phase_bits as usize,
            hidden: train.hidden.clone(),
        }
    }

    fn mismatch(&self, other: &TeamShape) -> Option<String> {
        let fields = [
            ("num_cells", self.cells, other.cells),
            ("avs_per_cell", self.avs_per_cell, other.avs_per_cell),
            ("v2v_per_cell", self.v2v_per_cell, other.v2v_per_cell),
            ("rics_elements", self.rics_elements, other.rics_elements),
            ("sub_blocks", self.sub_blocks, other.sub_blocks),
            ("phase_bits", self.phase_bits, other.phase_bits),
        ];
        if let Some((name, a, b)) = fields.iter().find(|(_, a, b)| a != b) {
            return Some(format!("checkpoint has {name}={a} but config has {name}={b}"));
        }
        if self.hidden != other.hidden {
            return Some(format!(
                "checkpoint has hidden={:?} but config has hidden={:?}",
                self.hidden, other.hidden
            ));
        }
        None
    }
}

/// All learning agents: `rics[cell][block]` and `avs[cell][av]`.
#[derive(Clone, Debug)]
pub struct Team {
    pub shape: TeamShape,
    pub rics: Vec<Vec<DdqnAgent>>,
    pub avs: Vec<Vec<MpdqnAgent>>,
    pub episodes_done: usize,
}

impl Team {
    pub fn new(cfg: &EnvConfig, train: &TrainConfig, seed: u64) -> Result<Self> {
        let mut rng = scenario::stream_rng(seed, streams::AGENT_INIT);
        let (rf, rc) = env::rics_observation_dims(cfg);
        let (af, ac) = env::av_observation_dims(cfg);
        let mut rics = Vec::with_capacity(cfg.cells());
        let mut avs = Vec::with_capacity(cfg.cells());
        for _ in 0..cfg.cells() {
            rics.push(
                (0..cfg.sub_blocks())
                    .map(|_| DdqnAgent::new(rf, rc, cfg.rics.block_actions(), train, &mut rng))
                    .collect::<Result<Vec<_>>>()?,
            );
            avs.push(
                (0..cfg.avs())
                    .map(|_| MpdqnAgent::new(af, ac, cfg.v2vs() + 1, train, &mut rng))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Self {
            shape: TeamShape::of(cfg, train),
            rics,
            avs,
            episodes_done: 0,
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.rics.iter_mut().flatten().for_each(|a| a.lr = lr);
        self.avs.iter_mut().flatten().for_each(|a| a.lr = lr);
    }

    pub fn epsilon(&self) -> f64 {
        self.rics
            .iter()
            .flatten()
            .map(|a| a.epsilon.value())
            .chain(self.avs.iter().flatten().map(|a| a.epsilon.value()))
            .next()
            .unwrap_or(0.0)
    }

    pub fn checkpoint(&self) -> TeamCheckpoint {
        TeamCheckpoint {
            format_version: CHECKPOINT_VERSION,
            shape: self.shape.clone(),
            episodes_done: self.episodes_done,
            rics: self.rics.iter().map(|c| c.iter().map(DdqnAgent::snapshot).collect()).collect(),
            avs: self.avs.iter().map(|c| c.iter().map(MpdqnAgent::snapshot).collect()).collect(),
        }
    }

    pub fn from_checkpoint(ck: &TeamCheckpoint, cfg: &EnvConfig, train: &TrainConfig) -> Result<Self> {
        if ck.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint format {} (expected {CHECKPOINT_VERSION})",
                ck.format_version
            )));
        }
        if let Some(m) = ck.shape.mismatch(&TeamShape::of(cfg, train)) {
            return Err(Error::Checkpoint(format!("topology mismatch: {m}")));
        }
        let (rf, rc) = env::rics_observation_dims(cfg);
        let (af, ac) = env::av_observation_dims(cfg);
        let rics = ck
            .rics
            .iter()
            .map(|c| c.iter().map(|s| DdqnAgent::from_snapshot(s, train.memory)).collect())
            .collect::<Result<Vec<Vec<_>>>>()?;
        let avs = ck
            .avs
            .iter()
            .map(|c| c.iter().map(|s| MpdqnAgent::from_snapshot(s, train.memory)).collect())
            .collect::<Result<Vec<Vec<_>>>>()?;
        let shapes_ok = rics.len() == cfg.cells()
            && avs.len() == cfg.cells()
            && rics.iter().flatten().all(|a| a.scaler.dim() == rf + rc && a.actions() == cfg.rics.block_actions())
            && avs.iter().flatten().all(|a| a.scaler.dim() == af + ac && a.actions() == cfg.v2vs() + 1)
            && rics.iter().all(|c| c.len() == cfg.sub_blocks())
            && avs.iter().all(|c| c.len() == cfg.avs());
        if !shapes_ok {
            return Err(Error::Checkpoint("agent layout does not match the configuration".into()));
        }
        Ok(Self {
            shape: ck.shape.clone(),
            rics,
            avs,
            episodes_done: ck.episodes_done,
        })
    }
}

impl TeamPolicy for Team {
    fn act(&mut self, cfg: &EnvConfig, obs: &Observations) -> Result<JointAction> {
        let levels = cfg.rics.levels();
        let mut cells = Vec::with_capacity(cfg.cells());
        for c in 0..cfg.cells() {
            let blocks = self.rics[c]
                .iter()
                .zip(&obs.rics[c])
                .map(|(a, o)| a.act(o).map(|i| BlockPhases::from_index(i, levels)))
                .collect::<Result<Vec<_>>>()?;
            let avs = self.avs[c]
                .iter()
                .zip(&obs.avs[c])
                .map(|(a, o)| a.act(o).map(|(share, rho)| AvAction { share, rho }))
                .collect::<Result<Vec<_>>>()?;
            cells.push(CellAction {
                rics: RicsAction { blocks },
                avs,
            });
        }
        Ok(JointAction { cells })
    }
}

/// Uniform random phases, sharing choices and offload ratios.
pub struct RandomPolicy {
    pub rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: scenario::stream_rng(seed, streams::EXPLORATION),
        }
    }
}

impl TeamPolicy for RandomPolicy {
    fn act(&mut self, cfg: &EnvConfig, _obs: &Observations) -> Result<JointAction> {
        let levels = cfg.rics.levels();
        let cells = (0..cfg.cells())
            .map(|_| CellAction {
                rics: RicsAction {
                    blocks: (0..cfg.sub_blocks())
                        .map(|_| BlockPhases {
                            reflect: self.rng.random_range(0..levels),
                            transmit: self.rng.random_range(0..levels),
                        })
                        .collect(),
                },
                avs: (0..cfg.avs())
                    .map(|_| AvAction {
                        share: self.rng.random_range(0..=cfg.v2vs()),
                        rho: self.rng.random::<f64>(),
                    })
                    .collect(),
            })
            .collect();
        Ok(JointAction { cells })
    }
}

/// Serialized agent population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeamCheckpoint {
    pub format_version: u32,
    pub shape: TeamShape,
    pub episodes_done: usize,
    pub rics: Vec<Vec<DdqnSnapshot>>,
    pub avs: Vec<Vec<MpdqnSnapshot>>,
}

impl TeamCheckpoint {
    /// Writes to a temporary sibling, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self)?;
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        std::fs::write(&tmp, json)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::TopologyConfig;

    fn cfg(u: usize) -> EnvConfig {
        EnvConfig {
            topology: TopologyConfig {
                avs_per_cell: u,
                rics_elements: 8,
                ..Default::default()
            },
            steps_per_episode: 3,
            ..Default::default()
        }
    }

    #[test]
    fn checkpoint_roundtrip_and_mismatch() {
        let c = cfg(2);
        let t = TrainConfig::default();
        let team = Team::new(&c, &t, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("team.json");
        team.checkpoint().save(&path).unwrap();
        let ck = TeamCheckpoint::load(&path).unwrap();
        assert_eq!(ck, team.checkpoint());
        let mut back = Team::from_checkpoint(&ck, &c, &t).unwrap();
        let (s, _) = env::reset(&c, 3).unwrap();
        let obs = env::observe(&c, &s);
        let mut orig = team.clone();
        assert_eq!(back.act(&c, &obs).unwrap(), orig.act(&c, &obs).unwrap());

        let err = Team::from_checkpoint(&ck, &cfg(3), &t).unwrap_err();
        assert!(err.to_string().contains("avs_per_cell=2"), "{err}");
    }
}
