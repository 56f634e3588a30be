//! Run configuration: TOML file, `--set` overrides, validation and hashing.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::TrainConfig;
use crate::env::{EnvConfig, RewardConfig};
use crate::mec::ComputeConfig;
use crate::phy::{PhyConfig, RicsConfig};
use crate::scenario::{FadingParams, TopologyConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Greedy evaluation episodes per seed.
    pub eval_episodes: usize,
    /// Offload-ratio grid size of the exhaustive oracle.
    pub oracle_grid_n: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            name: "run".into(),
            seeds: vec![0],
            eval_episodes: 10,
            oracle_grid_n: 101,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub topology: TopologyConfig,
    pub fading: FadingParams,
    pub rics: RicsConfig,
    pub phy: PhyConfig,
    pub compute: ComputeConfig,
    pub reward: RewardConfig,
    pub train: TrainConfig,
}

const SECTIONS: [&str; 8] = ["run", "topology", "fading", "rics", "phy", "compute", "reward", "train"];

impl RunConfig {
    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            topology: self.topology.clone(),
            fading: self.fading.clone(),
            rics: self.rics.clone(),
            phy: self.phy.clone(),
            compute: self.compute.clone(),
            reward: self.reward.clone(),
            steps_per_episode: self.train.steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.seeds.is_empty() {
            return Err(Error::config("run.seeds", "at least one seed is required"));
        }
        if self.run.eval_episodes == 0 {
            return Err(Error::config("run.eval_episodes", "must be at least 1"));
        }
        if self.run.oracle_grid_n == 0 {
            return Err(Error::config("run.oracle_grid_n", "must be at least 1"));
        }
        self.env().validate()?;
        self.train.validate()
    }

    /// Parse TOML text, apply overrides, validate.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Serde(format!("config parse error: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Serde(format!("config error: {}", e.message())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Defaults, then the file (if any), then `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Hash of everything that influences a single training run, excluding
    /// the seed list and run name.
    pub fn point_hash(&self) -> String {
        let mut c = self.clone();
        c.run.name.clear();
        c.run.seeds.clear();
        c.hash()
    }
}

fn default_table() -> toml::Table {
    toml::Table::try_from(RunConfig::default()).expect("defaults serialize")
}

/// Resolve `key` (either `section.field` or a bare field name) to a section.
fn resolve_key(key: &str) -> Result<(String, String)> {
    if let Some((section, field)) = key.split_once('.') {
        if !SECTIONS.contains(&section) {
            return Err(Error::config(key, format!("unknown section `{section}`")));
        }
        return Ok((section.to_string(), field.to_string()));
    }
    let defaults = default_table();
    let mut hits: Vec<&str> = SECTIONS
        .iter()
        .copied()
        .filter(|s| {
            defaults
                .get(*s)
                .and_then(|t| t.as_table())
                .is_some_and(|t| t.contains_key(key))
        })
        .collect();
    // optional fields without a default value
    if hits.is_empty() && key == "bs_cpu_total" {
        hits.push("compute");
    }
    match hits.as_slice() {
        [one] => Ok((one.to_string(), key.to_string())),
        [] => Err(Error::config(key, "unknown configuration key")),
        many => Err(Error::config(
            key,
            format!("ambiguous key; qualify it as one of {}", many.join(", ")),
        )),
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("single key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config("--set", format!("expected key=value, got `{spec}`")))?;
    let (section, field) = resolve_key(key.trim())?;
    let entry = table
        .entry(section.clone())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let t = entry
        .as_table_mut()
        .ok_or_else(|| Error::config(&section, "expected a table"))?;
    t.insert(field, parse_value(raw.trim()));
    Ok(())
}

/// Axis of a parameter sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    V2vCount,
    PUDbm,
    SBits,
    NumCells,
    Psi,
}

impl SweepAxis {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "v2v_count" => Self::V2vCount,
            "p_u_dbm" => Self::PUDbm,
            "s_bits" => Self::SBits,
            "num_cells" => Self::NumCells,
            "psi" => Self::Psi,
            _ => {
                return Err(Error::config(
                    "--axis",
                    format!("unknown axis `{name}` (v2v_count, p_u_dbm, s_bits, num_cells, psi)"),
                ))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::V2vCount => "v2v_count",
            Self::PUDbm => "p_u_dbm",
            Self::SBits => "s_bits",
            Self::NumCells => "num_cells",
            Self::Psi => "psi",
        }
    }

    /// Configuration of one sweep point.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::config(self.name(), format!("expected a whole number, got {v}")))
            }
        };
        let mut c = base.clone();
        match self {
            Self::V2vCount => c.topology.v2v_per_cell = count(value)?,
            Self::PUDbm => c.phy.p_u_dbm = value,
            Self::SBits => {
                c.compute.task_bits_min = value;
                c.compute.task_bits_max = value;
            }
            Self::NumCells => c.topology.num_cells = count(value)?,
            Self::Psi => c.rics.psi = value,
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("--values", "at least one value is required"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("--seeds", "at least one seed is required"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_table_defaults() {
        let c = RunConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(c.topology.rics_elements, 30);
        assert_eq!(c.topology.avs_per_cell, 10);
        assert_eq!(c.topology.v2v_per_cell, 2);
        assert_eq!(c.rics.sub_blocks, 2);
        assert_eq!(c.rics.phase_bits, 2);
        assert_eq!(c.train.episodes, 600);
        assert_eq!(c.train.steps, 200);
        assert_eq!(c.train.batch, 32);
        assert_eq!(c.train.lr, 1e-4);
        assert_eq!(c.train.gamma, 0.95);
        assert_eq!(c.train.memory, 5000);
        assert_eq!(c.reward.penalty, 10.0);
        assert_eq!(c.phy.p_outage, 0.01);
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn override_changes_one_field() {
        let c = RunConfig::from_toml_str("", &["v2v_per_cell=4".into()]).unwrap();
        let mut expect = RunConfig::default();
        expect.topology.v2v_per_cell = 4;
        assert_eq!(c, expect);
        let q = RunConfig::from_toml_str("", &["topology.v2v_per_cell=4".into()]).unwrap();
        assert_eq!(q, expect);
    }

    #[test]
    fn precedence_defaults_file_overrides() {
        let text = "[train]\nlr = 0.001\nepisodes = 5\n";
        let c = RunConfig::from_toml_str(text, &["episodes=7".into()]).unwrap();
        assert_eq!(c.train.lr, 0.001);
        assert_eq!(c.train.episodes, 7);
        assert_eq!(c.train.batch, 32);
    }

    #[test]
    fn energy_split_must_sum_to_one() {
        let err = RunConfig::from_toml_str("", &["beta_r=0.7".into()]).unwrap_err();
        assert!(err.to_string().contains("rics.beta_t"), "{err}");
    }

    #[test]
    fn unknown_and_malformed_input_rejected() {
        assert!(RunConfig::from_toml_str("[train]\nlearning_rate = 1\n", &[]).is_err());
        assert!(RunConfig::from_toml_str("", &["no_such_key=1".into()]).is_err());
        assert!(RunConfig::from_toml_str("", &["nosuch.lr=1".into()]).is_err());
        assert!(RunConfig::from_toml_str("", &["lr".into()]).is_err());
        let err = RunConfig::from_toml_str("[train]\nlr = = 3\n", &[]).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn roundtrip_through_toml() {
        let mut c = RunConfig::default();
        c.compute.bs_cpu_total = Some(123e9);
        c.run.seeds = vec![3, 1, 4];
        c.phy.noise_dbm = -110.000_000_1;
        let back = RunConfig::from_toml_str(&c.to_toml().unwrap(), &[]).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn hashes_track_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.phy.p_u_dbm = 26.0;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.run.seeds = vec![9];
        assert_eq!(a.point_hash(), c.point_hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn sweep_axes() {
        let base = RunConfig::default();
        assert_eq!(SweepAxis::parse("v2v_count").unwrap().apply(&base, 3.0).unwrap().topology.v2v_per_cell, 3);
        let s = SweepAxis::SBits.apply(&base, 2e6).unwrap();
        assert_eq!((s.compute.task_bits_min, s.compute.task_bits_max), (2e6, 2e6));
        assert!(SweepAxis::NumCells.apply(&base, 1.5).is_err());
        assert!(SweepAxis::parse("speed").is_err());
        for name in ["v2v_count", "p_u_dbm", "s_bits", "num_cells", "psi"] {
            assert_eq!(SweepAxis::parse(name).unwrap().name(), name);
        }
    }
}
