//! Command-line front end: `train`, `eval`, `sweep` and `oracle`.
//!
//! Every artifact lands under `--out`. A failed command leaves a `FAILED`
//! file there with the error message; files still being written carry a
//! `.partial` suffix.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::agents::oracle::exhaustive_oracle;
use crate::agents::trainer::{evaluate_with, train_with, EpisodeMetrics, EvalMetrics, TrainHooks};
use crate::agents::{RandomPolicy, Team, TeamCheckpoint, TeamPolicy};
use crate::config::{RunConfig, SweepAxis, SweepSpec};
use crate::env::{self, JointAction, TrajectoryRow};
use crate::exec::{self, ExecMode};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "rics-v2x", version, about = "RICS-assisted vehicular MEC simulator and multi-agent trainer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run independent seeds and sweep points one at a time.
    #[arg(long, global = true)]
    pub sequential: bool,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set train.episodes=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated seeds, replacing `run.seeds`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyKind {
    Trained,
    Random,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train agents, one run per seed.
    Train {
        #[command(flatten)]
        common: Common,
        /// Also write per-step trajectory.csv files.
        #[arg(long)]
        trajectory: bool,
        /// Continue from an existing checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Greedy rollouts of a trained checkpoint or a baseline policy.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "trained")]
        policy: PolicyKind,
        #[arg(long)]
        trajectory: bool,
    },
    /// Train and evaluate over one configuration axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// One of v2v_count, p_u_dbm, s_bits, num_cells, psi.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Exhaustive single-slot optimum on tiny instances, one per seed.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Sweep { common, .. }
            | Command::Oracle { common } => common,
        }
    }
}

/// Parse arguments, run, and map the outcome to an exit status.
pub fn main_entry() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let out = cli.command.common().out.clone();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            let _ = fs::create_dir_all(&out);
            let _ = fs::write(out.join("FAILED"), format!("{e}\n"));
            match e {
                Error::Config { .. } | Error::Serde(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let common = cli.command.common();
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(seeds) = &common.seeds {
        cfg.run.seeds = seeds.clone();
        cfg.validate()?;
    }
    fs::create_dir_all(&common.out)?;
    let _ = fs::remove_file(common.out.join("FAILED"));
    fs::write(common.out.join("effective_config.toml"), cfg.to_toml()?)?;
    let mode = if cli.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    };
    match &cli.command {
        Command::Train { trajectory, resume, .. } => cmd_train(&cfg, &common.out, *trajectory, *resume, mode),
        Command::Eval {
            checkpoint,
            policy,
            trajectory,
            ..
        } => cmd_eval(&cfg, &common.out, checkpoint.as_deref(), *policy, *trajectory),
        Command::Sweep { axis, values, .. } => {
            let spec = SweepSpec {
                axis: SweepAxis::parse(axis)?,
                values: values.clone(),
                seeds: cfg.run.seeds.clone(),
            };
            cmd_sweep(&cfg, &spec, &common.out, mode)
        }
        Command::Oracle { .. } => cmd_oracle(&cfg, &common.out),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// CSV file written under a `.partial` name until [`CsvSink::finish`].
struct CsvSink {
    writer: csv::Writer<File>,
    tmp: PathBuf,
    path: PathBuf,
}

impl CsvSink {
    fn create(path: &Path, append_to: Option<&Path>) -> Result<Self> {
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".partial");
        let tmp = PathBuf::from(tmp);
        let has_rows = match append_to {
            Some(old) if old.exists() => {
                fs::copy(old, &tmp)?;
                true
            }
            _ => false,
        };
        let file = fs::OpenOptions::new()
            .create(true)
            .append(has_rows)
            .write(true)
            .truncate(!has_rows)
            .open(&tmp)?;
        let writer = csv::WriterBuilder::new().has_headers(!has_rows).from_writer(file);
        Ok(Self {
            writer,
            tmp,
            path: path.to_path_buf(),
        })
    }

    fn row<T: Serialize>(&mut self, r: &T) -> Result<()> {
        self.writer.serialize(r)?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        drop(self.writer);
        fs::rename(&self.tmp, &self.path)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub schema_version: u32,
    pub run_name: String,
    pub config_hash: String,
    pub seed: u64,
    pub episodes_done: usize,
    pub final_episode: Option<EpisodeMetrics>,
    /// Mean reward over the last 50 episodes of this invocation.
    pub final50_reward_mean: f64,
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn train_one(cfg: &RunConfig, dir: &Path, seed: u64, trajectory: bool, resume: bool) -> Result<TrainSummary> {
    fs::create_dir_all(dir)?;
    let env_cfg = cfg.env();
    let ck_path = dir.join("checkpoint.json");
    let metrics_path = dir.join("metrics.csv");
    let start = if resume && ck_path.exists() {
        Some(Team::from_checkpoint(&TeamCheckpoint::load(&ck_path)?, &env_cfg, &cfg.train)?)
    } else {
        None
    };
    let resuming = start.is_some();
    let mut metrics = CsvSink::create(&metrics_path, resuming.then_some(metrics_path.as_path()))?;
    let mut traj = if trajectory {
        Some(CsvSink::create(&dir.join("trajectory.csv"), None)?)
    } else {
        None
    };
    let mut on_episode = |team: &Team, m: &EpisodeMetrics| -> Result<()> {
        metrics.row(m)?;
        metrics.writer.flush()?;
        log::info!(
            "seed {seed} episode {}/{}: reward {:.4}, penalty rate {:.3}",
            m.episode + 1,
            cfg.train.episodes,
            m.reward_mean,
            m.penalty_rate
        );
        if (m.episode + 1) % 50 == 0 {
            team.checkpoint().save(&ck_path)?;
        }
        Ok(())
    };
    let mut on_step = |r: &TrajectoryRow| -> Result<()> {
        match traj.as_mut() {
            Some(t) => t.row(r),
            None => Ok(()),
        }
    };
    let mut hooks = TrainHooks {
        on_step: Some(&mut on_step),
        on_episode: Some(&mut on_episode),
    };
    let run = train_with(&env_cfg, &cfg.train, seed, start, &mut hooks)?;
    drop(hooks);
    run.team.checkpoint().save(&ck_path)?;
    metrics.finish()?;
    if let Some(t) = traj {
        t.finish()?;
    }
    let tail: Vec<f64> = run.metrics.iter().rev().take(50).map(|m| m.reward_mean).collect();
    let summary = TrainSummary {
        schema_version: SCHEMA_VERSION,
        run_name: cfg.run.name.clone(),
        config_hash: cfg.hash(),
        seed,
        episodes_done: run.team.episodes_done,
        final_episode: run.metrics.last().cloned(),
        final50_reward_mean: if tail.is_empty() {
            0.0
        } else {
            tail.iter().sum::<f64>() / tail.len() as f64
        },
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn cmd_train(cfg: &RunConfig, out: &Path, trajectory: bool, resume: bool, mode: ExecMode) -> Result<()> {
    let results = exec::map(mode, &cfg.run.seeds, |&seed| {
        train_one(cfg, &seed_dir(out, seed), seed, trajectory, resume)
    });
    let mut failures = Vec::new();
    for (seed, r) in cfg.run.seeds.iter().zip(results) {
        if let Err(e) = r {
            failures.push(format!("seed {seed}: {e}"));
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Domain(failures.join("; ")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedEval {
    pub seed: u64,
    pub metrics: EvalMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub schema_version: u32,
    pub config_hash: String,
    pub policy: String,
    pub rics_enabled: bool,
    pub per_seed: Vec<SeedEval>,
    pub mean_sum_safety: f64,
    pub mean_avg_safety: f64,
    pub mean_cell_safety: f64,
    pub mean_v2v_rate: f64,
    pub mean_penalty_rate: f64,
}

fn summarize(cfg: &RunConfig, policy: &str, per_seed: Vec<SeedEval>) -> EvalSummary {
    let n = per_seed.len().max(1) as f64;
    let mean = |f: fn(&EvalMetrics) -> f64| per_seed.iter().map(|s| f(&s.metrics)).sum::<f64>() / n;
    EvalSummary {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        policy: policy.into(),
        rics_enabled: cfg.rics.enabled,
        mean_sum_safety: mean(|m| m.sum_safety),
        mean_avg_safety: mean(|m| m.avg_safety),
        mean_cell_safety: mean(|m| m.cell_safety),
        mean_v2v_rate: mean(|m| m.v2v_rate),
        mean_penalty_rate: mean(|m| m.penalty_rate),
        per_seed,
    }
}

fn cmd_eval(
    cfg: &RunConfig,
    out: &Path,
    checkpoint: Option<&Path>,
    policy: PolicyKind,
    trajectory: bool,
) -> Result<()> {
    let env_cfg = cfg.env();
    let mut traj = if trajectory {
        Some(CsvSink::create(&out.join("trajectory.csv"), None)?)
    } else {
        None
    };
    let team = match policy {
        PolicyKind::Trained => {
            let path = checkpoint
                .ok_or_else(|| Error::config("--checkpoint", "required for the trained policy"))?;
            Some(Team::from_checkpoint(&TeamCheckpoint::load(path)?, &env_cfg, &cfg.train)?)
        }
        PolicyKind::Random => None,
    };
    let mut per_seed = Vec::with_capacity(cfg.run.seeds.len());
    for &seed in &cfg.run.seeds {
        let mut random = RandomPolicy::new(seed);
        let mut trained = team.clone();
        let p: &mut dyn TeamPolicy = match trained.as_mut() {
            Some(t) => t,
            None => &mut random,
        };
        let mut on_step = |r: &TrajectoryRow| -> Result<()> {
            match traj.as_mut() {
                Some(t) => t.row(r),
                None => Ok(()),
            }
        };
        let metrics = evaluate_with(p, &env_cfg, cfg.run.eval_episodes, seed, &mut on_step)?;
        per_seed.push(SeedEval { seed, metrics });
    }
    if let Some(t) = traj {
        t.finish()?;
    }
    let name = match policy {
        PolicyKind::Trained => "trained",
        PolicyKind::Random => "random",
    };
    write_json(&out.join("eval.json"), &summarize(cfg, name, per_seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub axis_value: f64,
    pub seed: u64,
    pub status: String,
    pub sum_safety: f64,
    pub avg_safety: f64,
    pub cell_safety: f64,
    pub v2v_rate: f64,
    pub penalty_rate: f64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PointRecord {
    point_hash: String,
    seed: u64,
    metrics: EvalMetrics,
}

fn sweep_point(cfg: &RunConfig, dir: &Path, seed: u64) -> Result<EvalMetrics> {
    let record_path = dir.join("point.json");
    let hash = cfg.point_hash();
    if let Ok(bytes) = fs::read(&record_path) {
        if let Ok(rec) = serde_json::from_slice::<PointRecord>(&bytes) {
            if rec.point_hash == hash && rec.seed == seed {
                log::info!("reusing cached result in {}", dir.display());
                return Ok(rec.metrics);
            }
        }
    }
    train_one(cfg, dir, seed, false, false)?;
    let env_cfg = cfg.env();
    let ck = TeamCheckpoint::load(&dir.join("checkpoint.json"))?;
    let mut team = Team::from_checkpoint(&ck, &env_cfg, &cfg.train)?;
    let metrics = crate::agents::evaluate(&mut team, &env_cfg, cfg.run.eval_episodes, seed)?;
    write_json(
        &record_path,
        &PointRecord {
            point_hash: hash,
            seed,
            metrics: metrics.clone(),
        },
    )?;
    Ok(metrics)
}

fn cmd_sweep(cfg: &RunConfig, spec: &SweepSpec, out: &Path, mode: ExecMode) -> Result<()> {
    spec.validate()?;
    let jobs: Vec<(f64, u64)> = spec
        .values
        .iter()
        .flat_map(|&v| spec.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results = exec::map(mode, &jobs, |&(value, seed)| -> Result<EvalMetrics> {
        let point = spec.axis.apply(cfg, value)?;
        let dir = out
            .join("points")
            .join(format!("{}={value}", spec.axis.name()))
            .join(format!("seed-{seed}"));
        sweep_point(&point, &dir, seed)
    });
    let mut sink = CsvSink::create(&out.join("sweep.csv"), None)?;
    let mut failures = Vec::new();
    for (&(value, seed), r) in jobs.iter().zip(results) {
        let row = match r {
            Ok(m) => SweepRow {
                axis: spec.axis.name().into(),
                axis_value: value,
                seed,
                status: "ok".into(),
                sum_safety: m.sum_safety,
                avg_safety: m.avg_safety,
                cell_safety: m.cell_safety,
                v2v_rate: m.v2v_rate,
                penalty_rate: m.penalty_rate,
                error: String::new(),
            },
            Err(e) => {
                failures.push(format!("{}={value} seed {seed}: {e}", spec.axis.name()));
                SweepRow {
                    axis: spec.axis.name().into(),
                    axis_value: value,
                    seed,
                    status: "failed".into(),
                    sum_safety: f64::NAN,
                    avg_safety: f64::NAN,
                    cell_safety: f64::NAN,
                    v2v_rate: f64::NAN,
                    penalty_rate: f64::NAN,
                    error: e.to_string(),
                }
            }
        };
        sink.row(&row)?;
    }
    sink.finish()?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{} sweep point(s) failed: {}", failures.len(), failures.join("; "))))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub seed: u64,
    pub reward: f64,
    pub evaluations: u64,
    /// `reflect:transmit` phase indices per sub-block, `|`-separated.
    pub phases: String,
    pub shares: String,
    pub rhos: String,
}

impl OracleRow {
    pub fn new(seed: u64, reward: f64, evaluations: u64, action: &JointAction) -> Self {
        let cell = &action.cells[0];
        let join = |it: Vec<String>| it.join("|");
        Self {
            seed,
            reward,
            evaluations,
            phases: join(cell.rics.blocks.iter().map(|b| format!("{}:{}", b.reflect, b.transmit)).collect()),
            shares: join(cell.avs.iter().map(|a| a.share.to_string()).collect()),
            rhos: join(cell.avs.iter().map(|a| a.rho.to_string()).collect()),
        }
    }
}

fn cmd_oracle(cfg: &RunConfig, out: &Path) -> Result<()> {
    let env_cfg = cfg.env();
    let mut sink = CsvSink::create(&out.join("oracle.csv"), None)?;
    for &seed in &cfg.run.seeds {
        let (state, rng) = env::reset(&env_cfg, seed)?;
        let o = exhaustive_oracle(&env_cfg, &state, &rng, cfg.run.oracle_grid_n, ExecMode::Parallel)?;
        sink.row(&OracleRow::new(seed, o.reward, o.evaluations, &o.action))?;
    }
    sink.finish()
}
