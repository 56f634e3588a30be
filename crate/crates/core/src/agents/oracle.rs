use serde::{Deserialize, Serialize};

use crate::env::{self, AvAction, CellAction, EnvConfig, EnvRng, GlobalState, JointAction};
use crate::exec::{self, ExecMode};
use crate::mec;
use crate::phy::{self, RicsAction, RicsConfig};
use crate::scenario::CellCsi;
use crate::{Error, Result};

pub const MAX_AVS: usize = 3;
pub const MAX_V2VS: usize = 2;
pub const MAX_SUB_BLOCKS: usize = 2;
pub const MAX_PHASE_BITS: u32 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub action: JointAction,
    pub reward: f64,
    /// Number of candidate joint actions covered (feasible sharing
    /// assignments × phase actions × ratio grid points).
    pub evaluations: u64,
}

/// Offload ratio grid `0, 1/(n-1), ..., 1`.
pub fn ratio_grid(grid_n: usize) -> Vec<f64> {
    match grid_n {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Every sharing choice vector in `{0..=V}^U` that respects the
/// one-AV-per-pair constraint, in lexicographic order.
pub fn feasible_sharings(avs: usize, v2vs: usize) -> Vec<Vec<usize>> {
    let base = v2vs + 1;
    let total = base.pow(avs as u32);
    (0..total)
        .filter_map(|mut code| {
            let mut s = vec![0; avs];
            for x in s.iter_mut().rev() {
                *x = code % base;
                code /= base;
            }
            let mut used = vec![false; v2vs];
            for &k in &s {
                if k > 0 {
                    if used[k - 1] {
                        return None;
                    }
                    used[k - 1] = true;
                }
            }
            Some(s)
        })
        .collect()
}

fn guard(cfg: &EnvConfig) -> Result<()> {
    let too_large = cfg.cells() != 1
        || cfg.avs() > MAX_AVS
        || cfg.v2vs() > MAX_V2VS
        || cfg.sub_blocks() > MAX_SUB_BLOCKS
        || cfg.rics.phase_bits > MAX_PHASE_BITS;
    if too_large {
        return Err(Error::TooLarge(format!(
            "oracle needs C = 1, U <= {MAX_AVS}, V <= {MAX_V2VS}, Q <= {MAX_SUB_BLOCKS}, h <= {MAX_PHASE_BITS}; \
             got C = {}, U = {}, V = {}, Q = {}, h = {}",
            cfg.cells(),
            cfg.avs(),
            cfg.v2vs(),
            cfg.sub_blocks(),
            cfg.rics.phase_bits
        )));
    }
    Ok(())
}

/// Brute-force maximizer of the single-slot reward on frozen channels.
///
/// Every candidate is scored with a copy of `rng`, so all candidates see
/// the same Monte-Carlo draws. Offload ratios are optimized per AV over the
/// grid, which is exact because an AV's ratio only affects its own term.
pub fn exhaustive_oracle(
    cfg: &EnvConfig,
    state: &GlobalState,
    rng: &EnvRng,
    grid_n: usize,
    mode: ExecMode,
) -> Result<OracleResult> {
    cfg.validate()?;
    guard(cfg)?;
    if grid_n == 0 {
        return Err(Error::config("oracle.grid_n", "must be at least 1"));
    }
    let grid = ratio_grid(grid_n);
    let sharings = feasible_sharings(cfg.avs(), cfg.v2vs());
    let phases = RicsAction::enumerate(&cfg.rics);
    let per_av_cpu = cfg.compute.per_av_share(cfg.cells(), cfg.avs());
    let bs_delay = mec::bs_processing_delays(&state.tasks, per_av_cpu);
    let threshold = phy::outage_threshold(&cfg.phy)?;

    let best_per_phase = exec::map(mode, &phases, |rics| -> Result<(f64, CellAction)> {
        let mut best: Option<(f64, CellAction)> = None;
        for s in &sharings {
            let candidate = CellAction {
                rics: rics.clone(),
                avs: s.iter().map(|&share| AvAction { share, rho: 0.0 }).collect(),
            };
            let joint = JointAction {
                cells: vec![candidate.clone()],
            };
            let b = env::compute_reward(cfg, state, &joint, &mut rng.clone())?;
            let mut total = 0.0;
            let mut avs = candidate.avs;
            for (u, a) in avs.iter_mut().enumerate() {
                let rate = b.diagnostics.av_rate[0][u];
                let mut top = (f64::NEG_INFINITY, 0.0);
                for &rho in &grid {
                    let v = mec::safety_factor(
                        rho,
                        &state.tasks[0][u],
                        rate,
                        state.local_cpu[0][u],
                        bs_delay[0][u],
                        &cfg.compute,
                    )?
                    .value;
                    if v > top.0 {
                        top = (v, rho);
                    }
                }
                total += top.0;
                a.rho = top.1;
            }
            total += b.diagnostics.v2v_mean_sinr[0]
                .iter()
                .map(|g| (g - threshold).min(0.0))
                .sum::<f64>();
            if best.as_ref().is_none_or(|(r, _)| total > *r) {
                best = Some((total, CellAction { rics: candidate.rics, avs }));
            }
        }
        Ok(best.expect("the all-private assignment is always feasible"))
    });

    let mut best: Option<(f64, CellAction)> = None;
    for r in best_per_phase {
        let (v, a) = r?;
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, a));
        }
    }
    let (_, cell) = best.expect("at least one phase action");
    let action = JointAction { cells: vec![cell] };
    let reward = env::compute_reward(cfg, state, &action, &mut rng.clone())?.reward;
    let evaluations = (sharings.len() as u64)
        .saturating_mul(phases.len() as u64)
        .saturating_mul((grid_n as u64).saturating_pow(cfg.avs() as u32));
    Ok(OracleResult {
        action,
        reward,
        evaluations,
    })
}

/// `|h_ub + sum_k h_rb θ_r h_ur|^2` for AV `u` under `action`.
pub fn phase_gain(cfg: &RicsConfig, elements: usize, csi: &CellCsi, u: usize, action: &RicsAction) -> Result<f64> {
    let coeffs = phy::expand_action(action, cfg, elements)?;
    let av = &csi.avs[u];
    Ok(phy::composite_gain(av.h_ub, &csi.h_rb, &coeffs.theta_r, &av.h_ur)?.norm_sqr())
}

/// Phase action maximizing the composite V2I gain of AV `u`.
pub fn best_phase_gain(cfg: &RicsConfig, elements: usize, csi: &CellCsi, u: usize) -> Result<(RicsAction, f64)> {
    let mut best = (RicsAction::zeros(cfg.sub_blocks), f64::NEG_INFINITY);
    for a in RicsAction::enumerate(cfg) {
        let g = phase_gain(cfg, elements, csi, u, &a)?;
        if g > best.1 {
            best = (a, g);
        }
    }
    Ok(best)
}
