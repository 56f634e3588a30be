//! RICS coefficient matrices and link-quality math.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scenario::{CellCsi, FadingParams, LinkBudget};
use crate::{Error, Result, C64};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RicsConfig {
    /// Number of sub-blocks sharing a phase pair; must divide the element count.
    pub sub_blocks: usize,
    /// Phase resolution in bits.
    pub phase_bits: u32,
    /// Reflection energy share.
    pub beta_r: f64,
    /// Transmission energy share.
    pub beta_t: f64,
    /// Amplitude adjustment applied to every transmission coefficient.
    pub psi: f64,
    /// `false` replaces both coefficient matrices by zero (no-RICS ablation).
    pub enabled: bool,
}

impl Default for RicsConfig {
    fn default() -> Self {
        Self {
            sub_blocks: 2,
            phase_bits: 2,
            beta_r: 0.5,
            beta_t: 0.5,
            psi: 1.3,
            enabled: true,
        }
    }
}

impl RicsConfig {
    pub fn validate(&self, elements: usize) -> Result<()> {
        if self.sub_blocks == 0 || elements % self.sub_blocks != 0 {
            return Err(Error::config(
                "rics.sub_blocks",
                format!("must divide the element count {elements}"),
            ));
        }
        if self.phase_bits == 0 || self.phase_bits > 8 {
            return Err(Error::config("rics.phase_bits", "must be in 1..=8"));
        }
        for (name, b) in [("beta_r", self.beta_r), ("beta_t", self.beta_t)] {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::config(format!("rics.{name}"), "must be in [0, 1]"));
            }
        }
        if (self.beta_r + self.beta_t - 1.0).abs() > 1e-9 {
            return Err(Error::config("rics.beta_t", "beta_r + beta_t must equal 1"));
        }
        if !(self.psi >= 0.0 && self.psi.is_finite()) {
            return Err(Error::config("rics.psi", "must be non-negative"));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        1 << self.phase_bits
    }

    /// Discrete choices per sub-block agent: every (reflect, transmit) pair.
    pub fn block_actions(&self) -> usize {
        self.levels() * self.levels()
    }
}

/// `{0, 2pi/2^h, ..., 2pi(2^h - 1)/2^h}`.
pub fn phase_codebook(bits: u32) -> Result<Vec<f64>> {
    if bits == 0 {
        return Err(Error::config("rics.phase_bits", "must be at least 1"));
    }
    let n = 1usize << bits;
    Ok((0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect())
}

/// Phase indices of one sub-block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct BlockPhases {
    pub reflect: usize,
    pub transmit: usize,
}

impl BlockPhases {
    /// Decode a flat sub-block agent action (`reflect * levels + transmit`).
    pub fn from_index(index: usize, levels: usize) -> Self {
        Self {
            reflect: index / levels,
            transmit: index % levels,
        }
    }

    pub fn index(&self, levels: usize) -> usize {
        self.reflect * levels + self.transmit
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RicsAction {
    pub blocks: Vec<BlockPhases>,
}

impl RicsAction {
    pub fn zeros(sub_blocks: usize) -> Self {
        Self {
            blocks: vec![BlockPhases::default(); sub_blocks],
        }
    }

    /// All `(2^h)^(2Q)` actions in lexicographic order of flat block indices.
    pub fn enumerate(cfg: &RicsConfig) -> Vec<RicsAction> {
        let per_block = cfg.block_actions();
        let total = per_block.pow(cfg.sub_blocks as u32);
        (0..total)
            .map(|mut code| {
                let mut blocks = vec![BlockPhases::default(); cfg.sub_blocks];
                for b in blocks.iter_mut().rev() {
                    *b = BlockPhases::from_index(code % per_block, cfg.levels());
                    code /= per_block;
                }
                RicsAction { blocks }
            })
            .collect()
    }
}

/// Diagonals of the reflection and transmission coefficient matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientMatrices {
    pub theta_r: Vec<C64>,
    pub theta_t: Vec<C64>,
}

impl CoefficientMatrices {
    pub fn zeros(elements: usize) -> Self {
        Self {
            theta_r: vec![C64::new(0.0, 0.0); elements],
            theta_t: vec![C64::new(0.0, 0.0); elements],
        }
    }
}

/// Expand per-sub-block phase indices into per-element coefficients.
pub fn expand_action(
    action: &RicsAction,
    cfg: &RicsConfig,
    elements: usize,
) -> Result<CoefficientMatrices> {
    if action.blocks.len() != cfg.sub_blocks {
        return Err(Error::Dimension {
            expected: cfg.sub_blocks,
            got: action.blocks.len(),
        });
    }
    if !cfg.enabled {
        return Ok(CoefficientMatrices::zeros(elements));
    }
    let book = phase_codebook(cfg.phase_bits)?;
    let per_block = elements / cfg.sub_blocks;
    let amp_r = cfg.beta_r.sqrt();
    let amp_t = cfg.psi * cfg.beta_t.sqrt();
    let mut out = CoefficientMatrices::zeros(elements);
    for (q, b) in action.blocks.iter().enumerate() {
        let (Some(&pr), Some(&pt)) = (book.get(b.reflect), book.get(b.transmit)) else {
            return Err(Error::Domain(format!(
                "phase index ({}, {}) outside codebook of size {}",
                b.reflect,
                b.transmit,
                book.len()
            )));
        };
        let r = C64::from_polar(amp_r, pr);
        let t = C64::from_polar(amp_t, pt);
        for k in q * per_block..(q + 1) * per_block {
            out.theta_r[k] = r;
            out.theta_t[k] = t;
        }
    }
    Ok(out)
}

/// `direct + sum_k h_out[k] theta[k] h_in[k]`.
pub fn composite_gain(direct: C64, h_out: &[C64], theta: &[C64], h_in: &[C64]) -> Result<C64> {
    check_len(h_out.len(), theta.len())?;
    check_len(h_out.len(), h_in.len())?;
    Ok(direct
        + h_out
            .iter()
            .zip(theta)
            .zip(h_in)
            .map(|((o, t), i)| o * t * i)
            .sum::<C64>())
}

/// As [`composite_gain`] with `h_out` conjugated entrywise (`h^H Theta h`).
pub fn composite_gain_conj(
    direct: C64,
    h_out: &[C64],
    theta: &[C64],
    h_in: &[C64],
) -> Result<C64> {
    check_len(h_out.len(), theta.len())?;
    check_len(h_out.len(), h_in.len())?;
    Ok(direct
        + h_out
            .iter()
            .zip(theta)
            .zip(h_in)
            .map(|((o, t), i)| o.conj() * t * i)
            .sum::<C64>())
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhyConfig {
    /// Total V2I bandwidth (Hz), split equally among a cell's AVs.
    pub bandwidth: f64,
    /// Noise power over the band (dBm).
    pub noise_dbm: f64,
    /// AV transmit power (dBm).
    pub p_u_dbm: f64,
    /// V2V transmit power (dBm).
    pub p_t_dbm: f64,
    /// Linear V2V SINR threshold.
    pub gamma_th: f64,
    /// Tolerated V2V outage probability.
    pub p_outage: f64,
    /// Slope of the mean-SINR threshold transform.
    pub varpi: f64,
    /// Slope of the smooth step used for outage estimates.
    pub delta: f64,
    /// Fading redraws used to estimate the mean V2V SINR.
    pub n_mc: usize,
}

impl Default for PhyConfig {
    fn default() -> Self {
        Self {
            bandwidth: 10e6,
            noise_dbm: -110.0,
            p_u_dbm: 29.0,
            p_t_dbm: 22.0,
            gamma_th: 2.0,
            p_outage: 0.01,
            varpi: 5.0,
            delta: 5.0,
            n_mc: 32,
        }
    }
}

impl PhyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) {
            return Err(Error::config("phy.bandwidth", "must be positive"));
        }
        for (name, v) in [
            ("noise_dbm", self.noise_dbm),
            ("p_u_dbm", self.p_u_dbm),
            ("p_t_dbm", self.p_t_dbm),
        ] {
            if !v.is_finite() {
                return Err(Error::config(format!("phy.{name}"), "must be finite"));
            }
        }
        if !(self.p_outage > 0.0 && self.p_outage < 1.0) {
            return Err(Error::config("phy.p_outage", "must be in (0, 1)"));
        }
        if !(self.varpi > 0.0) {
            return Err(Error::config("phy.varpi", "must be positive"));
        }
        if !(self.delta > 0.0) {
            return Err(Error::config("phy.delta", "must be positive"));
        }
        if self.n_mc == 0 {
            return Err(Error::config("phy.n_mc", "must be at least 1"));
        }
        Ok(())
    }

    pub fn noise_power(&self) -> f64 {
        dbm_to_watts(self.noise_dbm)
    }

    pub fn p_u(&self) -> f64 {
        dbm_to_watts(self.p_u_dbm)
    }

    pub fn p_t(&self) -> f64 {
        dbm_to_watts(self.p_t_dbm)
    }
}

/// Binary spectrum-sharing indicators, `omega[u][v]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingMatrix {
    pub omega: Vec<Vec<bool>>,
}

impl SharingMatrix {
    pub fn zeros(avs: usize, v2vs: usize) -> Self {
        Self {
            omega: vec![vec![false; v2vs]; avs],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.omega[u][v]
    }

    /// At most one V2V per AV channel and at most one AV channel per V2V.
    pub fn is_feasible(&self) -> bool {
        let rows_ok = self.omega.iter().all(|r| r.iter().filter(|&&b| b).count() <= 1);
        let cols = self.omega.first().map_or(0, Vec::len);
        let cols_ok = (0..cols).all(|v| self.omega.iter().filter(|r| r[v]).count() <= 1);
        rows_ok && cols_ok
    }
}

/// SINR at the BS for AV `u` of a cell.
pub fn sinr_v2i(
    csi: &CellCsi,
    theta_r: &[C64],
    omega: &SharingMatrix,
    phy: &PhyConfig,
    u: usize,
) -> Result<f64> {
    let av = &csi.avs[u];
    let g = composite_gain(av.h_ub, &csi.h_rb, theta_r, &av.h_ur)?;
    let p_t = phy.p_t();
    let interference: f64 = csi
        .v2vs
        .iter()
        .enumerate()
        .filter(|(v, _)| omega.get(u, *v))
        .map(|(_, l)| p_t * l.h_vb.norm_sqr())
        .sum();
    Ok(phy.p_u() * g.norm_sqr() / (interference + phy.noise_power()))
}

/// Interference power at the receiver of pair `v` (excluding noise).
pub fn v2v_interference(
    csi: &CellCsi,
    theta_t: &[C64],
    omega: &SharingMatrix,
    phy: &PhyConfig,
    v: usize,
) -> Result<f64> {
    let link = &csi.v2vs[v];
    let p_u = phy.p_u();
    let mut total = 0.0;
    for (u, av) in csi.avs.iter().enumerate() {
        if omega.get(u, v) {
            let g = composite_gain_conj(link.h_uv[u], &link.h_rv, theta_t, &av.h_ur)?;
            total += p_u * g.norm_sqr();
        }
    }
    Ok(total)
}

/// SINR at the receiver of V2V pair `v`.
pub fn sinr_v2v(
    csi: &CellCsi,
    theta_t: &[C64],
    omega: &SharingMatrix,
    phy: &PhyConfig,
    v: usize,
) -> Result<f64> {
    let i = v2v_interference(csi, theta_t, omega, phy, v)?;
    Ok(phy.p_t() * csi.v2vs[v].h_v.norm_sqr() / (i + phy.noise_power()))
}

/// `(W / users) log2(1 + gamma)`.
pub fn shannon_rate(gamma: f64, bandwidth: f64, users: usize) -> f64 {
    bandwidth / users.max(1) as f64 * (1.0 + gamma).log2()
}

pub fn rate_v2i(gamma: f64, phy: &PhyConfig, avs: usize) -> f64 {
    shannon_rate(gamma, phy.bandwidth, avs)
}

pub fn rate_v2v(gamma: f64, phy: &PhyConfig, v2vs: usize) -> f64 {
    shannon_rate(gamma, phy.bandwidth, v2vs)
}

/// Logistic step `1 / (1 + exp(-delta x))`, evaluated without overflow.
pub fn smooth_step(x: f64, delta: f64) -> f64 {
    let z = delta * x;
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean-SINR threshold equivalent to the outage constraint:
/// `gamma_th + ln(1/P_out - 1) / varpi`.
pub fn outage_threshold(phy: &PhyConfig) -> Result<f64> {
    if !(phy.p_outage > 0.0 && phy.p_outage < 1.0) {
        return Err(Error::Domain(format!(
            "outage probability must be in (0, 1), got {}",
            phy.p_outage
        )));
    }
    Ok(phy.gamma_th + (1.0 / phy.p_outage - 1.0).ln() / phy.varpi)
}

/// Monte-Carlo estimates for the V2V pairs of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct V2vStatistics {
    /// Sample mean of the SINR per pair.
    pub mean_sinr: Vec<f64>,
    /// Smoothed outage estimate `E[u_delta(gamma_th - gamma_v)]` per pair.
    pub outage: Vec<f64>,
}

/// Mean V2V SINR over `phy.n_mc` small-scale redraws with frozen geometry.
pub fn mean_sinr_v2v(
    budget: &LinkBudget,
    fading: &FadingParams,
    theta_t: &[C64],
    omega: &SharingMatrix,
    phy: &PhyConfig,
    rng: &mut impl Rng,
) -> Result<V2vStatistics> {
    let v2vs = budget.v_gain.len();
    let mut sum = vec![0.0; v2vs];
    let mut outage = vec![0.0; v2vs];
    for _ in 0..phy.n_mc {
        let (h_rb, avs) = budget.sample_av_links(fading, rng);
        let v2v_links = budget.sample_v2v_links(fading, rng);
        let cell = CellCsi {
            h_rb,
            avs,
            v2vs: v2v_links,
        };
        for v in 0..v2vs {
            let g = sinr_v2v(&cell, theta_t, omega, phy, v)?;
            sum[v] += g;
            outage[v] += smooth_step(phy.gamma_th - g, phy.delta);
        }
    }
    let n = phy.n_mc as f64;
    Ok(V2vStatistics {
        mean_sinr: sum.into_iter().map(|s| s / n).collect(),
        outage: outage.into_iter().map(|s| s / n).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{init_positions, stream_rng, AvLinks, TopologyConfig, V2vLinks};
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn codebooks() {
        let b = phase_codebook(2).unwrap();
        assert_eq!(b, vec![0.0, PI / 2.0, PI, 3.0 * PI / 2.0]);
        assert_eq!(phase_codebook(1).unwrap(), vec![0.0, PI]);
        let b3 = phase_codebook(3).unwrap();
        assert_eq!(b3.len(), 8);
        for w in b3.windows(2) {
            assert_relative_eq!(w[1] - w[0], PI / 4.0, epsilon = 1e-15);
        }
        assert!(phase_codebook(0).is_err());
    }

    #[test]
    fn expand_balanced_split() {
        let cfg = RicsConfig {
            psi: 1.0,
            ..Default::default()
        };
        let m = expand_action(&RicsAction::zeros(2), &cfg, 4).unwrap();
        for z in m.theta_r.iter().chain(&m.theta_t) {
            assert_relative_eq!(z.re, 0.5f64.sqrt(), epsilon = 1e-15);
            assert_eq!(z.im, 0.0);
        }
    }

    #[test]
    fn expand_psi_scales_transmission() {
        let cfg = RicsConfig::default();
        let action = RicsAction {
            blocks: vec![
                BlockPhases {
                    reflect: 0,
                    transmit: 2,
                },
                BlockPhases {
                    reflect: 1,
                    transmit: 0,
                },
            ],
        };
        let m = expand_action(&action, &cfg, 4).unwrap();
        // transmit index 2 is pi
        assert_relative_eq!(m.theta_t[0].re, -1.3 * 0.5f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(m.theta_t[0].re, -0.919_238_815_542_511_8, epsilon = 1e-12);
        assert!(m.theta_t[0].im.abs() < 1e-12);
        assert_eq!(m.theta_r[0], m.theta_r[1]);
        assert_eq!(m.theta_t[0], m.theta_t[1]);
        assert_eq!(m.theta_r[2], m.theta_r[3]);
        assert_ne!(m.theta_r[1], m.theta_r[2]);
        for k in 0..4 {
            let split = m.theta_r[k].norm_sqr() + (m.theta_t[k] / cfg.psi).norm_sqr();
            assert_relative_eq!(split, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn expand_rejects_out_of_range() {
        let cfg = RicsConfig::default();
        let bad = RicsAction {
            blocks: vec![
                BlockPhases {
                    reflect: 4,
                    transmit: 0,
                },
                BlockPhases::default(),
            ],
        };
        assert!(matches!(expand_action(&bad, &cfg, 4), Err(Error::Domain(_))));
    }

    #[test]
    fn disabled_rics_is_zero() {
        let cfg = RicsConfig {
            enabled: false,
            ..Default::default()
        };
        let m = expand_action(&RicsAction::zeros(2), &cfg, 4).unwrap();
        assert!(m.theta_r.iter().chain(&m.theta_t).all(|z| z.norm() == 0.0));
    }

    #[test]
    fn enumerate_covers_action_space() {
        let cfg = RicsConfig::default();
        let all = RicsAction::enumerate(&cfg);
        assert_eq!(all.len(), 256);
        let set: std::collections::HashSet<_> = all.iter().map(|a| a.blocks.clone()).collect();
        assert_eq!(set.len(), 256);
    }

    #[test]
    fn composite_cases() {
        let one = [c(1.0, 0.0)];
        assert_eq!(composite_gain(c(0.3, 0.1), &one, &[c(0.0, 0.0)], &one).unwrap(), c(0.3, 0.1));
        let g = composite_gain(c(0.5, 0.0), &one, &[c(0.5, 0.0)], &one).unwrap();
        assert_relative_eq!(g.re, 1.0, epsilon = 1e-15);
        let g = composite_gain(c(0.5, 0.0), &one, &[C64::from_polar(0.5, PI)], &one).unwrap();
        assert!(g.norm() < 1e-15);
        assert!(composite_gain(c(0.0, 0.0), &one, &[c(1.0, 0.0), c(1.0, 0.0)], &one).is_err());
    }

    fn one_av_cell(h_ub: C64, h_vb: C64) -> CellCsi {
        CellCsi {
            h_rb: vec![c(0.0, 0.0)],
            avs: vec![AvLinks {
                h_ur: vec![c(0.0, 0.0)],
                h_ub,
            }],
            v2vs: vec![V2vLinks {
                h_rv: vec![c(0.0, 0.0)],
                h_v: c(1e-4, 0.0),
                h_uv: vec![c(1e-5, 0.0)],
                h_vb,
            }],
        }
    }

    #[test]
    fn v2i_sinr_hand_value() {
        let phy = PhyConfig::default();
        assert_relative_eq!(phy.p_u(), 0.794_328_234_724_281_5, max_relative = 1e-12);
        assert_relative_eq!(phy.noise_power(), 1e-14, max_relative = 1e-12);
        let cell = one_av_cell(c((1e-13f64).sqrt(), 0.0), c(1e-6, 0.0));
        let omega = SharingMatrix::zeros(1, 1);
        let g = sinr_v2i(&cell, &[c(0.0, 0.0)], &omega, &phy, 0).unwrap();
        assert_relative_eq!(g, 7.943_282_347_242_815, max_relative = 1e-9);
        let mut shared = omega.clone();
        shared.omega[0][0] = true;
        let g2 = sinr_v2i(&cell, &[c(0.0, 0.0)], &shared, &phy, 0).unwrap();
        assert!(g2 < g);
        let silent = PhyConfig {
            p_u_dbm: f64::NEG_INFINITY,
            ..Default::default()
        };
        assert_eq!(sinr_v2i(&cell, &[c(0.0, 0.0)], &omega, &silent, 0).unwrap(), 0.0);
    }

    #[test]
    fn v2v_destructive_cancellation() {
        let phy = PhyConfig::default();
        let h_uv = c(2e-5, 1e-5);
        let h_rv = C64::from_polar(3e-3, 0.4);
        let h_ur = C64::from_polar(4e-3, -1.1);
        // pick theta so that conj(h_rv) theta h_ur = -h_uv
        let theta = -h_uv / (h_rv.conj() * h_ur);
        let cell = CellCsi {
            h_rb: vec![c(0.0, 0.0)],
            avs: vec![AvLinks {
                h_ur: vec![h_ur],
                h_ub: c(1e-5, 0.0),
            }],
            v2vs: vec![V2vLinks {
                h_rv: vec![h_rv],
                h_v: c(1e-4, 0.0),
                h_uv: vec![h_uv],
                h_vb: c(1e-6, 0.0),
            }],
        };
        let mut omega = SharingMatrix::zeros(1, 1);
        omega.omega[0][0] = true;
        let snr = phy.p_t() * 1e-8 / phy.noise_power();
        let g = sinr_v2v(&cell, &[theta], &omega, &phy, 0).unwrap();
        assert_relative_eq!(g, snr, max_relative = 1e-9);
        let free = sinr_v2v(&cell, &[theta], &SharingMatrix::zeros(1, 1), &phy, 0).unwrap();
        assert_relative_eq!(free, snr, max_relative = 1e-12);
        let off = sinr_v2v(&cell, &[c(0.0, 0.0)], &omega, &phy, 0).unwrap();
        let expect = phy.p_t() * 1e-8 / (phy.p_u() * h_uv.norm_sqr() + phy.noise_power());
        assert_relative_eq!(off, expect, max_relative = 1e-12);
    }

    #[test]
    fn rates() {
        let phy = PhyConfig::default();
        assert_relative_eq!(rate_v2i(3.0, &phy, 10), 2e6, max_relative = 1e-12);
        assert_eq!(rate_v2i(0.0, &phy, 10), 0.0);
        assert_relative_eq!(rate_v2i(7.9433, &phy, 10), 3_160_807.271_583_39, max_relative = 1e-9);
        assert!(rate_v2v(1.0, &phy, 2) > rate_v2v(0.9, &phy, 2));
    }

    #[test]
    fn smooth_step_values() {
        assert_eq!(smooth_step(0.0, 5.0), 0.5);
        assert_relative_eq!(smooth_step(1.0, 5.0), 0.993_307_149_075_715_1, max_relative = 1e-12);
        assert_eq!(smooth_step(-1e6, 5.0), 0.0);
        assert_eq!(smooth_step(1e6, 5.0), 1.0);
        assert!(smooth_step(-400.0, 5.0).is_finite());
    }

    #[test]
    fn outage_threshold_values() {
        let phy = PhyConfig::default();
        assert_relative_eq!(
            outage_threshold(&phy).unwrap(),
            2.0 + 0.2 * 99f64.ln(),
            max_relative = 1e-12
        );
        assert_relative_eq!(outage_threshold(&phy).unwrap(), 2.919_023_970_026_918, max_relative = 1e-9);
        let half = PhyConfig {
            p_outage: 0.5,
            ..Default::default()
        };
        assert_eq!(outage_threshold(&half).unwrap(), 2.0);
        let steep = PhyConfig {
            varpi: 1e12,
            ..Default::default()
        };
        assert_relative_eq!(outage_threshold(&steep).unwrap(), 2.0, epsilon = 1e-9);
        let bad = PhyConfig {
            p_outage: 1.0,
            ..Default::default()
        };
        assert!(outage_threshold(&bad).is_err());
    }

    #[test]
    fn sharing_feasibility() {
        let mut s = SharingMatrix::zeros(3, 2);
        assert!(s.is_feasible());
        s.omega[0][1] = true;
        s.omega[2][0] = true;
        assert!(s.is_feasible());
        s.omega[1][1] = true;
        assert!(!s.is_feasible());
    }

    #[test]
    fn mean_sinr_deterministic_channels() {
        let topo = TopologyConfig {
            avs_per_cell: 2,
            v2v_per_cell: 2,
            rics_elements: 4,
            ..Default::default()
        };
        let fading = FadingParams {
            rician_ur: 1e12,
            rician_rv: 1e12,
            rician_rb: 1e12,
            scatter_power: 0.0,
            ..Default::default()
        };
        let phy = PhyConfig::default();
        let st = init_positions(&topo, 3).unwrap();
        let budget = LinkBudget::new(&st.cells[0], 4, &fading).unwrap();
        let m = expand_action(&RicsAction::zeros(2), &RicsConfig::default(), 4).unwrap();
        let mut omega = SharingMatrix::zeros(2, 2);
        omega.omega[1][0] = true;
        let mut rng = stream_rng(1, 2);
        let stats = mean_sinr_v2v(&budget, &fading, &m.theta_t, &omega, &phy, &mut rng).unwrap();
        let single = budget.sample(&fading, &mut rng, &mut stream_rng(0, 0));
        for v in 0..2 {
            let g = sinr_v2v(&single, &m.theta_t, &omega, &phy, v).unwrap();
            assert_relative_eq!(stats.mean_sinr[v], g, max_relative = 1e-12);
        }
    }

    #[test]
    fn mean_sinr_single_draw() {
        let topo = TopologyConfig {
            avs_per_cell: 2,
            v2v_per_cell: 1,
            rics_elements: 4,
            ..Default::default()
        };
        let fading = FadingParams::default();
        let phy = PhyConfig {
            n_mc: 1,
            ..Default::default()
        };
        let st = init_positions(&topo, 5).unwrap();
        let budget = LinkBudget::new(&st.cells[0], 4, &fading).unwrap();
        let m = expand_action(&RicsAction::zeros(2), &RicsConfig::default(), 4).unwrap();
        let omega = SharingMatrix::zeros(2, 1);
        let stats = mean_sinr_v2v(&budget, &fading, &m.theta_t, &omega, &phy, &mut stream_rng(8, 8)).unwrap();
        let mut rng = stream_rng(8, 8);
        let (h_rb, avs) = budget.sample_av_links(&fading, &mut rng);
        let v2vs = budget.sample_v2v_links(&fading, &mut rng);
        let cell = CellCsi { h_rb, avs, v2vs };
        assert_eq!(stats.mean_sinr[0], sinr_v2v(&cell, &m.theta_t, &omega, &phy, 0).unwrap());
    }
}
