//! Geometry, mobility and stochastic channel generation.
//!
//! All randomness is drawn from explicitly passed generators. Placement and
//! fading for AV-side and V2V-side links use separate streams (see
//! [`stream_rng`]) so that changing the number of V2V pairs leaves the AV
//! geometry and AV channel draws of a seed untouched.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, C64};

/// Rician factors at or above this value are treated as pure line-of-sight.
pub const PURE_LOS_ZETA: f64 = 1e12;

/// Named RNG streams. Each `(seed, stream)` pair gives an independent
/// ChaCha8 sequence.
pub mod streams {
    pub const AV_PLACEMENT: u64 = 0x100;
    pub const V2V_PLACEMENT: u64 = 0x200;
    pub const TASKS: u64 = 0x300;
    pub const AV_FADING: u64 = 0x400;
    pub const V2V_FADING: u64 = 0x500;
    pub const OUTAGE_MC: u64 = 0x600;
    pub const AGENT_INIT: u64 = 0x700;
    pub const EXPLORATION: u64 = 0x800;
    pub const REPLAY: u64 = 0x900;
    pub const EPISODES: u64 = 1 << 32;
    pub const EVALUATION: u64 = 2 << 32;
}

/// Build the ChaCha8 generator for `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub num_cells: usize,
    pub avs_per_cell: usize,
    pub v2v_per_cell: usize,
    pub rics_elements: usize,
    /// Radius (m) of the circle the RICSs sit on.
    pub rics_radius: f64,
    /// Vehicle zone extent along the road axis (m).
    pub zone_length: f64,
    /// Vehicle zone extent across the road axis (m).
    pub zone_width: f64,
    /// Radial distance (m) of the near edge of the vehicle zone.
    pub zone_min_dist: f64,
    /// Radial distance (m) of the far edge of the vehicle zone.
    pub zone_max_dist: f64,
    /// Vehicle speed (m/s).
    pub vehicle_speed: f64,
    /// Slot duration (s).
    pub slot_duration: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            num_cells: 1,
            avs_per_cell: 10,
            v2v_per_cell: 2,
            rics_elements: 30,
            rics_radius: 80.0,
            zone_length: 100.0,
            zone_width: 40.0,
            zone_min_dist: 250.0,
            zone_max_dist: 350.0,
            vehicle_speed: 10.0,
            slot_duration: 0.1,
        }
    }
}

impl TopologyConfig {
    pub fn validate(&self) -> Result<()> {
        let need_pos = |v: usize, f: &str| {
            if v == 0 {
                Err(Error::config(format!("topology.{f}"), "must be at least 1"))
            } else {
                Ok(())
            }
        };
        need_pos(self.num_cells, "num_cells")?;
        need_pos(self.avs_per_cell, "avs_per_cell")?;
        need_pos(self.rics_elements, "rics_elements")?;
        for (name, v) in [
            ("rics_radius", self.rics_radius),
            ("zone_length", self.zone_length),
            ("zone_width", self.zone_width),
            ("zone_min_dist", self.zone_min_dist),
            ("slot_duration", self.slot_duration),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("topology.{name}"), "must be positive"));
            }
        }
        if !(self.vehicle_speed >= 0.0 && self.vehicle_speed.is_finite()) {
            return Err(Error::config("topology.vehicle_speed", "must be non-negative"));
        }
        if ((self.zone_max_dist - self.zone_min_dist) - self.zone_length).abs() > 1e-9 {
            return Err(Error::config(
                "topology.zone_max_dist",
                "radial bounds must span exactly zone_length",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FadingParams {
    /// Reference path gain at `d0` (linear power).
    pub c0: f64,
    /// Reference distance (m).
    pub d0: f64,
    /// Path-loss exponent.
    pub alpha: f64,
    /// Rician factor of AV -> RICS links.
    pub rician_ur: f64,
    /// Rician factor of RICS -> V2V receiver links.
    pub rician_rv: f64,
    /// Rician factor of the RICS -> BS link.
    pub rician_rb: f64,
    /// Variance of the scattered (NLoS / Rayleigh) component. 1 in normal
    /// operation; 0 gives deterministic channels for tests.
    pub scatter_power: f64,
}

impl Default for FadingParams {
    fn default() -> Self {
        Self {
            c0: 1e-3,
            d0: 1.0,
            alpha: 2.5,
            rician_ur: 3.0,
            rician_rv: 3.0,
            rician_rb: 3.0,
            scatter_power: 1.0,
        }
    }
}

impl FadingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c0 > 0.0) {
            return Err(Error::config("fading.c0", "must be positive"));
        }
        if !(self.d0 > 0.0) {
            return Err(Error::config("fading.d0", "must be positive"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config("fading.alpha", "must be positive"));
        }
        for (name, z) in [
            ("rician_ur", self.rician_ur),
            ("rician_rv", self.rician_rv),
            ("rician_rb", self.rician_rb),
        ] {
            if !(z >= 0.0) {
                return Err(Error::config(format!("fading.{name}"), "must be non-negative"));
            }
        }
        if !(self.scatter_power >= 0.0) {
            return Err(Error::config("fading.scatter_power", "must be non-negative"));
        }
        Ok(())
    }
}

/// A vehicle in zone-local coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    /// Offset along the road axis from the near edge, in `[0, zone_length]`.
    pub along: f64,
    /// Offset across the road axis, in `[-zone_width/2, zone_width/2]`.
    pub across: f64,
    /// +1 moving away from the BS, -1 moving towards it.
    pub heading: f64,
}

/// Placement of one cell: its road zone, its RICS and its vehicles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellLayout {
    /// Direction (rad) of the cell's road axis as seen from the BS.
    pub axis: f64,
    pub zone_start: f64,
    pub zone_length: f64,
    pub rics: [f64; 2],
    pub avs: Vec<Vehicle>,
    pub v2v_tx: Vec<Vehicle>,
    pub v2v_rx: Vec<Vehicle>,
}

impl CellLayout {
    /// Global position of a vehicle of this cell.
    pub fn position(&self, v: &Vehicle) -> [f64; 2] {
        let (s, c) = self.axis.sin_cos();
        let r = self.zone_start + v.along;
        [r * c - v.across * s, r * s + v.across * c]
    }

    pub fn av_position(&self, u: usize) -> [f64; 2] {
        self.position(&self.avs[u])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobilityState {
    pub slot: u64,
    pub cells: Vec<CellLayout>,
}

impl MobilityState {
    pub const BS: [f64; 2] = [0.0, 0.0];
}

fn place(rng: &mut impl Rng, config: &TopologyConfig) -> Vehicle {
    let half = config.zone_width / 2.0;
    Vehicle {
        along: rng.random_range(0.0..=config.zone_length),
        across: rng.random_range(-half..=half),
        heading: if rng.random::<bool>() { 1.0 } else { -1.0 },
    }
}

/// Fresh placement for an episode. The BS is at the origin, one RICS per
/// cell sits on the `rics_radius` circle facing its cell's road zone.
pub fn init_positions(config: &TopologyConfig, seed: u64) -> Result<MobilityState> {
    config.validate()?;
    let cells = (0..config.num_cells)
        .map(|c| {
            let axis = 2.0 * PI * c as f64 / config.num_cells as f64;
            let mut av_rng = stream_rng(seed, streams::AV_PLACEMENT + c as u64);
            let mut v2v_rng = stream_rng(seed, streams::V2V_PLACEMENT + c as u64);
            let avs = (0..config.avs_per_cell)
                .map(|_| place(&mut av_rng, config))
                .collect();
            let mut v2v_tx = Vec::with_capacity(config.v2v_per_cell);
            let mut v2v_rx = Vec::with_capacity(config.v2v_per_cell);
            for _ in 0..config.v2v_per_cell {
                v2v_tx.push(place(&mut v2v_rng, config));
                v2v_rx.push(place(&mut v2v_rng, config));
            }
            CellLayout {
                axis,
                zone_start: config.zone_min_dist,
                zone_length: config.zone_length,
                rics: [
                    config.rics_radius * axis.cos(),
                    config.rics_radius * axis.sin(),
                ],
                avs,
                v2v_tx,
                v2v_rx,
            }
        })
        .collect();
    Ok(MobilityState { slot: 0, cells })
}

fn advance(v: &mut Vehicle, step: f64, length: f64) {
    let mut along = v.along + v.heading * step;
    // Reflect until inside; handles displacements longer than the zone.
    loop {
        if along > length {
            along = 2.0 * length - along;
            v.heading = -v.heading;
        } else if along < 0.0 {
            along = -along;
            v.heading = -v.heading;
        } else {
            break;
        }
    }
    v.along = along;
}

/// Move every vehicle by `speed * slot_duration` along its heading.
pub fn advance_slot(state: &MobilityState, config: &TopologyConfig) -> MobilityState {
    let step = config.vehicle_speed * config.slot_duration;
    let mut next = state.clone();
    next.slot += 1;
    if step == 0.0 {
        return next;
    }
    for cell in &mut next.cells {
        let length = cell.zone_length;
        for v in cell
            .avs
            .iter_mut()
            .chain(cell.v2v_tx.iter_mut())
            .chain(cell.v2v_rx.iter_mut())
        {
            advance(v, step, length);
        }
    }
    next
}

/// Large-scale amplitude gain `sqrt(C0 (d/d0)^-alpha)`.
pub fn path_gain(d: f64, p: &FadingParams) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::Domain(format!("path_gain distance must be positive, got {d}")));
    }
    Ok((p.c0 * (d / p.d0).powf(-p.alpha)).sqrt())
}

/// Half-wavelength ULA response `exp(j pi k sin(angle))`, `k = 0..K-1`.
pub fn ula_steering(angle: f64, k: usize) -> Vec<C64> {
    let phase = PI * angle.sin();
    (0..k).map(|i| C64::from_polar(1.0, phase * i as f64)).collect()
}

/// One draw of a standard circular complex Gaussian scaled to variance `power`.
pub fn complex_gaussian(rng: &mut impl Rng, power: f64) -> C64 {
    if power == 0.0 {
        return C64::new(0.0, 0.0);
    }
    let s = (power / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

/// `P (sqrt(z/(1+z)) los + sqrt(1/(1+z)) g)` with `g ~ CN(0, 1)` i.i.d.
pub fn sample_rician(p: f64, zeta: f64, los: &[C64], rng: &mut impl Rng) -> Vec<C64> {
    sample_rician_scaled(p, zeta, los, 1.0, rng)
}

fn sample_rician_scaled(
    p: f64,
    zeta: f64,
    los: &[C64],
    scatter_power: f64,
    rng: &mut impl Rng,
) -> Vec<C64> {
    if zeta >= PURE_LOS_ZETA {
        return los.iter().map(|l| l * p).collect();
    }
    let a = (zeta / (1.0 + zeta)).sqrt();
    let b = (1.0 / (1.0 + zeta)).sqrt();
    los.iter()
        .map(|l| p * (a * l + b * complex_gaussian(rng, scatter_power)))
        .collect()
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Angle of `to` as seen from a RICS on `axis`, measured from the array
/// broadside (the radial direction).
fn rics_angle(rics: [f64; 2], axis: f64, to: [f64; 2]) -> f64 {
    let (s, c) = axis.sin_cos();
    let dx = to[0] - rics[0];
    let dy = to[1] - rics[1];
    let normal = dx * c + dy * s;
    let tangent = -dx * s + dy * c;
    tangent.atan2(normal)
}

/// Per-slot large-scale state of a cell: path gains and LoS responses.
/// Small-scale fading is sampled on top of it, so Monte-Carlo redraws with
/// frozen geometry reuse one `LinkBudget`.
#[derive(Clone, Debug)]
pub struct LinkBudget {
    pub rb_gain: f64,
    pub rb_los: Vec<C64>,
    pub ur_gain: Vec<f64>,
    pub ur_los: Vec<Vec<C64>>,
    pub ub_gain: Vec<f64>,
    pub rv_gain: Vec<f64>,
    pub rv_los: Vec<Vec<C64>>,
    pub v_gain: Vec<f64>,
    /// `uv_gain[v][u]`: AV `u` to the receiver of pair `v`.
    pub uv_gain: Vec<Vec<f64>>,
    pub vb_gain: Vec<f64>,
}

impl LinkBudget {
    pub fn new(cell: &CellLayout, k: usize, p: &FadingParams) -> Result<Self> {
        // Distances below the reference distance are clamped to it.
        let gain = |a: [f64; 2], b: [f64; 2]| path_gain(dist(a, b).max(p.d0), p);
        let bs = MobilityState::BS;
        let avs: Vec<[f64; 2]> = cell.avs.iter().map(|v| cell.position(v)).collect();
        let txs: Vec<[f64; 2]> = cell.v2v_tx.iter().map(|v| cell.position(v)).collect();
        let rxs: Vec<[f64; 2]> = cell.v2v_rx.iter().map(|v| cell.position(v)).collect();
        let steer = |to: [f64; 2]| ula_steering(rics_angle(cell.rics, cell.axis, to), k);

        let mut budget = LinkBudget {
            rb_gain: gain(cell.rics, bs)?,
            rb_los: steer(bs),
            ur_gain: Vec::with_capacity(avs.len()),
            ur_los: Vec::with_capacity(avs.len()),
            ub_gain: Vec::with_capacity(avs.len()),
            rv_gain: Vec::with_capacity(rxs.len()),
            rv_los: Vec::with_capacity(rxs.len()),
            v_gain: Vec::with_capacity(rxs.len()),
            uv_gain: Vec::with_capacity(rxs.len()),
            vb_gain: Vec::with_capacity(rxs.len()),
        };
        for &a in &avs {
            budget.ur_gain.push(gain(a, cell.rics)?);
            budget.ur_los.push(steer(a));
            budget.ub_gain.push(gain(a, bs)?);
        }
        for (&tx, &rx) in txs.iter().zip(&rxs) {
            budget.rv_gain.push(gain(cell.rics, rx)?);
            budget.rv_los.push(steer(rx));
            budget.v_gain.push(gain(tx, rx)?);
            budget
                .uv_gain
                .push(avs.iter().map(|&a| gain(a, rx)).collect::<Result<_>>()?);
            budget.vb_gain.push(gain(tx, bs)?);
        }
        Ok(budget)
    }

    /// Draw the AV-side links (`h_rb`, `h_ur`, `h_ub`).
    pub fn sample_av_links(&self, p: &FadingParams, rng: &mut impl Rng) -> (Vec<C64>, Vec<AvLinks>) {
        let sp = p.scatter_power;
        let h_rb = sample_rician_scaled(self.rb_gain, p.rician_rb, &self.rb_los, sp, rng);
        let avs = self
            .ur_gain
            .iter()
            .zip(&self.ur_los)
            .zip(&self.ub_gain)
            .map(|((&g, los), &ub)| AvLinks {
                h_ur: sample_rician_scaled(g, p.rician_ur, los, sp, rng),
                h_ub: ub * complex_gaussian(rng, sp),
            })
            .collect();
        (h_rb, avs)
    }

    /// Draw the V2V-side links (`h_rv`, `h_v`, `h_uv`, `h_vb`).
    pub fn sample_v2v_links(&self, p: &FadingParams, rng: &mut impl Rng) -> Vec<V2vLinks> {
        let sp = p.scatter_power;
        (0..self.v_gain.len())
            .map(|v| V2vLinks {
                h_rv: sample_rician_scaled(self.rv_gain[v], p.rician_rv, &self.rv_los[v], sp, rng),
                h_v: self.v_gain[v] * complex_gaussian(rng, sp),
                h_uv: self.uv_gain[v]
                    .iter()
                    .map(|&g| g * complex_gaussian(rng, sp))
                    .collect(),
                h_vb: self.vb_gain[v] * complex_gaussian(rng, sp),
            })
            .collect()
    }

    pub fn sample(
        &self,
        p: &FadingParams,
        av_rng: &mut impl Rng,
        v2v_rng: &mut impl Rng,
    ) -> CellCsi {
        let (h_rb, avs) = self.sample_av_links(p, av_rng);
        let v2vs = self.sample_v2v_links(p, v2v_rng);
        CellCsi { h_rb, avs, v2vs }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvLinks {
    /// AV -> RICS, one entry per element.
    pub h_ur: Vec<C64>,
    /// AV -> BS direct link.
    pub h_ub: C64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct V2vLinks {
    /// RICS -> V2V receiver, one entry per element.
    pub h_rv: Vec<C64>,
    /// V2V transmitter -> receiver.
    pub h_v: C64,
    /// AV `u` -> V2V receiver, indexed by `u`.
    pub h_uv: Vec<C64>,
    /// V2V transmitter -> BS.
    pub h_vb: C64,
}

/// Channel snapshot of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellCsi {
    /// RICS -> BS, one entry per element.
    pub h_rb: Vec<C64>,
    pub avs: Vec<AvLinks>,
    pub v2vs: Vec<V2vLinks>,
}

/// All channel gains of one time slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Csi {
    pub slot: u64,
    pub cells: Vec<CellCsi>,
}

/// Link budgets for every cell of `state`.
pub fn link_budgets(state: &MobilityState, k: usize, p: &FadingParams) -> Result<Vec<LinkBudget>> {
    state.cells.iter().map(|c| LinkBudget::new(c, k, p)).collect()
}

/// Fresh Csi from a single generator (AV-side links first, then V2V-side).
pub fn draw_csi(state: &MobilityState, k: usize, p: &FadingParams, rng: &mut impl Rng) -> Result<Csi> {
    let budgets = link_budgets(state, k, p)?;
    let mut cells = Vec::with_capacity(budgets.len());
    for b in &budgets {
        let (h_rb, avs) = b.sample_av_links(p, rng);
        let v2vs = b.sample_v2v_links(p, rng);
        cells.push(CellCsi { h_rb, avs, v2vs });
    }
    Ok(Csi { slot: state.slot, cells })
}

/// Fresh Csi with AV-side and V2V-side links drawn from separate streams.
pub fn draw_csi_split(
    state: &MobilityState,
    k: usize,
    p: &FadingParams,
    av_rng: &mut impl Rng,
    v2v_rng: &mut impl Rng,
) -> Result<Csi> {
    let cells = link_budgets(state, k, p)?
        .iter()
        .map(|b| b.sample(p, av_rng, v2v_rng))
        .collect();
    Ok(Csi { slot: state.slot, cells })
}
