//! Task model, offloading delays and the driving-safety factor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Lower bound on the end-to-end delay; anything below counts as degenerate.
pub const MIN_DELAY: f64 = 1e-6;

/// One perception task of an AV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    /// Input size (bits).
    pub bits: f64,
    /// Required CPU cycles.
    pub cycles: f64,
    /// Maximum allowable delay (s). Only enforced when
    /// [`ComputeConfig::enforce_max_delay`] is set.
    pub max_delay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComputeConfig {
    pub task_bits_min: f64,
    pub task_bits_max: f64,
    pub task_cycles_min: f64,
    pub task_cycles_max: f64,
    pub task_max_delay: f64,
    /// Local CPU rate range (Hz); each AV draws one per episode.
    pub local_cpu_min: f64,
    pub local_cpu_max: f64,
    /// BS cycles/s per AV when a single cell is served.
    pub bs_cpu_per_av: f64,
    /// Total BS capacity (cycles/s). Defaults to `bs_cpu_per_av * avs_per_cell`
    /// so that a single cell reproduces `bs_cpu_per_av`.
    pub bs_cpu_total: Option<f64>,
    /// Accuracy ratio of on-board inference relative to the BS.
    pub lambda: f64,
    /// BS inference accuracy.
    pub bs_accuracy: f64,
    /// Treat a task whose delay exceeds `task_max_delay` as failed (zero safety).
    pub enforce_max_delay: bool,
}

impl Default for ComputeConfig {
    fn default() -> Self {
        Self {
            task_bits_min: 1e6,
            task_bits_max: 3e6,
            task_cycles_min: 5e9,
            task_cycles_max: 8e9,
            task_max_delay: 1.0,
            local_cpu_min: 1e9,
            local_cpu_max: 5e9,
            bs_cpu_per_av: 50e9,
            bs_cpu_total: None,
            lambda: 0.7,
            bs_accuracy: 0.8,
            enforce_max_delay: false,
        }
    }
}

impl ComputeConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |lo: f64, hi: f64, name: &str| {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                Err(Error::config(format!("compute.{name}"), "range must be positive and ordered"))
            } else {
                Ok(())
            }
        };
        range(self.task_bits_min, self.task_bits_max, "task_bits_max")?;
        range(self.task_cycles_min, self.task_cycles_max, "task_cycles_max")?;
        range(self.local_cpu_min, self.local_cpu_max, "local_cpu_max")?;
        if !(self.bs_cpu_per_av > 0.0) {
            return Err(Error::config("compute.bs_cpu_per_av", "must be positive"));
        }
        if let Some(t) = self.bs_cpu_total {
            if !(t > 0.0) {
                return Err(Error::config("compute.bs_cpu_total", "must be positive"));
            }
        }
        if !(self.task_max_delay > 0.0) {
            return Err(Error::config("compute.task_max_delay", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config("compute.lambda", "must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.bs_accuracy) {
            return Err(Error::config("compute.bs_accuracy", "must be in [0, 1]"));
        }
        Ok(())
    }

    /// BS cycles/s allotted to each AV when `cells` cells of `avs` AVs share it.
    pub fn per_av_share(&self, cells: usize, avs: usize) -> f64 {
        let total = self
            .bs_cpu_total
            .unwrap_or(self.bs_cpu_per_av * avs as f64);
        total / (cells * avs) as f64
    }

    pub fn draw_task(&self, rng: &mut impl Rng) -> TaskSpec {
        TaskSpec {
            bits: rng.random_range(self.task_bits_min..=self.task_bits_max),
            cycles: rng.random_range(self.task_cycles_min..=self.task_cycles_max),
            max_delay: self.task_max_delay,
        }
    }

    pub fn draw_local_cpu(&self, rng: &mut impl Rng) -> f64 {
        rng.random_range(self.local_cpu_min..=self.local_cpu_max)
    }
}

/// `(1 - rho) cycles / f_u`.
pub fn local_delay(rho: f64, task: &TaskSpec, f_u: f64) -> Result<f64> {
    if !(f_u > 0.0) {
        return Err(Error::Domain(format!("local CPU rate must be positive, got {f_u}")));
    }
    Ok((1.0 - rho) * task.cycles / f_u)
}

/// `rho (bits / rate + bs_delay)`, where `bs_delay` is the BS processing
/// term (see [`bs_processing_delays`]). Infinite when data must be sent
/// over a zero-rate link.
pub fn offload_delay(rho: f64, task: &TaskSpec, rate: f64, bs_delay: f64) -> f64 {
    if rho <= 0.0 {
        return 0.0;
    }
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    rho * (task.bits / rate + bs_delay)
}

/// BS processing delay for every AV of every cell.
///
/// With one cell each AV pays its own `cycles / F`. With several cells
/// served in parallel the slowest cell sets the pace, so every AV pays the
/// worst `cycles / F` across all cells.
pub fn bs_processing_delays(tasks: &[Vec<TaskSpec>], per_av_cpu: f64) -> Vec<Vec<f64>> {
    if tasks.len() <= 1 {
        return tasks
            .iter()
            .map(|cell| cell.iter().map(|t| t.cycles / per_av_cpu).collect())
            .collect();
    }
    let worst = tasks
        .iter()
        .flat_map(|cell| cell.iter().map(|t| t.cycles / per_av_cpu))
        .fold(0.0, f64::max);
    tasks.iter().map(|cell| vec![worst; cell.len()]).collect()
}

/// `(1 - rho) lambda A_b + rho A_b`.
pub fn avg_accuracy(rho: f64, cfg: &ComputeConfig) -> f64 {
    (1.0 - rho) * cfg.lambda * cfg.bs_accuracy + rho * cfg.bs_accuracy
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SafetyStatus {
    Normal,
    /// Both delays vanished (below [`MIN_DELAY`]).
    Degenerate,
    /// Offloaded data cannot be delivered (zero rate).
    Undeliverable,
    /// Delay exceeds the task deadline while deadlines are enforced.
    DeadlineMissed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Safety {
    pub value: f64,
    pub delay: f64,
    pub status: SafetyStatus,
}

/// Average accuracy over end-to-end delay.
pub fn safety_factor(
    rho: f64,
    task: &TaskSpec,
    rate: f64,
    f_u: f64,
    bs_delay: f64,
    cfg: &ComputeConfig,
) -> Result<Safety> {
    let rho = rho.clamp(0.0, 1.0);
    let delay = local_delay(rho, task, f_u)?.max(offload_delay(rho, task, rate, bs_delay));
    let (value, status) = if delay.is_infinite() {
        (0.0, SafetyStatus::Undeliverable)
    } else if delay < MIN_DELAY {
        (0.0, SafetyStatus::Degenerate)
    } else if cfg.enforce_max_delay && delay > task.max_delay {
        (0.0, SafetyStatus::DeadlineMissed)
    } else {
        (avg_accuracy(rho, cfg) / delay, SafetyStatus::Normal)
    };
    Ok(Safety {
        value,
        delay,
        status,
    })
}

/// Safety-maximising offload ratio in closed form.
///
/// Below the ratio where local and offload delays meet, the factor rises
/// (accuracy up, delay down); above it, it falls. The crossing is where
/// `(1-rho) L = rho O` with `L = cycles/f_u` and `O = bits/rate + bs_delay`.
pub fn optimal_offload_ratio(task: &TaskSpec, rate: f64, f_u: f64, bs_delay: f64) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    let local = task.cycles / f_u;
    let off = task.bits / rate + bs_delay;
    local / (local + off)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn task(bits: f64, cycles: f64) -> TaskSpec {
        TaskSpec {
            bits,
            cycles,
            max_delay: 1.0,
        }
    }

    #[test]
    fn local_delay_cases() {
        let t = task(2e6, 6e9);
        assert_eq!(local_delay(1.0, &t, 2e9).unwrap(), 0.0);
        assert_relative_eq!(local_delay(0.0, &t, 2e9).unwrap(), 3.0, max_relative = 1e-12);
        assert_relative_eq!(
            local_delay(0.5, &t, 2e9).unwrap(),
            0.5 * local_delay(0.0, &t, 2e9).unwrap(),
            max_relative = 1e-12
        );
        assert!(local_delay(0.5, &t, 0.0).is_err());
    }

    #[test]
    fn offload_delay_cases() {
        let t = task(2e6, 6e9);
        assert_eq!(offload_delay(0.0, &t, 2e6, 0.12), 0.0);
        assert_relative_eq!(offload_delay(1.0, &t, 2e6, 6e9 / 50e9), 1.12, max_relative = 1e-12);
        assert_eq!(offload_delay(1.0, &t, f64::INFINITY, 6e9 / f64::INFINITY), 0.0);
        assert!(offload_delay(0.3, &t, 0.0, 0.1).is_infinite());
    }

    #[test]
    fn accuracy_cases() {
        let cfg = ComputeConfig::default();
        assert_relative_eq!(avg_accuracy(0.0, &cfg), 0.56, max_relative = 1e-12);
        assert_relative_eq!(avg_accuracy(1.0, &cfg), 0.8, max_relative = 1e-12);
        assert_relative_eq!(avg_accuracy(0.5, &cfg), 0.68, max_relative = 1e-12);
    }

    #[test]
    fn safety_composition() {
        let cfg = ComputeConfig::default();
        // tau_loc = 0.5 * 6e9 / 2e9 = 1.5 s; tau_off = 0.5 (1.12 + 0.12) = 0.62 s
        let t = task(2.24e6, 6e9);
        let s = safety_factor(0.5, &t, 2e6, 2e9, 0.12, &cfg).unwrap();
        assert_relative_eq!(offload_delay(0.5, &t, 2e6, 0.12), 0.62, max_relative = 1e-12);
        assert_relative_eq!(s.value, 0.68 / 1.5, max_relative = 1e-12);
        assert_relative_eq!(s.value, 0.453_333_333_333_333_3, max_relative = 1e-12);
        assert_eq!(s.status, SafetyStatus::Normal);
    }

    #[test]
    fn safety_degenerate_and_undeliverable() {
        let cfg = ComputeConfig::default();
        let t = task(2e6, 6e9);
        let s = safety_factor(0.0, &t, 1e6, f64::INFINITY, 0.1, &cfg).unwrap();
        assert_eq!(s.status, SafetyStatus::Degenerate);
        assert_eq!(s.value, 0.0);
        let s = safety_factor(0.5, &t, 0.0, 2e9, 0.1, &cfg).unwrap();
        assert_eq!(s.status, SafetyStatus::Undeliverable);
        assert_eq!(s.value, 0.0);
        let strict = ComputeConfig {
            enforce_max_delay: true,
            ..Default::default()
        };
        let s = safety_factor(0.0, &t, 1e6, 2e9, 0.1, &strict).unwrap();
        assert_eq!(s.status, SafetyStatus::DeadlineMissed);
    }

    #[test]
    fn slower_rate_never_helps() {
        let cfg = ComputeConfig::default();
        let t = task(2e6, 6e9);
        let fast = safety_factor(0.9, &t, 5e6, 2e9, 0.12, &cfg).unwrap().value;
        let slow = safety_factor(0.9, &t, 1e6, 2e9, 0.12, &cfg).unwrap().value;
        assert!(slow <= fast);
    }

    #[test]
    fn multi_cell_bs_delay_uses_worst_cell() {
        let tasks = vec![vec![task(1e6, 5e9), task(1e6, 6e9)], vec![task(1e6, 8e9)]];
        let single = bs_processing_delays(&tasks[..1], 50e9);
        assert_relative_eq!(single[0][0], 0.1);
        assert_relative_eq!(single[0][1], 0.12);
        let multi = bs_processing_delays(&tasks, 25e9);
        assert!(multi.iter().flatten().all(|&d| (d - 8e9 / 25e9).abs() < 1e-15));
        let cfg = ComputeConfig::default();
        assert_relative_eq!(cfg.per_av_share(1, 10), 50e9);
        assert_relative_eq!(cfg.per_av_share(2, 10), 25e9);
    }

    #[test]
    fn closed_form_matches_grid_oracle() {
        let cfg = ComputeConfig::default();
        for (bits, cycles, rate, f_u, bs) in [
            (2e6, 6e9, 3e6, 2e9, 0.12),
            (1e6, 8e9, 40e6, 5e9, 0.1),
            (3e6, 5e9, 0.5e6, 1e9, 0.16),
            (1.5e6, 7e9, 1e9, 4e9, 0.01),
        ] {
            let t = task(bits, cycles);
            let grid_best = (0..=1000)
                .map(|i| i as f64 / 1000.0)
                .map(|rho| safety_factor(rho, &t, rate, f_u, bs, &cfg).unwrap().value)
                .fold(f64::NEG_INFINITY, f64::max);
            let rho = optimal_offload_ratio(&t, rate, f_u, bs);
            let analytic = safety_factor(rho, &t, rate, f_u, bs, &cfg).unwrap().value;
            assert!(analytic >= grid_best - 1e-12, "{analytic} < {grid_best}");
            // the grid is within one step of the optimum
            assert!((analytic - grid_best) / analytic < 5e-3);
        }
    }

    proptest! {
        #[test]
        fn accuracy_bounded_and_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let cfg = ComputeConfig::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let x = avg_accuracy(lo, &cfg);
            let y = avg_accuracy(hi, &cfg);
            prop_assert!(x <= y + 1e-15);
            prop_assert!(x >= cfg.lambda * cfg.bs_accuracy - 1e-15);
            prop_assert!(y <= cfg.bs_accuracy + 1e-15);
        }

        #[test]
        fn doubling_delays_halves_safety(rho in 0.05f64..0.95, bits in 1e6f64..3e6, cycles in 5e9f64..8e9,
                                         rate in 1e5f64..1e8, f_u in 1e9f64..5e9) {
            let cfg = ComputeConfig::default();
            let t = task(bits, cycles);
            let base = safety_factor(rho, &t, rate, f_u, 0.1, &cfg).unwrap().value;
            // halving both service rates doubles both delays
            let slow_task = task(2.0 * bits, 2.0 * cycles);
            let slow = safety_factor(rho, &slow_task, rate, f_u, 0.2, &cfg).unwrap().value;
            prop_assert!((slow * 2.0 - base).abs() <= 1e-9 * base);
        }
    }
}
