use serde::{Deserialize, Serialize};

/// `alpha0 / (1 + eps_decay * episode)`
pub fn decay_lr(alpha0: f64, eps_decay: f64, episode: usize) -> f64 {
    alpha0 / (1.0 + eps_decay * episode as f64)
}

/// Multiplicative exploration schedule with a floor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Epsilon {
    pub start: f64,
    pub decay: f64,
    pub floor: f64,
    pub steps: u64,
}

impl Epsilon {
    pub fn new(start: f64, decay: f64, floor: f64) -> Self {
        Self {
            start,
            decay,
            floor,
            steps: 0,
        }
    }

    pub fn value(&self) -> f64 {
        let n = self.steps.min(i32::MAX as u64) as i32;
        (self.start * self.decay.powi(n)).max(self.floor)
    }

    pub fn advance(&mut self) {
        self.steps += 1;
    }
}

/// Per-feature running mean and variance (Welford), used to z-score
/// channel features whose scale spans many orders of magnitude.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn std(&self, i: usize) -> f64 {
        if self.count < 2 {
            return 1.0;
        }
        let var = self.m2[i] / (self.count - 1) as f64;
        if var > 0.0 {
            var.sqrt()
        } else {
            1.0
        }
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, (o, &v)) in out.iter_mut().zip(x).enumerate() {
            *o = if self.count == 0 { v } else { (v - self.mean[i]) / self.std(i) };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lr_schedule() {
        assert_eq!(decay_lr(1e-4, 0.999, 0), 1e-4);
        assert_relative_eq!(decay_lr(1e-4, 0.999, 100), 9.910_802_775_024_778e-7, max_relative = 1e-9);
        let lrs: Vec<f64> = (0..500).map(|e| decay_lr(1e-4, 0.999, e)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(decay_lr(1e-4, 0.0, 300), 1e-4);
    }

    #[test]
    fn epsilon_schedule() {
        let mut e = Epsilon::new(1.0, 0.999, 0.01);
        assert_eq!(e.value(), 1.0);
        for n in 1..=6000u64 {
            e.advance();
            let expect = 0.999f64.powi(n as i32).max(0.01);
            assert_relative_eq!(e.value(), expect, max_relative = 1e-12);
            assert!(e.value() >= 0.01 && e.value() <= 1.0);
        }
        assert_eq!(e.value(), 0.01);
    }

    #[test]
    fn running_norm_matches_batch_statistics() {
        let xs = [[1.0, 1e-6], [2.0, 3e-6], [4.0, 2e-6], [7.0, 6e-6]];
        let mut n = RunningNorm::new(2);
        for x in &xs {
            n.update(x);
        }
        let mean0 = 3.5;
        let var0 = xs.iter().map(|x| (x[0] - mean0) * (x[0] - mean0)).sum::<f64>() / 3.0;
        assert_relative_eq!(n.mean[0], mean0, epsilon = 1e-12);
        assert_relative_eq!(n.std(0), var0.sqrt(), epsilon = 1e-12);
        let mut out = [0.0; 2];
        n.normalize_into(&[3.5, n.mean[1]], &mut out);
        assert_relative_eq!(out[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(out[1], 0.0, epsilon = 1e-9);
    }
}
