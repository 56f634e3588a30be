use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rics_v2x::env::{self, EnvConfig};
use rics_v2x::phy::{self, RicsAction, RicsConfig, SharingMatrix};
use rics_v2x::scenario::{self, CellLayout, FadingParams, MobilityState, TopologyConfig, Vehicle};

/// One AV on the road axis at distance `d` from the BS.
fn single_av(d: f64) -> MobilityState {
    let v = Vehicle {
        along: 0.0,
        across: 0.0,
        heading: 1.0,
    };
    MobilityState {
        slot: 0,
        cells: vec![CellLayout {
            axis: 0.0,
            zone_start: d,
            zone_length: 100.0,
            rics: [80.0, 0.0],
            avs: vec![v],
            v2v_tx: vec![],
            v2v_rx: vec![],
        }],
    }
}

fn mean_direct_power(d: f64, draws: usize, rng: &mut ChaCha8Rng) -> f64 {
    let p = FadingParams::default();
    let m = single_av(d);
    (0..draws)
        .map(|_| scenario::draw_csi(&m, 1, &p, rng).unwrap().cells[0].avs[0].h_ub.norm_sqr())
        .sum::<f64>()
        / draws as f64
}

#[test]
fn direct_power_matches_path_gain() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = FadingParams::default();
    for d in [60.0, 250.0] {
        let expected = scenario::path_gain(d, &p).unwrap().powi(2);
        let got = mean_direct_power(d, 100_000, &mut rng);
        assert!((got / expected - 1.0).abs() < 0.02, "d={d}: {got} vs {expected}");
    }
}

#[test]
fn doubling_distance_scales_power() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let near = mean_direct_power(150.0, 100_000, &mut rng);
    let far = mean_direct_power(300.0, 100_000, &mut rng);
    let ratio = far / near;
    let expected = 2f64.powf(-2.5);
    assert!((ratio / expected - 1.0).abs() < 0.03, "{ratio} vs {expected}");
}

#[test]
fn log_power_slope_is_minus_alpha() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let ds = [50.0, 100.0, 150.0, 200.0, 250.0, 300.0, 350.0, 400.0];
    let xs: Vec<f64> = ds.iter().map(|d: &f64| d.ln()).collect();
    let ys: Vec<f64> = ds.iter().map(|&d| mean_direct_power(d, 20_000, &mut rng).ln()).collect();
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let den: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    let slope = num / den;
    assert!((slope + 2.5).abs() < 0.1, "slope {slope}");
}

#[test]
fn cascaded_power_matches_path_gains() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let p = FadingParams::default();
    let m = single_av(250.0);
    let budget = scenario::LinkBudget::new(&m.cells[0], 4, &p).unwrap();
    let draws = 100_000;
    let mut power = 0.0;
    for _ in 0..draws {
        let csi = scenario::draw_csi(&m, 4, &p, &mut rng).unwrap();
        power += csi.cells[0].avs[0].h_ur[2].norm_sqr();
    }
    let got = power / draws as f64;
    let expected = budget.ur_gain[0].powi(2);
    assert!((got / expected - 1.0).abs() < 0.02, "{got} vs {expected}");
}

#[test]
fn transmit_phases_cancel_interference() {
    let cfg = EnvConfig {
        topology: TopologyConfig {
            avs_per_cell: 1,
            v2v_per_cell: 1,
            rics_elements: 8,
            ..Default::default()
        },
        ..Default::default()
    };
    let off = RicsConfig {
        psi: 0.0,
        ..cfg.rics.clone()
    };
    let zero = phy::expand_action(&RicsAction::zeros(2), &off, 8).unwrap().theta_t;
    let thetas: Vec<_> = RicsAction::enumerate(&cfg.rics)
        .iter()
        .map(|a| phy::expand_action(a, &cfg.rics, 8).unwrap().theta_t)
        .collect();
    let mut omega = SharingMatrix::zeros(1, 1);
    omega.omega[0][0] = true;
    let (mut best_sum, mut zero_sum, mut wins) = (0.0, 0.0, 0);
    for seed in 0..1000 {
        let (s, _) = env::reset(&cfg, seed).unwrap();
        let cell = &s.csi.cells[0];
        let i0 = phy::v2v_interference(cell, &zero, &omega, &cfg.phy, 0).unwrap();
        let best = thetas
            .iter()
            .map(|t| phy::v2v_interference(cell, t, &omega, &cfg.phy, 0).unwrap())
            .fold(f64::INFINITY, f64::min);
        best_sum += best;
        zero_sum += i0;
        wins += (best <= i0) as usize;
    }
    assert!(best_sum <= zero_sum);
    assert!(wins >= 600, "{wins}/1000");
}

#[test]
fn split_energy_identity() {
    for (beta_r, psi) in [(0.5, 1.3), (0.2, 0.8), (0.9, 1.1)] {
        let cfg = RicsConfig {
            beta_r,
            beta_t: 1.0 - beta_r,
            psi,
            ..Default::default()
        };
        for a in RicsAction::enumerate(&cfg).iter().step_by(7) {
            let m = phy::expand_action(a, &cfg, 6).unwrap();
            for (r, t) in m.theta_r.iter().zip(&m.theta_t) {
                let total = r.norm_sqr() + (t / psi).norm_sqr();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}
