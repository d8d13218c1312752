//! Model invariants over random small networks, plus coarse monotonicity checks.

use proptest::prelude::*;

use cf_rsma::channel::{bessel_j0, temporal_corr};
use cf_rsma::linalg::real_trace;
use cf_rsma::link::{ergodic_se, mean_stderr, DropModel, RunOptions};
use cf_rsma::precoding::power_split;
use cf_rsma::{Mode, SimConfig, Velocity};

fn base() -> SimConfig {
    SimConfig {
        num_aps: 8,
        antennas_per_ap: 2,
        num_ues: 8,
        num_clusters: 2,
        tau_c: 60,
        drops: 4,
        realizations: 8,
        ..SimConfig::default()
    }
}

fn sum_se(cfg: &SimConfig) -> f64 {
    ergodic_se(cfg, &RunOptions::default()).unwrap().se_sum
}

#[test]
fn sum_se_falls_with_noise_power() {
    let se: Vec<f64> = [-94.0, -84.0, -74.0]
        .iter()
        .map(|&noise_dbm| sum_se(&SimConfig { noise_dbm, ..base() }))
        .collect();
    assert!(se[0] > se[1] && se[1] > se[2], "{se:?}");
}

#[test]
fn sum_se_falls_with_velocity() {
    for mode in [Mode::RsmaDlPilots, Mode::Sdma] {
        let se: Vec<f64> = [0.0, 50.0, 150.0]
            .iter()
            .map(|&v| {
                sum_se(&SimConfig {
                    mode,
                    velocity_kmh: Velocity::Uniform(v),
                    ..base()
                })
            })
            .collect();
        assert!(se[0] > se[1] && se[1] > se[2], "{mode}: {se:?}");
    }
}

#[test]
fn same_seed_reproduces_and_new_seed_differs() {
    let a = ergodic_se(&base(), &RunOptions::default()).unwrap();
    let b = ergodic_se(&base(), &RunOptions::default()).unwrap();
    assert_eq!(a, b);
    let c = ergodic_se(&SimConfig { seed: 2, ..base() }, &RunOptions::default()).unwrap();
    assert_ne!(a.se_sum, c.se_sum);
}

fn network() -> impl Strategy<Value = SimConfig> {
    (2usize..7, 2usize..7, 1usize..4, 0.0f64..200.0, any::<u64>(), 0usize..3).prop_flat_map(
        |(m, k, n, v, seed, mode)| {
            (1..=m.min(k)).prop_map(move |l| SimConfig {
                num_aps: m,
                num_ues: k,
                antennas_per_ap: n,
                num_clusters: l,
                velocity_kmh: Velocity::Uniform(v),
                seed,
                tau_c: 40,
                mode: Mode::ALL[mode],
                ..SimConfig::default()
            })
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn drop_statistics_are_consistent(cfg in network()) {
        let model = DropModel::new(&cfg, 0).unwrap();
        let topo = &model.topology;
        for m in 0..topo.num_aps {
            for k in 0..topo.num_ues {
                let r_hat = real_trace(model.ul.r_hat(m, k));
                let r_bar = real_trace(&topo.r_bar[topo.idx(m, k)]);
                prop_assert!(r_hat >= 0.0 && r_hat <= r_bar * (1.0 + 1e-9));
                if topo.cluster_of_ue[k] == topo.cluster_of_ap[m] {
                    let eta = model.precoding.eta_private[m * topo.num_ues + k];
                    prop_assert!((eta * r_hat - 1.0).abs() < 1e-9);
                }
            }
        }
        let stats = (0..topo.num_ues)
            .map(|k| model.dl.private(k))
            .chain((0..topo.num_ues).flat_map(|k| (0..topo.num_clusters).map(move |l| (k, l))).map(|(k, l)| model.dl.common(k, l)));
        for s in stats {
            prop_assert!(s.r >= 0.0 && s.r_hat >= 0.0 && s.r_tilde >= -1e-12 * s.r.max(1e-300));
            prop_assert!((s.r_hat + s.r_tilde - s.r).abs() <= 1e-9 * s.r.max(1e-300));
        }
    }

    #[test]
    fn decomposition_reassembles_received_signal(cfg in network(), r in 0u64..50) {
        let model = DropModel::new(&cfg, 0).unwrap();
        let real = model.realization(r).unwrap();
        let t = model.timeline.lambda + (r as usize) % model.timeline.num_data_instants();
        for s in real.simulate_instant(t).unwrap() {
            prop_assert_eq!(s.common.is_some(), cfg.mode != Mode::Sdma);
            if let Some(c) = &s.common {
                prop_assert!((c.total() - s.y_common).norm() <= 1e-10 * s.y_common.norm());
            }
            prop_assert!((s.private.total() - s.y_private).norm() <= 1e-10 * s.y_private.norm());
        }
    }

    #[test]
    fn power_split_conserves_budget(t in 0.0f64..=1.0, p in 1e-3f64..10.0, count in 1usize..40) {
        let (c, q) = power_split(t, p, count).unwrap();
        prop_assert!(c >= 0.0 && q >= 0.0);
        prop_assert!((c + q * count as f64 - p).abs() <= 1e-12 * p);
    }

    #[test]
    fn temporal_correlation_is_bounded_and_symmetric(t in 0usize..300, lam in 0usize..300, v in 0.0f64..300.0) {
        let a = temporal_corr(t, lam, v, 2e9, 66.7e-6);
        prop_assert!(a.abs() <= 1.0 + 1e-12);
        prop_assert_eq!(a, temporal_corr(lam, t, v, 2e9, 66.7e-6));
        prop_assert!(bessel_j0(0.0) == 1.0);
    }

    #[test]
    fn mean_stderr_of_shifted_sample(xs in prop::collection::vec(-10.0f64..10.0, 2..50), c in -5.0f64..5.0) {
        let (m0, s0) = mean_stderr(&xs);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let (m1, s1) = mean_stderr(&shifted);
        prop_assert!((m1 - m0 - c).abs() < 1e-9);
        prop_assert!((s1 - s0).abs() < 1e-9);
    }
}
