use proptest::prelude::*;

use twosided::decompose::birkhoff_decompose;
use twosided::integrators::{
    da_iterative_with, ecda_iterative_with, exposure_weights, greedy_da, greedy_ecda, one_sided,
    ExposureKind, IterativeOptions, ProposalOrder, ReceiverCapacity,
};
use twosided::market::{build_rols, validate_market, MarketInstance, Pair, RawMarket, SortKind};
use twosided::metrics::{effective_rates, expected_metrics};
use twosided::realization::{realized_metrics, simulate_day, LoginMode};

/// Rates on a coarse grid so that dating-rate ties are common.
fn rate() -> impl Strategy<Value = f64> {
    prop_oneof![(0u32..=4).prop_map(|k| k as f64 / 4.0), 0.0f64..=1.0]
}

fn market() -> impl Strategy<Value = MarketInstance> {
    (1usize..8, 1usize..8)
        .prop_flat_map(|(n_prop, n_recv)| {
            (
                prop::collection::vec(rate(), n_prop),
                prop::collection::vec(rate(), n_recv),
                prop::collection::vec((prop::bool::weighted(0.8), rate(), rate()), n_prop * n_recv),
                prop::collection::vec(1u32..4, n_prop),
            )
        })
        .prop_map(|(proposer_login, receiver_login, cells, capacity)| {
            let n_recv = receiver_login.len();
            let pairs = cells
                .into_iter()
                .enumerate()
                .filter(|(_, (eligible, _, _))| *eligible)
                .map(|(k, (_, like, relike))| Pair {
                    proposer: (k / n_recv) as u32,
                    receiver: (k % n_recv) as u32,
                    like,
                    relike,
                })
                .collect();
            validate_market(RawMarket { proposer_login, receiver_login, pairs, capacity }).unwrap()
        })
}

fn exposure() -> impl Strategy<Value = ExposureKind> {
    prop_oneof![Just(ExposureKind::Headcount), Just(ExposureKind::LikeExposure), Just(ExposureKind::DateExposure)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn greedy_da_matches_protocol(mk in market(), q in 0u32..4, seed in any::<u64>()) {
        let q = ReceiverCapacity::uniform(mk.n_receivers(), q as f64);
        let rols = build_rols(&mk, SortKind::DateSort);
        let greedy = greedy_da(&mk, &q).unwrap();
        prop_assert_eq!(&da_iterative_with(&mk, &rols, &q, ProposalOrder::Fifo).unwrap(), &greedy);
        prop_assert_eq!(&da_iterative_with(&mk, &rols, &q, ProposalOrder::Random { seed }).unwrap(), &greedy);
    }

    #[test]
    fn greedy_ecda_matches_protocol(mk in market(), kind in exposure(), q in 0.0f64..3.0, seed in any::<u64>()) {
        let q = ReceiverCapacity::uniform(mk.n_receivers(), q);
        let w = exposure_weights(kind, &mk);
        let rols = build_rols(&mk, SortKind::DateSort);
        let greedy = greedy_ecda(&mk, &q, &w).unwrap();
        for order in [ProposalOrder::Fifo, ProposalOrder::Random { seed }] {
            let opts = IterativeOptions { order, max_rounds: None };
            let iterative = ecda_iterative_with(&mk, &rols, &q, &w, &opts).unwrap();
            prop_assert!(iterative.max_abs_diff(&greedy) <= 1e-9);
        }
    }

    #[test]
    fn outputs_are_feasible(mk in market(), kind in exposure(), q in 0.0f64..3.0) {
        let qc = ReceiverCapacity::uniform(mk.n_receivers(), q);
        let w = exposure_weights(kind, &mk);
        let m = greedy_ecda(&mk, &qc, &w).unwrap();
        m.check_feasible(&mk, 1e-9).unwrap();
        let mut used = vec![0.0; mk.n_receivers()];
        for (idx, v) in m.pair_entries(&mk).unwrap() {
            prop_assert!(v > 0.0 && v <= 1.0);
            used[mk.pair(idx).receiver as usize] += w.values()[idx] * v;
        }
        prop_assert!(used.iter().all(|&u| u <= q + 1e-9));

        for kind in [SortKind::LikeSort, SortKind::DateSort] {
            one_sided(&mk, &build_rols(&mk, kind)).check_feasible(&mk, 0.0).unwrap();
        }
    }

    #[test]
    fn slack_capacity_is_one_sided(mk in market(), kind in exposure()) {
        let reference = one_sided(&mk, &build_rols(&mk, SortKind::DateSort));
        let da = greedy_da(&mk, &ReceiverCapacity::uniform(mk.n_receivers(), mk.n_proposers() as f64)).unwrap();
        prop_assert_eq!(&da, &reference);
        let w = exposure_weights(kind, &mk);
        let slack = w.values().iter().sum::<f64>() + 1.0;
        let ecda = greedy_ecda(&mk, &ReceiverCapacity::uniform(mk.n_receivers(), slack), &w).unwrap();
        prop_assert_eq!(&ecda, &reference);
    }

    #[test]
    fn metrics_are_in_range(mk in market(), q in 0.0f64..3.0) {
        let w = exposure_weights(ExposureKind::DateExposure, &mk);
        let m = greedy_ecda(&mk, &ReceiverCapacity::uniform(mk.n_receivers(), q), &w).unwrap();
        let r = expected_metrics(&m, &mk).unwrap();
        prop_assert!(r.avg_effective_dates <= r.avg_dates_proposer + 1e-15);
        prop_assert!(r.avg_effective_dates >= 0.0);
        for p in [r.dating_prob_proposer, r.dating_prob_receiver] {
            prop_assert!((0.0..=1.0).contains(&p));
        }
        let eff = effective_rates(&m, &mk).unwrap().0;
        for (k, e) in eff.iter().enumerate() {
            prop_assert!(*e <= mk.delta(k) && *e >= 0.0);
        }
        // effective dates per receiver collapse to 1 − e^{−μ}
        let identity: f64 = r.receiver_load.0.iter().map(|mu| -(-mu).exp_m1()).sum::<f64>() / mk.n_proposers() as f64;
        prop_assert!((identity - r.avg_effective_dates).abs() <= 1e-12);
    }

    #[test]
    fn event_logs_are_consistent(mk in market(), seed in any::<u64>(), per_pair in any::<bool>()) {
        let mode = if per_pair { LoginMode::PerPair } else { LoginMode::UserLevel };
        let m = one_sided(&mk, &build_rols(&mk, SortKind::DateSort));
        let log = simulate_day(&m, &mk, seed, 3, mode).unwrap();
        prop_assert_eq!(&log, &simulate_day(&m, &mk, seed, 3, mode).unwrap());
        for e in &log.events {
            prop_assert!(!e.liked || (e.shown && e.proposer_login));
            prop_assert!(!e.reliked || (e.liked && e.receiver_login));
        }
        let r = realized_metrics(&log);
        prop_assert!(r.avg_effective_dates <= r.avg_dates);
        for (&n, &count) in &r.unit_credits {
            prop_assert_eq!(count % n as u64, 0);
        }
        prop_assert_eq!(r.effective_total(), r.receivers_with_date as f64);
    }

    #[test]
    fn decomposition_reconstructs(mk in market(), kind in exposure(), q in 0.0f64..3.0) {
        let w = exposure_weights(kind, &mk);
        let m = greedy_ecda(&mk, &ReceiverCapacity::uniform(mk.n_receivers(), q), &w).unwrap();
        let d = birkhoff_decompose(&m, &mk).unwrap();
        prop_assert!(d.len() <= m.nnz() + 1);
        prop_assert!((d.total_weight() - 1.0).abs() <= 1e-9);
        for c in &d.components {
            prop_assert!(c.weight > 0.0);
            let mut per_row = vec![0u32; mk.n_proposers()];
            for &(i, j) in &c.entries {
                per_row[i as usize] += 1;
                prop_assert!(m.get(i, j) > 0.0);
            }
            prop_assert!(per_row.iter().zip(mk.capacity()).all(|(n, c)| n <= c));
        }
        let rebuilt = d.reconstruct();
        prop_assert_eq!(rebuilt.len(), m.nnz());
        for (e, f) in rebuilt.iter().zip(m.entries()) {
            prop_assert_eq!((e.proposer, e.receiver), (f.proposer, f.receiver));
            prop_assert!((e.value - f.value).abs() <= 1e-9);
        }
    }
}
