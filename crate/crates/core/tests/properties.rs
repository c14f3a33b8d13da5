//! Property tests for invariants that must hold on every input.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rscf::channel::{
    attenuation_constant, draw_channel, path_loss, pt_for_snr, snr_db, ChannelRealization,
    LargeScaleCoefficients,
};
use rscf::clustering::{
    design_clusters, design_clusters_fixed, select_aps_threshold, select_aps_topn, sparse_channel,
    ClusterPartition,
};
use rscf::linalg::{complex_normal_matrix, CMat};
use rscf::power::{delta_grid, PowerAllocation};
use rscf::precoding::{build_private, zf_sp, PrecoderKind};
use rscf::rates::{clamp_sinr, ergodic_sum_rate, RealizationRecord};
use rscf::verify::{partition_invariants_hold, random_selection, zf_residual};
use rscf::ExperimentConfig;

fn matrix(seed: u64, m: usize, k: usize) -> CMat {
    complex_normal_matrix(m, k, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn zeta_matrix(seed: u64, m: usize, k: usize) -> DMatrix<f64> {
    let g = matrix(seed, m, k);
    g.map(|z| 1e-12 * (1.0 + z.norm_sqr()))
}

proptest! {
    #[test]
    fn path_loss_is_continuous_and_non_increasing(
        d in 1.0f64..2000.0,
        step in 0.0f64..500.0,
        h_u in 0.5f64..3.0,
    ) {
        let l = attenuation_constant(1900.0, 15.0, h_u);
        let (d0, d1) = (10.0, 50.0);
        prop_assert!(path_loss(d + step, l, d0, d1) <= path_loss(d, l, d0, d1) + 1e-12);
        for edge in [d0, d1] {
            let left = path_loss(edge * (1.0 - 1e-12), l, d0, d1);
            let right = path_loss(edge * (1.0 + 1e-12), l, d0, d1);
            prop_assert!((left - right).abs() < 1e-9);
        }
    }

    #[test]
    fn threshold_selection_is_scale_invariant_and_serves_everyone(
        seed in any::<u64>(),
        m in 2usize..12,
        k in 1usize..8,
        exp in -20i32..20,
    ) {
        let zeta = zeta_matrix(seed, m, k);
        let j = select_aps_threshold(&zeta);
        let scaled = select_aps_threshold(&(zeta * 2f64.powi(exp)));
        prop_assert_eq!(&j, &scaled);
        for c in 0..k {
            prop_assert!(j.ones_in_column(c) >= 1);
        }
    }

    #[test]
    fn topn_selects_exactly_n_per_user(seed in any::<u64>(), m in 1usize..12, k in 1usize..8, n in 1usize..12) {
        let zeta = zeta_matrix(seed, m, k);
        match select_aps_topn(&zeta, n) {
            Ok(j) => {
                prop_assert!(n <= m);
                for c in 0..k {
                    prop_assert_eq!(j.ones_in_column(c), n);
                }
            }
            Err(_) => prop_assert!(n > m),
        }
    }

    #[test]
    fn greedy_clusters_partition_users_and_aps(
        seed in any::<u64>(),
        m in 2usize..10,
        k in 1usize..8,
        n_a in 1usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = random_selection(m, k, &mut rng);
        let w = zeta_matrix(seed ^ 1, m, k);
        prop_assert!(partition_invariants_hold(&j, n_a, &w).unwrap());
        let p = design_clusters(&j, n_a, &w).unwrap();
        let mut users: Vec<usize> = p.user_sets.concat();
        users.sort_unstable();
        prop_assert_eq!(users, (0..k).collect::<Vec<_>>());
        let aps: Vec<usize> = p.ap_sets.concat();
        let mut unique = aps.clone();
        unique.sort_unstable();
        unique.dedup();
        prop_assert_eq!(aps.len(), unique.len());
    }

    #[test]
    fn fixed_count_clustering_hits_the_count(
        seed in any::<u64>(),
        m in 2usize..10,
        k in 1usize..8,
        n_c in 1usize..8,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = random_selection(m, k, &mut rng);
        let w = zeta_matrix(seed ^ 2, m, k);
        match design_clusters_fixed(&j, n_c, &w) {
            Ok(p) => {
                prop_assert_eq!(p.n_clusters(), n_c);
                prop_assert!(p.validate().is_ok());
                prop_assert!(p.user_sets.iter().all(|s| !s.is_empty()));
            }
            Err(_) => prop_assert!(n_c > k),
        }
    }

    #[test]
    fn delta_grid_is_sorted_and_below_one(mu in 0.001f64..=1.0) {
        let grid = delta_grid(mu).unwrap();
        prop_assert_eq!(grid[0], 0.0);
        prop_assert!(grid.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(grid.iter().all(|&d| (0.0..1.0).contains(&d)));
    }

    #[test]
    fn allocations_spend_exactly_the_budget(
        pt in 1e-6f64..1e3,
        delta in 0.0f64..0.999,
        n_c in 1usize..5,
        k in 1usize..10,
        split in prop::collection::vec(0.0f64..1.0, 2),
    ) {
        let a = PowerAllocation::equal_split(pt, delta, n_c, k).unwrap();
        prop_assert!((a.total_power() - pt).abs() <= 1e-12 * pt);
        let scale = delta / split.iter().sum::<f64>().max(1e-9);
        let deltas: Vec<f64> = split.iter().map(|s| s * scale).collect();
        if deltas.iter().sum::<f64>() < 1.0 {
            let b = PowerAllocation::per_cluster(pt, &deltas, k).unwrap();
            prop_assert!((b.total_power() - pt).abs() <= 1e-12 * pt);
        }
        let p = PowerAllocation::private_only(pt, k).unwrap();
        prop_assert!((p.total_power() - pt).abs() <= 1e-12 * pt);
    }

    #[test]
    fn estimate_minus_error_is_the_scaled_true_channel(seed in any::<u64>(), sigma_e2 in 0.0f64..0.9) {
        let sigma_e = sigma_e2.sqrt();
        let zeta = LargeScaleCoefficients::from_linear(zeta_matrix(seed, 4, 3));
        let ch = draw_channel(&zeta, sigma_e, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let back = ChannelRealization::from_estimate(&ch.g_hat, ch.g_err.clone(), sigma_e).unwrap();
        let scale = ch.g_true.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let diff = (&back.g_true - &ch.g_true).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(diff <= 1e-12 * scale);
    }

    #[test]
    fn snr_round_trip(seed in any::<u64>(), target in -30.0f64..60.0, sw in 1e-15f64..1e-9) {
        let g = matrix(seed, 5, 3) * num_complex::Complex64::new(1e-5, 0.0);
        let pt = pt_for_snr(&g, target, sw);
        prop_assert!((snr_db(&g, pt, sw) - target).abs() < 1e-9);
    }

    #[test]
    fn clamped_sinr_is_finite_and_non_negative(num in prop::num::f64::ANY, den in prop::num::f64::ANY) {
        let g = clamp_sinr(num, den);
        prop_assert!(g >= 0.0 && g.is_finite());
    }

    #[test]
    fn ergodic_rates_add_up(
        rows in prop::collection::vec((prop::collection::vec(0.0f64..10.0, 4), prop::collection::vec(0.0f64..10.0, 4)), 1..20),
    ) {
        let records: Vec<RealizationRecord> = rows
            .iter()
            .map(|(c, p)| RealizationRecord {
                user_sets: vec![vec![0, 2], vec![1, 3]],
                mean_common: c.clone(),
                mean_private: p.clone(),
            })
            .collect();
        let s = ergodic_sum_rate(&records).unwrap();
        prop_assert!((s.esr - (s.ecr + s.epr)).abs() <= 1e-12 * s.esr.max(1.0));
        prop_assert!(s.ecr >= s.ecr_mean_of_mins - 1e-12);
        prop_assert!(s.stderr >= 0.0);
    }

    #[test]
    fn zf_nulls_interference_on_its_own_channel(seed in any::<u64>(), k in 1usize..5, extra in 1usize..6) {
        let m = k + extra;
        let g = matrix(seed, m, k);
        let part = ClusterPartition::single(m, k);
        let sparse = sparse_channel(&g, &part).unwrap();
        let pre = zf_sp(&sparse, 1.0).unwrap();
        prop_assert!(zf_residual(&sparse.g_bar, &pre.private, pre.beta[0]) < 1e-9);
    }

    #[test]
    fn normalization_sets_private_power_to_k(seed in any::<u64>(), kind_idx in 0usize..5) {
        let (m, k) = (8, 4);
        let g = matrix(seed, m, k);
        let part = ClusterPartition::single(m, k);
        let sparse = sparse_channel(&g, &part).unwrap();
        let kind = PrecoderKind::ALL[kind_idx % PrecoderKind::ALL.len()];
        let mut pre = build_private(kind, &sparse, &part, 1.0, 0.1).unwrap();
        pre.normalize_private(k as f64).unwrap();
        prop_assert!((pre.private_power() - k as f64).abs() < 1e-12 * k as f64);
        for c in 0..k {
            let norm: f64 = pre.private.column(c).iter().map(|z| z.norm_sqr()).sum();
            prop_assert!(norm > 0.0);
        }
    }

    #[test]
    fn config_round_trips_through_text(
        k in 1usize..16,
        extra in 1usize..48,
        seed in any::<u64>(),
        sigma_e2 in 0.0f64..0.9,
        snrs in prop::collection::vec(-20.0f64..50.0, 1..6),
        n_err in 1usize..500,
    ) {
        let cfg = ExperimentConfig {
            m: k + extra,
            k,
            seed,
            sigma_e2,
            snr_grid_db: snrs,
            n_err,
            ..ExperimentConfig::default()
        };
        let again = ExperimentConfig::from_kv_str(&cfg.to_kv_string()).unwrap();
        prop_assert_eq!(again, cfg);
    }
}
