//! Self-checks: closed-form vs generic SINRs, ZF orthogonality, power
//! budgets, zero-common-power collapse, partition invariants, path-loss
//! continuity and complexity scaling.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::channel::{attenuation_constant, path_loss, pt_for_snr};
use crate::clustering::{design_clusters, sparse_channel, ClusterPartition, SelectionMatrix};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::harness::{derive_seed, draw_realization, evaluate_scheme, PowerPolicy, Realization};
use crate::linalg::CMat;
use crate::power::{delta_grid, PowerAllocation};
use crate::precoding::{
    build_private, common_precoder, flop_estimate, network_wide_variant, zf_sp, PrecoderKind,
};
use crate::rates::{
    sinr_closed_form, sinr_common_generic, sinr_private_generic, RateInputs, Stream,
};
use crate::scheme::Scheme;

pub const CLOSED_FORM_TOL: f64 = 1e-9;
pub const ZF_RESIDUAL_TOL: f64 = 1e-9;
pub const BUDGET_TOL: f64 = 1e-9;
pub const COLLAPSE_TOL: f64 = 1e-12;
pub const CONTINUITY_TOL_DB: f64 = 1e-9;
pub const FLOP_SCALING_TOL: f64 = 0.05;

const STREAM_VERIFY: u64 = 0x766572;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub max_residual: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{} {:<28} max residual {:.3e} (tol {:.1e}) {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.max_residual,
                c.tolerance,
                c.detail
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Randomized channel instances per check.
    pub instances: usize,
    /// Perturb the ZF precoder before the orthogonality check (negative
    /// control).
    pub corrupt_zf: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            instances: 100,
            corrupt_zf: false,
        }
    }
}

fn relative(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Largest relative gap between closed-form and generic SINRs over all users
/// and both streams. `None` when the instance is rank deficient for `kind`.
pub fn closed_form_residual(
    cfg: &ExperimentConfig,
    real: &Realization,
    kind: PrecoderKind,
    network_wide: bool,
    snr_db: f64,
    delta: f64,
) -> Result<Option<f64>> {
    let sigma_w2 = cfg.noise_variance();
    let pt = pt_for_snr(&real.cf.g_true, snr_db, sigma_w2);
    let partition = if network_wide {
        ClusterPartition::single(cfg.m, cfg.k)
    } else {
        real.partition.clone()
    };
    let sparse = sparse_channel(&real.cf.g_hat, &partition)?;
    let built = if network_wide {
        let fam = match kind {
            PrecoderKind::MfSp => crate::precoding::Family::Mf,
            PrecoderKind::ZfSp => crate::precoding::Family::Zf,
            PrecoderKind::MmseSp => crate::precoding::Family::Mmse,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "{other} has no network-wide form"
                )))
            }
        };
        network_wide_variant(&real.cf.g_hat, fam, pt, sigma_w2, cfg.k)
    } else {
        build_private(kind, &sparse, &partition, pt, sigma_w2)
    };
    let mut pre = match built {
        Ok(p) => p,
        Err(e) if e.is_degenerate_draw() => return Ok(None),
        Err(e) => return Err(e),
    };
    pre.normalize_private(cfg.k as f64)?;
    let (common, cache) = match common_precoder(&sparse, &partition) {
        Ok(x) => x,
        Err(e) if e.is_degenerate_draw() => return Ok(None),
        Err(e) => return Err(e),
    };
    let pre = pre.with_common(common);
    let power = PowerAllocation::equal_split(pt, delta, partition.n_clusters(), cfg.k)?;
    let inputs = RateInputs {
        realization: &real.cf,
        sparse: &sparse,
        partition: &partition,
        precoders: &pre,
        svd_cache: &cache,
        power: &power,
        sigma_w2,
    };
    let mut worst: f64 = 0.0;
    for k in 0..cfg.k {
        let gc = sinr_common_generic(k, &inputs)?;
        let gp = sinr_private_generic(k, &inputs)?;
        let cc = sinr_closed_form(k, &inputs, kind, Stream::Common)?;
        let cp = sinr_closed_form(k, &inputs, kind, Stream::Private)?;
        worst = worst.max(relative(gc, cc)).max(relative(gp, cp));
    }
    Ok(Some(worst))
}

fn instance_config(cfg: &ExperimentConfig, sigma_e2: f64, n: usize) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.sigma_e2 = sigma_e2;
    c.n_err = 1;
    c.seed = derive_seed(cfg.seed, STREAM_VERIFY, n as u64, 0);
    c
}

fn check_closed_forms(cfg: &ExperimentConfig, opts: &VerifyOptions) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let (mut evaluated, mut skipped) = (0usize, 0usize);
    for sigma_e2 in [0.0, cfg.sigma_e2] {
        for n in 0..opts.instances {
            let c = instance_config(cfg, sigma_e2, n);
            let real = draw_realization(&c, 0, 0)?;
            for kind in PrecoderKind::ALL {
                let mut variants = vec![false];
                if !kind.is_reduced() {
                    variants.push(true);
                }
                for nw in variants {
                    match closed_form_residual(&c, &real, kind, nw, 20.0, 0.3)? {
                        Some(r) => {
                            worst = worst.max(r);
                            evaluated += 1;
                        }
                        None => skipped += 1,
                    }
                }
            }
        }
    }
    Ok(CheckResult {
        name: "closed_form_equivalence".into(),
        passed: evaluated > 0 && worst <= CLOSED_FORM_TOL,
        max_residual: worst,
        tolerance: CLOSED_FORM_TOL,
        detail: format!("{evaluated} evaluated, {skipped} rank-deficient skipped"),
    })
}

/// `max |ḠᵀP/β − I|` of the sparse ZF precoder.
pub fn zf_residual(g_bar: &CMat, p: &CMat, beta: f64) -> f64 {
    let r = g_bar.transpose() * p / Complex64::new(beta, 0.0);
    let mut worst: f64 = 0.0;
    for i in 0..r.nrows() {
        for j in 0..r.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((r[(i, j)] - Complex64::new(target, 0.0)).norm());
        }
    }
    worst
}

fn check_zf(cfg: &ExperimentConfig, opts: &VerifyOptions) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let (mut evaluated, mut skipped) = (0usize, 0usize);
    for n in 0..opts.instances {
        let c = instance_config(cfg, 0.0, n);
        let real = draw_realization(&c, 0, 0)?;
        let pt = pt_for_snr(&real.cf.g_true, 20.0, c.noise_variance());
        for partition in [ClusterPartition::single(c.m, c.k), real.partition.clone()] {
            let sparse = sparse_channel(&real.cf.g_hat, &partition)?;
            match zf_sp(&sparse, pt) {
                Ok(mut p) => {
                    if opts.corrupt_zf {
                        let bump = Complex64::new(1e-3 * p.private.norm(), 0.0);
                        p.private[(0, 0)] += bump;
                    }
                    worst = worst.max(zf_residual(&sparse.g_bar, &p.private, p.beta[0]));
                    evaluated += 1;
                }
                Err(e) if e.is_degenerate_draw() => skipped += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(CheckResult {
        name: "zf_orthogonality".into(),
        passed: evaluated > 0 && worst <= ZF_RESIDUAL_TOL,
        max_residual: worst,
        tolerance: ZF_RESIDUAL_TOL,
        detail: format!("{evaluated} evaluated, {skipped} rank-deficient skipped"),
    })
}

fn check_power_budget(cfg: &ExperimentConfig, opts: &VerifyOptions) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let mut count = 0usize;
    let grid = delta_grid(cfg.power_grid_step)?;
    for n in 0..opts.instances {
        let c = instance_config(cfg, cfg.sigma_e2, n);
        let real = draw_realization(&c, 0, 0)?;
        let sigma_w2 = c.noise_variance();
        let pt = pt_for_snr(&real.cf.g_true, 10.0, sigma_w2);
        for &d in &grid {
            let a = PowerAllocation::equal_split(pt, d, real.partition.n_clusters(), c.k)?;
            worst = worst.max((a.total_power() / pt - 1.0).max(0.0));
            count += 1;
        }
        for g in [&real.cf.g_hat, &real.bs.g_hat] {
            for fam in [crate::precoding::Family::Zf, crate::precoding::Family::Mmse] {
                match network_wide_variant(g, fam, pt, sigma_w2, c.k) {
                    Ok(p) => {
                        worst = worst.max(relative(p.private_power(), pt));
                        count += 1;
                    }
                    Err(e) if e.is_degenerate_draw() => {}
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok(CheckResult {
        name: "power_budget".into(),
        passed: worst <= BUDGET_TOL,
        max_residual: worst,
        tolerance: BUDGET_TOL,
        detail: format!("{count} allocations and precoders"),
    })
}

fn check_collapse(cfg: &ExperimentConfig, opts: &VerifyOptions) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    let mut count = 0usize;
    for n in 0..opts.instances.min(50) {
        let mut c = instance_config(cfg, cfg.sigma_e2, n);
        c.n_err = 10;
        let real = draw_realization(&c, 0, 0)?;
        for label in ["RS-CF-MF-SP", "RS-CF-MMSE-SP", "RS-CF-MMSE-RD", "RS-BS-MF"] {
            let rs: Scheme = label.parse()?;
            let a = evaluate_scheme(&c, &real, rs, 10.0, PowerPolicy::Fixed(0.0));
            let b = evaluate_scheme(
                &c,
                &real,
                rs.without_rate_splitting(),
                10.0,
                PowerPolicy::Optimize,
            );
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    worst = worst.max((a.outcome.sum_rate - b.outcome.sum_rate).abs());
                    count += 1;
                }
                (Err(e), _) | (_, Err(e)) if e.is_degenerate_draw() => {}
                (Err(e), _) | (_, Err(e)) => return Err(e),
            }
        }
    }
    Ok(CheckResult {
        name: "delta_zero_collapse".into(),
        passed: count > 0 && worst <= COLLAPSE_TOL,
        max_residual: worst,
        tolerance: COLLAPSE_TOL,
        detail: format!("{count} scheme pairs"),
    })
}

/// Random `M × K` selection with every column non-empty.
pub fn random_selection<R: Rng + ?Sized>(m: usize, k: usize, rng: &mut R) -> SelectionMatrix {
    let mut j = DMatrix::from_fn(m, k, |_, _| u8::from(rng.random_bool(0.4)));
    for c in 0..k {
        if j.column(c).iter().all(|&x| x == 0) {
            j[(rng.random_range(0..m), c)] = 1;
        }
    }
    SelectionMatrix { j }
}

/// Partition and test-vector invariants of the greedy cluster design on one
/// selection matrix.
pub fn partition_invariants_hold(
    j: &SelectionMatrix,
    n_a: usize,
    weights: &DMatrix<f64>,
) -> Result<bool> {
    let p = design_clusters(j, n_a, weights)?;
    if p.validate().is_err() || design_clusters(j, n_a, weights)? != p {
        return Ok(false);
    }
    for (users, tv) in p.user_sets.iter().zip(&p.test_vectors) {
        let and: Vec<u8> = (0..j.n_aps())
            .map(|m| users.iter().map(|&k| j.j[(m, k)]).fold(1, |a, b| a & b))
            .collect();
        if &and != tv {
            return Ok(false);
        }
    }
    Ok(true)
}

fn check_partitions(cfg: &ExperimentConfig, opts: &VerifyOptions) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_VERIFY, 1 << 20, 0));
    let mut failures = 0usize;
    let n = opts.instances * 10;
    for _ in 0..n {
        let j = random_selection(cfg.m, cfg.k, &mut rng);
        let w = DMatrix::from_fn(cfg.m, cfg.k, |_, _| rng.random::<f64>());
        let n_a = rng.random_range(1..=cfg.m.min(4));
        if !partition_invariants_hold(&j, n_a, &w)? {
            failures += 1;
        }
    }
    Ok(CheckResult {
        name: "partition_invariants".into(),
        passed: failures == 0,
        max_residual: failures as f64,
        tolerance: 0.0,
        detail: format!("{n} random selections"),
    })
}

fn check_continuity(cfg: &ExperimentConfig) -> CheckResult {
    let l = attenuation_constant(cfg.freq_mhz, cfg.h_ap_m, cfg.h_u_m);
    let worst = [cfg.d0_m, cfg.d1_m]
        .into_iter()
        .map(|d| {
            let below = path_loss(d * (1.0 - 1e-13), l, cfg.d0_m, cfg.d1_m);
            let above = path_loss(d * (1.0 + 1e-13), l, cfg.d0_m, cfg.d1_m);
            (below - above).abs()
        })
        .fold(0.0, f64::max);
    CheckResult {
        name: "path_loss_continuity".into(),
        passed: worst <= CONTINUITY_TOL_DB,
        max_residual: worst,
        tolerance: CONTINUITY_TOL_DB,
        detail: "at d0 and d1".into(),
    }
}

/// Synthetic partition of `k` users into clusters of `cluster_users` users
/// and `cluster_aps` APs each.
pub fn synthetic_partition(
    m: usize,
    k: usize,
    cluster_users: usize,
    cluster_aps: usize,
) -> ClusterPartition {
    let n_c = k / cluster_users;
    ClusterPartition {
        n_aps: m,
        n_users: k,
        user_sets: (0..n_c)
            .map(|i| (i * cluster_users..(i + 1) * cluster_users).collect())
            .collect(),
        ap_sets: (0..n_c)
            .map(|i| (i * cluster_aps..(i + 1) * cluster_aps).collect())
            .collect(),
        test_vectors: (0..n_c)
            .map(|i| (0..m).map(|a| u8::from(a / cluster_aps == i)).collect())
            .collect(),
    }
}

/// Relative change of the per-AP cost when `(M, K)` doubles from `(m, k)`.
pub fn flop_scaling_gap(m: usize, k: usize, cluster_users: usize, cluster_aps: usize) -> f64 {
    let small = flop_estimate(
        &synthetic_partition(m, k, cluster_users, cluster_aps),
        m,
        k,
        false,
    );
    let big = flop_estimate(
        &synthetic_partition(2 * m, 2 * k, cluster_users, cluster_aps),
        2 * m,
        2 * k,
        false,
    );
    let a = small.total() as f64 / m as f64;
    let b = big.total() as f64 / (2 * m) as f64;
    (b - a).abs() / a
}

fn check_flops() -> CheckResult {
    let gap = flop_scaling_gap(32, 16, 2, 4);
    CheckResult {
        name: "flop_scaling".into(),
        passed: gap < FLOP_SCALING_TOL,
        max_residual: gap,
        tolerance: FLOP_SCALING_TOL,
        detail: "(32, 16) to (64, 32), clusters of 2 users / 4 APs".into(),
    }
}

fn check_csit_identity(cfg: &ExperimentConfig, opts: &VerifyOptions) -> Result<CheckResult> {
    let mut worst: f64 = 0.0;
    for n in 0..opts.instances {
        let c = instance_config(cfg, cfg.sigma_e2, n);
        let real = draw_realization(&c, 0, 0)?;
        for ch in [&real.cf, &real.bs] {
            let a = Complex64::new((1.0 - ch.sigma_e * ch.sigma_e).sqrt(), 0.0);
            let rebuilt = &ch.g_true * a + &ch.g_err;
            for (x, y) in rebuilt.iter().zip(ch.g_hat.iter()) {
                worst = worst.max((x - y).norm() / y.norm());
            }
        }
    }
    Ok(CheckResult {
        name: "csit_identity".into(),
        passed: worst <= 1e-12,
        max_residual: worst,
        tolerance: 1e-12,
        detail: "estimate = scaled truth + error".into(),
    })
}

/// Runs every check on the configuration's network size and error level.
pub fn verify(cfg: &ExperimentConfig, opts: &VerifyOptions) -> Result<VerifyReport> {
    cfg.validate()?;
    Ok(VerifyReport {
        checks: vec![
            check_closed_forms(cfg, opts)?,
            check_zf(cfg, opts)?,
            check_power_budget(cfg, opts)?,
            check_collapse(cfg, opts)?,
            check_partitions(cfg, opts)?,
            check_continuity(cfg),
            check_flops(),
            check_csit_identity(cfg, opts)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_verify_passes() {
        let opts = VerifyOptions {
            instances: 10,
            corrupt_zf: false,
        };
        let report = verify(&ExperimentConfig::default(), &opts).unwrap();
        assert!(report.passed(), "{}", report.to_text());
    }

    #[test]
    fn corrupted_zf_is_caught() {
        let opts = VerifyOptions {
            instances: 3,
            corrupt_zf: true,
        };
        let report = verify(&ExperimentConfig::default(), &opts).unwrap();
        let zf = report
            .checks
            .iter()
            .find(|c| c.name == "zf_orthogonality")
            .unwrap();
        assert!(!zf.passed);
        assert!(!report.passed());
    }

    #[test]
    fn flop_gap_is_zero_for_fixed_clusters() {
        assert_eq!(flop_scaling_gap(32, 16, 2, 4), 0.0);
    }
}
