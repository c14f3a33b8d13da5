//! SINRs, rates, average sum rate over CSIT-error draws and ergodic
//! aggregation.
//!
//! With `G = ε (Ĝ − G̃)` the received signal of user `k`, divided by `ε`, is
//! `(ĝ_k − g̃_k)ᵀ x + w_k/ε`. The signal term of each stream is written as
//! `a |ĝ_kᵀ p|²` plus a correction `d = a (|g̃_kᵀ p|² − 2 Re{(ĝ_kᵀ p)* g̃_kᵀ p})`
//! that is moved into the denominator; interference uses `(ĝ_k − g̃_k)ᵀ p`
//! and the noise power is `σ_w²/ε²`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_error_matrices, ChannelRealization, LargeScaleCoefficients};
use crate::clustering::{ClusterPartition, SparseChannel};
use crate::error::{Error, Result};
use crate::linalg::{compensated_sum, conj, tdot, CMat, CVec};
use crate::linalg::{gram_transpose_conj, hermitian_inverse};
use crate::power::PowerAllocation;
use crate::precoding::{
    mmse_gram_inverse, mmse_rd_regularizer, mmse_sp_regularizer, zf_gram_inverse, PrecoderKind,
    PrecoderSet, SvdCache,
};

/// Everything needed to evaluate the SINRs of one channel realization.
#[derive(Debug, Clone, Copy)]
pub struct RateInputs<'a> {
    pub realization: &'a ChannelRealization,
    pub sparse: &'a SparseChannel,
    pub partition: &'a ClusterPartition,
    pub precoders: &'a PrecoderSet,
    pub svd_cache: &'a SvdCache,
    pub power: &'a PowerAllocation,
    pub sigma_w2: f64,
}

impl RateInputs<'_> {
    pub fn effective_noise(&self) -> f64 {
        self.sigma_w2 / (self.realization.epsilon * self.realization.epsilon)
    }

    fn check(&self) -> Result<()> {
        let (m, k) = self.realization.g_hat.shape();
        let n_c = self.precoders.common.ncols();
        if self.precoders.private.shape() != (m, k)
            || self.power.a_p.len() != k
            || self.power.a_c.len() != n_c
            || (n_c != 0 && n_c != self.partition.n_clusters())
        {
            return Err(Error::Dimension(format!(
                "channel {m}×{k}, private {:?}, {} common columns, {} clusters, {} / {} amplitudes",
                self.precoders.private.shape(),
                n_c,
                self.partition.n_clusters(),
                self.power.a_c.len(),
                self.power.a_p.len()
            )));
        }
        Ok(())
    }
}

/// `num / den`, with non-positive denominators and negative ratios mapped
/// to zero.
pub fn clamp_sinr(num: f64, den: f64) -> f64 {
    if !(den > 0.0) {
        return 0.0;
    }
    let g = num / den;
    if g > 0.0 && g.is_finite() {
        g
    } else {
        0.0
    }
}

/// Per-draw quadratic terms, independent of the power allocation.
#[derive(Debug, Clone)]
pub struct DrawTerms {
    cluster_of: Vec<usize>,
    /// `|ĝ_kᵀ p_{c_i}|²` for the own cluster.
    sig_c: Vec<f64>,
    d_c: Vec<f64>,
    /// `|ĝ_kᵀ p_k|²`.
    sig_p: Vec<f64>,
    d_p: Vec<f64>,
    /// `|(ĝ_k − g̃_k)ᵀ p_{c_j}|²`, `K × N_c`.
    leak_c: DMatrix<f64>,
    /// `|(ĝ_k − g̃_k)ᵀ p_l|²`, `K × K`.
    leak_p: DMatrix<f64>,
    noise: f64,
}

fn correction(h: Complex64, t: Complex64) -> f64 {
    t.norm_sqr() - 2.0 * (h.conj() * t).re
}

impl DrawTerms {
    /// `cluster_of[k]` must index a column of `precoders.common` when common
    /// streams are present.
    pub fn new(
        g_hat: &CMat,
        g_err: &CMat,
        precoders: &PrecoderSet,
        cluster_of: &[usize],
        noise: f64,
    ) -> Self {
        let k = g_hat.ncols();
        let n_c = precoders.common.ncols();
        let gt = g_hat.transpose();
        let et = g_err.transpose();
        let hc = &gt * &precoders.common;
        let tc = &et * &precoders.common;
        let hp = &gt * &precoders.private;
        let tp = &et * &precoders.private;
        let leak_c = DMatrix::from_fn(k, n_c, |u, j| (hc[(u, j)] - tc[(u, j)]).norm_sqr());
        let leak_p = DMatrix::from_fn(k, k, |u, l| (hp[(u, l)] - tp[(u, l)]).norm_sqr());
        let mut sig_c = vec![0.0; k];
        let mut d_c = vec![0.0; k];
        if n_c > 0 {
            for u in 0..k {
                let i = cluster_of[u];
                sig_c[u] = hc[(u, i)].norm_sqr();
                d_c[u] = correction(hc[(u, i)], tc[(u, i)]);
            }
        }
        let sig_p = (0..k).map(|u| hp[(u, u)].norm_sqr()).collect();
        let d_p = (0..k).map(|u| correction(hp[(u, u)], tp[(u, u)])).collect();
        DrawTerms {
            cluster_of: cluster_of.to_vec(),
            sig_c,
            d_c,
            sig_p,
            d_p,
            leak_c,
            leak_p,
            noise,
        }
    }

    fn common_interference(&self, k: usize, power: &PowerAllocation, skip: Option<usize>) -> f64 {
        (0..self.leak_c.ncols())
            .filter(|&j| Some(j) != skip)
            .map(|j| power.a_c[j] * power.a_c[j] * self.leak_c[(k, j)])
            .sum()
    }

    fn private_interference(&self, k: usize, power: &PowerAllocation, skip: Option<usize>) -> f64 {
        (0..self.leak_p.ncols())
            .filter(|&l| Some(l) != skip)
            .map(|l| power.a_p[l] * power.a_p[l] * self.leak_p[(k, l)])
            .sum()
    }

    pub fn sinr_common(&self, k: usize, power: &PowerAllocation) -> f64 {
        if self.leak_c.ncols() == 0 {
            return 0.0;
        }
        let i = self.cluster_of[k];
        let a2 = power.a_c[i] * power.a_c[i];
        let den = a2 * self.d_c[k]
            + self.common_interference(k, power, Some(i))
            + self.private_interference(k, power, None)
            + self.noise;
        clamp_sinr(a2 * self.sig_c[k], den)
    }

    pub fn sinr_private(&self, k: usize, power: &PowerAllocation) -> f64 {
        let a2 = power.a_p[k] * power.a_p[k];
        let own = if self.leak_c.ncols() == 0 {
            None
        } else {
            Some(self.cluster_of[k])
        };
        let den = a2 * self.d_p[k]
            + self.common_interference(k, power, own)
            + self.private_interference(k, power, Some(k))
            + self.noise;
        clamp_sinr(a2 * self.sig_p[k], den)
    }

    /// Common and private rates of every user.
    pub fn rates(&self, power: &PowerAllocation) -> (Vec<f64>, Vec<f64>) {
        let k = self.sig_p.len();
        let rc = (0..k)
            .map(|u| (1.0 + self.sinr_common(u, power)).log2())
            .collect();
        let rp = (0..k)
            .map(|u| (1.0 + self.sinr_private(u, power)).log2())
            .collect();
        (rc, rp)
    }
}

fn draw_terms(inputs: &RateInputs<'_>) -> Result<DrawTerms> {
    inputs.check()?;
    Ok(DrawTerms::new(
        &inputs.realization.g_hat,
        &inputs.realization.g_err,
        inputs.precoders,
        &inputs.partition.cluster_of(),
        inputs.effective_noise(),
    ))
}

/// SINR of user `k` decoding its cluster's common stream.
pub fn sinr_common_generic(k: usize, inputs: &RateInputs<'_>) -> Result<f64> {
    Ok(draw_terms(inputs)?.sinr_common(k, inputs.power))
}

/// SINR of user `k` decoding its private stream after removing the common one.
pub fn sinr_private_generic(k: usize, inputs: &RateInputs<'_>) -> Result<f64> {
    Ok(draw_terms(inputs)?.sinr_private(k, inputs.power))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stream {
    Common,
    Private,
}

fn kronecker(a: usize, b: usize) -> Complex64 {
    Complex64::new(if a == b { 1.0 } else { 0.0 }, 0.0)
}

/// `ĝ_kᵀ p_l` for every private column `l`, written through the structure of
/// each construction instead of a direct product.
fn structured_private_products(k: usize, inputs: &RateInputs<'_>) -> Result<CVec> {
    let p = inputs.precoders;
    let part = inputs.partition;
    let g_bar = &inputs.sparse.g_bar;
    let g_hat_k = inputs.realization.g_hat.column(k);
    let n_users = part.n_users;
    let scale = &p.column_scale;
    // part of ĝ_k on APs outside user k's cluster
    let outside: CVec = CVec::from_fn(g_hat_k.len(), |m, _| {
        if g_bar[(m, k)].norm_sqr() == 0.0 {
            g_hat_k[m]
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let mut out = CVec::zeros(n_users);
    match p.kind {
        PrecoderKind::MfSp => {
            for l in 0..n_users {
                let v = if l == k {
                    Complex64::new(g_bar.column(k).norm_squared(), 0.0)
                } else {
                    tdot(g_hat_k.iter(), g_bar.column(l).map(|z| z.conj()).iter())
                };
                out[l] = v * scale[l];
            }
        }
        PrecoderKind::ZfSp | PrecoderKind::MmseSp => {
            let lambda = if p.kind == PrecoderKind::ZfSp {
                zf_gram_inverse(g_bar)?
            } else {
                let c = mmse_sp_regularizer(inputs.power.pt, inputs.sigma_w2, n_users);
                mmse_gram_inverse(g_bar, c)?
            };
            let c = if p.kind == PrecoderKind::ZfSp {
                0.0
            } else {
                mmse_sp_regularizer(inputs.power.pt, inputs.sigma_w2, n_users)
            };
            let leak = (outside.transpose() * conj(g_bar)) * &lambda;
            for l in 0..n_users {
                out[l] = (kronecker(k, l) - lambda[(k, l)] * c + leak[l]) * scale[l];
            }
        }
        PrecoderKind::RuZfRd | PrecoderKind::RuMmseRd => {
            let own = part.cluster_of()[k];
            for (j, users) in part.user_sets.iter().enumerate() {
                let gj = &inputs.sparse.per_cluster[j];
                let c = if p.kind == PrecoderKind::RuZfRd {
                    0.0
                } else {
                    mmse_rd_regularizer(inputs.power.pt, inputs.sigma_w2, n_users, users.len())
                };
                let lambda = if p.kind == PrecoderKind::RuZfRd {
                    hermitian_inverse(&gram_transpose_conj(gj)).map_err(|condition| {
                        Error::ClusterRankDeficient {
                            cluster: j,
                            condition,
                        }
                    })?
                } else {
                    mmse_gram_inverse(gj, c)?
                };
                if j == own {
                    let qk = users
                        .iter()
                        .position(|&u| u == k)
                        .expect("user in own cluster");
                    for (ql, &l) in users.iter().enumerate() {
                        out[l] = (kronecker(qk, ql) - lambda[(qk, ql)] * c) * scale[l];
                    }
                } else {
                    let row = (g_hat_k.transpose() * conj(gj)) * &lambda;
                    for (ql, &l) in users.iter().enumerate() {
                        out[l] = row[ql] * scale[l];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `ĝ_kᵀ p_{c_j}` for every common column, using `ψ u` for the own cluster.
fn structured_common_products(k: usize, inputs: &RateInputs<'_>) -> CVec {
    let part = inputs.partition;
    let cache = inputs.svd_cache;
    let (own, q) = part.rank_in_cluster(k).expect("user belongs to a cluster");
    let g_hat_k = inputs.realization.g_hat.column(k);
    CVec::from_fn(inputs.precoders.common.ncols(), |j, _| {
        if j == own {
            cache.u[j][q] * cache.psi[j]
        } else {
            tdot(g_hat_k.iter(), cache.v[j].iter())
        }
    })
}

fn expanded_leak(h: Complex64, t: Complex64) -> f64 {
    h.norm_sqr() + t.norm_sqr() - 2.0 * (h.conj() * t).re
}

/// Closed-form SINR of user `k`, built from the leading singular data, the
/// (regularized) Gram inverses and the construction's column scales.
pub fn sinr_closed_form(
    k: usize,
    inputs: &RateInputs<'_>,
    kind: PrecoderKind,
    stream: Stream,
) -> Result<f64> {
    inputs.check()?;
    if inputs.precoders.kind != kind {
        return Err(Error::KindMismatch {
            built: inputs.precoders.label(),
            requested: kind.label().into(),
        });
    }
    let n_c = inputs.precoders.common.ncols();
    if stream == Stream::Common && n_c == 0 {
        return Ok(0.0);
    }
    if n_c > 0 && inputs.svd_cache.psi.len() != n_c {
        return Err(Error::Dimension(
            "singular-value cache does not match the common precoder".into(),
        ));
    }
    let err_k = inputs.realization.g_err.column(k);
    let a = inputs.power;
    let hp = structured_private_products(k, inputs)?;
    let tp: Vec<Complex64> = (0..hp.len())
        .map(|l| tdot(err_k.iter(), inputs.precoders.private.column(l).iter()))
        .collect();
    let (hc, tc, own) = if n_c > 0 {
        let hc = structured_common_products(k, inputs);
        let tc: Vec<Complex64> = (0..n_c)
            .map(|j| tdot(err_k.iter(), inputs.precoders.common.column(j).iter()))
            .collect();
        (hc, tc, inputs.partition.cluster_of()[k])
    } else {
        (CVec::zeros(0), Vec::new(), usize::MAX)
    };
    let common_other: f64 = (0..n_c)
        .filter(|&j| j != own)
        .map(|j| a.a_c[j].powi(2) * expanded_leak(hc[j], tc[j]))
        .sum();
    let noise = inputs.effective_noise();
    Ok(match stream {
        Stream::Common => {
            let a2 = a.a_c[own].powi(2);
            let private_all: f64 = (0..hp.len())
                .map(|r| a.a_p[r].powi(2) * expanded_leak(hp[r], tp[r]))
                .sum();
            let num = a2 * hc[own].norm_sqr();
            let d = a2 * (tc[own].norm_sqr() - 2.0 * (hc[own].conj() * tc[own]).re);
            clamp_sinr(num, d + common_other + private_all + noise)
        }
        Stream::Private => {
            let a2 = a.a_p[k].powi(2);
            let private_other: f64 = (0..hp.len())
                .filter(|&r| r != k)
                .map(|r| a.a_p[r].powi(2) * expanded_leak(hp[r], tp[r]))
                .sum();
            let num = a2 * hp[k].norm_sqr();
            let d = a2 * (tp[k].norm_sqr() - 2.0 * (hp[k].conj() * tp[k]).re);
            clamp_sinr(num, d + common_other + private_other + noise)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub common_rate_per_user: Vec<f64>,
    pub min_common_per_cluster: Vec<f64>,
    pub private_rate_per_user: Vec<f64>,
    pub sum_rate: f64,
}

fn cluster_minima(user_sets: &[Vec<usize>], common: &[f64]) -> Vec<f64> {
    user_sets
        .iter()
        .map(|u| u.iter().map(|&k| common[k]).fold(f64::INFINITY, f64::min))
        .collect()
}

fn sum_rate(min_common: &[f64], private: &[f64]) -> f64 {
    compensated_sum(min_common.iter().chain(private).copied())
}

fn common_sets(precoders: &PrecoderSet, partition: &ClusterPartition) -> Vec<Vec<usize>> {
    if precoders.common.ncols() == 0 {
        Vec::new()
    } else {
        partition.user_sets.clone()
    }
}

pub fn instantaneous_rates(inputs: &RateInputs<'_>) -> Result<RateReport> {
    let terms = draw_terms(inputs)?;
    let (rc, rp) = terms.rates(inputs.power);
    let min_common = cluster_minima(&common_sets(inputs.precoders, inputs.partition), &rc);
    Ok(RateReport {
        sum_rate: sum_rate(&min_common, &rp),
        common_rate_per_user: rc,
        min_common_per_cluster: min_common,
        private_rate_per_user: rp,
    })
}

/// Per-user rates averaged over error draws, with the per-cluster minimum
/// taken after averaging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsrOutcome {
    pub mean_common: Vec<f64>,
    pub mean_private: Vec<f64>,
    pub min_common: Vec<f64>,
    pub sum_rate: f64,
}

impl AsrOutcome {
    pub fn common_sum(&self) -> f64 {
        compensated_sum(self.min_common.iter().copied())
    }
}

/// Precomputed per-draw terms for one estimate, reusable across power
/// allocations.
#[derive(Debug, Clone)]
pub struct AsrEvaluator {
    draws: Vec<DrawTerms>,
    user_sets: Vec<Vec<usize>>,
    n_users: usize,
}

impl AsrEvaluator {
    pub fn new(
        g_hat: &CMat,
        errors: &[CMat],
        precoders: &PrecoderSet,
        partition: &ClusterPartition,
        sigma_e: f64,
        sigma_w2: f64,
    ) -> Result<Self> {
        if errors.is_empty() {
            return Err(Error::InvalidParameter(
                "need at least one error draw".into(),
            ));
        }
        let user_sets = common_sets(precoders, partition);
        if !user_sets.is_empty() && user_sets.len() != precoders.common.ncols() {
            return Err(Error::Dimension(
                "common columns do not match the partition".into(),
            ));
        }
        let cluster_of = partition.cluster_of();
        let eps = crate::channel::epsilon(sigma_e);
        let noise = sigma_w2 / (eps * eps);
        let draws = errors
            .iter()
            .map(|e| DrawTerms::new(g_hat, e, precoders, &cluster_of, noise))
            .collect();
        Ok(AsrEvaluator {
            draws,
            user_sets,
            n_users: g_hat.ncols(),
        })
    }

    pub fn n_common(&self) -> usize {
        self.user_sets.len()
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn evaluate(&self, power: &PowerAllocation) -> AsrOutcome {
        let k = self.n_users;
        let per_draw: Vec<(Vec<f64>, Vec<f64>)> =
            self.draws.iter().map(|d| d.rates(power)).collect();
        let n = per_draw.len() as f64;
        let mean = |common: bool, u: usize| {
            compensated_sum(
                per_draw
                    .iter()
                    .map(|(c, p)| if common { c[u] } else { p[u] }),
            ) / n
        };
        let mean_common: Vec<f64> = if self.user_sets.is_empty() {
            vec![0.0; k]
        } else {
            (0..k).map(|u| mean(true, u)).collect()
        };
        let mean_private: Vec<f64> = (0..k).map(|u| mean(false, u)).collect();
        let min_common = cluster_minima(&self.user_sets, &mean_common);
        AsrOutcome {
            sum_rate: sum_rate(&min_common, &mean_private),
            mean_common,
            mean_private,
            min_common,
        }
    }
}

/// Average sum rate of one estimate over `n_err` fresh error draws.
#[allow(clippy::too_many_arguments)]
pub fn average_sum_rate<R: Rng + ?Sized>(
    g_hat: &CMat,
    zeta: &LargeScaleCoefficients,
    sigma_e: f64,
    partition: &ClusterPartition,
    precoders: &PrecoderSet,
    power: &PowerAllocation,
    sigma_w2: f64,
    n_err: usize,
    rng: &mut R,
) -> Result<AsrOutcome> {
    if n_err == 0 {
        return Err(Error::InvalidParameter("n_err must be at least 1".into()));
    }
    let errors = draw_error_matrices(zeta, sigma_e, n_err, rng)?;
    Ok(AsrEvaluator::new(g_hat, &errors, precoders, partition, sigma_e, sigma_w2)?.evaluate(power))
}

/// Averaged rates of one realization, as consumed by [`ergodic_sum_rate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord {
    /// Clusters sharing a common stream; empty without common streams.
    pub user_sets: Vec<Vec<usize>>,
    pub mean_common: Vec<f64>,
    pub mean_private: Vec<f64>,
}

impl RealizationRecord {
    pub fn from_outcome(outcome: &AsrOutcome, user_sets: Vec<Vec<usize>>) -> Self {
        RealizationRecord {
            user_sets,
            mean_common: outcome.mean_common.clone(),
            mean_private: outcome.mean_private.clone(),
        }
    }

    pub fn sum_rate(&self) -> f64 {
        sum_rate(
            &cluster_minima(&self.user_sets, &self.mean_common),
            &self.mean_private,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErgodicSummary {
    pub esr: f64,
    /// Minimum over users of the expected common rate, summed over clusters.
    pub ecr: f64,
    pub epr: f64,
    /// Alternative ordering: expectation of the per-realization minima.
    pub ecr_mean_of_mins: f64,
    /// Standard error of the per-realization sum rates.
    pub stderr: f64,
    pub n: usize,
}

/// Ergodic rates over realizations. The common part takes per-user means
/// before the per-cluster minimum; realizations are grouped by their cluster
/// structure and the groups are weighted by frequency.
pub fn ergodic_sum_rate(records: &[RealizationRecord]) -> Result<ErgodicSummary> {
    if records.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one realization".into(),
        ));
    }
    let n = records.len();
    let nf = n as f64;
    let k = records[0].mean_private.len();
    if records
        .iter()
        .any(|r| r.mean_private.len() != k || r.mean_common.len() != k)
    {
        return Err(Error::Dimension(
            "records disagree on the number of users".into(),
        ));
    }
    let epr = compensated_sum(
        (0..k).map(|u| compensated_sum(records.iter().map(|r| r.mean_private[u])) / nf),
    );

    // groups in order of first appearance
    let mut groups: Vec<(&Vec<Vec<usize>>, Vec<usize>)> = Vec::new();
    for (idx, r) in records.iter().enumerate() {
        match groups.iter_mut().find(|(sets, _)| **sets == r.user_sets) {
            Some((_, members)) => members.push(idx),
            None => groups.push((&r.user_sets, vec![idx])),
        }
    }
    let ecr = compensated_sum(groups.iter().map(|(sets, members)| {
        let ng = members.len() as f64;
        let means: Vec<f64> = (0..k)
            .map(|u| compensated_sum(members.iter().map(|&i| records[i].mean_common[u])) / ng)
            .collect();
        compensated_sum(cluster_minima(sets, &means)) * ng / nf
    }));
    let ecr_mean_of_mins = compensated_sum(
        records
            .iter()
            .map(|r| compensated_sum(cluster_minima(&r.user_sets, &r.mean_common))),
    ) / nf;

    let totals: Vec<f64> = records.iter().map(RealizationRecord::sum_rate).collect();
    let mean_total = compensated_sum(totals.iter().copied()) / nf;
    let stderr = if n > 1 {
        let var = compensated_sum(totals.iter().map(|t| (t - mean_total).powi(2))) / (nf - 1.0);
        (var / nf).sqrt()
    } else {
        0.0
    };
    Ok(ErgodicSummary {
        esr: ecr + epr,
        ecr,
        epr,
        ecr_mean_of_mins,
        stderr,
        n,
    })
}
