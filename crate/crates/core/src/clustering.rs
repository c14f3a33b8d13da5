//! AP selection and user/AP cluster design.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMat;

/// Binary `M × K` matrix; `j[(m, k)] == 1` when AP `m` serves user `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMatrix {
    pub j: DMatrix<u8>,
}

impl SelectionMatrix {
    pub fn new(j: DMatrix<u8>) -> Result<Self> {
        if j.iter().any(|&x| x > 1) {
            return Err(Error::InvalidParameter(
                "selection entries must be 0 or 1".into(),
            ));
        }
        Ok(SelectionMatrix { j })
    }

    pub fn n_aps(&self) -> usize {
        self.j.nrows()
    }

    pub fn n_users(&self) -> usize {
        self.j.ncols()
    }

    pub fn column(&self, k: usize) -> Vec<u8> {
        self.j.column(k).iter().copied().collect()
    }

    pub fn ones_in_column(&self, k: usize) -> usize {
        self.j.column(k).iter().filter(|&&x| x == 1).count()
    }

    /// `ceil(mean ones-per-column / 2)`, at least 1.
    pub fn default_n_a(&self) -> usize {
        let k = self.n_users().max(1);
        let total: usize = (0..self.n_users()).map(|c| self.ones_in_column(c)).sum();
        // ceil(total / (2k)) in integers
        total.div_ceil(2 * k).max(1)
    }
}

fn argmax_lowest(col: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in col.enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Selects AP `m` for user `k` when `ζ_{m,k}` exceeds the mean of all
/// coefficients. A user left with no AP gets its strongest one.
pub fn select_aps_threshold(zeta: &DMatrix<f64>) -> SelectionMatrix {
    let mean = zeta.mean();
    let mut j = zeta.map(|z| u8::from(z - mean > 0.0));
    for k in 0..zeta.ncols() {
        if j.column(k).iter().all(|&x| x == 0) {
            let m = argmax_lowest(zeta.column(k).iter().copied());
            j[(m, k)] = 1;
        }
    }
    SelectionMatrix { j }
}

/// Each user is served by its `n_s` strongest APs.
pub fn select_aps_topn(zeta: &DMatrix<f64>, n_s: usize) -> Result<SelectionMatrix> {
    let m = zeta.nrows();
    if n_s < 1 || n_s > m {
        return Err(Error::InvalidParameter(format!(
            "n_s must lie in [1, {m}], got {n_s}"
        )));
    }
    let mut j = DMatrix::zeros(m, zeta.ncols());
    for k in 0..zeta.ncols() {
        let mut order: Vec<usize> = (0..m).collect();
        // stable sort keeps the lower index first on ties
        order.sort_by(|&a, &b| zeta[(b, k)].total_cmp(&zeta[(a, k)]));
        for &ap in &order[..n_s] {
            j[(ap, k)] = 1;
        }
    }
    Ok(SelectionMatrix { j })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterPartition {
    pub n_aps: usize,
    pub n_users: usize,
    /// Sorted user indices per cluster.
    pub user_sets: Vec<Vec<usize>>,
    /// Sorted AP indices per cluster, pairwise disjoint.
    pub ap_sets: Vec<Vec<usize>>,
    pub test_vectors: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub cluster_index: usize,
    pub users: Vec<usize>,
    pub aps: Vec<usize>,
    pub test_vector: Vec<u8>,
}

impl ClusterPartition {
    /// One cluster holding every user and every AP.
    pub fn single(n_aps: usize, n_users: usize) -> Self {
        ClusterPartition {
            n_aps,
            n_users,
            user_sets: vec![(0..n_users).collect()],
            ap_sets: vec![(0..n_aps).collect()],
            test_vectors: vec![vec![1; n_aps]],
        }
    }

    pub fn n_clusters(&self) -> usize {
        self.user_sets.len()
    }

    /// Cluster index of every user.
    pub fn cluster_of(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.n_users];
        for (i, users) in self.user_sets.iter().enumerate() {
            for &k in users {
                out[k] = i;
            }
        }
        out
    }

    /// Position of user `k` inside its (sorted) cluster.
    pub fn rank_in_cluster(&self, k: usize) -> Option<(usize, usize)> {
        self.user_sets
            .iter()
            .enumerate()
            .find_map(|(i, u)| u.iter().position(|&x| x == k).map(|q| (i, q)))
    }

    /// Checks the partition and disjointness invariants.
    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.n_users];
        for users in &self.user_sets {
            if users.is_empty() {
                return Err(Error::InvalidParameter("empty user set".into()));
            }
            for &k in users {
                if k >= self.n_users || seen[k] {
                    return Err(Error::InvalidParameter(format!(
                        "user {k} missing from range or in two clusters"
                    )));
                }
                seen[k] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidParameter(
                "user sets do not cover all users".into(),
            ));
        }
        let mut owner = vec![false; self.n_aps];
        for aps in &self.ap_sets {
            for &m in aps {
                if m >= self.n_aps || owner[m] {
                    return Err(Error::InvalidParameter(format!("AP {m} claimed twice")));
                }
                owner[m] = true;
            }
        }
        if self.ap_sets.len() != self.user_sets.len()
            || self.test_vectors.len() != self.user_sets.len()
        {
            return Err(Error::Dimension("cluster field lengths differ".into()));
        }
        Ok(())
    }

    pub fn report(&self) -> Vec<ClusterReport> {
        (0..self.n_clusters())
            .map(|i| ClusterReport {
                cluster_index: i,
                users: self.user_sets[i].clone(),
                aps: self.ap_sets[i].clone(),
                test_vector: self.test_vectors[i].clone(),
            })
            .collect()
    }

    /// `M × K` 0/1 mask of the block support `A_i × K_i`.
    pub fn support_mask(&self) -> DMatrix<u8> {
        let mut mask = DMatrix::zeros(self.n_aps, self.n_users);
        for (aps, users) in self.ap_sets.iter().zip(&self.user_sets) {
            for &m in aps {
                for &k in users {
                    mask[(m, k)] = 1;
                }
            }
        }
        mask
    }
}

fn overlap(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(&x, &y)| x == 1 && y == 1).count()
}

fn and_into(target: &mut [u8], other: &[u8]) {
    for (t, o) in target.iter_mut().zip(other) {
        *t &= *o;
    }
}

/// Gives each AP to the claiming cluster with the largest summed `ζ` over
/// its users; unclaimed APs stay idle.
fn resolve_aps(
    test_vectors: &[Vec<u8>],
    user_sets: &[Vec<usize>],
    weights: &DMatrix<f64>,
) -> Vec<Vec<usize>> {
    let m = weights.nrows();
    let mut ap_sets = vec![Vec::new(); test_vectors.len()];
    for ap in 0..m {
        let mut best: Option<(usize, f64)> = None;
        for (i, tv) in test_vectors.iter().enumerate() {
            if tv[ap] != 1 {
                continue;
            }
            let w: f64 = user_sets[i].iter().map(|&k| weights[(ap, k)]).sum();
            if best.is_none_or(|(_, bw)| w > bw) {
                best = Some((i, w));
            }
        }
        if let Some((i, _)) = best {
            ap_sets[i].push(ap);
        }
    }
    ap_sets
}

fn check_weights(j: &SelectionMatrix, weights: &DMatrix<f64>) -> Result<()> {
    if weights.shape() != j.j.shape() {
        return Err(Error::Dimension(format!(
            "selection is {:?}, weights are {:?}",
            j.j.shape(),
            weights.shape()
        )));
    }
    Ok(())
}

fn finish(
    j: &SelectionMatrix,
    user_sets: Vec<Vec<usize>>,
    test_vectors: Vec<Vec<u8>>,
    weights: &DMatrix<f64>,
) -> ClusterPartition {
    let mut user_sets = user_sets;
    for u in &mut user_sets {
        u.sort_unstable();
    }
    let ap_sets = resolve_aps(&test_vectors, &user_sets, weights);
    ClusterPartition {
        n_aps: j.n_aps(),
        n_users: j.n_users(),
        user_sets,
        ap_sets,
        test_vectors,
    }
}

/// Greedy cluster formation: user `k` joins the first cluster whose test
/// vector shares at least `n_a` APs with `j_k`, and the test vector is
/// narrowed to the common APs; otherwise `k` opens a new cluster.
///
/// `weights` (normally `ζ`) settle APs claimed by more than one cluster.
pub fn design_clusters(
    j: &SelectionMatrix,
    n_a: usize,
    weights: &DMatrix<f64>,
) -> Result<ClusterPartition> {
    if n_a < 1 {
        return Err(Error::InvalidParameter("N_a must be at least 1".into()));
    }
    check_weights(j, weights)?;
    let k_total = j.n_users();
    let mut user_sets: Vec<Vec<usize>> = Vec::new();
    let mut tvs: Vec<Vec<u8>> = Vec::new();
    for k in 0..k_total {
        let jk = j.column(k);
        match tvs.iter().position(|tv| overlap(&jk, tv) >= n_a) {
            Some(i) => {
                and_into(&mut tvs[i], &jk);
                user_sets[i].push(k);
            }
            None => {
                tvs.push(jk);
                user_sets.push(vec![k]);
            }
        }
    }
    Ok(finish(j, user_sets, tvs, weights))
}

/// Seed users for the fixed-count mode: the least-overlapping pair, then
/// repeatedly the user whose worst overlap with the chosen seeds is smallest.
pub fn select_seeds(j: &SelectionMatrix, n_c: usize) -> Vec<usize> {
    let k = j.n_users();
    if n_c == 0 || k == 0 {
        return Vec::new();
    }
    if n_c == 1 {
        return vec![0];
    }
    let cols: Vec<Vec<u8>> = (0..k).map(|c| j.column(c)).collect();
    let mut best = (0, 1, usize::MAX);
    for a in 0..k {
        for b in a + 1..k {
            let o = overlap(&cols[a], &cols[b]);
            if o < best.2 {
                best = (a, b, o);
            }
        }
    }
    let mut seeds = vec![best.0, best.1];
    while seeds.len() < n_c {
        let next = (0..k)
            .filter(|c| !seeds.contains(c))
            .min_by_key(|&c| {
                let worst = seeds.iter().map(|&s| overlap(&cols[c], &cols[s])).max();
                (worst.unwrap_or(0), c)
            })
            .expect("fewer users than requested clusters");
        seeds.push(next);
    }
    seeds
}

/// Exactly `n_c` clusters. Seeds open the clusters in index order; every
/// other user joins the cluster with the largest test-vector overlap (lowest
/// index on ties). A join with zero overlap widens the test vector to the
/// union instead of emptying it.
pub fn design_clusters_fixed(
    j: &SelectionMatrix,
    n_c: usize,
    weights: &DMatrix<f64>,
) -> Result<ClusterPartition> {
    let k_total = j.n_users();
    if n_c < 1 || n_c > k_total {
        return Err(Error::InvalidParameter(format!(
            "N_c must lie in [1, {k_total}], got {n_c}"
        )));
    }
    check_weights(j, weights)?;
    let mut seeds = select_seeds(j, n_c);
    seeds.sort_unstable();
    let mut user_sets: Vec<Vec<usize>> = seeds.iter().map(|&s| vec![s]).collect();
    let mut tvs: Vec<Vec<u8>> = seeds.iter().map(|&s| j.column(s)).collect();
    for k in (0..k_total).filter(|k| !seeds.contains(k)) {
        let jk = j.column(k);
        let (i, o) = tvs
            .iter()
            .enumerate()
            .map(|(i, tv)| (i, overlap(&jk, tv)))
            .fold((0, 0), |acc, (i, o)| if o > acc.1 { (i, o) } else { acc });
        if o == 0 {
            for (t, x) in tvs[i].iter_mut().zip(&jk) {
                *t |= *x;
            }
        } else {
            and_into(&mut tvs[i], &jk);
        }
        user_sets[i].push(k);
    }
    Ok(finish(j, user_sets, tvs, weights))
}

/// Masked channel estimate and its per-cluster column blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseChannel {
    /// `Ḡ`: `ĝ_{m,k}` where AP `m` serves user `k`'s cluster, zero elsewhere.
    pub g_bar: CMat,
    /// `M × |K_i|` blocks of `Ḡ` with users in ascending order.
    pub per_cluster: Vec<CMat>,
}

pub fn sparse_channel(g_hat: &CMat, partition: &ClusterPartition) -> Result<SparseChannel> {
    if g_hat.shape() != (partition.n_aps, partition.n_users) {
        return Err(Error::Dimension(format!(
            "channel is {:?}, partition expects ({}, {})",
            g_hat.shape(),
            partition.n_aps,
            partition.n_users
        )));
    }
    let mask = partition.support_mask();
    let g_bar = g_hat.zip_map(
        &mask,
        |g, b| if b == 1 { g } else { Complex64::new(0.0, 0.0) },
    );
    let per_cluster = partition
        .user_sets
        .iter()
        .map(|users| g_bar.select_columns(users.iter()))
        .collect();
    Ok(SparseChannel { g_bar, per_cluster })
}
