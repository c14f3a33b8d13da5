//! Power allocation between the common and private streams.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_error_matrices, LargeScaleCoefficients};
use crate::clustering::ClusterPartition;
use crate::error::{Error, Result};
use crate::linalg::{compensated_sum, CMat};
use crate::precoding::PrecoderSet;
use crate::rates::{AsrEvaluator, AsrOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    /// Common-stream amplitudes, one per cluster.
    pub a_c: Vec<f64>,
    /// Private-stream amplitudes, one per user.
    pub a_p: Vec<f64>,
    /// Total fraction of `P_t` given to the common streams.
    pub delta: f64,
    pub pt: f64,
}

impl PowerAllocation {
    /// `a_c = √(δ P_t / N_c)` for every cluster and uniform private power.
    pub fn equal_split(pt: f64, delta: f64, n_c: usize, k: usize) -> Result<Self> {
        let a_p = uniform_private(pt, delta, k)?;
        if n_c == 0 && delta != 0.0 {
            return Err(Error::InvalidParameter(
                "common power without common streams".into(),
            ));
        }
        let a = if n_c == 0 {
            0.0
        } else {
            (delta * pt / n_c as f64).sqrt()
        };
        Ok(PowerAllocation {
            a_c: vec![a; n_c],
            a_p,
            delta,
            pt,
        })
    }

    /// Per-cluster fractions `δ_i`, `a_{c_i} = √(δ_i P_t)`.
    pub fn per_cluster(pt: f64, deltas: &[f64], k: usize) -> Result<Self> {
        let delta = compensated_sum(deltas.iter().copied());
        if deltas.iter().any(|&d| d < 0.0) {
            return Err(Error::InvalidParameter("negative common fraction".into()));
        }
        let a_p = uniform_private(pt, delta, k)?;
        Ok(PowerAllocation {
            a_c: deltas.iter().map(|&d| (d * pt).sqrt()).collect(),
            a_p,
            delta,
            pt,
        })
    }

    /// All power on the private streams, no common streams at all.
    pub fn private_only(pt: f64, k: usize) -> Result<Self> {
        PowerAllocation::equal_split(pt, 0.0, 0, k)
    }

    pub fn common_power(&self) -> f64 {
        compensated_sum(self.a_c.iter().map(|a| a * a))
    }

    pub fn private_power(&self) -> f64 {
        compensated_sum(self.a_p.iter().map(|a| a * a))
    }

    pub fn total_power(&self) -> f64 {
        self.common_power() + self.private_power()
    }
}

/// `a_k = √((1−δ) P_t / K)` for every user.
pub fn uniform_private(pt: f64, delta: f64, k: usize) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidParameter(format!(
            "delta must lie in [0, 1), got {delta}"
        )));
    }
    if !(pt > 0.0) || k == 0 {
        return Err(Error::InvalidParameter(format!(
            "need Pt > 0 and K ≥ 1, got {pt}, {k}"
        )));
    }
    Ok(vec![((1.0 - delta) * pt / k as f64).sqrt(); k])
}

/// `{0, μ, 2μ, …}` up to 1, with the endpoint 1 pulled back to `1 − μ`.
pub fn delta_grid(mu: f64) -> Result<Vec<f64>> {
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "grid step must lie in (0, 1], got {mu}"
        )));
    }
    let steps = (1.0 / mu + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        let mut d = i as f64 * mu;
        if d >= 1.0 - 1e-12 {
            d = (1.0 - mu).max(0.0);
        }
        if grid.iter().all(|&g| (g - d).abs() > 1e-9) {
            grid.push(d);
        }
    }
    Ok(grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PowerMode {
    #[default]
    EqualSplit,
    PerClusterExhaustive,
}

impl fmt::Display for PowerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PowerMode::EqualSplit => "equal_split",
            PowerMode::PerClusterExhaustive => "per_cluster_exhaustive",
        })
    }
}

impl FromStr for PowerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal_split" => Ok(PowerMode::EqualSplit),
            "per_cluster_exhaustive" => Ok(PowerMode::PerClusterExhaustive),
            other => Err(Error::Config(format!(
                "power_mode must be equal_split or per_cluster_exhaustive, got '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerChoice {
    pub allocation: PowerAllocation,
    pub outcome: AsrOutcome,
}

/// Grid search over the common-power fraction. Every candidate is scored on
/// the same error draws held by `eval`; ties keep the smallest fraction.
pub fn allocate_common(
    eval: &AsrEvaluator,
    pt: f64,
    mu: f64,
    mode: PowerMode,
) -> Result<PowerChoice> {
    let (n_c, k) = (eval.n_common(), eval.n_users());
    let grid = delta_grid(mu)?;
    let mut best: Option<PowerChoice> = None;
    let mut consider = |alloc: PowerAllocation| {
        let outcome = eval.evaluate(&alloc);
        if best
            .as_ref()
            .is_none_or(|b| outcome.sum_rate > b.outcome.sum_rate)
        {
            best = Some(PowerChoice {
                allocation: alloc,
                outcome,
            });
        }
    };
    if n_c == 0 {
        consider(PowerAllocation::private_only(pt, k)?);
    } else if mode == PowerMode::PerClusterExhaustive && n_c == 2 {
        let cap = (1.0 - mu).max(0.0) + 1e-9;
        for &d1 in &grid {
            for &d2 in &grid {
                if d1 + d2 <= cap {
                    consider(PowerAllocation::per_cluster(pt, &[d1, d2], k)?);
                }
            }
        }
    } else {
        for &d in &grid {
            consider(PowerAllocation::equal_split(pt, d, n_c, k)?);
        }
    }
    Ok(best.expect("grid always contains zero"))
}

/// Draws `n_err` error matrices from `rng` and runs [`allocate_common`].
#[allow(clippy::too_many_arguments)]
pub fn allocate_common_sampled<R: Rng + ?Sized>(
    g_hat: &CMat,
    zeta: &LargeScaleCoefficients,
    sigma_e: f64,
    partition: &ClusterPartition,
    precoders: &PrecoderSet,
    pt: f64,
    sigma_w2: f64,
    mu: f64,
    n_err: usize,
    rng: &mut R,
) -> Result<PowerChoice> {
    if n_err == 0 {
        return Err(Error::InvalidParameter("n_err must be at least 1".into()));
    }
    let errors = draw_error_matrices(zeta, sigma_e, n_err, rng)?;
    let eval = AsrEvaluator::new(g_hat, &errors, precoders, partition, sigma_e, sigma_w2)?;
    allocate_common(&eval, pt, mu, PowerMode::EqualSplit)
}
