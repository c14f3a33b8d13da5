//! Monte Carlo experiment driver: realization pipeline, scheme grid,
//! ergodic aggregation and result files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::channel::{
    draw_channel, large_scale, place_network, pt_for_snr, ChannelRealization,
    LargeScaleCoefficients, LargeScaleParams, NetworkGeometry,
};
use crate::clustering::{
    design_clusters, design_clusters_fixed, select_aps_threshold, select_aps_topn, sparse_channel,
    ClusterPartition,
};
use crate::config::{ExperimentConfig, SelectionMode};
use crate::error::{Error, Result};
use crate::linalg::{complex_normal_matrix, CMat};
use crate::power::{allocate_common, PowerAllocation, PowerChoice};
use crate::precoding::{build_private, common_precoder, network_wide_variant, PrecoderSet};
use crate::rates::{ergodic_sum_rate, AsrEvaluator, AsrOutcome, RealizationRecord};
use crate::scheme::{Architecture, Scheme, Structure};

/// Redraws allowed after a degenerate channel before a trial is dropped.
pub const MAX_REDRAWS: usize = 3;

const STREAM_GEOMETRY: u64 = 0x67656f;
const STREAM_FADING: u64 = 0x666164;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of an independent generator for `(stream, index, attempt)`.
pub fn derive_seed(master: u64, stream: u64, index: u64, attempt: u64) -> u64 {
    [stream, index, attempt]
        .into_iter()
        .fold(splitmix64(master), |acc, x| splitmix64(acc ^ splitmix64(x)))
}

/// Everything drawn for one channel realization, shared by all schemes.
#[derive(Debug, Clone)]
pub struct Realization {
    pub index: usize,
    pub attempt: usize,
    pub geometry: NetworkGeometry,
    pub zeta_cf: LargeScaleCoefficients,
    pub zeta_bs: LargeScaleCoefficients,
    pub cf: ChannelRealization,
    pub bs: ChannelRealization,
    /// Unit-variance error draws; each architecture scales them by its own
    /// `σ_e √ζ`.
    pub unit_errors: Vec<CMat>,
    pub partition: ClusterPartition,
}

impl Realization {
    pub fn channel(&self, arch: Architecture) -> (&ChannelRealization, &LargeScaleCoefficients) {
        match arch {
            Architecture::Bs => (&self.bs, &self.zeta_bs),
            Architecture::Cf => (&self.cf, &self.zeta_cf),
        }
    }

    pub fn errors(&self, arch: Architecture) -> Vec<CMat> {
        let (ch, zeta) = self.channel(arch);
        let scale = zeta
            .zeta
            .map(|z| Complex64::new(ch.sigma_e * z.sqrt(), 0.0));
        self.unit_errors
            .iter()
            .map(|e| e.component_mul(&scale))
            .collect()
    }
}

/// Clusters users and APs from the large-scale coefficients.
pub fn cluster(cfg: &ExperimentConfig, zeta: &LargeScaleCoefficients) -> Result<ClusterPartition> {
    let j = match cfg.selection_mode {
        SelectionMode::Threshold => select_aps_threshold(&zeta.zeta),
        SelectionMode::TopN => select_aps_topn(&zeta.zeta, cfg.n_s)?,
    };
    if cfg.n_clusters > 0 {
        design_clusters_fixed(&j, cfg.n_clusters, &zeta.zeta)
    } else {
        let n_a = if cfg.n_a == 0 {
            j.default_n_a()
        } else {
            cfg.n_a
        };
        design_clusters(&j, n_a, &zeta.zeta)
    }
}

/// Deterministic draw of realization `index`; `attempt > 0` gives the
/// replacement draws used after a degenerate channel.
pub fn draw_realization(
    cfg: &ExperimentConfig,
    index: usize,
    attempt: usize,
) -> Result<Realization> {
    let (geo_index, geo_attempt) = if cfg.freeze_geometry {
        (0, 0)
    } else {
        (index, attempt)
    };
    let mut geo_rng = ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.seed,
        STREAM_GEOMETRY,
        geo_index as u64,
        geo_attempt as u64,
    ));
    let geometry = place_network(cfg.m, cfg.k, cfg.area_side_m, &mut geo_rng)?.with_radio(
        cfg.h_ap_m,
        cfg.h_u_m,
        cfg.freq_mhz,
    );
    let params = cfg.large_scale_params();
    let zeta_cf = large_scale(&geometry, &params, &mut geo_rng)?;
    let bs_params = LargeScaleParams {
        shared_shadowing: true,
        ..params
    };
    let zeta_bs = large_scale(&geometry.colocated(), &bs_params, &mut geo_rng)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        cfg.seed,
        STREAM_FADING,
        index as u64,
        attempt as u64,
    ));
    let sigma_e = cfg.sigma_e();
    let cf = draw_channel(&zeta_cf, sigma_e, &mut rng)?;
    let bs = draw_channel(&zeta_bs, sigma_e, &mut rng)?;
    let unit_errors = (0..cfg.n_err)
        .map(|_| complex_normal_matrix(cfg.m, cfg.k, &mut rng))
        .collect();
    let partition = cluster(cfg, &zeta_cf)?;
    Ok(Realization {
        index,
        attempt,
        geometry,
        zeta_cf,
        zeta_bs,
        cf,
        bs,
        unit_errors,
        partition,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PowerPolicy {
    /// Grid search for rate-splitting schemes, private-only otherwise.
    Optimize,
    /// Fixed common fraction (rate-splitting schemes only).
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeOutcome {
    pub scheme: Scheme,
    pub snr_db: f64,
    pub pt: f64,
    pub delta: f64,
    /// Number of clusters the scheme's precoders are built on.
    pub n_clusters: usize,
    pub outcome: AsrOutcome,
    /// Clusters that share a common stream (empty without rate-splitting).
    pub user_sets: Vec<Vec<usize>>,
    pub allocation: PowerAllocation,
}

/// Builds the precoders of `scheme` for one realization and transmit power.
pub fn build_precoders(
    cfg: &ExperimentConfig,
    real: &Realization,
    scheme: Scheme,
    pt: f64,
) -> Result<(PrecoderSet, ClusterPartition)> {
    let sigma_w2 = cfg.noise_variance();
    let (ch, _) = real.channel(scheme.architecture);
    let partition = if scheme.is_clustered() {
        real.partition.clone()
    } else {
        ClusterPartition::single(cfg.m, cfg.k)
    };
    let sparse = sparse_channel(&ch.g_hat, &partition)?;
    let mut pre = match scheme.structure {
        Structure::NetworkWide => {
            network_wide_variant(&ch.g_hat, scheme.family, pt, sigma_w2, cfg.k)?
        }
        _ => build_private(scheme.private_kind(), &sparse, &partition, pt, sigma_w2)?,
    };
    pre.normalize_private(cfg.k as f64)?;
    if scheme.rate_splitting {
        let (common, _) = common_precoder(&sparse, &partition)?;
        pre = pre.with_common(common);
    }
    Ok((pre, partition))
}

/// Average sum rate of one scheme on one realization at one SNR.
pub fn evaluate_scheme(
    cfg: &ExperimentConfig,
    real: &Realization,
    scheme: Scheme,
    snr_db: f64,
    policy: PowerPolicy,
) -> Result<SchemeOutcome> {
    let sigma_w2 = cfg.noise_variance();
    let pt = pt_for_snr(&real.cf.g_true, snr_db, sigma_w2);
    let (pre, partition) = build_precoders(cfg, real, scheme, pt)?;
    let (ch, _) = real.channel(scheme.architecture);
    let errors = real.errors(scheme.architecture);
    let eval = AsrEvaluator::new(&ch.g_hat, &errors, &pre, &partition, ch.sigma_e, sigma_w2)?;
    let choice = match (scheme.rate_splitting, policy) {
        (true, PowerPolicy::Optimize) => {
            allocate_common(&eval, pt, cfg.power_grid_step, cfg.power_mode)?
        }
        (true, PowerPolicy::Fixed(delta)) => {
            let allocation =
                PowerAllocation::equal_split(pt, delta, partition.n_clusters(), cfg.k)?;
            PowerChoice {
                outcome: eval.evaluate(&allocation),
                allocation,
            }
        }
        (false, _) => {
            let allocation = PowerAllocation::private_only(pt, cfg.k)?;
            PowerChoice {
                outcome: eval.evaluate(&allocation),
                allocation,
            }
        }
    };
    let user_sets = if scheme.rate_splitting {
        partition.user_sets.clone()
    } else {
        Vec::new()
    };
    Ok(SchemeOutcome {
        scheme,
        snr_db,
        pt,
        delta: choice.allocation.delta,
        n_clusters: partition.n_clusters(),
        outcome: choice.outcome,
        user_sets,
        allocation: choice.allocation,
    })
}

fn with_index(realization: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Trial {
        realization,
        source: Box::new(e),
    }
}

/// Every configured scheme on realization `index` at one SNR, without
/// redraws.
pub fn run_trial(cfg: &ExperimentConfig, index: usize, snr_db: f64) -> Result<Vec<SchemeOutcome>> {
    let real = draw_realization(cfg, index, 0).map_err(with_index(index))?;
    cfg.schemes
        .iter()
        .map(|&s| {
            evaluate_scheme(cfg, &real, s, snr_db, PowerPolicy::Optimize).map_err(with_index(index))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub scheme: String,
    pub snr_db: f64,
    pub esr: f64,
    pub ecr: f64,
    pub epr: f64,
    pub stderr: f64,
    pub delta_mean: f64,
    pub n_clusters_mean: f64,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone)]
enum TrialStatus {
    Done {
        attempt: usize,
        per_snr: Vec<SchemeOutcome>,
        millis: Vec<f64>,
    },
    Dropped {
        reasons: Vec<String>,
    },
}

#[derive(Debug, Clone)]
struct TrialResult {
    realization: usize,
    scheme: Scheme,
    redraw_reasons: Vec<String>,
    status: TrialStatus,
    dump: Option<serde_json::Value>,
}

fn run_item(cfg: &ExperimentConfig, r: usize, scheme: Scheme) -> Result<TrialResult> {
    let mut reasons = Vec::new();
    for attempt in 0..=MAX_REDRAWS {
        let real = draw_realization(cfg, r, attempt).map_err(with_index(r))?;
        let mut per_snr = Vec::with_capacity(cfg.snr_grid_db.len());
        let mut millis = Vec::with_capacity(cfg.snr_grid_db.len());
        let mut failure = None;
        for &snr in &cfg.snr_grid_db {
            let start = cfg.record_timing.then(Instant::now);
            match evaluate_scheme(cfg, &real, scheme, snr, PowerPolicy::Optimize) {
                Ok(o) => {
                    millis.push(start.map_or(0.0, |s| s.elapsed().as_secs_f64() * 1e3));
                    per_snr.push(o);
                }
                Err(e) if e.is_degenerate_draw() => {
                    failure = Some(e.to_string());
                    break;
                }
                Err(e) => return Err(with_index(r)(e)),
            }
        }
        match failure {
            Some(reason) => reasons.push(format!("attempt {attempt}: {reason}")),
            None => {
                let dump = if cfg.dump_precoders && r == 0 {
                    let pt = per_snr[0].pt;
                    let (pre, _) = build_precoders(cfg, &real, scheme, pt)?;
                    Some(
                        json!({"scheme": scheme.label(), "snr_db": cfg.snr_grid_db[0], "precoders": pre.to_json()}),
                    )
                } else {
                    None
                };
                return Ok(TrialResult {
                    realization: r,
                    scheme,
                    redraw_reasons: reasons,
                    status: TrialStatus::Done {
                        attempt,
                        per_snr,
                        millis,
                    },
                    dump,
                });
            }
        }
    }
    Ok(TrialResult {
        realization: r,
        scheme,
        redraw_reasons: Vec::new(),
        status: TrialStatus::Dropped { reasons },
        dump: None,
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<ResultRecord>,
    /// One object per (realization, scheme, SNR), plus one per dropped trial.
    pub log: Vec<serde_json::Value>,
    pub redraws: usize,
    pub dropped: usize,
    pub precoder_dump: Vec<serde_json::Value>,
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len();
    if n == 0 {
        f64::NAN
    } else {
        crate::linalg::compensated_sum(xs) / n as f64
    }
}

/// Runs every realization and scheme, then aggregates per (scheme, SNR).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let items: Vec<(usize, Scheme)> = (0..cfg.n_realizations)
        .flat_map(|r| cfg.schemes.iter().map(move |&s| (r, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let results: Vec<Result<TrialResult>> = pool.install(|| {
        items
            .par_iter()
            .map(|&(r, s)| run_item(cfg, r, s))
            .collect()
    });
    let results: Vec<TrialResult> = results.into_iter().collect::<Result<_>>()?;

    let mut log = Vec::new();
    let mut redraws = 0;
    let mut dropped = 0;
    let mut precoder_dump = Vec::new();
    for t in &results {
        redraws += t.redraw_reasons.len();
        if let Some(d) = &t.dump {
            precoder_dump.push(d.clone());
        }
        match &t.status {
            TrialStatus::Done {
                attempt, per_snr, ..
            } => {
                for o in per_snr {
                    log.push(json!({
                        "realization": t.realization,
                        "attempt": attempt,
                        "scheme": t.scheme.label(),
                        "snr_db": o.snr_db,
                        "pt": o.pt,
                        "delta": o.delta,
                        "n_clusters": o.n_clusters,
                        "user_sets": o.user_sets,
                        "common_rates": o.outcome.mean_common,
                        "private_rates": o.outcome.mean_private,
                        "min_common": o.outcome.min_common,
                        "sum_rate": o.outcome.sum_rate,
                        "redraw_reasons": t.redraw_reasons,
                    }));
                }
            }
            TrialStatus::Dropped { reasons } => {
                dropped += 1;
                redraws += reasons.len().saturating_sub(1);
                log.push(json!({
                    "realization": t.realization,
                    "scheme": t.scheme.label(),
                    "dropped": true,
                    "redraw_reasons": reasons,
                }));
            }
        }
    }

    let mut records = Vec::new();
    for &scheme in &cfg.schemes {
        let done: Vec<(&Vec<SchemeOutcome>, &Vec<f64>)> = results
            .iter()
            .filter(|t| t.scheme == scheme)
            .filter_map(|t| match &t.status {
                TrialStatus::Done {
                    per_snr, millis, ..
                } => Some((per_snr, millis)),
                TrialStatus::Dropped { .. } => None,
            })
            .collect();
        for (i, &snr) in cfg.snr_grid_db.iter().enumerate() {
            let outcomes: Vec<&SchemeOutcome> = done.iter().map(|(p, _)| &p[i]).collect();
            let record = if outcomes.is_empty() {
                ResultRecord {
                    scheme: scheme.label(),
                    snr_db: snr,
                    esr: f64::NAN,
                    ecr: f64::NAN,
                    epr: f64::NAN,
                    stderr: f64::NAN,
                    delta_mean: f64::NAN,
                    n_clusters_mean: f64::NAN,
                    runtime_ms: 0.0,
                }
            } else {
                let recs: Vec<RealizationRecord> = outcomes
                    .iter()
                    .map(|o| RealizationRecord::from_outcome(&o.outcome, o.user_sets.clone()))
                    .collect();
                let summary = ergodic_sum_rate(&recs)?;
                ResultRecord {
                    scheme: scheme.label(),
                    snr_db: snr,
                    esr: summary.esr,
                    ecr: summary.ecr,
                    epr: summary.epr,
                    stderr: summary.stderr,
                    delta_mean: mean(outcomes.iter().map(|o| o.delta)),
                    n_clusters_mean: mean(outcomes.iter().map(|o| o.n_clusters as f64)),
                    runtime_ms: crate::linalg::compensated_sum(done.iter().map(|(_, ms)| ms[i])),
                }
            };
            records.push(record);
        }
    }
    Ok(ExperimentOutput {
        records,
        log,
        redraws,
        dropped,
        precoder_dump,
    })
}

pub fn write_csv<W: Write>(records: &[ResultRecord], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in records {
        wtr.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn csv_string(records: &[ResultRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(records, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}

/// Writes `results.csv`, `trials.jsonl` and, when requested,
/// `precoders.json` into `dir`.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(
        &out.records,
        BufWriter::new(File::create(dir.join("results.csv"))?),
    )?;
    let mut log = BufWriter::new(File::create(dir.join("trials.jsonl"))?);
    for entry in &out.log {
        serde_json::to_writer(&mut log, entry).map_err(|e| Error::Io(e.to_string()))?;
        log.write_all(b"\n")?;
    }
    log.flush()?;
    if !out.precoder_dump.is_empty() {
        let f = BufWriter::new(File::create(dir.join("precoders.json"))?);
        serde_json::to_writer_pretty(f, &out.precoder_dump)
            .map_err(|e| Error::Io(e.to_string()))?;
    }
    Ok(())
}

/// One experiment per value of `key`, in the given order.
pub fn sweep(
    cfg: &ExperimentConfig,
    key: &str,
    values: &[String],
) -> Result<Vec<(String, ExperimentOutput)>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    values
        .iter()
        .map(|v| {
            let mut c = cfg.clone();
            c.set(key, v)?;
            c.validate()?;
            Ok((v.clone(), run_experiment(&c)?))
        })
        .collect()
}

/// Results of all sweep points with two leading columns naming the point.
pub fn write_sweep_csv<W: Write>(
    key: &str,
    runs: &[(String, ExperimentOutput)],
    w: W,
) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record([
        "sweep_key",
        "sweep_value",
        "scheme",
        "snr_db",
        "esr",
        "ecr",
        "epr",
        "stderr",
        "delta_mean",
        "n_clusters_mean",
        "runtime_ms",
    ])
    .map_err(|e| Error::Io(e.to_string()))?;
    for (value, out) in runs {
        for record in &out.records {
            wtr.serialize((key, value, record))
                .map_err(|e| Error::Io(e.to_string()))?;
        }
    }
    wtr.flush()?;
    Ok(())
}
