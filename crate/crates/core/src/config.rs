//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel::LargeScaleParams;
use crate::error::{Error, Result};
use crate::power::PowerMode;
use crate::scheme::Scheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionMode {
    Threshold,
    TopN,
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threshold" => Ok(SelectionMode::Threshold),
            "topn" => Ok(SelectionMode::TopN),
            other => Err(Error::Config(format!(
                "selection_mode must be threshold or topn, got '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SelectionMode::Threshold => "threshold",
            SelectionMode::TopN => "topn",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub m: usize,
    pub k: usize,
    pub area_side_m: f64,
    pub h_ap_m: f64,
    pub h_u_m: f64,
    pub freq_mhz: f64,
    pub d0_m: f64,
    pub d1_m: f64,
    pub shadow_sigma_db: f64,
    pub sigma_e2: f64,
    pub t0_k: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub seed: u64,

    pub selection_mode: SelectionMode,
    pub n_s: usize,
    /// Minimum shared-AP count for joining a cluster; 0 picks it from the
    /// selection density.
    pub n_a: usize,
    /// Fixed number of clusters; 0 lets the greedy design decide.
    pub n_clusters: usize,

    pub power_grid_step: f64,
    pub power_mode: PowerMode,

    pub schemes: Vec<Scheme>,
    pub snr_grid_db: Vec<f64>,
    pub n_realizations: usize,
    pub n_err: usize,
    pub freeze_geometry: bool,

    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub record_timing: bool,
    pub dump_precoders: bool,
}

pub const DEFAULT_SCHEMES: &[&str] = &[
    "BS-MF",
    "BS-ZF",
    "BS-MMSE",
    "RS-BS-MF",
    "RS-BS-ZF",
    "RS-BS-MMSE",
    "CF-MF",
    "CF-ZF",
    "CF-MMSE",
    "CF-MF-SP",
    "CF-ZF-SP",
    "CF-MMSE-SP",
    "CF-ZF-RD",
    "CF-MMSE-RD",
    "RS-CF-MF",
    "RS-CF-ZF",
    "RS-CF-MMSE",
    "RS-CF-MF-SP",
    "RS-CF-ZF-SP",
    "RS-CF-MMSE-SP",
    "RS-CF-ZF-RD",
    "RS-CF-MMSE-RD",
];

pub const KEYS: &[&str] = &[
    "M",
    "K",
    "area_side_m",
    "h_ap_m",
    "h_u_m",
    "freq_mhz",
    "d0_m",
    "d1_m",
    "shadow_sigma_db",
    "sigma_e2",
    "T0_K",
    "bandwidth_hz",
    "noise_figure_db",
    "seed",
    "selection_mode",
    "n_s",
    "n_a",
    "n_clusters",
    "power_grid_step",
    "power_mode",
    "schemes",
    "snr_grid_db",
    "n_realizations",
    "n_err",
    "freeze_geometry",
    "workers",
    "record_timing",
    "dump_precoders",
];

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            m: 8,
            k: 4,
            area_side_m: 1000.0,
            h_ap_m: 15.0,
            h_u_m: 1.65,
            freq_mhz: 1900.0,
            d0_m: 10.0,
            d1_m: 50.0,
            shadow_sigma_db: 8.0,
            sigma_e2: 0.025,
            t0_k: 290.0,
            bandwidth_hz: 20e6,
            noise_figure_db: 9.0,
            seed: 1,
            selection_mode: SelectionMode::Threshold,
            n_s: 2,
            n_a: 0,
            n_clusters: 0,
            power_grid_step: 0.05,
            power_mode: PowerMode::EqualSplit,
            schemes: DEFAULT_SCHEMES
                .iter()
                .map(|s| s.parse().expect("valid default"))
                .collect(),
            snr_grid_db: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            n_realizations: 100,
            n_err: 100,
            freeze_geometry: false,
            workers: 0,
            record_timing: false,
            dump_precoders: false,
        }
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got '{value}'"
        ))),
    }
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "M" => self.m = num(key, v)?,
            "K" => self.k = num(key, v)?,
            "area_side_m" => self.area_side_m = num(key, v)?,
            "h_ap_m" => self.h_ap_m = num(key, v)?,
            "h_u_m" => self.h_u_m = num(key, v)?,
            "freq_mhz" => self.freq_mhz = num(key, v)?,
            "d0_m" => self.d0_m = num(key, v)?,
            "d1_m" => self.d1_m = num(key, v)?,
            "shadow_sigma_db" => self.shadow_sigma_db = num(key, v)?,
            "sigma_e2" => self.sigma_e2 = num(key, v)?,
            "T0_K" => self.t0_k = num(key, v)?,
            "bandwidth_hz" => self.bandwidth_hz = num(key, v)?,
            "noise_figure_db" => self.noise_figure_db = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "selection_mode" => self.selection_mode = v.parse()?,
            "n_s" => self.n_s = num(key, v)?,
            "n_a" => self.n_a = num(key, v)?,
            "n_clusters" => self.n_clusters = num(key, v)?,
            "power_grid_step" => self.power_grid_step = num(key, v)?,
            "power_mode" => self.power_mode = v.parse()?,
            "schemes" => {
                self.schemes = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse()
                            .map_err(|_| Error::Config(format!("schemes: unknown scheme '{s}'")))
                    })
                    .collect::<Result<_>>()?
            }
            "snr_grid_db" => self.snr_grid_db = list(key, v)?,
            "n_realizations" => self.n_realizations = num(key, v)?,
            "n_err" => self.n_err = num(key, v)?,
            "freeze_geometry" => self.freeze_geometry = flag(key, v)?,
            "workers" => self.workers = num(key, v)?,
            "record_timing" => self.record_timing = flag(key, v)?,
            "dump_precoders" => self.dump_precoders = flag(key, v)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown key '{other}'; valid keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Applies `key=value` assignments in order. Every malformed line yields
    /// its own diagnostic; they are joined with newlines.
    pub fn apply_pairs<'a>(&mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let mut problems = Vec::new();
        for (n, raw) in pairs.into_iter().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = self.set(k.trim(), v) {
                        problems.push(e.to_string());
                    }
                }
                None => problems.push(format!("line {}: expected key=value, got '{line}'", n + 1)),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("\n")))
        }
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_pairs(text.lines())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        ExperimentConfig::from_kv_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                problems.push(msg);
            }
        };
        need(
            self.k >= 1 && self.m > self.k,
            format!("need M > K ≥ 1, got M={}, K={}", self.m, self.k),
        );
        need(
            self.area_side_m > 0.0,
            "area_side_m must be positive".into(),
        );
        need(
            self.h_ap_m > 0.0 && self.h_u_m >= 0.0,
            "heights must be positive".into(),
        );
        need(self.freq_mhz > 0.0, "freq_mhz must be positive".into());
        need(
            self.d0_m > 0.0 && self.d1_m > self.d0_m,
            "need 0 < d0_m < d1_m".into(),
        );
        need(
            self.shadow_sigma_db >= 0.0,
            "shadow_sigma_db must be non-negative".into(),
        );
        need(
            (0.0..1.0).contains(&self.sigma_e2),
            "sigma_e2 must lie in [0, 1)".into(),
        );
        need(
            self.t0_k > 0.0 && self.bandwidth_hz > 0.0,
            "T0_K and bandwidth_hz must be positive".into(),
        );
        need(
            self.selection_mode != SelectionMode::TopN || (1..=self.m).contains(&self.n_s),
            format!("n_s must lie in [1, M], got {}", self.n_s),
        );
        need(
            self.n_clusters <= self.k,
            format!("n_clusters must not exceed K, got {}", self.n_clusters),
        );
        need(
            self.power_grid_step > 0.0 && self.power_grid_step <= 1.0,
            "power_grid_step must lie in (0, 1]".into(),
        );
        need(!self.schemes.is_empty(), "schemes must not be empty".into());
        need(
            !self.snr_grid_db.is_empty(),
            "snr_grid_db must not be empty".into(),
        );
        need(
            self.n_realizations >= 1,
            "n_realizations must be at least 1".into(),
        );
        need(self.n_err >= 1, "n_err must be at least 1".into());
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("\n")))
        }
    }

    pub fn sigma_e(&self) -> f64 {
        self.sigma_e2.sqrt()
    }

    pub fn large_scale_params(&self) -> LargeScaleParams {
        LargeScaleParams {
            d0: self.d0_m,
            d1: self.d1_m,
            shadow_sigma_db: self.shadow_sigma_db,
            shared_shadowing: false,
        }
    }

    pub fn noise_variance(&self) -> f64 {
        crate::channel::noise_variance(self.t0_k, self.bandwidth_hz, self.noise_figure_db)
    }

    /// Value of `key` as it would appear in a config file.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "M" => self.m.to_string(),
            "K" => self.k.to_string(),
            "area_side_m" => self.area_side_m.to_string(),
            "h_ap_m" => self.h_ap_m.to_string(),
            "h_u_m" => self.h_u_m.to_string(),
            "freq_mhz" => self.freq_mhz.to_string(),
            "d0_m" => self.d0_m.to_string(),
            "d1_m" => self.d1_m.to_string(),
            "shadow_sigma_db" => self.shadow_sigma_db.to_string(),
            "sigma_e2" => self.sigma_e2.to_string(),
            "T0_K" => self.t0_k.to_string(),
            "bandwidth_hz" => self.bandwidth_hz.to_string(),
            "noise_figure_db" => self.noise_figure_db.to_string(),
            "seed" => self.seed.to_string(),
            "selection_mode" => self.selection_mode.to_string(),
            "n_s" => self.n_s.to_string(),
            "n_a" => self.n_a.to_string(),
            "n_clusters" => self.n_clusters.to_string(),
            "power_grid_step" => self.power_grid_step.to_string(),
            "power_mode" => self.power_mode.to_string(),
            "schemes" => join(&self.schemes),
            "snr_grid_db" => join(&self.snr_grid_db),
            "n_realizations" => self.n_realizations.to_string(),
            "n_err" => self.n_err.to_string(),
            "freeze_geometry" => self.freeze_geometry.to_string(),
            "workers" => self.workers.to_string(),
            "record_timing" => self.record_timing.to_string(),
            "dump_precoders" => self.dump_precoders.to_string(),
            _ => return None,
        })
    }

    /// The fully resolved configuration in file syntax.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }
}
